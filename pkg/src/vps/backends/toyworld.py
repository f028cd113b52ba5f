"""An exact-Bayes toy video world: a desk-scale stand-in for a VideoLLM.

A hidden label emits every frame symbol independently from its emission row,
so the posterior over answer tokens given any observed frame subset is
computable in closed form. That makes the benefit of showing more distinct
frames to more streams measurable and checkable without a real model.
"""

from __future__ import annotations

import string
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..aggregation import Distribution
from ..views import parse_view
from . import ScoreRequest

__all__ = ["ToyWorld", "ToyEpisode", "ToyBackend", "toy_posterior", "toy_episode"]

ROW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ToyWorld:
    """Hidden labels, a row-stochastic frame emission matrix, and a prior.

    ``emission[z, s]`` is the probability that label ``z`` emits frame symbol
    ``s``. ``answer_tokens[z]`` is the vocabulary token that answers an
    episode whose hidden label is ``z``; ``vocab`` maps every token id to its
    surface text.
    """

    emission: np.ndarray
    prior: np.ndarray
    answer_tokens: tuple[int, ...]
    vocab: tuple[str, ...]

    def __post_init__(self) -> None:
        em = np.asarray(self.emission, dtype=np.float64)
        pr = np.asarray(self.prior, dtype=np.float64)
        object.__setattr__(self, "emission", em)
        object.__setattr__(self, "prior", pr)
        if em.ndim != 2:
            raise ValueError("emission must be a (labels, symbols) matrix")
        if (em < 0).any() or np.abs(em.sum(axis=1) - 1.0).max() > ROW_TOL:
            raise ValueError(f"emission rows must sum to 1 within {ROW_TOL}")
        if pr.shape != (em.shape[0],) or (pr < 0).any() or abs(pr.sum() - 1.0) > ROW_TOL:
            raise ValueError("prior must be a distribution over the labels")
        if len(self.answer_tokens) != em.shape[0]:
            raise ValueError("need one answer token per label")
        if any(not 0 <= t < len(self.vocab) for t in self.answer_tokens):
            raise ValueError("answer token outside the vocabulary")

    @property
    def n_labels(self) -> int:
        return self.emission.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.emission.shape[1]

    @property
    def stop_token(self) -> int:
        return len(self.vocab) - 1

    @classmethod
    def symmetric(cls, n_labels: int, match_prob: float) -> "ToyWorld":
        """Square world: each label emits its own symbol with ``match_prob``,
        the rest uniformly. Uniform prior; options lettered A, B, C, ...
        plus a trailing end-of-answer token."""
        if n_labels < 2:
            raise ValueError("need at least two labels")
        if not 0.0 < match_prob <= 1.0:
            raise ValueError("match_prob must lie in (0, 1]")
        off = (1.0 - match_prob) / (n_labels - 1)
        emission = np.full((n_labels, n_labels), off)
        np.fill_diagonal(emission, match_prob)
        prior = np.full(n_labels, 1.0 / n_labels)
        letters = tuple(string.ascii_uppercase[:n_labels])
        return cls(emission, prior, tuple(range(n_labels)), letters + ("</s>",))


def toy_posterior(world: ToyWorld, observed: Sequence[tuple[int, int]]) -> Distribution:
    """Exact Bayes posterior over answer tokens given (slot, symbol) pairs.

    Frames are conditionally independent given the label, so slots only
    matter for bookkeeping. Raises if the observations have zero likelihood
    under every label.
    """
    with np.errstate(divide="ignore"):
        log_post = np.log(world.prior)
        log_em = np.log(world.emission)
    for _slot, symbol in observed:
        if not 0 <= symbol < world.n_symbols:
            raise ValueError(f"symbol {symbol} outside emission support")
        log_post = log_post + log_em[:, symbol]
    if not np.isfinite(log_post).any():
        raise ValueError("observations have zero likelihood under every label (inconsistent world)")
    post = np.exp(log_post - log_post[np.isfinite(log_post)].max())
    post[~np.isfinite(log_post)] = 0.0
    post /= post.sum()
    probs = np.zeros(len(world.vocab))
    for z, token in enumerate(world.answer_tokens):
        probs[token] += post[z]
    return Distribution(probs).with_log_scores()


@dataclass(frozen=True)
class ToyEpisode:
    """One generated episode: hidden label, frames, and its question record."""

    label: int
    frames: tuple[int, ...]
    video_ref: str
    question: str
    options: tuple[str, ...]
    answer_letter: str


def toy_episode(world: ToyWorld, total_frames: int, seed: int) -> ToyEpisode:
    """Sample a label from the prior, then ``total_frames`` iid frame symbols."""
    if total_frames < 1:
        raise ValueError("total_frames must be positive")
    rng = np.random.default_rng(seed)
    label = int(np.searchsorted(np.cumsum(world.prior), rng.random(), side="right"))
    label = min(label, world.n_labels - 1)
    cdf = np.cumsum(world.emission[label])
    frames = np.searchsorted(cdf, rng.random(total_frames), side="right")
    frames = np.minimum(frames, world.n_symbols - 1)
    letters = string.ascii_uppercase
    options = tuple(f"label {letters[z]}" for z in range(world.n_labels))
    return ToyEpisode(
        label=label,
        frames=tuple(int(f) for f in frames),
        video_ref=f"toy:{seed}",
        question="Which hidden label generated the video?",
        options=options,
        answer_letter=letters[label],
    )


class ToyBackend:
    """Scores requests against registered episodes with the exact posterior.

    View handling: ``zero:...`` drops the masked frames from the observation
    (the negative stream sees strictly less evidence); ``aug:<tag>`` applies
    a label-preserving symbol permutation to the stored frames and scores
    them under the correspondingly permuted emission, which leaves the
    posterior unchanged, mirroring augmentations that preserve content. Once
    an answer token has been generated the backend emits the stop token.
    """

    def __init__(self, world: ToyWorld) -> None:
        self.world = world
        self._episodes: dict[str, ToyEpisode] = {}

    def add_episode(self, episode: ToyEpisode) -> str:
        self._episodes[episode.video_ref] = episode
        return episode.video_ref

    def episode(self, video_ref: str) -> ToyEpisode:
        return self._episodes[video_ref]

    def _augment(self, frames: dict[int, int], tag: str) -> tuple[ToyWorld, dict[int, int]]:
        # permutation derived from the tag; the model "knows" the augmentation,
        # so the same permutation reindexes the emission columns
        perm = np.random.default_rng(zlib.crc32(tag.encode())).permutation(self.world.n_symbols)
        permuted = {slot: int(perm[s]) for slot, s in frames.items()}
        emission = self.world.emission[:, np.argsort(perm)]
        world = ToyWorld(emission, self.world.prior, self.world.answer_tokens, self.world.vocab)
        return world, permuted

    def score(self, req: ScoreRequest) -> Distribution:
        if req.generated:
            probs = np.zeros(len(self.world.vocab))
            probs[self.world.stop_token] = 1.0
            return Distribution(probs).with_log_scores()
        episode = self._episodes[req.video_ref]
        observed = {t: episode.frames[t] for t in req.frame_set}
        kind, payload = parse_view(req.view)
        world = self.world
        if kind == "zero":
            observed = {t: s for t, s in observed.items() if t not in payload}
        elif kind == "aug":
            world, observed = self._augment(observed, payload)
        return toy_posterior(world, sorted(observed.items()))

    def token_text(self, token: int) -> str:
        return self.world.vocab[token]

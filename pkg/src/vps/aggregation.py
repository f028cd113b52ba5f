"""Fusing per-stream next-token distributions into one decoding distribution.

Streams are combined either as probabilities (convex mixture) or as raw
scores (weighted mean of pre-normalization scores, i.e. a normalized weighted
geometric mean of the probabilities). Contrastive adjustment against a
degraded negative stream and equal-weight original/augmented view fusion
operate on single streams before mixing.

All reductions over streams run in a fixed balanced tree over ascending
stream index, so results are bit-reproducible regardless of caller
concurrency, and mixing identical streams with uniform weights over a
power-of-two stream count is exact in IEEE754.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

__all__ = [
    "PROB_TOL",
    "WEIGHT_TOL",
    "Distribution",
    "Weights",
    "TcdConfig",
    "softmax",
    "mix_probs",
    "mix_logits",
    "tcd_adjust",
    "ritual_combine",
    "argmax_token",
    "sample_token",
]

PROB_TOL = 1e-9
WEIGHT_TOL = 1e-12

# log(_TINY) is a large negative but finite stand-in for log(0)
_TINY = 1e-300


def softmax(scores: np.ndarray) -> np.ndarray:
    """Exponential normalization, stable under large or -inf scores."""
    z = np.asarray(scores, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass(frozen=True, eq=False)
class Distribution:
    """A probability vector over the vocabulary, optionally with raw scores.

    ``raw_scores`` are pre-normalization scores: exponential-normalizing them
    must reproduce ``probs`` (checked on construction within ``PROB_TOL``).
    """

    probs: np.ndarray
    raw_scores: np.ndarray | None = None

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a non-empty vector")
        if (p < 0).any():
            raise ValueError("probs must be non-negative")
        if abs(p.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"probs sum to {p.sum()!r}, expected 1 within {PROB_TOL}")
        if self.raw_scores is not None:
            z = np.asarray(self.raw_scores, dtype=np.float64)
            object.__setattr__(self, "raw_scores", z)
            if z.shape != p.shape:
                raise ValueError("raw_scores and probs must have identical length")
            if np.abs(softmax(z) - p).max() > PROB_TOL:
                raise ValueError("raw_scores do not normalize to probs")

    def __len__(self) -> int:
        return self.probs.size

    @classmethod
    def from_probs(cls, probs: Sequence[float] | np.ndarray) -> "Distribution":
        return cls(np.asarray(probs, dtype=np.float64))

    @classmethod
    def from_logits(cls, scores: Sequence[float] | np.ndarray) -> "Distribution":
        z = np.asarray(scores, dtype=np.float64)
        return cls(softmax(z), z)

    def with_log_scores(self) -> "Distribution":
        """Attach ``log(probs)`` as raw scores (zeros map to a finite floor)."""
        if self.raw_scores is not None:
            return self
        return Distribution(self.probs, np.log(np.maximum(self.probs, _TINY)))


@dataclass(frozen=True, eq=False)
class Weights:
    """Non-negative per-stream weights on the simplex (sum 1 within 1e-12)."""

    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if (w < 0).any():
            raise ValueError("weights must be non-negative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1 within {WEIGHT_TOL}")

    def __len__(self) -> int:
        return self.w.size

    @classmethod
    def uniform(cls, streams: int) -> "Weights":
        if streams < 1:
            raise ValueError("streams must be positive")
        return cls(np.full(streams, 1.0 / streams))

    @classmethod
    def normalized(cls, values: Sequence[float] | np.ndarray) -> "Weights":
        v = np.asarray(values, dtype=np.float64)
        total = v.sum()
        if total <= 0:
            raise ValueError("weights must have positive total mass")
        return cls(v / total)


@dataclass(frozen=True)
class TcdConfig:
    """Contrastive adjustment settings.

    ``contrast_strength`` in [0, 1) scales the push away from the negative
    stream; ``plausibility_threshold`` in [0, 1] keeps only tokens whose
    positive probability reaches that fraction of the positive maximum.
    ``space`` selects whether the contrast acts on probabilities or on logs.
    """

    contrast_strength: float = 0.5
    plausibility_threshold: float = 0.1
    space: Literal["probability", "log"] = "probability"

    def __post_init__(self) -> None:
        if not 0.0 <= self.contrast_strength < 1.0:
            raise ValueError("contrast_strength must lie in [0, 1)")
        if not 0.0 <= self.plausibility_threshold <= 1.0:
            raise ValueError("plausibility_threshold must lie in [0, 1]")
        if self.space not in ("probability", "log"):
            raise ValueError(f"unknown contrast space {self.space!r}")


def _tree_reduce(arrays: list[np.ndarray]) -> np.ndarray:
    """Balanced pairwise sum in ascending stream order (deterministic)."""
    while len(arrays) > 1:
        arrays = [
            arrays[i] + arrays[i + 1] if i + 1 < len(arrays) else arrays[i]
            for i in range(0, len(arrays), 2)
        ]
    return arrays[0]


def _check_mix_args(dists: Sequence[Distribution], w: Weights) -> None:
    if not dists:
        raise ValueError("need at least one stream distribution")
    if len(dists) != len(w):
        raise ValueError(f"{len(dists)} distributions but {len(w)} weights")
    size = len(dists[0])
    for j, d in enumerate(dists):
        if len(d) != size:
            raise ValueError(f"stream {j} has vocabulary size {len(d)}, expected {size}")


def mix_probs(dists: Sequence[Distribution], w: Weights) -> Distribution:
    """Convex combination of the streams' probability vectors."""
    _check_mix_args(dists, w)
    mixed = _tree_reduce([w.w[j] * d.probs for j, d in enumerate(dists)])
    return Distribution(mixed)


def mix_logits(dists: Sequence[Distribution], w: Weights) -> Distribution:
    """Weighted mean of raw scores, then exponential normalization.

    Equivalent to the normalized weighted geometric mean of the streams'
    probabilities. Every stream must carry raw scores.
    """
    _check_mix_args(dists, w)
    for j, d in enumerate(dists):
        if d.raw_scores is None:
            raise ValueError(f"stream {j} has no raw scores; logit mixing needs them")
    # zero-weight streams are skipped: 0 * -inf would poison the sum with NaN
    terms = [w.w[j] * d.raw_scores for j, d in enumerate(dists) if w.w[j] > 0.0]
    if not terms:
        raise ValueError("all weights are zero")
    combined = _tree_reduce(terms)
    return Distribution(softmax(combined), combined)


def tcd_adjust(pos: Distribution, neg: Distribution, cfg: TcdConfig) -> Distribution:
    """Contrast a positive stream against its frame-degraded negative.

    Tokens below ``plausibility_threshold * max(pos)`` are zeroed. On the
    plausible set, probability space scores ``(1+a)*pos - a*neg`` (negatives
    clamped to zero) are renormalized; log space scores
    ``(1+a)*log(pos) - a*log(neg)`` are exponential-normalized. With zero
    contrast strength and a threshold that excludes nothing the input is
    returned unchanged. If the contrast clamps every plausible token to zero
    mass, the positive stream is renormalized over the plausible set instead.
    """
    if len(pos) != len(neg):
        raise ValueError(f"vocabulary mismatch: {len(pos)} vs {len(neg)}")
    a = cfg.contrast_strength
    plausible = pos.probs >= cfg.plausibility_threshold * pos.probs.max()
    if a == 0.0 and plausible.all():
        return pos
    if cfg.space == "probability":
        scores = (1.0 + a) * pos.probs - a * neg.probs
        scores = np.where(plausible, np.maximum(scores, 0.0), 0.0)
        total = scores.sum()
        if total <= 0.0:
            scores = np.where(plausible, pos.probs, 0.0)
            total = scores.sum()
        probs = scores / total
        return Distribution(probs, np.log(np.maximum(probs, _TINY)))
    log_pos = np.log(np.maximum(pos.probs, _TINY))
    log_neg = np.log(np.maximum(neg.probs, _TINY))
    scores = np.where(plausible, (1.0 + a) * log_pos - a * log_neg, -np.inf)
    return Distribution(softmax(scores), scores)


def ritual_combine(
    original: Distribution,
    augmented: Distribution,
    space: Literal["probability", "logit"] = "probability",
) -> Distribution:
    """Equal-weight fusion of the original view and an augmented view."""
    pair = [original, augmented]
    w = Weights.uniform(2)
    return mix_probs(pair, w) if space == "probability" else mix_logits(pair, w)


def argmax_token(d: Distribution) -> int:
    """Index of the maximum probability; ties go to the lowest token id."""
    return int(np.argmax(d.probs))


def sample_token(d: Distribution, temperature: float, seed) -> int:
    """Sample a token id from the temperature-scaled distribution.

    Temperature 0 is greedy (argmax). Otherwise the distribution is scaled as
    ``p ** (1/temperature)`` and renormalized; zero-probability tokens stay
    impossible at every temperature. Deterministic given ``seed``.
    """
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    if temperature == 0.0:
        return argmax_token(d)
    if temperature == 1.0:
        q = d.probs
    else:
        support = d.probs > 0.0
        scaled = np.where(support, np.log(np.maximum(d.probs, _TINY)) / temperature, -np.inf)
        q = softmax(scaled)
    u = np.random.default_rng(seed).random()
    idx = int(np.searchsorted(np.cumsum(q), u, side="right"))
    idx = min(idx, len(d) - 1)
    while q[idx] == 0.0:
        idx -= 1  # u rounded past the final positive cdf step
    return idx

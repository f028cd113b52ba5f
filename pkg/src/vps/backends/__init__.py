"""Pluggable scorers turning one stream's context into a next-token distribution.

A scorer implements ``score(ScoreRequest) -> Distribution``. Shipped scorers:
a deterministic table-driven mock, an exact-Bayes toy video world
(:mod:`vps.backends.toyworld`), and an HTTP client for external inference
servers (:mod:`vps.backends.wire`).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from ..aggregation import Distribution

__all__ = [
    "ScoreRequest",
    "ScoreResponse",
    "Scorer",
    "FixtureMissError",
    "MockBackend",
    "CallCounter",
]


@dataclass(frozen=True)
class ScoreRequest:
    """Everything a backend needs to score the next token for one stream.

    ``top_m=None`` requests the full score vector; a positive value asks a
    wire backend for only the m most likely tokens.
    """

    video_ref: str
    frame_set: tuple[int, ...]
    view: str
    prompt_text: str
    generated: tuple[int, ...]
    top_m: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "frame_set", tuple(int(i) for i in self.frame_set))
        object.__setattr__(self, "generated", tuple(int(t) for t in self.generated))
        if any(a >= b for a, b in zip(self.frame_set, self.frame_set[1:])):
            raise ValueError(f"frame_set must be ascending, got {self.frame_set}")
        if self.top_m is not None and self.top_m < 1:
            raise ValueError("top_m must be positive when given")


@dataclass(frozen=True)
class ScoreResponse:
    """A backend's reply: full log-score vector, or top-m pairs plus remainder.

    ``top`` pairs are (token id, log probability) sorted by descending log
    probability; ``remainder`` is the probability mass outside the reported
    tokens.
    """

    vocab_size: int
    scores: tuple[float, ...] | None = None
    top: tuple[tuple[int, float], ...] | None = None
    remainder: float | None = None

    def __post_init__(self) -> None:
        if (self.scores is None) == (self.top is None):
            raise ValueError("exactly one of scores/top must be present")
        if self.scores is not None:
            if len(self.scores) != self.vocab_size:
                raise ValueError("scores length must equal vocab_size")
            if not np.isfinite(self.scores).all():
                raise ValueError("full scores must be finite")
        else:
            assert self.top is not None
            lps = [lp for _, lp in self.top]
            if any(a < b for a, b in zip(lps, lps[1:])):
                raise ValueError("top pairs must be sorted by descending log-probability")
            ids = [t for t, _ in self.top]
            if len(set(ids)) != len(ids):
                raise ValueError("top pairs contain duplicate token ids")
            if any(not 0 <= t < self.vocab_size for t in ids):
                raise ValueError("top token id out of range")
            mass = float(np.exp(lps).sum())
            if self.remainder is None:
                raise ValueError("top responses must report the remainder mass")
            if self.remainder < -1e-9 or mass - 1.0 > 1e-9:
                raise ValueError("top probabilities exceed total mass 1")

    def to_distribution(self) -> tuple[Distribution, tuple[str, ...]]:
        """Convert to a proper distribution; flags name any lossy conversion.

        Top-m responses are exponentiated, all unreported tokens get zero,
        and the result is renormalized (preserving the reported ordering).
        """
        if self.scores is not None:
            return Distribution.from_logits(np.asarray(self.scores)), ()
        assert self.top is not None
        probs = np.zeros(self.vocab_size)
        for token, lp in self.top:
            probs[token] = np.exp(lp)
        return Distribution.from_probs(probs / probs.sum()), ("topm_renormalized",)


@runtime_checkable
class Scorer(Protocol):
    def score(self, req: ScoreRequest) -> Distribution: ...


class FixtureMissError(KeyError):
    """The mock backend has no fixture for the requested key."""

    def __init__(self, key: tuple) -> None:
        super().__init__(f"no fixture for (frame_set, view, generated) = {key!r}")
        self.key = key


class MockBackend:
    """Deterministic scorer backed by a fixture table.

    Fixtures are keyed by ``(frame_set, view, generated-prefix)`` tuples and
    returned verbatim. ``vocab`` optionally maps token ids to text for answer
    extraction.
    """

    def __init__(
        self,
        fixtures: Mapping[tuple[tuple[int, ...], str, tuple[int, ...]], Distribution],
        vocab: Sequence[str] | None = None,
    ) -> None:
        self.fixtures = dict(fixtures)
        self.vocab = tuple(vocab) if vocab is not None else None

    def score(self, req: ScoreRequest) -> Distribution:
        key = (req.frame_set, req.view, req.generated)
        try:
            return self.fixtures[key]
        except KeyError:
            raise FixtureMissError(key) from None

    def token_text(self, token: int) -> str:
        if self.vocab is None:
            return str(token)
        return self.vocab[token]


class CallCounter:
    """Wrap a scorer and count its calls (compute-audit helper, thread-safe)."""

    def __init__(self, inner: Scorer) -> None:
        self.inner = inner
        self.calls = 0
        self._lock = threading.Lock()

    def score(self, req: ScoreRequest) -> Distribution:
        with self._lock:
            self.calls += 1
        return self.inner.score(req)

    def __getattr__(self, name: str):
        return getattr(self.inner, name)

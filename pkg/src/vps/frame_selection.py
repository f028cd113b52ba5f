"""Per-stream frame index plans.

Each parallel decode stream is conditioned on its own subset of the video's
frames. This module builds those subsets: uniform strides with per-stream
phase offsets (the canonical scheme), contiguous chunks (dense), and
relevance-score-driven sampling without replacement across streams (BOLT).

Frame indices are abstract integers in ``[0, total_frames)``; mapping them to
timestamps or fps is the caller's concern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FrameSelectionPlan",
    "BoltConfig",
    "InfeasiblePlanError",
    "uniform_offset_plan",
    "dense_chunk_plan",
    "identical_sets_plan",
    "sharpen_scores",
    "bolt_plan",
    "validate_plan",
    "plan_to_text",
    "plan_from_text",
]


class InfeasiblePlanError(ValueError):
    """More frame slots requested than the video has frames."""

    def __init__(self, total_frames: int, frames_per_stream: int, streams: int) -> None:
        super().__init__(
            f"infeasible plan: {streams} streams x {frames_per_stream} frames "
            f"need {streams * frames_per_stream} slots but the video has only "
            f"{total_frames} frames (T={total_frames}, k={frames_per_stream}, J={streams})"
        )
        self.total_frames = total_frames
        self.frames_per_stream = frames_per_stream
        self.streams = streams


@dataclass(frozen=True)
class FrameSelectionPlan:
    """J index sets over a T-frame video, one per stream.

    ``sets[j]`` is the ascending tuple of ``frames_per_stream`` frame indices
    shown to stream ``j``.
    """

    total_frames: int
    frames_per_stream: int
    streams: int
    sets: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "sets", tuple(tuple(int(i) for i in s) for s in self.sets))


@dataclass(frozen=True)
class BoltConfig:
    """Relevance scores for the video's frames plus the sharpening exponent."""

    scores: tuple[float, ...]
    sharpen_exponent: float = 3.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if not self.scores:
            raise ValueError("scores must be non-empty")
        if any(s < 0 for s in self.scores):
            raise ValueError("scores must be non-negative")
        if not self.sharpen_exponent > 0:
            raise ValueError("sharpen_exponent must be positive")

    @property
    def total_frames(self) -> int:
        return len(self.scores)


def _check_feasible(total_frames: int, frames_per_stream: int, streams: int) -> None:
    if total_frames < 1 or frames_per_stream < 1 or streams < 1:
        raise ValueError("total_frames, frames_per_stream, and streams must be positive")
    if streams * frames_per_stream > total_frames:
        raise InfeasiblePlanError(total_frames, frames_per_stream, streams)


def uniform_offset_plan(total_frames: int, frames_per_stream: int, streams: int) -> FrameSelectionPlan:
    """Uniform sampling per stream with a constant phase offset between streams.

    Stream ``j`` gets slot ``i`` at ``floor(j*T/(k*J) + i*T/k)``. Sets are
    pairwise disjoint whenever ``J*k <= T``; a single stream degrades to plain
    uniform subsampling of the whole video.
    """
    _check_feasible(total_frames, frames_per_stream, streams)
    T, k, J = total_frames, frames_per_stream, streams
    sets = tuple(
        tuple((T * (j + i * J)) // (k * J) for i in range(k))
        for j in range(J)
    )
    return FrameSelectionPlan(T, k, J, sets)


def dense_chunk_plan(total_frames: int, frames_per_stream: int, streams: int) -> FrameSelectionPlan:
    """Split the video into J contiguous chunks; sample uniformly within each.

    Chunk ``j`` covers ``[floor(j*T/J), floor((j+1)*T/J))``, so stream ``j``
    sees only its own contiguous span of the video.
    """
    _check_feasible(total_frames, frames_per_stream, streams)
    T, k, J = total_frames, frames_per_stream, streams
    sets = []
    for j in range(J):
        start = (j * T) // J
        length = ((j + 1) * T) // J - start
        sets.append(tuple(start + (i * length) // k for i in range(k)))
    return FrameSelectionPlan(T, k, J, tuple(sets))


def identical_sets_plan(total_frames: int, frames_per_stream: int, streams: int) -> FrameSelectionPlan:
    """Replicate the single-stream uniform subsampling across all J streams.

    Every stream sees the same frames; this is the self-consistency condition,
    not a disjoint plan.
    """
    base = uniform_offset_plan(total_frames, frames_per_stream, 1).sets[0]
    return FrameSelectionPlan(total_frames, frames_per_stream, streams, (base,) * streams)


def sharpen_scores(cfg: BoltConfig) -> np.ndarray:
    """Min-max normalize the scores, raise to the sharpening exponent, renormalize.

    Returns a probability vector over frames. A degenerate score range
    (max == min) carries no information, so the uniform distribution is
    returned.
    """
    s = np.asarray(cfg.scores, dtype=np.float64)
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.full(s.size, 1.0 / s.size)
    sharpened = ((s - lo) / (hi - lo)) ** cfg.sharpen_exponent
    return sharpened / sharpened.sum()


def bolt_plan(cfg: BoltConfig, frames_per_stream: int, streams: int, seed: int) -> FrameSelectionPlan:
    """Draw each stream's frames from the sharpened score distribution.

    Draws are without replacement across *all* streams: once a frame is taken
    by any stream it is removed and the remaining distribution renormalized.
    Draws proceed round-robin over streams (stream 0 slot 0, stream 1 slot 0,
    ...) so no stream systematically gets the higher-score frames. If the
    remaining sharpened mass hits zero before the plan is complete, the rest
    is drawn uniformly from the unused indices. Deterministic given ``seed``.
    """
    T = cfg.total_frames
    _check_feasible(T, frames_per_stream, streams)
    probs = sharpen_scores(cfg)
    available = np.ones(T, dtype=bool)
    rng = np.random.default_rng(seed)
    sets: list[list[int]] = [[] for _ in range(streams)]
    for _slot in range(frames_per_stream):
        for j in range(streams):
            remaining = np.where(available, probs, 0.0)
            total = remaining.sum()
            if total > 0.0:
                q = remaining / total
            else:
                q = available / available.sum()
            cdf = np.cumsum(q)
            u = rng.random()
            choice = int(np.searchsorted(cdf, u, side="right"))
            choice = min(choice, T - 1)
            while q[choice] == 0.0:
                choice -= 1  # u rounded past the final positive cdf step
            sets[j].append(choice)
            available[choice] = False
    return FrameSelectionPlan(
        T, frames_per_stream, streams, tuple(tuple(sorted(s)) for s in sets)
    )


def validate_plan(plan: FrameSelectionPlan, require_disjoint: bool = False) -> str | None:
    """Check the plan invariants; return None if valid, else the first violation."""
    if len(plan.sets) != plan.streams:
        return f"wrong stream count: {len(plan.sets)} sets for {plan.streams} streams"
    for j, s in enumerate(plan.sets):
        if len(s) != plan.frames_per_stream:
            return f"wrong set size: stream {j} has {len(s)} indices, expected {plan.frames_per_stream}"
        for i in s:
            if not 0 <= i < plan.total_frames:
                return f"out of range: stream {j} index {i} not in [0, {plan.total_frames})"
        if any(a >= b for a, b in zip(s, s[1:])):
            return f"not ascending: stream {j} indices {s}"
    if require_disjoint:
        seen: dict[int, int] = {}
        for j, s in enumerate(plan.sets):
            for i in s:
                if i in seen:
                    return f"overlap: index {i} appears in streams {seen[i]} and {j}"
                seen[i] = j
    return None


def plan_to_text(plan: FrameSelectionPlan) -> str:
    """Serialize: header line ``T k J``, then one line of indices per stream."""
    lines = [f"{plan.total_frames} {plan.frames_per_stream} {plan.streams}"]
    lines.extend(" ".join(str(i) for i in s) for s in plan.sets)
    return "\n".join(lines) + "\n"


def plan_from_text(text: str) -> FrameSelectionPlan:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty plan text")
    header = lines[0].split()
    if len(header) != 3:
        raise ValueError(f"bad plan header {lines[0]!r}: expected 'T k J'")
    T, k, J = (int(x) for x in header)
    if len(lines) - 1 != J:
        raise ValueError(f"expected {J} stream lines, got {len(lines) - 1}")
    sets = tuple(tuple(int(x) for x in ln.split()) for ln in lines[1:])
    plan = FrameSelectionPlan(T, k, J, sets)
    violation = validate_plan(plan)
    if violation is not None:
        raise ValueError(f"invalid plan: {violation}")
    return plan

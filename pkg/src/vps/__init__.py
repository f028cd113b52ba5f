"""Parallel-stream decoding for video language models.

Spreads a video's frames across J parallel decode streams, fuses their
next-token distributions per step, and broadcasts each sampled token back to
every stream, so perceptual coverage scales with compute while the context
length of any single stream stays constant. Ships the frame-plan builders,
the distribution fusion algebra (with contrastive and augmented-view
adjustments), a pluggable backend layer with an exactly-solvable toy world,
a loss-model module with Monte Carlo validation, and a benchmark harness.
"""

from .aggregation import (
    Distribution,
    TcdConfig,
    Weights,
    argmax_token,
    mix_logits,
    mix_probs,
    ritual_combine,
    sample_token,
    tcd_adjust,
)
from .decode_engine import DecodeConfig, DecodeTrace, decode, negative_view, step
from .frame_selection import (
    BoltConfig,
    FrameSelectionPlan,
    InfeasiblePlanError,
    bolt_plan,
    dense_chunk_plan,
    plan_from_text,
    plan_to_text,
    sharpen_scores,
    uniform_offset_plan,
    validate_plan,
)
from .scaling_law import (
    ScalingParams,
    SimSpec,
    fit_params,
    simulate_ce,
    simulate_ce_grid,
    stream_loss,
    vps_loss,
)

__version__ = "0.1.0"

__all__ = [
    "Distribution",
    "Weights",
    "TcdConfig",
    "mix_probs",
    "mix_logits",
    "tcd_adjust",
    "ritual_combine",
    "argmax_token",
    "sample_token",
    "FrameSelectionPlan",
    "BoltConfig",
    "InfeasiblePlanError",
    "uniform_offset_plan",
    "dense_chunk_plan",
    "bolt_plan",
    "sharpen_scores",
    "validate_plan",
    "plan_to_text",
    "plan_from_text",
    "DecodeConfig",
    "DecodeTrace",
    "decode",
    "step",
    "negative_view",
    "ScalingParams",
    "SimSpec",
    "stream_loss",
    "vps_loss",
    "simulate_ce",
    "simulate_ce_grid",
    "fit_params",
    "__version__",
]

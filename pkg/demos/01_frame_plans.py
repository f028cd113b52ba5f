"""Frame selection plans: how each stream gets its own view of a video.

Run: python demos/01_frame_plans.py
"""

import numpy as np

from vps import (
    BoltConfig,
    bolt_plan,
    dense_chunk_plan,
    plan_to_text,
    sharpen_scores,
    uniform_offset_plan,
    validate_plan,
)

T, k, J = 64, 4, 4

print(f"A {T}-frame video, {k} frames per stream, {J} streams.\n")

print("Uniform strides with per-stream phase offsets (the canonical scheme):")
plan = uniform_offset_plan(T, k, J)
for j, s in enumerate(plan.sets):
    print(f"  stream {j}: {s}")
print(f"  disjoint: {validate_plan(plan, require_disjoint=True) is None}")
print(f"  dropping streams 1..{J-1} leaves the plain uniform subsampling:",
      uniform_offset_plan(T, k, 1).sets[0])

print("\nDense chunking (each stream sees one contiguous span):")
for j, s in enumerate(dense_chunk_plan(T, k, J).sets):
    print(f"  stream {j}: {s}")

print("\nRelevance-driven sampling (BOLT): scores are min-max normalized,")
print("sharpened with exponent 3, then drawn without replacement across")
print("streams so no frame is shown twice.")
rng = np.random.default_rng(7)
scores = np.clip(rng.normal(0.5, 0.2, T) + np.exp(-0.5 * ((np.arange(T) - 40) / 4.0) ** 2), 0, None)
cfg = BoltConfig(tuple(scores))
sharp = sharpen_scores(cfg)
print(f"  sharpened mass peaks at frame {int(np.argmax(sharp))} "
      f"(raw argmax {int(np.argmax(scores))})")
bolt = bolt_plan(cfg, k, J, seed=0)
for j, s in enumerate(bolt.sets):
    print(f"  stream {j}: {s}")
print(f"  disjoint: {validate_plan(bolt, require_disjoint=True) is None}")

print("\nPlans serialize to a line-based text format (header 'T k J'):")
print(plan_to_text(plan))

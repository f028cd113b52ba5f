"""Fusing per-stream token distributions: mixtures, contrast, view fusion.

Run: python demos/02_stream_fusion.py
"""

import numpy as np

from vps import (
    Distribution,
    TcdConfig,
    Weights,
    argmax_token,
    mix_logits,
    mix_probs,
    ritual_combine,
    tcd_adjust,
)

print("Complementary evidence: four streams each favor a different wrong")
print("option (0.4) and give the truth only 0.3, but the mixture's argmax")
print("is the truth.\n")
truth = 0
streams = []
for wrong in (1, 2, 3, 4):
    p = np.full(5, 0.1)
    p[truth], p[wrong] = 0.3, 0.4
    streams.append(Distribution.from_probs(p))
mixed = mix_probs(streams, Weights.uniform(4))
print("  per-stream argmax:", [argmax_token(d) for d in streams])
print("  mixture:", np.round(mixed.probs, 3), "-> argmax", argmax_token(mixed))

print("\nProbability vs score-space averaging (arithmetic vs geometric mean):")
d1 = Distribution.from_logits(np.log([0.9, 0.1]))
d2 = Distribution.from_logits(np.log([0.5, 0.5]))
print("  probability:", np.round(mix_probs([d1, d2], Weights.uniform(2)).probs, 4))
print("  scores:     ", np.round(mix_logits([d1, d2], Weights.uniform(2)).probs, 4))

print("\nContrastive adjustment against a frame-degraded negative stream")
print("(strength 0.5, plausibility threshold 0.1):")
pos = Distribution.from_probs([0.7, 0.2, 0.1])
neg = Distribution.from_probs([0.4, 0.5, 0.1])
out = tcd_adjust(pos, neg, TcdConfig(0.5, 0.1, "probability"))
print(f"  positive {pos.probs} - negative {neg.probs} -> {out.probs}")
print("  the token the degraded stream over-predicts (a hallucination")
print("  candidate) is pushed down from 0.2 to 0.05")

print("\nEqual-weight fusion of an original and an augmented view:")
orig = Distribution.from_probs([0.6, 0.3, 0.1])
aug = Distribution.from_probs([0.4, 0.5, 0.1])
print("  combined:", ritual_combine(orig, aug).probs)

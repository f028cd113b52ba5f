"""Parallel decoding on the exactly-solvable toy world.

A hidden label emits every frame independently; the answer posterior given
any frame subset is exact Bayes. More streams see more distinct frames, so
accuracy climbs with the stream count at constant per-stream context.

Run: python demos/03_toy_decode.py
"""

import numpy as np

from vps import DecodeConfig, decode, uniform_offset_plan
from vps.backends.toyworld import ToyBackend, ToyWorld, toy_episode

T, k = 64, 4
world = ToyWorld.symmetric(n_labels=4, match_prob=0.55)
backend = ToyBackend(world)

print("One episode in detail:")
episode = toy_episode(world, T, seed=11)
backend.add_episode(episode)
print(f"  hidden label: {episode.answer_letter}")
for J in (1, 2, 4, 8):
    plan = uniform_offset_plan(T, k, J)
    cfg = DecodeConfig(streams=J, max_tokens=1)
    tokens, trace = decode(episode.video_ref, episode.question, plan, backend, cfg, seed=0)
    agg = np.round(trace.steps[0].aggregated[:4], 3)
    print(f"  J={J}: answer {backend.token_text(tokens[0])}, mixture over options {agg}")

print("\nAccuracy over 400 episodes (4 frames per stream throughout):")
episodes = []
for e in range(400):
    ep = toy_episode(world, T, seed=1000 + e)
    backend.add_episode(ep)
    episodes.append(ep)
for J in (1, 2, 4, 8):
    plan = uniform_offset_plan(T, k, J)
    cfg = DecodeConfig(streams=J, max_tokens=1)
    hits = 0
    for ep in episodes:
        tokens, _ = decode(ep.video_ref, ep.question, plan, backend, cfg, seed=0)
        hits += backend.token_text(tokens[0]) == ep.answer_letter
    print(f"  J={J}: {hits / len(episodes):.3f}  ({J * k} distinct frames consulted, "
          f"context still {k} frames per stream)")

"""The benchmark harness end to end: prompts, extraction, voting, metrics.

Run: python demos/05_benchmark_pipeline.py
"""

from vps.backends.toyworld import ToyWorld
from vps.eval_harness import (
    MethodSpec,
    accuracy,
    build_prompt,
    extract_answer,
    majority_vote,
    run_benchmark,
    toy_benchmark,
)
from vps.metrics import StubEmbedClient, StubJudgeClient, judge_score, rouge_l, sts_score

print("Prompt scaffolds are fixed per task:")
world = ToyWorld.symmetric(4, 0.55)
items, backend = toy_benchmark(world, n_episodes=300, total_frames=64, seed=5)
print("  " + build_prompt(items[0]).replace("\n", "\n  "))

print("\nAnswer extraction is forgiving about formatting:")
for raw in ("B.", "the answer is  c", "Yes!", "no idea, sorry"):
    print(f"  {raw!r:<20} -> mc: {extract_answer(raw, 'multiple_choice')!r}, "
          f"binary: {extract_answer(raw, 'binary')!r}")

print("\nMajority voting (ties break lexicographically):")
print("  [A, A, B] ->", majority_vote(["A", "A", "B"]))
print("  [A, B]    ->", majority_vote(["A", "B"]))

print("\nCompute-matched comparison on 300 toy episodes: the mixture sees")
print("different frames per stream; self-consistency samples J answers from")
print("identical frames and votes. Both cost J backend calls per token.")
methods = [MethodSpec.parse(m) for m in ("baseline", "vps:4", "sc:4")]
results, audit = run_benchmark(
    items, backend, methods, frames_per_stream=4, seed=0,
    max_tokens=1, stop_tokens=frozenset({world.stop_token}),
)
table = accuracy(results, items)
for method in ("baseline", "vps:4", "sc:4"):
    print(f"  {method:<9} accuracy {table[method]['overall']:.3f} "
          f"({audit[method]} backend calls)")

print("\nFree-form metrics run against stub-able clients:")
print("  rouge('the cat sat', 'the cat ran') =", round(rouge_l("the cat sat", "the cat ran"), 4))
embed = StubEmbedClient({"a": [1.0, 0.0], "b": [0.0, 1.0]})
print("  sts of orthogonal embeddings =", sts_score("a", "b", embed))
judge = StubJudgeClient(["Score: [evaluation] 4", "[4]"])
print("  judge reply parsed after one retry =", judge_score("cand", "ref", judge))

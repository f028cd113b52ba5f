"""Operator surface: plan generation, benchmark runs, simulation, fitting.

Exit codes: 0 success, 1 runtime failure (partial results are preserved),
2 usage or validation error. Every command is deterministic given --seed and
an offline backend, and all output files are written atomically.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import eval_harness, scaling_law
from .backends.toyworld import ToyWorld
from .backends.wire import WireBackend, WireConfig
from .decode_engine import DecodeConfig, decode
from .frame_selection import (
    BoltConfig,
    InfeasiblePlanError,
    bolt_plan,
    dense_chunk_plan,
    plan_to_text,
    uniform_offset_plan,
    validate_plan,
)

__all__ = ["main"]


class UsageError(Exception):
    pass


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp.{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return cfg


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_plan(args: argparse.Namespace) -> int:
    try:
        if args.strategy == "uniform":
            plan = uniform_offset_plan(args.total_frames, args.frames, args.streams)
        elif args.strategy == "dense":
            plan = dense_chunk_plan(args.total_frames, args.frames, args.streams)
        else:
            if not args.scores:
                raise UsageError("--strategy bolt needs --scores FILE (JSON list of per-frame scores)")
            with open(args.scores, "r", encoding="utf-8") as fh:
                scores = json.load(fh)
            cfg = BoltConfig(tuple(float(s) for s in scores), sharpen_exponent=args.sharpen)
            if args.total_frames and args.total_frames != len(scores):
                raise UsageError(f"--T {args.total_frames} but {len(scores)} scores given")
            plan = bolt_plan(cfg, args.frames, args.streams, args.seed)
    except InfeasiblePlanError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2

    text = plan_to_text(plan)
    if args.out:
        _write_atomic(Path(args.out), text)
    else:
        sys.stdout.write(text)
    violation = validate_plan(plan, require_disjoint=True)
    print(f"disjointness audit: {'ok' if violation is None else violation}", file=sys.stderr)
    return 0


def _build_toy(args: argparse.Namespace):
    world = ToyWorld.symmetric(args.toy_labels, args.toy_match_prob)
    items, backend = eval_harness.toy_benchmark(
        world, args.toy_episodes, args.toy_total_frames, args.seed
    )
    return items, backend, frozenset({world.stop_token})


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    endpoint = args.endpoint or config.get("endpoint")

    try:
        methods = [eval_harness.MethodSpec.parse(tag) for tag in args.methods.split(",") if tag]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not methods:
        raise UsageError("no methods requested")

    bolt_scores = None
    if args.bolt_scores:
        with open(args.bolt_scores, "r", encoding="utf-8") as fh:
            bolt_scores = {str(k): [float(x) for x in v] for k, v in json.load(fh).items()}
    if args.strategy == "bolt" and bolt_scores is None:
        raise UsageError("--strategy bolt needs --bolt-scores FILE")

    stop_tokens: frozenset[int] = frozenset()
    if args.backend == "toy":
        if args.dataset:
            raise UsageError("--backend toy synthesizes its own dataset; drop --dataset")
        if args.toy_episodes < 1:
            raise UsageError("--toy-episodes must be positive")
        items, backend, stop_tokens = _build_toy(args)
    else:
        if not args.dataset:
            raise UsageError("--dataset is required for the wire backend")
        if not endpoint:
            raise UsageError("wire backend needs --endpoint or config endpoint")
        try:
            items = eval_harness.load_dataset(args.dataset)
        except (OSError, eval_harness.DatasetError) as exc:
            raise UsageError(f"cannot load dataset: {exc}") from exc
        vocab = None
        vocab_path = args.vocab or config.get("vocab")
        if vocab_path:
            try:
                with open(vocab_path, "r", encoding="utf-8") as fh:
                    vocab = [str(t) for t in json.load(fh)]
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot load vocab {vocab_path}: {exc}") from exc
        backend = WireBackend(WireConfig(endpoint), vocab=vocab)
        if args.stop_tokens:
            stop_tokens = frozenset(_parse_int_list(args.stop_tokens))

    if not items:
        raise UsageError("dataset is empty")
    for item in items:
        if methods and max(m.streams for m in methods) * args.frames > item.total_frames:
            raise UsageError(
                f"item {item.id}: {max(m.streams for m in methods)} streams x "
                f"{args.frames} frames exceed its {item.total_frames} total frames"
            )

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    status = 0
    try:
        results, audit = eval_harness.run_benchmark(
            items,
            backend,
            methods,
            frames_per_stream=args.frames,
            seed=args.seed,
            strategy=args.strategy,
            space=args.space,
            temperature=args.temperature,
            max_tokens=args.max_tokens,
            stop_tokens=stop_tokens,
            bolt_scores=bolt_scores,
            jobs=args.jobs,
        )
    except Exception as exc:  # noqa: BLE001 - preserve whatever was written, report hard-down
        print(f"run failed: {exc}", file=sys.stderr)
        return 1

    embed_client = judge_client = None
    if config.get("embed_endpoint"):
        from .metrics import HttpEmbedClient

        embed_client = HttpEmbedClient(config["embed_endpoint"])
    if config.get("judge_endpoint"):
        from .metrics import HttpJudgeClient

        judge_client = HttpJudgeClient(config["judge_endpoint"])
    eval_harness.score_description_results(results, items, embed_client, judge_client)

    _write_atomic(out_dir / "results.jsonl", "".join(r.to_json() + "\n" for r in results))

    table = eval_harness.accuracy(results, items)
    categories = sorted({item.category or "uncategorized" for item in items if item.task != "description"})
    header = ["method"] + categories + ["overall"]
    rows = [
        [method] + [f"{table[method].get(cat, float('nan')):.6f}" for cat in categories + ["overall"]]
        for method in sorted(table)
    ]
    _write_atomic(out_dir / "accuracy.csv", _csv_text(header, rows))

    desc_rows = eval_harness.description_rows(results, items, args.frames)
    if desc_rows:
        header = ["method", "nframe", "llm_judge", "sts", "sts_x100", "rouge_l"]
        rows = [
            [r["method"], r["nframe"]]
            + ["" if r[m] is None else f"{r[m]:.6f}" for m in ("llm_judge", "sts", "sts_x100", "rouge_l")]
            for r in desc_rows
        ]
        _write_atomic(out_dir / "metrics.csv", _csv_text(header, rows))

    summary = {
        "items": len(items),
        "methods": [m.tag for m in methods],
        "frames_per_stream": args.frames,
        "strategy": args.strategy,
        "space": args.space,
        "seed": args.seed,
        "backend": args.backend,
        "accuracy": table,
        "backend_calls": audit,
        "description_metrics": desc_rows,
    }
    _write_atomic(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")

    if args.trace:
        trace_text = _example_trace(items[0], methods[0], backend, args, stop_tokens, bolt_scores)
        _write_atomic(out_dir / "trace.jsonl", trace_text)
    return status


def _example_trace(item, method, backend, args, stop_tokens, bolt_scores) -> str:
    """Re-decode the first item under the first method, recording the trace."""
    plan = eval_harness._build_plan(
        args.strategy,
        item.total_frames,
        args.frames,
        method.streams,
        args.seed,
        bolt_scores.get(item.video_ref) if bolt_scores else None,
    )
    cfg = DecodeConfig(
        streams=method.streams,
        space=args.space,
        max_tokens=args.max_tokens,
        stop_tokens=stop_tokens,
    )
    seed = int(np.random.SeedSequence([args.seed, 0]).generate_state(1)[0])
    _tokens, trace = decode(item.video_ref, eval_harness.build_prompt(item), plan, backend, cfg, seed=seed)
    return trace.to_jsonl()


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad integer list {text!r}") from exc


def cmd_simulate(args: argparse.Namespace) -> int:
    streams_list = _parse_int_list(args.streams)
    if not streams_list:
        raise UsageError("--streams list is empty")
    params = scaling_law.ScalingParams(
        irreducible_entropy=args.irreducible,
        capacity_coeff=args.capacity,
        capacity_exponent=args.exponent,
        model_size=args.model_size,
        correlation=args.correlation,
        biases=(args.bias,) * max(streams_list),
    )
    spec = scaling_law.SimSpec(args.vocab, args.samples, args.seed, params)
    dtype = np.float32 if args.float32 else np.float64
    grid = scaling_law.simulate_ce_grid(spec, streams_list, [args.correlation], dtype=dtype)
    rows = []
    for J in streams_list:
        res = grid[(args.correlation, J)]
        predicted = scaling_law.vps_loss(params.with_streams(J), J)
        # report the measured excess on top of the configured irreducible
        # entropy, so the two columns share the same offset
        empirical = params.irreducible_entropy + res.mixture_excess
        rows.append([J, f"{predicted:.9f}", f"{empirical:.9f}", f"{res.mixture_excess_stderr:.3e}"])
    text = _csv_text(["J", "predicted", "empirical", "stderr"], rows)
    if args.out:
        _write_atomic(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    try:
        with open(args.input, "r", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)  # header row
            data = [(float(row[0]), float(row[1])) for row in reader if row]
    except (OSError, ValueError, StopIteration) as exc:
        raise UsageError(f"cannot read fit input {args.input}: {exc}") from exc
    fixed = {}
    for pair in args.fix or []:
        name, _, value = pair.partition("=")
        if not value:
            raise UsageError(f"--fix expects name=value, got {pair!r}")
        fixed[name] = float(value)
    xs = [x for x, _ in data]
    losses = [y for _, y in data]
    try:
        result = scaling_law.fit_params(xs, losses, mode=args.mode, fixed=fixed)
    except scaling_law.FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return 1
    p = result.params
    payload = {
        "mode": result.mode,
        "free": list(result.free),
        "cost": result.cost,
        "params": {
            "irreducible_entropy": p.irreducible_entropy,
            "capacity_coeff": p.capacity_coeff,
            "capacity_exponent": p.capacity_exponent,
            "model_size": p.model_size,
            "correlation": p.correlation,
            "capacity_term": p.capacity_term,
            "mean_bias": p.mean_bias,
        },
        "residuals": [float(r) for r in result.residuals],
    }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write_atomic(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    results = []
    items_meta: dict[str, dict] = {}
    desc_rows = []
    for run_dir in args.run_dirs:
        run_path = Path(run_dir)
        results_file = run_path / "results.jsonl"
        summary_file = run_path / "summary.json"
        if not results_file.exists() or not summary_file.exists():
            raise UsageError(f"{run_dir} is not a run directory (missing results.jsonl/summary.json)")
        summary = json.loads(summary_file.read_text(encoding="utf-8"))
        for line in results_file.read_text(encoding="utf-8").splitlines():
            if line.strip():
                results.append((summary["frames_per_stream"], eval_harness.MethodResult.from_json(line)))
        for row in summary.get("description_metrics") or []:
            desc_rows.append(row)
        for method, cats in summary.get("accuracy", {}).items():
            items_meta.setdefault(method, {}).update(cats)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    categories = sorted({c for cats in items_meta.values() for c in cats if c != "overall"})
    header = ["method"] + categories + ["overall"]
    rows = [
        [method] + [f"{cats.get(c, float('nan')):.6f}" for c in categories + ["overall"]]
        for method, cats in sorted(items_meta.items())
    ]
    _write_atomic(out_dir / "accuracy.csv", _csv_text(header, rows))
    if desc_rows:
        header = ["method", "nframe", "llm_judge", "sts", "sts_x100", "rouge_l"]
        rows = [
            [r["method"], r["nframe"]]
            + ["" if r.get(m) is None else f"{r[m]:.6f}" for m in ("llm_judge", "sts", "sts_x100", "rouge_l")]
            for r in sorted(desc_rows, key=lambda r: (str(r["method"]), r["nframe"]))
        ]
        _write_atomic(out_dir / "metrics.csv", _csv_text(header, rows))
    print(f"report written to {out_dir}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vps", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="generate a frame selection plan")
    p.add_argument("--T", "--total-frames", dest="total_frames", type=int, required=True)
    p.add_argument("--k", "--frames", dest="frames", type=int, required=True)
    p.add_argument("--J", "--streams", dest="streams", type=int, required=True)
    p.add_argument("--strategy", choices=("uniform", "dense", "bolt"), default="uniform")
    p.add_argument("--scores", help="JSON file with per-frame relevance scores (bolt)")
    p.add_argument("--sharpen", type=float, default=3.0, help="bolt sharpening exponent")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the plan here instead of stdout")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="evaluate methods over a dataset")
    p.add_argument("--dataset", help="line-delimited JSON items (wire backend)")
    p.add_argument("--backend", choices=("toy", "wire"), default="toy")
    p.add_argument("--endpoint", help="wire backend URL")
    p.add_argument("--vocab", help="JSON list mapping token ids to text (wire backend)")
    p.add_argument("--stop-tokens", help="comma list of stop token ids (wire backend)")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--methods", default="baseline,vps:4", help="comma list, e.g. baseline,vps:4,sc:4,vps:4+tcd")
    p.add_argument("--k", "--frames", dest="frames", type=int, default=4)
    p.add_argument("--strategy", choices=("uniform", "dense", "bolt"), default="uniform")
    p.add_argument("--space", choices=("probability", "logit"), default="probability")
    p.add_argument("--temperature", type=float, default=1.0, help="self-consistency sampling temperature")
    p.add_argument("--max-tokens", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="concurrent episodes")
    p.add_argument("--out-dir", default="vps-run")
    p.add_argument("--trace", action="store_true", help="emit a decode trace for the first item")
    p.add_argument("--bolt-scores", help="JSON file mapping video_ref to per-frame scores")
    p.add_argument("--toy-episodes", type=int, default=200)
    p.add_argument("--toy-labels", type=int, default=4)
    p.add_argument("--toy-total-frames", type=int, default=64)
    p.add_argument("--toy-match-prob", type=float, default=0.55)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="Monte Carlo check of the loss model")
    p.add_argument("--streams", default="1,2,4,8", help="comma list of stream counts")
    p.add_argument("--correlation", type=float, default=0.0)
    p.add_argument("--irreducible", type=float, default=0.0, help="irreducible entropy offset E")
    p.add_argument("--capacity", type=float, default=1e-3, help="capacity coefficient A")
    p.add_argument("--exponent", type=float, default=1.0, help="capacity exponent alpha")
    p.add_argument("--model-size", type=float, default=1.0, help="parameter count N")
    p.add_argument("--bias", type=float, default=0.0, help="per-stream bias")
    p.add_argument("--vocab", type=int, default=64)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--float32", action="store_true", help="float32 bulk arithmetic (float64 accumulation)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the loss model to measured losses")
    p.add_argument("--input", required=True, help="CSV with header and rows x,loss")
    p.add_argument("--mode", choices=("streams", "model_size"), default="streams")
    p.add_argument("--fix", action="append", help="pin a field, e.g. --fix correlation=0.5")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", help="merge run directories into report tables")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default="vps-report")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InfeasiblePlanError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

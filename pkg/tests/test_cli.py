"""Command surface: plan/run/simulate/fit/report, exit codes, file outputs."""

import csv
import json

import numpy as np
import pytest

from vps.cli import main
from vps.frame_selection import plan_from_text


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestPlanCommand:
    def test_canonical_plan(self, capsys):
        assert main(["plan", "--T", "64", "--k", "4", "--J", "4", "--strategy", "uniform"]) == 0
        out = capsys.readouterr().out
        plan = plan_from_text(out)
        assert plan.sets == (
            (0, 16, 32, 48),
            (4, 20, 36, 52),
            (8, 24, 40, 56),
            (12, 28, 44, 60),
        )

    def test_infeasible_exits_2(self, capsys):
        assert main(["plan", "--T", "8", "--k", "4", "--J", "4"]) == 2
        assert "infeasible" in capsys.readouterr().err

    def test_dense_strategy(self, capsys):
        assert main(["plan", "--strategy", "dense", "--T", "8", "--k", "2", "--J", "2"]) == 0
        plan = plan_from_text(capsys.readouterr().out)
        assert plan.sets == ((0, 2), (4, 6))

    def test_bolt_strategy_from_scores_file(self, tmp_path, capsys):
        scores = tmp_path / "scores.json"
        scores.write_text(json.dumps([0.1] * 12))
        assert main([
            "plan", "--T", "12", "--k", "3", "--J", "2",
            "--strategy", "bolt", "--scores", str(scores), "--seed", "4",
        ]) == 0
        plan = plan_from_text(capsys.readouterr().out)
        flat = sorted(i for s in plan.sets for i in s)
        assert len(set(flat)) == 6

    def test_plan_written_to_file(self, tmp_path):
        out = tmp_path / "plan.txt"
        assert main(["plan", "--T", "10", "--k", "2", "--J", "2", "--out", str(out)]) == 0
        assert plan_from_text(out.read_text()).sets == ((0, 5), (2, 7))

    def test_disjointness_audit_printed(self, capsys):
        main(["plan", "--T", "64", "--k", "4", "--J", "4"])
        assert "disjointness audit: ok" in capsys.readouterr().err


class TestRunCommand:
    def test_toy_run_writes_reports(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = main([
            "run", "--backend", "toy", "--toy-episodes", "40",
            "--methods", "baseline,vps:4", "--k", "4",
            "--seed", "11", "--out-dir", str(out),
        ])
        assert code == 0
        rows = read_csv(out / "accuracy.csv")
        assert rows[0] == ["method", "toy", "overall"]
        table = {row[0]: float(row[-1]) for row in rows[1:]}
        assert set(table) == {"baseline", "vps:4"}
        assert table["vps:4"] >= table["baseline"]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["backend_calls"]["vps:4"] == 40 * 4
        assert (out / "results.jsonl").exists()

    def test_method_sweep_table_shape(self, tmp_path):
        out = tmp_path / "run"
        assert main([
            "run", "--backend", "toy", "--toy-episodes", "20",
            "--methods", "vps:2,vps:4", "--k", "4", "--out-dir", str(out),
        ]) == 0
        rows = read_csv(out / "accuracy.csv")
        assert [r[0] for r in rows[1:]] == ["vps:2", "vps:4"]

    def test_trace_flag_writes_replayable_trace(self, tmp_path):
        out = tmp_path / "run"
        assert main([
            "run", "--backend", "toy", "--toy-episodes", "5",
            "--methods", "vps:2", "--k", "4", "--out-dir", str(out), "--trace",
        ]) == 0
        from vps.decode_engine import DecodeTrace

        text = (out / "trace.jsonl").read_text()
        assert DecodeTrace.from_jsonl(text).to_jsonl() == text

    def test_empty_dataset_exits_2(self, tmp_path, capsys):
        assert main([
            "run", "--backend", "toy", "--toy-episodes", "0",
            "--methods", "baseline", "--out-dir", str(tmp_path / "x"),
        ]) == 2

    def test_infeasible_frames_exit_2(self, tmp_path):
        assert main([
            "run", "--backend", "toy", "--toy-episodes", "4",
            "--toy-total-frames", "8", "--methods", "vps:4", "--k", "4",
            "--out-dir", str(tmp_path / "x"),
        ]) == 2

    def test_wire_backend_requires_endpoint(self, tmp_path):
        dataset = tmp_path / "d.jsonl"
        dataset.write_text(json.dumps({
            "id": "a", "video_ref": "v", "total_frames": 8, "task": "binary",
            "question": "q?", "reference": "yes",
        }) + "\n")
        assert main([
            "run", "--backend", "wire", "--dataset", str(dataset),
            "--out-dir", str(tmp_path / "x"),
        ]) == 2

    def test_bad_method_tag_exits_2(self, tmp_path):
        assert main([
            "run", "--backend", "toy", "--toy-episodes", "4",
            "--methods", "warp:9", "--out-dir", str(tmp_path / "x"),
        ]) == 2

    def test_backend_hard_down_exits_1(self, tmp_path):
        dataset = tmp_path / "d.jsonl"
        dataset.write_text(json.dumps({
            "id": "a", "video_ref": "v", "total_frames": 8, "task": "binary",
            "question": "q?", "reference": "yes",
        }) + "\n")
        assert main([
            "run", "--backend", "wire", "--dataset", str(dataset),
            "--endpoint", "http://127.0.0.1:1", "--methods", "baseline",
            "--k", "2", "--out-dir", str(tmp_path / "x"),
        ]) == 1

    def test_jobs_flag_matches_serial(self, tmp_path):
        outs = []
        for jobs, name in ((1, "serial"), (4, "parallel")):
            out = tmp_path / name
            assert main([
                "run", "--backend", "toy", "--toy-episodes", "16",
                "--methods", "baseline,vps:4,sc:4", "--k", "4",
                "--seed", "9", "--jobs", str(jobs), "--out-dir", str(out),
            ]) == 0
            outs.append((out / "results.jsonl").read_text())
        assert outs[0] == outs[1]


class TestWireRunIntegration:
    def test_run_over_stub_server_with_description_metrics(self, tmp_path):
        import math

        from vps.backends.stub_server import StubServer

        # stub model: binary item answered "yes", description item captioned
        vocab = ["yes", "no", " a", " cat", " sat", "</s>"]

        def score_handler(body):
            n = len(body["generated"])
            if body["video_ref"] == "vid-bin":
                target = ["yes", "</s>"]
            else:
                target = [" a", " cat", " sat", "</s>"]
            token = target[min(n, len(target) - 1)]
            scores = [math.log(1e-9)] * len(vocab)
            scores[vocab.index(token)] = 0.0
            return {"vocab_size": len(vocab), "scores": scores}

        dataset = tmp_path / "data.jsonl"
        records = [
            {"id": "b1", "video_ref": "vid-bin", "total_frames": 8, "task": "binary",
             "question": "Is it a cat?", "reference": "yes", "category": "entire"},
            {"id": "d1", "video_ref": "vid-desc", "total_frames": 8, "task": "description",
             "question": "", "reference": "a cat sat", "category": "entire"},
        ]
        dataset.write_text("".join(json.dumps(r) + "\n" for r in records))

        vocab_file = tmp_path / "vocab.json"
        vocab_file.write_text(json.dumps(vocab))
        embeddings = {" a cat sat": [1.0, 0.0], "a cat sat": [1.0, 0.0]}
        with StubServer(
            score_handler=score_handler,
            judge_replies=["[5]"],
            embeddings=embeddings,
        ) as server:
            config = tmp_path / "config.json"
            config.write_text(json.dumps({
                "endpoint": server.url,
                "judge_endpoint": server.url,
                "embed_endpoint": server.url,
            }))
            out = tmp_path / "run"
            code = main([
                "run", "--backend", "wire", "--dataset", str(dataset),
                "--config", str(config), "--methods", "baseline",
                "--k", "2", "--max-tokens", "6", "--vocab", str(vocab_file),
                "--stop-tokens", str(vocab.index("</s>")), "--out-dir", str(out),
            ])
        assert code == 0
        rows = read_csv(out / "accuracy.csv")
        assert rows[1][-1] == "1.000000"  # binary item answered correctly
        metric_rows = read_csv(out / "metrics.csv")
        header, row = metric_rows[0], metric_rows[1]
        metrics = dict(zip(header, row))
        assert float(metrics["rouge_l"]) == 1.0
        assert float(metrics["llm_judge"]) == 5.0
        assert float(metrics["sts"]) == 1.0

    def test_flag_overrides_config_endpoint(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"endpoint": "http://127.0.0.1:1"}))
        dataset = tmp_path / "d.jsonl"
        dataset.write_text(json.dumps({
            "id": "a", "video_ref": "v", "total_frames": 8, "task": "binary",
            "question": "q?", "reference": "yes",
        }) + "\n")
        # flag endpoint also unreachable, but on a different port: the error
        # proves the flag won over the config
        code = main([
            "run", "--backend", "wire", "--dataset", str(dataset),
            "--config", str(config), "--endpoint", "http://127.0.0.1:2",
            "--methods", "baseline", "--k", "2", "--out-dir", str(tmp_path / "x"),
        ])
        assert code == 1


class TestSimulateCommand:
    def test_table_columns(self, tmp_path):
        out = tmp_path / "sim.csv"
        assert main([
            "simulate", "--samples", "20000", "--streams", "1,2,4",
            "--correlation", "0.5", "--seed", "1", "--out", str(out),
        ]) == 0
        rows = read_csv(out)
        assert rows[0] == ["J", "predicted", "empirical", "stderr"]
        assert [r[0] for r in rows[1:]] == ["1", "2", "4"]

    def test_full_correlation_sweep_is_flat(self, tmp_path):
        out = tmp_path / "sim.csv"
        assert main([
            "simulate", "--samples", "20000", "--streams", "1,2,4,8",
            "--correlation", "1", "--seed", "2", "--out", str(out),
        ]) == 0
        rows = read_csv(out)
        predicted = [float(r[1]) for r in rows[1:]]
        assert np.allclose(predicted, predicted[0])

    def test_uncorrelated_sweep_strictly_decreasing(self, tmp_path):
        out = tmp_path / "sim.csv"
        assert main([
            "simulate", "--samples", "20000", "--streams", "1,2,4,8",
            "--correlation", "0", "--seed", "3", "--out", str(out),
        ]) == 0
        rows = read_csv(out)
        predicted = [float(r[1]) for r in rows[1:]]
        empirical = [float(r[2]) for r in rows[1:]]
        assert all(a > b for a, b in zip(predicted, predicted[1:]))
        assert all(a > b for a, b in zip(empirical, empirical[1:]))

    def test_simulate_fit_round_trip_recovers_correlation(self, tmp_path):
        sim_csv = tmp_path / "sim.csv"
        assert main([
            "simulate", "--samples", "200000", "--streams", "1,2,3,4,6,8",
            "--correlation", "0.3", "--seed", "5", "--float32", "--out", str(sim_csv),
        ]) == 0
        data = [(int(r[0]), float(r[2])) for r in read_csv(sim_csv)[1:]]
        fit_csv = tmp_path / "fit_input.csv"
        with open(fit_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["J", "loss"])
            writer.writerows(data)
        fit_out = tmp_path / "fit.json"
        assert main([
            "fit", "--input", str(fit_csv), "--mode", "streams",
            "--fix", "irreducible_entropy=0", "--out", str(fit_out),
        ]) == 0
        fitted = json.loads(fit_out.read_text())
        assert abs(fitted["params"]["correlation"] - 0.3) < 0.05


class TestFitCommand:
    def test_fit_exact_curve(self, tmp_path, capsys):
        from vps.scaling_law import vps_loss, ScalingParams

        path = tmp_path / "losses.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["J", "loss"])
            for J in (1, 2, 4, 8):
                params = ScalingParams(1.0, 0.4, 1.0, 1.0, 0.5, (0.0,) * J)
                writer.writerow([J, vps_loss(params, J)])
        assert main([
            "fit", "--input", str(path), "--fix", "irreducible_entropy=1.0",
        ]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["params"]["correlation"] == pytest.approx(0.5, rel=1e-5)
        assert payload["params"]["capacity_term"] == pytest.approx(0.4, rel=1e-5)

    def test_under_determined_fit_exits_1(self, tmp_path, capsys):
        path = tmp_path / "losses.csv"
        path.write_text("J,loss\n1,1.0\n2,0.9\n4,0.85\n")
        assert main(["fit", "--input", str(path)]) == 1
        assert "fit failed" in capsys.readouterr().err

    def test_missing_input_exits_2(self, tmp_path):
        assert main(["fit", "--input", str(tmp_path / "nope.csv")]) == 2


class TestReportCommand:
    def test_merges_run_directories(self, tmp_path):
        runs = []
        for k, seed in ((2, 1), (4, 2)):
            out = tmp_path / f"run-k{k}"
            assert main([
                "run", "--backend", "toy", "--toy-episodes", "10",
                "--methods", "baseline,vps:2", "--k", str(k),
                "--seed", str(seed), "--out-dir", str(out),
            ]) == 0
            runs.append(str(out))
        report = tmp_path / "report"
        assert main(["report", *runs, "--out", str(report)]) == 0
        rows = read_csv(report / "accuracy.csv")
        assert rows[0][0] == "method"
        assert {r[0] for r in rows[1:]} == {"baseline", "vps:2"}

    def test_rejects_non_run_directory(self, tmp_path):
        assert main(["report", str(tmp_path), "--out", str(tmp_path / "r")]) == 2

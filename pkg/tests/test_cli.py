import json

import pytest

from hybridpar import data_path, load_model
from hybridpar.cli import main, strategy_ribbon
from hybridpar.cluster import GiB, load_cluster
from hybridpar.errors import InfeasibleError
from hybridpar.planner import optimize
from hybridpar.strategy import parse_strategy

MODEL = str(data_path("models", "bert-huge-32.json"))
CLUSTER = str(data_path("clusters", "rtx-titan-8.json"))


def small_cluster(tmp_path, budget_gib=1.0, devices=8):
    path = tmp_path / "cluster.json"
    cfg = load_cluster(CLUSTER).to_dict()
    cfg.update(num_devices=devices, memory_budget_bytes=int(budget_gib * GiB),
               island_size=min(devices, cfg["island_size"]))
    path.write_text(json.dumps(cfg))
    return str(path)


def test_plan_writes_valid_json(tmp_path, capsys):
    out = tmp_path / "plan.json"
    assert main(["plan", "--model", MODEL, "--cluster", CLUSTER, "--out", str(out)]) == 0
    plan = json.loads(out.read_text())
    assert plan["throughput"] > 0
    assert len(plan["layer_strategies"]) == 32
    assert all(s["peak_memory_bytes"] <= 8 * GiB for s in plan["stages"])
    assert "samples/s" in capsys.readouterr().out


def test_missing_cluster_file(tmp_path):
    assert main(["plan", "--model", MODEL, "--cluster", str(tmp_path / "nope.json")]) == 1


def test_malformed_model(tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text('{"layers": [{"id": 0}]}')
    assert main(["plan", "--model", str(bad), "--cluster", CLUSTER]) == 1


def test_oom_exit_code(tmp_path, capsys):
    rc = main(["plan", "--model", MODEL, "--cluster", small_cluster(tmp_path, 0.25)])
    assert rc == 2
    assert "infeasible" in capsys.readouterr().err


def test_bert48_exit_code_matches_library():
    model_path = data_path("models", "bert-huge-48.json")
    try:
        optimize(load_model(model_path), load_cluster(CLUSTER))
        expected = 0
    except InfeasibleError:
        expected = 2
    assert main(["plan", "--model", str(model_path), "--cluster", CLUSTER]) == expected


def test_unknown_subcommand_and_bad_flag():
    assert main(["frobnicate"]) == 1
    assert main(["plan", "--pp-guideline", "flops"]) == 1


@pytest.mark.parametrize("group, prune, count", [(8, True, 11), (8, False, 21), (1, True, 1)])
def test_enumerate(group, prune, count, capsys):
    argv = ["enumerate", "--group-size", str(group)] + ([] if prune else ["--no-prune"])
    assert main(argv) == 0
    data = json.loads(capsys.readouterr().out)
    assert len(data["strategies"]) == count and data["pruned"] == prune


def test_enumerate_rejects_odd_group():
    assert main(["enumerate", "--group-size", "3"]) == 1


def _estimate(tmp_path, cluster, strategy, batch=8):
    out = tmp_path / f"est-{strategy or 'single'}.csv"
    rc = main(["estimate", "--model", MODEL, "--cluster", cluster, "--strategy", strategy,
               "--batch", str(batch), "--csv", str(out)])
    assert rc == 0
    header, *rows = out.read_text().strip().splitlines()
    cols = header.split(",")
    return [dict(zip(cols, r.split(","))) for r in rows]


def test_estimate_single_device(tmp_path):
    rows = _estimate(tmp_path, small_cluster(tmp_path, 64, devices=1), "", batch=2)
    assert len(rows) == 32
    assert all(float(r["comm_ms_unoverlapped"]) == 0 for r in rows)
    assert float(rows[0]["backward_ms"]) == pytest.approx(2 * float(rows[0]["forward_ms"]))


def test_estimate_sdp_comm_is_one_and_a_half_dp(tmp_path):
    dp = _estimate(tmp_path, CLUSTER, "dp:2")
    sdp = _estimate(tmp_path, CLUSTER, "sdp:2")
    for a, b in zip(dp, sdp):
        assert float(b["comm_ms_unoverlapped"]) == pytest.approx(1.5 * float(a["comm_ms_unoverlapped"]))


def test_estimate_rejects_bad_strategy():
    assert main(["estimate", "--model", MODEL, "--cluster", CLUSTER, "--strategy", "pp:2",
                 "--batch", "8"]) == 1
    # batch too small to split over eight replicas
    assert main(["estimate", "--model", MODEL, "--cluster", CLUSTER, "--strategy", "dp:8",
                 "--batch", "4"]) == 1


def test_sweep_single_budget_and_infeasible_row(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--model", MODEL, "--cluster", CLUSTER, "--budgets", "0.25,8",
                 "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("budget_gb,")
    assert float(lines[1].split(",")[-1]) == 0.0
    assert float(lines[2].split(",")[-1]) > 0


def test_sweep_needs_budgets():
    assert main(["sweep", "--model", MODEL, "--cluster", CLUSTER, "--budgets", ""]) == 1


def test_oracle_plan_matches_plan(tmp_path, capsys):
    model = tmp_path / "tiny.json"
    model.write_text(json.dumps({"layers": [
        {"id": i, "param_bytes": 40_000_000, "activation_bytes_per_sample": 30_000_000,
         "fwd_time_per_sample_ms": 1.0} for i in range(3)]}))
    cluster = small_cluster(tmp_path, 1, devices=2)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["plan", "--model", str(model), "--cluster", cluster, "--batches", "2,4",
                 "--out", str(a)]) == 0
    assert main(["oracle-plan", "--model", str(model), "--cluster", cluster, "--batches", "2,4",
                 "--out", str(b)]) == 0
    assert json.loads(a.read_text()) == json.loads(b.read_text())
    assert main(["oracle-plan", "--model", str(model), "--cluster", cluster]) == 1


def test_threads_env(monkeypatch, tmp_path):
    monkeypatch.setenv("PLANNER_THREADS", "2")
    assert main(["plan", "--model", MODEL, "--cluster", CLUSTER, "--out", str(tmp_path / "p.json")]) == 0
    monkeypatch.setenv("PLANNER_THREADS", "many")
    assert main(["plan", "--model", MODEL, "--cluster", CLUSTER]) == 1


def test_ribbon():
    s = [parse_strategy("tp:2,dp:4")] * 2 + [parse_strategy("")]
    assert strategy_ribbon(s) == "[tp:2,dp:4] x2 | [single] x1"

import csv
import json
from dataclasses import replace
from pathlib import Path

import pytest

from patternlab import bench, cli
from patternlab.bench import ExperimentConfig
from patternlab.sim import SimConfig
from patternlab.topology import reference_config

FAST = SimConfig(duration=3.0)


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cfg(tmp_path, **kw):
    kw.setdefault("sim", FAST)
    return ExperimentConfig(out=str(tmp_path), **kw)


# --- run ------------------------------------------------------------------------------------


def test_offloading_sweep_has_108_runs(tmp_path):
    out = bench.run(cfg(tmp_path, pattern="gateway_offloading", sim=SimConfig(duration=1.0)))
    rows = read(out / "summary.csv")
    assert len({r["experiment_id"] for r in rows}) == 3 * 6 * 6
    assert {bench.split_run_id(r["experiment_id"])[0] for r in rows} >= {"gateway_offloading-offload5-p040"}
    manifest = json.loads((out / "experiments.json").read_text())
    assert len(manifest["runs"]) == 108


def test_minimal_sweep_two_runs(tmp_path):
    out = bench.run(cfg(tmp_path, pattern="pipes_and_filters", variants=("separated",), repetitions=1, granularity=1))
    ids = sorted({r["experiment_id"] for r in read(out / "summary.csv")})
    assert ids == ["pipes_and_filters-separated-p000-rep0", "pipes_and_filters-separated-p100-rep0"]


def test_csv_schemas(tmp_path):
    c = cfg(tmp_path, pattern="gateway_aggregation", repetitions=1, granularity=2)
    out = bench.run(c)
    bench.predict(c)
    for name, header in [("summary.csv", bench.SUMMARY_HEADER), ("runs.csv", bench.RUNS_HEADER), ("theoretical.csv", bench.THEORETICAL_HEADER)]:
        text = (out / name).read_text()
        assert text.splitlines()[0] == ",".join(header)
        assert text.endswith("\n") and "\r" not in text
    runs = read(out / "runs.csv")
    scopes = {r["scope"] for r in runs}
    assert {"utilization.s1", "delay.p50", "delay.p99"} <= scopes
    per_run = [r for r in runs if r["experiment_id"].endswith("p050-rep0") and r["scope"] == "utilization.s2"]
    assert len(per_run) == 3  # samples at 0, 1, 2, 3 s give three derivatives
    summary = read(out / "summary.csv")
    assert {r["scope"] for r in summary} == {"completed", "response_time", "throughput", "utilization.gateway", "utilization.s1", "utilization.s2", "utilization.s3"}


def test_rerun_is_byte_identical(tmp_path):
    c = cfg(tmp_path / "a", pattern="gateway_offloading", offloads=(5,), repetitions=2)
    a = bench.run(c)
    b = bench.run(replace(c, out=str(tmp_path / "b")))
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()
    assert (a / "runs.csv").read_bytes() == (b / "runs.csv").read_bytes()


def test_worker_pool_matches_serial(tmp_path):
    c = cfg(tmp_path / "serial", pattern="pipes_and_filters", variants=("joint_2cpu",), repetitions=2, granularity=2)
    a = bench.run(c)
    b = bench.run(replace(c, out=str(tmp_path / "pool"), workers=2))
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()


def test_seed_env_override(tmp_path, monkeypatch):
    c = cfg(tmp_path, pattern="gateway_aggregation")
    monkeypatch.setenv(bench.SEED_ENV, "99")
    assert bench.apply_seed_override(c).sim.seed == 99
    monkeypatch.setenv(bench.SEED_ENV, "x")
    with pytest.raises(bench.ConfigError, match=bench.SEED_ENV):
        bench.apply_seed_override(c)


def test_custom_topology_file(tmp_path):
    path = tmp_path / "pnf.cfg"
    path.write_text(reference_config("pipes_and_filters_joint_1cpu"))
    c = cfg(tmp_path / "o", pattern=str(path), repetitions=1, granularity=1)
    assert [g for g, _ in c.groups()] == ["custom-pnf"]
    out = bench.run(c)
    assert "custom-pnf-p100-rep0" in {r["experiment_id"] for r in read(out / "summary.csv")}


@pytest.mark.parametrize("kw,field", [
    (dict(pattern="nope"), "pattern"),
    (dict(offloads=(12,)), "offloads"),
    (dict(variants=("joint_9cpu",)), "variants"),
    (dict(granularity=0), "granularity"),
    (dict(repetitions=0), "repetitions"),
    (dict(gateway_overhead=-1), "gateway_overhead"),
])
def test_config_errors_name_field(kw, field):
    with pytest.raises(bench.ConfigError, match=field):
        ExperimentConfig(**kw)


def test_config_dict_round_trip():
    c = ExperimentConfig(pattern="gateway_offloading", offloads=(0, 10), sim=SimConfig(users=4))
    assert ExperimentConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c
    with pytest.raises(bench.ConfigError, match="bogus"):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(bench.ConfigError, match="sim"):
        ExperimentConfig.from_dict({"sim": {"duration": -1}})


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        bench.run(cfg(blocker / "sub", pattern="gateway_aggregation", repetitions=1, granularity=1))


# --- predict ---------------------------------------------------------------------------------


def theo(path):
    rows = read(path)
    by_scope = {}
    for r in rows:
        by_scope.setdefault(r["scope"], []).append(r)
    return rows, by_scope


def test_predict_rows_per_scope(tmp_path):
    rows, by_scope = theo(bench.predict(cfg(tmp_path, pattern="gateway_aggregation")))
    assert set(by_scope) == {"response_time", "throughput", "utilization.gateway", "utilization.s1", "utilization.s2", "utilization.s3"}
    assert all(len(v) == 6 for v in by_scope.values())


def test_predict_offload_ten_bottleneck(tmp_path):
    rows, _ = theo(bench.predict(cfg(tmp_path, pattern="gateway_offloading", offloads=(10,))))
    assert {r["bottleneck"] for r in rows} == {"gateway"}


def test_predict_aggregation_ratios(tmp_path):
    rows, _ = theo(bench.predict(cfg(tmp_path, pattern="gateway_aggregation")))
    u = {r["scope"]: float(r["value"]) for r in rows if r["experiment_id"] == "gateway_aggregation-default-p100"}
    assert u["utilization.s1"] / u["utilization.s3"] == pytest.approx(18 / 5)
    assert u["utilization.s2"] / u["utilization.s3"] == pytest.approx(12 / 5)
    assert u["utilization.gateway"] == 0


# --- compare ----------------------------------------------------------------------------------


def test_self_comparison_identity(tmp_path):
    th = bench.predict(cfg(tmp_path, pattern="pipes_and_filters"))
    summary = bench.self_summaries(th, tmp_path / "self")
    comps = bench.compare(th, summary)
    rows = read(tmp_path / "self" / "comparison.csv")
    assert rows
    for r in rows:
        assert float(r["mae"]) == 0.0
        if r["spearman_rho"] != "nan":
            assert float(r["spearman_rho"]) == 1.0
    delay = [r for r in rows if r["scope"] == "response_time"]
    assert {r["experiment_id_group"] for r in delay} == {
        "pipes_and_filters-joint_1cpu", "pipes_and_filters-joint_2cpu", "pipes_and_filters-separated", "pipes_and_filters-pooled"}
    assert any(gc.pooled for gc in comps)
    assert (tmp_path / "self" / "report.md").read_text().startswith("# Theoretical vs experimental comparison")
    plot = read(tmp_path / "self" / "plot_pipes_and_filters-separated.csv")
    assert {r["mix_p"] for r in plot} == {"0", "0.2", "0.4", "0.6", "0.8", "1"}
    assert all(r["theoretical"] == r["experimental"] for r in plot)


def test_compare_missing_mix_named(tmp_path):
    th = bench.predict(cfg(tmp_path, pattern="gateway_aggregation"))
    summary = bench.self_summaries(th, tmp_path / "self")
    lines = summary.read_text().splitlines()
    summary.write_text("\n".join(l for l in lines if "-p060-" not in l) + "\n")
    with pytest.raises(KeyError, match="gateway_aggregation-default-p060"):
        bench.compare(th, summary)


def test_compare_rejects_wrong_header(tmp_path):
    th = bench.predict(cfg(tmp_path, pattern="gateway_aggregation"))
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        bench.compare(th, bad)


# --- replay -----------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def recorded(tmp_path_factory):
    out = tmp_path_factory.mktemp("rec")
    bench.run(ExperimentConfig(pattern="gateway_offloading", offloads=(0, 10), granularity=1, repetitions=2, sim=FAST, out=str(out)))
    return out


def test_replay_every_run(recorded):
    ids = [r["id"] for r in json.loads((recorded / "experiments.json").read_text())["runs"]]
    assert len(ids) == 8
    for rid in ids:
        assert bench.replay(recorded / "runs.csv", rid).completed > 0


def test_replay_tampered_seed(recorded, tmp_path):
    for name in ("summary.csv", "runs.csv", "experiments.json"):
        (tmp_path / name).write_bytes((recorded / name).read_bytes())
    manifest = json.loads((tmp_path / "experiments.json").read_text())
    manifest["runs"][0]["seed"] += 1000
    (tmp_path / "experiments.json").write_text(json.dumps(manifest))
    with pytest.raises(bench.ReplayMismatchError, match=manifest["runs"][0]["id"]):
        bench.replay(tmp_path / "runs.csv", manifest["runs"][0]["id"])


def test_replay_absent_id(recorded):
    with pytest.raises(KeyError, match="not found"):
        bench.replay(recorded, "gateway_offloading-offload5-p000-rep0")


# --- CLI ------------------------------------------------------------------------------------------


def test_cli_end_to_end(tmp_path, capsys):
    out = tmp_path / "cli"
    common = ["--pattern", "pipes_and_filters", "--variant", "separated", "--granularity", "2", "--reps", "1", "--duration", "2", "--out", str(out)]
    assert cli.main(["run", *common]) == 0
    assert cli.main(["predict", *common]) == 0
    assert cli.main(["compare", str(out / "theoretical.csv"), str(out / "summary.csv")]) == 0
    assert (out / "comparison.csv").exists()
    assert cli.main(["replay", str(out / "runs.csv"), "pipes_and_filters-separated-p050-rep0"]) == 0
    assert "replay verified" in capsys.readouterr().out
    assert cli.main(["replay", str(out), "missing-rep0"]) == 2
    assert "not found" in capsys.readouterr().err


def test_cli_report_and_flags(tmp_path):
    out = tmp_path / "rep"
    rc = cli.main(["report", "--pattern", "gateway_offloading", "--offload", "0", "10", "--granularity", "1", "--reps", "1",
                   "--duration", "2", "--users", "4", "--seed", "5", "--dist", "deterministic", "--time-unit", "0.002", "--out", str(out)])
    assert rc == 0
    manifest = json.loads((out / "experiments.json").read_text())
    sim = manifest["config"]["sim"]
    assert (sim["users"], sim["seed"], sim["service_time_dist"], sim["time_unit"]) == (4, 5, "deterministic", 0.002)
    assert manifest["config"]["offloads"] == [0, 10]
    assert (out / "report.md").exists()


def test_cli_config_file_and_env(tmp_path, monkeypatch):
    conf = tmp_path / "exp.json"
    conf.write_text(json.dumps({"pattern": "gateway_aggregation", "granularity": 1, "repetitions": 1, "sim": {"duration": 2, "seed": 3}}))
    monkeypatch.setenv(bench.SEED_ENV, "17")
    assert cli.main(["run", "--config", str(conf), "--out", str(tmp_path / "o")]) == 0
    seeds = {r["seed"] for r in json.loads((tmp_path / "o" / "experiments.json").read_text())["runs"]}
    assert seeds == {17}


def test_cli_bad_flag_value(tmp_path, capsys):
    assert cli.main(["predict", "--pattern", "gateway_offloading", "--offload", "11", "--out", str(tmp_path)]) == 2
    assert "offloads" in capsys.readouterr().err

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from patternlab import topology as T
from patternlab.mva import aggregate_demands
from patternlab.stats import cpu_utilization
from patternlab.sim import SimConfig, repeat_runs, simulate
from patternlab.topology import ServiceSpec, ValidationError
from patternlab.workload import LoadMix

ONE = LoadMix({"r": 1.0})


def single(demand=2.0, capacity=1.0):
    return T._model("single", ("r",), (ServiceSpec("s", capacity, {"r": demand}),), {"r": "s"})


def det(**kw):
    base = dict(duration=100.0, users=1, time_unit=1.0, service_time_dist="deterministic", sample_interval=1.0)
    base.update(kw)
    return SimConfig(**base)


# --- hand-computable cases ---------------------------------------------------------------


def test_lone_job_runs_at_full_rate():
    res = simulate(single(), ONE, det())
    np.testing.assert_allclose(res.end - res.start, 2.0)
    assert res.completed == 50
    assert res.throughput() == 0.5
    assert res.utilization("s") == pytest.approx(1.0)


def test_four_jobs_share_equally():
    # requests finish in batches of four every 8 s; a whole number of batches over the window
    res = simulate(single(), ONE, det(users=4, duration=96))
    np.testing.assert_allclose(res.end - res.start, 8.0)
    assert res.throughput(cut=0.0) == pytest.approx(0.5)


def test_two_cpus_three_jobs():
    res = simulate(single(1.0, capacity=2.0), ONE, det(users=3, duration=30))
    np.testing.assert_allclose(res.end - res.start, 1.5)
    assert res.utilization("s") == pytest.approx(1.0)


def test_two_cpus_one_job_uses_one_cpu():
    res = simulate(single(1.0, capacity=2.0), ONE, det(duration=10))
    np.testing.assert_allclose(res.end - res.start, 1.0)
    assert res.utilization("s") == pytest.approx(0.5)


@pytest.mark.parametrize("overhead,expected", [(0.0, 18.0), (2.0, 20.0)])
def test_fork_join_waits_for_slowest_branch(overhead, expected):
    m = T.build_gateway_aggregation(overhead)
    res = simulate(m, LoadMix.binary(m.labels, 1.0), det(duration=200))
    np.testing.assert_allclose(res.end - res.start, expected)
    # branches run concurrently on separate stations
    assert res.utilization("s2") == pytest.approx(12 / expected, rel=0.02)


def test_sequential_pipeline_adds_stages():
    m = T.build_pipes_and_filters("joint_1cpu")
    res = simulate(m, LoadMix.binary(m.labels, 0.0), det(duration=50))
    np.testing.assert_allclose(res.end - res.start, 8 + 9 + 10)


def test_sample_grid_includes_duration():
    res = simulate(single(), ONE, det(duration=10, sample_interval=3))
    np.testing.assert_allclose(res.cpu_samples["s"][:, 0], [0, 3, 6, 9, 10])


# --- errors --------------------------------------------------------------------------------


def test_invalid_model_rejected():
    bad = T._model("bad", ("r",), (ServiceSpec("s", 0.0, {"r": 1.0}),), {"r": "s"})
    with pytest.raises(ValidationError):
        simulate(bad, ONE, det())


def test_mix_must_match_model():
    with pytest.raises(ValueError, match="mix"):
        simulate(single(), LoadMix({"other": 1.0}), det())


def test_zero_work_type_rejected():
    with pytest.raises(ValueError, match="no work"):
        simulate(single(0.0), ONE, det())


@pytest.mark.parametrize("kw", [dict(duration=0), dict(users=0), dict(time_unit=0), dict(sample_interval=200), dict(warmup_fraction=1.0), dict(service_time_dist="pareto")])
def test_config_domain(kw):
    with pytest.raises(ValueError):
        det(**kw)


# --- repetitions and determinism ------------------------------------------------------------


def short(seed=0, **kw):
    return SimConfig(duration=10.0, seed=seed, **kw)


def test_repeat_runs_seeds():
    m = T.build_gateway_offloading(5)
    mix = LoadMix.binary(m.labels, 0.4)
    runs = repeat_runs(m, mix, short(seed=40), 6)
    assert [r.config.seed for r in runs] == list(range(40, 46))
    assert len({r.end.tobytes() for r in runs}) == 6
    (one,) = repeat_runs(m, mix, short(seed=40), 1)
    np.testing.assert_array_equal(one.end, simulate(m, mix, short(seed=40)).end)
    with pytest.raises(ValueError):
        repeat_runs(m, mix, short(), 0)


def test_bitwise_determinism():
    m = T.build_gateway_aggregation(1.0)
    mix = LoadMix.binary(m.labels, 0.6)
    a, b = simulate(m, mix, short(seed=7)), simulate(m, mix, short(seed=7))
    assert a.delays == b.delays
    for name in a.cpu_samples:
        assert a.cpu_samples[name].tobytes() == b.cpu_samples[name].tobytes()


# --- operational laws on a long run ---------------------------------------------------------------


def test_utilization_law_separated_pipeline():
    m = T.build_pipes_and_filters("separated")
    mix = LoadMix.binary(m.labels, 1.0)
    res = simulate(m, mix, SimConfig(seed=3))
    assert res.completed >= 5000
    X = res.throughput()
    D = aggregate_demands(m, mix, res.config.time_unit).as_dict()
    for name in ("s1a", "s2a", "s3"):
        assert res.utilization(name) == pytest.approx(X * D[name], rel=0.03)
    assert res.utilization("s2a") > 0.95
    for name in ("s1b", "s2b", "s4"):
        assert res.utilization(name) == 0.0
    assert res.config.users == pytest.approx(X * res.mean_delay(), rel=0.03)
    # with the realized demand the law is an accounting identity up to window edges
    for name in m.service_names:
        assert res.utilization(name) == pytest.approx(X * res.measured_demand(name), rel=0.005, abs=1e-12)


def test_deterministic_service_work_is_nominal():
    m = T.build_gateway_offloading(5)
    res = simulate(m, LoadMix.binary(m.labels, 0.5), SimConfig(duration=5, service_time_dist="deterministic"))
    dash = res.types == 0
    np.testing.assert_allclose(res.service_work[dash], [[0.005, 0.015, 0, 0]] * int(dash.sum()))
    np.testing.assert_allclose(res.service_work[~dash], [[0.005, 0, 0.007, 0.010]] * int((~dash).sum()))


# --- invariants ---------------------------------------------------------------------------------

MODELS = T.builtin_models()


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from(sorted(MODELS)),
    st.sampled_from([0.0, 0.2, 0.5, 0.8, 1.0]),
    st.integers(1, 12),
    st.sampled_from(["exponential", "deterministic"]),
    st.integers(0, 2**32),
    st.sampled_from([0.25, 1.0, 1.7]),
)
def test_run_invariants(name, p, users, dist, seed, interval):
    m = MODELS[name]
    cfg = SimConfig(duration=6.0, users=users, service_time_dist=dist, seed=seed, sample_interval=interval)
    res = simulate(m, LoadMix.binary(m.labels, p), cfg)

    assert np.all(res.end > res.start)
    assert np.all(res.end - res.start >= res.critical_work * (1 - 1e-9))
    assert np.all(res.service_work.sum(axis=1) >= res.critical_work * (1 - 1e-9))
    for svc, series in res.cpu_samples.items():
        cap = res.capacity[svc]
        dt = np.diff(series[:, 0])
        du = np.diff(series[:, 1])
        assert np.all(du >= 0)
        assert np.all(du <= cap * dt * (1 + 1e-9) + 1e-12)
        assert np.all(cpu_utilization(series)[:, 1] <= cap + 1e-9)
        busy = series[-1, 1]
        assert busy == pytest.approx(res.delivered[svc], rel=1e-6, abs=1e-12)
    assert np.all(np.diff(res.end) >= 0)  # recorded in completion order


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([0.0, 0.4, 1.0]))
def test_same_seed_same_result(seed, p):
    m = MODELS["pipes_and_filters_joint_2cpu"]
    mix = LoadMix.binary(m.labels, p)
    cfg = SimConfig(duration=3.0, seed=seed)
    a, b = simulate(m, mix, cfg), simulate(m, mix, replace(cfg))
    assert a.delays == b.delays
    assert a.delivered == b.delivered

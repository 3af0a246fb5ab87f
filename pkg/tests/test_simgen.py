import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_sim
from svcforecast.errors import ConfigError, InputError
from svcforecast.simgen import BANDS, RHO_CLAMP, SimConfig, band_config, band_of, gen_topology, get_band, node_latency, run, simulate, sine_profile


@pytest.mark.parametrize("depth,fanout,nodes,edges", [(1, 2, 1, 0), (2, 3, 4, 3), (3, 2, 7, 6)])
def test_topology_counts(depth, fanout, nodes, edges):
    topo = gen_topology(SimConfig(depth=depth, fanout=fanout))
    assert (len(topo.nodes), len(topo.edges)) == (nodes, edges)
    assert topo.root == "svc-0-0"


def test_node_latency_queueing_curve():
    assert node_latency(7.0, 100.0, 0.0, 0.0) == 7.0
    assert node_latency(10.0, 100.0, 50.0, 0.0) == pytest.approx(20.0)
    assert node_latency(10.0, 100.0, 95.0, 0.0) == pytest.approx(200.0)
    assert node_latency(10.0, 100.0, 1e6, 0.0) == pytest.approx(10.0 / (1 - RHO_CLAMP))
    with pytest.raises(InputError):
        node_latency(10.0, 100.0, -1.0, 0.0)


def test_noisy_latency_is_never_negative():
    rng = np.random.default_rng(0)
    assert min(node_latency(5.0, 10.0, 9.0, 3.0, rng) for _ in range(2000)) >= 0.0


def test_chain_sums_latencies_at_zero_load():
    cfg = SimConfig(depth=2, fanout=1, load_profile=((0.0, 0.0),), noise_std_frac=0.0, duration_s=120, tick_s=60)
    sim = simulate(gen_topology(cfg), cfg, base_ms={"svc-0-0": 5.0, "svc-1-0": 10.0})
    root = [e for e in sim.events if e.service_id == "svc-0-0"]
    leaf = [e for e in sim.events if e.service_id == "svc-1-0"]
    assert all(e.response_time_ms == 15.0 for e in root)
    assert all(e.response_time_ms == 10.0 for e in leaf)
    assert all(e.cpu_util == 0.0 for e in sim.events)
    assert sim.calls == []


def test_parallel_fanout_takes_slowest_child_serial_sums():
    kw = dict(depth=2, fanout=2, load_profile=((0.0, 0.0),), noise_std_frac=0.0, duration_s=60, tick_s=60)
    bases = {"svc-0-0": 1.0, "svc-1-0": 4.0, "svc-1-1": 6.0}
    par = simulate(gen_topology(SimConfig(**kw)), SimConfig(**kw), bases)
    ser = simulate(gen_topology(SimConfig(**kw)), SimConfig(serial=True, **kw), bases)
    assert par.events[0].response_time_ms == 7.0
    assert ser.events[0].response_time_ms == 11.0


def test_tick_count_and_calls():
    sim = run(SimConfig(depth=1, duration_s=60, tick_s=10))
    assert len(sim.events) == 6 and sim.calls == []
    sim = run(tiny_sim())
    assert len(sim.calls) == 2 * (7200 // 60)
    assert {c.count for c in sim.calls} == {c.count for c in sim.calls if c.count > 0}


def test_same_seed_same_trace_different_seed_differs():
    a, b, c = run(tiny_sim()), run(tiny_sim()), run(tiny_sim(seed=4))
    assert a.events == b.events and a.calls == b.calls
    assert a.events != c.events


def test_bands():
    assert band_of(800).name == "Low"
    assert band_of(1000).name == "Low"
    assert band_of(1001).name == "Medium"
    assert band_of(2600).name == "High"
    assert band_of(8000).name == "VeryHigh"
    assert band_of(9000).name == "Extreme"
    with pytest.raises(InputError):
        band_of(-1)
    with pytest.raises(ConfigError):
        get_band("Huge")
    for band in BANDS:
        lo, hi = band.sim_span
        assert band_of(lo) is band and band_of(hi) is band


def test_band_config_stays_in_band():
    cfg = band_config(SimConfig(duration_s=7200), get_band("Medium"), period_s=3600)
    rates = [r for _, r in cfg.load_profile]
    assert min(rates) >= 1100 - 1e-9 and max(rates) <= 2400 + 1e-9


def test_sine_profile_shape():
    prof = sine_profile(100, 300, 480, 960, points_per_period=4)
    assert [r for _, r in prof][:5] == pytest.approx([200, 300, 200, 100, 200])


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(depth=0)
    with pytest.raises(ConfigError):
        SimConfig(load_profile=((0, 1), (0, 2)))
    with pytest.raises(ConfigError):
        SimConfig(base_service_time_ms=(10, 5))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.floats(0, 20000), st.integers(0, 2**32))
def test_trace_rows_are_valid(depth, fanout, rps, seed):
    cfg = SimConfig(depth=depth, fanout=fanout, load_profile=((0.0, rps),), duration_s=300, tick_s=60, seed=seed)
    sim = run(cfg)
    assert len(sim.events) == 5 * len(gen_topology(cfg).nodes)
    for e in sim.events:
        assert 0 <= e.cpu_util <= RHO_CLAMP and 0.3 <= e.mem_util <= 0.8
        assert e.response_time_ms >= 0


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.floats(0, 20000), st.integers(0, 2**32), st.booleans())
def test_parent_never_faster_than_children(depth, fanout, rps, seed, serial):
    cfg = SimConfig(depth=depth, fanout=fanout, load_profile=((0.0, rps),), noise_std_frac=0.0, duration_s=180, tick_s=60, seed=seed, serial=serial)
    sim = run(cfg)
    for k in range(cfg.num_ticks):
        rt = {e.service_id: e.response_time_ms for e in sim.events if e.timestamp == k * 60}
        for parent, child in sim.topology.edges:
            assert rt[parent] >= rt[child]

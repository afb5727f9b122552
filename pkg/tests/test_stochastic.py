import math

import numpy as np
import pytest

from wpmec.model import SystemConfig
from wpmec.stochastic import (ARRIVALS, CHANNELS, TOPOLOGY, RandomStream, Topology,
                              generate_topology, grid_positions, mean_uplink_gain,
                              sample_arrivals, sample_channels)


def test_streams_reproducible_and_distinct():
    a = RandomStream(7, 0, CHANNELS).generator().random(5)
    b = RandomStream(7, 0, CHANNELS).generator().random(5)
    assert np.array_equal(a, b)
    for other in (RandomStream(8, 0, CHANNELS), RandomStream(7, 1, CHANNELS),
                  RandomStream(7, 0, ARRIVALS)):
        assert not np.array_equal(a, other.generator().random(5))


def test_topology_reproducible_and_inside_region():
    c = SystemConfig()
    t1 = generate_topology(c, RandomStream(3, 0, TOPOLOGY))
    t2 = generate_topology(c, RandomStream(3, 0, TOPOLOGY))
    assert np.array_equal(t1.wd_positions, t2.wd_positions)
    assert t1.wd_positions.shape == (30, 2) and t1.ap_positions.shape == (5, 2)
    for pos in (t1.wd_positions, t1.ap_positions):
        assert np.all((pos >= 0) & (pos <= c.region_side))
    assert np.all(t1.distances <= c.region_side * math.sqrt(2))
    assert np.all(t1.distances > 0)


def test_single_ap_sits_in_the_centre():
    assert grid_positions(1, 10.0).tolist() == [[5.0, 5.0]]
    g = grid_positions(5, 6.0)
    assert len({tuple(p) for p in g}) == 5


def test_downlink_is_reciprocal_and_scaled():
    c = SystemConfig(n_wd=4, m_ap=3)
    topo = generate_topology(c, RandomStream(0))
    h_up, h_down = sample_channels(topo, c, np.random.default_rng(1))
    np.testing.assert_array_equal(h_down, 2.0 * h_up)
    assert np.all(h_up > 0)


def test_mean_gain_hand_value_and_coverage():
    topo = Topology(np.array([[10.0, 0.0], [50.0, 0.0]]), np.array([[0.0, 0.0]]))
    c = SystemConfig(n_wd=2, m_ap=1)
    assert mean_uplink_gain(topo, c)[0, 0] == pytest.approx(6.25e-7, rel=1e-12)
    c = SystemConfig(n_wd=2, m_ap=1, coverage_radius=20.0)
    g = mean_uplink_gain(topo, c)
    assert g[0, 0] > 0 and g[1, 0] == 0.0
    h_up, h_down = sample_channels(topo, c, np.random.default_rng(0))
    assert h_up[1, 0] == 0.0 and h_down[1, 0] == 0.0
    c = SystemConfig(n_wd=2, m_ap=1, coverage_radius=0.0)
    assert not np.any(sample_channels(topo, c, np.random.default_rng(0))[0])


def test_fading_has_unit_mean_monte_carlo():
    topo = Topology(np.array([[10.0, 0.0]]), np.array([[0.0, 0.0]]))
    c = SystemConfig(n_wd=1, m_ap=1)
    rng = np.random.default_rng(5)
    draws = np.array([sample_channels(topo, c, rng)[0][0, 0] for _ in range(40_000)])
    assert draws.mean() == pytest.approx(6.25e-7, rel=0.02)
    # exponential power gain: variance equals squared mean
    assert draws.std() == pytest.approx(6.25e-7, rel=0.05)


def test_uniform_arrivals_mean_and_range():
    c = SystemConfig(n_wd=4, arrival_rate=[0.0, 1e3, 1e5, 2e5])
    rng = np.random.default_rng(0)
    a = np.array([sample_arrivals(c, rng) for _ in range(20_000)])
    assert np.all(a[:, 0] == 0.0)
    assert np.all((a >= 0) & (a <= 2 * c.arrival_rate))
    np.testing.assert_allclose(a[:, 1:].mean(axis=0), c.arrival_rate[1:], rtol=0.02)


@pytest.mark.parametrize("dist", ["constant", "geometric"])
def test_other_arrival_laws_have_requested_mean(dist):
    c = SystemConfig(n_wd=3, arrival_rate=[0.0, 10.0, 1e5], arrival_dist=dist)
    rng = np.random.default_rng(2)
    a = np.array([sample_arrivals(c, rng) for _ in range(20_000)])
    assert np.all(a[:, 0] == 0.0) and np.all(a >= 0)
    np.testing.assert_allclose(a[:, 1:].mean(axis=0), c.arrival_rate[1:], rtol=0.03)


def test_topology_save_load_round_trip(tmp_path):
    topo = generate_topology(SystemConfig(n_wd=12, m_ap=4), RandomStream(9))
    path = tmp_path / "topo.txt"
    topo.save(path)
    back = Topology.load(path)
    assert np.array_equal(back.wd_positions, topo.wd_positions)
    assert np.array_equal(back.ap_positions, topo.ap_positions)


def test_bad_topology_rejected(tmp_path):
    with pytest.raises(ValueError):
        Topology(np.array([[1.0, 1.0]]), np.array([[1.0, 1.0]]))
    path = tmp_path / "bad.txt"
    path.write_text("wd 0 1.0\n")
    with pytest.raises(ValueError, match=":1:"):
        Topology.load(path)


def test_placement_gives_up_after_repeated_clashes():
    class Stuck:
        def generator(self):
            class G:
                def uniform(self, lo, hi, size):
                    return np.full(size, 0.5)  # always the AP position
            return G()

    c = SystemConfig(n_wd=2, m_ap=1, region_side=1.0)
    with pytest.raises(RuntimeError):
        generate_topology(c, Stuck(), max_attempts=3)

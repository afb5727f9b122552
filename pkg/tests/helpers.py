"""Shared builders for randomized tests."""
from __future__ import annotations

import numpy as np

from wpmec.model import NetworkState, SystemConfig
from wpmec.stochastic import RandomStream, generate_topology, sample_channels


def random_config(rng: np.random.Generator, **overrides) -> SystemConfig:
    kw = dict(
        n_wd=int(rng.integers(1, 11)),
        m_ap=int(rng.integers(1, 6)),
        penalty_v=float(rng.choice([0.0, 0.5, 3.0, 16.0, 100.0])),
        swipt_enabled=bool(rng.random() < 0.7),
        region_side=float(rng.choice([3.0, 6.0, 20.0])),
        p_max=float(rng.choice([1e-3, 0.1, 1.0])),
        p_t_max=float(rng.choice([0.5, 3.0])),
    )
    kw.update(overrides)
    return SystemConfig(**kw)


def random_state(rng: np.random.Generator, config: SystemConfig, t: int = 0) -> NetworkState:
    """Queues and batteries spread over many orders of magnitude, incl. exact 0 / full."""
    n = config.n_wd
    queue = np.where(rng.random(n) < 0.15, 0.0, 10 ** rng.uniform(0.0, 7.5, n))
    level = np.where(rng.random(n) < 0.2, 1.0, 10 ** rng.uniform(-10.0, 0.0, n))
    battery = config.b_max * level
    topo = generate_topology(config, RandomStream(int(rng.integers(2**31)), 0, 0))
    h_up, h_down = sample_channels(topo, config, rng)
    return NetworkState(t, queue, battery, h_up, h_down, np.zeros(n))

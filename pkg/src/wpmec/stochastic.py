"""Seeded randomness: node placement, Rayleigh fading and data arrivals."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import SystemConfig

# stream purposes; kept stable so that seeds stay comparable across versions
TOPOLOGY, CHANNELS, ARRIVALS = 0, 1, 2


@dataclass(frozen=True)
class RandomStream:
    """A reproducible random stream identified by ``(seed, run, purpose)``.

    Two streams with equal identity produce identical draws; distinct
    identities are statistically independent (``SeedSequence`` spawn keys).
    """

    seed: int
    run: int = 0
    purpose: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.run, self.purpose))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True, eq=False)
class Topology:
    wd_positions: np.ndarray
    ap_positions: np.ndarray

    def __post_init__(self):
        for name in ("wd_positions", "ap_positions"):
            a = np.array(getattr(self, name), dtype=float).reshape(-1, 2)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.any(self.distances <= 0):
            raise ValueError("a WD coincides with an AP")

    @property
    def distances(self) -> np.ndarray:
        diff = self.wd_positions[:, None, :] - self.ap_positions[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    def save(self, path) -> None:
        """Write a plain-text table: one ``kind index x y`` row per node."""
        lines = ["kind index x y"]
        for kind, pos in (("wd", self.wd_positions), ("ap", self.ap_positions)):
            lines += [f"{kind} {k} {float(x)!r} {float(y)!r}" for k, (x, y) in enumerate(pos)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Topology":
        nodes = {"wd": {}, "ap": {}}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            parts = line.split()
            if not parts or parts[0].startswith("#") or parts[0] == "kind":
                continue
            if len(parts) != 4 or parts[0] not in nodes:
                raise ValueError(f"{path}:{lineno}: expected 'wd|ap index x y'")
            nodes[parts[0]][int(parts[1])] = (float(parts[2]), float(parts[3]))
        wd = [nodes["wd"][k] for k in sorted(nodes["wd"])]
        ap = [nodes["ap"][k] for k in sorted(nodes["ap"])]
        return cls(np.array(wd), np.array(ap))


def grid_positions(m: int, side: float) -> np.ndarray:
    """Centres of a near-square grid of ``m`` cells covering the region."""
    cols = math.ceil(math.sqrt(m))
    rows = math.ceil(m / cols)
    pos = []
    for k in range(m):
        r, c = divmod(k, cols)
        in_row = cols if r < rows - 1 else m - cols * (rows - 1)
        pos.append(((c + 0.5) * side / in_row, (r + 0.5) * side / rows))
    return np.array(pos)


def generate_topology(config: SystemConfig, stream: RandomStream,
                      max_attempts: int = 100) -> Topology:
    """WDs uniform in the square region, APs on a grid over the same region."""
    side = config.region_side
    if not side > 0:
        raise ValueError("region_side must be > 0")
    aps = grid_positions(config.m_ap, side)
    rng = stream.generator()
    wds = rng.uniform(0.0, side, size=(config.n_wd, 2))
    for _ in range(max_attempts):
        d = np.hypot(*(wds[:, None, :] - aps[None, :, :]).transpose(2, 0, 1))
        clash = np.flatnonzero((d <= 0).any(axis=1))
        if clash.size == 0:
            return Topology(wds, aps)
        wds[clash] = rng.uniform(0.0, side, size=(clash.size, 2))
    raise RuntimeError(f"could not place WDs apart from APs in {max_attempts} attempts")


def _rng(source) -> np.random.Generator:
    return source.generator() if isinstance(source, RandomStream) else source


def mean_uplink_gain(topology: Topology, config: SystemConfig) -> np.ndarray:
    """Large-scale uplink gain theta_U * d^-alpha, zero outside coverage."""
    d = topology.distances
    g = config.theta_u * d ** (-config.path_loss_exp)
    return np.where(d <= config.coverage_radius, g, 0.0)


def sample_channels(topology: Topology, config: SystemConfig,
                    rng) -> tuple[np.ndarray, np.ndarray]:
    """One slot of (h_up, h_down) under Rayleigh fading.

    The small-scale power gain is |h|^2 for h ~ CN(0, 1), i.e. a unit-mean
    exponential draw, independent across links and slots.
    """
    mean = mean_uplink_gain(topology, config)
    fading = _rng(rng).standard_exponential(mean.shape)
    h_up = mean * fading
    return h_up, config.downlink_factor * h_up


def sample_arrivals(config: SystemConfig, rng) -> np.ndarray:
    """Bits arriving at each WD during one slot (mean ``arrival_rate``)."""
    rng = _rng(rng)
    lam = config.arrival_rate
    if config.arrival_dist == "uniform":
        return rng.uniform(0.0, 2.0 * lam)
    if config.arrival_dist == "constant":
        return np.array(lam, dtype=float)
    # geometric number of unit "packets" of lam/4 bits, mean lam
    packet = lam / 4.0
    k = rng.geometric(0.2, size=lam.shape) - 1
    return np.where(lam > 0, k * packet, 0.0)

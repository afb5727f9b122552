"""Domain types and per-slot physics of a wireless-powered MEC network.

All quantities are in SI-style base units: bits, joules, seconds, hertz, watts.
Per-WD arrays have shape ``(n_wd,)``, per-AP arrays ``(m_ap,)`` and link
arrays ``(n_wd, m_ap)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

# absolute feasibility tolerance, in the native unit of each constraint
TOL = 1e-9

LN2 = math.log(2.0)


class InfeasibleDecision(ValueError):
    """Raised when applying a decision would drive a battery or queue negative."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _per_node(value, n: int, name: str) -> np.ndarray:
    a = np.atleast_1d(np.asarray(value, dtype=float))
    if a.shape == (n,):
        return _frozen(a)
    if a.size == 1 or (a.ndim == 1 and a.size > 0 and np.all(a == a[0])):
        # constant arrays are re-broadcast so that resizing a config keeps them
        return _frozen(np.full(n, a.flat[0]))
    raise ValueError(f"{name}: expected a scalar or {n} values, got shape {a.shape}")


PER_WD = ("mu", "kappa", "phi", "overhead", "f_max", "p_max", "b_max", "arrival_rate")
PER_AP = ("p_t_max", "sigma2")


@dataclass(frozen=True, eq=False)
class SystemConfig:
    """Static parameters of the network.

    Defaults are the reference constants where one exists
    (N, M, f_max, B_max, bandwidth, mu, kappa, v, eta, phi, sigma^2, theta_U, V).
    Everything else (slot length, WPT power, offloading power, arrival rate,
    region size, backlog weights) is a documented knob; see README.
    """

    n_wd: int = 30
    m_ap: int = 5
    slot_length: float = 1.0
    bandwidth: float = 1e6
    penalty_v: float = 3.0
    horizon: int = 10_000
    swipt_enabled: bool = True
    eta: float = 8.2e-9

    mu: np.ndarray = 0.51
    kappa: np.ndarray = 1e-28
    phi: np.ndarray = 1000.0
    overhead: np.ndarray = 1.1
    f_max: np.ndarray = 5e8
    p_max: np.ndarray = 0.1
    b_max: np.ndarray = 3e4
    arrival_rate: np.ndarray = 1e5

    p_t_max: np.ndarray = 3.0
    sigma2: np.ndarray = 1e-9

    theta_u: float = 6.25e-4
    path_loss_exp: float = 3.0
    downlink_factor: float = 2.0
    region_side: float = 6.0
    coverage_radius: float = math.inf

    arrival_dist: str = "uniform"
    # weights of the quadratic Lyapunov function L = 1/2 sum(wq Q^2 + wb B^-^2)
    queue_weight: float = 1.25e-11
    battery_weight: float = 2.5e5

    warmup_fraction: float = 0.1

    def __post_init__(self):
        for name in PER_WD:
            object.__setattr__(self, name, _per_node(getattr(self, name), self.n_wd, name))
        for name in PER_AP:
            object.__setattr__(self, name, _per_node(getattr(self, name), self.m_ap, name))
        self.validate()

    def validate(self) -> None:
        problems = []
        if int(self.n_wd) != self.n_wd or self.n_wd < 1:
            problems.append("n_wd must be an integer >= 1")
        if int(self.m_ap) != self.m_ap or self.m_ap < 1:
            problems.append("m_ap must be an integer >= 1")
        if not self.slot_length > 0:
            problems.append("slot_length must be > 0")
        if not self.bandwidth > 0:
            problems.append("bandwidth must be > 0")
        if not self.penalty_v >= 0:
            problems.append("penalty_v must be >= 0")
        if self.horizon < 0:
            problems.append("horizon must be >= 0")
        if not self.eta > 0:
            problems.append("eta must be > 0")
        if not np.all((self.mu > 0) & (self.mu < 1)):
            problems.append("mu must lie in (0, 1)")
        if not np.all(self.overhead > 1):
            problems.append("overhead (v) must be > 1")
        for name in ("kappa", "phi", "f_max", "p_max", "b_max", "p_t_max", "sigma2"):
            if not np.all(getattr(self, name) > 0):
                problems.append(f"{name} must be > 0")
        if not np.all(self.arrival_rate >= 0):
            problems.append("arrival_rate must be >= 0")
        if not (self.theta_u > 0 and self.path_loss_exp > 0 and self.downlink_factor > 0):
            problems.append("channel constants must be > 0")
        if not self.region_side > 0:
            problems.append("region_side must be > 0")
        if not self.coverage_radius >= 0:
            problems.append("coverage_radius must be >= 0")
        if self.arrival_dist not in ("uniform", "constant", "geometric"):
            problems.append(f"unknown arrival_dist {self.arrival_dist!r}")
        if not (self.queue_weight > 0 and self.battery_weight > 0):
            problems.append("backlog weights must be > 0")
        if not 0 <= self.warmup_fraction < 1:
            problems.append("warmup_fraction must lie in [0, 1)")
        if problems:
            raise ValueError("; ".join(problems))

    def replace(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


@dataclass(frozen=True, eq=False)
class NetworkState:
    t: int
    queue: np.ndarray
    battery: np.ndarray
    h_up: np.ndarray
    h_down: np.ndarray
    arrivals: np.ndarray

    def __post_init__(self):
        for name in ("queue", "battery", "h_up", "h_down", "arrivals"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @classmethod
    def initial(cls, config: SystemConfig, h_up, h_down) -> "NetworkState":
        """Cold start: empty queues, full batteries."""
        n = config.n_wd
        return cls(0, np.zeros(n), np.array(config.b_max), h_up, h_down, np.zeros(n))

    def battery_shortage(self, config: SystemConfig) -> np.ndarray:
        return config.b_max - self.battery


@dataclass(frozen=True, eq=False)
class SlotDecision:
    wpt_indicator: np.ndarray
    wpt_power: np.ndarray
    wpt_time: np.ndarray
    offload_indicator: np.ndarray
    offload_time: np.ndarray
    offload_power: np.ndarray
    cpu_freq: np.ndarray
    local_time: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, _frozen(getattr(self, f.name)))

    @classmethod
    def zeros(cls, config: SystemConfig) -> "SlotDecision":
        n, m = config.n_wd, config.m_ap
        return cls(np.zeros(m), np.zeros(m), np.zeros(m), np.zeros((n, m)),
                   np.zeros(n), np.zeros(n), np.zeros(n), np.full(n, config.slot_length))

    def replace(self, **changes) -> "SlotDecision":
        return replace(self, **changes)

    def assigned_ap(self) -> np.ndarray:
        """AP index each WD offloads to, or -1."""
        a = self.offload_indicator
        return np.where(a.any(axis=1), a.argmax(axis=1), -1)

    def identical(self, other: "SlotDecision") -> bool:
        return all(np.array_equal(getattr(self, f.name), getattr(other, f.name))
                   for f in fields(self))


@dataclass(frozen=True, eq=False)
class SlotOutcome:
    e_wpt: np.ndarray
    e_edge: np.ndarray
    e_harvest: np.ndarray
    e_local: np.ndarray
    e_offload: np.ndarray
    d_local: np.ndarray
    d_offload: np.ndarray

    @property
    def ap_energy(self) -> float:
        """Objective contribution of the slot: sum_j E^T_j + E^C_j."""
        return float(self.e_wpt.sum() + self.e_edge.sum())


def harvested_energy(decision: SlotDecision, state: NetworkState,
                     config: SystemConfig, wd: int | None = None):
    """Energy harvested by WD(s) during the slot's WPT phase."""
    broadcast = decision.wpt_indicator * decision.wpt_power * decision.wpt_time
    e = config.mu * (state.h_down @ broadcast)
    return e if wd is None else float(e[wd])


def offload_rate(power, gain, config: SystemConfig, wd, ap):
    """Uplink rate in bits/s for the given transmit power and gain."""
    snr = np.asarray(power, dtype=float) * gain / config.sigma2[ap]
    return config.bandwidth / config.overhead[wd] * np.log2(1.0 + snr)


def slot_outcome(decision: SlotDecision, state: NetworkState, config: SystemConfig) -> SlotOutcome:
    d = decision
    e_wpt = d.wpt_indicator * d.wpt_power * d.wpt_time
    e_harvest = harvested_energy(d, state, config)

    f = d.cpu_freq
    d_local = f * d.local_time / config.phi
    e_local = config.kappa * f ** 3 * d.local_time

    snr = d.offload_power[:, None] * state.h_up / config.sigma2[None, :]
    rate = config.bandwidth / config.overhead[:, None] * np.log2(1.0 + snr)
    d_offload = (d.offload_indicator * rate).sum(axis=1) * d.offload_time
    e_offload = d.offload_power * d.offload_time

    per_bit = config.eta * config.phi * d_offload
    e_edge = d.offload_indicator.T @ per_bit
    return SlotOutcome(e_wpt, e_edge, e_harvest, e_local, e_offload, d_local, d_offload)


class Violation(NamedTuple):
    constraint: str
    index: int
    slack: float  # negative when violated, in the constraint's unit


def _tol(bound) -> np.ndarray:
    return TOL * np.maximum(1.0, np.abs(bound))


def validate_decision(decision: SlotDecision, state: NetworkState,
                      config: SystemConfig) -> list[Violation]:
    """Return every violated constraint of the slot problem (empty if feasible)."""
    d, T = decision, config.slot_length
    report: list[Violation] = []

    def check(name, lhs, rhs):
        lhs = np.asarray(lhs, dtype=float)
        rhs = np.asarray(rhs, dtype=float)
        slack = rhs - lhs
        bad = ~(slack >= -TOL * np.maximum(1.0, np.abs(rhs)))  # also catches NaN
        if bad.any():
            slack = np.broadcast_to(slack, bad.shape).ravel()
            for k in np.flatnonzero(bad.ravel()):
                report.append(Violation(name, int(k), float(slack[k])))

    for name, arr in (("binary_wpt", d.wpt_indicator), ("binary_offload", d.offload_indicator)):
        nonbinary = (arr != 0.0) & (arr != 1.0)
        if nonbinary.any():
            for k in np.flatnonzero(nonbinary.ravel()):
                report.append(Violation(name, int(k), math.nan))

    check("single_wpt", d.wpt_indicator.sum(), 1.0)

    out = slot_outcome(d, state, config)
    check("energy_causality", out.e_local + out.e_offload, state.battery)
    check("data_availability", out.d_local + out.d_offload, state.queue)
    check("single_ap", d.offload_indicator.sum(axis=1), 1.0)

    served = d.offload_indicator.T @ d.offload_time
    wpt_busy = d.wpt_indicator * d.wpt_time
    if config.swipt_enabled:
        check("time_allocation", wpt_busy + served, T)
    else:
        check("time_allocation", wpt_busy.sum() + served, T)

    for name, x, hi in (("wpt_time", d.wpt_time, T), ("wpt_power", d.wpt_power, config.p_t_max),
                        ("offload_time", d.offload_time, T),
                        ("offload_power", d.offload_power, config.p_max),
                        ("cpu_freq", d.cpu_freq, config.f_max),
                        ("local_time", d.local_time, T)):
        check(name + "_max", x, hi)
        check(name + "_min", -x, 0.0)
    return report


def step_state(state: NetworkState, decision: SlotDecision, outcome: SlotOutcome,
               config: SystemConfig, next_h_up, next_h_down, next_arrivals) -> NetworkState:
    """Battery and queue update at the end of a slot.

    ``state.arrivals`` are the bits that arrived during this slot; they join
    the queue after service.
    """
    battery = state.battery - outcome.e_local - outcome.e_offload
    queue = state.queue - outcome.d_local - outcome.d_offload
    if np.any(battery < -_tol(state.battery)):
        i = int(np.argmin(battery))
        raise InfeasibleDecision(f"WD {i}: battery would drop to {battery[i]:.6g} J")
    if np.any(queue < -_tol(state.queue)):
        i = int(np.argmin(queue))
        raise InfeasibleDecision(f"WD {i}: queue would drop to {queue[i]:.6g} bits")
    battery = np.minimum(np.maximum(battery, 0.0) + outcome.e_harvest, config.b_max)
    queue = np.maximum(queue, 0.0) + state.arrivals
    return NetworkState(state.t + 1, queue, battery, next_h_up, next_h_down, next_arrivals)

"""Online drift-plus-penalty scheduler with relax-then-adjust.

Each slot the right-hand side of the drift-plus-penalty bound is minimised
after relaxing the coupling constraints (energy causality, data availability,
TDMA time budget).  The relaxed problem splits into three independent parts:

* WPT selection (linear, solved by inspection),
* local CPU frequency (closed form),
* offloading (non-convex; alternating minimisation between transmit power,
  closed form, and time allocation, an assignment problem).

The relaxed controls are then repaired into a feasible decision by equalising
marginal costs (``adjust``).

Backlogs enter the algorithm through the weighted quadratic Lyapunov function
``L = 1/2 * sum(wq * Q^2 + wb * (B^-)^2)``; with both weights equal to one the
per-slot problem is exactly the unweighted one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import solve_assignment
from .model import (LN2, NetworkState, SlotDecision, SystemConfig, _tol,
                    validate_decision)

AM_MAX_ITER = 100
AM_REL_TOL = 1e-9
BISECT_MAX_ITER = 200


class AdjustFailure(RuntimeError):
    def __init__(self, msg, wd=None, regime=None):
        super().__init__(msg)
        self.wd = wd
        self.regime = regime


class NonMonotoneAm(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class VirtualState:
    queue: np.ndarray      # Q_i, bits
    shortage: np.ndarray   # B^-_i = B^max_i - B_i, joules
    v: float
    queue_weight: float = 1.0
    battery_weight: float = 1.0

    @classmethod
    def from_state(cls, state: NetworkState, config: SystemConfig) -> "VirtualState":
        return cls(np.asarray(state.queue, dtype=float),
                   np.asarray(state.battery_shortage(config), dtype=float),
                   config.penalty_v, config.queue_weight, config.battery_weight)

    @property
    def q(self) -> np.ndarray:
        """Weighted data backlog: the price of one bit in the per-slot problem."""
        return self.queue_weight * self.queue

    @property
    def b(self) -> np.ndarray:
        """Weighted battery shortage: the price of one WD joule."""
        return self.battery_weight * self.shortage

    def lyapunov(self) -> float:
        return 0.5 * float(np.sum(self.queue_weight * self.queue ** 2
                                  + self.battery_weight * self.shortage ** 2))


@dataclass
class AmTrace:
    objective: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


@dataclass
class SlotTrace:
    """Diagnostics of one scheduling call (filled in when passed to ``schedule``)."""

    am: AmTrace | None = None
    regimes: list = field(default_factory=list)
    resplit: dict | None = None
    fallback: bool = False
    failure: str | None = None


# --------------------------------------------------------------------------
# relaxed subproblems

def wpt_coefficients(vs: VirtualState, h_down, config: SystemConfig) -> np.ndarray:
    """c^T_j = V - sum_i b_i mu_i h^D_ij."""
    return vs.v - (vs.b * config.mu) @ h_down


def solve_wpt(vs: VirtualState, h_down, config: SystemConfig):
    m, T = config.m_ap, config.slot_length
    a_t, p_t, tau_t = np.zeros(m), np.zeros(m), np.zeros(m)
    c = wpt_coefficients(vs, h_down, config)
    if np.all(c >= 0):
        return a_t, p_t, tau_t
    j = int(np.argmin(c * config.p_t_max))
    a_t[j], p_t[j], tau_t[j] = 1.0, config.p_t_max[j], T
    return a_t, p_t, tau_t


def solve_local(vs: VirtualState, config: SystemConfig) -> np.ndarray:
    """Minimiser of b*kappa*f^3*T - q*f*T/phi over [0, f_max], per WD."""
    q, b = vs.q, vs.b
    with np.errstate(divide="ignore", invalid="ignore"):
        stationary = np.sqrt(q / (3.0 * config.kappa * config.phi * b))
    f = np.where(b > 0, np.minimum(config.f_max, stationary), config.f_max)
    return np.where(q > 0, f, 0.0)


def marginal_ee_local(f, config: SystemConfig, wd=slice(None)):
    """Energy per extra locally processed bit, 3*kappa*phi*f^2 (J/bit)."""
    return 3.0 * config.kappa[wd] * config.phi[wd] * np.asarray(f) ** 2


def marginal_ee_offload(power, assigned_ap, h_up, config: SystemConfig) -> np.ndarray:
    """Energy per extra offloaded bit (transmission plus edge CPU); inf if not offloading."""
    power = np.asarray(power, dtype=float)
    ap = np.asarray(assigned_ap)
    out = np.full(power.shape, np.inf)
    idx = np.flatnonzero(ap >= 0)
    if idx.size:
        j = ap[idx]
        h = h_up[idx, j]
        with np.errstate(divide="ignore"):
            out[idx] = (config.overhead[idx] * LN2 / config.bandwidth
                        * (config.sigma2[j] / h + power[idx])
                        + config.eta * config.phi[idx])
    return out


def offload_objective(vs: VirtualState, assigned_ap, tau, power, h_up,
                      config: SystemConfig) -> float:
    """Offloading part of the per-slot problem:
    sum_i (V*eta*phi_i - q_i) D^O_i + b_i P_i tau_i."""
    ap = np.asarray(assigned_ap)
    idx = np.flatnonzero(ap >= 0)
    if idx.size == 0:
        return 0.0
    j = ap[idx]
    rate = (config.bandwidth / config.overhead[idx]
            * np.log2(1.0 + power[idx] * h_up[idx, j] / config.sigma2[j]))
    d_off = rate * tau[idx]
    coef = vs.v * config.eta * config.phi[idx] - vs.q[idx]
    return float(np.sum(coef * d_off + vs.b[idx] * power[idx] * tau[idx]))


def am_power_step(vs: VirtualState, assigned_ap, h_up, config: SystemConfig) -> np.ndarray:
    """Optimal transmit power for a fixed time allocation (closed form per WD)."""
    ap = np.asarray(assigned_ap)
    p = np.zeros(config.n_wd)
    idx = np.flatnonzero(ap >= 0)
    if idx.size == 0:
        return p
    j = ap[idx]
    h = h_up[idx, j]
    gain = vs.q[idx] - vs.v * config.eta * config.phi[idx]
    b = vs.b[idx]
    pmax = config.p_max[idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        stationary = (gain * config.bandwidth / (b * config.overhead[idx] * LN2)
                      - config.sigma2[j] / h)
    val = np.where(b > 0, np.clip(stationary, 0.0, pmax), pmax)
    p[idx] = np.where((gain > 0) & (h > 0), val, 0.0)
    return p


def time_step_costs(vs: VirtualState, power, h_up, config: SystemConfig) -> np.ndarray:
    """Cost of giving AP j's whole slot to WD i at the given powers."""
    T = config.slot_length
    rate = (config.bandwidth / config.overhead[:, None]
            * np.log2(1.0 + power[:, None] * h_up / config.sigma2[None, :]))
    coef = vs.v * config.eta * config.phi - vs.q
    return coef[:, None] * rate * T + (vs.b * power * T)[:, None]


def am_time_step(vs: VirtualState, power, h_up, config: SystemConfig):
    """Optimal WD-to-AP assignment for fixed powers; each AP serves at most one WD
    for the whole slot."""
    cost = time_step_costs(vs, power, h_up, config)
    cost = np.where((cost < 0) & (h_up > 0), cost, 0.0)
    ap = np.full(config.n_wd, -1)
    if np.any(cost < 0):
        for i, j in solve_assignment(cost, allow_skip=True).pairs():
            ap[i] = j
    tau = np.where(ap >= 0, config.slot_length, 0.0)
    return ap, tau


def solve_offloading(vs: VirtualState, h_up, config: SystemConfig,
                     max_iter: int = AM_MAX_ITER, rel_tol: float = AM_REL_TOL):
    """Alternating minimisation over (assignment, time) and transmit power.

    Starts from P = P_max.  WDs left unassigned keep their previous candidate
    power for the next assignment step (their power does not enter the
    objective, so monotonicity is unaffected).  Like any block-coordinate
    scheme it stops at a local minimum.
    """
    trace = AmTrace()
    candidate = np.array(config.p_max, dtype=float)
    ap = np.full(config.n_wd, -1)
    tau = np.zeros(config.n_wd)
    power = np.zeros(config.n_wd)
    prev = 0.0  # objective of the empty allocation
    for k in range(max_iter):
        ap, tau = am_time_step(vs, candidate, h_up, config)
        after_time = offload_objective(vs, ap, tau, candidate, h_up, config)
        power = am_power_step(vs, ap, h_up, config)
        value = offload_objective(vs, ap, tau, power, h_up, config)
        trace.objective.append(value)
        trace.iterations = k + 1
        if after_time > prev + 1e-12 or value > after_time + 1e-12:
            raise NonMonotoneAm(f"objective rose at iteration {k + 1}: "
                                f"{prev!r} -> {after_time!r} -> {value!r}")
        if k > 0 and prev - value <= rel_tol * max(abs(prev), 1e-300):
            trace.converged = True
            break
        prev = value
        candidate = np.where(ap >= 0, power, candidate)
    return ap, tau, power, trace


# --------------------------------------------------------------------------
# adjust

class _ControlPath:
    """Local frequency and transmit power of one WD as functions of a common
    marginal energy per bit ``eps``.

    Along the path the marginal efficiencies of local computing and offloading
    are equal wherever neither control is clamped, so moving along it is the
    cheapest way (per extra bit) to raise throughput.  Energy and data are both
    nondecreasing in ``eps``.
    """

    def __init__(self, i, ap, tau, h, config: SystemConfig, local=True, offload=True):
        self.T = config.slot_length
        self.kappa = float(config.kappa[i])
        self.phi = float(config.phi[i])
        self.fmax = float(config.f_max[i]) if local else 0.0
        offloading = offload and ap >= 0 and tau > 0 and h > 0
        self.tau = float(tau) if offloading else 0.0
        self.pmax = float(config.p_max[i]) if offloading else 0.0
        self.h = float(h) if offloading else 0.0
        self.sigma2 = float(config.sigma2[ap]) if offloading else 1.0
        self.rate_scale = config.bandwidth / float(config.overhead[i])
        self.slope = float(config.overhead[i]) * LN2 / config.bandwidth
        self.kphi3 = 3.0 * self.kappa * self.phi
        self.eps_p0 = (self.slope * self.sigma2 / self.h + config.eta * self.phi
                       if offloading else math.inf)
        pts = {0.0}
        if self.fmax > 0:
            pts.add(self.kphi3 * self.fmax ** 2)
        if self.pmax > 0:
            pts.update((self.eps_p0, self.eps_p0 + self.slope * self.pmax))
        self.breakpoints = sorted(pts)

    def f_at(self, eps):
        return min(self.fmax, math.sqrt(eps / self.kphi3)) if self.fmax > 0 else 0.0

    def p_at(self, eps):
        if self.pmax <= 0:
            return 0.0
        return min(self.pmax, max(0.0, (eps - self.eps_p0) / self.slope))

    def energy(self, f, p):
        return self.kappa * f ** 3 * self.T + p * self.tau

    def data(self, f, p):
        d = f * self.T / self.phi
        if self.tau > 0:
            d += self.rate_scale * self.tau * math.log2(1.0 + p * self.h / self.sigma2)
        return d

    def _value(self, kind, eps):
        f, p = self.f_at(eps), self.p_at(eps)
        return self.energy(f, p) if kind == "energy" else self.data(f, p)

    def saturated(self):
        return self.fmax, self.pmax

    def solve(self, kind, target):
        """Controls on the path where energy (or data) equals ``target``; the
        saturated controls if even they stay below it."""
        bps = self.breakpoints
        vals = [self._value(kind, e) for e in bps]
        if target >= vals[-1]:
            return self.saturated()
        if target <= 0:
            return 0.0, 0.0
        k = next(n for n in range(len(bps) - 1) if vals[n + 1] > target)
        lo, hi = bps[k], bps[k + 1]
        mid = 0.5 * (lo + hi)
        f_moves = self.fmax > 0 and mid < self.kphi3 * self.fmax ** 2
        p_moves = self.pmax > 0 and self.eps_p0 < mid < self.eps_p0 + self.slope * self.pmax
        if f_moves and not p_moves:
            p = self.p_at(mid)
            if kind == "energy":
                f = max(0.0, (target - p * self.tau) / (self.kappa * self.T)) ** (1.0 / 3.0)
            else:
                f = max(0.0, target - self.data(0.0, p)) * self.phi / self.T
            return min(f, self.fmax), p
        if p_moves and not f_moves:
            f = self.f_at(mid)
            if kind == "energy":
                p = (target - self.energy(f, 0.0)) / self.tau
            else:
                bits = (target - f * self.T / self.phi) / (self.rate_scale * self.tau)
                p = math.expm1(bits * LN2) * self.sigma2 / self.h
            return f, min(max(p, 0.0), self.pmax)
        # both controls move together: bisection on the common marginal level
        for _ in range(BISECT_MAX_ITER):
            m = 0.5 * (lo + hi)
            if m <= lo or m >= hi:
                break
            if self._value(kind, m) <= target:
                lo = m
            else:
                hi = m
        return self.f_at(lo), self.p_at(lo)


def _wd_inputs(decision: SlotDecision, h_up):
    ap = decision.assigned_ap()
    h = np.where(ap >= 0, h_up[np.arange(len(ap)), np.maximum(ap, 0)], 0.0)
    return ap, h


def _raw_usage(i, f, p, tau, ap, h, config: SystemConfig):
    T = config.slot_length
    e = config.kappa[i] * f ** 3 * T + p * tau
    d = f * T / config.phi[i]
    if ap >= 0 and tau > 0:
        d += (config.bandwidth / config.overhead[i] * tau
              * math.log2(1.0 + p * h / config.sigma2[ap]))
    return float(e), float(d)


def adjust_wd(i, f, p, tau, ap, h, battery, queue, config: SystemConfig,
              local=True, offload=True):
    """Repair one WD's (f, P) at a given offloading time.

    Returns ``(f, p, regime)`` with regime ``"none"`` (raw controls already
    respect energy causality and data availability), ``"energy"`` or ``"data"``
    (the binding constraint, now tight).
    """
    e_raw, d_raw = _raw_usage(i, f, p, tau, ap, h, config)
    if e_raw <= battery + _tol(battery) and d_raw <= queue + _tol(queue):
        return f, p, "none"
    path = _ControlPath(i, ap, tau, h, config, local, offload)
    f_d, p_d = path.solve("data", queue)
    if path.energy(f_d, p_d) > battery:
        f_e, p_e = path.solve("energy", battery)
        return f_e, p_e, "energy"
    return f_d, p_d, "data"


def _marginal_time_cost(vs, i, p, ap, h, config):
    """d/dtau_i of (V eta phi_i - q_i) D^O_i + b_i P_i tau_i at fixed P_i."""
    if ap < 0 or h <= 0:
        return 0.0
    rate = (config.bandwidth / config.overhead[i]
            * math.log2(1.0 + p * h / config.sigma2[ap]))
    return float((vs.v * config.eta * config.phi[i] - vs.q[i]) * rate + vs.b[i] * p)


def _resplit_time(raw: SlotDecision, state: NetworkState, vs: VirtualState,
                  config: SystemConfig, local, offload):
    """Share the slot between the WPT broadcast and the offloading WDs that
    conflict with it by equalising marginal costs.  Returns (tau_T, tau) or
    None when there is no conflict."""
    T = config.slot_length
    active = np.flatnonzero(raw.wpt_indicator > 0)
    if active.size == 0 or raw.wpt_time[active[0]] <= 0:
        return None
    j_star = int(active[0])
    ap, h = _wd_inputs(raw, state.h_up)
    offl = (ap >= 0) & (raw.offload_time > 0)
    coupled = np.flatnonzero(offl & (ap == j_star)) if config.swipt_enabled \
        else np.flatnonzero(offl)
    if coupled.size == 0:
        return None
    if raw.wpt_time[j_star] + raw.offload_time[coupled].max() <= T + _tol(T):
        return None

    wpt_cost = float(wpt_coefficients(vs, state.h_down, config)[j_star]
                     * raw.wpt_power[j_star])

    def excess(x):
        # derivative of the slot objective w.r.t. the WPT time x
        total = wpt_cost
        for i in coupled:
            t_i = T - x
            _, p, _ = adjust_wd(i, raw.cpu_freq[i], raw.offload_power[i], t_i, ap[i], h[i],
                                state.battery[i], state.queue[i], config, local, offload)
            total -= _marginal_time_cost(vs, i, p, ap[i], h[i], config)
        return total

    grid = [excess(T * k / 8.0) for k in range(9)]
    scale = max(1e-300, max(abs(g) for g in grid))
    if any(b < a - 1e-9 * scale for a, b in zip(grid, grid[1:])):
        raise AdjustFailure("marginal cost of offloading time is not monotone",
                            wd=int(coupled[0]), regime="time")
    if grid[0] >= 0:
        x = 0.0
    elif grid[-1] <= 0:
        x = T
    else:
        k = next(n for n in range(8) if grid[n + 1] > 0)
        lo, hi = T * k / 8.0, T * (k + 1) / 8.0
        for _ in range(BISECT_MAX_ITER):
            m = 0.5 * (lo + hi)
            if m <= lo or m >= hi or hi - lo <= 1e-12 * T:
                break
            if excess(m) <= 0:
                lo = m
            else:
                hi = m
        x = hi
    tau = np.array(raw.offload_time)
    tau[coupled] = T - x
    tau_t = np.array(raw.wpt_time)
    tau_t[j_star] = x
    return tau_t, tau, {"ap": j_star, "wds": coupled.tolist(), "wpt_time": x}


def adjust(raw: SlotDecision, state: NetworkState, vs: VirtualState, config: SystemConfig,
           local: bool = True, offload: bool = True, trace: SlotTrace | None = None
           ) -> SlotDecision:
    """Turn a relaxed decision into one satisfying every slot constraint.

    The raw decision must already respect the single-broadcaster, single-AP and
    box constraints.  Raises ``AdjustFailure`` if no consistent repair exists.
    """
    wpt_indicator = np.array(raw.wpt_indicator)
    wpt_power = np.array(raw.wpt_power)
    wpt_time = np.array(raw.wpt_time)
    tau = np.array(raw.offload_time)

    split = _resplit_time(raw, state, vs, config, local, offload)
    if split is not None:
        wpt_time, tau, info = split
        if trace is not None:
            trace.resplit = info
        idle = wpt_time <= 0
        wpt_indicator[idle] = 0.0
        wpt_power[idle] = 0.0
        wpt_time[idle] = 0.0

    ap, h = _wd_inputs(raw, state.h_up)
    f = np.array(raw.cpu_freq)
    p = np.array(raw.offload_power)
    a = np.array(raw.offload_indicator)
    regimes = []
    changed = split is not None
    for i in range(config.n_wd):
        fi, pi, regime = adjust_wd(i, f[i], p[i], tau[i], ap[i], h[i],
                                   state.battery[i], state.queue[i], config, local, offload)
        regimes.append(regime)
        if regime == "none":
            continue
        changed = True
        f[i], p[i] = fi, pi
        if ap[i] >= 0 and (pi <= 0 or tau[i] <= 0):
            a[i] = 0.0
            p[i] = 0.0
            tau[i] = 0.0
    if trace is not None:
        trace.regimes = regimes
    if not changed:
        return raw
    # a zero offloading time frees the AP; drop its indicator as well
    drop = (a.sum(axis=1) > 0) & (tau <= 0)
    a[drop] = 0.0
    p[drop] = 0.0
    return SlotDecision(wpt_indicator, wpt_power, wpt_time, a, tau, p, f, raw.local_time)


def fallback_decision(raw: SlotDecision, state: NetworkState, config: SystemConfig) -> SlotDecision:
    """Scale WPT time, offloading times and CPU frequencies down together until
    the decision is feasible (the zero decision always is)."""
    s = 1.0
    for _ in range(64):
        cand = raw.replace(wpt_time=raw.wpt_time * s, offload_time=raw.offload_time * s,
                           cpu_freq=raw.cpu_freq * s)
        if not validate_decision(cand, state, config):
            return cand
        s *= 0.5
    return SlotDecision.zeros(config)


def _safe(raw, state, vs, config, local, offload, trace):
    try:
        dec = adjust(raw, state, vs, config, local, offload, trace)
        if not validate_decision(dec, state, config):
            return dec
        reason = "adjusted decision failed validation"
    except AdjustFailure as exc:
        reason = str(exc)
    if trace is not None:
        trace.fallback = True
        trace.failure = reason
    return fallback_decision(raw, state, config)


def schedule(state: NetworkState, config: SystemConfig,
             trace: SlotTrace | None = None) -> SlotDecision:
    """Drift-plus-penalty decision for one slot (proposed scheme)."""
    vs = VirtualState.from_state(state, config)
    a_t, p_t, tau_t = solve_wpt(vs, state.h_down, config)
    f = solve_local(vs, config)
    ap, tau, p, am = solve_offloading(vs, state.h_up, config)
    if trace is not None:
        trace.am = am
    a = np.zeros((config.n_wd, config.m_ap))
    on = ap >= 0
    a[np.flatnonzero(on), ap[on]] = 1.0
    raw = SlotDecision(a_t, p_t, tau_t, a, tau, p, f, np.full(config.n_wd, config.slot_length))
    return _safe(raw, state, vs, config, True, True, trace)


def dpp_surrogate(decision: SlotDecision, state: NetworkState, config: SystemConfig,
                  outcome=None) -> float:
    """Right-hand side of the drift-plus-penalty bound without its constant and
    the (decision-independent) arrival term."""
    from .model import slot_outcome
    vs = VirtualState.from_state(state, config)
    out = outcome or slot_outcome(decision, state, config)
    served = out.d_local + out.d_offload
    net_energy = out.e_harvest - out.e_local - out.e_offload
    return float(-np.sum(vs.q * served) - np.sum(vs.b * net_energy)
                 + vs.v * out.ap_energy)

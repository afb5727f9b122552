"""Comparison schemes: local computation only (LCO) and full offloading (FO).

Both minimise the same per-slot drift-plus-penalty problem as the proposed
scheduler, with the other group of computation variables forced to zero.
"""
from __future__ import annotations

import numpy as np

from .model import NetworkState, SlotDecision, SystemConfig
from .scheduler import (SlotTrace, VirtualState, _safe, solve_local, solve_offloading,
                        solve_wpt)


def schedule_lco(state: NetworkState, config: SystemConfig,
                 trace: SlotTrace | None = None) -> SlotDecision:
    vs = VirtualState.from_state(state, config)
    a_t, p_t, tau_t = solve_wpt(vs, state.h_down, config)
    f = solve_local(vs, config)
    n, m = config.n_wd, config.m_ap
    raw = SlotDecision(a_t, p_t, tau_t, np.zeros((n, m)), np.zeros(n), np.zeros(n), f,
                       np.full(n, config.slot_length))
    return _safe(raw, state, vs, config, True, False, trace)


def schedule_fo(state: NetworkState, config: SystemConfig,
                trace: SlotTrace | None = None) -> SlotDecision:
    vs = VirtualState.from_state(state, config)
    a_t, p_t, tau_t = solve_wpt(vs, state.h_down, config)
    ap, tau, p, am = solve_offloading(vs, state.h_up, config)
    if trace is not None:
        trace.am = am
    n, m = config.n_wd, config.m_ap
    a = np.zeros((n, m))
    on = ap >= 0
    a[np.flatnonzero(on), ap[on]] = 1.0
    raw = SlotDecision(a_t, p_t, tau_t, a, tau, p, np.zeros(n), np.full(n, config.slot_length))
    return _safe(raw, state, vs, config, False, True, trace)

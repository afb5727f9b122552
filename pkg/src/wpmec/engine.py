"""Slot-by-slot simulation driver and run metrics."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .benchmarks import schedule_fo, schedule_lco
from .model import (NetworkState, SlotDecision, SystemConfig, slot_outcome, step_state,
                    validate_decision)
from .scheduler import SlotTrace, schedule
from .stochastic import (ARRIVALS, CHANNELS, TOPOLOGY, RandomStream, Topology,
                         generate_topology, sample_arrivals, sample_channels)

SCHEDULERS: dict[str, Callable] = {
    "proposed": schedule,
    "lco": schedule_lco,
    "fo": schedule_fo,
}

DELAY_ESTIMATOR = "little"


@dataclass(eq=False)
class MetricsRecord:
    scheduler: str
    seed: int
    horizon: int
    warmup: int
    # per slot
    ap_energy: np.ndarray
    wpt_energy: np.ndarray
    edge_energy: np.ndarray
    total_queue: np.ndarray      # sum_i Q_i(t) at the start of slot t
    mean_battery: np.ndarray
    arrivals: np.ndarray         # sum_i A_i(t)
    local_bits: np.ndarray
    offloaded_bits: np.ndarray
    fallback: np.ndarray
    violations: np.ndarray
    wd_local_energy: np.ndarray  # (H, N)
    wd_offload_energy: np.ndarray
    wd_harvested: np.ndarray
    wd_battery: np.ndarray       # (H + 1, N), battery at the start of each slot and after the last
    # summary (over slots [warmup, H))
    avg_ap_energy: float = 0.0
    avg_delay: float | None = None
    avg_queue: float = 0.0
    fifo_delay: float | None = None
    stable: bool = True
    stability_ratio: float = 1.0
    queue_growth: float = 0.0
    fallback_rate: float = 0.0
    extra: dict = field(default_factory=dict)

    def window(self, name: str) -> np.ndarray:
        return getattr(self, name)[self.warmup:]

    def summary(self) -> dict:
        return {
            "avg_ap_energy_J_per_slot": self.avg_ap_energy,
            "avg_delay_slots": self.avg_delay,
            "avg_queue_bits": self.avg_queue,
            "stable": self.stable,
            "adjust_fallback_rate": self.fallback_rate,
        }


class Stability(NamedTuple):
    stable: bool
    ratio: float
    growth: float


def _mean(x) -> float:
    x = np.asarray(x, dtype=float)
    return math.fsum(x) / x.size if x.size else 0.0


def average_delay(record: MetricsRecord, config: SystemConfig) -> float | None:
    """Little's-law delay in slots: mean total backlog over total arrival rate."""
    lam = float(np.sum(config.arrival_rate))
    if lam <= 0:
        return None
    return _mean(record.window("total_queue")) / lam


def stability_check(record, arrivals=None, max_ratio: float = 2.0,
                    max_growth: float = 0.05) -> Stability:
    """Compare the mean backlog of the last 10% of slots with the middle 10%.

    ``growth`` is the least-squares slope of the backlog over the second half
    of the run as a fraction of the mean arrivals per slot; linear build-up
    (which keeps the ratio below 2) is caught by it.
    """
    if isinstance(record, MetricsRecord):
        q, arr = record.total_queue, record.arrivals
    else:
        q = np.asarray(record, dtype=float)
        arr = None if arrivals is None else np.asarray(arrivals, dtype=float)
    h = q.size
    if h < 10:
        raise ValueError("stability check needs a longer trace")
    middle = _mean(q[int(0.45 * h):int(0.55 * h)])
    last = _mean(q[int(0.9 * h):])
    if middle > 0:
        ratio = last / middle
    else:
        ratio = 1.0 if last <= 0 else math.inf
    half = q[h // 2:]
    t = np.arange(half.size, dtype=float)
    slope = np.polyfit(t, half, 1)[0] if half.size > 1 else 0.0
    rate = _mean(arr) if arr is not None else 0.0
    if rate > 0:
        growth = float(slope / rate)
    else:
        growth = 0.0 if slope <= 0 else math.inf
    stable = ratio <= max_ratio and growth <= max_growth
    return Stability(bool(stable), float(ratio), growth)


class _FifoTagger:
    """Per-bit sojourn times under FIFO service of each WD's queue."""

    def __init__(self, n):
        self.queues = [deque() for _ in range(n)]
        self.bit_slots = 0.0
        self.bits = 0.0

    def serve(self, t, served, count: bool):
        for i, amount in enumerate(served):
            dq = self.queues[i]
            while amount > 0 and dq:
                s, b = dq[0]
                take = min(b, amount)
                if count:
                    self.bit_slots += take * (t - s)
                    self.bits += take
                amount -= take
                if take >= b:
                    dq.popleft()
                else:
                    dq[0] = (s, b - take)

    def arrive(self, t, arrivals):
        for i, a in enumerate(arrivals):
            if a > 0:
                self.queues[i].append((t, float(a)))

    def mean(self):
        return self.bit_slots / self.bits if self.bits > 0 else None


def _decision_json(t, decision: SlotDecision, trace: SlotTrace) -> str:
    am = trace.am
    return json.dumps({
        "t": t,
        "wpt_ap": int(np.argmax(decision.wpt_indicator)) if decision.wpt_indicator.any() else None,
        "wpt_time": float(decision.wpt_time.sum()),
        "assigned_ap": decision.assigned_ap().tolist(),
        "offload_time": decision.offload_time.tolist(),
        "offload_power": decision.offload_power.tolist(),
        "cpu_freq": decision.cpu_freq.tolist(),
        "am_objective": am.objective if am else None,
        "am_converged": am.converged if am else None,
        "regimes": trace.regimes,
        "resplit": trace.resplit,
        "fallback": trace.fallback,
        "failure": trace.failure,
    })


def run(config: SystemConfig, scheduler: str = "proposed", seed: int = 0,
        topology: Topology | None = None, run_id: int = 0, trace_file=None,
        validate: bool = True) -> MetricsRecord:
    """Simulate ``config.horizon`` slots from empty queues and full batteries.

    Channels and arrivals depend only on ``(seed, run_id)``, so different
    schedulers run on the same realisation.
    """
    fn = SCHEDULERS[scheduler]
    n, H = config.n_wd, int(config.horizon)
    if topology is None:
        topology = generate_topology(config, RandomStream(seed, run_id, TOPOLOGY))
    ch_rng = RandomStream(seed, run_id, CHANNELS).generator()
    ar_rng = RandomStream(seed, run_id, ARRIVALS).generator()

    per_slot = {k: np.zeros(H) for k in ("ap_energy", "wpt_energy", "edge_energy",
                                         "total_queue", "mean_battery", "arrivals",
                                         "local_bits", "offloaded_bits", "fallback",
                                         "violations")}
    wd = {k: np.zeros((H, n)) for k in ("wd_local_energy", "wd_offload_energy", "wd_harvested")}
    battery = np.zeros((H + 1, n))
    warmup = int(config.warmup_fraction * H)
    fifo = _FifoTagger(n)

    h_up, h_down = sample_channels(topology, config, ch_rng)
    state = NetworkState(0, np.zeros(n), np.array(config.b_max), h_up, h_down,
                         sample_arrivals(config, ar_rng))
    for t in range(H):
        trace = SlotTrace()
        decision = fn(state, config, trace)
        out = slot_outcome(decision, state, config)
        if validate:
            per_slot["violations"][t] = len(validate_decision(decision, state, config))
        per_slot["ap_energy"][t] = out.ap_energy
        per_slot["wpt_energy"][t] = out.e_wpt.sum()
        per_slot["edge_energy"][t] = out.e_edge.sum()
        per_slot["total_queue"][t] = state.queue.sum()
        per_slot["mean_battery"][t] = state.battery.mean()
        per_slot["arrivals"][t] = state.arrivals.sum()
        per_slot["local_bits"][t] = out.d_local.sum()
        per_slot["offloaded_bits"][t] = out.d_offload.sum()
        per_slot["fallback"][t] = trace.fallback
        wd["wd_local_energy"][t] = out.e_local
        wd["wd_offload_energy"][t] = out.e_offload
        wd["wd_harvested"][t] = out.e_harvest
        battery[t] = state.battery
        if trace_file is not None:
            trace_file.write(_decision_json(t, decision, trace) + "\n")

        fifo.serve(t, out.d_local + out.d_offload, count=t >= warmup)
        fifo.arrive(t, state.arrivals)
        h_up, h_down = sample_channels(topology, config, ch_rng)
        state = step_state(state, decision, out, config, h_up, h_down,
                           sample_arrivals(config, ar_rng))
    battery[H] = state.battery

    rec = MetricsRecord(scheduler, seed, H, warmup, **per_slot, **wd, wd_battery=battery)
    if H > 0:
        rec.avg_ap_energy = _mean(rec.window("ap_energy"))
        rec.avg_queue = _mean(rec.window("total_queue"))
        rec.avg_delay = average_delay(rec, config)
        rec.fifo_delay = fifo.mean()
        rec.fallback_rate = _mean(rec.fallback)
        if H >= 10:
            rec.stable, rec.stability_ratio, rec.queue_growth = stability_check(rec)
    else:
        rec.avg_delay = average_delay(rec, config)
    rec.extra["delay_estimator"] = DELAY_ESTIMATOR
    return rec

"""Online energy-aware scheduling for wireless-powered mobile edge computing."""
from .assignment import Assignment, solve_assignment
from .benchmarks import schedule_fo, schedule_lco
from .engine import MetricsRecord, average_delay, run, stability_check
from .model import (InfeasibleDecision, NetworkState, SlotDecision, SlotOutcome, SystemConfig,
                    slot_outcome, step_state, validate_decision)
from .scheduler import AdjustFailure, NonMonotoneAm, adjust, schedule
from .stochastic import RandomStream, Topology, generate_topology

__version__ = "0.1.0"

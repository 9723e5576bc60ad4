"""Deterministic traces, baseline policies and oracle-verified replay."""

from .generators import (
    CacheTraceParams,
    LsmTraceParams,
    WtTraceParams,
    gen_cache_trace,
    gen_lsm_trace,
    gen_wt_trace,
)
from .policies import POLICIES, baseline_policies, make_placement
from .replay import ReplayMetrics, Testbed, crash_sweep, random_crash_points, replay, replay_multi
from .trace import TraceOp, payload, read_trace, write_trace

__all__ = [
    "CacheTraceParams", "LsmTraceParams", "WtTraceParams", "gen_cache_trace", "gen_lsm_trace",
    "gen_wt_trace", "POLICIES", "baseline_policies", "make_placement", "ReplayMetrics", "Testbed",
    "crash_sweep", "random_crash_points", "replay", "replay_multi", "TraceOp", "payload",
    "read_trace", "write_trace",
]

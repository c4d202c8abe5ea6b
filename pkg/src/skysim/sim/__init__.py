from .engine import SimConfig, SimError, SimReport, Simulator, run
from .ledger import AuditResult, CostLedger, audit
from .oracles import (
    MAX_BRUTE_FORCE_GETS,
    OracleError,
    adversarial_ratio,
    adversary,
    brute_force_optimal,
    replay_fixed_ttl,
    stream_from_trace,
)

__all__ = [
    "AuditResult", "CostLedger", "MAX_BRUTE_FORCE_GETS", "OracleError", "SimConfig", "SimError",
    "SimReport", "Simulator", "adversarial_ratio", "adversary", "audit", "brute_force_optimal",
    "replay_fixed_ttl", "run", "stream_from_trace",
]

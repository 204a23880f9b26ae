"""Consensusless payments with checkpoint settlement and dynamic validator sets.

Payments are certified by a Byzantine quorum of validators without ordering
them (``fastpath``); checkpoints settle executed payments and carry
membership changes (``settlement``, ``reconfig``).  ``simnet`` runs scenarios
on a seeded partial-synchrony network, ``checker`` audits the resulting
traces and ``explore`` enumerates delivery orders of small scenarios.
"""

from .checker import Auditor, Verdict, audit, check_all
from .domain import (
    Certificate,
    CheckpointPayload,
    Configuration,
    ReconfigRequest,
    Transaction,
    canonical_encode,
    quorum_params,
)
from .explore import ExploreConfig, ExploreResult, explore, replay
from .simnet import RunResult, Scenario, Simulation, load_scenario, parse_scenario

__version__ = "0.1.0"

__all__ = [
    "Auditor",
    "Certificate",
    "CheckpointPayload",
    "Configuration",
    "ExploreConfig",
    "ExploreResult",
    "ReconfigRequest",
    "RunResult",
    "Scenario",
    "Simulation",
    "Transaction",
    "Verdict",
    "audit",
    "canonical_encode",
    "check_all",
    "explore",
    "load_scenario",
    "parse_scenario",
    "quorum_params",
    "replay",
]

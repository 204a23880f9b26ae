import json
from pathlib import Path

import pytest

from pdcc.crypto import KeyDirectory, derive_keypair
from pdcc.domain import Configuration
from pdcc.simnet import load_scenario, parse_scenario
from pdcc.state import ValidatorState

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
GOLDEN = Path(__file__).resolve().parent / "golden"


def scenario(name: str, **kw):
    return load_scenario(SCENARIOS / f"{name}.json", **kw)


def scenario_data(name: str) -> dict:
    return json.loads((SCENARIOS / f"{name}.json").read_text())


def variant(name: str, **changes):
    """A scenario from ``name`` with top-level fields replaced."""
    data = scenario_data(name)
    data.update(changes)
    return parse_scenario(data, f"{name}-variant")


class Cluster:
    """In-process validators sharing one key directory, for protocol-level tests."""

    def __init__(self, n: int = 4, accounts=None, extra: int = 0, mutations=frozenset()):
        ids = list(range(n + extra))
        self.keys = {i: derive_keypair(str(i)) for i in ids}
        self.directory = KeyDirectory(self.keys)
        self.genesis = Configuration(0, tuple(range(n)))
        accounts = accounts if accounts is not None else {"alice": 100, "bob": 50, "carol": 0}
        self.states = [ValidatorState.create(i, self.keys[i], self.directory, self.genesis,
                                             accounts, mutations) for i in ids]

    def __getitem__(self, i) -> ValidatorState:
        return self.states[i]

    @property
    def members(self):
        return [s for s in self.states if s.vid in self.genesis]


@pytest.fixture
def cluster():
    return Cluster()


def run_slot(voters, slot_owner=None, learners=()):
    """Drive one slot to delivery on ``voters`` (correct, fully connected).

    Returns the deliveries in voter order.  Learners receive the votes and
    the final checkpoint too.
    """
    from pdcc.settlement import (coordinator, deliver_checkpoint, handle_proposal,
                                 propose_checkpoint, record_commit, record_prepare)

    v0 = voters[0]
    owner = slot_owner or next(v for v in voters
                               if v.vid == coordinator(v0.config, v0.slot, 0))
    prop = propose_checkpoint(owner, owner.slot)
    prepares = [handle_proposal(v, prop) for v in voters]
    commits = []
    for v in voters:
        for p in prepares:
            c = record_prepare(v, p)
            if c is not None:
                commits.append(c)
    out = []
    for v in list(voters) + list(learners):
        proof = None
        for c in commits:
            proof = record_commit(v, c) or proof
        assert proof is not None, f"validator {v.vid} gathered no commit proof"
        out.append(deliver_checkpoint(v, prop.payload, proof, prop.certs))
    return out

"""Mutable per-validator state shared by the fastpath, settlement and reconfig modules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .crypto import KeyDirectory, KeyPair
from .domain import (
    Certificate,
    ConfigHistoryEntry,
    Configuration,
    ValidatorId,
    canonical_encode,
    digest,
    genesis_entry,
)

# Test-only protocol mutations used to show the checkers are not vacuous.
NO_EPOCH_CHECK = "no-epoch-check"
NO_LOCKED_VALUE = "no-locked-value"
NO_LEARNER_GATE = "no-learner-gate"
MUTATIONS = frozenset({NO_EPOCH_CHECK, NO_LOCKED_VALUE, NO_LEARNER_GATE})


@dataclass
class SlotState:
    slot: int
    attempt: int = 0
    proposed: set = field(default_factory=set)  # attempts this node proposed in
    prepare_lock: dict = field(default_factory=dict)  # attempt -> payload hash voted
    # highest prepare certificate: (attempt, payload_hash, votes)
    prepared: Optional[tuple] = None
    prepare_votes: dict = field(default_factory=dict)  # (attempt, hash) -> {vid: sig}
    commit_votes: dict = field(default_factory=dict)  # hash -> {vid: sig}
    committed: set = field(default_factory=set)  # hashes this node sent COMMIT for
    proposals: dict = field(default_factory=dict)  # hash -> (payload, certs)
    attempt_changes: dict = field(default_factory=dict)  # attempt -> {vid: AttemptChange}
    sent_attempt_change: set = field(default_factory=set)
    delivered: Optional[tuple] = None  # (payload, proof)
    fetching: bool = False

    def fingerprint(self) -> tuple:
        return (
            self.slot,
            self.attempt,
            tuple(sorted(self.proposed)),
            tuple(sorted(self.prepare_lock.items())),
            None if self.prepared is None else self.prepared[:2],
            tuple(sorted((k, tuple(sorted(v))) for k, v in self.prepare_votes.items())),
            tuple(sorted((k, tuple(sorted(v))) for k, v in self.commit_votes.items())),
            tuple(sorted(self.committed)),
            tuple(sorted(self.proposals)),
            tuple(sorted((k, tuple(sorted(v))) for k, v in self.attempt_changes.items())),
            None if self.delivered is None else self.delivered[0].digest,
        )


@dataclass
class ValidatorState:
    vid: ValidatorId
    keys: KeyPair
    directory: KeyDirectory
    genesis: Configuration
    config: Configuration
    ch: list  # list[ConfigHistoryEntry], CH[0] is genesis
    accounts: dict  # live table: account -> (balance, next_nonce)
    ckpt_accounts: dict  # table as of the latest delivered checkpoint
    mutations: frozenset = frozenset()

    configs: dict = field(default_factory=dict)  # epoch -> Configuration
    ch_payloads: dict = field(default_factory=dict)  # epoch c -> payload P_c justifying CH[c+1]
    locks: dict = field(default_factory=dict)  # (account, nonce) -> Transaction
    executed: dict = field(default_factory=dict)  # (account, nonce) -> tx digest
    certs: dict = field(default_factory=dict)  # cert digest -> Certificate (all known)
    pending: dict = field(default_factory=dict)  # (account, nonce) -> Certificate
    buffered: dict = field(default_factory=dict)  # (account, nonce) -> Certificate

    slot: int = 0  # next undelivered slot of the installed configuration
    slots: dict = field(default_factory=dict)  # slot -> SlotState
    latest: Optional[tuple] = None  # (payload, proof) of last delivered checkpoint
    delivered_log: dict = field(default_factory=dict)  # (epoch, slot) -> payload hash
    future: list = field(default_factory=list)  # buffered messages for later epochs

    reconfig_signed: dict = field(default_factory=dict)  # epoch -> ReconfigRequest signed
    reconfig_cert: Optional[Certificate] = None
    # (payload, local proof) of a delivered reconfiguration awaiting its agreed proof
    finalizing: Optional[tuple] = None
    temp: set = field(default_factory=set)  # learner set (Temp)
    halted: bool = False

    @classmethod
    def create(cls, vid: ValidatorId, keys: KeyPair, directory: KeyDirectory,
               genesis: Configuration, accounts: dict, mutations=frozenset()) -> "ValidatorState":
        table = {a: (int(b), 0) for a, b in accounts.items()}
        st = cls(vid, keys, directory, genesis, genesis, [genesis_entry(genesis, table)],
                 dict(table), dict(table), frozenset(mutations))
        st.configs[genesis.index] = genesis
        return st

    @property
    def installed_index(self) -> int:
        return self.config.index

    @property
    def is_member(self) -> bool:
        return self.vid in self.config and not self.halted

    def slot_state(self, slot: int) -> SlotState:
        st = self.slots.get(slot)
        if st is None:
            st = self.slots[slot] = SlotState(slot)
        return st

    def ckpt_digest(self) -> bytes:
        return self.latest[0].state_digest if self.latest else self.ch[0].payload_hash

    def last_entry(self) -> ConfigHistoryEntry:
        return self.ch[-1]

    def summary_digest(self) -> bytes:
        # trace annotation only: repr of sorted primitives is deterministic and cheap
        return digest(repr((
            self.config.index,
            self.slot,
            len(self.executed),
            len(self.locks),
            len(self.pending),
            len(self.buffered),
            tuple(sorted(self.temp)),
            self.halted,
            tuple(sorted(self.accounts.items())),
        )).encode())

    def fingerprint(self) -> tuple:
        return (
            self.vid,
            self.config.encoded,
            tuple(e.digest for e in self.ch),
            tuple(sorted(self.accounts.items())),
            tuple(sorted(self.ckpt_accounts.items())),
            tuple(sorted((k, v.digest) for k, v in self.locks.items())),
            tuple(sorted(self.executed.items())),
            tuple(sorted(self.pending)),
            tuple(sorted(self.buffered)),
            self.slot,
            tuple(sorted((k, v.fingerprint()) for k, v in self.slots.items())),
            tuple(sorted(self.delivered_log.items())),
            len(self.future),
            tuple(sorted((k, v.digest) for k, v in self.reconfig_signed.items())),
            None if self.reconfig_cert is None else self.reconfig_cert.digest,
            None if self.finalizing is None else self.finalizing[0].digest,
            tuple(sorted(self.temp)),
            self.halted,
        )

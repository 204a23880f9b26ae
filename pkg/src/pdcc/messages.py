"""Network messages exchanged by validators and clients.

Messages are frozen records, so their canonical encoding (and digest, used
in trace records) is computed once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .domain import (
    Certificate,
    CheckpointPayload,
    CommitProof,
    ConfigHistoryEntry,
    ReconfigRequest,
    Record,
    Transaction,
    register,
)


@dataclass(frozen=True)
class TransferOrder(Record):
    tx: Transaction
    config_index: int
    prev_cert: Optional[Certificate] = None


@dataclass(frozen=True)
class TransferVote(Record):
    tx: Transaction
    config_index: int
    signer: int
    signature: bytes


@dataclass(frozen=True)
class Confirmation(Record):
    cert: Certificate


@dataclass(frozen=True)
class Rejection(Record):
    """Negative reply; carries the sender's CH entries newer than ``known_index``."""

    reason: str
    subject: bytes
    installed: int
    ch_tail: tuple[ConfigHistoryEntry, ...] = ()
    link_payloads: tuple[CheckpointPayload, ...] = ()


@dataclass(frozen=True)
class ReconfigOrder(Record):
    request: ReconfigRequest


@dataclass(frozen=True)
class ReconfigVote(Record):
    request: ReconfigRequest
    signer: int
    signature: bytes


@dataclass(frozen=True)
class ReconfigCertMsg(Record):
    cert: Certificate


@dataclass(frozen=True)
class AttemptChange(Record):
    config_index: int
    slot: int
    attempt: int
    prepared_hash: Optional[bytes]
    prepared_attempt: Optional[int]
    prepared_votes: tuple[tuple[int, bytes], ...]
    prepared_payload: Optional[CheckpointPayload]
    prepared_certs: tuple[Certificate, ...]
    signer: int
    signature: bytes


@dataclass(frozen=True)
class Propose(Record):
    config_index: int
    slot: int
    attempt: int
    payload: CheckpointPayload
    certs: tuple[Certificate, ...]
    justification: tuple[AttemptChange, ...]
    proposer: int
    signature: bytes


@dataclass(frozen=True)
class Prepare(Record):
    config_index: int
    slot: int
    attempt: int
    payload_hash: bytes
    signer: int
    signature: bytes


@dataclass(frozen=True)
class Commit(Record):
    config_index: int
    slot: int
    payload_hash: bytes
    signer: int
    signature: bytes


@dataclass(frozen=True)
class CheckpointDelivery(Record):
    payload: CheckpointPayload
    proof: CommitProof
    certs: tuple[Certificate, ...]


@dataclass(frozen=True)
class PayloadRequest(Record):
    config_index: int
    slot: int
    payload_hash: bytes


@dataclass(frozen=True)
class SnapshotRequest(Record):
    requester: int


SETTLEMENT_MESSAGES = (Propose, Prepare, Commit, AttemptChange, CheckpointDelivery, PayloadRequest)

for _cls in (TransferOrder, TransferVote, Confirmation, Rejection, ReconfigOrder, ReconfigVote,
             ReconfigCertMsg, AttemptChange, Propose, Prepare, Commit, CheckpointDelivery,
             PayloadRequest, SnapshotRequest):
    register(_cls)

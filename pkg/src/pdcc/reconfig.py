"""Certified membership change: requests, installation, history, learners, state transfer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .crypto import (
    KeyDirectory,
    certificate_message,
    commit_message,
    sign,
    valid_quorum,
    verify_certificate,
)
from .domain import (
    Certificate,
    CheckpointPayload,
    CommitProof,
    ConfigHistoryEntry,
    Configuration,
    ReconfigProposal,
    ReconfigRequest,
    Record,
    ValidatorId,
    accounts_tuple,
    register,
    state_digest,
)
from .errors import (
    CertificateInvalid,
    ConflictingReconfig,
    InvalidItem,
    NotAuthorized,
    NotMember,
    PolicyViolation,
    ProposalInvalid,
    SnapshotRejected,
    WrongConfiguration,
    WrongTransition,
)
from .state import NO_LEARNER_GATE, ValidatorState


def create_reconfig_request(current: int, next_members: Iterable[ValidatorId]) -> ReconfigRequest:
    return ReconfigRequest(current, tuple(next_members))


def check_policy(config: Configuration, req: ReconfigRequest) -> None:
    if req.current_index != config.index:
        raise WrongConfiguration(f"request for epoch {req.current_index}, installed {config.index}")
    if tuple(req.next_members) == tuple(config.members):
        raise PolicyViolation("membership change is a no-op")


def sign_reconfig(v: ValidatorState, req: ReconfigRequest) -> bytes:
    """Sign ``(c, reconfig)``; at most one distinct request per epoch."""
    if not v.is_member:
        raise NotMember(f"validator {v.vid} is not in configuration {v.config.index}")
    check_policy(v.config, req)
    prior = v.reconfig_signed.get(req.current_index)
    if prior is not None and prior.digest != req.digest:
        raise ConflictingReconfig(f"already signed a different request in epoch {req.current_index}")
    v.reconfig_signed[req.current_index] = req
    return sign(v.keys, certificate_message(req.current_index, req))


def build_reconfig_proposal(config: Configuration, cert: Certificate, sd: bytes,
                            directory: KeyDirectory) -> ReconfigProposal:
    if not isinstance(cert.payload, ReconfigRequest) or cert.payload.current_index != config.index:
        raise CertificateInvalid("certificate does not carry a request for this epoch")
    if not verify_certificate(config, cert, directory):
        raise CertificateInvalid("reconfiguration certificate does not verify")
    req = cert.payload
    return ReconfigProposal(config.index, config.index + 1, req.next_members, cert, sd)


def validate_reconfig_proposal(v: ValidatorState, rp: ReconfigProposal) -> None:
    """Raises :class:`InvalidItem` unless ``rp`` is a valid c -> c+1 transition for ``v``."""
    if rp.from_index != v.config.index:
        raise InvalidItem(f"reconfiguration from stale epoch {rp.from_index}")
    if not rp.well_formed():
        raise InvalidItem("malformed reconfiguration proposal")
    if not verify_certificate(v.config, rp.request_cert, v.directory):
        raise InvalidItem("reconfiguration certificate does not verify")
    if tuple(rp.next_members) == tuple(v.config.members):
        raise InvalidItem("no-op membership change")
    if rp.proposer_state_digest != v.ckpt_digest():
        raise InvalidItem("proposal is not pinned to the latest committed checkpoint")


def on_observe_reconfig_cert(v: ValidatorState, cert: Certificate) -> set:
    """Record a valid reconfiguration certificate; returns the newly added learners."""
    if not isinstance(cert.payload, ReconfigRequest) or cert.config_index != v.config.index:
        return set()
    if not verify_certificate(v.config, cert, v.directory):
        return set()
    if v.reconfig_cert is None:
        v.reconfig_cert = cert
    joiners = set(cert.payload.next_members) - set(v.config.members)
    added = joiners - v.temp
    v.temp |= joiners
    return added


def install_configuration(v: ValidatorState, payload: CheckpointPayload,
                          proof: CommitProof) -> ConfigHistoryEntry:
    """Append CH[c+1] and switch to the next configuration."""
    rp = payload.reconfig
    if rp is None or not rp.well_formed():
        raise ProposalInvalid("payload carries no valid reconfiguration proposal")
    if rp.from_index != v.config.index:
        raise WrongTransition(f"transition from {rp.from_index}, installed {v.config.index}")
    entry = ConfigHistoryEntry(rp.to_index, tuple(rp.next_members), payload.digest, proof)
    v.ch.append(entry)
    v.ch_payloads[rp.from_index] = payload
    new = Configuration(rp.to_index, rp.next_members)
    v.configs[new.index] = new
    v.config = new
    v.slot = 0
    v.slots = {}
    v.temp.clear()
    v.reconfig_cert = None
    return entry


def learner_gate(v: ValidatorState, signer: ValidatorId) -> bool:
    """Only members of the installed configuration are counted toward quorums."""
    if NO_LEARNER_GATE in v.mutations:
        return signer in v.directory
    return signer in v.config


# ---------------------------------------------------------------------------
# state transfer


@register
@dataclass(frozen=True)
class Snapshot(Record):
    ch_prefix: tuple[ConfigHistoryEntry, ...]
    link_payloads: tuple[CheckpointPayload, ...]  # P_i justifying CH[i+1]
    latest_payload: Optional[CheckpointPayload]
    latest_proof: Optional[CommitProof]
    accounts: tuple[tuple[str, int, int], ...]

    def account_table(self) -> dict:
        return {a: (b, n) for a, b, n in self.accounts}


@register
@dataclass(frozen=True)
class SnapshotResponse(Record):
    snapshot: Snapshot


def serve_snapshot(v: ValidatorState, requester: ValidatorId) -> Snapshot:
    if requester not in v.temp and requester not in v.config:
        raise NotAuthorized(f"{requester} is neither a learner nor a member")
    payload, proof = v.latest if v.latest else (None, None)
    links = tuple(v.ch_payloads[i] for i in range(len(v.ch) - 1))
    return Snapshot(tuple(v.ch), links, payload, proof, accounts_tuple(v.ckpt_accounts))


def verify_link(prev: Configuration, entry: ConfigHistoryEntry, payload: CheckpointPayload,
                directory: KeyDirectory) -> Optional[str]:
    """Why ``entry`` is not a valid successor of ``prev`` (None when it is)."""
    if entry.new_index != prev.index + 1:
        return "index gap"
    proof = entry.proof
    if proof is None:
        return "missing commit proof"
    if payload.digest != entry.payload_hash or proof.payload_hash != entry.payload_hash:
        return "payload hash mismatch"
    if proof.config_index != prev.index or payload.config_index != prev.index:
        return "proof epoch mismatch"
    if not valid_quorum(prev, commit_message(prev.index, proof.slot, proof.payload_hash),
                        proof.signatures, directory):
        return "commit proof does not verify"
    rp = payload.reconfig
    if rp is None or not rp.well_formed() or rp.from_index != prev.index:
        return "payload carries no transition"
    if tuple(rp.next_members) != tuple(entry.new_members):
        return "members differ from committed proposal"
    if not verify_certificate(prev, rp.request_cert, directory):
        return "reconfiguration certificate does not verify"
    return None


def verify_ch_extension(known: Configuration, entries: Iterable[ConfigHistoryEntry],
                        payloads: Iterable[CheckpointPayload],
                        directory: KeyDirectory) -> list[Configuration]:
    """Verify CH entries extending ``known``; returns the new configurations in order."""
    out = []
    cur = known
    for entry, payload in zip(entries, payloads):
        if entry.new_index <= cur.index:
            continue
        why = verify_link(cur, entry, payload, directory)
        if why:
            raise SnapshotRejected(entry.new_index, why)
        cur = entry.configuration
        out.append(cur)
    return out


def verify_snapshot(genesis: Configuration, snap: Snapshot, directory: KeyDirectory) -> bool:
    """Accept a snapshot or raise :class:`SnapshotRejected` naming the first bad link."""
    ch = snap.ch_prefix
    if not ch or ch[0].new_index != genesis.index or tuple(ch[0].new_members) != genesis.members \
            or ch[0].proof is not None:
        raise SnapshotRejected(0, "genesis mismatch")
    if len(snap.link_payloads) != len(ch) - 1:
        raise SnapshotRejected(len(snap.link_payloads) + 1, "missing link payload")
    for i in range(1, len(ch)):
        why = verify_link(ch[i - 1].configuration, ch[i], snap.link_payloads[i - 1], directory)
        if why:
            raise SnapshotRejected(i, why)
    final = ch[-1]
    table = snap.account_table()
    if snap.latest_payload is None or snap.latest_proof is None:
        if len(ch) != 1 or snap.latest_proof is not None or snap.latest_payload is not None:
            raise SnapshotRejected(len(ch), "missing latest checkpoint")
        if state_digest(table) != ch[0].payload_hash:
            raise SnapshotRejected(0, "DigestMismatch")
        return True
    payload, proof = snap.latest_payload, snap.latest_proof
    epoch = payload.config_index
    ordinary = epoch == final.new_index
    justifying = (epoch == final.new_index - 1 and payload.prior_proof is not None
                  and payload.prior_proof.payload_hash == final.payload_hash)
    if not (ordinary or justifying):
        raise SnapshotRejected(len(ch), "latest checkpoint not under the recorded history")
    cfg = ch[epoch].configuration
    if proof.payload_hash != payload.digest or proof.config_index != epoch or proof.slot != payload.slot:
        raise SnapshotRejected(len(ch), "latest proof does not match payload")
    if not valid_quorum(cfg, commit_message(epoch, proof.slot, proof.payload_hash),
                        proof.signatures, directory):
        raise SnapshotRejected(len(ch), "latest proof does not verify")
    if state_digest(table) != payload.state_digest:
        raise SnapshotRejected(len(ch), "DigestMismatch")
    return True


def snapshot_position(snap: Snapshot) -> tuple[int, int]:
    """(installed epoch, next slot) a node adopting ``snap`` would be at."""
    epoch = snap.ch_prefix[-1].new_index
    latest = snap.latest_payload
    if latest is None or latest.config_index != epoch:
        return epoch, 0
    return epoch, latest.slot + 1


def adopt_snapshot(v: ValidatorState, snap: Snapshot) -> bool:
    """Adopt a verified snapshot if it is ahead of ``v``; returns whether it was adopted."""
    if snapshot_position(snap) <= (v.config.index, v.slot):
        return False
    v.ch = list(snap.ch_prefix)
    v.ch_payloads = dict(enumerate(snap.link_payloads))
    v.configs = {e.new_index: e.configuration for e in v.ch}
    v.config = v.ch[-1].configuration
    v.latest = (snap.latest_payload, snap.latest_proof) if snap.latest_payload else None
    table = snap.account_table()
    v.ckpt_accounts = dict(table)
    v.accounts = dict(table)
    v.buffered.clear()
    v.pending.clear()
    v.slot = snapshot_position(snap)[1]
    v.slots = {}
    v.finalizing = None
    if v.latest:
        p = v.latest[0]
        v.delivered_log[(p.config_index, p.slot)] = p.digest
        if p.reconfig is not None and p.config_index == v.config.index:
            v.finalizing = v.latest
    return True

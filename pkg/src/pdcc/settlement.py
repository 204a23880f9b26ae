"""Slot-based checkpoint agreement within one configuration.

Each slot runs PREPARE/COMMIT voting over the hash of a checkpoint payload.
The coordinator of ``(slot, attempt)`` is ``members[(slot + attempt) % n]``.
When an attempt times out, validators exchange attempt-change messages
carrying their highest prepare certificate; the next coordinator must
re-propose the highest certified payload, and voters check this against the
quorum of attempt-changes attached to the proposal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .crypto import (
    attempt_message,
    certificate_message,
    commit_message,
    dedup_votes,
    prepare_message,
    propose_message,
    sign,
    valid_quorum,
)
from .domain import (
    Certificate,
    CheckpointPayload,
    CommitProof,
    ConfigHistoryEntry,
    Configuration,
    ReconfigProposal,
    Transaction,
    canonical_encode,
    state_digest,
)
from .errors import (
    AlreadyPrepared,
    ConflictingTransaction,
    DigestMismatch,
    InvalidItem,
    InvalidJustification,
    NotCoordinator,
    NotMember,
    PreviousSlotUndelivered,
    ProofInvalid,
    QuorumInvalid,
    SlotGap,
    WrongConfiguration,
)
from .fastpath import apply_batch, drain_buffer
from .messages import AttemptChange, Commit, Prepare, Propose
from .reconfig import (
    build_reconfig_proposal,
    install_configuration,
    learner_gate,
    validate_reconfig_proposal,
)
from .state import NO_LEARNER_GATE, NO_LOCKED_VALUE, ValidatorState


def coordinator(config: Configuration, slot: int, attempt: int) -> int:
    return config.members[(slot + attempt) % config.n]


def quorum_ok(v: ValidatorState, config: Configuration, message: bytes, votes) -> bool:
    if NO_LEARNER_GATE in v.mutations:
        signers = {s for s, sig in votes if v.directory.verify(s, message, sig)}
        return len(signers) >= config.q
    return valid_quorum(config, message, votes, v.directory)


def _check_slot(v: ValidatorState, config_index: int, slot: int) -> None:
    if config_index != v.config.index:
        raise WrongConfiguration(f"message for epoch {config_index}, installed {v.config.index}")
    if slot != v.slot:
        raise SlotGap(f"message for slot {slot}, expecting {v.slot}")


# ---------------------------------------------------------------------------
# payload construction and validation


def _fresh_payload(v: ValidatorState, slot: int, attempt: int):
    certs = [v.pending[k] for k in sorted(v.pending)]
    table = apply_batch(v.ckpt_accounts, [c.payload for c in certs])
    items: list = [c.digest for c in certs]
    prior = None
    if v.finalizing is not None:
        prior = v.finalizing[1]
    elif v.reconfig_cert is not None and v.reconfig_cert.config_index == v.config.index:
        items.append(build_reconfig_proposal(v.config, v.reconfig_cert, v.ckpt_digest(), v.directory))
    admin = canonical_encode(("coordinator", v.vid, attempt))
    payload = CheckpointPayload(v.config.index, slot, tuple(items), state_digest(table), admin, prior)
    return payload, tuple(certs)


def _check_prior_proof(v: ValidatorState, payload: CheckpointPayload) -> None:
    if v.finalizing is None:
        if payload.prior_proof is not None:
            raise InvalidItem("no reconfiguration awaits a proof")
        return
    committed = v.finalizing[0]
    proof = payload.prior_proof
    if proof is None:
        raise InvalidItem("payload must carry the proof of the committed reconfiguration")
    if (proof.config_index, proof.slot, proof.payload_hash) != \
            (committed.config_index, committed.slot, committed.digest):
        raise InvalidItem("prior proof is for another payload")
    cm = commit_message(proof.config_index, proof.slot, proof.payload_hash)
    if not valid_quorum(v.config, cm, proof.signatures, v.directory):
        raise InvalidItem("prior proof does not verify")


def validate_payload(v: ValidatorState, payload: CheckpointPayload,
                     certs: Iterable[Certificate]) -> dict:
    """Check every item of ``payload``; returns the resulting checkpoint account table."""
    _check_prior_proof(v, payload)
    by_digest = {c.digest: c for c in certs}
    txs: list[Transaction] = []
    keys = []
    reconfigs = 0
    for pos, item in enumerate(payload.items):
        if isinstance(item, ReconfigProposal):
            reconfigs += 1
            if v.finalizing is not None:
                raise InvalidItem("a reconfiguration is already committed in this epoch")
            if reconfigs > 1 or pos != len(payload.items) - 1:
                raise InvalidItem("at most one reconfiguration proposal, placed last")
            validate_reconfig_proposal(v, item)
            continue
        cert = by_digest.get(item)
        if cert is None or not isinstance(cert.payload, Transaction):
            raise InvalidItem("missing certificate for item")
        cfg = v.configs.get(cert.config_index)
        if cfg is None or cert.config_index > v.config.index:
            raise InvalidItem(f"item certified under unknown epoch {cert.config_index}")
        if not valid_quorum(cfg, certificate_message(cert.config_index, cert.payload),
                            cert.signatures, v.directory):
            raise InvalidItem("item certificate does not verify")
        keys.append((cert.payload.sender, cert.payload.nonce))
        txs.append(cert.payload)
    if keys != sorted(keys) or len(set(keys)) != len(keys):
        raise InvalidItem("items must be unique and ordered by (sender, nonce)")
    table = apply_batch(v.ckpt_accounts, txs)
    if state_digest(table) != payload.state_digest:
        raise DigestMismatch("state digest does not match recomputation")
    return table


def highest_prepared(justification: Iterable[AttemptChange]) -> Optional[AttemptChange]:
    best = None
    for ac in justification:
        if ac.prepared_hash is None:
            continue
        if best is None or (ac.prepared_attempt, ac.prepared_hash) > (best.prepared_attempt, best.prepared_hash):
            best = ac
    return best


def valid_attempt_change(v: ValidatorState, ac: AttemptChange) -> bool:
    c = v.config.index
    if ac.config_index != c or ac.signer not in v.config:
        return False
    msg = attempt_message(c, ac.slot, ac.attempt, ac.prepared_hash, ac.prepared_attempt)
    if not v.directory.verify(ac.signer, msg, ac.signature):
        return False
    if ac.prepared_hash is None:
        return ac.prepared_attempt is None and ac.prepared_payload is None
    if ac.prepared_payload is None or ac.prepared_payload.digest != ac.prepared_hash:
        return False
    if ac.prepared_attempt is None or ac.prepared_attempt >= ac.attempt:
        return False
    return valid_quorum(v.config, prepare_message(c, ac.slot, ac.prepared_attempt, ac.prepared_hash),
                        ac.prepared_votes, v.directory)


def check_justification(v: ValidatorState, prop: Propose) -> None:
    if prop.attempt == 0:
        return
    senders = set()
    for ac in prop.justification:
        if ac.slot != prop.slot or ac.attempt != prop.attempt or not valid_attempt_change(v, ac):
            raise InvalidJustification("invalid attempt-change in justification")
        senders.add(ac.signer)
    if len(senders) < v.config.q:
        raise InvalidJustification("justification lacks a quorum")
    if NO_LOCKED_VALUE in v.mutations:
        return
    locked = highest_prepared(prop.justification)
    if locked is not None and locked.prepared_hash != prop.payload.digest:
        raise InvalidJustification("proposal ignores the highest prepared payload")


# ---------------------------------------------------------------------------
# operations


def propose_checkpoint(v: ValidatorState, slot: int,
                       justification: tuple[AttemptChange, ...] = ()) -> Propose:
    """Build this coordinator's proposal for ``slot`` at its current attempt."""
    if not v.is_member:
        raise NotMember(f"validator {v.vid} is not a member")
    if slot > v.slot:
        raise PreviousSlotUndelivered(f"slot {v.slot} not delivered yet")
    if slot < v.slot:
        raise SlotGap(f"slot {slot} already delivered")
    st = v.slot_state(slot)
    attempt = st.attempt
    if coordinator(v.config, slot, attempt) != v.vid:
        raise NotCoordinator(f"{v.vid} does not coordinate slot {slot} attempt {attempt}")
    locked = None if NO_LOCKED_VALUE in v.mutations else highest_prepared(justification)
    if locked is not None:
        payload, certs = locked.prepared_payload, locked.prepared_certs
    else:
        payload, certs = _fresh_payload(v, slot, attempt)
    sig = sign(v.keys, propose_message(v.config.index, slot, attempt, payload.digest))
    st.proposed.add(attempt)
    return Propose(v.config.index, slot, attempt, payload, certs, tuple(justification), v.vid, sig)


def check_proposal(v: ValidatorState, prop: Propose) -> dict:
    """Validate a proposal without voting (learners use this too)."""
    _check_slot(v, prop.config_index, prop.slot)
    if prop.proposer != coordinator(v.config, prop.slot, prop.attempt):
        raise NotCoordinator(f"{prop.proposer} is not the coordinator")
    msg = propose_message(prop.config_index, prop.slot, prop.attempt, prop.payload.digest)
    if not v.directory.verify(prop.proposer, msg, prop.signature):
        raise InvalidItem("bad proposer signature")
    if prop.payload.config_index != prop.config_index or prop.payload.slot != prop.slot:
        raise InvalidItem("payload tagged with another slot")
    check_justification(v, prop)
    table = validate_payload(v, prop.payload, prop.certs)
    v.slot_state(prop.slot).proposals[prop.payload.digest] = (prop.payload, tuple(prop.certs))
    return table


def handle_proposal(v: ValidatorState, prop: Propose) -> Prepare:
    if not v.is_member:
        raise NotMember(f"validator {v.vid} is not a member")
    _check_slot(v, prop.config_index, prop.slot)
    st = v.slot_state(prop.slot)
    if prop.attempt < st.attempt:
        raise AlreadyPrepared(f"attempt {prop.attempt} superseded by {st.attempt}")
    h = prop.payload.digest
    locked = st.prepare_lock.get(prop.attempt)
    if locked is not None and locked != h:
        raise AlreadyPrepared("already prepared another payload at this attempt")
    check_proposal(v, prop)
    st.attempt = prop.attempt
    st.prepare_lock[prop.attempt] = h
    sig = sign(v.keys, prepare_message(v.config.index, prop.slot, prop.attempt, h))
    return Prepare(v.config.index, prop.slot, prop.attempt, h, v.vid, sig)


def record_prepare(v: ValidatorState, msg: Prepare) -> Optional[Commit]:
    """Tally a PREPARE; returns our COMMIT once a prepare quorum forms."""
    _check_slot(v, msg.config_index, msg.slot)
    if not learner_gate(v, msg.signer):
        return None
    pm = prepare_message(msg.config_index, msg.slot, msg.attempt, msg.payload_hash)
    if not v.directory.verify(msg.signer, pm, msg.signature):
        return None
    st = v.slot_state(msg.slot)
    votes = st.prepare_votes.setdefault((msg.attempt, msg.payload_hash), {})
    votes[msg.signer] = msg.signature
    if (v.is_member and len(votes) >= v.config.q and msg.attempt == st.attempt
            and st.prepare_lock.get(msg.attempt) == msg.payload_hash
            and msg.payload_hash not in st.committed):
        return handle_prepare_quorum(v, msg.slot, msg.attempt, msg.payload_hash, tuple(votes.items()))
    return None


def handle_prepare_quorum(v: ValidatorState, slot: int, attempt: int, payload_hash: bytes,
                          votes) -> Commit:
    c = v.config.index
    votes = dedup_votes(votes)
    if not quorum_ok(v, v.config, prepare_message(c, slot, attempt, payload_hash), votes):
        raise QuorumInvalid("prepare votes do not form a member quorum")
    st = v.slot_state(slot)
    if st.prepared is None or attempt > st.prepared[0]:
        st.prepared = (attempt, payload_hash, votes)
    st.committed.add(payload_hash)
    return Commit(c, slot, payload_hash, v.vid, sign(v.keys, commit_message(c, slot, payload_hash)))


def record_commit(v: ValidatorState, msg: Commit) -> Optional[CommitProof]:
    """Tally a COMMIT; returns a commit proof once a quorum forms and nothing is delivered."""
    _check_slot(v, msg.config_index, msg.slot)
    if not learner_gate(v, msg.signer):
        return None
    cm = commit_message(msg.config_index, msg.slot, msg.payload_hash)
    if not v.directory.verify(msg.signer, cm, msg.signature):
        return None
    st = v.slot_state(msg.slot)
    st.commit_votes.setdefault(msg.payload_hash, {})[msg.signer] = msg.signature
    if st.delivered is None:
        return ready_proof(v, msg.slot, msg.payload_hash)
    return None


def ready_proof(v: ValidatorState, slot: int, payload_hash: bytes) -> Optional[CommitProof]:
    """A commit proof from the COMMITs tallied so far, if they reach a quorum."""
    votes = v.slot_state(slot).commit_votes.get(payload_hash, {})
    if len(votes) < v.config.q:
        return None
    proof = CommitProof(v.config.index, slot, payload_hash, dedup_votes(votes.items()))
    cm = commit_message(v.config.index, slot, payload_hash)
    return proof if quorum_ok(v, v.config, cm, proof.signatures) else None


@dataclass
class Delivery:
    payload: CheckpointPayload
    proof: CommitProof
    applied: list  # certificates newly executed on the live table
    installed: Optional[ConfigHistoryEntry] = None
    redundant: bool = False


def deliver_checkpoint(v: ValidatorState, payload: CheckpointPayload, proof: CommitProof,
                       certs: Iterable[Certificate]) -> Delivery:
    """Adopt a committed checkpoint.

    A payload carrying a reconfiguration is not installed at once: the next
    slot agrees on its commit proof, and delivering that slot installs.
    """
    key = (payload.config_index, payload.slot)
    prior = v.delivered_log.get(key)
    if prior is not None:
        if prior != payload.digest:
            raise ProofInvalid("a different payload was delivered at this slot")
        return Delivery(payload, proof, [], redundant=True)
    _check_slot(v, payload.config_index, payload.slot)
    cm = commit_message(payload.config_index, payload.slot, payload.digest)
    if (proof.config_index, proof.slot, proof.payload_hash) != (payload.config_index, payload.slot, payload.digest) \
            or not quorum_ok(v, v.config, cm, proof.signatures):
        raise ProofInvalid("commit proof does not verify")
    certs = tuple(certs)
    table = validate_payload(v, payload, certs)
    v.ckpt_accounts = table
    by_digest = {c.digest: c for c in certs}
    included = []
    for d in payload.cert_digests:
        cert = by_digest[d]
        k = (cert.payload.sender, cert.payload.nonce)
        included.append(k)
        done = v.executed.get(k)
        if done is not None and done != cert.payload.digest:
            raise ConflictingTransaction(f"{k} executed differently than checkpointed")
        if done is None and k not in v.buffered:
            v.certs[cert.digest] = cert
            v.buffered[k] = cert
        elif done is None and v.buffered[k].payload.digest != cert.payload.digest:
            v.buffered[k] = cert
    applied = drain_buffer(v)
    for k in included:
        v.pending.pop(k, None)
    v.latest = (payload, proof)
    v.delivered_log[key] = payload.digest
    v.slot_state(payload.slot).delivered = (payload, proof)
    v.slot += 1
    out = Delivery(payload, proof, applied)
    if payload.reconfig is not None:
        v.finalizing = (payload, proof)
    elif payload.prior_proof is not None:
        committed = v.finalizing[0]
        v.finalizing = None
        out.installed = install_configuration(v, committed, payload.prior_proof)
    return out


def attempt_timeout(v: ValidatorState, slot: int, attempt: int) -> Optional[AttemptChange]:
    """Move to ``attempt + 1`` for an undelivered slot and announce our highest prepared value."""
    if not v.is_member or slot != v.slot:
        return None
    st = v.slot_state(slot)
    if st.delivered is not None or st.attempt != attempt:
        return None
    return _attempt_change(v, slot, attempt + 1)


def _attempt_change(v: ValidatorState, slot: int, new_attempt: int) -> AttemptChange:
    st = v.slot_state(slot)
    st.attempt = new_attempt
    st.sent_attempt_change.add(new_attempt)
    c = v.config.index
    if st.prepared is not None:
        pa, h, votes = st.prepared
        payload, certs = st.proposals[h]
    else:
        pa = h = payload = None
        votes, certs = (), ()
    sig = sign(v.keys, attempt_message(c, slot, new_attempt, h, pa))
    return AttemptChange(c, slot, new_attempt, h, pa, tuple(votes), payload, tuple(certs), v.vid, sig)


def record_attempt_change(v: ValidatorState, ac: AttemptChange) -> list:
    """Tally an attempt-change; may return our own attempt-change (join rule) and/or a proposal."""
    _check_slot(v, ac.config_index, ac.slot)
    if not learner_gate(v, ac.signer) or not valid_attempt_change(v, ac):
        return []
    st = v.slot_state(ac.slot)
    if st.delivered is not None:
        return []
    st.attempt_changes.setdefault(ac.attempt, {})[ac.signer] = ac
    out: list = []
    if v.is_member:
        higher = {}
        for attempt, msgs in st.attempt_changes.items():
            if attempt > st.attempt:
                for signer in msgs:
                    higher.setdefault(signer, attempt)
        if len(higher) >= v.config.f + 1:
            target = min(higher.values())
            if target > st.attempt and target not in st.sent_attempt_change:
                out.append(_attempt_change(v, ac.slot, target))
        msgs = st.attempt_changes.get(ac.attempt, {})
        if (len(msgs) >= v.config.q and ac.attempt >= st.attempt and ac.attempt not in st.proposed
                and coordinator(v.config, ac.slot, ac.attempt) == v.vid):
            st.attempt = ac.attempt
            just = tuple(msgs[s] for s in sorted(msgs))
            out.append(propose_checkpoint(v, ac.slot, just))
    return out

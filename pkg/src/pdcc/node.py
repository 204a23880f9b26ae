"""Event-driven node wrappers around the protocol state machines.

A node reacts to three kinds of input: ``start``, ``on_message`` and
``on_timer``.  It talks to the outside world only through a context object
offering ``now``, ``send(dst, msg)``, ``set_timer(delay, name, data)`` and
``record(kind, **fields)``; the simulator and the interleaving explorer both
implement that interface.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import Optional

from . import settlement as sm
from .crypto import (
    KeyDirectory,
    assemble_certificate,
    certificate_message,
    commit_message,
    prepare_message,
    propose_message,
    sign,
)
from .domain import (
    Certificate,
    CheckpointPayload,
    Configuration,
    ReconfigRequest,
    Transaction,
    canonical_encode,
    state_digest,
    to_jsonable,
)
from .errors import (
    FutureConfiguration,
    NotAuthorized,
    ProtocolError,
    SnapshotRejected,
    StaleConfiguration,
    WrongConfiguration,
)
from .fastpath import accept_certificate, execute_certificate, handle_transfer_order
from .messages import (
    AttemptChange,
    CheckpointDelivery,
    Commit,
    Confirmation,
    PayloadRequest,
    Prepare,
    Propose,
    ReconfigCertMsg,
    ReconfigOrder,
    ReconfigVote,
    Rejection,
    SnapshotRequest,
    TransferOrder,
    TransferVote,
)
from .reconfig import (
    SnapshotResponse,
    adopt_snapshot,
    learner_gate,
    on_observe_reconfig_cert,
    serve_snapshot,
    sign_reconfig,
    snapshot_position,
    verify_ch_extension,
    verify_snapshot,
)
from .state import ValidatorState


@dataclass
class NodeParams:
    checkpoint_interval: int = 40
    attempt_timeout: int = 120
    max_backoff: int = 6
    leaver_grace: int = 2000
    snapshot_timeout: int = 150
    client_timeout: int = 150
    empty_checkpoints: bool = False


def supply(table: dict) -> int:
    return sum(b for b, _ in table.values())


class Node:
    id = None
    corrupt = False

    def start(self, ctx) -> None:
        pass

    def on_message(self, ctx, src, msg) -> None:
        pass

    def on_timer(self, ctx, name: str, data) -> None:
        pass

    def timer_live(self, name: str, data) -> bool:
        """False for timers that would be ignored; the runtime may discard them silently."""
        return True

    def summary(self) -> bytes:
        return b""

    def fingerprint(self) -> tuple:
        return ()

    def final(self) -> dict:
        return {}


# ---------------------------------------------------------------------------
# validators


class ValidatorNode(Node):
    behavior = "correct"

    def __init__(self, state: ValidatorState, params: NodeParams, validators: list):
        self.v = state
        self.id = state.vid
        self.params = params
        self.validators = list(validators)
        self.ticking = False
        self.armed: set = set()
        self.accepted: set = set()  # (cert digest, epoch) already accepted
        self.store: dict = {}  # (epoch, slot) -> CheckpointDelivery, for payload requests
        self.snap_status: Optional[str] = None
        self.snap_tried: list = []
        self.snap_pending: set = set()
        self.snap_ok: set = set()
        self.retired = False

    # -- plumbing -----------------------------------------------------------

    def out(self, ctx, dst, msg) -> None:
        ctx.send(dst, msg)

    def to_members(self, ctx, msg) -> None:
        for m in self.v.config.members:
            self.out(ctx, m, msg)

    def to_learners(self, ctx, msg, learners=None) -> None:
        for m in sorted(self.v.temp if learners is None else learners):
            self.out(ctx, m, msg)

    def ch_tail(self, known: int) -> tuple:
        v = self.v
        entries = tuple(v.ch[known + 1:])
        links = tuple(v.ch_payloads[i] for i in range(known, len(v.ch) - 1))
        return entries, links

    def reject(self, ctx, dst, err: ProtocolError, subject: bytes, known: Optional[int] = None):
        entries, links = ((), ())
        if known is not None and known < self.v.config.index:
            entries, links = self.ch_tail(known)
        self.out(ctx, dst, Rejection(err.reason, subject, self.v.config.index, entries, links))

    def summary(self) -> bytes:
        return self.v.summary_digest()

    def fingerprint(self) -> tuple:
        return (self.v.fingerprint(), self.ticking, tuple(sorted(self.armed)),
                len(self.accepted), self.snap_status, tuple(self.snap_tried),
                tuple(sorted(self.snap_pending)), tuple(sorted(self.snap_ok)), self.retired)

    def final(self) -> dict:
        v = self.v
        return {
            "epoch": v.config.index,
            "members": list(v.config.members),
            "slot": v.slot,
            "nonces": {a: n for a, (b, n) in sorted(v.accounts.items())},
            "supply": supply(v.accounts),
            "state_digest": state_digest(v.accounts).hex(),
            "ckpt_digest": v.ckpt_digest().hex(),
            "installed": [e.new_index for e in v.ch],
            "retired": self.retired,
        }

    # -- lifecycle ----------------------------------------------------------

    def start(self, ctx) -> None:
        self._maybe_tick(ctx)

    def _maybe_tick(self, ctx) -> None:
        if self.v.is_member and not self.ticking:
            self.ticking = True
            ctx.set_timer(self.params.checkpoint_interval, "tick")

    def _arm(self, ctx, slot: int, attempt: int) -> None:
        key = (self.v.config.index, slot, attempt)
        if key in self.armed:
            return
        self.armed.add(key)
        delay = self.params.attempt_timeout << min(attempt, self.params.max_backoff)
        ctx.set_timer(delay, "attempt", key)

    def on_timer(self, ctx, name: str, data) -> None:
        v = self.v
        if name == "tick":
            if not v.is_member:
                self.ticking = False
                return
            self.on_tick(ctx)
            ctx.set_timer(self.params.checkpoint_interval, "tick")
        elif name == "attempt":
            epoch, slot, attempt = data
            self.armed.discard(tuple(data))
            if v.config.index != epoch or v.slot != slot:
                return
            ac = sm.attempt_timeout(v, slot, attempt)
            if ac is not None:
                self.to_members(ctx, ac)
                self._arm(ctx, slot, ac.attempt)
        elif name == "fetch":
            epoch, slot, h = data
            if v.config.index == epoch and v.slot == slot:
                self.to_members(ctx, PayloadRequest(epoch, slot, bytes.fromhex(h)))
                ctx.set_timer(self.params.attempt_timeout, "fetch", data)
        elif name == "snapshot":
            if self.snap_status != "requested":
                return
            if v.vid in v.config:
                self.snap_status = "done"  # installed meanwhile
                return
            for server in sorted(self.snap_pending):
                self.out(ctx, server, SnapshotRequest(self.id))
            self.snap_tried = sorted(self.snap_ok | self.snap_pending)
            self._fill_snapshot_requests(ctx)
            ctx.set_timer(self.params.snapshot_timeout, "snapshot")
        elif name == "retire":
            self.retired = True
            ctx.record("retire")

    def has_content(self) -> bool:
        v = self.v
        rc = v.reconfig_cert
        return (bool(v.pending) or v.finalizing is not None
                or (rc is not None and rc.config_index == v.config.index))

    def on_tick(self, ctx) -> None:
        v = self.v
        st = v.slot_state(v.slot)
        if st.delivered is not None:
            return
        if self.has_content() or self.params.empty_checkpoints:
            self._arm(ctx, v.slot, st.attempt)
            if st.attempt == 0 and 0 not in st.proposed and sm.coordinator(v.config, v.slot, 0) == v.vid:
                self.propose(ctx, ())

    def propose(self, ctx, justification) -> None:
        prop = sm.propose_checkpoint(self.v, self.v.slot, justification)
        self.send_proposal(ctx, prop)

    def send_proposal(self, ctx, prop: Propose) -> None:
        self.to_members(ctx, prop)
        self.to_learners(ctx, prop)

    # -- dispatch -----------------------------------------------------------

    def on_message(self, ctx, src, msg) -> None:
        handler = self._dispatch.get(type(msg))
        if handler is not None:
            handler(self, ctx, src, msg)

    def _gate(self, ctx, src, msg, c: int, slot: int) -> bool:
        """True if ``msg`` belongs to the current (epoch, slot); buffers future ones."""
        v = self.v
        if c > v.config.index or (c == v.config.index and slot > v.slot):
            v.future.append((src, msg))
            return False
        return c == v.config.index and slot == v.slot

    def replay_future(self, ctx) -> None:
        v = self.v
        while True:
            waiting, v.future = v.future, []
            before = (v.config.index, v.slot)
            for src, msg in waiting:
                self.on_message(ctx, src, msg)
            if (v.config.index, v.slot) == before:
                return

    def _tally(self, ctx, signer, c: int) -> None:
        if signer not in self.v.config:
            ctx.record("tally", signer=signer, epoch=c, counted=learner_gate(self.v, signer))

    def _learner_contact(self, ctx, src) -> None:
        v = self.v
        if self.snap_status is not None or any(self.id in e.new_members for e in v.ch):
            return
        if isinstance(src, int):
            self.snap_status = "requested"
            self._request_snapshot(ctx, src)
            self._fill_snapshot_requests(ctx)
            ctx.set_timer(self.params.snapshot_timeout, "snapshot")

    def _snapshot_quota(self) -> int:
        # any f+1 servers include a correct one
        return self.v.config.f + 1

    def _request_snapshot(self, ctx, server) -> None:
        self.snap_pending.add(server)
        self.snap_tried.append(server)
        self.out(ctx, server, SnapshotRequest(self.id))

    def _fill_snapshot_requests(self, ctx) -> None:
        members = self.v.config.members
        order = list(members) + [s for s in self.validators if s not in self.v.config]
        for server in order:
            if len(self.snap_pending) + len(self.snap_ok) >= self._snapshot_quota():
                return
            if server != self.id and server not in self.snap_tried:
                self._request_snapshot(ctx, server)

    # -- fast path ----------------------------------------------------------

    def process_cert(self, ctx, src, cert: Certificate) -> None:
        v = self.v
        if not isinstance(cert.payload, Transaction):
            return
        key = (cert.digest, v.config.index)
        if key in self.accepted:
            return
        try:
            accept_certificate(v, cert)
        except StaleConfiguration as e:
            self.reject(ctx, src, e, cert.digest, cert.config_index)
            return
        except FutureConfiguration:
            v.future.append((src, Confirmation(cert)))
            return
        except ProtocolError as e:
            ctx.record("reject", reason=e.reason, subject=cert.digest.hex())
            return
        self.accepted.add(key)
        ctx.record("accept", cert=to_jsonable(cert))
        try:
            applied = execute_certificate(v, cert)
        except ProtocolError as e:
            ctx.record("reject", reason=e.reason, subject=cert.digest.hex())
            return
        self._record_executed(ctx, applied, "cert")

    def _record_executed(self, ctx, applied, via: str) -> None:
        for c in applied:
            tx = c.payload
            ctx.record("execute", sender=tx.sender, nonce=tx.nonce, tx=tx.digest.hex(),
                       supply=supply(self.v.accounts), via=via)

    def on_transfer_order(self, ctx, src, msg: TransferOrder) -> None:
        v = self.v
        if msg.prev_cert is not None:
            self.process_cert(ctx, src, msg.prev_cert)
        if msg.config_index > v.config.index:
            v.future.append((src, TransferOrder(msg.tx, msg.config_index)))
            return
        if msg.config_index < v.config.index:
            self.reject(ctx, src, WrongConfiguration(), msg.tx.digest, msg.config_index)
            return
        try:
            sig = self.sign_transfer(msg.tx, msg.config_index)
        except ProtocolError as e:
            self.reject(ctx, src, e, msg.tx.digest)
            return
        self.out(ctx, src, TransferVote(msg.tx, msg.config_index, v.vid, sig))

    def sign_transfer(self, tx: Transaction, claimed: int) -> bytes:
        return handle_transfer_order(self.v, tx, claimed)

    def on_confirmation(self, ctx, src, msg: Confirmation) -> None:
        self.process_cert(ctx, src, msg.cert)

    # -- reconfiguration ----------------------------------------------------

    def on_reconfig_order(self, ctx, src, msg: ReconfigOrder) -> None:
        try:
            sig = sign_reconfig(self.v, msg.request)
        except ProtocolError as e:
            self.reject(ctx, src, e, msg.request.digest)
            return
        self.out(ctx, src, ReconfigVote(msg.request, self.v.vid, sig))

    def on_reconfig_cert(self, ctx, src, msg: ReconfigCertMsg) -> None:
        v = self.v
        c = msg.cert.config_index
        if v.vid not in v.config:
            self._learner_contact(ctx, src)
        if c > v.config.index:
            v.future.append((src, msg))
            return
        if not v.is_member:
            return
        added = on_observe_reconfig_cert(v, msg.cert)
        if added:
            ctx.record("learners", added=sorted(added))
            for learner in sorted(added):
                self.out(ctx, learner, msg)
                if v.latest is not None:
                    key = (v.latest[0].config_index, v.latest[0].slot)
                    if key in self.store:
                        self.out(ctx, learner, self.store[key])

    # -- state transfer -----------------------------------------------------

    def on_snapshot_request(self, ctx, src, msg: SnapshotRequest) -> None:
        try:
            snap = serve_snapshot(self.v, msg.requester)
        except NotAuthorized as e:
            self.reject(ctx, src, e, canonical_encode(msg.requester))
            return
        self.out(ctx, src, SnapshotResponse(snap))

    def on_snapshot_response(self, ctx, src, msg: SnapshotResponse) -> None:
        v = self.v
        if self.snap_status != "requested" or src not in self.snap_pending:
            return
        self.snap_pending.discard(src)
        snap = msg.snapshot
        try:
            verify_snapshot(v.genesis, snap, v.directory)
        except SnapshotRejected as e:
            ctx.record("snapshot", server=src, accepted=False, link=e.link, reason=e.why)
            self._fill_snapshot_requests(ctx)
            return
        epoch, slot = snapshot_position(snap)
        ctx.record("snapshot", server=src, accepted=True, epoch=epoch, slot=slot,
                   state_digest=state_digest(snap.account_table()).hex())
        self.snap_ok.add(src)
        if len(self.snap_ok) >= self._snapshot_quota():
            self.snap_status = "done"
        if adopt_snapshot(v, snap):
            ctx.record("adopt-snapshot", epoch=epoch, slot=slot,
                       ch=[e.encoded.hex() for e in v.ch], entries=[to_jsonable(e) for e in v.ch],
                       state_digest=state_digest(v.ckpt_accounts).hex(),
                       supply=supply(v.accounts))
        self.replay_future(ctx)
        self._maybe_tick(ctx)

    # -- settlement ---------------------------------------------------------

    def on_propose(self, ctx, src, msg: Propose) -> None:
        v = self.v
        if v.vid not in v.config:
            self._learner_contact(ctx, src)
        if not self._gate(ctx, src, msg, msg.config_index, msg.slot):
            return
        if not v.is_member:
            try:
                sm.check_proposal(v, msg)
            except ProtocolError:
                return
            self.try_deliver(ctx)
            return
        try:
            prep = self.vote_prepare(msg)
        except ProtocolError as e:
            ctx.record("reject", reason=e.reason, subject=msg.payload.digest.hex())
            return
        self._arm(ctx, msg.slot, msg.attempt)
        self.to_members(ctx, prep)
        self.try_deliver(ctx)

    def vote_prepare(self, msg: Propose) -> Prepare:
        return sm.handle_proposal(self.v, msg)

    def on_prepare(self, ctx, src, msg: Prepare) -> None:
        if not self._gate(ctx, src, msg, msg.config_index, msg.slot):
            return
        self._tally(ctx, msg.signer, msg.config_index)
        try:
            commit = sm.record_prepare(self.v, msg)
        except ProtocolError:
            return
        if commit is not None:
            self.to_members(ctx, commit)
            self.to_learners(ctx, commit)

    def on_commit(self, ctx, src, msg: Commit) -> None:
        v = self.v
        if v.vid not in v.config:
            self._learner_contact(ctx, src)
        if not self._gate(ctx, src, msg, msg.config_index, msg.slot):
            return
        self._tally(ctx, msg.signer, msg.config_index)
        try:
            proof = sm.record_commit(v, msg)
        except ProtocolError:
            return
        if proof is not None:
            st = v.slot_state(msg.slot)
            if msg.payload_hash in st.proposals:
                self.try_deliver(ctx)
            elif not st.fetching:
                st.fetching = True
                self.to_members(ctx, PayloadRequest(msg.config_index, msg.slot, msg.payload_hash))
                ctx.set_timer(self.params.attempt_timeout, "fetch",
                              (msg.config_index, msg.slot, msg.payload_hash.hex()))

    def on_attempt_change(self, ctx, src, msg: AttemptChange) -> None:
        v = self.v
        if not self._gate(ctx, src, msg, msg.config_index, msg.slot):
            return
        self._tally(ctx, msg.signer, msg.config_index)
        if not v.is_member:
            return
        try:
            out = sm.record_attempt_change(v, msg)
        except ProtocolError:
            return
        for item in out:
            if isinstance(item, AttemptChange):
                self.to_members(ctx, item)
                self._arm(ctx, item.slot, item.attempt)
            else:
                self.send_proposal(ctx, item)

    def on_payload_request(self, ctx, src, msg: PayloadRequest) -> None:
        cd = self.store.get((msg.config_index, msg.slot))
        if cd is not None and cd.payload.digest == msg.payload_hash:
            self.out(ctx, src, cd)

    def on_checkpoint_delivery(self, ctx, src, msg: CheckpointDelivery) -> None:
        v = self.v
        if v.vid not in v.config:
            self._learner_contact(ctx, src)
        if not self._gate(ctx, src, msg, msg.payload.config_index, msg.payload.slot):
            return
        self.deliver(ctx, msg.payload, msg.proof, msg.certs)

    def try_deliver(self, ctx) -> None:
        v = self.v
        st = v.slot_state(v.slot)
        if st.delivered is not None:
            return
        for h in sorted(st.commit_votes):
            if h not in st.proposals:
                continue
            proof = sm.ready_proof(v, v.slot, h)
            if proof is not None:
                payload, certs = st.proposals[h]
                self.deliver(ctx, payload, proof, certs)
                return

    def deliver(self, ctx, payload: CheckpointPayload, proof, certs) -> None:
        v = self.v
        learners = set(v.temp)
        was_member = v.is_member
        try:
            d = sm.deliver_checkpoint(v, payload, proof, certs)
        except ProtocolError as e:
            ctx.record("reject", reason=e.reason, subject=payload.digest.hex())
            return
        if d.redundant:
            return
        cd = CheckpointDelivery(payload, proof, tuple(certs))
        self.store[(payload.config_index, payload.slot)] = cd
        if len(self.store) > 16:
            del self.store[next(iter(self.store))]
        ctx.record("deliver-checkpoint", epoch=payload.config_index, slot=payload.slot,
                   hash=payload.digest.hex(), proof=to_jsonable(proof),
                   state_digest=payload.state_digest.hex(), items=len(payload.items))
        self._record_executed(ctx, d.applied, "checkpoint")
        if was_member:
            self.to_learners(ctx, cd, learners)
        if d.installed is not None:
            self.on_install(ctx, d.installed)
        self.replay_future(ctx)

    def on_install(self, ctx, entry) -> None:
        v = self.v
        ctx.record("install", epoch=entry.new_index, entry=to_jsonable(entry),
                   entry_hex=entry.encoded.hex(), state_digest=v.ckpt_digest().hex())
        if v.vid not in v.config and not self.retired:
            ctx.set_timer(self.params.leaver_grace, "retire")
        self._maybe_tick(ctx)

    # message type -> handler name, resolved per subclass so overrides take effect
    HANDLERS = {
        TransferOrder: "on_transfer_order",
        Confirmation: "on_confirmation",
        ReconfigOrder: "on_reconfig_order",
        ReconfigCertMsg: "on_reconfig_cert",
        SnapshotRequest: "on_snapshot_request",
        SnapshotResponse: "on_snapshot_response",
        Propose: "on_propose",
        Prepare: "on_prepare",
        Commit: "on_commit",
        AttemptChange: "on_attempt_change",
        PayloadRequest: "on_payload_request",
        CheckpointDelivery: "on_checkpoint_delivery",
    }

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        cls._dispatch = {t: getattr(cls, name) for t, name in cls.HANDLERS.items()}


ValidatorNode._dispatch = {t: getattr(ValidatorNode, n) for t, n in ValidatorNode.HANDLERS.items()}


# ---------------------------------------------------------------------------
# Byzantine catalog


class EquivocatingValidator(ValidatorNode):
    """Signs every transfer order, ignoring locks, nonces and funds."""

    behavior = "equivocate-fastpath"
    corrupt = True

    def sign_transfer(self, tx, claimed):
        return sign(self.v.keys, certificate_message(claimed, tx))


class StaleReplayValidator(ValidatorNode):
    """After each install, rebroadcasts every certificate of older epochs."""

    behavior = "stale-cert-replay"
    corrupt = True

    def _replay(self, ctx) -> None:
        v = self.v
        old = [c for c in v.certs.values() if c.config_index < v.config.index]
        for cert in old:
            for dst in self.validators:
                if dst != self.id:
                    self.out(ctx, dst, Confirmation(cert))

    def on_install(self, ctx, entry) -> None:
        super().on_install(ctx, entry)
        self._replay(ctx)


class PrematureLearner(ValidatorNode):
    """While a learner, answers forwarded proposals with its own PREPARE and COMMIT."""

    behavior = "premature-learner-vote"
    corrupt = True

    def on_propose(self, ctx, src, msg: Propose) -> None:
        v = self.v
        if v.vid not in v.config:
            c, h = msg.config_index, msg.payload.digest
            prep = Prepare(c, msg.slot, msg.attempt, h, v.vid,
                           sign(v.keys, prepare_message(c, msg.slot, msg.attempt, h)))
            com = Commit(c, msg.slot, h, v.vid, sign(v.keys, commit_message(c, msg.slot, h)))
            for m in v.config.members:
                self.out(ctx, m, prep)
                self.out(ctx, m, com)
        super().on_propose(ctx, src, msg)


class ConflictingPreparer(ValidatorNode):
    """Votes PREPARE and COMMIT for every proposal; equivocates when coordinating."""

    behavior = "conflicting-prepare"
    corrupt = True

    def on_propose(self, ctx, src, msg: Propose) -> None:
        v = self.v
        if msg.config_index == v.config.index and v.is_member:
            c, h = msg.config_index, msg.payload.digest
            self.to_members(ctx, Prepare(c, msg.slot, msg.attempt, h, v.vid,
                                         sign(v.keys, prepare_message(c, msg.slot, msg.attempt, h))))
            self.to_members(ctx, Commit(c, msg.slot, h, v.vid,
                                        sign(v.keys, commit_message(c, msg.slot, h))))
        super().on_propose(ctx, src, msg)

    def send_proposal(self, ctx, prop: Propose) -> None:
        v = self.v
        alt = CheckpointPayload(prop.payload.config_index, prop.payload.slot, prop.payload.items,
                                prop.payload.state_digest, prop.payload.admin_data + b"/alt")
        sig = sign(v.keys, propose_message(prop.config_index, prop.slot, prop.attempt, alt.digest))
        twin = Propose(prop.config_index, prop.slot, prop.attempt, alt, prop.certs,
                       prop.justification, prop.proposer, sig)
        members = v.config.members
        half = len(members) // 2
        for i, m in enumerate(members):
            self.out(ctx, m, prop if i < half else twin)
        self.to_learners(ctx, prop)


class WithholdingValidator(ValidatorNode):
    """Receives everything and sends nothing."""

    behavior = "withhold"
    corrupt = True

    def out(self, ctx, dst, msg) -> None:
        if dst == self.id:
            ctx.send(dst, msg)


class CrashingValidator(ValidatorNode):
    """Correct until the simulator crashes it."""

    behavior = "crash"
    corrupt = True


BEHAVIORS = {
    cls.behavior: cls
    for cls in (EquivocatingValidator, StaleReplayValidator, PrematureLearner,
                ConflictingPreparer, WithholdingValidator, CrashingValidator)
}


# ---------------------------------------------------------------------------
# clients


@dataclass
class ScheduledTransfer:
    at: int
    recipient: str
    amount: int


class ClientNode(Node):
    """Owns one account and submits its scripted transfers one at a time."""

    def __init__(self, cid: str, account: str, transfers: list, genesis: Configuration,
                 directory: KeyDirectory, params: NodeParams):
        self.id = cid
        self.account = account
        self.queue = deque(sorted(transfers, key=lambda t: t.at))
        self.total = len(self.queue)
        self.config = genesis
        self.directory = directory
        self.params = params
        self.nonce = 0
        self.active: Optional[Transaction] = None
        self.votes: dict = {}
        self.certs: dict = {}  # tx digest -> latest certificate
        self.txs: dict = {}  # nonce -> Transaction
        self.recert: set = set()  # nonces needing a certificate under the current epoch
        self.unsent: Optional[Certificate] = None
        self.retries = 0

    def fingerprint(self) -> tuple:
        return (self.id, self.config.index, len(self.queue), self.nonce,
                None if self.active is None else self.active.digest,
                tuple(sorted(self.votes)), tuple(sorted(self.recert)),
                None if self.unsent is None else self.unsent.digest, self.retries)

    def final(self) -> dict:
        return {"account": self.account, "certified": len(self.certs),
                "scripted": self.total, "epoch": self.config.index}

    def start(self, ctx) -> None:
        self.advance(ctx)

    def _members(self, ctx, msg) -> None:
        for m in self.config.members:
            ctx.send(m, msg)

    def _flush(self, ctx) -> None:
        if self.unsent is not None:
            self._members(ctx, Confirmation(self.unsent))
            self.unsent = None

    def advance(self, ctx) -> None:
        if self.active is not None:
            return
        tx = None
        if self.recert:
            tx = self.txs[min(self.recert)]
        elif self.queue and self.queue[0].at <= ctx.now:
            item = self.queue.popleft()
            tx = Transaction(self.account, item.recipient, item.amount, self.nonce)
            self.txs[self.nonce] = tx
            self.nonce += 1
        if tx is None:
            self._flush(ctx)
            if self.queue:
                ctx.set_timer(self.queue[0].at - ctx.now, "next")
            return
        self.active = tx
        self.votes = {}
        prev, self.unsent = self.unsent, None
        self._members(ctx, TransferOrder(tx, self.config.index, prev))
        self.retries += 1
        ctx.set_timer(self.params.client_timeout, "retry", (tx.digest.hex(), self.retries))

    def timer_live(self, name: str, data) -> bool:
        if name != "retry":
            return True
        return self.active is not None and self.active.digest.hex() == data[0] and data[1] == self.retries

    def on_timer(self, ctx, name: str, data) -> None:
        if name == "next":
            self.advance(ctx)
        elif name == "retry":
            if self.timer_live(name, data):
                self.retries += 1
                self._members(ctx, TransferOrder(self.active, self.config.index))
                ctx.set_timer(self.params.client_timeout, "retry", (data[0], self.retries))

    def on_message(self, ctx, src, msg) -> None:
        if isinstance(msg, TransferVote):
            self.on_vote(ctx, msg)
        elif isinstance(msg, Rejection):
            self.on_rejection(ctx, msg)

    def on_vote(self, ctx, msg: TransferVote) -> None:
        tx = self.active
        if tx is None or msg.tx != tx or msg.config_index != self.config.index \
                or msg.signer not in self.config:
            return
        if not self.directory.verify(msg.signer, certificate_message(msg.config_index, tx), msg.signature):
            return
        self.votes[msg.signer] = msg.signature
        if len(self.votes) < self.config.q:
            return
        cert = assemble_certificate(self.config, tx, self.votes.items(), self.directory)
        ctx.record("cert-formed", cert=to_jsonable(cert))
        self.certs[tx.digest] = cert
        self.recert.discard(tx.nonce)
        self.active = None
        self.unsent = cert
        self.advance(ctx)

    def on_rejection(self, ctx, msg: Rejection) -> None:
        if msg.installed > self.config.index and msg.ch_tail:
            try:
                configs = verify_ch_extension(self.config, msg.ch_tail, msg.link_payloads, self.directory)
            except SnapshotRejected:
                configs = []
            if configs:
                self.config = configs[-1]
                ctx.record("client-config", epoch=self.config.index)
                if self.active is not None:
                    self.votes = {}
                    self.retries += 1
                    self._members(ctx, TransferOrder(self.active, self.config.index))
                    ctx.set_timer(self.params.client_timeout, "retry",
                                  (self.active.digest.hex(), self.retries))
        if msg.reason == StaleConfiguration.reason:
            for n, tx in self.txs.items():
                cert = self.certs.get(tx.digest)
                if cert is not None and cert.digest == msg.subject and cert.config_index < self.config.index:
                    self.recert.add(n)
            self.advance(ctx)


class AdminClient(Node):
    """Drives the scripted membership changes, one epoch after another."""

    def __init__(self, cid: str, script: list, genesis: Configuration, directory: KeyDirectory,
                 params: NodeParams):
        self.id = cid
        self.script = list(script)  # [(at, next_members)]
        configs = [genesis]
        for i, (_, members) in enumerate(self.script):
            configs.append(Configuration(i + 1, members))
        self.configs = configs
        self.directory = directory
        self.params = params
        self.step = 0
        self.votes: dict = {}
        self.started = False

    def fingerprint(self) -> tuple:
        return (self.id, self.step, tuple(sorted(self.votes)), self.started)

    def final(self) -> dict:
        return {"reconfigs": self.step, "scripted": len(self.script)}

    def request(self) -> ReconfigRequest:
        return ReconfigRequest(self.step, self.script[self.step][1])

    def start(self, ctx) -> None:
        if self.script:
            ctx.set_timer(max(0, self.script[0][0] - ctx.now), "reconfig", 0)

    def _send(self, ctx) -> None:
        for m in self.configs[self.step].members:
            ctx.send(m, ReconfigOrder(self.request()))
        ctx.set_timer(self.params.client_timeout, "retry", self.step)

    def on_timer(self, ctx, name: str, data) -> None:
        if data != self.step or self.step >= len(self.script):
            return
        if name == "reconfig":
            self.started = True
            self.votes = {}
            self._send(ctx)
        elif name == "retry" and self.started:
            self._send(ctx)

    def on_message(self, ctx, src, msg) -> None:
        if not isinstance(msg, ReconfigVote) or self.step >= len(self.script):
            return
        req = self.request()
        cfg = self.configs[self.step]
        if msg.request != req or msg.signer not in cfg:
            return
        if not self.directory.verify(msg.signer, certificate_message(req.current_index, req), msg.signature):
            return
        self.votes[msg.signer] = msg.signature
        if len(self.votes) < cfg.q:
            return
        cert = assemble_certificate(cfg, req, self.votes.items(), self.directory)
        ctx.record("cert-formed", cert=to_jsonable(cert))
        for m in cfg.members:
            ctx.send(m, ReconfigCertMsg(cert))
        self.step += 1
        self.votes = {}
        self.started = False
        if self.step < len(self.script):
            ctx.set_timer(max(1, self.script[self.step][0] - ctx.now), "reconfig", self.step)


class EquivocatingClient(Node):
    """Sends two conflicting same-nonce transfers to disjoint validator subsets, then to all."""

    corrupt = True

    def __init__(self, cid: str, account: str, recipients: tuple, at: int, genesis: Configuration,
                 directory: KeyDirectory, rng: random.Random, spread_delay: int = 30):
        self.id = cid
        self.account = account
        self.config = genesis
        self.directory = directory
        self.at = at
        self.spread_delay = spread_delay
        self.txs = (Transaction(account, recipients[0], 1, 0), Transaction(account, recipients[1], 2, 0))
        members = list(genesis.members)
        rng.shuffle(members)
        cut = rng.randint(1, len(members) - 1) if len(members) > 1 else 1
        self.split = (sorted(members[:cut]), sorted(members[cut:]))
        self.votes = [{}, {}]
        self.formed = [False, False]

    def fingerprint(self) -> tuple:
        return (self.id, tuple(tuple(sorted(v)) for v in self.votes), tuple(self.formed))

    def final(self) -> dict:
        return {"account": self.account, "formed": sum(self.formed)}

    def start(self, ctx) -> None:
        ctx.set_timer(self.at, "split")

    def on_timer(self, ctx, name: str, data) -> None:
        if name == "split":
            for tx, targets in zip(self.txs, self.split):
                for m in targets:
                    ctx.send(m, TransferOrder(tx, self.config.index))
            ctx.set_timer(self.spread_delay, "spread")
        elif name == "spread":
            for tx in self.txs:
                for m in self.config.members:
                    ctx.send(m, TransferOrder(tx, self.config.index))

    def on_message(self, ctx, src, msg) -> None:
        if not isinstance(msg, TransferVote):
            return
        for i, tx in enumerate(self.txs):
            if msg.tx != tx or self.formed[i] or msg.signer not in self.config:
                continue
            if not self.directory.verify(msg.signer, certificate_message(msg.config_index, tx), msg.signature):
                continue
            self.votes[i][msg.signer] = msg.signature
            if len(self.votes[i]) >= self.config.q:
                cert = assemble_certificate(self.config, tx, self.votes[i].items(), self.directory)
                self.formed[i] = True
                ctx.record("cert-formed", cert=to_jsonable(cert))
                for m in self.config.members:
                    ctx.send(m, Confirmation(cert))

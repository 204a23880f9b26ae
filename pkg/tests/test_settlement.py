import pytest

from pdcc.crypto import assemble_certificate, certificate_message, prepare_message, propose_message, sign
from pdcc.domain import CheckpointPayload, Transaction
from pdcc.errors import (
    AlreadyPrepared,
    DigestMismatch,
    InvalidItem,
    InvalidJustification,
    NotCoordinator,
    ProofInvalid,
    SlotGap,
    WrongConfiguration,
)
from pdcc.fastpath import execute_certificate
from pdcc.messages import Prepare, Propose
from pdcc.settlement import (
    _fresh_payload,
    attempt_timeout,
    check_proposal,
    coordinator,
    deliver_checkpoint,
    handle_proposal,
    highest_prepared,
    propose_checkpoint,
    record_attempt_change,
    record_commit,
    record_prepare,
)
from pdcc.state import NO_LEARNER_GATE, NO_LOCKED_VALUE

from conftest import Cluster, run_slot


def with_payment(c: Cluster, tx=Transaction("alice", "bob", 25, 0)):
    m = certificate_message(0, tx)
    cert = assemble_certificate(c.genesis, tx, [(i, sign(c.keys[i], m)) for i in (0, 1, 2)],
                                c.directory)
    for v in c.members:
        execute_certificate(v, cert)
    return cert


def test_coordinator_rotates():
    c = Cluster()
    cfg = c.genesis
    assert [coordinator(cfg, 0, a) for a in range(5)] == [0, 1, 2, 3, 0]
    assert [coordinator(cfg, s, 0) for s in range(4)] == [0, 1, 2, 3]


def test_happy_path_delivers_the_same_checkpoint():
    c = Cluster()
    cert = with_payment(c)
    deliveries = run_slot(c.members)
    assert len({d.payload.digest for d in deliveries}) == 1
    payload = deliveries[0].payload
    assert payload.cert_digests == (cert.digest,)
    for v in c.members:
        assert v.slot == 1 and not v.pending
        assert v.ckpt_accounts == v.accounts
        assert v.ckpt_digest() == payload.state_digest


def test_redundant_and_conflicting_delivery():
    c = Cluster()
    with_payment(c)
    d = run_slot(c.members)[0]
    v = c[0]
    again = deliver_checkpoint(v, d.payload, d.proof, ())
    assert again.redundant
    other = CheckpointPayload(0, 0, (), d.payload.state_digest)
    with pytest.raises(ProofInvalid):
        deliver_checkpoint(v, other, d.proof, ())


def test_proposal_rules():
    c = Cluster()
    with_payment(c)
    with pytest.raises(NotCoordinator):
        propose_checkpoint(c[1], 0)
    prop = propose_checkpoint(c[0], 0)
    v = c[2]
    handle_proposal(v, prop)
    forged = Propose(0, 0, 0, CheckpointPayload(0, 0, (), b"\0" * 32), (), (), 1,
                     sign(c.keys[1], propose_message(0, 0, 0, b"\0" * 32)))
    with pytest.raises(NotCoordinator):
        check_proposal(v, forged)
    wrong_slot = Propose(0, 3, 0, prop.payload, prop.certs, (), 0, prop.signature)
    with pytest.raises(SlotGap):
        handle_proposal(v, wrong_slot)
    wrong_epoch = Propose(1, 0, 0, prop.payload, prop.certs, (), 0, prop.signature)
    with pytest.raises(WrongConfiguration):
        handle_proposal(v, wrong_epoch)


def test_second_payload_at_same_attempt_is_refused():
    c = Cluster()
    with_payment(c)
    prop = propose_checkpoint(c[0], 0)
    handle_proposal(c[1], prop)
    alt = CheckpointPayload(0, 0, (), c[0].ckpt_digest(), b"other")
    p2 = Propose(0, 0, 0, alt, (), (), 0, sign(c.keys[0], propose_message(0, 0, 0, alt.digest)))
    with pytest.raises(AlreadyPrepared):
        handle_proposal(c[1], p2)


def test_payload_digest_is_recomputed():
    c = Cluster()
    cert = with_payment(c)
    bad = CheckpointPayload(0, 0, (cert.digest,), b"\1" * 32)
    prop = Propose(0, 0, 0, bad, (cert,), (), 0, sign(c.keys[0], propose_message(0, 0, 0, bad.digest)))
    with pytest.raises(DigestMismatch):
        check_proposal(c[1], prop)
    missing = CheckpointPayload(0, 0, (cert.digest,), bad.state_digest)
    prop = Propose(0, 0, 0, missing, (), (), 0,
                   sign(c.keys[0], propose_message(0, 0, 0, missing.digest)))
    with pytest.raises(InvalidItem):
        check_proposal(c[1], prop)


def test_learner_votes_are_not_counted():
    c = Cluster(extra=1)
    with_payment(c)
    prop = propose_checkpoint(c[0], 0)
    h = prop.payload.digest
    v = c[1]
    handle_proposal(v, prop)
    learner = Prepare(0, 0, 0, h, 4, sign(c.keys[4], prepare_message(0, 0, 0, h)))
    ours = [handle_proposal(c[i], prop) for i in (0, 2)]
    assert record_prepare(v, learner) is None
    assert record_prepare(v, ours[0]) is None
    assert 4 not in v.slot_state(0).prepare_votes.get((0, h), {})
    assert record_prepare(v, ours[1]) is None, "two members do not make a quorum of three"


def test_learner_gate_mutation_counts_learners():
    c = Cluster(extra=1, mutations={NO_LEARNER_GATE})
    with_payment(c)
    prop = propose_checkpoint(c[0], 0)
    h = prop.payload.digest
    v = c[1]
    mine = handle_proposal(v, prop)
    learner = Prepare(0, 0, 0, h, 4, sign(c.keys[4], prepare_message(0, 0, 0, h)))
    record_prepare(v, learner)
    record_prepare(v, mine)
    commit = record_prepare(v, handle_proposal(c[2], prop))
    assert commit is not None


def _prepared_then_timed_out(c: Cluster):
    """Everyone prepares the attempt-0 payload, then times out before committing."""
    with_payment(c)
    prop = propose_checkpoint(c[0], 0)
    prepares = [handle_proposal(v, prop) for v in c.members]
    for v in c.members:
        for p in prepares:
            record_prepare(v, p)
    acs = [attempt_timeout(v, 0, 0) for v in c.members]
    return prop, acs


def test_next_coordinator_reproposes_the_prepared_payload():
    c = Cluster()
    prop0, acs = _prepared_then_timed_out(c)
    assert all(ac.prepared_hash == prop0.payload.digest for ac in acs)
    assert highest_prepared(acs).prepared_hash == prop0.payload.digest
    v1 = c[1]
    out = []
    for ac in acs:
        out += record_attempt_change(v1, ac)
    props = [m for m in out if isinstance(m, Propose)]
    assert len(props) == 1 and props[0].attempt == 1
    assert props[0].payload.digest == prop0.payload.digest
    check_proposal(c[2], props[0])


def _lock_ignoring_proposal(c: Cluster, acs):
    v1 = c[1]
    v1.slot_state(0).attempt = 1
    payload, certs = _fresh_payload(v1, 0, 1)
    sig = sign(c.keys[1], propose_message(0, 0, 1, payload.digest))
    return Propose(0, 0, 1, payload, certs, tuple(acs[:3]), 1, sig)


def test_proposal_ignoring_the_lock_is_rejected():
    c = Cluster()
    prop0, acs = _prepared_then_timed_out(c)
    rogue = _lock_ignoring_proposal(c, acs)
    assert rogue.payload.digest != prop0.payload.digest
    with pytest.raises(InvalidJustification):
        check_proposal(c[2], rogue)


def test_locked_value_mutation_accepts_it():
    c = Cluster(mutations={NO_LOCKED_VALUE})
    _, acs = _prepared_then_timed_out(c)
    check_proposal(c[2], _lock_ignoring_proposal(c, acs))


def test_justification_needs_a_quorum():
    c = Cluster()
    _, acs = _prepared_then_timed_out(c)
    rogue = _lock_ignoring_proposal(c, acs)
    short = Propose(0, 0, 1, rogue.payload, rogue.certs, tuple(acs[:2]), 1, rogue.signature)
    with pytest.raises(InvalidJustification):
        check_proposal(c[2], short)


def test_commit_quorum_forms_once():
    c = Cluster()
    with_payment(c)
    prop = propose_checkpoint(c[0], 0)
    prepares = [handle_proposal(v, prop) for v in c.members]
    commits = [x for x in (record_prepare(c[i], p) for i in range(4) for p in prepares) if x]
    assert len(commits) == 4, "one COMMIT per validator"
    proofs = [record_commit(c[3], m) for m in commits]
    assert [p is not None for p in proofs] == [False, False, True, True]

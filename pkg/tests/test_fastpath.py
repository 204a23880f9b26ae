import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdcc.crypto import assemble_certificate, certificate_message, sign
from pdcc.domain import Certificate, Configuration, Transaction, state_digest
from pdcc.errors import (
    BadNonce,
    ConflictingTransaction,
    FutureConfiguration,
    InsufficientFunds,
    InvalidItem,
    NotMember,
    QuorumInvalid,
    StaleConfiguration,
    UnknownSender,
    WrongConfiguration,
)
from pdcc.fastpath import (
    accept_certificate,
    apply_batch,
    execute_certificate,
    handle_transfer_order,
    pending_executed_items,
)
from pdcc.state import NO_EPOCH_CHECK

from conftest import Cluster


def certify(cluster, tx, signers=(0, 1, 2), epoch=0):
    votes = [(i, handle_transfer_order(cluster[i], tx, epoch)) for i in signers]
    cfg = cluster[signers[0]].config
    return assemble_certificate(cfg, tx, votes, cluster.directory)


def test_vote_then_refuse_conflict(cluster):
    tx = Transaction("alice", "bob", 30, 0)
    sig = handle_transfer_order(cluster[0], tx, 0)
    assert handle_transfer_order(cluster[0], tx, 0) == sig, "re-signing the same order is allowed"
    with pytest.raises(ConflictingTransaction):
        handle_transfer_order(cluster[0], Transaction("alice", "carol", 30, 0), 0)


@pytest.mark.parametrize("tx, epoch, exc", [
    (Transaction("alice", "bob", 1, 1), 0, BadNonce),
    (Transaction("alice", "bob", 101, 0), 0, InsufficientFunds),
    (Transaction("zed", "bob", 1, 0), 0, UnknownSender),
    (Transaction("alice", "bob", 1, 0), 1, WrongConfiguration),
])
def test_order_rejections(cluster, tx, epoch, exc):
    with pytest.raises(exc):
        handle_transfer_order(cluster[1], tx, epoch)


def test_locked_funds_are_not_spendable_twice(cluster):
    handle_transfer_order(cluster[0], Transaction("alice", "bob", 60, 0), 0)
    with pytest.raises(BadNonce):
        handle_transfer_order(cluster[0], Transaction("alice", "bob", 60, 2), 0)


def test_non_member_does_not_vote():
    c = Cluster(extra=1)
    with pytest.raises(NotMember):
        handle_transfer_order(c[4], Transaction("alice", "bob", 1, 0), 0)


def test_accept_and_execute(cluster):
    cert = certify(cluster, Transaction("alice", "bob", 30, 0))
    v = cluster[3]
    assert accept_certificate(v, cert)
    applied = execute_certificate(v, cert)
    assert applied == [cert]
    assert v.accounts["alice"] == (70, 1) and v.accounts["bob"] == (80, 0)
    assert execute_certificate(v, cert) == [], "re-execution is a no-op"
    assert pending_executed_items(v) == [cert.digest]


def test_epoch_rule(cluster):
    tx = Transaction("alice", "bob", 30, 0)
    cert = certify(cluster, tx)
    v = cluster[0]
    v.config = Configuration(1, v.config.members)
    with pytest.raises(StaleConfiguration):
        accept_certificate(v, cert)
    v.config = Configuration(0, v.config.members)
    future = Certificate(2, tx, cert.signatures)
    with pytest.raises(FutureConfiguration):
        accept_certificate(v, future)


def test_epoch_mutation_skips_only_the_epoch_check():
    c = Cluster(mutations={NO_EPOCH_CHECK})
    cert = certify(c, Transaction("alice", "bob", 30, 0))
    v = c[0]
    v.config = Configuration(1, v.config.members)
    assert accept_certificate(v, cert)


def test_bad_quorum_rejected(cluster):
    tx = Transaction("alice", "bob", 30, 0)
    m = certificate_message(0, tx)
    short = Certificate(0, tx, tuple((i, sign(cluster.keys[i], m)) for i in (0, 1)))
    with pytest.raises(QuorumInvalid):
        accept_certificate(cluster[0], short)


def test_out_of_order_certificates_are_buffered(cluster):
    t0 = Transaction("alice", "bob", 10, 0)
    t1 = Transaction("alice", "carol", 20, 1)
    c0 = certify(cluster, t0)
    for i in (0, 1, 2):
        execute_certificate(cluster[i], c0)
    c1 = certify(cluster, t1)
    v = cluster[3]
    assert execute_certificate(v, c1) == []
    assert ("alice", 1) in v.buffered
    assert execute_certificate(v, c0) == [c0, c1]
    assert v.accounts["alice"] == (70, 2) and v.accounts["carol"] == (20, 0)


def test_incoming_funds_unblock_a_buffered_spend(cluster):
    broke = Transaction("carol", "alice", 5, 0)
    fund = Transaction("bob", "carol", 5, 0)
    cb = certify(cluster, fund)
    # carol has no funds yet, so validators 0..2 cannot vote for her transfer;
    # build its certificate from validators that already executed the funding
    for i in (0, 1, 2):
        execute_certificate(cluster[i], cb)
    cf = certify(cluster, broke)
    v = cluster[3]
    assert execute_certificate(v, cf) == []
    assert execute_certificate(v, cb) == [cb, cf]


def test_apply_batch_rejects_impossible_sets():
    table = {"a": (10, 0), "b": (0, 0)}
    with pytest.raises(InvalidItem):
        apply_batch(table, [Transaction("a", "b", 11, 0)])
    with pytest.raises(InvalidItem):
        apply_batch(table, [Transaction("a", "b", 1, 1)])
    assert table == {"a": (10, 0), "b": (0, 0)}, "input table untouched"


@st.composite
def transfer_histories(draw):
    """A feasible sequence of transfers over four accounts."""
    names = ["a", "b", "c", "d"]
    table = {n: [draw(st.integers(0, 50)), 0] for n in names}
    txs = []
    for _ in range(draw(st.integers(1, 25))):
        s = draw(st.sampled_from(names))
        r = draw(st.sampled_from([n for n in names if n != s]))
        if table[s][0] == 0:
            continue
        amt = draw(st.integers(1, table[s][0]))
        txs.append(Transaction(s, r, amt, table[s][1]))
        table[s][0] -= amt
        table[s][1] += 1
        table[r][0] += amt
    start = {}
    for n in names:
        spent = sum(t.amount for t in txs if t.sender == n)
        got = sum(t.amount for t in txs if t.recipient == n)
        start[n] = table[n][0] + spent - got
    return start, txs


@settings(max_examples=150, deadline=None)
@given(transfer_histories(), st.randoms(use_true_random=False))
def test_execution_order_does_not_matter(history, rnd):
    start, txs = history
    order = list(txs)
    rnd.shuffle(order)
    a = apply_batch({k: (v, 0) for k, v in start.items()}, txs)
    b = apply_batch({k: (v, 0) for k, v in start.items()}, order)
    assert a == b
    assert sum(x for x, _ in a.values()) == sum(start.values())


@settings(max_examples=40, deadline=None)
@given(transfer_histories(), st.integers(0, 2**32))
def test_validators_converge_under_arbitrary_delivery(history, seed):
    # a feasible history is certified up front; every validator then receives
    # the certificates in its own random order and must end in the same state
    start, txs = history
    c = Cluster(accounts=start)
    certs = [signed_cert(c, tx) for tx in txs]
    rng = random.Random(seed)
    for v in c.states:
        order = list(certs)
        rng.shuffle(order)
        for cert in order:
            accept_certificate(v, cert)
            execute_certificate(v, cert)
    assert len({state_digest(v.accounts) for v in c.states}) == 1
    assert all(sum(b for b, _ in v.accounts.values()) == sum(start.values()) for v in c.states)
    assert all(len(v.executed) == len(txs) and not v.buffered for v in c.states)


def signed_cert(c, tx):
    m = certificate_message(0, tx)
    return assemble_certificate(c.genesis, tx, [(i, sign(c.keys[i], m)) for i in (0, 1, 2)],
                                c.directory)

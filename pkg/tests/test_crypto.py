import hashlib
import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdcc.crypto import (
    TAG_FASTPATH,
    TAG_RECONFIG,
    KeyDirectory,
    assemble_certificate,
    attempt_message,
    certificate_message,
    commit_message,
    dedup_votes,
    derive_keypair,
    prepare_message,
    propose_message,
    sign,
    valid_quorum,
    verify,
    verify_certificate,
)
from pdcc.domain import Configuration, ReconfigRequest, Transaction, canonical_encode, quorum_params
from pdcc.errors import BadSignature, InsufficientSignatures, NonMemberSigner

TX = Transaction("alice", "bob", 5, 0)


@pytest.fixture(params=["hmac", "ed25519"])
def keyring(request):
    keys = {i: derive_keypair(str(i), scheme=request.param) for i in range(6)}
    return keys, KeyDirectory(keys)


def votes_for(keys, signers, message):
    return [(s, sign(keys[s], message)) for s in signers]


def test_sha256_oracle():
    assert hashlib.sha256(b"").hexdigest() == \
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_sign_and_verify(keyring):
    keys, directory = keyring
    sig = sign(keys[0], b"hello")
    assert verify(keys[0], b"hello", sig)
    assert not verify(keys[0], b"hellO", sig)
    assert not verify(keys[1], b"hello", sig)
    assert directory.verify(0, b"hello", sig) and not directory.verify(1, b"hello", sig)
    assert not directory.verify(99, b"hello", sig)
    assert not directory.verify(0, b"hello", "not bytes")


def test_signatures_are_deterministic_per_seed():
    a, b = derive_keypair("3", seed=1), derive_keypair("3", seed=1)
    assert sign(a, b"m") == sign(b, b"m")
    assert sign(a, b"m") != sign(derive_keypair("3", seed=2), b"m")


def test_certificate_message_is_tagged_encoding():
    assert certificate_message(4, TX) == canonical_encode((TAG_FASTPATH, 4, TX))
    req = ReconfigRequest(4, (0, 1, 2))
    assert certificate_message(4, req) == canonical_encode((TAG_RECONFIG, 4, req))


def test_message_classes_never_collide():
    h = b"\x01" * 32
    msgs = [certificate_message(0, TX), certificate_message(1, TX),
            certificate_message(0, ReconfigRequest(0, (0, 1))),
            prepare_message(0, 0, 0, h), commit_message(0, 0, h), propose_message(0, 0, 0, h),
            attempt_message(0, 0, 1, h, 0), attempt_message(0, 0, 1, None, None)]
    assert len(set(msgs)) == len(msgs)


def test_no_two_disjoint_quorums_of_four():
    # brute force: every pair of 3-subsets of 4 members intersects
    members = range(4)
    qs = list(itertools.combinations(members, 3))
    assert all(set(a) & set(b) for a, b in itertools.product(qs, qs))


@pytest.mark.parametrize("n", range(1, 9))
def test_quorum_intersection_size(n):
    # the smallest overlap of two quorums is 2Q - n; it holds a correct member
    # (f + 1 or more) exactly when n = 3f + 1
    f, q = quorum_params(n)
    smallest = min(len(set(a) & set(b))
                   for a, b in itertools.product(itertools.combinations(range(n), q), repeat=2))
    assert smallest == max(0, 2 * q - n)
    assert (smallest >= f + 1) == (n == 3 * f + 1)


def test_valid_quorum(keyring):
    keys, directory = keyring
    cfg = Configuration(0, (0, 1, 2, 3))
    m = certificate_message(0, TX)
    three = votes_for(keys, [0, 1, 2], m)
    assert valid_quorum(cfg, m, three, directory)
    assert not valid_quorum(cfg, m, three[:2], directory)
    assert not valid_quorum(cfg, m, three[:2] + [three[0]], directory), "duplicates count once"
    assert not valid_quorum(cfg, m, three[:2] + votes_for(keys, [4], m), directory)
    assert not valid_quorum(cfg, m, three + votes_for(keys, [4], m), directory), "non-member listed"
    forged = three[:2] + [(2, sign(keys[2], b"other"))]
    assert not valid_quorum(cfg, m, forged, directory)
    # repeated checks hit the cache and agree
    assert valid_quorum(cfg, m, three, directory) and not valid_quorum(cfg, m, forged, directory)


def test_assemble_certificate(keyring):
    keys, directory = keyring
    cfg = Configuration(0, (0, 1, 2, 3))
    m = certificate_message(0, TX)
    cert = assemble_certificate(cfg, TX, votes_for(keys, [2, 0, 1, 0], m), directory)
    assert cert.signers == (0, 1, 2)
    assert verify_certificate(cfg, cert, directory)
    assert not verify_certificate(Configuration(1, (0, 1, 2, 3)), cert, directory)
    with pytest.raises(InsufficientSignatures):
        assemble_certificate(cfg, TX, votes_for(keys, [0, 1], m), directory)
    with pytest.raises(NonMemberSigner):
        assemble_certificate(cfg, TX, votes_for(keys, [0, 1, 5], m), directory)
    with pytest.raises(BadSignature):
        assemble_certificate(cfg, TX, [(0, b"\0" * 32)] + votes_for(keys, [1, 2], m), directory)


def test_certificate_for_one_epoch_fails_under_another(keyring):
    keys, directory = keyring
    cfg0, cfg1 = Configuration(0, (0, 1, 2, 3)), Configuration(1, (0, 1, 2, 3))
    cert = assemble_certificate(cfg0, TX, votes_for(keys, [0, 1, 2], certificate_message(0, TX)),
                                directory)
    assert not valid_quorum(cfg1, certificate_message(1, TX), cert.signatures, directory)


def test_directory_public_roundtrip(keyring):
    keys, directory = keyring
    again = KeyDirectory.from_public_hex(directory.public_hex())
    sig = sign(keys[3], b"x")
    assert again.verify(3, b"x", sig) and not again.verify(2, b"x", sig)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 5), st.binary(min_size=1, max_size=4)), max_size=10))
def test_dedup_votes_keeps_first_per_signer(votes):
    out = dedup_votes(votes)
    assert [s for s, _ in out] == sorted({s for s, _ in votes})
    first = {}
    for s, sig in votes:
        first.setdefault(s, sig)
    assert dict(out) == first


@settings(max_examples=150, deadline=None)
@given(st.sets(st.integers(0, 5), max_size=6), st.sets(st.integers(0, 5), max_size=6))
def test_valid_quorum_matches_set_arithmetic(signers, forged):
    keys = {i: derive_keypair(str(i)) for i in range(6)}
    directory = KeyDirectory(keys)
    cfg = Configuration(0, (0, 1, 2, 3))
    m = certificate_message(0, TX)
    votes = [(s, sign(keys[s], b"bogus" if s in forged else m)) for s in sorted(signers)]
    expected = (signers <= set(cfg.members) and not (signers & forged) and len(signers) >= cfg.q)
    assert valid_quorum(cfg, m, votes, directory) == expected

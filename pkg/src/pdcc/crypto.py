"""Signature schemes, domain-separated signing messages and certificate assembly.

The default scheme is a deterministic keyed MAC (HMAC-SHA256).  Under it the
"public" half of a key pair equals the secret, and the scenario-wide
:class:`KeyDirectory` lets any node verify any signer.  An Ed25519 scheme is
available behind the same interface.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from typing import Iterable, Optional, Union

from .domain import (
    Certificate,
    Configuration,
    ReconfigRequest,
    Transaction,
    ValidatorId,
    canonical_encode,
)
from .errors import BadSignature, InsufficientSignatures, NonMemberSigner

# Message-class tags; signatures never verify across classes.
TAG_FASTPATH = "fastpath-vote"
TAG_RECONFIG = "reconfig-vote"
TAG_PROPOSE = "settle-propose"
TAG_PREPARE = "settle-prepare"
TAG_COMMIT = "settle-commit"
TAG_ATTEMPT = "settle-attempt-change"


@dataclass(frozen=True)
class KeyPair:
    secret: bytes
    public: bytes
    scheme: str = "hmac"


def hmac_keypair(secret: bytes) -> KeyPair:
    return KeyPair(secret, secret, "hmac")


def ed25519_keypair(seed: bytes) -> KeyPair:
    from cryptography.hazmat.primitives import serialization
    from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

    sk = Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest())
    pub = sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return KeyPair(hashlib.sha256(seed).digest(), pub, "ed25519")


def derive_keypair(label: str, seed: int = 0, scheme: str = "hmac") -> KeyPair:
    raw = hashlib.sha256(f"pdcc-key/{seed}/{label}".encode()).digest()
    return ed25519_keypair(raw) if scheme == "ed25519" else hmac_keypair(raw)


def sign(secret: KeyPair, message: bytes) -> bytes:
    if secret.scheme == "hmac":
        return hmac.new(secret.secret, message, hashlib.sha256).digest()
    if secret.scheme == "ed25519":
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        return Ed25519PrivateKey.from_private_bytes(secret.secret).sign(message)
    raise ValueError(f"unknown scheme {secret.scheme}")


def verify(pub: KeyPair | bytes, message: bytes, sig: bytes, scheme: str = "hmac") -> bool:
    """True iff ``sig`` is a valid signature over ``message``; never raises."""
    if isinstance(pub, KeyPair):
        pub, scheme = pub.public, pub.scheme
    try:
        if scheme == "hmac":
            expected = hmac.new(pub, message, hashlib.sha256).digest()
            return hmac.compare_digest(expected, sig)
        if scheme == "ed25519":
            from cryptography.exceptions import InvalidSignature
            from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

            try:
                Ed25519PublicKey.from_public_bytes(pub).verify(sig, message)
                return True
            except InvalidSignature:
                return False
    except (TypeError, ValueError):
        return False
    return False


class KeyDirectory:
    """Scenario-wide map ``ValidatorId -> public key`` with a verification cache."""

    def __init__(self, keys: dict[ValidatorId, KeyPair]):
        self._pub = {vid: (kp.public, kp.scheme) for vid, kp in keys.items()}
        self._cache: dict[tuple, bool] = {}
        self.quorum_cache: dict[tuple, bool] = {}

    def __contains__(self, vid) -> bool:
        return vid in self._pub

    def __deepcopy__(self, memo):
        return self

    def public_hex(self) -> dict[int, tuple[str, str]]:
        return {vid: (pub.hex(), scheme) for vid, (pub, scheme) in sorted(self._pub.items())}

    @classmethod
    def from_public_hex(cls, table: dict) -> "KeyDirectory":
        d = cls({})
        d._pub = {int(vid): (bytes.fromhex(pub), scheme) for vid, (pub, scheme) in table.items()}
        return d

    def remember_quorum(self, key: tuple, ok: bool) -> None:
        if len(self.quorum_cache) > 100_000:
            self.quorum_cache.clear()
        self.quorum_cache[key] = ok

    def verify(self, signer: ValidatorId, message: bytes, sig: bytes) -> bool:
        entry = self._pub.get(signer)
        if entry is None or not isinstance(sig, bytes):
            return False
        key = (signer, message, sig)
        hit = self._cache.get(key)
        if hit is None:
            hit = verify(entry[0], message, sig, entry[1])
            if len(self._cache) > 200_000:
                self._cache.clear()
            self._cache[key] = hit
        return hit


# ---------------------------------------------------------------------------
# signing messages


def certificate_message(config_index: int, payload: Union[Transaction, ReconfigRequest]) -> bytes:
    tag = TAG_RECONFIG if isinstance(payload, ReconfigRequest) else TAG_FASTPATH
    # same bytes as canonical_encode((tag, config_index, payload)), reusing the payload's cache
    return _CERT_PREFIX[tag] + canonical_encode(config_index) + payload.encoded


# list header for a 3-tuple followed by the encoded tag
_CERT_PREFIX = {t: b"L" + (3).to_bytes(4, "big") + canonical_encode(t) for t in (TAG_FASTPATH, TAG_RECONFIG)}


def prepare_message(c: int, slot: int, attempt: int, payload_hash: bytes) -> bytes:
    return canonical_encode((TAG_PREPARE, c, slot, attempt, payload_hash))


def commit_message(c: int, slot: int, payload_hash: bytes) -> bytes:
    return canonical_encode((TAG_COMMIT, c, slot, payload_hash))


def propose_message(c: int, slot: int, attempt: int, payload_hash: bytes) -> bytes:
    return canonical_encode((TAG_PROPOSE, c, slot, attempt, payload_hash))


def attempt_message(c: int, slot: int, attempt: int, prepared_hash: Optional[bytes],
                    prepared_attempt: Optional[int]) -> bytes:
    return canonical_encode((TAG_ATTEMPT, c, slot, attempt, prepared_hash, prepared_attempt))


# ---------------------------------------------------------------------------
# quorum checks


def valid_quorum(config: Configuration, message: bytes, votes: Iterable[tuple[int, bytes]],
                 directory: KeyDirectory) -> bool:
    """Q distinct member signers, every listed signature valid, no non-members."""
    votes = tuple(votes)
    key = (config.index, config.members, message, votes)
    try:
        hit = directory.quorum_cache.get(key)
    except TypeError:  # unhashable vote entries
        key, hit = None, None
    if hit is not None:
        return hit
    seen = set()
    ok = True
    for signer, sig in votes:
        if signer not in config or not directory.verify(signer, message, sig):
            ok = False
            break
        seen.add(signer)
    ok = ok and len(seen) >= config.q
    if key is not None:
        directory.remember_quorum(key, ok)
    return ok


def dedup_votes(votes: Iterable[tuple[int, bytes]]) -> tuple[tuple[int, bytes], ...]:
    out: dict[int, bytes] = {}
    for signer, sig in votes:
        out.setdefault(signer, sig)
    return tuple(sorted(out.items()))


def assemble_certificate(config: Configuration, payload: Union[Transaction, ReconfigRequest],
                         votes: Iterable[tuple[int, bytes]], directory: KeyDirectory) -> Certificate:
    message = certificate_message(config.index, payload)
    unique = dedup_votes(votes)
    for signer, sig in unique:
        if signer not in config:
            raise NonMemberSigner(f"validator {signer} is not in configuration {config.index}")
        if not directory.verify(signer, message, sig):
            raise BadSignature(f"signature by {signer} does not verify")
    if len(unique) < config.q:
        raise InsufficientSignatures(f"{len(unique)} distinct signers < quorum {config.q}")
    return Certificate(config.index, payload, unique)


def verify_certificate(config: Configuration, cert: Certificate, directory: KeyDirectory) -> bool:
    if cert.config_index != config.index:
        return False
    return valid_quorum(config, certificate_message(cert.config_index, cert.payload),
                        cert.signatures, directory)

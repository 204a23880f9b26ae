"""Core value types, quorum arithmetic, canonical encoding and digests.

All protocol objects are frozen dataclasses.  Their canonical byte encoding
is a self-delimiting prefix code (type tag, then length-prefixed content,
integers as 8-byte big-endian), so it is deterministic and injective within
and across types.  Sets are always stored and encoded sorted.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct
import types
import typing
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Iterable, Optional, Union

from .errors import EncodingError, InvalidConfiguration, InvalidMembership, InvalidTransaction

ValidatorId = int
AccountId = str
Digest = bytes
Signature = bytes
Vote = tuple  # (ValidatorId, Signature)

U64_MAX = 2**64 - 1


def quorum_params(n: int) -> tuple[int, int]:
    """Return ``(f, q)`` for a configuration of ``n`` members."""
    if n < 1:
        raise InvalidConfiguration(f"member count must be >= 1, got {n}")
    f = (n - 1) // 3
    return f, 2 * f + 1


# ---------------------------------------------------------------------------
# canonical encoding

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


def _enc_int(value: int, out: bytearray) -> None:
    if not 0 <= value <= U64_MAX:
        raise EncodingError(f"integer out of u64 range: {value}")
    out += b"I"
    out += _U64.pack(value)


def _enc_bytes(value: bytes, out: bytearray) -> None:
    out += b"Y"
    out += _U32.pack(len(value))
    out += value


def _enc_str(value: str, out: bytearray) -> None:
    raw = value.encode("utf-8")
    out += b"S"
    out += _U32.pack(len(raw))
    out += raw


def _enc_seq(value, out: bytearray) -> None:
    out += b"L"
    out += _U32.pack(len(value))
    for item in value:
        enc = _BY_TYPE.get(type(item))
        if enc is None:
            _enc(item, out)
        else:
            enc(item, out)


def _enc_set(value, out: bytearray) -> None:
    parts = sorted(canonical_encode(item) for item in value)
    out += b"E"
    out += _U32.pack(len(parts))
    for part in parts:
        out += part


def _enc_map(value: dict, out: bytearray) -> None:
    parts = sorted((canonical_encode(k), canonical_encode(v)) for k, v in value.items())
    out += b"M"
    out += _U32.pack(len(parts))
    for k, v in parts:
        out += k
        out += v


_BY_TYPE = {
    type(None): lambda value, out: out.extend(b"N"),
    bool: lambda value, out: out.extend(b"T" if value else b"F"),
    int: _enc_int,
    bytes: _enc_bytes,
    str: _enc_str,
    tuple: _enc_seq,
    list: _enc_seq,
    set: _enc_set,
    frozenset: _enc_set,
    dict: _enc_map,
}


def _enc(value: Any, out: bytearray) -> None:
    enc = _BY_TYPE.get(type(value))
    if enc is not None:
        enc(value, out)
    elif isinstance(value, Record):
        out += value.encoded
    elif dataclasses.is_dataclass(value) and not isinstance(value, type):
        out += _encode_record(value)
    elif isinstance(value, bool):
        out += b"T" if value else b"F"
    elif isinstance(value, int):
        _enc_int(int(value), out)
    elif isinstance(value, bytes):
        _enc_bytes(bytes(value), out)
    elif isinstance(value, str):
        _enc_str(str(value), out)
    elif isinstance(value, (tuple, list)):
        _enc_seq(value, out)
    elif isinstance(value, (set, frozenset)):
        _enc_set(value, out)
    elif isinstance(value, dict):
        _enc_map(value, out)
    else:
        raise EncodingError(f"cannot encode {type(value).__name__}")


_FIELDS: dict[type, tuple] = {}


def _encode_record(value: Any) -> bytes:
    cls = type(value)
    names = _FIELDS.get(cls)
    if names is None:
        names = _FIELDS[cls] = tuple(f.name for f in dataclasses.fields(value) if f.compare)
    out = bytearray(b"D")
    _enc_str(cls.__name__, out)
    out += _U32.pack(len(names))
    for name in names:
        _enc(getattr(value, name), out)
    return bytes(out)


def canonical_encode(value: Any) -> bytes:
    """Deterministic, injective byte encoding of a domain value."""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return value.encoded if isinstance(value, Record) else _encode_record(value)
    out = bytearray()
    _enc(value, out)
    return bytes(out)


def digest(data: bytes) -> Digest:
    return hashlib.sha256(data).digest()


def digest_of(value: Any) -> Digest:
    if isinstance(value, Record):
        return value.digest
    return digest(canonical_encode(value))


class Record:
    """Mixin for frozen dataclasses: memoized canonical bytes and digest."""

    @cached_property
    def encoded(self) -> bytes:
        return _encode_record(self)

    @cached_property
    def digest(self) -> Digest:
        return hashlib.sha256(self.encoded).digest()

    @cached_property
    def jsonable(self) -> dict:
        # shared between callers; treat as read-only
        out = {"_t": type(self).__name__}
        for f in dataclasses.fields(self):
            if f.compare:
                out[f.name] = to_jsonable(getattr(self, f.name))
        return out

    # immutable: copies may share the instance
    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self


def _sorted_ids(ids: Iterable[int], exc) -> tuple[int, ...]:
    ids = tuple(ids)
    if not ids:
        raise exc("member set is empty")
    if len(set(ids)) != len(ids):
        raise exc(f"duplicate member ids in {ids}")
    if any((not isinstance(i, int)) or isinstance(i, bool) or i < 0 for i in ids):
        raise exc(f"member ids must be non-negative integers: {ids}")
    return tuple(sorted(ids))


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Configuration(Record):
    index: int
    members: tuple[ValidatorId, ...]

    def __post_init__(self):
        if self.index < 0:
            raise InvalidConfiguration("epoch index must be >= 0")
        object.__setattr__(self, "members", _sorted_ids(self.members, InvalidConfiguration))

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def f(self) -> int:
        return quorum_params(self.n)[0]

    @property
    def q(self) -> int:
        return quorum_params(self.n)[1]

    @cached_property
    def member_set(self) -> frozenset:
        return frozenset(self.members)

    def __contains__(self, vid: ValidatorId) -> bool:
        return vid in self.member_set


@dataclass(frozen=True)
class Transaction(Record):
    sender: AccountId
    recipient: AccountId
    amount: int
    nonce: int

    def __post_init__(self):
        if self.sender == self.recipient:
            raise InvalidTransaction("sender and recipient must differ")
        if not 0 < self.amount <= U64_MAX:
            raise InvalidTransaction(f"amount must be positive u64, got {self.amount}")
        if not 0 <= self.nonce <= U64_MAX:
            raise InvalidTransaction(f"bad nonce {self.nonce}")


@dataclass(frozen=True)
class ReconfigRequest(Record):
    current_index: int
    next_members: tuple[ValidatorId, ...]

    def __post_init__(self):
        if self.current_index < 0:
            raise InvalidMembership("epoch index must be >= 0")
        object.__setattr__(self, "next_members", _sorted_ids(self.next_members, InvalidMembership))


@dataclass(frozen=True)
class Certificate(Record):
    config_index: int
    payload: Union[Transaction, ReconfigRequest]
    signatures: tuple[tuple[int, bytes], ...]

    @property
    def signers(self) -> tuple[ValidatorId, ...]:
        return tuple(s for s, _ in self.signatures)


@dataclass(frozen=True)
class ReconfigProposal(Record):
    from_index: int
    to_index: int
    next_members: tuple[ValidatorId, ...]
    request_cert: Certificate
    proposer_state_digest: bytes

    def well_formed(self) -> bool:
        req = self.request_cert.payload
        return (
            self.to_index == self.from_index + 1
            and isinstance(req, ReconfigRequest)
            and self.request_cert.config_index == self.from_index
            and req.current_index == self.from_index
            and tuple(req.next_members) == tuple(self.next_members)
        )


@dataclass(frozen=True)
class CheckpointPayload(Record):
    config_index: int
    slot: int
    items: tuple[Union[bytes, ReconfigProposal], ...]
    state_digest: bytes
    admin_data: bytes = b""
    # commit proof of the preceding reconfiguration payload; agreeing on it
    # makes every validator append the same CH entry
    prior_proof: Optional["CommitProof"] = None

    @property
    def reconfig(self) -> Optional[ReconfigProposal]:
        found = [i for i in self.items if isinstance(i, ReconfigProposal)]
        return found[0] if found else None

    @property
    def cert_digests(self) -> tuple[bytes, ...]:
        return tuple(i for i in self.items if isinstance(i, bytes))


@dataclass(frozen=True)
class CommitProof(Record):
    config_index: int
    slot: int
    payload_hash: bytes
    signatures: tuple[tuple[int, bytes], ...]

    @property
    def signers(self) -> tuple[ValidatorId, ...]:
        return tuple(s for s, _ in self.signatures)


@dataclass(frozen=True)
class ConfigHistoryEntry(Record):
    new_index: int
    new_members: tuple[ValidatorId, ...]
    payload_hash: bytes
    proof: Optional[CommitProof]

    @property
    def configuration(self) -> Configuration:
        return Configuration(self.new_index, self.new_members)


def genesis_entry(config: Configuration, accounts: dict) -> ConfigHistoryEntry:
    """CH[0]: the genesis configuration anchored to the genesis state digest."""
    return ConfigHistoryEntry(config.index, config.members, state_digest(accounts), None)


# ---------------------------------------------------------------------------
# account state digests


def accounts_tuple(accounts: dict) -> tuple:
    return tuple((a, bal, nonce) for a, (bal, nonce) in sorted(accounts.items()))


def state_digest(accounts: dict) -> Digest:
    """Digest of an account table ``{account: (balance, next_nonce)}``."""
    for acct, (bal, _nonce) in accounts.items():
        if bal < 0:
            raise InvalidTransaction(f"negative balance for {acct}")
    return digest(canonical_encode(("accounts", accounts_tuple(accounts))))


# ---------------------------------------------------------------------------
# JSON codec for records (used by traces and reports)

_REGISTRY: dict[str, type] = {}


def register(cls):
    _REGISTRY[cls.__name__] = cls
    return cls


for _cls in (Configuration, Transaction, ReconfigRequest, Certificate, ReconfigProposal,
             CheckpointPayload, CommitProof, ConfigHistoryEntry):
    register(_cls)


def to_jsonable(value: Any) -> Any:
    if value is None or isinstance(value, (bool, int, str)):
        return value
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, (tuple, list)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return sorted(to_jsonable(v) for v in value)
    if isinstance(value, Record):
        return value.jsonable
    if dataclasses.is_dataclass(value):
        out = {"_t": type(value).__name__}
        for f in dataclasses.fields(value):
            if f.compare:
                out[f.name] = to_jsonable(getattr(value, f.name))
        return out
    raise EncodingError(f"cannot serialize {type(value).__name__}")


_HINTS: dict[type, dict] = {}


def _hints(cls) -> dict:
    if cls not in _HINTS:
        _HINTS[cls] = typing.get_type_hints(cls)
    return _HINTS[cls]


def _decode(hint: Any, data: Any) -> Any:
    if hint is Any:
        return data
    if hint is bytes:
        return bytes.fromhex(data)
    if hint in (int, str, bool):
        return data
    origin = typing.get_origin(hint)
    if origin is tuple:
        args = typing.get_args(hint)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_decode(args[0], x) for x in data)
        return tuple(_decode(a, x) for a, x in zip(args, data))
    if origin is Union or (hasattr(types, "UnionType") and origin is getattr(types, "UnionType")):
        args = typing.get_args(hint)
        if data is None:
            return None
        if isinstance(data, dict) and "_t" in data:
            return from_jsonable(data)
        for a in args:
            if a is bytes and isinstance(data, str):
                return bytes.fromhex(data)
            if a in (int, str) and isinstance(data, a):
                return data
            if typing.get_origin(a) is tuple and isinstance(data, list):
                return _decode(a, data)
        raise EncodingError(f"cannot decode {data!r} as {hint}")
    if isinstance(hint, type) and dataclasses.is_dataclass(hint):
        return from_jsonable(data)
    raise EncodingError(f"unsupported hint {hint}")


def from_jsonable(data: dict) -> Any:
    try:
        cls = _REGISTRY[data["_t"]]
    except (KeyError, TypeError) as exc:
        raise EncodingError(f"unknown record {data!r:.80}") from exc
    hints = _hints(cls)
    kwargs = {f.name: _decode(hints[f.name], data[f.name])
              for f in dataclasses.fields(cls) if f.compare}
    return cls(**kwargs)

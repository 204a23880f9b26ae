"""Per-account consistent broadcast for payments.

Validators sign at most one transaction per ``(account, nonce)`` slot, accept
only certificates of their installed configuration, and execute certificates
in per-account nonce order (out-of-order arrivals are buffered).
"""

from __future__ import annotations

from typing import Iterable

from .crypto import certificate_message, sign, valid_quorum
from .domain import U64_MAX, Certificate, Transaction
from .errors import (
    AmountOverflow,
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
from .state import NO_EPOCH_CHECK, ValidatorState


def _spendable(v: ValidatorState, sender: str, balance: int, next_nonce: int) -> int:
    locked = 0
    n = next_nonce
    while (sender, n) in v.locks and (sender, n) not in v.executed:
        locked += v.locks[(sender, n)].amount
        n += 1
    return balance - locked


def handle_transfer_order(v: ValidatorState, tx: Transaction, claimed_config: int) -> bytes:
    """Sign ``(claimed_config, tx)`` if this validator may vote for it; record the lock."""
    if not v.is_member:
        raise NotMember(f"validator {v.vid} is not in configuration {v.config.index}")
    if claimed_config != v.config.index:
        raise WrongConfiguration(f"order for epoch {claimed_config}, installed {v.config.index}")
    key = (tx.sender, tx.nonce)
    message = certificate_message(claimed_config, tx)
    locked = v.locks.get(key)
    if locked is not None:
        if locked.digest != tx.digest:
            raise ConflictingTransaction(f"{key} already locked to another transaction")
        return sign(v.keys, message)
    entry = v.accounts.get(tx.sender)
    if entry is None:
        raise UnknownSender(tx.sender)
    balance, next_nonce = entry
    if tx.nonce < next_nonce and v.executed.get(key) == tx.digest:
        # re-certification of an already executed transfer under a newer epoch
        return sign(v.keys, message)
    if tx.nonce != next_nonce:
        raise BadNonce(f"nonce {tx.nonce}, expected {next_nonce}")
    if tx.amount > _spendable(v, tx.sender, balance, next_nonce):
        raise InsufficientFunds(f"{tx.sender} cannot spend {tx.amount}")
    v.locks[key] = tx
    return sign(v.keys, message)


def accept_certificate(v: ValidatorState, cert: Certificate) -> bool:
    """Acceptance rule: the certificate must carry the installed epoch and a valid quorum."""
    if not isinstance(cert.payload, Transaction):
        raise QuorumInvalid("not a transaction certificate")
    if NO_EPOCH_CHECK not in v.mutations:
        if cert.config_index < v.config.index:
            raise StaleConfiguration(f"certificate epoch {cert.config_index} < {v.config.index}")
        if cert.config_index > v.config.index:
            raise FutureConfiguration(f"certificate epoch {cert.config_index} > {v.config.index}")
    message = certificate_message(cert.config_index, cert.payload)
    if not valid_quorum(v.config, message, cert.signatures, v.directory):
        raise QuorumInvalid("certificate does not carry a member quorum")
    return True


def credit(table: dict, account: str, amount: int) -> None:
    bal, nonce = table.get(account, (0, 0))
    if bal + amount > U64_MAX:
        raise AmountOverflow(f"credit to {account} overflows")
    table[account] = (bal + amount, nonce)


def _applicable(table: dict, tx: Transaction) -> bool:
    entry = table.get(tx.sender)
    return entry is not None and entry[1] == tx.nonce and entry[0] >= tx.amount


def apply_transfer(table: dict, tx: Transaction) -> None:
    bal, nonce = table[tx.sender]
    table[tx.sender] = (bal - tx.amount, nonce + 1)
    credit(table, tx.recipient, tx.amount)


def execute_certificate(v: ValidatorState, cert: Certificate) -> list[Certificate]:
    """Execute an accepted certificate; returns every certificate applied as a result.

    Re-executing a known ``(sender, nonce)`` is a no-op.  Certificates that are
    not yet applicable (nonce gap, or funds still in flight) are buffered and
    applied when they become applicable.
    """
    tx = cert.payload
    key = (tx.sender, tx.nonce)
    done = v.executed.get(key)
    if done is not None:
        if done != tx.digest:
            raise ConflictingTransaction(f"{key} executed with a different transaction")
        return []
    entry = v.accounts.get(tx.sender)
    if entry is not None and tx.nonce < entry[1]:
        # already reflected by an adopted snapshot
        return []
    waiting = v.buffered.get(key)
    if waiting is not None and waiting.payload.digest != tx.digest:
        raise ConflictingTransaction(f"{key} buffered with a different transaction")
    v.certs[cert.digest] = cert
    v.buffered.setdefault(key, cert)
    return drain_buffer(v)


def drain_buffer(v: ValidatorState) -> list[Certificate]:
    applied = []
    progress = True
    while progress and v.buffered:
        progress = False
        for key in sorted(v.buffered):
            cert = v.buffered[key]
            entry = v.accounts.get(key[0])
            if key in v.executed or (entry is not None and key[1] < entry[1]):
                del v.buffered[key]
                continue
            if _applicable(v.accounts, cert.payload):
                apply_transfer(v.accounts, cert.payload)
                v.executed[key] = cert.payload.digest
                v.pending[key] = cert
                del v.buffered[key]
                applied.append(cert)
                progress = True
    return applied


def pending_executed_items(v: ValidatorState) -> list[bytes]:
    """Digests of certificates executed since the last checkpoint, by (sender, nonce)."""
    return [v.pending[k].digest for k in sorted(v.pending)]


def apply_batch(table: dict, txs: Iterable[Transaction]) -> dict:
    """Apply a set of transfers to a copy of ``table`` in any feasible order.

    Credits commute, so repeatedly applying whatever is applicable (in
    ``(sender, nonce)`` order) finds a schedule whenever one exists.
    Raises :class:`InvalidItem` if some transfer can never apply.
    """
    out = dict(table)
    todo = sorted(txs, key=lambda t: (t.sender, t.nonce))
    while todo:
        rest = []
        for tx in todo:
            if _applicable(out, tx):
                apply_transfer(out, tx)
            else:
                rest.append(tx)
        if len(rest) == len(todo):
            bad = rest[0]
            raise InvalidItem(f"transfer {bad.sender}/{bad.nonce} cannot be applied")
        todo = rest
    return out

"""Safety and liveness audits over simulation traces.

The :class:`Auditor` consumes trace records one at a time, so the same code
runs online (fail-fast during simulation) and offline (over a JSON Lines
file).  It rebuilds the key directory and every member set from the trace
itself and re-verifies each certificate and commit proof it sees.
Invariant checks quantify over correct validators only.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Union

from .crypto import KeyDirectory, certificate_message, commit_message, valid_quorum
from .domain import (
    Certificate,
    CommitProof,
    ConfigHistoryEntry,
    Configuration,
    Transaction,
    from_jsonable,
    state_digest,
)
from .errors import EncodingError, MalformedTrace

CERTIFICATION = "certification"
MONOTONE = "monotone-install"
SAME_CONFIG = "same-config-delivery"
QUORUM = "quorum-integrity"
CONSERVATION = "conservation"
DOUBLE_SPEND = "no-double-spend"
GST_CONTRACT = "gst-contract"
LIVENESS = "liveness"
SNAPSHOT = "snapshot-roundtrip"

SAFETY_PROPERTIES = (CERTIFICATION, MONOTONE, SAME_CONFIG, QUORUM, CONSERVATION, DOUBLE_SPEND,
                     GST_CONTRACT)
PROPERTIES = SAFETY_PROPERTIES + (SNAPSHOT, LIVENESS)


@dataclass
class Violation:
    property: str
    step: int
    node: Any
    detail: str
    excerpt: list = field(default_factory=list)


@dataclass
class Verdict:
    property: str
    status: str  # "pass" | "fail" | "expected-fail"
    detail: str = ""
    witness: Optional[dict] = None

    @property
    def ok(self) -> bool:
        return self.status != "fail"

    def to_json(self) -> dict:
        return {"property": self.property, "status": self.status, "detail": self.detail,
                "witness": self.witness}


class _Shared(dict):
    """A cache that survives deep copies of the auditor unchanged."""

    def __deepcopy__(self, memo):
        return self


_HANDLERS: dict = {}
_ANY_NODE = frozenset({"cert-formed", "final"})


class Auditor:
    def __init__(self, verify_signatures: bool = True, history: int = 30):
        self.verify_signatures = verify_signatures
        self.history: deque = deque(maxlen=history)
        self.genesis: Optional[dict] = None
        self.directory: Optional[KeyDirectory] = None
        self.corrupt: set = set()
        self.members: dict = {}  # epoch -> Configuration
        self.epochs: dict = {}  # node -> tracked installed epoch
        self.ch_bytes: dict = {}  # index -> entry hex
        self.delivered: dict = {}  # (epoch, slot) -> payload hash hex
        self.executed: dict = {}  # (sender, nonce) -> tx digest hex
        self.node_executed: set = set()  # (node, sender, nonce)
        self.certified: dict = {}  # (sender, nonce) -> tx digest hex
        self.finals: dict = {}
        self.snapshots: list = []
        self.installs: dict = {}  # index -> {node: state digest}
        self.ckpt_digests: dict = {}  # (epoch, slot) -> state digest hex
        self.adopts: list = []  # (node, epoch, slot, state digest hex)
        self.violations: list = []
        self.first: dict = {}
        self.records = 0
        self._decoded = _Shared()
        self._verified = _Shared()
        self._cert_ok = _Shared()
        self._by_id = _Shared()

    # -- helpers --------------------------------------------------------------

    def _fail(self, prop: str, rec: dict, detail: str) -> Violation:
        node = rec.get("node")
        excerpt = [r for r in self.history if r.get("node") == node][-12:]
        if not excerpt or excerpt[-1] is not rec:
            excerpt.append(rec)
        v = Violation(prop, rec.get("step", 0), node, detail, excerpt)
        self.violations.append(v)
        self.first.setdefault(prop, v)
        return v

    def _decode(self, data):
        # online records share their field objects, so identity hits are common
        pinned = self._by_id.get(id(data))
        if pinned is not None and pinned[0] is data:
            return pinned[1]
        key = json.dumps(data, sort_keys=True)
        hit = self._decoded.get(key)
        if hit is None:
            try:
                hit = from_jsonable(data)
            except (EncodingError, KeyError, TypeError, ValueError) as e:
                raise MalformedTrace(f"undecodable record field: {e}") from e
            self._decoded[key] = hit
        if len(self._by_id) > 50_000:
            self._by_id.clear()
        self._by_id[id(data)] = (data, hit)
        return hit

    def _quorum(self, epoch: int, message: bytes, sigs) -> Optional[str]:
        cfg = self.members.get(epoch)
        if cfg is None:
            return f"no member set known for epoch {epoch}"
        signers = [s for s, _ in sigs]
        outsiders = sorted(set(signers) - cfg.member_set)
        if outsiders:
            return f"non-member signers {outsiders} in epoch {epoch}"
        if len(set(signers)) < cfg.q:
            return f"{len(set(signers))} distinct signers < Q={cfg.q}"
        if self.verify_signatures:
            key = (epoch, message, tuple(sigs))
            ok = self._verified.get(key)
            if ok is None:
                ok = valid_quorum(cfg, message, sigs, self.directory)
                self._verified[key] = ok
            if not ok:
                return "signature does not verify"
        return None

    def _cert_problem(self, cert: Certificate) -> Optional[str]:
        if cert.digest in self._cert_ok:
            return None
        why = self._quorum(cert.config_index, certificate_message(cert.config_index, cert.payload),
                           cert.signatures)
        if why is None:
            self._cert_ok[cert.digest] = True
        return why

    def _proof_problem(self, proof: CommitProof, epoch: int) -> Optional[str]:
        if proof.config_index != epoch:
            return f"proof tagged with epoch {proof.config_index}, expected {epoch}"
        return self._quorum(epoch, commit_message(epoch, proof.slot, proof.payload_hash),
                            proof.signatures)

    def _correct(self, node) -> bool:
        return isinstance(node, int) and node not in self.corrupt

    def _learn_entry(self, entry: ConfigHistoryEntry) -> None:
        self.members.setdefault(entry.new_index, entry.configuration)

    def _compare_entry(self, rec: dict, index: int, hexed: str, found: list) -> None:
        prior = self.ch_bytes.setdefault(index, hexed)
        if prior != hexed:
            found.append(self._fail(SAME_CONFIG, rec, f"CH[{index}] differs between validators"))

    def _check_entry(self, rec: dict, entry: ConfigHistoryEntry, found: list) -> None:
        prev = entry.new_index - 1
        if entry.proof is None:
            found.append(self._fail(QUORUM, rec, f"CH[{entry.new_index}] lacks a commit proof"))
            return
        if entry.proof.payload_hash != entry.payload_hash:
            found.append(self._fail(QUORUM, rec, "proof hash differs from entry hash"))
        why = self._proof_problem(entry.proof, prev)
        if why:
            found.append(self._fail(QUORUM, rec, f"CH[{entry.new_index}]: {why}"))

    # -- main entry point -----------------------------------------------------

    def feed(self, rec: dict) -> list:
        """Audit one record; returns the violations it revealed."""
        if not isinstance(rec, dict) or "kind" not in rec:
            raise MalformedTrace(f"record without kind: {rec!r:.80}")
        self.records += 1
        kind = rec["kind"]
        found: list = []
        if self.genesis is None:
            if kind != "genesis":
                raise MalformedTrace("trace must start with a genesis record")
            self._on_genesis(rec)
            self.history.append(rec)
            return found
        node = rec.get("node")
        name = _HANDLERS.get(kind)
        if name is None:
            name = _HANDLERS[kind] = "_on_" + kind.replace("-", "_")
        handler = getattr(self, name, None)
        if handler is not None and (kind in _ANY_NODE or self._correct(node)):
            try:
                handler(rec, found)
            except KeyError as e:
                raise MalformedTrace(f"{kind} record missing field {e}") from e
        self.history.append(rec)
        return found

    def _on_genesis(self, rec: dict) -> None:
        try:
            self.genesis = rec
            self.directory = KeyDirectory.from_public_hex(
                {int(k): tuple(v) for k, v in rec["keys"].items()})
            g = rec["genesis"]
            self.members[0] = Configuration(g["index"], g["members"])
            self.corrupt = {int(k) for k in rec.get("corrupt", {})}
            for vid in rec["validators"]:
                self.epochs[vid] = 0
            self.supply = int(rec["supply"])
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedTrace(f"bad genesis record: {e}") from e

    def _on_accept(self, rec: dict, found: list) -> None:
        cert = self._decode(rec["cert"])
        node = rec["node"]
        if cert.config_index != self.epochs.get(node, 0):
            found.append(self._fail(CERTIFICATION, rec,
                                    f"accepted epoch-{cert.config_index} certificate while installed "
                                    f"epoch {self.epochs.get(node, 0)}"))
        why = self._cert_problem(cert)
        if why:
            found.append(self._fail(QUORUM, rec, f"accepted certificate: {why}"))
        self._certified(rec, cert, found)

    def _certified(self, rec: dict, cert: Certificate, found: list) -> None:
        if not isinstance(cert.payload, Transaction):
            return
        tx = cert.payload
        key = (tx.sender, tx.nonce)
        prior = self.certified.setdefault(key, tx.digest.hex())
        if prior != tx.digest.hex():
            found.append(self._fail(DOUBLE_SPEND, rec,
                                    f"two different transactions certified for {key}"))

    def _on_cert_formed(self, rec: dict, found: list) -> None:
        cert = self._decode(rec["cert"])
        why = self._cert_problem(cert)
        if why:
            found.append(self._fail(QUORUM, rec, f"formed certificate: {why}"))
            return
        self._certified(rec, cert, found)

    def _on_execute(self, rec: dict, found: list) -> None:
        node = rec["node"]
        key = (rec["sender"], rec["nonce"])
        if (node,) + key in self.node_executed:
            found.append(self._fail(DOUBLE_SPEND, rec, f"{key} executed twice by one validator"))
        self.node_executed.add((node,) + key)
        prior = self.executed.setdefault(key, rec["tx"])
        if prior != rec["tx"]:
            found.append(self._fail(DOUBLE_SPEND, rec, f"validators executed different txs at {key}"))
        if rec["supply"] != self.supply:
            found.append(self._fail(CONSERVATION, rec,
                                    f"supply {rec['supply']} differs from genesis {self.supply}"))

    def _on_deliver_checkpoint(self, rec: dict, found: list) -> None:
        key = (rec["epoch"], rec["slot"])
        self.ckpt_digests.setdefault(key, rec["state_digest"])
        prior = self.delivered.setdefault(key, rec["hash"])
        if prior != rec["hash"]:
            found.append(self._fail(SAME_CONFIG, rec, f"different payloads delivered at {key}"))
        proof = self._decode(rec["proof"])
        if proof.payload_hash.hex() != rec["hash"] or proof.slot != rec["slot"]:
            found.append(self._fail(QUORUM, rec, "commit proof does not match the delivered payload"))
        why = self._proof_problem(proof, rec["epoch"])
        if why:
            found.append(self._fail(QUORUM, rec, f"commit proof: {why}"))

    def _on_install(self, rec: dict, found: list) -> None:
        node = rec["node"]
        entry = self._decode(rec["entry"])
        if entry.encoded.hex() != rec["entry_hex"]:
            found.append(self._fail(SAME_CONFIG, rec, "entry bytes do not match the entry"))
        current = self.epochs.get(node, 0)
        if entry.new_index != current + 1:
            found.append(self._fail(MONOTONE, rec, f"installed {entry.new_index} after {current}"))
        self._compare_entry(rec, entry.new_index, rec["entry_hex"], found)
        self._check_entry(rec, entry, found)
        self._learn_entry(entry)
        self.epochs[node] = entry.new_index
        self.installs.setdefault(entry.new_index, {})[node] = rec.get("state_digest")

    def _on_adopt_snapshot(self, rec: dict, found: list) -> None:
        node = rec["node"]
        for i, data in enumerate(rec["entries"]):
            entry = self._decode(data)
            self._compare_entry(rec, i, rec["ch"][i], found)
            if i > 0:
                self._check_entry(rec, entry, found)
            self._learn_entry(entry)
        if rec["epoch"] < self.epochs.get(node, 0):
            found.append(self._fail(MONOTONE, rec, "adopted a snapshot behind the installed epoch"))
        self.epochs[node] = rec["epoch"]
        self.adopts.append((node, rec["epoch"], rec["slot"], rec["state_digest"]))
        if rec["supply"] != self.supply:
            found.append(self._fail(CONSERVATION, rec, "adopted snapshot changes the supply"))

    def _on_tally(self, rec: dict, found: list) -> None:
        cfg = self.members.get(rec["epoch"])
        if rec["counted"] and (cfg is None or rec["signer"] not in cfg):
            found.append(self._fail(QUORUM, rec,
                                    f"vote of non-member {rec['signer']} counted in epoch {rec['epoch']}"))

    def _on_snapshot(self, rec: dict, found: list) -> None:
        self.snapshots.append(rec)

    def _on_deliver(self, rec: dict, found: list) -> None:
        sent = rec.get("sent")
        net = self.genesis.get("network")
        if sent is None or net is None or not self._correct(rec.get("src")):
            return
        if sent >= net["gst"] and rec["time"] - sent > net["delta"]:
            found.append(self._fail(GST_CONTRACT, rec,
                                    f"message sent at {sent} after GST arrived at {rec['time']}"))

    def _on_final(self, rec: dict, found: list) -> None:
        self.finals[rec["node"]] = rec

    # -- verdicts -------------------------------------------------------------

    def witness(self, v: Violation) -> dict:
        g = self.genesis or {}
        return {"scenario": g.get("scenario"), "seed": g.get("seed"), "step": v.step,
                "node": v.node, "property": v.property, "detail": v.detail, "excerpt": v.excerpt}

    def verdict(self, prop: str, goals=None) -> Verdict:
        if prop == LIVENESS:
            return self.liveness(goals)
        if prop == SNAPSHOT:
            return self.snapshot_roundtrip()
        v = self.first.get(prop)
        if v is None:
            return Verdict(prop, "pass")
        return Verdict(prop, "fail", v.detail, self.witness(v))

    def verdicts(self, goals=None) -> dict:
        return {p: self.verdict(p, goals) for p in PROPERTIES}

    def _configs(self) -> list:
        g = self.genesis
        configs = [self.members.get(0) or Configuration(0, g["genesis"]["members"])]
        for i, s in enumerate(g.get("script", [])):
            configs.append(Configuration(i + 1, s["next_members"]))
        return configs

    def _digest_at(self, epoch: int, next_slot: int) -> Optional[str]:
        """State digest a node positioned at ``(epoch, next_slot)`` must hold."""
        if next_slot > 0:
            return self.ckpt_digests.get((epoch, next_slot - 1))
        if epoch == 0:
            accounts = {a: (int(b), 0) for a, b in self.genesis.get("accounts", {}).items()}
            return state_digest(accounts).hex()
        peers = {d for n, d in self.installs.get(epoch, {}).items()}
        return peers.pop() if len(peers) == 1 else None

    def snapshot_roundtrip(self) -> Verdict:
        """Each correct joiner accepted a correct server's snapshot and matches its peers' state."""
        g = self.genesis
        if g is None:
            return Verdict(SNAPSHOT, "pass", "empty trace")
        configs = self._configs()
        problems = []
        for k in range(1, len(configs)):
            joiners = sorted(configs[k].member_set - configs[k - 1].member_set - self.corrupt)
            for j in joiners:
                if self.epochs.get(j, 0) < k:
                    continue  # never joined; liveness reports it
                served = [r for r in self.snapshots if r["node"] == j and r.get("accepted")
                          and self._correct(r.get("server"))]
                if not served:
                    problems.append(f"joiner {j} accepted no snapshot from a correct validator")
                for r in served:
                    want = self._digest_at(r["epoch"], r["slot"])
                    if want is not None and want != r["state_digest"]:
                        problems.append(f"snapshot served to {j} at {(r['epoch'], r['slot'])} "
                                        f"differs from the checkpoint")
                for node, epoch, slot, dg in self.adopts:
                    want = self._digest_at(epoch, slot)
                    if node == j and want is not None and want != dg:
                        problems.append(f"joiner {j} adopted state differing at {(epoch, slot)}")
                mine = self.installs.get(k, {}).get(j)
                peers = {d for n, d in self.installs.get(k, {}).items() if n != j}
                if mine is not None and peers and peers != {mine}:
                    problems.append(f"joiner {j} install digest for epoch {k} differs from peers")
        if not problems:
            return Verdict(SNAPSHOT, "pass")
        status = "fail" if g.get("assumptions_hold", True) else "expected-fail"
        return Verdict(SNAPSHOT, status, "; ".join(problems[:5]),
                       {"scenario": g.get("scenario"), "seed": g.get("seed"), "step": 0,
                        "property": SNAPSHOT, "detail": problems[:20], "excerpt": []})

    def liveness(self, goals=None) -> Verdict:
        g = self.genesis
        if g is None:
            return Verdict(LIVENESS, "pass", "empty trace")
        goals = g.get("goals", []) if goals is None else goals
        if not goals:
            return Verdict(LIVENESS, "pass", "no goals")
        if not self.finals:
            raise MalformedTrace("liveness needs the final records of a completed run")
        configs = self._configs()
        missing = []
        for goal in goals:
            if "installed" in goal:
                k = int(goal["installed"])
                need = set(configs[k].members) | (set(configs[k - 1].members) if k > 0 else set())
                for vid in sorted(need - self.corrupt):
                    fin = self.finals.get(vid)
                    if fin is None or fin["epoch"] < k:
                        missing.append(f"validator {vid} did not install epoch {k}")
            if goal.get("transfers"):
                for vid in sorted(set(configs[-1].members) - self.corrupt):
                    nonces = self.finals.get(vid, {}).get("nonces", {})
                    for account, count in g.get("transfers", {}).items():
                        if nonces.get(account, 0) < count:
                            missing.append(f"validator {vid} executed {nonces.get(account, 0)}/"
                                           f"{count} transfers of {account}")
        if not missing:
            return Verdict(LIVENESS, "pass")
        status = "fail" if g.get("assumptions_hold", True) else "expected-fail"
        return Verdict(LIVENESS, status, "; ".join(missing[:5]),
                       {"scenario": g.get("scenario"), "seed": g.get("seed"),
                        "step": max((f["step"] for f in self.finals.values()), default=0),
                        "property": LIVENESS, "detail": missing[:20], "excerpt": []})


# ---------------------------------------------------------------------------
# offline API

Trace = Union[str, Path, Iterable[dict]]


def iter_trace(trace: Trace) -> Iterable[dict]:
    if isinstance(trace, (str, Path)):
        with open(trace) as fh:
            for n, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        yield json.loads(line)
                    except json.JSONDecodeError as e:
                        raise MalformedTrace(f"line {n}: {e}") from e
    else:
        yield from trace


def audit(trace: Trace, verify_signatures: bool = True) -> Auditor:
    a = Auditor(verify_signatures)
    for rec in iter_trace(trace):
        a.feed(rec)
    return a


def _single(trace: Trace, *props: str) -> Verdict:
    a = audit(trace)
    for p in props:
        v = a.verdict(p)
        if not v.ok:
            return v
    return Verdict(props[0], "pass")


def check_invariant_certification(trace: Trace) -> Verdict:
    return _single(trace, CERTIFICATION)


def check_same_config_delivery(trace: Trace) -> Verdict:
    return _single(trace, SAME_CONFIG)


def check_quorum_integrity(trace: Trace) -> Verdict:
    return _single(trace, QUORUM)


def check_conservation_and_no_double_spend(trace: Trace) -> Verdict:
    v = _single(trace, CONSERVATION, DOUBLE_SPEND)
    return Verdict("conservation-and-no-double-spend", v.status, v.detail, v.witness)


def check_snapshot_roundtrip(trace: Trace) -> Verdict:
    return audit(trace).snapshot_roundtrip()


def check_liveness(trace: Trace, goals=None) -> Verdict:
    return audit(trace).liveness(goals)


def check_all(trace: Trace, goals=None) -> dict:
    return audit(trace).verdicts(goals)


def report(verdicts: dict) -> dict:
    return {
        "passed": all(v.ok for v in verdicts.values()),
        "properties": {p: v.to_json() for p, v in verdicts.items()},
    }

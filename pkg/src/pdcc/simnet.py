"""Deterministic discrete-event network simulator.

Events are ordered by ``(time, seq)`` where ``seq`` is a counter, so a run
is a pure function of the scenario and the seed.  Before GST a message may
take arbitrarily long (bounded by GST + delta, modeling retransmission);
after GST every message arrives within delta.  Messages a node sends to
itself are handled immediately, inside the same step.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

from .crypto import KeyDirectory, derive_keypair, hmac_keypair
from .domain import Configuration
from .errors import FaultBoundViolation, OverlapViolation, ParseError, ProtocolError
from .node import (
    BEHAVIORS,
    AdminClient,
    ClientNode,
    EquivocatingClient,
    NodeParams,
    ScheduledTransfer,
    ValidatorNode,
)
from .state import MUTATIONS, ValidatorState

CATALOG = tuple(sorted(BEHAVIORS))


@dataclass
class NetworkConfig:
    delta: int = 10
    gst: int = 0
    pre_gst_max_delay: int = 100
    retransmit_prob: float = 0.1


@dataclass
class ClientSpec:
    id: str
    account: str
    transfers: list = field(default_factory=list)  # list[ScheduledTransfer]
    behavior: str = "honest"
    at: int = 0
    recipients: tuple = ()


@dataclass
class RandomTransfers:
    count: int
    max_amount: int = 10
    spacing: int = 5
    start: int = 10


@dataclass
class Scenario:
    name: str
    validators: list
    genesis_members: tuple
    accounts: dict
    keys: dict = field(default_factory=dict)  # vid -> secret bytes
    scheme: str = "hmac"
    clients: list = field(default_factory=list)
    random_transfers: Optional[RandomTransfers] = None
    script: list = field(default_factory=list)  # [(at, next_members)]
    corrupt: dict = field(default_factory=dict)  # vid -> behavior
    crash_at: int = 0
    network: NetworkConfig = field(default_factory=NetworkConfig)
    params: NodeParams = field(default_factory=NodeParams)
    goals: list = field(default_factory=list)
    mutations: frozenset = frozenset()
    allow_assumption_violations: bool = False
    assumptions_hold: bool = True
    duration: Optional[int] = None
    max_steps: int = 100_000
    explore: dict = field(default_factory=dict)
    source: str = ""

    def __deepcopy__(self, memo):
        return self

    def configurations(self) -> list[Configuration]:
        cached = self.__dict__.get("_configs")
        if cached is None:
            cached = [Configuration(0, self.genesis_members)]
            for i, (_, members) in enumerate(self.script):
                cached.append(Configuration(i + 1, members))
            self.__dict__["_configs"] = cached
        return list(cached)

    @property
    def final_members(self) -> tuple:
        return self.configurations()[-1].members


def _require(data: dict, key: str, where: str = "scenario"):
    if key not in data:
        raise ParseError(f"{where}: missing field '{key}'")
    return data[key]


def parse_scenario(data: dict, source: str = "", allow_assumption_violations: bool = False) -> Scenario:
    """Build a :class:`Scenario` from decoded JSON and validate the model assumptions."""
    if not isinstance(data, dict):
        raise ParseError("scenario must be a JSON object")
    try:
        validators, keys = [], {}
        for item in _require(data, "validators"):
            if isinstance(item, dict):
                vid = int(_require(item, "id", "validator"))
                if "key" in item:
                    keys[vid] = bytes.fromhex(item["key"])
            else:
                vid = int(item)
            validators.append(vid)
        genesis = _require(data, "genesis")
        members = tuple(sorted(int(m) for m in _require(genesis, "members", "genesis")))
        accounts = {str(a): int(b) for a, b in _require(genesis, "accounts", "genesis").items()}
        clients = []
        for c in data.get("clients", []):
            cid, acct = str(_require(c, "id", "client")), str(_require(c, "account", "client"))
            behavior = c.get("behavior", "honest")
            transfers = [ScheduledTransfer(int(t["at"]), str(t["to"]), int(t["amount"]))
                         for t in c.get("transfers", [])]
            clients.append(ClientSpec(cid, acct, transfers, behavior, int(c.get("at", 0)),
                                      tuple(c.get("recipients", ()))))
        rt = data.get("random_transfers")
        random_transfers = RandomTransfers(**rt) if rt else None
        script = [(int(s["at"]), tuple(sorted(int(m) for m in s["next_members"])))
                  for s in data.get("script", [])]
        adv = data.get("adversary", {})
        corrupt = {int(k): str(b) for k, b in adv.get("corrupt", {}).items()}
        net = NetworkConfig(**data.get("network", {}))
        param_fields = set(NodeParams.__dataclass_fields__)
        params = NodeParams(**{k: v for k, v in data.items() if k in param_fields})
        mutations = frozenset(data.get("mutations", []))
        sc = Scenario(
            name=str(data.get("name", Path(source).stem if source else "scenario")),
            validators=sorted(validators), genesis_members=members, accounts=accounts, keys=keys,
            scheme=data.get("scheme", "hmac"), clients=clients, random_transfers=random_transfers,
            script=script, corrupt=corrupt, crash_at=int(adv.get("crash_at", 0)), network=net,
            params=params, goals=list(data.get("goals", [])), mutations=mutations,
            allow_assumption_violations=allow_assumption_violations
            or bool(data.get("allow_assumption_violations", False)),
            duration=data.get("duration"), max_steps=int(data.get("max_steps", 100_000)),
            explore=dict(data.get("explore", {})), source=source,
        )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError, ProtocolError) as e:
        raise ParseError(f"malformed scenario: {e}") from e
    _validate(sc)
    return sc


def _validate(sc: Scenario) -> None:
    known = set(sc.validators)
    for cfg in sc.configurations():
        missing = set(cfg.members) - known
        if missing:
            raise ParseError(f"configuration {cfg.index} names unknown validators {sorted(missing)}")
    for vid, behavior in sc.corrupt.items():
        if behavior not in BEHAVIORS:
            raise ParseError(f"unknown adversary behavior '{behavior}'")
        if vid not in known:
            raise ParseError(f"corrupt validator {vid} is not declared")
    bad = sc.mutations - MUTATIONS
    if bad:
        raise ParseError(f"unknown mutations {sorted(bad)}")
    accounts = set(sc.accounts)
    for c in sc.clients:
        if c.account not in accounts:
            raise ParseError(f"client {c.id} owns unknown account {c.account}")
    problems = []
    for cfg in sc.configurations():
        bad_count = len(set(sc.corrupt) & cfg.member_set)
        if bad_count > cfg.f:
            problems.append(FaultBoundViolation(
                f"configuration {cfg.index}: {bad_count} corrupt members exceed f={cfg.f}"))
    configs = sc.configurations()
    for prev, nxt in zip(configs, configs[1:]):
        kept = len((prev.member_set - set(sc.corrupt)) & nxt.member_set)
        if kept < prev.q:
            problems.append(OverlapViolation(
                f"transition {prev.index}->{nxt.index}: {kept} correct members retained < Q={prev.q}"))
    if problems:
        sc.assumptions_hold = False
        if not sc.allow_assumption_violations:
            raise problems[0]


def load_scenario(path, allow_assumption_violations: bool = False) -> Scenario:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except FileNotFoundError as e:
        raise ParseError(f"cannot read scenario {path}: no such file") from e
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"cannot parse scenario {path}: {e}") from e
    return parse_scenario(data, str(p), allow_assumption_violations)


def random_schedule(sc: Scenario, seed: int) -> dict:
    """Per-account transfer schedules; every transfer is affordable from the initial balance."""
    rt = sc.random_transfers
    out = {a: [] for a in sorted(sc.accounts)}
    if rt is None:
        return out
    rng = random.Random(f"transfers/{seed}")
    budget = dict(sc.accounts)
    accounts = sorted(sc.accounts)
    for i in range(rt.count):
        senders = [a for a in accounts if budget[a] > 0]
        if not senders:
            break
        s = rng.choice(senders)
        r = rng.choice([a for a in accounts if a != s])
        amount = rng.randint(1, min(rt.max_amount, budget[s]))
        budget[s] -= amount
        out[s].append(ScheduledTransfer(rt.start + i * rt.spacing, r, amount))
    return out


# ---------------------------------------------------------------------------
# runtime shared by the simulator and the explorer


class Runtime:
    """Builds the node set of a scenario and implements the node context API."""

    annotate = True  # attach node summaries to records

    def __init__(self, scenario: Scenario, seed: int):
        self.scenario = scenario
        self.seed = seed
        sc = scenario
        keypairs = {}
        for vid in sc.validators:
            if vid in sc.keys:
                keypairs[vid] = hmac_keypair(sc.keys[vid])
            else:
                keypairs[vid] = derive_keypair(f"validator-{vid}", 0, sc.scheme)
        self.directory = KeyDirectory(keypairs)
        genesis = Configuration(0, sc.genesis_members)
        self.genesis = genesis
        self.nodes: dict = {}
        for vid in sc.validators:
            st = ValidatorState.create(vid, keypairs[vid], self.directory, genesis, sc.accounts,
                                       sc.mutations)
            cls = BEHAVIORS.get(sc.corrupt.get(vid), ValidatorNode)
            self.nodes[vid] = cls(st, sc.params, sc.validators)
        self.transfer_counts: dict = {}
        schedule = random_schedule(sc, seed)
        for account, transfers in schedule.items():
            if transfers:
                self.nodes[f"c-{account}"] = ClientNode(f"c-{account}", account, transfers, genesis,
                                                        self.directory, sc.params)
                self.transfer_counts[account] = len(transfers)
        for c in sc.clients:
            if c.behavior == "equivocate":
                rng = random.Random(f"{seed}/{c.id}")
                recips = c.recipients or tuple(a for a in sorted(sc.accounts) if a != c.account)[:2]
                self.nodes[c.id] = EquivocatingClient(c.id, c.account, recips, c.at, genesis,
                                                      self.directory, rng)
            else:
                self.nodes[c.id] = ClientNode(c.id, c.account, c.transfers, genesis, self.directory,
                                              sc.params)
                self.transfer_counts[c.account] = self.transfer_counts.get(c.account, 0) + len(c.transfers)
        if sc.script:
            self.nodes["admin"] = AdminClient("admin", sc.script, genesis, self.directory, sc.params)
        self.order = sorted((k for k in self.nodes if isinstance(k, int))) + \
            sorted(k for k in self.nodes if not isinstance(k, int))
        self.correct = [v for v in sc.validators if v not in sc.corrupt]
        self.step_no = 0
        self.now = 0
        self.current = None
        self._loop: list = []
        self._records: list = []

    # -- context API --------------------------------------------------------

    def send(self, dst, msg) -> None:
        if dst == self.current:
            self._loop.append(msg)
        elif dst in self.nodes:
            self.transmit(self.current, dst, msg)

    def transmit(self, src, dst, msg) -> None:
        raise NotImplementedError

    def set_timer(self, delay: int, name: str, data=None) -> None:
        raise NotImplementedError

    def record(self, kind: str, **fields) -> None:
        rec = {"step": self.step_no, "time": self.now, "node": self.current, "kind": kind}
        rec.update(fields)
        self._records.append(rec)

    # -- delivery -------------------------------------------------------------

    def deliverable(self, dst) -> bool:
        node = self.nodes[dst]
        if getattr(node, "retired", False):
            return False
        return not self.crashed(dst)

    def crashed(self, nid) -> bool:
        return self.scenario.corrupt.get(nid) == "crash" and self.now >= self.scenario.crash_at

    def run_handler(self, nid, fn, *args) -> list:
        """Run one node handler plus any loopback messages; returns the step's records."""
        self.current = nid
        node = self.nodes[nid]
        fn(self, *args)
        while self._loop:
            msg = self._loop.pop(0)
            self.record("deliver", src=nid, msg=type(msg).__name__, digest=msg.digest.hex())
            node.on_message(self, nid, msg)
        recs, self._records = self._records, []
        sd = node.summary() if self.annotate else None
        if sd:
            hexd = sd.hex()
            for r in recs:
                r["sd"] = hexd
        self.current = None
        return recs

    def genesis_record(self) -> dict:
        sc = self.scenario
        return {
            "step": 0, "time": 0, "node": None, "kind": "genesis",
            "scenario": sc.name, "seed": self.seed,
            "keys": {str(k): v for k, v in self.directory.public_hex().items()},
            "validators": sc.validators,
            "genesis": {"index": 0, "members": list(sc.genesis_members)},
            "accounts": dict(sorted(sc.accounts.items())),
            "supply": sum(sc.accounts.values()),
            "corrupt": {str(k): b for k, b in sorted(sc.corrupt.items())},
            "script": [{"at": at, "next_members": list(m)} for at, m in sc.script],
            "transfers": dict(sorted(self.transfer_counts.items())),
            "goals": sc.goals,
            "mutations": sorted(sc.mutations),
            "assumptions_hold": sc.assumptions_hold,
            "network": {"delta": sc.network.delta, "gst": sc.network.gst},
        }

    def final_records(self) -> list:
        out = []
        for nid in self.order:
            node = self.nodes[nid]
            rec = {"step": self.step_no, "time": self.now, "node": nid, "kind": "final",
                   "role": "validator" if isinstance(nid, int) else "client",
                   "corrupt": bool(node.corrupt)}
            rec.update(node.final())
            out.append(rec)
        return out

    # -- goals ----------------------------------------------------------------

    def goals_met(self) -> bool:
        sc = self.scenario
        configs = sc.configurations()
        for goal in sc.goals:
            if "installed" in goal:
                k = int(goal["installed"])
                if k >= len(configs):
                    return False
                need = (configs[k - 1].member_set | configs[k].member_set) if k > 0 else configs[0].member_set
                for vid in need:
                    if vid in sc.corrupt:
                        continue
                    if self.nodes[vid].v.config.index < k:
                        return False
            if goal.get("transfers"):
                for vid in sc.final_members:
                    if vid in sc.corrupt:
                        continue
                    acc = self.nodes[vid].v.accounts
                    for account, count in self.transfer_counts.items():
                        if acc.get(account, (0, 0))[1] < count:
                            return False
        return True


@dataclass
class RunResult:
    status: str  # "satisfied" | "budget-exhausted" | "violation"
    steps: int
    time: int
    violations: list = field(default_factory=list)
    records: Optional[list] = None


class Simulation(Runtime):
    def __init__(self, scenario: Scenario, seed: int, *, keep_trace: bool = True,
                 sink: Optional[Callable[[dict], None]] = None, auditor=None, fail_fast: bool = True,
                 annotate: bool = True):
        super().__init__(scenario, seed)
        self.annotate = annotate
        self.rng = random.Random(seed)
        self.queue: list = []
        self.seq = 0
        self.trace: Optional[list] = [] if keep_trace else None
        self.sink = sink
        self.auditor = auditor
        self.fail_fast = fail_fast
        self.violations: list = []
        self._goal_dirty = True
        self._goal_cached = False
        self._emit([self.genesis_record()])
        for nid in self.order:
            self._push(0, ("start", nid))

    def _push(self, when: int, event: tuple) -> None:
        self.seq += 1
        heapq.heappush(self.queue, (when, self.seq, event))

    def delay(self) -> int:
        net = self.scenario.network
        if self.now >= net.gst:
            return self.rng.randint(1, net.delta)
        d = self.rng.randint(1, net.pre_gst_max_delay)
        if self.rng.random() < net.retransmit_prob:
            d += self.rng.randint(1, net.pre_gst_max_delay)
        return min(d, net.gst - self.now + net.delta)

    def transmit(self, src, dst, msg) -> None:
        self._push(self.now + self.delay(), ("msg", src, dst, msg, self.now))

    def set_timer(self, delay: int, name: str, data=None) -> None:
        self._push(self.now + max(0, int(delay)), ("timer", self.current, name, data))

    def _emit(self, records: list) -> None:
        for r in records:
            if r["kind"] in _GOAL_KINDS:
                self._goal_dirty = True
            if self.trace is not None:
                self.trace.append(r)
            if self.sink is not None:
                self.sink(r)
            if self.auditor is not None:
                found = self.auditor.feed(r)
                if found:
                    self.violations.extend(found)

    def step(self) -> bool:
        """Process one event; returns False when the queue is empty."""
        if not self.queue:
            return False
        when, _, event = heapq.heappop(self.queue)
        self.now = when
        kind = event[0]
        if kind == "timer":
            nid, name, data = event[1:]
            if not self.deliverable(nid) or not self.nodes[nid].timer_live(name, data):
                return True
        self.step_no += 1
        if kind == "msg":
            _, src, dst, msg, sent = event
            if not self.deliverable(dst):
                self.current = dst
                self.record("drop", src=src, msg=type(msg).__name__, digest=msg.digest.hex(), sent=sent)
                recs, self._records = self._records, []
                self.current = None
            else:
                def handle(ctx, src=src, msg=msg, dst=dst, sent=sent):
                    ctx.record("deliver", src=src, msg=type(msg).__name__, digest=msg.digest.hex(),
                               sent=sent)
                    self.nodes[dst].on_message(ctx, src, msg)
                recs = self.run_handler(dst, handle)
        elif kind == "timer":
            def handle(ctx, nid=nid, name=name, data=data):
                ctx.record("timer", name=name)
                self.nodes[nid].on_timer(ctx, name, data)
            recs = self.run_handler(nid, handle)
        else:
            nid = event[1]
            recs = self.run_handler(nid, lambda ctx: self.nodes[nid].start(ctx))
        self._emit(recs)
        return True

    def run_until(self, predicate: Callable[["Simulation"], bool], budget: int) -> str:
        """Step until ``predicate`` holds; ``"satisfied"`` or ``"budget-exhausted"``."""
        if predicate(self):
            return "satisfied"
        start = self.step_no
        while self.step_no - start < budget:
            if not self.step():
                return "satisfied" if predicate(self) else "budget-exhausted"
            if self.violations and self.fail_fast:
                return "violation"
            if predicate(self):
                return "satisfied"
        return "budget-exhausted"

    def stop_condition(self) -> Callable[["Simulation"], bool]:
        sc = self.scenario

        def done(sim: "Simulation") -> bool:
            if sc.duration is not None and sim.now < int(sc.duration):
                return False
            if sc.goals:
                if sim._goal_dirty:
                    sim._goal_dirty = False
                    sim._goal_cached = sim.goals_met()
                return sim._goal_cached
            return sc.duration is not None
        return done

    def run(self, max_steps: Optional[int] = None) -> RunResult:
        budget = self.scenario.max_steps if max_steps is None else max_steps
        status = self.run_until(self.stop_condition(), budget)
        self._emit(self.final_records())
        if self.violations:
            status = "violation"
        return RunResult(status, self.step_no, self.now, list(self.violations), self.trace)


# record kinds after which goal predicates can change
_GOAL_KINDS = frozenset({"execute", "install", "adopt-snapshot", "deliver-checkpoint", "client-config"})


def trace_lines(records: Iterable[dict]) -> Iterable[str]:
    for r in records:
        yield json.dumps(r, sort_keys=True, separators=(",", ":"))


def write_trace(records: Iterable[dict], path) -> None:
    with open(path, "w") as fh:
        for line in trace_lines(records):
            fh.write(line + "\n")


def read_trace(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def explore_interleavings(scenario: Scenario, depth: int, **kwargs):
    from .explore import explore

    return explore(scenario, depth, **kwargs)

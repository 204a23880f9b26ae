"""Bounded exploration of delivery orders.

A :class:`World` holds the nodes of a scenario plus the multiset of messages
in flight and the pending timers.  An action either delivers one in-flight
message or fires the earliest pending timer of one node; there is no global
clock ordering between nodes, so every interleaving the asynchronous network
allows is reachable.

:func:`explore` runs depth-bounded DFS with state-hash deduplication from a
set of start states taken along a canonical run (oldest message first),
followed by seeded random walks.  Every produced record is fed to an online
:class:`~pdcc.checker.Auditor`, so Invariants I-III are checked in every
explored state.  A counterexample is the action list from genesis, which
:func:`replay` turns back into a trace.
"""

from __future__ import annotations

import copy
import hashlib
import random
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

from .checker import CERTIFICATION, MONOTONE, QUORUM, SAME_CONFIG, Auditor
from .domain import Record
from .errors import ExplorerLimit, StateSpaceBudgetExceeded
from .simnet import Runtime, Scenario

MAX_VALIDATORS = 5
MAX_CLIENT_ACTIONS = 4

# properties the explorer is responsible for (liveness needs unbounded runs)
EXPLORED = (CERTIFICATION, MONOTONE, SAME_CONFIG, QUORUM)


def _jsonish(x):
    if isinstance(x, (tuple, list)):
        return [_jsonish(v) for v in x]
    if isinstance(x, bytes):
        return x.hex()
    return x


def client_actions(sc: Scenario) -> int:
    n = len(sc.script) + (sc.random_transfers.count if sc.random_transfers else 0)
    for c in sc.clients:
        n += 2 if c.behavior == "equivocate" else len(c.transfers)
    return n


def check_limits(sc: Scenario) -> None:
    actions = client_actions(sc)
    if len(sc.validators) > MAX_VALIDATORS:
        raise ExplorerLimit(f"{len(sc.validators)} validators > {MAX_VALIDATORS}")
    if actions > MAX_CLIENT_ACTIONS:
        raise ExplorerLimit(f"{actions} client actions > {MAX_CLIENT_ACTIONS}")


_SHARED = frozenset({int, str, bytes, bool, float, type(None), frozenset, tuple})


def clone(x):
    """Copy of a world fragment that shares every immutable value.

    Cheaper than :func:`copy.deepcopy`: tuples, records and deque contents
    (trace records, scheduled transfers) are never mutated, so they are shared.
    Objects are assumed not to alias one another's mutable parts.
    """
    t = type(x)
    if t in _SHARED:
        return x
    if t is dict:
        return {k: v if type(v) in _SHARED else clone(v) for k, v in x.items()}
    if t is list:
        return [v if type(v) in _SHARED else clone(v) for v in x]
    if t is set:
        return set(x)
    if t is deque:
        return deque(x, x.maxlen)
    if isinstance(x, Record):
        return x
    if hasattr(t, "__deepcopy__"):
        return copy.deepcopy(x)
    if isinstance(x, random.Random):
        r = random.Random()
        r.setstate(x.getstate())
        return r
    if hasattr(x, "__dict__") and not isinstance(x, type):
        new = object.__new__(t)
        new.__dict__.update({k: v if type(v) in _SHARED else clone(v) for k, v in x.__dict__.items()})
        return new
    return copy.deepcopy(x)


class World(Runtime):
    """Runtime whose scheduling decisions are made by the caller."""

    annotate = False

    def __init__(self, scenario: Scenario, keep_trace: bool = False):
        super().__init__(scenario, 0)
        self.inflight: list = []  # (seq, src, dst, msg)
        self.timers: list = []  # (due, seq, nid, name, data)
        self.seq = 0
        self.path: list = []
        self.trace: Optional[list] = [] if keep_trace else None
        self.auditor = Auditor()
        self.violations: list = []
        self._emit([self.genesis_record()])
        for nid in self.order:
            self._emit(self.run_handler(nid, lambda ctx, nid=nid: self.nodes[nid].start(ctx)))

    # -- context API --------------------------------------------------------

    def transmit(self, src, dst, msg) -> None:
        self.seq += 1
        self.inflight.append((self.seq, src, dst, msg))

    def set_timer(self, delay: int, name: str, data=None) -> None:
        self.seq += 1
        self.timers.append((self.now + max(0, int(delay)), self.seq, self.current, name, data))

    def __deepcopy__(self, memo):
        return self.fork()

    def fork(self) -> "World":
        new = object.__new__(World)
        new.__dict__.update({k: v if type(v) in _SHARED else clone(v) for k, v in self.__dict__.items()})
        return new

    def _emit(self, records: list) -> None:
        for r in records:
            if self.trace is not None:
                self.trace.append(r)
            found = self.auditor.feed(r)
            if found:
                self.violations.extend(found)

    # -- actions ------------------------------------------------------------

    def _live_timers(self, nid) -> list:
        if not self.deliverable(nid):
            return []
        node = self.nodes[nid]
        mine = [t for t in self.timers if t[2] == nid and node.timer_live(t[3], t[4])]
        mine.sort(key=lambda t: (t[0], t[1]))
        return mine

    def enabled(self, timers: str = "any") -> list:
        """Distinct actions available in this state, in a deterministic order.

        With ``timers="idle"`` timers are offered only while no message is in
        flight, so the choices are exactly the delivery orders.
        """
        acts, seen = [], set()
        for _, src, dst, msg in self.inflight:
            act = ("msg", src, dst, msg.digest.hex())
            if act not in seen:
                seen.add(act)
                acts.append(act)
        if acts and timers == "idle":
            return acts
        for nid in self.order:
            live = self._live_timers(nid)
            if live:
                _, _, _, name, data = live[0]
                acts.append(("timer", nid, name, _jsonish(data)))
        return acts

    def canonical_action(self) -> Optional[tuple]:
        """Oldest message first; when the network is idle, the earliest timer."""
        if self.inflight:
            _, src, dst, msg = min(self.inflight, key=lambda m: m[0])
            return ("msg", src, dst, msg.digest.hex())
        best = None
        for nid in self.order:
            live = self._live_timers(nid)
            if live and (best is None or live[0][:2] < best[:2]):
                best = live[0]
        if best is None:
            return None
        return ("timer", best[2], best[3], _jsonish(best[4]))

    def apply(self, act) -> None:
        act = tuple(act)
        self.step_no += 1
        self.path.append(act)
        if act[0] == "msg":
            _, src, dst, hexd = act
            for i, (_, s, d, msg) in enumerate(self.inflight):
                if s == src and d == dst and msg.digest.hex() == hexd:
                    break
            else:
                raise KeyError(f"no such message in flight: {act}")
            del self.inflight[i]
            if not self.deliverable(dst):
                self.current = dst
                self.record("drop", src=src, msg=type(msg).__name__, digest=hexd)
                recs, self._records = self._records, []
                self.current = None
            else:
                def handle(ctx):
                    ctx.record("deliver", src=src, msg=type(msg).__name__, digest=hexd)
                    self.nodes[dst].on_message(ctx, src, msg)
                recs = self.run_handler(dst, handle)
        else:
            _, nid, name, data = act
            want = _jsonish(data)
            live = [t for t in self._live_timers(nid) if t[3] == name and _jsonish(t[4]) == want]
            if not live:
                raise KeyError(f"no such timer pending: {act}")
            t = live[0]
            self.timers.remove(t)
            self.now = max(self.now, t[0])

            def handle(ctx):
                ctx.record("timer", name=name)
                self.nodes[nid].on_timer(ctx, name, t[4])
            recs = self.run_handler(nid, handle)
        self._emit(recs)

    # -- state identity -----------------------------------------------------

    def state_key(self) -> bytes:
        msgs = sorted(repr((s, d, m.digest)) for _, s, d, m in self.inflight)
        timers = []
        for nid in self.order:
            timers.append(tuple((t[3], repr(t[4])) for t in self._live_timers(nid)))
        nodes = tuple(self.nodes[nid].fingerprint() for nid in self.order)
        return hashlib.sha256(repr((nodes, tuple(msgs), tuple(timers))).encode()).digest()

    def quiescent(self) -> bool:
        return not self.inflight and self.canonical_action() is None


def _safety_violations(world: World) -> list:
    return [v for v in world.violations if v.property in EXPLORED]


# ---------------------------------------------------------------------------
# exploration


@dataclass
class ExploreConfig:
    depth: int = 12
    max_states: int = 200_000
    starts: int = 12  # start states sampled along the canonical run
    probe_depth: int = 4  # DFS bound for start states other than genesis
    canonical_steps: int = 2_000
    walks: int = 200
    walk_steps: int = 600
    timers: str = "idle"  # DFS timer policy; walks always allow timers anywhere
    seed: int = 0
    stop_on_violation: bool = True

    @classmethod
    def from_scenario(cls, sc: Scenario, **overrides) -> "ExploreConfig":
        fields_ = {k: v for k, v in sc.explore.items() if k in cls.__dataclass_fields__}
        fields_.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**fields_)


@dataclass
class ExploreResult:
    verdict: str  # "pass" | "fail"
    states: int = 0
    transitions: int = 0
    dedup_hits: int = 0
    start_points: int = 0
    walks: int = 0
    canonical_length: int = 0
    violations: list = field(default_factory=list)  # [(property, detail)]
    witness: Optional[dict] = None

    def to_json(self) -> dict:
        return asdict(self)

    def summary_lines(self) -> list:
        lines = [
            f"explored states={self.states} transitions={self.transitions} "
            f"dedup_hits={self.dedup_hits} starts={self.start_points} walks={self.walks}",
            f"verdict {self.verdict}",
        ]
        if self.witness:
            lines.append(f"counterexample {self.witness['property']}: {self.witness['detail']} "
                         f"({len(self.witness['actions'])} actions)")
        return lines


class _Search:
    def __init__(self, sc: Scenario, cfg: ExploreConfig):
        self.sc = sc
        self.cfg = cfg
        self.seen: dict = {}  # state key -> remaining depth when expanded
        self.result = ExploreResult("pass")

    def _count_state(self) -> None:
        self.result.states += 1
        if self.result.states > self.cfg.max_states:
            raise StateSpaceBudgetExceeded(self.result.states, self.result.to_json())

    def _found(self, world: World) -> bool:
        bad = _safety_violations(world)
        if not bad:
            return False
        v = bad[0]
        self.result.verdict = "fail"
        self.result.violations.extend((x.property, x.detail) for x in bad)
        if self.result.witness is None or len(world.path) < len(self.result.witness["actions"]):
            self.result.witness = {"scenario": self.sc.name, "property": v.property,
                                   "detail": v.detail, "actions": [list(a) for a in world.path]}
        return True

    def canonical(self) -> list:
        """Start states along the oldest-message-first run."""
        w = World(self.sc)
        states = [w.fork()]
        for _ in range(self.cfg.canonical_steps):
            act = w.canonical_action()
            if act is None or (w.goals_met() and not w.inflight):
                break
            w.apply(act)
            if self._found(w):
                break
            states.append(w.fork())
        self.result.canonical_length = len(states) - 1
        k = max(1, self.cfg.starts)
        if len(states) <= k:
            return states
        stride = (len(states) - 1) / (k - 1) if k > 1 else 0
        picks = sorted({round(i * stride) for i in range(k)})
        return [states[i] for i in picks]

    def dfs(self, start: World, depth: int) -> bool:
        key = start.state_key()
        if self.seen.get(key, -1) >= depth:
            self.result.dedup_hits += 1
            return False
        self.seen[key] = depth
        self._count_state()
        stack = [(start, depth)]
        while stack:
            w, left = stack.pop()
            if left <= 0:
                continue
            for act in reversed(w.enabled(self.cfg.timers)):
                child = w.fork()
                child.apply(act)
                self.result.transitions += 1
                if self._found(child) and self.cfg.stop_on_violation:
                    return True
                key = child.state_key()
                if self.seen.get(key, -1) >= left - 1:
                    self.result.dedup_hits += 1
                    continue
                self.seen[key] = left - 1
                self._count_state()
                stack.append((child, left - 1))
        return False

    def walk(self, rng: random.Random) -> bool:
        """One random run; swarm-style, a random set of (destination, message
        type) pairs is starved until a random release step."""
        w = World(self.sc)
        starve_p = rng.choice((0.0, 0.3, 0.6))
        dsts = {d for d in w.order if rng.random() < starve_p}
        kinds = {k for k in _STARVABLE if rng.random() < starve_p}
        release = rng.randrange(self.cfg.walk_steps + 1)
        for i in range(self.cfg.walk_steps):
            acts = w.enabled()
            if not acts:
                break
            if i < release and dsts and kinds:
                kinds_of = {(s, d, m.digest.hex()): type(m).__name__ for _, s, d, m in w.inflight}
                fresh = [a for a in acts if a[0] == "timer"
                         or not (a[2] in dsts and kinds_of[a[1:]] in kinds)]
                acts = fresh or acts
            w.apply(rng.choice(acts))
            self.result.transitions += 1
            if self._found(w):
                return True
        return False


_STARVABLE = ("Propose", "Prepare", "Commit", "AttemptChange", "CheckpointDelivery",
              "Confirmation", "SnapshotResponse")


def explore(scenario: Scenario, depth: Optional[int] = None, **overrides) -> ExploreResult:
    """Explore ``scenario``; raises :class:`StateSpaceBudgetExceeded` past the state budget."""
    check_limits(scenario)
    cfg = ExploreConfig.from_scenario(scenario, depth=depth, **overrides)
    search = _Search(scenario, cfg)
    res = search.result
    if cfg.depth <= 0 and cfg.walks <= 0:
        return res
    starts = search.canonical()
    stop = cfg.stop_on_violation
    if not (res.verdict == "fail" and stop) and cfg.depth > 0:
        for i, s in enumerate(starts):
            res.start_points += 1
            depth = cfg.depth if i == 0 else min(cfg.depth, cfg.probe_depth)
            if search.dfs(s, depth) and stop:
                break
    if not (res.verdict == "fail" and stop):
        rng = random.Random(f"walks/{cfg.seed}")
        for _ in range(cfg.walks):
            res.walks += 1
            if search.walk(rng) and stop:
                break
    return res


def replay(scenario: Scenario, actions: list) -> World:
    """Re-execute an action list from genesis, keeping the full trace."""
    w = World(scenario, keep_trace=True)
    for act in actions:
        w.apply(act)
    return w

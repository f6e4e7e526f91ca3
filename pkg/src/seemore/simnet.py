"""Deterministic discrete-event network simulator with a seeded adversary.

Every run is a pure function of (scenario, seed). Link delays, drops and
duplicates are derived from a keyed hash of the message contents rather
than from a shared random stream, so injecting extra traffic (for example
rejected forgeries) never perturbs the fate of other messages.
"""

from __future__ import annotations

import dataclasses
import hashlib
import heapq
import math
import random
from dataclasses import dataclass, field

from .client import Client
from .config import ClusterConfig, ConfigError, Mode, SizingInput, byz_bound_for_rental, required_public_rental
from .messages import (
    Accept,
    Checkpoint,
    Commit,
    Inform,
    KeyDirectory,
    ModeChange,
    NewView,
    PrePrepare,
    Prepare,
    Reply,
    Request,
    ViewChange,
)
from .metrics import RunMetrics, view_change_spans
from .replica import Deliver, ModeDirective, Replica, ReplicaParams, Restarted, Send, SetTimer, TimerFired

STRATEGIES = ("mute", "equivocate", "corrupt_digest", "wrong_seq", "replay_old_view", "forge_attempt")
TEST_HOOKS = ("skip_peacock_quorum",)


class ScenarioInvalid(ConfigError):
    pass


class SafetyViolation(RuntimeError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations[:5]))
        self.violations = violations


# ---------------------------------------------------------------- scenario

@dataclass
class ClusterSpec:
    S: int
    c: int
    m: int | None = None
    P: int | None = None
    sizing: dict | None = None

    def build(self) -> ClusterConfig:
        public, byz = self.P, self.m
        if public is None:
            if not self.sizing:
                raise ScenarioInvalid("cluster needs P or a sizing input")
            try:
                spec = SizingInput(S=self.S, c=self.c, **self.sizing)
            except TypeError as exc:
                raise ScenarioInvalid(f"bad sizing input: {exc}") from exc
            public = required_public_rental(spec)
            if byz is None:
                byz = byz_bound_for_rental(spec, public)
        if byz is None:
            raise ScenarioInvalid("cluster needs m")
        return ClusterConfig(self.S, public, self.c, byz)


@dataclass
class Workload:
    clients: int = 1
    requests_per_client: int = 10
    put_ratio: float = 0.5
    keys: int = 8


@dataclass
class DelaySpec:
    """Post-GST delays are uniform on [base, base + jitter]; before GST on [base, pre_gst_cap]."""

    base: int = 1
    jitter: int = 0
    gst: int = 0
    pre_gst_cap: int = 0
    drop: float = 0.0
    duplicate: float = 0.0

    @property
    def mean(self) -> float:
        return self.base + self.jitter / 2


@dataclass
class CrashSpec:
    """Crash ``replica`` at ``at``.

    With ``on_commit`` set the crash is armed at ``at`` and fires the moment
    any replica first sends a Commit for a sequence >= ``on_commit``. If the
    crashing replica is the sender, only the first ``partial`` copies of that
    Commit leave before it goes down.
    """

    replica: int
    at: int
    restart_at: int | None = None
    on_commit: int | None = None
    partial: int = 0


@dataclass
class ByzantineSpec:
    """``after`` outbound messages go out untouched before the strategy takes over."""

    replica: int
    strategy: str
    after: int = 0


@dataclass
class PartitionSpec:
    """Messages between ``a`` and ``b`` sent during [start, end) are held until ``end``."""

    a: int
    b: int
    start: int
    end: int


@dataclass
class FaultPlan:
    crashes: list[CrashSpec] = field(default_factory=list)
    byzantine: list[ByzantineSpec] = field(default_factory=list)
    partitions: list[PartitionSpec] = field(default_factory=list)

    def validate(self, cfg: ClusterConfig) -> None:
        crashed = {c.replica for c in self.crashes}
        for crash in self.crashes:
            if not cfg.is_private(crash.replica):
                raise ScenarioInvalid(f"crash faults are private-only; replica {crash.replica} is not private")
            if crash.restart_at is not None and crash.restart_at <= crash.at:
                raise ScenarioInvalid("restart must come after the crash")
            if crash.on_commit is not None and crash.on_commit < 1:
                raise ScenarioInvalid("on_commit must name a positive sequence")
            if crash.partial < 0:
                raise ScenarioInvalid("partial must be non-negative")
        if len(crashed) > cfg.c:
            raise ScenarioInvalid(f"{len(crashed)} crashed replicas exceed c={cfg.c}")
        byz = [b.replica for b in self.byzantine]
        for spec in self.byzantine:
            if not cfg.is_public(spec.replica):
                raise ScenarioInvalid(f"Byzantine faults are public-only; replica {spec.replica} is not public")
            if spec.strategy not in STRATEGIES:
                raise ScenarioInvalid(f"unknown strategy {spec.strategy!r}")
            if spec.after < 0:
                raise ScenarioInvalid("after must be non-negative")
        if len(set(byz)) != len(byz):
            raise ScenarioInvalid("one strategy per Byzantine replica")
        if len(byz) > cfg.m:
            raise ScenarioInvalid(f"{len(byz)} Byzantine replicas exceed m={cfg.m}")
        for part in self.partitions:
            if part.end < part.start:
                raise ScenarioInvalid("partition ends before it starts")


@dataclass
class ModeChangeSpec:
    at: int
    mode: Mode


@dataclass
class Timeouts:
    tau: int | None = None
    client: int | None = None


@dataclass
class ScenarioConfig:
    cluster: ClusterSpec
    mode: Mode = Mode.LION
    workload: Workload = field(default_factory=Workload)
    delay: DelaySpec = field(default_factory=DelaySpec)
    faults: FaultPlan = field(default_factory=FaultPlan)
    mode_changes: list[ModeChangeSpec] = field(default_factory=list)
    checkpoint_period: int = 10
    timeouts: Timeouts = field(default_factory=Timeouts)
    max_time: int = 100_000
    seed: int = 0
    test_hooks: list[str] = field(default_factory=list)

    @property
    def tau(self) -> int:
        if self.timeouts.tau is not None:
            return self.timeouts.tau
        return max(1, math.ceil(8 * self.delay.mean))

    @property
    def client_timeout(self) -> int:
        return self.timeouts.client if self.timeouts.client is not None else 4 * self.tau

    def validate(self) -> ClusterConfig:
        try:
            cfg = self.cluster.build()
            cfg.validate_for(self.mode)
            for change in self.mode_changes:
                cfg.validate_for(change.mode)
        except ScenarioInvalid:
            raise
        except ConfigError as exc:
            raise ScenarioInvalid(str(exc)) from exc
        self.faults.validate(cfg)
        if self.checkpoint_period < 1:
            raise ScenarioInvalid("checkpoint period must be positive")
        if self.workload.clients < 0 or self.workload.requests_per_client < 0:
            raise ScenarioInvalid("workload sizes must be non-negative")
        if self.delay.base < 0 or self.delay.jitter < 0:
            raise ScenarioInvalid("delays must be non-negative")
        for hook in self.test_hooks:
            if hook not in TEST_HOOKS:
                raise ScenarioInvalid(f"unknown test hook {hook!r}")
        return cfg

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["mode"] = self.mode.label
        for change in data["mode_changes"]:
            change["mode"] = Mode(change["mode"]).label
        return data

    @classmethod
    def from_dict(cls, data: dict) -> ScenarioConfig:
        try:
            data = dict(data)
            faults = data.get("faults") or {}
            return cls(
                cluster=ClusterSpec(**data["cluster"]),
                mode=Mode.parse(data.get("mode", "lion")),
                workload=Workload(**(data.get("workload") or {})),
                delay=DelaySpec(**(data.get("delay") or {})),
                faults=FaultPlan(
                    crashes=[CrashSpec(**c) for c in faults.get("crashes", [])],
                    byzantine=[ByzantineSpec(**b) for b in faults.get("byzantine", [])],
                    partitions=[PartitionSpec(**p) for p in faults.get("partitions", [])],
                ),
                mode_changes=[ModeChangeSpec(mc["at"], Mode.parse(mc["mode"])) for mc in data.get("mode_changes", [])],
                checkpoint_period=data.get("checkpoint_period", 10),
                timeouts=Timeouts(**(data.get("timeouts") or {})),
                max_time=data.get("max_time", 100_000),
                seed=data.get("seed", 0),
                test_hooks=list(data.get("test_hooks", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioInvalid(f"malformed scenario: {exc}") from exc


# ---------------------------------------------------------------- Byzantine behaviour

def _hash_int(*parts) -> int:
    data = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


class ByzantineAdversary:
    """Rewrites the outbound traffic of one public replica according to a strategy.

    The replica's own protocol logic keeps running honestly underneath; the
    adversary only controls what actually leaves the node. It holds the
    replica's signing key and nobody else's.
    """

    def __init__(self, replica: Replica, strategy: str, cfg: ClusterConfig, seed: int, after: int = 0):
        if strategy not in STRATEGIES:
            raise ScenarioInvalid(f"unknown strategy {strategy!r}")
        self.replica = replica
        self.strategy = strategy
        self.cfg = cfg
        self.seed = seed
        self.signer = replica.signer
        self.history: list = []
        self.sent = 0
        self.forged: list = []
        self.after = after

    def transform(self, dst, msg) -> list[tuple]:
        """Return the (dst, msg, claimed_src) triples actually put on the wire."""
        self.sent += 1
        strategy = self.strategy
        me = self.replica.id
        if self.sent <= self.after:
            return [(dst, msg, me)]
        if strategy == "mute":
            return []
        if strategy == "equivocate":
            if self._second_half(dst):
                msg = self._alter(msg)
            return [(dst, msg, me)]
        if strategy == "corrupt_digest":
            return [(dst, self._corrupt(msg), me)]
        if strategy == "wrong_seq":
            return [(dst, self._shift(msg), me)]
        if strategy == "replay_old_view":
            out = [(dst, msg, me)]
            view = getattr(msg, "view", None)
            older = [h for h in self.history if view is not None and getattr(h, "view", view) < view]
            pool = older or self.history
            if pool:
                out.append((dst, pool[self.sent % len(pool)], me))
            self.history.append(msg)
            if len(self.history) > 64:
                del self.history[:32]
            return out
        # forge_attempt: behave honestly, and periodically inject forgeries
        out = [(dst, msg, me)]
        if isinstance(dst, int) and self.sent % 3 == 0:
            forged, claimed = self._forge(dst)
            if forged is not None:
                self.forged.append(forged)
                out.append((dst, forged, claimed))
        return out

    def _second_half(self, dst) -> bool:
        if isinstance(dst, int):
            return dst % 2 == 1
        return _hash_int(dst) % 2 == 1

    def _resign(self, msg):
        return self.signer.sign(dataclasses.replace(msg, sig=b""))

    def _alter(self, msg):
        if isinstance(msg, PrePrepare):
            alt = Request("noop", 1_000_000 + msg.seq, "")
            digest = self.signer.digest(alt.wire)
            return self._resign(dataclasses.replace(msg, request=alt, digest=digest))
        if isinstance(msg, (Accept, Commit, Inform)):
            return self._resign(dataclasses.replace(msg, digest=self.signer.digest(msg.digest)))
        if isinstance(msg, Checkpoint):
            return self._resign(dataclasses.replace(msg, state_digest=self.signer.digest(msg.state_digest)))
        if isinstance(msg, Reply):
            return self._resign(dataclasses.replace(msg, result=msg.result + "#"))
        if isinstance(msg, ViewChange):
            return self._resign(dataclasses.replace(msg, prepares=(), commits=()))
        return msg

    def _corrupt(self, msg):
        if isinstance(msg, PrePrepare):
            return self._resign(dataclasses.replace(msg, digest=self.signer.digest(msg.digest)))
        return self._alter(msg)

    def _shift(self, msg):
        if isinstance(msg, (PrePrepare, Accept, Commit, Inform)):
            return self._resign(dataclasses.replace(msg, seq=msg.seq + 1))
        return msg

    def _forge(self, dst: int):
        """Build a message that claims to come from an honest replica, with a made-up signature."""
        me = self.replica.id
        cfg = self.cfg
        victims = [r for r in cfg.replicas if r != me and r != dst]
        if not victims:
            return None, None
        victim = victims[self.sent % len(victims)]
        fake = hashlib.blake2b(f"{self.seed}/{me}/{self.sent}".encode(), digest_size=16).digest()
        view = self.replica.view
        req = Request(f"put forged {self.sent}", 10**9 + self.sent, "forger", fake)
        digest = self.signer.digest(req.wire)
        kind = (self.sent // 3) % 8
        trusted = victim % cfg.S if cfg.S else 0
        if kind == 0:
            forged, claimed = Prepare(view, 1 + self.sent, digest, self.replica.mode, req, trusted, fake), trusted
        elif kind == 1:
            forged, claimed = Commit(view, 1 + self.sent, digest, Mode.LION, req, trusted, fake), trusted
        elif kind == 2:
            forged, claimed = Checkpoint(10, digest, view, self.replica.mode, b"", trusted, fake), trusted
        elif kind == 3:
            forged, claimed = NewView(view + 1, self.replica.mode, (), (), (), (view + 1) % cfg.S, fake), (view + 1) % cfg.S
        elif kind == 4:
            forged, claimed = ModeChange(view + 1, Mode.PEACOCK, (view + 1) % cfg.S, fake), (view + 1) % cfg.S
        elif kind == 5:
            forged, claimed = Accept(view, 1 + self.sent, digest, Mode.DOG, victim, fake), victim
        elif kind == 6:
            forged, claimed = Inform(view, 1 + self.sent, digest, Mode.PEACOCK, victim, fake), victim
        else:
            # a genuinely signed view-change wrapping a forged trusted ordering
            bogus = Prepare(view, self.replica.stable_seq + 1, digest, self.replica.mode, req, trusted, fake)
            forged = self.signer.sign(
                ViewChange(view + 1, 0, (), (bogus,), (), 0, None, me)
            )
            claimed = me
        return forged, claimed


# ---------------------------------------------------------------- simulation

@dataclass
class RunResult:
    metrics: RunMetrics
    digests: dict[int, bytes]
    violations: list[str]
    completed_all: bool
    end_time: int
    forged_delivered: int
    forged_rejected: int
    replicas: dict[int, Replica]
    clients: dict[str, Client]
    honest: set[int]

    @property
    def safe(self) -> bool:
        return not self.violations

    def commit_history(self) -> dict[int, dict[int, bytes]]:
        return {rid: dict(self.replicas[rid].executed) for rid in sorted(self.honest)}

    def audit_record(self) -> str:
        """Structured text listing every executed sequence, per replica."""
        lines = []
        for rid in sorted(self.replicas):
            tag = "honest" if rid in self.honest else "byzantine"
            for kind, seq, digest, key in self.replicas[rid].trace:
                lines.append(f"{rid}\t{tag}\t{kind}\t{seq}\t{digest.hex()}\t{'' if key is None else f'{key[0]}:{key[1]}'}")
        return "\n".join(lines) + ("\n" if lines else "")


_DELIVER, _TIMER, _DIRECTIVE = 0, 1, 2
_LABELS = {mode: mode.label for mode in Mode}
_MASK64 = (1 << 64) - 1


def _mix64(z: int) -> int:
    """splitmix64 finalizer; spreads a 64-bit key into a uniform 64-bit value."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Simulation:
    def __init__(self, scenario: ScenarioConfig, seed: int | None = None):
        self.scenario = scenario
        self.cfg = scenario.validate()
        self.seed = scenario.seed if seed is None else seed
        cfg = self.cfg
        clients = [f"c{i}" for i in range(scenario.workload.clients)]
        self.keys = KeyDirectory.generate(list(cfg.replicas) + clients, seed=self.seed)
        params = ReplicaParams(
            checkpoint_period=scenario.checkpoint_period,
            timeout=scenario.tau,
            skip_peacock_quorum="skip_peacock_quorum" in scenario.test_hooks,
        )
        self.replicas = {r: Replica(cfg, r, scenario.mode, self.keys, params) for r in cfg.replicas}
        rng = random.Random(f"{self.seed}/workload")
        wl = scenario.workload
        self.clients = {}
        for cid in clients:
            ops = []
            for _ in range(wl.requests_per_client):
                key = f"k{rng.randrange(max(1, wl.keys))}"
                if rng.random() < wl.put_ratio:
                    ops.append(f"put {key} {rng.randrange(10**6)}")
                else:
                    ops.append(f"get {key}")
            self.clients[cid] = Client(cfg, cid, self.keys, scenario.mode, scenario.client_timeout, ops)
        self.byzantine = {
            b.replica: ByzantineAdversary(self.replicas[b.replica], b.strategy, cfg, self.seed, b.after)
            for b in scenario.faults.byzantine
        }
        self.honest = set(cfg.replicas) - set(self.byzantine)
        self.crashed: set[int] = set()
        self.triggers: list[CrashSpec] = []
        self.epoch = {r: 0 for r in cfg.replicas}
        self.metrics = RunMetrics()
        self.heap: list = []
        self.counter = 0
        self.now = 0
        self.forged_ids: set[int] = set()
        self.forged_delivered = 0
        self.forged_rejected = 0
        self.violations: list[str] = []
        self.delay = scenario.delay
        self.partitions = scenario.faults.partitions
        self._seed_bytes = str(self.seed).encode()
        self._salts: dict = {}
        self._fast = self.delay.jitter == 0 and self.delay.gst <= 0 and not self.partitions

    # ------------------------------------------------------------ scheduling

    def _push(self, time: int, kind: int, a, b=None, c=None) -> None:
        self.counter += 1
        heapq.heappush(self.heap, (time, self.counter, kind, a, b, c))

    def _fate(self, src, dst, msg) -> list[int]:
        """Delivery delays for one send: empty when dropped, two entries when duplicated."""
        d = self.delay
        if self._fast:
            return [d.base]
        salt = self._salts.get((src, dst))
        if salt is None:
            seed_material = b"%s|%s|%s" % (self._seed_bytes, str(src).encode(), str(dst).encode())
            salt = int.from_bytes(hashlib.blake2b(seed_material, digest_size=8).digest(), "little")
            self._salts[(src, dst)] = salt
        x = _mix64(msg.fingerprint_int ^ salt)
        y = _mix64(x ^ 0x9E3779B97F4A7C15)
        if self.now < d.gst:
            if d.drop and (y % 1_000_000) < d.drop * 1_000_000:
                return []
            span = max(d.pre_gst_cap, d.base) - d.base
            delays = [d.base + x % (span + 1)]
            if d.duplicate and ((y >> 20) % 1_000_000) < d.duplicate * 1_000_000:
                delays.append(d.base + (x >> 24) % (span + 1))
        else:
            delays = [d.base + x % (d.jitter + 1)]
        for part in self.partitions:
            if part.start <= self.now < part.end and {src, dst} == {part.a, part.b}:
                delays = [max(t, part.end - self.now + t) for t in delays]
        return delays

    def _emit(self, node, actions: list) -> None:
        now = self.now
        is_replica = isinstance(node, int)
        adversary = self.byzantine.get(node) if is_replica else None
        owner = self.replicas[node] if is_replica else self.clients[node]
        counters = self.metrics.counters
        if self.triggers and is_replica:
            actions = self._fire_triggers(node, actions)
        for action in actions:
            if type(action) is SetTimer:
                self._push(now + action.delay, _TIMER, node, action.key, self.epoch.get(node, 0))
                continue
            if adversary is not None:
                wire = adversary.transform(action.dst, action.msg)
            else:
                wire = ((action.dst, action.msg, node),)
            for dst, msg, src in wire:
                mode = getattr(msg, "mode", None)
                if mode is None:
                    mode = owner.mode if is_replica else owner.known_mode
                counters[(msg.KIND, _LABELS[mode])] += 1
                if adversary is not None and adversary.forged and msg is adversary.forged[-1]:
                    self.forged_ids.add(id(msg))
                for delay in self._fate(src, dst, msg):
                    self._push(now + delay, _DELIVER, dst, src, msg)

    def _fire_triggers(self, node: int, actions: list) -> list:
        for trig in list(self.triggers):
            if self.now < trig.at:
                continue
            hit = next(
                (i for i, a in enumerate(actions)
                 if type(a) is Send and type(a.msg) is Commit and a.msg.seq >= trig.on_commit),
                None,
            )
            if hit is None:
                continue
            self.triggers.remove(trig)
            self._directive("crash", trig.replica)
            if node == trig.replica:
                commit = actions[hit].msg
                escaped = [a for a in actions[hit:] if type(a) is Send and a.msg is commit]
                actions = actions[:hit] + escaped[: trig.partial]
        return actions

    # ------------------------------------------------------------ main loop

    def run(self) -> RunResult:
        sc = self.scenario
        for crash in sc.faults.crashes:
            if crash.on_commit is None:
                self._push(crash.at, _DIRECTIVE, "crash", crash.replica)
            else:
                self.triggers.append(crash)
            if crash.restart_at is not None:
                self._push(crash.restart_at, _DIRECTIVE, "restart", crash.replica)
        for change in sc.mode_changes:
            self._push(change.at, _DIRECTIVE, "mode", change.mode)
        for cid, client in self.clients.items():
            self._emit(cid, client.start(0))

        drain = 4 * sc.tau
        deadline = sc.max_time
        finished_at = None
        replicas, clients, heap = self.replicas, self.clients, self.heap
        while heap:
            time, _, kind, a, b, c = heapq.heappop(heap)
            if time > deadline:
                break
            self.now = time
            if kind == _DELIVER:
                if type(a) is int:
                    if a in self.crashed:
                        continue
                    replica = replicas[a]
                    actions = replica.step(Deliver(b, c), time)
                    if id(c) in self.forged_ids and a in self.honest:
                        self.forged_delivered += 1
                        if replica.last_rejected:
                            self.forged_rejected += 1
                        else:
                            self.violations.append(f"forged {c.KIND} accepted by replica {a}")
                    self._emit(a, actions)
                else:
                    client = clients[a]
                    before = len(client.completions)
                    actions = client.step(Deliver(b, c), time)
                    if len(client.completions) > before:
                        done = client.completions[-1]
                        self.metrics.record_completion(done.client, done.ts, done.mode.label, done.view, done.submitted, done.completed)
                        if finished_at is None and all(cl.done for cl in clients.values()):
                            finished_at = time
                            deadline = min(deadline, time + drain)
                    self._emit(a, actions)
            elif kind == _TIMER:
                if type(a) is int:
                    if a in self.crashed or c != self.epoch[a]:
                        continue
                    self._emit(a, replicas[a].step(TimerFired(b), time))
                else:
                    self._emit(a, clients[a].step(TimerFired(b), time))
            else:
                self._directive(a, b)
        end = self.now
        if finished_at is None and not clients:
            finished_at = 0
        self.metrics.duration = max((s.completed for s in self.metrics.samples), default=0)
        self._collect_spans()
        self.violations.extend(audit(self.replicas, self.honest, self.clients))
        return RunResult(
            metrics=self.metrics,
            digests={r: rep.state_digest() for r, rep in self.replicas.items()},
            violations=self.violations,
            completed_all=all(cl.done for cl in clients.values()),
            end_time=end,
            forged_delivered=self.forged_delivered,
            forged_rejected=self.forged_rejected,
            replicas=self.replicas,
            clients=self.clients,
            honest=self.honest,
        )

    def _directive(self, kind: str, arg) -> None:
        if kind == "crash":
            self.crashed.add(arg)
            self.epoch[arg] += 1
        elif kind == "restart":
            # a triggered crash that has not fired by its restart time is dropped
            self.triggers = [t for t in self.triggers if t.replica != arg]
            if arg in self.crashed:
                self.crashed.discard(arg)
                self._emit(arg, self.replicas[arg].step(Restarted(), self.now))
        elif kind == "mode":
            for rid in self.cfg.private_replicas:
                if rid not in self.crashed:
                    self._emit(rid, self.replicas[rid].step(ModeDirective(arg), self.now))

    def _collect_spans(self) -> None:
        starts, installs = [], []
        for replica in self.replicas.values():
            for note in replica.notes:
                if note[0] == "vc_start":
                    starts.append((note[1], note[2]))
                elif note[0] == "nv_installed":
                    installs.append((note[1], note[2]))
        completions = [s.completed for s in self.metrics.samples]
        self.metrics.spans = view_change_spans(starts, installs, completions)


def run(scenario: ScenarioConfig, seed: int | None = None) -> RunResult:
    """Execute one seeded simulation and audit it."""
    return Simulation(scenario, seed).run()


# ---------------------------------------------------------------- safety audit

def audit(replicas: dict[int, Replica], honest: set[int], clients: dict[str, Client]) -> list[str]:
    """Check agreement, contiguous execution, exactly-once and client results."""
    violations: list[str] = []
    by_seq: dict[int, tuple[bytes, int]] = {}
    placement: dict[tuple, tuple[int, int]] = {}
    checkpoints: dict[int, tuple[bytes, int]] = {}
    for rid in sorted(honest):
        replica = replicas[rid]
        cursor = 0
        for kind, seq, digest, key in replica.trace:
            if kind == "x":
                if seq != cursor + 1:
                    violations.append(f"replica {rid} executed {seq} right after {cursor}")
                prior = by_seq.setdefault(seq, (digest, rid))
                if prior[0] != digest:
                    violations.append(f"agreement: sequence {seq} differs between replicas {prior[1]} and {rid}")
                if key is not None:
                    seen = placement.setdefault(key, (seq, rid))
                    if seen[0] != seq:
                        violations.append(f"request {key} placed at {seen[0]} by {seen[1]} and at {seq} by {rid}")
            elif seq <= cursor:
                violations.append(f"replica {rid} adopted checkpoint {seq} behind cursor {cursor}")
            cursor = seq
        if len(set(replica.applied)) != len(replica.applied):
            violations.append(f"replica {rid} applied a request more than once")
        for seq, digest in replica.cp_digests.items():
            prior = checkpoints.setdefault(seq, (digest, rid))
            if prior[0] != digest:
                violations.append(f"checkpoint {seq} state differs between replicas {prior[1]} and {rid}")
    violations.extend(check_new_views(replicas, honest))
    for client in clients.values():
        for done in client.completions:
            key = (done.client, done.ts)
            vouched = [replicas[r].results[key] for r in honest if key in replicas[r].results]
            if not vouched:
                vouched = [
                    replicas[r].client_table[done.client][1]
                    for r in honest
                    if replicas[r].client_table.get(done.client, (None,))[0] == done.ts
                ]
            if not vouched:
                violations.append(f"client result for {key} not produced by any honest replica")
            elif any(v != done.result for v in vouched):
                violations.append(f"client accepted {done.result!r} for {key} but honest replicas computed {vouched[0]!r}")
    return violations


def check_new_views(replicas: dict[int, Replica], honest: set[int]) -> list[str]:
    """Every new view built by an honest replica must carry, with the same
    digest, each sequence an honest replica executed in an earlier view,
    unless its checkpoint already covers it."""
    violations: list[str] = []
    execs = [(rid, entry) for rid in sorted(honest) for entry in replicas[rid].exec_log]
    for rid in sorted(honest):
        for nv in replicas[rid].assembled:
            low = nv.checkpoint[0].seq if nv.checkpoint else 0
            carried = {p.seq: p.digest for p in nv.prepares}
            carried.update((c.seq, c.digest) for c in nv.commits)
            for who, (seq, digest, view) in execs:
                if view < nv.view and seq > low and carried.get(seq) != digest:
                    violations.append(
                        f"new view {nv.view} from {rid} drops sequence {seq} executed by {who} in view {view}"
                    )
    return violations


# ---------------------------------------------------------------- randomized fault scenarios

def random_scenario(seed: int, c: int, m: int, mode: Mode, requests: tuple[int, int] = (50, 200)) -> ScenarioConfig:
    """A seeded scenario with S=2c, P=3m+1 and a random fault plan within bounds.

    Crashes hit at most c private replicas (some restart), at most m public
    replicas run one Byzantine strategy each, GST lands early in the run,
    and up to two mode switches are scheduled.
    """
    rng = random.Random(f"scenario/{seed}/{c}/{m}/{mode.label}")
    S, P = 2 * c, 3 * m + 1
    total = rng.randint(*requests)
    clients = rng.randint(1, 4)
    per_client = max(math.ceil(requests[0] / clients), total // clients)
    crashes = []
    for replica in sorted(rng.sample(range(S), rng.randint(0, c))):
        at = rng.randint(0, 600)
        restart = at + rng.randint(50, 600) if rng.random() < 0.5 else None
        crashes.append(CrashSpec(replica, at, restart))
    byzantine = [
        ByzantineSpec(replica, rng.choice(STRATEGIES))
        for replica in sorted(rng.sample(range(S, S + P), rng.randint(0, m)))
    ]
    changes = [ModeChangeSpec(rng.randint(0, 800), rng.choice(list(Mode))) for _ in range(rng.randint(0, 2))]
    gst = rng.randint(0, 300)
    return ScenarioConfig(
        cluster=ClusterSpec(S=S, c=c, m=m, P=P),
        mode=mode,
        workload=Workload(clients=clients, requests_per_client=per_client),
        delay=DelaySpec(
            base=1,
            jitter=1,
            gst=gst,
            pre_gst_cap=rng.randint(2, 40),
            drop=rng.choice((0.0, 0.02, 0.05)),
            duplicate=rng.choice((0.0, 0.02)),
        ),
        faults=FaultPlan(crashes=crashes, byzantine=byzantine),
        mode_changes=sorted(changes, key=lambda mc: mc.at),
        max_time=max(200_000, 4 * gst),
        seed=seed,
    )


@dataclass(frozen=True)
class SweepOutcome:
    seed: int
    c: int
    m: int
    mode: str
    violations: tuple[str, ...]
    completed_all: bool
    gst_fraction: float


def run_random(args: tuple[int, int, int, str]) -> SweepOutcome:
    """Run one ``random_scenario`` cell; picklable so it can be fanned out to worker processes."""
    seed, c, m, label = args
    scenario = random_scenario(seed, c, m, Mode.parse(label))
    result = run(scenario)
    fraction = scenario.delay.gst / result.end_time if result.end_time else 0.0
    return SweepOutcome(seed, c, m, label, tuple(result.violations), result.completed_all, fraction)

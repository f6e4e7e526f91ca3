"""Per-replica protocol state machine for the Lion, Dog and Peacock modes.

A replica is a single-threaded event handler: ``step`` consumes one event
(a delivered message, a fired timer, a harness directive) and returns the
outbound actions. It never touches the clock or the network directly.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

from .config import ClusterConfig, ConfigError, Mode, primary_of_view, proxy_set, quorum_size
from .messages import (
    Accept,
    Checkpoint,
    Commit,
    Inform,
    KeyDirectory,
    Message,
    ModeChange,
    NewView,
    PreparedCert,
    PrePrepare,
    Prepare,
    Reply,
    Request,
    ViewChange,
    decode_value,
    encode_value,
    noop_request,
    verify_checkpoint_cert,
    verify_message,
    verify_new_view,
    verify_proof,
)


class Status(enum.Enum):
    NORMAL = "normal"
    VIEW_CHANGE = "view-change"


# ---------------------------------------------------------------- events and actions

@dataclass(slots=True)
class Deliver:
    src: object
    msg: Message


@dataclass(slots=True)
class TimerFired:
    key: tuple


@dataclass(slots=True)
class ModeDirective:
    """Harness instruction: switch the cluster to ``mode`` at the next view."""

    mode: Mode


@dataclass(slots=True)
class Restarted:
    pass


@dataclass(slots=True)
class Send:
    dst: object
    msg: Message


@dataclass(slots=True)
class SetTimer:
    key: tuple
    delay: int


@dataclass
class ReplicaParams:
    checkpoint_period: int = 10
    timeout: int = 8
    max_backoff: int = 4
    # test hook: commit Peacock orderings on arrival, bypassing every quorum
    skip_peacock_quorum: bool = False


# ---------------------------------------------------------------- application

def apply_op(kv: dict, op: str) -> str:
    """Deterministic key-value store: ``put <key> <value>`` or ``get <key>``."""
    parts = op.split(" ", 2)
    if parts[0] == "put" and len(parts) == 3:
        kv[parts[1]] = parts[2]
        return "ok"
    if parts[0] == "get" and len(parts) == 2:
        return kv.get(parts[1], "")
    return "error"


def proof_view(proof) -> int:
    return proof.view


class Slot:
    """Log entry for one sequence number."""

    __slots__ = ("seq", "order", "proof", "lion_commit", "bodies", "accepts", "commits", "informs", "prepared", "done")

    def __init__(self, seq: int):
        self.seq = seq
        self.order = None  # ordering message accepted in the current view
        self.proof = None  # highest-view ordering proof, carried into view changes
        self.lion_commit = None
        self.bodies: dict[bytes, Request] = {}
        self.accepts: dict[tuple, dict] = {}
        self.commits: dict[tuple, dict] = {}
        self.informs: dict[tuple, dict] = {}
        self.prepared: set = set()
        self.done: set = set()


class Replica:
    """Replica state: view, mode, message log, checkpoints and the KV store."""

    def __init__(self, cfg: ClusterConfig, rid: int, mode: Mode, keys: KeyDirectory, params: ReplicaParams | None = None):
        self.cfg = cfg
        self.id = rid
        self.keys = keys
        self.signer = keys.signer(rid)
        self.params = params or ReplicaParams()
        self.initial_mode = mode

        self.view = 0
        self.mode = mode
        self.status = Status.NORMAL
        self.vc_target = 0
        self.vc_promised = 0
        self.last_active = 0
        self.last_nv: NewView | None = None
        self.seq_counter = 0
        self.nv_floor = 0

        self.stable_seq = 0
        self.stable_digest = b""
        self.stable_cert: tuple = ()
        self.exec_cursor = 0
        self.kv: dict[str, str] = {}
        self.client_table: dict[str, tuple[int, str]] = {}

        self.slots: dict[int, Slot] = {}
        self.committed: dict[int, Request] = {}
        self.assigned: dict[tuple, int] = {}
        self.queue: deque[Request] = deque()
        self.queued: set = set()
        self.pending: dict[tuple, tuple[Request, int]] = {}
        self.reply_wanted: set = set()
        self.cp_votes: dict[tuple, dict] = {}
        self.my_cps: dict[int, tuple[bytes, bytes]] = {}

        self.vc_store: dict[int, dict[int, ViewChange]] = {}
        self.nv_sent: set[int] = set()
        self.pending_mode: dict[int, Mode] = {}
        self.helped: set = set()
        self.nudged: set = set()

        self.progress_armed = False
        self.progress_token = 0
        self.progress_mark = 0

        self.now = 0
        self.out: list = []
        self.notes: list[tuple] = []
        self.last_rejected = False
        self.rejected = 0

        # audit record
        self.trace: list[tuple] = []
        self.executed: dict[int, bytes] = {}
        self.applied: list[tuple] = []
        self.results: dict[tuple, str] = {}
        self.cp_digests: dict[int, bytes] = {}
        self.exec_log: list[tuple[int, bytes, int]] = []
        self.assembled: list[NewView] = []

        self._proxies: dict[int, frozenset] = {}
        self._handlers = {
            Request: self._on_request,
            Prepare: self._on_prepare,
            PrePrepare: self._on_preprepare,
            Accept: self._on_accept,
            Commit: self._on_commit,
            Inform: self._on_inform,
            Checkpoint: self._on_checkpoint,
            ViewChange: self._on_view_change,
            NewView: self._on_new_view,
            ModeChange: self._on_mode_change,
        }

    # ------------------------------------------------------------ public surface

    def step(self, event, now: int | None = None) -> list:
        if now is not None:
            self.now = now
        self.out = []
        self.last_rejected = False
        if isinstance(event, Deliver):
            self._on_message(event.src, event.msg)
        elif isinstance(event, TimerFired):
            self._on_timer(event.key)
        elif isinstance(event, ModeDirective):
            self._on_mode_directive(event.mode)
        elif isinstance(event, Restarted):
            self._on_restart()
        out, self.out = self.out, []
        return out

    def snapshot(self) -> bytes:
        return self._snapshot_bytes(self.exec_cursor)

    def restore(self, data: bytes) -> None:
        seq, kv, table = decode_value(data)
        self.kv = dict(kv)
        self.client_table = {client: (ts, result) for client, ts, result in table}
        self.exec_cursor = seq

    def state_digest(self) -> bytes:
        return self.signer.digest(self.snapshot())

    # ------------------------------------------------------------ roles

    def proxies(self, view: int | None = None) -> frozenset:
        view = self.view if view is None else view
        found = self._proxies.get(view)
        if found is None:
            found = self._proxies[view] = proxy_set(view, self.cfg)
        return found

    def primary(self) -> int:
        return primary_of_view(self.view, self.mode, self.cfg)

    def is_primary(self) -> bool:
        return self.id == self.primary()

    def is_proxy(self) -> bool:
        return self.mode is not Mode.LION and self.id in self.proxies()

    def _designated_replier(self) -> bool:
        if self.mode is Mode.LION:
            return self.is_primary()
        return self.is_proxy()

    def _vc_sender(self) -> bool:
        return self.mode is Mode.LION or self.cfg.is_public(self.id)

    def _holds_progress_timer(self) -> bool:
        return self._vc_sender() and not self.is_primary()

    # ------------------------------------------------------------ plumbing

    def _send(self, dst, msg: Message) -> None:
        if dst != self.id:
            self.out.append(Send(dst, msg))

    def _multicast(self, dsts, msg: Message) -> None:
        out = self.out
        for dst in dsts:
            if dst != self.id:
                out.append(Send(dst, msg))

    def _timer(self, key: tuple, delay: int) -> None:
        self.out.append(SetTimer(key, delay))

    def _sign(self, msg):
        return self.signer.sign(msg)

    def _digest(self, req: Request) -> bytes:
        return self.signer.digest(req.wire)

    def _reject(self) -> None:
        self.last_rejected = True
        self.rejected += 1

    def _current(self, view: int) -> bool:
        return self.status is Status.NORMAL and view == self.view

    def _slot_for(self, seq: int) -> Slot | None:
        if seq <= self.stable_seq or seq > self.stable_seq + 4 * self.params.checkpoint_period:
            return None
        slot = self.slots.get(seq)
        if slot is None:
            slot = self.slots[seq] = Slot(seq)
        return slot

    def _non_proxies(self):
        proxies = self.proxies()
        return [r for r in self.cfg.replicas if r not in proxies]

    # ------------------------------------------------------------ dispatch

    def _on_message(self, src, msg: Message) -> None:
        sender = getattr(msg, "sender", None)
        # links are authenticated: a message naming a sender must arrive from it
        if sender is not None and sender != src:
            return self._reject()
        handler = self._handlers.get(type(msg))
        if handler is None or not verify_message(msg, self.keys, self.cfg):
            return self._reject()
        handler(src, msg)

    def _on_timer(self, key: tuple) -> None:
        kind = key[0]
        if kind == "progress":
            self._on_progress(key[1])
        elif kind == "vc":
            if self.status is Status.VIEW_CHANGE and self.vc_target == key[1]:
                self._start_view_change(key[1] + 1)

    def _on_restart(self) -> None:
        self.progress_armed = False
        self.progress_token += 1
        if self.status is Status.VIEW_CHANGE:
            if self._vc_sender():
                self._broadcast_vc(self.vc_target)
                self._arm_vc_timer(self.vc_target)
        else:
            self._arm_progress()

    # ------------------------------------------------------------ client requests

    def _on_request(self, src, req: Request) -> None:
        if req.is_noop or (src != req.client and not isinstance(src, int)):
            return self._reject()
        key = (req.client, req.ts)
        direct = src == req.client
        last = self.client_table.get(req.client)
        if last is not None and req.ts <= last[0]:
            if direct and req.ts == last[0]:
                self._send_reply(req.client, req.ts, last[1])
            return
        leading = self.status is Status.NORMAL and self.is_primary()
        # a direct request reaching anyone but the leader, or reaching it twice, is a retransmission
        if direct and (not leading or key in self.assigned or key in self.queued):
            self.reply_wanted.add(key)
        if leading:
            self._enqueue(req)
            return
        if key not in self.pending:
            self.pending[key] = (req, self.now)
        if direct and self.status is Status.NORMAL:
            self._send(self.primary(), req)
            self._arm_progress()

    def _enqueue(self, req: Request) -> None:
        key = (req.client, req.ts)
        if key in self.assigned or key in self.queued:
            return
        self.queue.append(req)
        self.queued.add(key)
        self._drain_queue()

    def _drain_queue(self) -> None:
        if self.status is not Status.NORMAL or not self.is_primary():
            return
        limit = self.stable_seq + 2 * self.params.checkpoint_period
        # a checkpoint adopted after the view began may have overtaken the counter
        self.seq_counter = max(self.seq_counter, self.stable_seq)
        while self.queue and self.seq_counter < limit:
            req = self.queue.popleft()
            key = (req.client, req.ts)
            self.queued.discard(key)
            last = self.client_table.get(req.client)
            if key in self.assigned or (last is not None and req.ts <= last[0]):
                continue
            self.seq_counter += 1
            self._order(self.seq_counter, req)

    def _order(self, seq: int, req: Request) -> None:
        digest = self._digest(req)
        if self.mode is Mode.PEACOCK:
            msg = self._sign(PrePrepare(self.view, seq, digest, self.mode, req, self.id))
        else:
            msg = self._sign(Prepare(self.view, seq, digest, self.mode, req, self.id))
        slot = self._slot_for(seq)
        slot.order = msg
        slot.bodies[digest] = req
        if isinstance(msg, Prepare):
            slot.proof = msg
        self.assigned[(req.client, req.ts)] = seq
        self._multicast(self.cfg.replicas, msg)
        self._after_order(slot)

    # ------------------------------------------------------------ agreement

    def _on_prepare(self, src, msg: Prepare) -> None:
        if not self._current(msg.view):
            self._maybe_catch_up(msg.view)
            return
        if msg.mode is self.mode:
            self._accept_order(msg)

    def _on_preprepare(self, src, msg: PrePrepare) -> None:
        if not self._current(msg.view) or self.mode is not Mode.PEACOCK:
            return
        if msg.seq <= self.nv_floor:
            return
        self._accept_order(msg)

    def _accept_order(self, msg) -> None:
        slot = self._slot_for(msg.seq)
        if slot is None:
            return
        req = msg.request
        slot.bodies[msg.digest] = req
        current = slot.order
        if current is not None and current.view == msg.view:
            return  # duplicate, or a conflicting ordering for a taken sequence number
        key = (req.client, req.ts)
        if not req.is_noop and isinstance(msg, PrePrepare):
            last = self.client_table.get(req.client)
            if last is not None and req.ts <= last[0]:
                return
            other = self.assigned.get(key)
            if other is not None and other != msg.seq:
                return
        slot.order = msg
        if isinstance(msg, Prepare) and (slot.proof is None or proof_view(slot.proof) < msg.view):
            slot.proof = msg
        if not req.is_noop:
            self.assigned[key] = msg.seq
        self._after_order(slot)

    def _after_order(self, slot: Slot) -> None:
        order = slot.order
        view, digest = order.view, order.digest
        mode = self.mode
        if mode is Mode.LION:
            primary = self.primary()
            if self.id == primary:
                self._lion_try_commit(slot)
            else:
                self._send(primary, Accept(view, slot.seq, digest, Mode.LION, self.id))
                self._arm_progress()
            return
        if mode is Mode.PEACOCK and self.params.skip_peacock_quorum:
            self._commit(slot.seq, order.request)
            return
        if self.is_proxy():
            if mode is Mode.DOG or order.sender != self.id:
                acc = self._sign(Accept(view, slot.seq, digest, mode, self.id))
                slot.accepts.setdefault((view, digest), {})[self.id] = acc
                self._multicast(self.proxies(), acc)
            if mode is Mode.DOG:
                self._dog_try_commit(slot, view, digest)
            else:
                self._peacock_try_prepare(slot, view, digest)
        else:
            self._try_inform_commit(slot, view, digest)
        self._arm_progress()

    def _on_accept(self, src, msg: Accept) -> None:
        if msg.mode is not self.mode or not self._current(msg.view):
            return
        slot = self._slot_for(msg.seq)
        if slot is None:
            return
        key = (msg.view, msg.digest)
        slot.accepts.setdefault(key, {})[msg.sender] = msg
        if self.mode is Mode.LION:
            if self.is_primary():
                self._lion_try_commit(slot)
        elif self.is_proxy():
            if self.mode is Mode.DOG:
                self._dog_try_commit(slot, *key)
            else:
                self._peacock_try_prepare(slot, *key)

    def _lion_try_commit(self, slot: Slot) -> None:
        order = slot.order
        if order is None or order.view != self.view or ("C", self.view) in slot.done:
            return
        votes = slot.accepts.get((order.view, order.digest), ())
        if len(votes) < 2 * self.cfg.m + self.cfg.c:
            return
        slot.done.add(("C", self.view))
        commit = self._sign(Commit(order.view, slot.seq, order.digest, Mode.LION, order.request, self.id))
        slot.lion_commit = commit
        self._multicast(self.cfg.replicas, commit)
        self._commit(slot.seq, order.request)

    def _dog_try_commit(self, slot: Slot, view: int, digest: bytes) -> None:
        order = slot.order
        if order is None or order.view != view or order.digest != digest or ("C", view) in slot.done:
            return
        m = self.cfg.m
        if len(slot.accepts.get((view, digest), ())) < 2 * m + 1 and len(slot.commits.get((view, digest), ())) < m + 1:
            return
        slot.done.add(("C", view))
        commit = self._sign(Commit(view, slot.seq, digest, Mode.DOG, None, self.id))
        slot.commits.setdefault((view, digest), {})[self.id] = commit
        self._multicast(self.proxies(), commit)
        self._multicast(self._non_proxies(), self._sign(Inform(view, slot.seq, digest, Mode.DOG, self.id)))
        self._commit(slot.seq, order.request)

    def _peacock_try_prepare(self, slot: Slot, view: int, digest: bytes) -> None:
        order = slot.order
        if order is None or order.view != view or order.digest != digest or (view, digest) in slot.prepared:
            return
        votes = slot.accepts.get((view, digest), {})
        backers = sorted(s for s in votes if s != order.sender)
        if len(backers) < 2 * self.cfg.m:
            return
        slot.prepared.add((view, digest))
        if isinstance(order, PrePrepare):
            slot.proof = PreparedCert(order, tuple(votes[s] for s in backers[: 2 * self.cfg.m]))
        elif slot.proof is None or proof_view(slot.proof) < view:
            slot.proof = order
        commit = self._sign(Commit(view, slot.seq, digest, Mode.PEACOCK, None, self.id))
        slot.commits.setdefault((view, digest), {})[self.id] = commit
        self._multicast(self.proxies(), commit)
        self._peacock_try_commit(slot, view, digest)

    def _peacock_try_commit(self, slot: Slot, view: int, digest: bytes) -> None:
        if (view, digest) not in slot.prepared or ("C", view) in slot.done:
            return
        if len(slot.commits.get((view, digest), ())) < 2 * self.cfg.m + 1:
            return
        slot.done.add(("C", view))
        self._multicast(self._non_proxies(), self._sign(Inform(view, slot.seq, digest, Mode.PEACOCK, self.id)))
        self._commit(slot.seq, slot.order.request)

    def _on_commit(self, src, msg: Commit) -> None:
        if msg.mode is Mode.LION:
            if not self._current(msg.view):
                self._maybe_catch_up(msg.view)
                return
            if self.mode is not Mode.LION:
                return
            slot = self._slot_for(msg.seq)
            if slot is None:
                return
            slot.bodies[msg.digest] = msg.request
            if slot.lion_commit is None or slot.lion_commit.view < msg.view:
                slot.lion_commit = msg
            self._commit(msg.seq, msg.request)
            return
        if msg.mode is not self.mode or not self._current(msg.view) or not self.is_proxy():
            return
        slot = self._slot_for(msg.seq)
        if slot is None:
            return
        key = (msg.view, msg.digest)
        slot.commits.setdefault(key, {})[msg.sender] = msg
        if self.mode is Mode.DOG:
            self._dog_try_commit(slot, *key)
        else:
            self._peacock_try_commit(slot, *key)

    def _on_inform(self, src, msg: Inform) -> None:
        if msg.mode is not self.mode or not self._current(msg.view) or self.is_proxy():
            return
        slot = self._slot_for(msg.seq)
        if slot is None:
            return
        slot.informs.setdefault((msg.view, msg.digest), {})[msg.sender] = msg
        self._try_inform_commit(slot, msg.view, msg.digest)

    def _try_inform_commit(self, slot: Slot, view: int, digest: bytes) -> None:
        m = self.cfg.m
        need = 2 * m + 1 if self.mode is Mode.DOG else m + 1
        if len(slot.informs.get((view, digest), ())) < need or ("C", view) in slot.done:
            return
        req = slot.bodies.get(digest)
        if req is None:
            return
        slot.done.add(("C", view))
        self._commit(slot.seq, req)

    # ------------------------------------------------------------ execution

    def _commit(self, seq: int, req: Request) -> None:
        if seq <= self.exec_cursor or seq in self.committed:
            return
        self.committed[seq] = req
        self._try_execute()

    def _try_execute(self) -> None:
        committed = self.committed
        while True:
            req = committed.pop(self.exec_cursor + 1, None)
            if req is None:
                return
            self._execute(self.exec_cursor + 1, req)

    def _execute(self, seq: int, req: Request) -> None:
        digest = self._digest(req)
        result = None
        mutated = False
        key = (req.client, req.ts)
        if not req.is_noop:
            last = self.client_table.get(req.client)
            if last is None or req.ts > last[0]:
                result = apply_op(self.kv, req.op)
                self.client_table[req.client] = (req.ts, result)
                self.applied.append(key)
                self.results.setdefault(key, result)
                mutated = True
            elif req.ts == last[0]:
                result = last[1]
        self.exec_cursor = seq
        self.executed[seq] = digest
        # a request ordered twice across views is skipped on its second slot
        self.trace.append(("x", seq, digest, key if mutated else None))
        self.exec_log.append((seq, digest, self.last_active))
        if not req.is_noop:
            self.pending.pop(key, None)
            if result is not None and (self._designated_replier() or key in self.reply_wanted):
                self.reply_wanted.discard(key)
                self._send_reply(req.client, req.ts, result)
        if seq % self.params.checkpoint_period == 0:
            self._checkpoint_tick(seq)

    def _send_reply(self, client: str, ts: int, result: str) -> None:
        self._send(client, self._sign(Reply(self.mode, self.view, ts, client, result, self.id)))

    # ------------------------------------------------------------ checkpoints

    def _snapshot_bytes(self, seq: int) -> bytes:
        kv = tuple(sorted(self.kv.items()))
        table = tuple(sorted((client, ts, result) for client, (ts, result) in self.client_table.items()))
        return encode_value((seq, kv, table))

    def _checkpoint_tick(self, seq: int) -> None:
        snap = self._snapshot_bytes(seq)
        digest = self.signer.digest(snap)
        self.cp_digests[seq] = digest
        self.my_cps[seq] = (digest, snap)
        if self.mode is Mode.PEACOCK:
            if self.cfg.is_public(self.id):
                cp = self._sign(Checkpoint(seq, digest, self.view, self.mode, snap, self.id))
                self._multicast(self.cfg.replicas, cp)
                self._add_cp_vote(cp)
        elif self.status is Status.NORMAL and self.is_primary():
            cp = self._sign(Checkpoint(seq, digest, self.view, self.mode, snap, self.id))
            self._multicast(self.cfg.replicas, cp)
            self._stabilize(seq, digest, (cp,), snap)

    def _resend_checkpoint(self) -> None:
        if not self.my_cps:
            return
        seq = max(self.my_cps)
        digest, snap = self.my_cps[seq]
        if self.mode is Mode.PEACOCK:
            if not self.cfg.is_public(self.id):
                return
        elif not self.is_primary():
            return
        cp = self._sign(Checkpoint(seq, digest, self.view, self.mode, snap, self.id))
        self._multicast(self.cfg.replicas, cp)
        if self.cfg.is_private(self.id):
            self._stabilize(seq, digest, (cp,), snap)
        else:
            self._add_cp_vote(cp)

    def _on_checkpoint(self, src, cp: Checkpoint) -> None:
        if self.cfg.is_private(cp.sender):
            self._maybe_catch_up(cp.view)
            self._stabilize(cp.seq, cp.state_digest, (cp,), cp.snapshot)
        elif cp.seq > self.stable_seq:
            self._add_cp_vote(cp)

    def _add_cp_vote(self, cp: Checkpoint) -> None:
        votes = self.cp_votes.setdefault((cp.seq, cp.state_digest), {})
        votes[cp.sender] = cp
        need = 2 * self.cfg.m + 1
        if len(votes) >= need:
            cert = tuple(votes[s] for s in sorted(votes)[:need])
            self._stabilize(cp.seq, cp.state_digest, cert, cp.snapshot)

    def _stabilize(self, seq: int, digest: bytes, cert: tuple, snap: bytes) -> None:
        if seq <= self.stable_seq:
            return
        self.stable_seq, self.stable_digest, self.stable_cert = seq, digest, cert
        for table in (self.slots, self.committed):
            for s in [s for s in table if s <= seq]:
                del table[s]
        for key in [k for k in self.cp_votes if k[0] <= seq]:
            del self.cp_votes[key]
        for s in [s for s in self.my_cps if s < seq]:
            del self.my_cps[s]
        for key in [k for k, s in self.assigned.items() if s <= seq]:
            del self.assigned[key]
        if self.exec_cursor < seq:
            # state transfer: adopt the certified snapshot
            self.restore(snap)
            self.trace.append(("a", seq, digest, None))
            self.cp_digests[seq] = digest
            self.my_cps[seq] = (digest, snap)
            for key in list(self.pending):
                last = self.client_table.get(key[0])
                if last is not None and key[1] <= last[0]:
                    del self.pending[key]
        self._try_execute()
        self._drain_queue()

    # ------------------------------------------------------------ progress timer

    def _has_work(self) -> bool:
        if self.pending:
            return True
        view, cursor = self.view, self.exec_cursor
        return any(s.order is not None and s.order.view == view and seq > cursor for seq, s in self.slots.items())

    def _arm_progress(self) -> None:
        if self.progress_armed or self.status is not Status.NORMAL or not self._holds_progress_timer():
            return
        if not self._has_work():
            return
        self.progress_armed = True
        self.progress_token += 1
        self.progress_mark = self.exec_cursor
        self._timer(("progress", self.progress_token), self.params.timeout)

    def _on_progress(self, token: int) -> None:
        if token != self.progress_token:
            return
        self.progress_armed = False
        if self.status is not Status.NORMAL or not self._has_work():
            return
        oldest = min((t for _, t in self.pending.values()), default=None)
        stuck = self.exec_cursor == self.progress_mark
        starving = oldest is not None and self.now - oldest >= 2 * self.params.timeout
        if stuck or starving:
            self._start_view_change(self.view + 1)
        else:
            self._arm_progress()

    # ------------------------------------------------------------ view change

    def _vc_recipients(self, view: int):
        if self.mode is Mode.DOG:
            targets = set(self.cfg.public_replicas)
            targets.add(view % self.cfg.S)
            return sorted(targets)
        return self.cfg.replicas

    def _arm_vc_timer(self, view: int) -> None:
        exponent = min(max(view - self.view - 1, 0), self.params.max_backoff)
        self._timer(("vc", view), self.params.timeout * 2**exponent)

    def _make_vc(self, view: int) -> ViewChange:
        stable = self.stable_seq
        proofs = tuple(s.proof for seq, s in sorted(self.slots.items()) if seq > stable and s.proof is not None)
        commits = ()
        if self.mode is Mode.LION:
            commits = tuple(
                s.lion_commit for seq, s in sorted(self.slots.items()) if seq > stable and s.lion_commit is not None
            )
        msg = ViewChange(view, stable, self.stable_cert, proofs, commits, self.last_active, self.last_nv, self.id)
        return self._sign(msg)

    def _broadcast_vc(self, view: int) -> None:
        vc = self._make_vc(view)
        vc.__dict__["_vc_ok"] = True
        self.vc_promised = max(self.vc_promised, view)
        self.vc_store.setdefault(view, {})[self.id] = vc
        self._multicast(self._vc_recipients(view), vc)

    def _start_view_change(self, view: int) -> None:
        if view <= self.view or (self.status is Status.VIEW_CHANGE and self.vc_target >= view):
            return
        self.status = Status.VIEW_CHANGE
        self.vc_target = view
        self.progress_armed = False
        self.progress_token += 1
        for req in self.queue:
            self.pending.setdefault((req.client, req.ts), (req, self.now))
        self.queue.clear()
        self.queued.clear()
        self.notes.append(("vc_start", view, self.now))
        if self._vc_sender():
            self._broadcast_vc(view)
            self._arm_vc_timer(view)
        if self.id == view % self.cfg.S:
            self._try_assemble(view)

    def _vc_ok(self, vc: ViewChange) -> bool:
        cached = vc.__dict__.get("_vc_ok")
        if cached is None:
            cached = vc.__dict__["_vc_ok"] = self._check_vc(vc)
        return cached

    def _check_vc(self, vc: ViewChange) -> bool:
        keys, cfg = self.keys, self.cfg
        if vc.stable_seq > 0:
            if not vc.checkpoint or vc.checkpoint[0].seq != vc.stable_seq:
                return False
            if not verify_checkpoint_cert(vc.checkpoint, keys, cfg):
                return False
        elif vc.checkpoint:
            return False
        for proof in vc.prepares:
            if not verify_proof(proof, keys, cfg) or proof.seq <= vc.stable_seq:
                return False
        for commit in vc.commits:
            if not isinstance(commit, Commit) or commit.mode is not Mode.LION or not verify_message(commit, keys, cfg):
                return False
        if vc.last_active > 0:
            nv = vc.last_new_view
            return isinstance(nv, NewView) and nv.view == vc.last_active and verify_new_view(nv, keys, cfg)
        return vc.last_new_view is None

    def _on_view_change(self, src, vc: ViewChange) -> None:
        if not self._vc_ok(vc):
            return self._reject()
        if vc.last_new_view is not None and vc.last_new_view.view > self.last_active:
            self._learn_new_view(vc.last_new_view)
        if vc.last_active < self.last_active and (vc.sender, self.last_active) not in self.helped:
            # the sender missed a new view we installed; hand it over
            self.helped.add((vc.sender, self.last_active))
            self._send(vc.sender, self.last_nv)
        if vc.view <= self.view:
            return
        self.vc_store.setdefault(vc.view, {})[vc.sender] = vc
        self._maybe_join()
        if self.status is Status.VIEW_CHANGE and self.id == self.vc_target % self.cfg.S:
            self._try_assemble(self.vc_target)

    def _supporters(self, floor: int) -> dict[int, int]:
        """Highest view above ``floor`` requested by each other replica."""
        latest: dict[int, int] = {}
        for view, group in self.vc_store.items():
            if view <= floor:
                continue
            for sender in group:
                if sender != self.id and view > latest.get(sender, 0):
                    latest[sender] = view
        return latest

    def _maybe_join(self) -> None:
        floor = self.vc_target if self.status is Status.VIEW_CHANGE else self.view
        latest = self._supporters(floor)
        if not latest:
            return
        target = max((v for s, v in latest.items() if self.cfg.is_private(s)), default=0)
        views = sorted(latest.values(), reverse=True)
        if len(views) > self.cfg.m:
            target = max(target, views[self.cfg.m])
        if target:
            self._start_view_change(target)

    def _target_supported(self) -> bool:
        if self.vc_target in self.pending_mode:
            return True
        latest = self._supporters(self.vc_target - 1)
        return len(latest) > self.cfg.m or any(self.cfg.is_private(s) for s in latest)

    def _maybe_catch_up(self, view: int) -> None:
        """Trusted evidence shows ``view`` is active here; ask peers for its new-view."""
        if view <= self.view or view in self.nudged:
            return
        if self.status is Status.VIEW_CHANGE and view < self.vc_target:
            return
        self.nudged.add(view)
        self._multicast(self.cfg.replicas, self._make_vc(view))

    def _target_mode(self, view: int, last_active: int, mode_l: Mode) -> Mode:
        requested = [v for v in self.pending_mode if last_active < v <= view]
        if not requested:
            return mode_l
        mode = self.pending_mode[max(requested)]
        try:
            self.cfg.validate_for(mode)
        except ConfigError:
            return mode_l
        return mode

    def _try_assemble(self, view: int) -> None:
        if view in self.nv_sent or self.status is not Status.VIEW_CHANGE or self.vc_target != view:
            return
        cfg = self.cfg
        vcs = list(self.vc_store.get(view, {}).values())
        last, nv_last = self.last_active, self.last_nv
        for vc in vcs:
            if vc.last_active > last:
                last, nv_last = vc.last_active, vc.last_new_view
        mode_l = nv_last.mode if nv_last is not None else self.initial_mode
        if mode_l is Mode.LION:
            eligible = [vc for vc in vcs if vc.last_active == last]
        else:
            proxies = self.proxies(last)
            eligible = [vc for vc in vcs if vc.last_active == last and vc.sender in proxies]
        if len(eligible) < quorum_size(mode_l, cfg.m, cfg.c):
            return

        certs = [(vc.stable_seq, vc.checkpoint) for vc in vcs]
        certs.append((self.stable_seq, self.stable_cert))
        if nv_last is not None and nv_last.checkpoint:
            certs.append((nv_last.checkpoint[0].seq, nv_last.checkpoint))
        low, cert = max(certs, key=lambda item: item[0])

        best: dict[int, tuple] = {}

        def offer(proof, is_commit: bool) -> None:
            if proof.seq <= low:
                return
            rank = (proof_view(proof), is_commit)
            current = best.get(proof.seq)
            if current is None or rank > current[0]:
                best[proof.seq] = (rank, proof)

        votes: dict[tuple, set] = {}
        eligible_ids = {vc.sender for vc in eligible}
        for vc in vcs:
            for proof in vc.prepares:
                offer(proof, False)
                if vc.sender in eligible_ids:
                    votes.setdefault((proof.seq, proof.digest), set()).add(vc.sender)
            for commit in vc.commits:
                offer(commit, True)
        if nv_last is not None:
            for proof in nv_last.prepares:
                offer(proof, False)
            for commit in nv_last.commits:
                offer(commit, True)
        for slot in self.slots.values():
            if slot.proof is not None:
                offer(slot.proof, False)
            if slot.lion_commit is not None:
                offer(slot.lion_commit, True)

        target = self._target_mode(view, last, mode_l)
        high = max(best, default=low)
        lion_quorum = quorum_size(Mode.LION, cfg.m, cfg.c)
        prepares, commits = [], []
        for seq in range(low + 1, high + 1):
            entry = best.get(seq)
            if entry is None:
                req = noop_request(seq)
                digest = self._digest(req)
            else:
                (_, is_commit), proof = entry
                req, digest = proof.request, proof.digest
                if target is Mode.LION and (is_commit or len(votes.get((seq, digest), ())) >= lion_quorum):
                    commits.append(self._sign(Commit(view, seq, digest, Mode.LION, req, self.id)))
                    continue
            prepares.append(self._sign(Prepare(view, seq, digest, target, req, self.id)))
        nv = self._sign(NewView(view, target, cert, tuple(prepares), tuple(commits), self.id))
        self.nv_sent.add(view)
        self.assembled.append(nv)
        self._multicast(self.cfg.replicas, nv)
        self._install(nv)

    # ------------------------------------------------------------ new view

    def _on_new_view(self, src, nv: NewView) -> None:
        if not verify_new_view(nv, self.keys, self.cfg):
            return self._reject()
        if nv.view > self.last_active:
            self._learn_new_view(nv)

    def _learn_new_view(self, nv: NewView) -> None:
        if self.status is Status.NORMAL:
            if nv.view > self.view:
                self._install(nv)
            return
        # once our ViewChange for the target is out it may be counted in that
        # view's quorum, so falling back to a lower view would break its promise
        if nv.view >= self.vc_target or (self.vc_promised < self.vc_target and not self._target_supported()):
            self._install(nv)
            return
        # a newer view change is under way; keep its target but adopt what nv proves
        self._absorb(nv)
        if self._vc_sender():
            self._broadcast_vc(self.vc_target)

    def _absorb(self, nv: NewView) -> None:
        self.view = max(self.view, nv.view)
        self.mode = nv.mode
        self.last_active = nv.view
        self.last_nv = nv
        if nv.checkpoint:
            first = nv.checkpoint[0]
            self._stabilize(first.seq, first.state_digest, nv.checkpoint, first.snapshot)
        for prep in nv.prepares:
            slot = self._slot_for(prep.seq)
            if slot is not None:
                slot.bodies[prep.digest] = prep.request
                if slot.proof is None or proof_view(slot.proof) <= prep.view:
                    slot.proof = prep
        for commit in nv.commits:
            slot = self._slot_for(commit.seq)
            if slot is not None:
                slot.bodies[commit.digest] = commit.request
                slot.lion_commit = commit
            self._commit(commit.seq, commit.request)

    def _install(self, nv: NewView) -> None:
        self._absorb(nv)
        self.status = Status.NORMAL
        self.vc_target = nv.view
        self.nv_floor = nv.high
        self.seq_counter = max(self.stable_seq, nv.high)
        self.assigned = {}
        for view in [v for v in self.vc_store if v <= nv.view]:
            del self.vc_store[view]
        self.notes.append(("nv_installed", nv.view, self.now))
        ordered = []
        for prep in nv.prepares:
            slot = self._slot_for(prep.seq)
            if slot is None:
                continue
            slot.order = prep
            if not prep.request.is_noop:
                self.assigned[(prep.request.client, prep.request.ts)] = prep.seq
            ordered.append(slot)
        for commit in nv.commits:
            if not commit.request.is_noop:
                self.assigned[(commit.request.client, commit.request.ts)] = commit.seq
        for slot in ordered:
            self._after_order(slot)
        self._try_execute()
        self._resend_checkpoint()
        self.pending = {key: (req, self.now) for key, (req, _) in self.pending.items()}
        if self.is_primary():
            for req, _ in list(self.pending.values()):
                self._enqueue(req)
            self.pending.clear()
        self._arm_progress()

    # ------------------------------------------------------------ mode switching

    def _on_mode_directive(self, mode: Mode) -> None:
        if self.status is not Status.NORMAL:
            return
        view = self.view + 1
        if self.id != view % self.cfg.S:
            return
        self._multicast(self.cfg.replicas, self._sign(ModeChange(view, mode, self.id)))
        self.pending_mode[view] = mode
        self.notes.append(("mode_change", view, mode, self.now))
        self._start_view_change(view)

    def _on_mode_change(self, src, msg: ModeChange) -> None:
        if msg.view <= self.view:
            return
        self.pending_mode[msg.view] = msg.mode
        if self._vc_sender():
            self._start_view_change(msg.view)

"""Closed-loop client: one outstanding request, mode-dependent reply quorums."""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import ClusterConfig, Mode, primary_of_view
from .messages import KeyDirectory, Reply, Request, verify_message
from .replica import Deliver, Send, SetTimer, TimerFired


class Busy(RuntimeError):
    """Raised when submitting while a request is still outstanding."""


@dataclass
class Completion:
    client: str
    ts: int
    submitted: int
    completed: int
    result: str
    mode: Mode
    view: int

    @property
    def latency(self) -> int:
        return self.completed - self.submitted


@dataclass
class PendingRequest:
    request: Request
    sent_at: int
    replies: dict = field(default_factory=dict)
    fallback: bool = False


class Client:
    """Client state: timestamp counter, pending request and believed (mode, view)."""

    def __init__(self, cfg: ClusterConfig, cid: str, keys: KeyDirectory, mode: Mode, timeout: int, ops=()):
        self.cfg = cfg
        self.id = cid
        self.keys = keys
        self.signer = keys.signer(cid)
        self.timeout = timeout
        self.known_mode = mode
        self.known_view = 0
        self.ts = 0
        self.pending: PendingRequest | None = None
        self.ops = list(ops)
        self.completions: list[Completion] = []
        self.now = 0
        self.out: list = []

    @property
    def done(self) -> bool:
        return self.pending is None and not self.ops

    def target(self) -> int:
        return primary_of_view(self.known_view, self.known_mode, self.cfg)

    def start(self, now: int = 0) -> list:
        self.now = now
        self.out = []
        self._next()
        out, self.out = self.out, []
        return out

    def submit(self, op: str) -> Request:
        if self.pending is not None:
            raise Busy(f"{self.id} already has request {self.pending.request.ts} outstanding")
        self.ts += 1
        req = self.signer.sign(Request(op, self.ts, self.id))
        self.pending = PendingRequest(req, self.now)
        self.out.append(Send(self.target(), req))
        self.out.append(SetTimer(("client", self.ts), self.timeout))
        return req

    def step(self, event, now: int | None = None) -> list:
        if now is not None:
            self.now = now
        self.out = []
        if isinstance(event, Deliver) and isinstance(event.msg, Reply):
            if self.accept_reply(event.src, event.msg) is not None:
                self._next()
        elif isinstance(event, TimerFired):
            self.client_timeout(event.key[1])
        out, self.out = self.out, []
        return out

    def _next(self) -> None:
        if self.pending is None and self.ops:
            self.submit(self.ops.pop(0))

    def _needed_public(self) -> int:
        m = self.cfg.m
        if self.known_mode is Mode.DOG and not self.pending.fallback:
            return 2 * m + 1
        return m + 1

    def accept_reply(self, src, reply: Reply) -> Completion | None:
        """Record ``reply``; return the completion once a reply quorum matches."""
        pending = self.pending
        if pending is None or reply.client != self.id or reply.ts != pending.request.ts:
            return None
        if src != reply.sender or not verify_message(reply, self.keys, self.cfg):
            return None
        pending.replies[reply.sender] = reply
        if self.cfg.is_private(reply.sender):
            return self._complete(reply.result, [reply])
        # Lion's normal path expects the trusted primary; public replies count only on fallback
        if self.known_mode is Mode.LION and not pending.fallback:
            return None
        matching = [r for r in pending.replies.values() if self.cfg.is_public(r.sender) and r.result == reply.result]
        if len(matching) >= self._needed_public():
            return self._complete(reply.result, matching)
        return None

    def _complete(self, result: str, backers: list[Reply]) -> Completion:
        pending = self.pending
        learned = max(backers, key=lambda r: r.view)
        self.known_mode, self.known_view = learned.mode, learned.view
        done = Completion(self.id, pending.request.ts, pending.sent_at, self.now, result, learned.mode, learned.view)
        self.completions.append(done)
        self.pending = None
        return done

    def client_timeout(self, ts: int) -> None:
        pending = self.pending
        if pending is None or pending.request.ts != ts:
            return
        pending.fallback = True
        for replica in self.cfg.replicas:
            self.out.append(Send(replica, pending.request))
        self.out.append(SetTimer(("client", ts), self.timeout))

from __future__ import annotations

import pytest

from seemore.client import Busy, Client
from seemore.config import ClusterConfig, Mode
from seemore.messages import KeyDirectory, Reply, Request
from seemore.replica import Deliver, Send, SetTimer, TimerFired

CFG = ClusterConfig(2, 4, 1, 1)
KEYS = KeyDirectory.generate(list(CFG.replicas) + ["alice"])


def reply(sender, ts=1, result="ok", mode=Mode.LION, view=0, client="alice"):
    return KEYS.signer(sender).sign(Reply(mode, view, ts, client, result, sender))


def client(mode=Mode.LION, ops=("put x 1",), timeout=32):
    c = Client(CFG, "alice", KEYS, mode, timeout, ops)
    return c, c.start(0)


def test_first_request_goes_to_primary_with_timer():
    _, out = client(Mode.LION)
    assert [a.dst for a in out if isinstance(a, Send)] == [0]
    assert any(isinstance(a, SetTimer) for a in out)
    _, out = client(Mode.PEACOCK)
    assert [a.dst for a in out if isinstance(a, Send)] == [2]


def test_one_outstanding_request():
    c, _ = client(ops=())
    c.submit("get x")
    with pytest.raises(Busy):
        c.submit("get y")


def test_lion_completes_on_primary_reply():
    c, _ = client(Mode.LION, ops=("put x 1", "get x"))
    out = c.step(Deliver(0, reply(0)), now=4)
    assert c.completions[0].latency == 4
    assert [a.msg.ts for a in out if isinstance(a, Send)] == [2]


def test_lion_ignores_public_replies_before_fallback():
    c, _ = client(Mode.LION)
    for r in (2, 3, 4):
        c.step(Deliver(r, reply(r)))
    assert not c.completions


def test_lion_fallback_accepts_m_plus_one_public():
    c, _ = client(Mode.LION)
    out = c.step(TimerFired(("client", 1)), now=32)
    assert sorted(a.dst for a in out if isinstance(a, Send)) == list(CFG.replicas)
    c.step(Deliver(2, reply(2)))
    assert not c.completions
    c.step(Deliver(3, reply(3)))
    assert c.completions and c.done


def test_dog_needs_2m_plus_1_matching():
    c, _ = client(Mode.DOG)
    c.step(Deliver(2, reply(2, mode=Mode.DOG)))
    c.step(Deliver(3, reply(3, mode=Mode.DOG, result="other")))
    c.step(Deliver(4, reply(4, mode=Mode.DOG)))
    assert not c.completions
    c.step(Deliver(5, reply(5, mode=Mode.DOG)))
    assert c.completions[0].result == "ok"


def test_dog_retransmission_needs_m_plus_one():
    c, _ = client(Mode.DOG)
    c.step(TimerFired(("client", 1)))
    c.step(Deliver(2, reply(2, mode=Mode.DOG)))
    c.step(Deliver(4, reply(4, mode=Mode.DOG)))
    assert c.completions


def test_peacock_needs_m_plus_one():
    c, _ = client(Mode.PEACOCK)
    c.step(Deliver(2, reply(2, mode=Mode.PEACOCK)))
    assert not c.completions
    c.step(Deliver(3, reply(3, mode=Mode.PEACOCK)))
    assert c.completions


def test_forged_and_misaddressed_replies_ignored():
    c, _ = client(Mode.LION)
    forged = KEYS.signer(3).sign(Reply(Mode.LION, 0, 1, "alice", "ok", 0))
    c.step(Deliver(0, forged))
    c.step(Deliver(3, reply(0)))  # link sender differs from claimed sender
    c.step(Deliver(0, reply(0, ts=7)))
    assert not c.completions


def test_client_learns_mode_and_view_from_replies():
    c, _ = client(Mode.LION, ops=("put x 1", "get x"))
    c.step(TimerFired(("client", 1)))
    c.step(Deliver(1, reply(1, mode=Mode.PEACOCK, view=3)))
    assert (c.known_mode, c.known_view) == (Mode.PEACOCK, 3)
    assert c.target() == 3 % 4 + 2


def test_spurious_timeout_after_completion_is_harmless():
    c, _ = client(Mode.LION)
    c.step(Deliver(0, reply(0)))
    assert c.step(TimerFired(("client", 1))) == []
    c.step(Deliver(0, reply(0)))
    assert len(c.completions) == 1


def test_timestamps_increase():
    c, out = client(Mode.LION, ops=("a", "b", "c"))
    seen = [a.msg.ts for a in out if isinstance(a, Send)]
    for ts in (1, 2):
        out = c.step(Deliver(0, reply(0, ts=ts)))
        seen += [a.msg.ts for a in out if isinstance(a, Send)]
    assert seen == [1, 2, 3]
    assert all(isinstance(a.msg, Request) for a in out if isinstance(a, Send))

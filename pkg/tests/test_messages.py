from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seemore.config import ClusterConfig, Mode
from seemore.messages import (
    Accept,
    Checkpoint,
    Commit,
    DecodeError,
    Ed25519Crypto,
    Inform,
    KeyDirectory,
    ModeChange,
    NewView,
    PreparedCert,
    Prepare,
    PrePrepare,
    Reply,
    Request,
    Verdict,
    ViewChange,
    decode_value,
    deserialize,
    encode_value,
    noop_request,
    request_digest,
    serialize,
    verify_checkpoint_cert,
    verify_message,
    verify_new_view,
)

CFG = ClusterConfig(2, 4, 1, 1)
KEYS = KeyDirectory.generate(list(CFG.replicas) + ["alice", "bob"])


def sign(principal, msg):
    return KEYS.signer(principal).sign(msg)


def request(op="put x 1", ts=1, client="alice"):
    return sign(client, Request(op, ts, client))


def prepare(view=0, seq=1, req=None, mode=Mode.LION, sender=None):
    req = req or request()
    sender = view % CFG.S if sender is None else sender
    return sign(sender, Prepare(view, seq, request_digest(req, KEYS), mode, req, sender))


# ---------------------------------------------------------------- encoding

def test_encode_value_round_trip_nested():
    value = (1, -5, "hé", b"\x00\xff", None, (2, ("x",)))
    assert decode_value(encode_value(value)) == value


def test_encoding_rejects_unknown_types():
    with pytest.raises(TypeError):
        encode_value(1.5)
    with pytest.raises(TypeError):
        encode_value(True)


def test_messages_differing_in_ts_encode_differently():
    assert serialize(Request("get x", 1, "alice")) != serialize(Request("get x", 2, "alice"))


def test_truncated_bytes_raise():
    wire = serialize(prepare())
    for cut in (1, 5, len(wire) // 2, len(wire) - 1):
        with pytest.raises(DecodeError):
            deserialize(wire[:cut])


def test_trailing_bytes_and_bad_tags_raise():
    wire = serialize(request())
    with pytest.raises(DecodeError):
        deserialize(wire + b"N")
    with pytest.raises(DecodeError):
        deserialize(b"M\x63" + wire[2:])
    with pytest.raises(DecodeError):
        deserialize(b"Q")
    with pytest.raises(DecodeError):
        deserialize(encode_value((1, 2)))


def test_signature_excludes_sig_field():
    req = request()
    assert req.signing_bytes == Request("put x 1", 1, "alice").signing_bytes
    assert req.wire != Request("put x 1", 1, "alice").wire


ints = st.integers(-(2**40), 2**40)
small = st.integers(0, 50)
texts = st.text(max_size=12)
blobs = st.binary(max_size=24)
modes = st.sampled_from(list(Mode))

requests = st.builds(Request, texts, ints, texts, blobs)
prepares = st.builds(Prepare, small, small, blobs, modes, requests, small, blobs)
preprepares = st.builds(PrePrepare, small, small, blobs, modes, requests, small, blobs)
accepts = st.builds(Accept, small, small, blobs, modes, small, blobs)
commits = st.builds(Commit, small, small, blobs, modes, st.none() | requests, small, blobs)
informs = st.builds(Inform, small, small, blobs, modes, small, blobs)
replies = st.builds(Reply, modes, small, ints, texts, texts, small, blobs)
checkpoints = st.builds(Checkpoint, small, blobs, small, modes, blobs, small, blobs)
certs = st.builds(PreparedCert, preprepares, st.lists(accepts, max_size=3).map(tuple))
new_views = st.builds(
    NewView, small, modes, st.lists(checkpoints, max_size=2).map(tuple),
    st.lists(prepares, max_size=2).map(tuple), st.lists(commits, max_size=2).map(tuple), small, blobs,
)
view_changes = st.builds(
    ViewChange, small, small, st.lists(checkpoints, max_size=2).map(tuple),
    st.lists(prepares | certs, max_size=2).map(tuple), st.lists(commits, max_size=2).map(tuple),
    small, st.none() | new_views, small, blobs,
)
mode_changes = st.builds(ModeChange, small, modes, small, blobs)
any_message = st.one_of(
    requests, prepares, preprepares, accepts, commits, informs, replies, checkpoints, certs,
    new_views, view_changes, mode_changes,
)


@settings(max_examples=300, deadline=None)
@given(any_message)
def test_round_trip_any_message(msg):
    decoded = deserialize(serialize(msg))
    assert decoded == msg
    assert type(decoded) is type(msg)
    assert serialize(decoded) == serialize(msg)


# ---------------------------------------------------------------- verification

def _signed_samples():
    req = request()
    digest = request_digest(req, KEYS)
    snap = encode_value((10, (), ()))
    cp = sign(0, Checkpoint(10, KEYS.digest(snap), 0, Mode.LION, snap, 0))
    return [
        req,
        prepare(req=req),
        sign(2, PrePrepare(0, 1, digest, Mode.PEACOCK, req, 2)),
        sign(3, Accept(0, 1, digest, Mode.DOG, 3)),
        sign(0, Commit(0, 1, digest, Mode.LION, req, 0)),
        sign(4, Commit(0, 1, digest, Mode.PEACOCK, None, 4)),
        sign(5, Inform(0, 1, digest, Mode.DOG, 5)),
        sign(3, Reply(Mode.DOG, 0, 1, "alice", "ok", 3)),
        cp,
        sign(1, NewView(1, Mode.LION, (cp,), (prepare(view=1, seq=11),), (), 1)),
        sign(4, ViewChange(1, 10, (cp,), (prepare(seq=11),), (), 0, None, 4)),
        sign(1, ModeChange(1, Mode.PEACOCK, 1)),
    ]


@pytest.mark.parametrize("msg", _signed_samples(), ids=lambda m: m.KIND)
def test_valid_samples_verify(msg):
    assert verify_message(msg, KEYS, CFG) is Verdict.VALID


def test_prepare_digest_mismatch():
    req = request()
    bad = sign(0, Prepare(0, 1, b"\x00" * 16, Mode.LION, req, 0))
    assert verify_message(bad, KEYS, CFG) is Verdict.DIGEST_MISMATCH


def test_forged_primary_prepare_is_bad_signature():
    req = request()
    forged = sign(3, Prepare(0, 1, request_digest(req, KEYS), Mode.LION, req, 0))
    assert verify_message(forged, KEYS, CFG) is Verdict.BAD_SIGNATURE


def test_prepare_from_non_primary_is_wrong_role():
    assert verify_message(prepare(view=0, sender=1), KEYS, CFG) is Verdict.WRONG_ROLE
    assert verify_message(prepare(view=0, sender=3), KEYS, CFG) is Verdict.WRONG_ROLE


def test_role_checks():
    digest = b"d" * 16
    assert verify_message(sign(1, ModeChange(1, Mode.DOG, 1)), KEYS, CFG)
    assert verify_message(sign(3, ModeChange(1, Mode.DOG, 3)), KEYS, CFG) is Verdict.WRONG_ROLE
    assert verify_message(sign(3, PrePrepare(0, 1, digest, Mode.PEACOCK, request(), 3)), KEYS, CFG) is Verdict.WRONG_ROLE
    big = ClusterConfig(2, 7, 1, 1)
    big_keys = KeyDirectory.generate(list(big.replicas))
    outsider = big_keys.signer(7).sign(Accept(0, 1, digest, Mode.DOG, 7))
    assert verify_message(outsider, big_keys, big) is Verdict.WRONG_ROLE


def test_lion_accept_is_unsigned():
    assert verify_message(Accept(0, 1, b"d" * 16, Mode.LION, 3), KEYS, CFG)
    assert not verify_message(Accept(0, 1, b"d" * 16, Mode.LION, 99), KEYS, CFG)


def test_stale_view_reported_against_current_view():
    msg = prepare(view=0)
    assert verify_message(msg, KEYS, CFG, current_view=0) is Verdict.VALID
    assert verify_message(msg, KEYS, CFG, current_view=2) is Verdict.STALE_VIEW


def test_checkpoint_snapshot_must_match_digest():
    snap = encode_value((10, (), ()))
    bad = sign(0, Checkpoint(10, b"\x01" * 16, 0, Mode.LION, snap, 0))
    assert verify_message(bad, KEYS, CFG) is Verdict.DIGEST_MISMATCH


def test_checkpoint_certificates():
    snap = encode_value((10, (), ()))
    digest = KEYS.digest(snap)
    public = [sign(r, Checkpoint(10, digest, 0, Mode.PEACOCK, snap, r)) for r in (2, 3, 4)]
    assert verify_checkpoint_cert(tuple(public), KEYS, CFG)
    assert not verify_checkpoint_cert(tuple(public[:2]), KEYS, CFG)
    assert verify_checkpoint_cert((sign(1, Checkpoint(10, digest, 0, Mode.LION, snap, 1)),), KEYS, CFG)
    assert not verify_checkpoint_cert((), KEYS, CFG)


def test_new_view_entries_must_come_from_its_sender():
    good = sign(1, NewView(1, Mode.LION, (), (prepare(view=1, seq=1),), (), 1))
    assert verify_new_view(good, KEYS, CFG)
    stale = sign(1, NewView(1, Mode.LION, (), (prepare(view=0, seq=1),), (), 1))
    assert not verify_new_view(stale, KEYS, CFG)


def test_noop_requests_need_no_signature():
    assert verify_message(noop_request(4), KEYS, CFG)
    assert noop_request(4).is_noop
    assert not verify_message(Request("noop", 4, "", b"x"), KEYS, CFG)


@settings(max_examples=400, deadline=None)
@given(index=st.integers(0, 11), position=st.integers(0, 10_000), flip=st.integers(1, 255))
def test_mutating_signed_region_invalidates(index, position, flip):
    msg = _signed_samples()[index]
    wire = serialize(msg)
    # the signed region is everything before the trailing signature field
    signed_len = len(wire) - (5 + len(msg.sig))
    pos = 1 + position % (signed_len - 1)
    mutated = bytearray(wire)
    mutated[pos] ^= flip
    try:
        decoded = deserialize(bytes(mutated))
    except DecodeError:
        return
    assert not verify_message(decoded, KEYS, CFG)


def test_ed25519_provider_signs_and_verifies():
    pytest.importorskip("cryptography")
    keys = KeyDirectory.generate(["alice", 0], crypto=Ed25519Crypto())
    req = keys.signer("alice").sign(Request("get x", 1, "alice"))
    assert verify_message(req, keys, CFG)
    forged = keys.signer(0).sign(Request("get x", 1, "alice"))
    assert not verify_message(forged, keys, CFG)

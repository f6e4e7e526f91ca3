"""Wire messages, canonical encoding, signatures and message verification."""

from __future__ import annotations

import dataclasses
import enum
import functools
import hashlib
import typing
from dataclasses import dataclass, field
from typing import ClassVar, Protocol

from .config import ClusterConfig, Mode, primary_of_view, proxy_set

DIGEST_SIZE = 16
NOOP_OP = "noop"


class DecodeError(ValueError):
    pass


# ---------------------------------------------------------------- encoding

def _enc_none(value, out: list) -> None:
    out.append(b"N")


def _enc_int(value, out: list) -> None:
    out.append(b"I" + int(value).to_bytes(8, "little", signed=True))


def _enc_str(value, out: list) -> None:
    raw = value.encode()
    out.append(b"S" + len(raw).to_bytes(4, "little") + raw)


def _enc_bytes(value, out: list) -> None:
    out.append(b"B" + len(value).to_bytes(4, "little") + value)


def _enc_tuple(value, out: list) -> None:
    out.append(b"T" + len(value).to_bytes(4, "little"))
    for item in value:
        _encode_into(item, out)


_ENCODERS = {type(None): _enc_none, int: _enc_int, str: _enc_str, bytes: _enc_bytes, tuple: _enc_tuple, Mode: _enc_int}


def _encode_into(value, out: list) -> None:
    encoder = _ENCODERS.get(type(value))
    if encoder is not None:
        encoder(value, out)
    elif isinstance(value, Message):
        # nested messages reuse their own cached encoding
        out.append(value.wire)
    else:
        raise TypeError(f"cannot encode {type(value).__name__}")


def encode_value(value) -> bytes:
    out: list[bytes] = []
    _encode_into(value, out)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise DecodeError("truncated input")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def value(self):
        tag = self.take(1)
        if tag == b"N":
            return None
        if tag == b"I":
            return int.from_bytes(self.take(8), "little", signed=True)
        if tag == b"S":
            n = int.from_bytes(self.take(4), "little")
            try:
                return self.take(n).decode()
            except UnicodeDecodeError as exc:
                raise DecodeError("invalid utf-8") from exc
        if tag == b"B":
            n = int.from_bytes(self.take(4), "little")
            return self.take(n)
        if tag == b"T":
            n = int.from_bytes(self.take(4), "little")
            return tuple(self.value() for _ in range(n))
        if tag == b"M":
            cls = _REGISTRY.get(self.take(1)[0])
            if cls is None:
                raise DecodeError("unknown message tag")
            values = {name: self.value() for name in cls._field_names}
            for name, allowed in _field_types(cls).items():
                if not isinstance(values[name], allowed):
                    raise DecodeError(f"{cls.__name__}.{name} has the wrong type")
            if "mode" in values:
                try:
                    values["mode"] = Mode(values["mode"])
                except (ValueError, TypeError) as exc:
                    raise DecodeError("bad mode") from exc
            try:
                return cls(**values)
            except TypeError as exc:
                raise DecodeError(str(exc)) from exc
        raise DecodeError(f"unknown field tag {tag!r}")


@functools.lru_cache(maxsize=None)
def _field_types(cls) -> dict[str, tuple]:
    """Runtime types accepted for each field when decoding ``cls``."""
    hints = typing.get_type_hints(cls)
    table = {}
    for name in cls._field_names:
        options = typing.get_args(hints[name]) or (hints[name],)
        # modes travel as plain integers and are converted after the check
        table[name] = tuple(int if t is Mode else t for t in options)
    return table


def decode_value(data: bytes):
    reader = _Reader(data)
    value = reader.value()
    if reader.pos != len(data):
        raise DecodeError("trailing bytes")
    return value


# ---------------------------------------------------------------- messages

_REGISTRY: dict[int, type] = {}


class _memo:
    """Compute-once attribute stored in the instance dict.

    Same idea as functools.cached_property without its per-access lock;
    messages are immutable so there is nothing to guard.
    """

    def __init__(self, fn):
        self.fn = fn
        self.name = fn.__name__
        self.__doc__ = fn.__doc__

    def __get__(self, obj, owner=None):
        if obj is None:
            return self
        value = obj.__dict__[self.name] = self.fn(obj)
        return value


class Message:
    """Base for wire messages. Subclasses are frozen dataclasses."""

    TAG: ClassVar[int] = 0
    KIND: ClassVar[str] = "?"
    _field_names: ClassVar[tuple[str, ...]] = ()

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.TAG:
            _REGISTRY[cls.TAG] = cls

    @_memo
    def body(self) -> bytes:
        """Encoding of every field except the signature."""
        out: list[bytes] = []
        for name in self._field_names:
            if name != "sig":
                _encode_into(getattr(self, name), out)
        return b"".join(out)

    @_memo
    def signing_bytes(self) -> bytes:
        return bytes((self.TAG,)) + self.body

    @_memo
    def wire(self) -> bytes:
        out = [b"M", bytes((self.TAG,)), self.body]
        if self._field_names and self._field_names[-1] == "sig":
            _enc_bytes(self.sig, out)
        return b"".join(out)

    @_memo
    def fingerprint(self) -> bytes:
        return hashlib.blake2b(self.wire, digest_size=8).digest()

    @_memo
    def fingerprint_int(self) -> int:
        return int.from_bytes(self.fingerprint, "little")


def _message(tag: int, kind: str):
    def wrap(cls):
        cls = dataclass(frozen=True)(cls)
        cls.TAG = tag
        cls.KIND = kind
        cls._field_names = tuple(f.name for f in dataclasses.fields(cls))
        # the wire format appends the signature after the signed body
        assert "sig" not in cls._field_names or cls._field_names[-1] == "sig"
        _REGISTRY[tag] = cls
        return cls

    return wrap


@_message(1, "REQUEST")
class Request(Message):
    op: str
    ts: int
    client: str
    sig: bytes = b""

    @property
    def is_noop(self) -> bool:
        return self.client == "" and self.op == NOOP_OP


def noop_request(seq: int) -> Request:
    # ts carries the sequence number so no-op digests stay distinct
    return Request(op=NOOP_OP, ts=seq, client="")


@_message(2, "PREPARE")
class Prepare(Message):
    """Ordering message from a trusted replica (Lion/Dog primary, or a new-view entry)."""

    view: int
    seq: int
    digest: bytes
    mode: Mode
    request: Request
    sender: int
    sig: bytes = b""


@_message(3, "PRE_PREPARE")
class PrePrepare(Message):
    """Ordering message from the untrusted Peacock primary."""

    view: int
    seq: int
    digest: bytes
    mode: Mode
    request: Request
    sender: int
    sig: bytes = b""


@_message(4, "ACCEPT")
class Accept(Message):
    view: int
    seq: int
    digest: bytes
    mode: Mode
    sender: int
    sig: bytes = b""


@_message(5, "COMMIT")
class Commit(Message):
    view: int
    seq: int
    digest: bytes
    mode: Mode
    request: Request | None
    sender: int
    sig: bytes = b""


@_message(6, "INFORM")
class Inform(Message):
    view: int
    seq: int
    digest: bytes
    mode: Mode
    sender: int
    sig: bytes = b""


@_message(7, "REPLY")
class Reply(Message):
    mode: Mode
    view: int
    ts: int
    client: str
    result: str
    sender: int
    sig: bytes = b""


@_message(8, "CHECKPOINT")
class Checkpoint(Message):
    seq: int
    state_digest: bytes
    view: int
    mode: Mode
    snapshot: bytes
    sender: int
    sig: bytes = b""


@_message(9, "PREPARED_CERT")
class PreparedCert(Message):
    """A Peacock pre-prepare plus 2m matching accepts from other proxies."""

    preprepare: PrePrepare
    accepts: tuple

    @property
    def view(self) -> int:
        return self.preprepare.view

    @property
    def seq(self) -> int:
        return self.preprepare.seq

    @property
    def digest(self) -> bytes:
        return self.preprepare.digest

    @property
    def request(self) -> Request:
        return self.preprepare.request


@_message(10, "NEW_VIEW")
class NewView(Message):
    view: int
    mode: Mode
    checkpoint: tuple
    prepares: tuple
    commits: tuple
    sender: int
    sig: bytes = b""

    @property
    def high(self) -> int:
        seqs = [p.seq for p in self.prepares] + [c.seq for c in self.commits]
        return max(seqs, default=0)


@_message(11, "VIEW_CHANGE")
class ViewChange(Message):
    view: int
    stable_seq: int
    checkpoint: tuple
    prepares: tuple
    commits: tuple
    last_active: int
    last_new_view: NewView | None
    sender: int
    sig: bytes = b""


@_message(12, "MODE_CHANGE")
class ModeChange(Message):
    view: int
    mode: Mode
    sender: int
    sig: bytes = b""


ProtocolMessage = (
    Request | Prepare | PrePrepare | Accept | Commit | Inform | Reply | Checkpoint
    | NewView | ViewChange | ModeChange
)


def serialize(msg: Message) -> bytes:
    return msg.wire


def deserialize(data: bytes) -> Message:
    msg = decode_value(data)
    if not isinstance(msg, Message):
        raise DecodeError("not a message")
    return msg


# ---------------------------------------------------------------- crypto

class CryptoProvider(Protocol):
    def sign(self, key: bytes, data: bytes) -> bytes: ...

    def verify(self, pubkey: bytes, data: bytes, signature: bytes) -> bool: ...

    def digest(self, data: bytes) -> bytes: ...

    def keypair(self, seed: bytes) -> tuple[bytes, bytes]: ...


class KeyedHashCrypto:
    """Simulation-grade signatures: a keyed BLAKE2b MAC per principal.

    The verification key equals the signing key, so only the harness may hold
    the key directory. Replicas get a signer bound to their own key.
    """

    def sign(self, key: bytes, data: bytes) -> bytes:
        return hashlib.blake2b(data, key=key, digest_size=16).digest()

    def verify(self, pubkey: bytes, data: bytes, signature: bytes) -> bool:
        return len(signature) == 16 and hashlib.blake2b(data, key=pubkey, digest_size=16).digest() == signature

    def digest(self, data: bytes) -> bytes:
        return hashlib.blake2b(data, digest_size=DIGEST_SIZE).digest()

    def keypair(self, seed: bytes) -> tuple[bytes, bytes]:
        key = hashlib.blake2b(seed, digest_size=32).digest()
        return key, key


class Ed25519Crypto:
    """Public-key signatures via the ``cryptography`` package."""

    def __init__(self):
        from cryptography.hazmat.primitives.asymmetric import ed25519

        self._ed = ed25519

    def sign(self, key: bytes, data: bytes) -> bytes:
        return self._ed.Ed25519PrivateKey.from_private_bytes(key).sign(data)

    def verify(self, pubkey: bytes, data: bytes, signature: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature

        try:
            self._ed.Ed25519PublicKey.from_public_bytes(pubkey).verify(signature, data)
        except (InvalidSignature, ValueError):
            return False
        return True

    def digest(self, data: bytes) -> bytes:
        return hashlib.blake2b(data, digest_size=DIGEST_SIZE).digest()

    def keypair(self, seed: bytes) -> tuple[bytes, bytes]:
        from cryptography.hazmat.primitives import serialization

        secret = hashlib.blake2b(seed, digest_size=32).digest()
        pub = self._ed.Ed25519PrivateKey.from_private_bytes(secret).public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return secret, pub


@dataclass
class KeyDirectory:
    crypto: CryptoProvider
    secrets: dict = field(default_factory=dict)
    publics: dict = field(default_factory=dict)

    @classmethod
    def generate(cls, principals, crypto: CryptoProvider | None = None, seed: int = 0) -> KeyDirectory:
        crypto = crypto or KeyedHashCrypto()
        keys = cls(crypto)
        for principal in principals:
            secret, public = crypto.keypair(f"{seed}/{principal}".encode())
            keys.secrets[principal] = secret
            keys.publics[principal] = public
        return keys

    def signer(self, principal) -> Signer:
        return Signer(principal, self.secrets[principal], self.crypto)

    def verify(self, principal, data: bytes, signature: bytes) -> bool:
        public = self.publics.get(principal)
        return public is not None and self.crypto.verify(public, data, signature)

    def digest(self, data: bytes) -> bytes:
        return self.crypto.digest(data)


class Signer:
    """Signing capability bound to one principal's secret key."""

    def __init__(self, principal, secret: bytes, crypto: CryptoProvider):
        self.principal = principal
        self._secret = secret
        self._crypto = crypto

    def sign(self, msg: Message) -> Message:
        # shallow copy with the signature filled in; skips dataclass re-validation
        state = msg.__dict__
        signed = object.__new__(type(msg))
        fresh = signed.__dict__
        for name in msg._field_names:
            fresh[name] = state[name]
        fresh["sig"] = self._crypto.sign(self._secret, msg.signing_bytes)
        fresh["body"] = msg.body
        fresh["signing_bytes"] = msg.signing_bytes
        return signed

    def digest(self, data: bytes) -> bytes:
        return self._crypto.digest(data)


def request_digest(request: Request, keys: KeyDirectory | Signer) -> bytes:
    return keys.digest(request.wire)


# ---------------------------------------------------------------- verification

class Verdict(enum.Enum):
    VALID = "valid"
    BAD_SIGNATURE = "bad-signature"
    DIGEST_MISMATCH = "digest-mismatch"
    WRONG_ROLE = "wrong-role"
    STALE_VIEW = "stale-view"
    MALFORMED = "malformed"

    def __bool__(self) -> bool:
        return self is Verdict.VALID


def _signed_by(msg, principal, keys: KeyDirectory) -> bool:
    return keys.verify(principal, msg.signing_bytes, msg.sig)


def _request_ok(request: Request, keys: KeyDirectory) -> bool:
    if request.is_noop:
        return request.sig == b""
    return _signed_by(request, request.client, keys)


def verify_message(msg: Message, keys: KeyDirectory, cfg: ClusterConfig, current_view: int | None = None) -> Verdict:
    """Check signatures, embedded digests and the sender's role for ``msg``.

    Role checks depend only on fields carried by the message (its view and
    mode). When ``current_view`` is given, messages for other views are
    reported as stale.
    """
    verdict = _verify(msg, keys, cfg)
    if verdict and current_view is not None:
        view = getattr(msg, "view", None)
        if view is not None and not isinstance(msg, (ViewChange, NewView, ModeChange)) and view != current_view:
            return Verdict.STALE_VIEW
    return verdict


def _verify(msg, keys: KeyDirectory, cfg: ClusterConfig) -> Verdict:
    # a message object is immutable and verification depends only on the key
    # directory and topology, so the verdict is memoised on the object itself
    cache = msg.__dict__.get("_verdicts")
    if cache is None:
        cache = msg.__dict__["_verdicts"] = {}
    token = (id(keys), id(cfg))
    verdict = cache.get(token)
    if verdict is None:
        verdict = cache[token] = _verify_uncached(msg, keys, cfg)
    return verdict


def _verify_uncached(msg, keys: KeyDirectory, cfg: ClusterConfig) -> Verdict:
    if isinstance(msg, Request):
        return Verdict.VALID if _request_ok(msg, keys) else Verdict.BAD_SIGNATURE

    if isinstance(msg, Accept) and msg.mode is Mode.LION:
        # unsigned: authenticity comes from the point-to-point link
        if msg.sig != b"":
            return Verdict.MALFORMED
        return Verdict.VALID if cfg.is_private(msg.sender) or cfg.is_public(msg.sender) else Verdict.WRONG_ROLE

    if isinstance(msg, PreparedCert):
        return verify_prepared_cert(msg, keys, cfg)

    sender = getattr(msg, "sender", None)
    if not isinstance(sender, int) or not (0 <= sender < cfg.total):
        return Verdict.WRONG_ROLE
    if not _signed_by(msg, sender, keys):
        return Verdict.BAD_SIGNATURE

    if isinstance(msg, Prepare):
        if sender != msg.view % cfg.S:
            return Verdict.WRONG_ROLE
        return _check_embedded(msg, keys)
    if isinstance(msg, PrePrepare):
        if msg.mode is not Mode.PEACOCK or sender != primary_of_view(msg.view, Mode.PEACOCK, cfg):
            return Verdict.WRONG_ROLE
        return _check_embedded(msg, keys)
    if isinstance(msg, Commit):
        if msg.mode is Mode.LION:
            if sender != msg.view % cfg.S or msg.request is None:
                return Verdict.WRONG_ROLE
            return _check_embedded(msg, keys)
        return Verdict.VALID if sender in proxy_set(msg.view, cfg) else Verdict.WRONG_ROLE
    if isinstance(msg, (Accept, Inform)):
        if msg.mode is Mode.LION or sender not in proxy_set(msg.view, cfg):
            return Verdict.WRONG_ROLE
        return Verdict.VALID
    if isinstance(msg, Reply):
        return Verdict.VALID
    if isinstance(msg, Checkpoint):
        return Verdict.VALID if keys.digest(msg.snapshot) == msg.state_digest else Verdict.DIGEST_MISMATCH
    if isinstance(msg, (NewView, ModeChange)):
        return Verdict.VALID if sender == msg.view % cfg.S else Verdict.WRONG_ROLE
    if isinstance(msg, ViewChange):
        return Verdict.VALID
    return Verdict.MALFORMED


def _check_embedded(msg, keys: KeyDirectory) -> Verdict:
    request = msg.request
    if not _request_ok(request, keys):
        return Verdict.BAD_SIGNATURE
    if keys.digest(request.wire) != msg.digest:
        return Verdict.DIGEST_MISMATCH
    return Verdict.VALID


def verify_prepared_cert(cert: PreparedCert, keys: KeyDirectory, cfg: ClusterConfig) -> Verdict:
    pp = cert.preprepare
    if not isinstance(pp, PrePrepare):
        return Verdict.MALFORMED
    verdict = _verify(pp, keys, cfg)
    if not verdict:
        return verdict
    proxies = proxy_set(pp.view, cfg)
    signers = set()
    for acc in cert.accepts:
        if not isinstance(acc, Accept) or acc.mode is not Mode.PEACOCK:
            return Verdict.MALFORMED
        if (acc.view, acc.seq, acc.digest) != (pp.view, pp.seq, pp.digest):
            return Verdict.DIGEST_MISMATCH
        if acc.sender == pp.sender or acc.sender not in proxies:
            return Verdict.WRONG_ROLE
        if not _signed_by(acc, acc.sender, keys):
            return Verdict.BAD_SIGNATURE
        signers.add(acc.sender)
    if len(signers) < 2 * cfg.m:
        return Verdict.MALFORMED
    return Verdict.VALID


def verify_checkpoint_cert(cert: tuple, keys: KeyDirectory, cfg: ClusterConfig) -> bool:
    """A stable-checkpoint certificate: one trusted signature or 2m+1 matching public ones."""
    if not cert:
        return False
    first = cert[0]
    if not all(isinstance(c, Checkpoint) for c in cert):
        return False
    if any((c.seq, c.state_digest) != (first.seq, first.state_digest) for c in cert):
        return False
    signers = set()
    for cp in cert:
        if not _verify(cp, keys, cfg):
            return False
        if cfg.is_private(cp.sender):
            return True
        signers.add(cp.sender)
    return len(signers) >= 2 * cfg.m + 1


def verify_proof(proof, keys: KeyDirectory, cfg: ClusterConfig) -> bool:
    """Proof that an ordering was issued: a trusted Prepare or a Peacock prepared certificate."""
    if isinstance(proof, Prepare):
        return bool(_verify(proof, keys, cfg))
    if isinstance(proof, PreparedCert):
        return bool(verify_prepared_cert(proof, keys, cfg))
    return False


def verify_new_view(nv: NewView, keys: KeyDirectory, cfg: ClusterConfig) -> bool:
    if not isinstance(nv, NewView):
        return False
    cache = nv.__dict__.setdefault("_nv_ok", {})
    token = (id(keys), id(cfg))
    if token not in cache:
        cache[token] = _verify_new_view(nv, keys, cfg)
    return cache[token]


def _verify_new_view(nv: NewView, keys: KeyDirectory, cfg: ClusterConfig) -> bool:
    if not _verify(nv, keys, cfg):
        return False
    for p in nv.prepares:
        if not isinstance(p, Prepare) or p.view != nv.view or p.sender != nv.sender or not _verify(p, keys, cfg):
            return False
    for c in nv.commits:
        if not isinstance(c, Commit) or c.view != nv.view or c.sender != nv.sender or not _verify(c, keys, cfg):
            return False
    return not nv.checkpoint or verify_checkpoint_cert(nv.checkpoint, keys, cfg)

"""Cluster topology, fault bounds, quorum arithmetic and public-cloud sizing."""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from fractions import Fraction


class Mode(enum.IntEnum):
    """Protocol mode. Values match the wire encoding."""

    LION = 1
    DOG = 2
    PEACOCK = 3

    @classmethod
    def parse(cls, text: str | int | Mode) -> Mode:
        if isinstance(text, int):
            return cls(text)
        try:
            return cls[str(text).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown mode {text!r}") from None

    @property
    def label(self) -> str:
        return self.name.lower()


class ConfigError(ValueError):
    pass


class InvalidInput(ConfigError):
    pass


class Infeasible(ConfigError):
    """Raised when no public-cloud rental satisfies the network size bound."""


@dataclass(frozen=True)
class ClusterConfig:
    private_size: int
    public_size: int
    crash_bound: int
    byz_bound: int

    def __post_init__(self):
        for name in ("private_size", "public_size", "crash_bound", "byz_bound"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.total < required_network_size(self.byz_bound, self.crash_bound):
            raise ConfigError(
                f"N={self.total} below 3m+2c+1={required_network_size(self.byz_bound, self.crash_bound)}"
            )
        if self.private_size < 1:
            raise ConfigError("at least one private replica is required")

    # short aliases used throughout the protocol code
    @property
    def S(self) -> int:
        return self.private_size

    @property
    def P(self) -> int:
        return self.public_size

    @property
    def c(self) -> int:
        return self.crash_bound

    @property
    def m(self) -> int:
        return self.byz_bound

    @property
    def total(self) -> int:
        return self.private_size + self.public_size

    N = total

    def validate_for(self, mode: Mode) -> None:
        if mode in (Mode.LION, Mode.DOG) and self.S <= self.c:
            raise ConfigError(f"{mode.label} mode needs S > c (S={self.S}, c={self.c})")
        if mode in (Mode.DOG, Mode.PEACOCK) and self.P < 3 * self.m + 1:
            raise ConfigError(f"{mode.label} mode needs P >= 3m+1 (P={self.P}, m={self.m})")

    def is_private(self, replica: int) -> bool:
        return 0 <= replica < self.S

    def is_public(self, replica: int) -> bool:
        return self.S <= replica < self.total

    @property
    def replicas(self) -> range:
        return range(self.total)

    @property
    def private_replicas(self) -> range:
        return range(self.S)

    @property
    def public_replicas(self) -> range:
        return range(self.S, self.total)


def required_network_size(m: int, c: int) -> int:
    if m < 0 or c < 0:
        raise InvalidInput("fault bounds must be non-negative")
    return 3 * m + 2 * c + 1


def quorum_size(mode: Mode, m: int, c: int) -> int:
    if mode is Mode.LION:
        return 2 * m + c + 1
    return 2 * m + 1


def primary_of_view(view: int, mode: Mode, cfg: ClusterConfig) -> int:
    if mode is Mode.PEACOCK:
        return view % cfg.P + cfg.S
    return view % cfg.S


def transferer_of_view(view: int, S: int) -> int:
    if S < 1:
        raise InvalidInput("S must be at least 1")
    return view % S


def assembler_of_view(view: int, cfg: ClusterConfig) -> int:
    # New-view assembler: primary for Lion/Dog, transferer for Peacock. Both are view mod S.
    return view % cfg.S


@functools.lru_cache(maxsize=4096)
def proxy_set(view: int, cfg: ClusterConfig) -> frozenset[int]:
    """The 3m+1 public replicas running agreement in ``view``.

    The window starts at offset ``view mod P`` of the public range and wraps
    around inside it, so the Peacock primary is always a member.
    """
    size = 3 * cfg.m + 1
    if cfg.P < size:
        raise ConfigError(f"P={cfg.P} cannot hold {size} proxies")
    start = view % cfg.P
    return frozenset(cfg.S + (start + k) % cfg.P for k in range(size))


@dataclass(frozen=True)
class SizingInput:
    """Inputs of the rental calculator.

    Give ``alpha`` (and optionally ``beta``) for the ratio method, or ``M``
    (and optionally ``C``) for the cluster-bound method.
    """

    S: int
    c: int
    alpha: float | None = None
    beta: float | None = None
    M: int | None = None
    C: int | None = None

    def __post_init__(self):
        if self.S < 0 or self.c < 0:
            raise InvalidInput("S and c must be non-negative")
        ratio = self.alpha is not None or self.beta is not None
        cluster = self.M is not None or self.C is not None
        if ratio == cluster:
            raise InvalidInput("select exactly one of the ratio method (alpha) or cluster method (M)")
        if ratio:
            if self.alpha is None:
                raise InvalidInput("ratio method requires alpha")
            if not 0 <= self.alpha < 1:
                raise InvalidInput("alpha must lie in [0, 1)")
            if self.beta is not None and not 0 <= self.beta < 1:
                raise InvalidInput("beta must lie in [0, 1)")
        else:
            if self.M is None:
                raise InvalidInput("cluster method requires M")
            if self.M < 0 or (self.C is not None and self.C < 0):
                raise InvalidInput("M and C must be non-negative")

    @property
    def method(self) -> str:
        return "cluster" if self.M is not None else "ratio"


def required_public_rental(spec: SizingInput) -> int:
    """Number of public replicas to rent so that S + P >= 3m + 2c + 1."""
    if spec.method == "cluster":
        extra_crash = spec.C or 0
        return max(0, 3 * spec.M + 2 * extra_crash + 2 * spec.c + 1 - spec.S)

    numerator = spec.S - (2 * spec.c + 1)
    if numerator >= 0:
        return 0
    # exact rational arithmetic: 3*0.3 - 1 is not -0.1 in binary floating point
    alpha = Fraction(str(spec.alpha))
    beta = Fraction(str(spec.beta)) if spec.beta is not None else Fraction(0)
    denominator = 3 * alpha + 2 * beta - 1
    if denominator >= 0:
        raise Infeasible(
            f"public cloud with alpha={spec.alpha}, beta={spec.beta or 0} cannot satisfy 3m+2c+1"
        )
    return math.ceil(Fraction(numerator) / denominator)


def byz_bound_for_rental(spec: SizingInput, rented: int) -> int:
    """Malicious bound implied by a rental of ``rented`` public replicas."""
    if spec.method == "cluster":
        return spec.M
    return math.floor(Fraction(str(spec.alpha)) * rented)

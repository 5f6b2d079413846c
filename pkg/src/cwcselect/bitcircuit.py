"""Gate-level encrypted-bit abstraction with a cleartext simulator backend.

Backends expose XOR/AND/NOT/MUX on opaque single-bit ciphertext handles plus
(public) encryption and key-holder decryption.  Every gate call bumps exactly
one counter, so circuit cost is measured in gates rather than wall clock; a
cost model maps counters to estimated seconds.

Exact gate counts of the circuits in this module (l = operand width,
N = number of input bits, b = accumulator width):

    add                 4l XOR, l AND
    negate              l NOT, l XOR, l AND
    less_than           5l XOR, 2l AND, l NOT          (negate + add, MSB out)
    equals              l XOR, l-1 AND, l NOT
    logical_or          1 AND, 3 NOT
    saturating_popcount N*b XOR, N*(b+1)+b AND, (3N+3b) NOT
    oblivious_swap      2 MUX per payload bit

Every stage of ``add`` is a full 5-gate adder (including the final, discarded
carry), so the AND count is exactly l and doubles when l doubles.
"""

from __future__ import annotations

import abc
import threading
from dataclasses import dataclass
from typing import Iterable, Sequence, Union


class BackendMismatchError(ValueError):
    """A ciphertext handle was used with a backend that did not produce it."""


GATE_KINDS = ("xor", "and", "not", "mux")


@dataclass(frozen=True)
class GateStats:
    xor: int = 0
    and_: int = 0
    not_: int = 0
    mux: int = 0

    @property
    def total(self) -> int:
        return self.xor + self.and_ + self.not_ + self.mux

    def __add__(self, other: "GateStats") -> "GateStats":
        return GateStats(
            self.xor + other.xor,
            self.and_ + other.and_,
            self.not_ + other.not_,
            self.mux + other.mux,
        )

    def __sub__(self, other: "GateStats") -> "GateStats":
        return GateStats(
            self.xor - other.xor,
            self.and_ - other.and_,
            self.not_ - other.not_,
            self.mux - other.mux,
        )

    def as_dict(self) -> dict:
        return {
            "xor": self.xor,
            "and": self.and_,
            "not": self.not_,
            "mux": self.mux,
            "total": self.total,
        }


# TFHE-flavoured defaults: a bootstrapped binary gate costs ~20 ms, ciphertext
# negation is free, and a MUX is equivalent to 1 AND + 2 XOR.
DEFAULT_GATE_WEIGHTS = {"xor": 0.02, "and": 0.02, "mux": 0.06, "not": 0.0}


@dataclass(frozen=True)
class CostModel:
    weights: dict

    @classmethod
    def default(cls) -> "CostModel":
        return cls(dict(DEFAULT_GATE_WEIGHTS))

    @classmethod
    def from_dict(cls, data: dict) -> "CostModel":
        weights = dict(DEFAULT_GATE_WEIGHTS)
        for key, value in data.items():
            if key not in weights:
                raise ValueError(f"unknown gate kind {key!r} in cost model")
            if float(value) < 0:
                raise ValueError(f"negative weight for {key!r}")
            weights[key] = float(value)
        return cls(weights)

    @classmethod
    def load(cls, path) -> "CostModel":
        import json

        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def estimate_seconds(self, stats: GateStats) -> float:
        return (
            self.weights["xor"] * stats.xor
            + self.weights["and"] * stats.and_
            + self.weights["not"] * stats.not_
            + self.weights["mux"] * stats.mux
        )


class EncBit:
    """Opaque single-bit ciphertext handle, bound to the backend that made it."""

    __slots__ = ("backend", "payload")

    def __init__(self, backend: "BitBackend", payload):
        self.backend = backend
        self.payload = payload

    def __repr__(self) -> str:  # never leaks the plaintext
        return f"<EncBit@{id(self):x}>"


class BitBackend(abc.ABC):
    """Abstract encrypted-bit capability with thread-safe op counters."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._counts = {
            "xor": 0,
            "and": 0,
            "not": 0,
            "mux": 0,
            "encrypt": 0,
            "decrypt": 0,
            "random": 0,
        }

    def _bump(self, kind: str) -> None:
        with self._lock:
            self._counts[kind] += 1

    def stats(self) -> GateStats:
        with self._lock:
            c = dict(self._counts)
        return GateStats(c["xor"], c["and"], c["not"], c["mux"])

    def op_counts(self) -> dict:
        with self._lock:
            return dict(self._counts)

    def _own(self, *bits: EncBit) -> None:
        for b in bits:
            if b.backend is not self:
                raise BackendMismatchError("ciphertext belongs to another backend")

    # -- public capability ----------------------------------------------

    def encrypt_bit(self, value: int) -> EncBit:
        if value not in (0, 1):
            raise ValueError("plaintext bit must be 0 or 1")
        self._bump("encrypt")
        return EncBit(self, self._encrypt(value))

    def decrypt_bit(self, bit: EncBit) -> int:
        self._own(bit)
        self._bump("decrypt")
        return self._decrypt(bit.payload)

    def fresh_random_bit(self) -> EncBit:
        self._bump("random")
        return EncBit(self, self._random())

    def xor(self, a: EncBit, b: EncBit) -> EncBit:
        self._own(a, b)
        self._bump("xor")
        return EncBit(self, self._xor(a.payload, b.payload))

    def and_(self, a: EncBit, b: EncBit) -> EncBit:
        self._own(a, b)
        self._bump("and")
        return EncBit(self, self._and(a.payload, b.payload))

    def not_(self, a: EncBit) -> EncBit:
        self._own(a)
        self._bump("not")
        return EncBit(self, self._not(a.payload))

    def mux(self, select: EncBit, a: EncBit, b: EncBit) -> EncBit:
        """select ? a : b"""
        self._own(select, a, b)
        self._bump("mux")
        return EncBit(self, self._mux(select.payload, a.payload, b.payload))

    # -- integer convenience ---------------------------------------------

    def encrypt_int(self, value: int, width: int) -> "EncInt":
        if width < 1:
            raise ValueError("width must be positive")
        if value < 0:
            raise ValueError("value must be non-negative")
        return EncInt(tuple(self.encrypt_bit(value >> i & 1) for i in range(width)))

    def decrypt_int(self, x: "EncInt") -> int:
        return sum(self.decrypt_bit(b) << i for i, b in enumerate(x.bits))

    # -- serialization (wire transport between parties) -------------------

    @abc.abstractmethod
    def serialize_bit(self, bit: EncBit) -> str: ...

    @abc.abstractmethod
    def deserialize_bit(self, data: str) -> EncBit: ...

    # -- raw scheme ops ----------------------------------------------------

    @abc.abstractmethod
    def _encrypt(self, value: int): ...

    @abc.abstractmethod
    def _decrypt(self, payload) -> int: ...

    @abc.abstractmethod
    def _random(self): ...

    @abc.abstractmethod
    def _xor(self, a, b): ...

    @abc.abstractmethod
    def _and(self, a, b): ...

    @abc.abstractmethod
    def _not(self, a): ...

    @abc.abstractmethod
    def _mux(self, s, a, b): ...


class InsecureCleartextBackend(BitBackend):
    """Simulator backend: NOT SECURE, for testing and gate accounting only.

    A "ciphertext" is the plaintext bit plus a fresh nonce, so re-encryption
    is observable (two encryptions of the same bit differ) while decryption
    is a field access.  Nonces come from a deterministic counter so that runs
    are reproducible byte for byte.
    """

    def __init__(self, seed: int = 0) -> None:
        super().__init__()
        # seed offsets the nonce stream so distinct backends do not alias
        self._next_nonce = (seed & 0xFFFF) << 40

    def _fresh(self, value: int):
        with self._lock:
            nonce = self._next_nonce
            self._next_nonce += 1
        return (value, nonce)

    def _encrypt(self, value):
        return self._fresh(value)

    def _decrypt(self, payload):
        return payload[0]

    def _random(self):
        # derived from the nonce stream; good enough for a simulator
        payload = self._fresh(0)
        return (payload[1] * 0x9E3779B97F4A7C15 >> 13 & 1, payload[1])

    def _xor(self, a, b):
        return self._fresh(a[0] ^ b[0])

    def _and(self, a, b):
        return self._fresh(a[0] & b[0])

    def _not(self, a):
        return self._fresh(1 - a[0])

    def _mux(self, s, a, b):
        return self._fresh(a[0] if s[0] else b[0])

    def serialize_bit(self, bit: EncBit) -> str:
        self._own(bit)
        value, nonce = bit.payload
        return f"{value:x}{nonce:016x}"

    def deserialize_bit(self, data: str) -> EncBit:
        return EncBit(self, (int(data[0], 16), int(data[1:], 16)))


# Registry so a gate-level FHE adapter can slot in behind the same capability.
BACKENDS = {"cleartext": InsecureCleartextBackend}


def make_backend(name: str = "cleartext", seed: int = 0) -> BitBackend:
    try:
        cls = BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(BACKENDS)}")
    return cls(seed=seed)


@dataclass(frozen=True)
class EncInt:
    """Fixed-width encrypted integer, least-significant bit first."""

    bits: tuple[EncBit, ...]

    def __post_init__(self) -> None:
        if not self.bits:
            raise ValueError("EncInt needs at least one bit")

    @property
    def width(self) -> int:
        return len(self.bits)

    @property
    def backend(self) -> BitBackend:
        return self.bits[0].backend


def _require_same_width(x: EncInt, y: EncInt) -> None:
    if x.width != y.width:
        raise ValueError(f"width mismatch: {x.width} vs {y.width}")


def add(x: EncInt, y: EncInt) -> EncInt:
    """Ripple-carry sum modulo 2^l: s_i = x_i^y_i^c_i,
    c_{i+1} = (x_i^c_i)(y_i^c_i)^c_i."""
    _require_same_width(x, y)
    be = x.backend
    carry = be.encrypt_bit(0)
    out = []
    for xi, yi in zip(x.bits, y.bits):
        a = be.xor(xi, carry)
        b = be.xor(yi, carry)
        out.append(be.xor(a, yi))
        carry = be.xor(be.and_(a, b), carry)
    return EncInt(tuple(out))


def negate(y: EncInt) -> EncInt:
    """Two's complement (2^l - y) mod 2^l: complement every bit, then add one."""
    be = y.backend
    carry = be.encrypt_bit(1)
    out = []
    for yi in y.bits:
        ni = be.not_(yi)
        out.append(be.xor(ni, carry))
        carry = be.and_(ni, carry)
    return EncInt(tuple(out))


def less_than(x: EncInt, y: EncInt) -> EncBit:
    """Encrypted [x < y] as the top bit of x + (-y).

    Callers must keep both operands below 2^(l-1): the spare top bit is what
    makes the sign of the difference meaningful for unsigned values.
    """
    _require_same_width(x, y)
    return add(x, negate(y)).bits[-1]


def equals(x: EncInt, y: EncInt) -> EncBit:
    """Encrypted [x == y]: AND over NOT(x_i XOR y_i)."""
    _require_same_width(x, y)
    be = x.backend
    acc = None
    for xi, yi in zip(x.bits, y.bits):
        same = be.not_(be.xor(xi, yi))
        acc = same if acc is None else be.and_(acc, same)
    return acc


def logical_or(a: EncBit, b: EncBit) -> EncBit:
    be = a.backend
    return be.not_(be.and_(be.not_(a), be.not_(b)))


def saturating_popcount(bits: Sequence[EncBit], b_max: int) -> EncInt:
    """Number of ones, clamped to 2^b_max - 1.

    One ripple increment per input bit into a b_max-wide register; a sticky
    overflow bit forces the register to all ones at the end if the cap was
    ever crossed.
    """
    if b_max < 1:
        raise ValueError("b_max must be >= 1")
    if not bits:
        raise ValueError("popcount needs a backend; pass at least one bit")
    be = bits[0].backend
    acc = [be.encrypt_bit(0) for _ in range(b_max)]
    sticky = be.encrypt_bit(0)
    for bit in bits:
        carry = bit
        for i in range(b_max):
            new_bit = be.xor(acc[i], carry)
            carry = be.and_(acc[i], carry)
            acc[i] = new_bit
        sticky = logical_or(sticky, carry)
    return EncInt(tuple(logical_or(a, sticky) for a in acc))


Swappable = Union[EncBit, EncInt, Sequence]


def _swap_leaves(c: EncBit, a, b, be: BitBackend):
    if isinstance(a, EncBit) and isinstance(b, EncBit):
        return be.mux(c, b, a), be.mux(c, a, b)
    if isinstance(a, EncInt) and isinstance(b, EncInt):
        _require_same_width(a, b)
        pairs = [_swap_leaves(c, x, y, be) for x, y in zip(a.bits, b.bits)]
        return EncInt(tuple(p[0] for p in pairs)), EncInt(tuple(p[1] for p in pairs))
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        if len(a) != len(b):
            raise ValueError("shape mismatch in oblivious swap")
        pairs = [_swap_leaves(c, x, y, be) for x, y in zip(a, b)]
        return type(a)(p[0] for p in pairs), type(b)(p[1] for p in pairs)
    raise ValueError("shape mismatch in oblivious swap")


def oblivious_swap(c: EncBit, a: Swappable, b: Swappable):
    """Conditionally exchange two same-shaped payloads under an encrypted flag.

    Every bit of both payloads goes through a MUX pair regardless of the
    flag's value, so the access pattern carries no information.  Returns the
    (kept-in-place, other) contents: swapped iff c decrypts to 1.
    """
    return _swap_leaves(c, a, b, c.backend)


class PhaseRecorder:
    """Attribute gate work to named phases via counter snapshots."""

    def __init__(self, backend: BitBackend):
        self.backend = backend
        self.phases: dict[str, GateStats] = {}
        self._mark = backend.stats()

    def record(self, name: str) -> None:
        now = self.backend.stats()
        delta = now - self._mark
        self.phases[name] = self.phases.get(name, GateStats()) + delta
        self._mark = now

    def total(self) -> GateStats:
        out = GateStats()
        for s in self.phases.values():
            out = out + s
        return out

"""Vector primitives shared by every optimizer and the vote simulator.

Dense vectors are plain 1-D float64 numpy arrays.  This module adds the
three sign operators (ternary ``sign``, tie-breaking ``sign_bit``, randomized
``stochastic_sign``), the l2 ball projection, norms, the packed 1-bit wire
codec, and deterministic splittable random streams.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np


class InvalidInputError(ValueError):
    """Raised when a vector argument contains NaN/Inf or has a bad shape."""


class DomainError(ValueError):
    """Raised when a value violates an operator's validity precondition."""


def as_vector(values, name: str = "v") -> np.ndarray:
    """Validate and convert to a finite 1-D float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# sign operators
# ---------------------------------------------------------------------------

def sign(v) -> np.ndarray:
    """Ternary elementwise sign: +1 / -1 / 0 (exactly zero stays zero).

    This is the update direction used by the centralized sign methods; the
    zero case never moves a coordinate whose estimator is exactly zero.
    """
    v = as_vector(v)
    return np.sign(v).astype(np.int8)


def sign_bit(v) -> "BitSignVector":
    """Strict two-valued sign with the tie rule 0 -> +1, packed to 1 bit/coordinate."""
    v = as_vector(v)
    return BitSignVector.from_bits(v >= 0.0)


def stochastic_sign(v, radius: float, rng: "RngStream") -> "BitSignVector":
    """Randomized unbiased sign: coordinate k is +1 with probability 1/2 + v_k/(2*radius).

    The decoded +/-1 vector has expectation ``v / radius``.  Only valid when
    ``max|v_k| <= radius`` (otherwise a probability would leave [0, 1]);
    violations raise ``DomainError`` rather than clamping, so estimator
    boundedness bugs surface immediately.
    """
    v = as_vector(v)
    if radius <= 0:
        raise DomainError(f"radius must be positive, got {radius}")
    vmax = float(np.max(np.abs(v)))
    if vmax > radius:
        raise DomainError(
            f"stochastic sign needs max|v| <= radius: max|v| = {vmax!r} > radius = {radius!r}"
        )
    p_plus = 0.5 + v / (2.0 * radius)
    # u < p is exact at the boundaries: p=1 always fires (u < 1), p=0 never does.
    u = rng.random(v.size)
    return BitSignVector.from_bits(u < p_plus)


# ---------------------------------------------------------------------------
# projection and norms
# ---------------------------------------------------------------------------

def project_l2(v, radius: float) -> np.ndarray:
    """Project onto the l2 ball of the given radius (identity inside the ball)."""
    v = as_vector(v)
    if radius <= 0:
        raise DomainError(f"radius must be positive, got {radius}")
    nrm = float(np.linalg.norm(v))
    if nrm <= radius:
        return v
    return v * (radius / nrm)


def norm_l1(v) -> float:
    return float(np.sum(np.abs(as_vector(v))))


def norm_l2(v) -> float:
    return float(np.linalg.norm(as_vector(v)))


def norm_linf(v) -> float:
    return float(np.max(np.abs(as_vector(v))))


# ---------------------------------------------------------------------------
# packed 1-bit sign codec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BitSignVector:
    """A +/-1 vector packed to one bit per coordinate.

    Bit b=1 encodes +1, b=0 encodes -1.  Coordinate k lives at byte k//8,
    bit k%8 (little-endian within each byte); trailing pad bits are zero.
    The payload is exactly ceil(dim/8) bytes and is the on-wire form.
    """

    dim: int
    payload: bytes

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInputError(f"dim must be positive, got {self.dim}")
        expect = (self.dim + 7) // 8
        if len(self.payload) != expect:
            raise InvalidInputError(
                f"payload must be {expect} bytes for dim {self.dim}, got {len(self.payload)}"
            )
        pad = self.dim % 8
        if pad and (self.payload[-1] >> pad):
            raise InvalidInputError("trailing pad bits must be zero")

    @classmethod
    def from_bits(cls, bits) -> "BitSignVector":
        """Pack a boolean array (True -> +1)."""
        bits = np.asarray(bits, dtype=np.uint8)
        payload = np.packbits(bits, bitorder="little").tobytes()
        return cls(dim=int(bits.size), payload=payload)

    @classmethod
    def from_signs(cls, signs) -> "BitSignVector":
        """Pack a +/-1 integer array."""
        signs = np.asarray(signs)
        if not np.all(np.abs(signs) == 1):
            raise InvalidInputError("entries must be exactly +1 or -1")
        return cls.from_bits(signs > 0)

    def to_signs(self) -> np.ndarray:
        """Unpack to an int8 array of +/-1."""
        raw = np.frombuffer(self.payload, dtype=np.uint8)
        bits = np.unpackbits(raw, count=self.dim, bitorder="little")
        return (bits.astype(np.int8) * 2) - 1


# ---------------------------------------------------------------------------
# deterministic splittable randomness
# ---------------------------------------------------------------------------

def _label_key(label) -> int:
    """Map a fork label (int or str) to a stable uint32 key."""
    if isinstance(label, (int, np.integer)):
        i = int(label)
        if 0 <= i < 2**32:
            return i
        return zlib.crc32(repr(i).encode())
    if isinstance(label, str):
        return zlib.crc32(label.encode())
    raise TypeError(f"fork labels must be int or str, got {type(label).__name__}")


@dataclass
class RngStream:
    """A named, forkable random stream backed by the counter-based Philox generator.

    Two streams built from the same ``(seed, path)`` replay identical draw
    sequences; distinct paths are statistically independent.  ``fork`` derives
    a child purely from the path labels, never from generator state, so the
    assignment of streams to nodes/purposes does not depend on the order in
    which anything is sampled or scheduled.  A stream is single-consumer:
    do not share one instance across threads.
    """

    seed: int
    path: tuple = ()
    _gen: np.random.Generator = field(default=None, repr=False, compare=False)

    def fork(self, *labels) -> "RngStream":
        keys = tuple(_label_key(x) for x in labels)
        return RngStream(self.seed, self.path + keys)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            keys = tuple(_label_key(x) for x in self.path)
            ss = np.random.SeedSequence(self.seed, spawn_key=keys)
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    # Thin passthroughs for the draws the package actually uses.
    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, low: float, high: float, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low: int, high=None, size=None):
        return self.generator.integers(low, high, size=size)

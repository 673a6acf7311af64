"""Range enlargement, nested binary channels and biased-coin level selection.

A :class:`QuantizationScheme` splits the enlarged range ``[c_min, c_max]``
into ``2**level`` equal channels at every level ``0..max_level``.  Channel
bounds are computed as ``c_min + index * width(level)``, which makes the
levels nest exactly: the bounds of channel ``i`` at level ``l`` coincide
bit-for-bit with those of channel ``2*i`` / ``2*i + 1`` at level ``l + 1``.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_MAX_LEVEL = 16
DEFAULT_MEAN_LEVEL = 8.0
SALT_BYTES = 16


@dataclass(frozen=True)
class QuantizationScheme:
    """Shared hyper-parameters of the encoding.

    ``salt`` is secret; everything else may be fingerprinted or logged.
    """

    c_min: float
    c_max: float
    delta: float
    max_level: int = DEFAULT_MAX_LEVEL
    selection_p: float = 0.087826
    salt: bytes = bytes(SALT_BYTES)

    def __post_init__(self):
        for name in ("c_min", "c_max", "delta", "selection_p"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not self.c_min < self.c_max:
            raise ValueError(f"empty range: c_min={self.c_min} >= c_max={self.c_max}")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if int(self.max_level) != self.max_level or self.max_level < 1:
            raise ValueError("max_level must be an integer >= 1")
        if not 0.0 < self.selection_p <= 1.0:
            raise ValueError("selection_p must lie in (0, 1]")
        if not isinstance(self.salt, bytes) or len(self.salt) != SALT_BYTES:
            raise ValueError(f"salt must be {SALT_BYTES} bytes")

    @classmethod
    def from_range(
        cls,
        x_min: float,
        x_max: float,
        delta: float | None = None,
        max_level: int = DEFAULT_MAX_LEVEL,
        selection_p: float | None = None,
        salt: bytes = bytes(SALT_BYTES),
    ) -> "QuantizationScheme":
        """Build a scheme from a source range.

        ``delta`` defaults to half the source span; ``selection_p`` defaults to
        the bias giving a mean level of 8 (or ``max_level / 2`` if smaller).
        """
        if delta is None:
            delta = (x_max - x_min) / 2.0
        c_min, c_max = enlarge_range(x_min, x_max, delta)
        if selection_p is None:
            selection_p = solve_bias(min(DEFAULT_MEAN_LEVEL, max_level / 2.0), max_level)
        return cls(c_min, c_max, delta, max_level, selection_p, salt)

    @property
    def span(self) -> float:
        return self.c_max - self.c_min

    def width(self, level: int) -> float:
        return self.span / (1 << level)

    def to_bytes(self, include_salt: bool = True) -> bytes:
        """Canonical big-endian serialization."""
        body = struct.pack(
            ">dddId", self.c_min, self.c_max, self.delta, self.max_level, self.selection_p
        )
        return body + self.salt if include_salt else body

    @classmethod
    def from_bytes(cls, data: bytes) -> "QuantizationScheme":
        c_min, c_max, delta, max_level, p = struct.unpack(">dddId", data[:36])
        return cls(c_min, c_max, delta, max_level, p, bytes(data[36 : 36 + SALT_BYTES]))

    def fingerprint(self) -> str:
        """Hex digest identifying the scheme without revealing the salt."""
        return hashlib.sha256(self.to_bytes(include_salt=False)).hexdigest()


@dataclass(frozen=True, order=True)
class ChannelRef:
    level: int
    index: int

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be >= 0")
        if not 0 <= self.index < (1 << self.level):
            raise ValueError(f"index {self.index} out of range for level {self.level}")

    def parent(self) -> "ChannelRef":
        return ChannelRef(self.level - 1, self.index >> 1)


def enlarge_range(x_min: float, x_max: float, delta: float) -> tuple[float, float]:
    """Widen ``[x_min, x_max]`` by ``delta`` on both sides."""
    if not all(math.isfinite(v) for v in (x_min, x_max, delta)):
        raise ValueError("range bounds and delta must be finite")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if x_min > x_max:
        raise ValueError("x_min must not exceed x_max")
    return x_min - delta, x_max + delta


def _check_level(scheme: QuantizationScheme, level: int) -> None:
    if not 0 <= level <= scheme.max_level:
        raise ValueError(f"level {level} outside [0, {scheme.max_level}]")


def channel_bounds(ch: ChannelRef, scheme: QuantizationScheme) -> tuple[float, float]:
    _check_level(scheme, ch.level)
    w = scheme.width(ch.level)
    return scheme.c_min + ch.index * w, scheme.c_min + (ch.index + 1) * w


def channel_of(x: float, scheme: QuantizationScheme, level: int) -> ChannelRef:
    """Channel containing ``x``; channels are ``[lo, hi)`` except the top one."""
    _check_level(scheme, level)
    if not scheme.c_min <= x <= scheme.c_max:
        raise ValueError(f"value {x} outside [{scheme.c_min}, {scheme.c_max}]")
    return ChannelRef(level, int(channel_indices(np.array([x]), scheme, level)[0]))


def channel_indices(values, scheme: QuantizationScheme, level: int) -> np.ndarray:
    """Vectorised :func:`channel_of` returning indices only.

    The floor estimate is corrected against the same bound formula used by
    :func:`channel_bounds`, so the two never disagree at channel edges.
    """
    _check_level(scheme, level)
    x = np.asarray(values, dtype=np.float64)
    if x.size and (np.any(~(x >= scheme.c_min)) or np.any(~(x <= scheme.c_max))):
        raise ValueError(f"values outside [{scheme.c_min}, {scheme.c_max}]")
    top = (1 << level) - 1
    w = scheme.width(level)
    idx = np.clip(np.floor((x - scheme.c_min) / w), 0, top).astype(np.int64)
    lo = scheme.c_min + idx * w
    idx = np.where((x < lo) & (idx > 0), idx - 1, idx)
    hi = scheme.c_min + (idx + 1) * w
    idx = np.where((x >= hi) & (idx < top), idx + 1, idx)
    return idx


def midpoint_of(ch: ChannelRef, scheme: QuantizationScheme) -> float:
    _check_level(scheme, ch.level)
    return scheme.c_min + (ch.index + 0.5) * scheme.width(ch.level)


def midpoints(scheme: QuantizationScheme, level: int) -> np.ndarray:
    """All channel midpoints at ``level``, same arithmetic as :func:`midpoint_of`."""
    _check_level(scheme, level)
    return scheme.c_min + (np.arange(1 << level) + 0.5) * scheme.width(level)


def level_from_tosses(tosses: Sequence[bool]) -> int:
    """1-based position of the last head, or 0 when every toss is tails."""
    for pos in range(len(tosses), 0, -1):
        if tosses[pos - 1]:
            return pos
    return 0


def clamp_level(level):
    """Map the all-tails outcome (level 0) to level 1."""
    return np.maximum(level, 1) if isinstance(level, np.ndarray) else max(int(level), 1)


def sample_level(rng: np.random.Generator, scheme: QuantizationScheme) -> int:
    """Toss the biased coin ``max_level`` times; raw (unclamped) level."""
    return level_from_tosses(rng.random(scheme.max_level) < scheme.selection_p)


def sample_levels(rng: np.random.Generator, scheme: QuantizationScheme, size: int) -> np.ndarray:
    """Vectorised :func:`sample_level`, one toss sequence per row."""
    heads = rng.random((size, scheme.max_level)) < scheme.selection_p
    last = scheme.max_level - np.argmax(heads[:, ::-1], axis=1)
    return np.where(heads.any(axis=1), last, 0)


def level_probabilities(p: float, max_level: int) -> np.ndarray:
    """P(raw level = j) for j = 0..L; index 0 is the all-tails case."""
    probs = np.array([p * (1.0 - p) ** (max_level - j) for j in range(max_level + 1)])
    probs[0] = (1.0 - p) ** max_level
    return probs


def expected_level(p: float, max_level: int) -> float:
    """Mean last-head position: sum over i of (L - i) p (1 - p)^i."""
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    if max_level < 1:
        raise ValueError("max_level must be >= 1")
    return math.fsum((max_level - i) * p * (1.0 - p) ** i for i in range(max_level + 1))


def solve_bias(target_mean: float, max_level: int, tol: float = 1e-9) -> float:
    """Head probability whose expected level equals ``target_mean`` (bisection)."""
    if not 0.0 < target_mean < max_level:
        raise ValueError(
            f"no bias reaches mean level {target_mean} with L={max_level}; "
            f"need 0 < target < {max_level}"
        )
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if expected_level(mid, max_level) < target_mean:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)

"""Hash-Comb encoding of real values and table-driven decoding.

A value encoded at level ``k`` becomes the chain of digests of the channels
containing it at levels ``1..k``.  Each digest covers
``level (1 byte) | lo (f64 BE) | salt (16 bytes) | hi (f64 BE)``.

Wire layout of one record: ``k`` as one byte followed by ``k`` 32-byte
digests in level order.  A round message is a big-endian ``uint32`` record
count followed by the records in parameter order.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .quantization import (
    ChannelRef,
    QuantizationScheme,
    channel_indices,
    midpoints,
)

DIGEST_NAME = "sha256"
DIGEST_SIZE = 32
_COUNT = struct.Struct(">I")


class UnknownDigestError(KeyError):
    """A digest matches no channel of the negotiated scheme."""


class DigestCollisionError(RuntimeError):
    pass


@dataclass(frozen=True)
class HashComb:
    level: int
    chain: tuple[bytes, ...]

    def __post_init__(self):
        if len(self.chain) != self.level:
            raise ValueError(f"chain length {len(self.chain)} != level {self.level}")
        if not 1 <= self.level <= 255:
            raise ValueError("level must fit in one byte and be >= 1")

    @property
    def finest(self) -> bytes:
        return self.chain[-1]

    def to_bytes(self) -> bytes:
        return bytes([self.level]) + b"".join(self.chain)

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> tuple["HashComb", int]:
        level = data[offset]
        start = offset + 1
        end = start + level * DIGEST_SIZE
        if end > len(data):
            raise ValueError("truncated Hash-Comb record")
        chain = tuple(data[start + i * DIGEST_SIZE : start + (i + 1) * DIGEST_SIZE] for i in range(level))
        return cls(level, chain), end


def _digest(level: int, lo: float, hi: float, salt: bytes) -> bytes:
    return hashlib.sha256(bytes([level]) + struct.pack(">d", lo) + salt + struct.pack(">d", hi)).digest()


def channel_digest(ch: ChannelRef, scheme: QuantizationScheme) -> bytes:
    w = scheme.width(ch.level)
    return _digest(ch.level, scheme.c_min + ch.index * w, scheme.c_min + (ch.index + 1) * w, scheme.salt)


@lru_cache(maxsize=64)
def level_digests(scheme: QuantizationScheme, level: int) -> tuple[bytes, ...]:
    """Digests of every channel at ``level``, indexed by channel index."""
    if not 1 <= level <= scheme.max_level:
        raise ValueError(f"level {level} outside [1, {scheme.max_level}]")
    w = scheme.width(level)
    c_min, salt = scheme.c_min, scheme.salt
    return tuple(
        _digest(level, c_min + i * w, c_min + (i + 1) * w, salt) for i in range(1 << level)
    )


def encode(w: float, level: int, scheme: QuantizationScheme) -> HashComb:
    return encode_many(np.array([w]), np.array([level]), scheme)[0]


def encode_many(values, levels, scheme: QuantizationScheme) -> list[HashComb]:
    """Encode each value at its own level.

    Ancestor channels are derived by right-shifting the finest index, which
    is valid because the channel bounds nest exactly.
    """
    values = np.asarray(values, dtype=np.float64)
    levels = np.broadcast_to(np.asarray(levels, dtype=np.int64), values.shape)
    if levels.size and (levels.min() < 1 or levels.max() > scheme.max_level):
        raise ValueError(f"levels must lie in [1, {scheme.max_level}]")
    out: list[HashComb | None] = [None] * values.size
    for level in np.unique(levels):
        level = int(level)
        sel = np.flatnonzero(levels == level)
        idx = channel_indices(values[sel], scheme, level)
        tables = [level_digests(scheme, j) for j in range(1, level + 1)]
        for pos, i in zip(sel.tolist(), idx.tolist()):
            out[pos] = HashComb(
                level, tuple(tables[j - 1][i >> (level - j)] for j in range(1, level + 1))
            )
    return out  # type: ignore[return-value]


@dataclass(frozen=True)
class DigestTable:
    level: int
    entries: Mapping[bytes, tuple[int, float]]

    def lookup(self, digest: bytes) -> tuple[int, float]:
        try:
            return self.entries[digest]
        except KeyError:
            raise UnknownDigestError(
                f"digest {digest.hex()[:16]}... unknown at level {self.level}"
            ) from None

    def __len__(self) -> int:
        return len(self.entries)


def build_table(level: int, scheme: QuantizationScheme) -> DigestTable:
    digests = level_digests(scheme, level)
    mids = midpoints(scheme, level).tolist()
    entries = {d: (i, mids[i]) for i, d in enumerate(digests)}
    if len(entries) != len(digests):
        raise DigestCollisionError(f"digest collision at level {level}")
    return DigestTable(level, entries)


def build_tables(scheme: QuantizationScheme, levels: Iterable[int] | None = None) -> dict[int, DigestTable]:
    if levels is None:
        levels = range(1, scheme.max_level + 1)
    return {lvl: build_table(lvl, scheme) for lvl in levels}


def decode(hc: HashComb, tables: Mapping[int, DigestTable]) -> float:
    """Midpoint of the finest channel named by ``hc``."""
    table = tables.get(hc.level)
    if table is None:
        raise UnknownDigestError(f"no decoding table for level {hc.level}")
    return table.lookup(hc.finest)[1]


def pack_records(combs: Sequence[HashComb]) -> bytes:
    return _COUNT.pack(len(combs)) + b"".join(hc.to_bytes() for hc in combs)


def unpack_records(data: bytes) -> list[HashComb]:
    (count,) = _COUNT.unpack_from(data, 0)
    offset = _COUNT.size
    combs = []
    for _ in range(count):
        hc, offset = HashComb.from_bytes(data, offset)
        combs.append(hc)
    if offset != len(data):
        raise ValueError(f"{len(data) - offset} trailing bytes after {count} records")
    return combs

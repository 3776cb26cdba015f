"""
Gear-hash content-defined chunking.

The rolling hash is ``h = ((h << 1) + GEAR[byte]) mod 2**64``, reset to zero
at every chunk start. After 64 bytes the hash depends only on the last 64
bytes, which is what lets boundaries resynchronize after an insertion. A
position ends a chunk when the top ``log2(avg)`` bits of the hash are zero
and the chunk is at least ``min_size`` long; a chunk is forced at
``max_size``. Inputs no longer than ``min_size`` become a single chunk.

Window hashes for a whole buffer are computed with numpy in 64 shifted
passes; only the first 63 positions after an interior chunk start (reachable
when ``min_size < 64``) are rolled byte by byte.
"""
import hashlib
import logging
from dataclasses import asdict, dataclass
from typing import BinaryIO, Iterator

import numpy as np
from django.conf import settings

from repository.exceptions import ValidationError

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
WINDOW = 64
GEAR_SEED = b'dsr-gear'
HASH_BLOCK = 1 << 20


def _gear_table() -> tuple[int, ...]:
    # Entry i: first 8 bytes of SHA-256(b"dsr-gear" + bytes([i])), big-endian.
    return tuple(
        int.from_bytes(hashlib.sha256(GEAR_SEED + bytes([i])).digest()[:8], 'big')
        for i in range(256)
    )


GEAR = _gear_table()
GEAR_ARRAY = np.array(GEAR, dtype=np.uint64)


@dataclass(frozen=True)
class ChunkingParams:
    min_size: int = 256 * 1024
    avg_size: int = 1024 * 1024
    max_size: int = 4 * 1024 * 1024

    def __post_init__(self):
        for name in ('min_size', 'avg_size', 'max_size'):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ValidationError(f"chunking {name} must be a positive integer, got {value!r}")
        if not self.min_size <= self.avg_size <= self.max_size:
            raise ValidationError(
                f"chunking parameters must satisfy min <= avg <= max "
                f"(got {self.min_size}/{self.avg_size}/{self.max_size})"
            )
        if self.avg_size & (self.avg_size - 1):
            raise ValidationError(f"chunking avg_size must be a power of two, got {self.avg_size}")

    @classmethod
    def from_settings(cls) -> 'ChunkingParams':
        return cls(
            min_size=getattr(settings, 'DSR_CHUNK_MIN_SIZE', cls.min_size),
            avg_size=getattr(settings, 'DSR_CHUNK_AVG_SIZE', cls.avg_size),
            max_size=getattr(settings, 'DSR_CHUNK_MAX_SIZE', cls.max_size),
        )

    @classmethod
    def from_dict(cls, data: dict) -> 'ChunkingParams':
        return cls(min_size=data['min_size'], avg_size=data['avg_size'], max_size=data['max_size'])

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def mask_bits(self) -> int:
        return self.avg_size.bit_length() - 1

    @property
    def cut_mask(self) -> int:
        bits = self.mask_bits
        if bits == 0:
            return 0
        return ((1 << bits) - 1) << (WINDOW - bits)


def window_hashes(view: np.ndarray) -> np.ndarray:
    """Gear hash ending at every position of *view*, as if rolled from its first byte."""
    gears = GEAR_ARRAY[view]
    hashes = gears.copy()
    for shift in range(1, WINDOW):
        if shift >= len(gears):
            break
        # uint64 arithmetic wraps, which is the mod 2**64 of the scalar form.
        hashes[shift:] += gears[:-shift] << np.uint64(shift)
    return hashes


def _cut_candidates(view: np.ndarray, cut_mask: int) -> np.ndarray:
    """Positions whose full-window hash passes the mask test, ascending."""
    mask = np.uint64(cut_mask)
    found = []
    for block_start in range(0, len(view), HASH_BLOCK):
        lo = max(0, block_start - (WINDOW - 1))
        hashes = window_hashes(view[lo:block_start + HASH_BLOCK])[block_start - lo:]
        found.append(np.flatnonzero((hashes & mask) == 0) + block_start)
    if not found:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(found)


def chunk_boundaries(data, params: ChunkingParams) -> list[tuple[int, int]]:
    """Partition *data* into ``(offset, length)`` chunks."""
    view = np.frombuffer(data, dtype=np.uint8)
    total = len(view)
    if total == 0:
        return []
    if total <= params.min_size:
        return [(0, total)]

    cut_mask = params.cut_mask
    hits = _cut_candidates(view, cut_mask)
    boundaries = []
    start = 0
    while start < total:
        remaining = total - start
        if remaining <= params.min_size:
            boundaries.append((start, remaining))
            break
        limit = min(start + params.max_size, total)
        first_eligible = start + params.min_size - 1
        # From here on the precomputed window hash equals the reset-at-start hash.
        exact_from = start if start == 0 else start + WINDOW - 1
        cut = None
        if first_eligible < exact_from:
            rolling = 0
            for position in range(start, min(exact_from, limit)):
                rolling = ((rolling << 1) + GEAR[view[position]]) & MASK64
                if position >= first_eligible and not rolling & cut_mask:
                    cut = position + 1
                    break
        if cut is None:
            index = np.searchsorted(hits, max(first_eligible, exact_from))
            if index < len(hits) and hits[index] < limit:
                cut = int(hits[index]) + 1
            else:
                cut = limit
        boundaries.append((start, cut - start))
        start = cut
    return boundaries


def iter_chunks(stream: BinaryIO, params: ChunkingParams) -> Iterator[bytes]:
    """Chunk a stream without holding it in memory.

    Boundaries only depend on bytes from the chunk start onwards, so a chunk
    is final once ``max_size`` bytes past its start are buffered.
    """
    read_size = max(4 * params.max_size, HASH_BLOCK)
    buffer = bytearray()
    eof = False
    while True:
        while not eof and len(buffer) < 2 * params.max_size:
            block = stream.read(read_size)
            if not block:
                eof = True
            else:
                buffer += block
        if not buffer:
            return
        snapshot = bytes(buffer)
        consumed = 0
        for offset, length in chunk_boundaries(snapshot, params):
            if not eof and offset + params.max_size > len(snapshot):
                break
            yield snapshot[offset:offset + length]
            consumed = offset + length
        del buffer[:consumed]
        if eof and not buffer:
            return

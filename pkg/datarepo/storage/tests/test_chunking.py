import hashlib
import io

import numpy as np
import pytest
from django.test import SimpleTestCase

from repository.exceptions import ValidationError
from storage.chunking import GEAR, MASK64, ChunkingParams, chunk_boundaries, iter_chunks

FIXTURE_SEED = 20240611
FIXTURE_SIZE = 1 << 20
MIB = 1 << 20
PARAMS = ChunkingParams(min_size=2048, avg_size=8192, max_size=65536)


def scalar_boundaries(data: bytes, params: ChunkingParams) -> list[tuple[int, int]]:
    """Byte-at-a-time gear hash, written independently of the vectorized chunker."""
    table = [
        int.from_bytes(hashlib.sha256(b'dsr-gear' + bytes([value])).digest()[:8], 'big')
        for value in range(256)
    ]
    bits = params.avg_size.bit_length() - 1
    mask = ((1 << bits) - 1) << (64 - bits)
    boundaries = []
    start = 0
    while start < len(data):
        remaining = len(data) - start
        if remaining <= params.min_size:
            boundaries.append((start, remaining))
            break
        limit = min(start + params.max_size, len(data))
        cut = limit
        rolling = 0
        for position in range(start, limit):
            rolling = ((rolling << 1) + table[data[position]]) % (1 << 64)
            if position - start + 1 >= params.min_size and rolling & mask == 0:
                cut = position + 1
                break
        boundaries.append((start, cut - start))
        start = cut
    return boundaries


def fixture() -> bytes:
    return np.random.default_rng(FIXTURE_SEED).integers(0, 256, FIXTURE_SIZE, dtype=np.uint8).tobytes()


class GearTableTests(SimpleTestCase):
    def test_table_is_derived_from_sha256(self):
        self.assertEqual(len(GEAR), 256)
        self.assertEqual(GEAR[0], int.from_bytes(hashlib.sha256(b'dsr-gear\x00').digest()[:8], 'big'))
        self.assertEqual(GEAR[255], int.from_bytes(hashlib.sha256(b'dsr-gear\xff').digest()[:8], 'big'))
        self.assertTrue(all(0 <= value <= MASK64 for value in GEAR))


class ChunkBoundaryTests(SimpleTestCase):
    def test_matches_scalar_oracle_on_seeded_fixture(self):
        data = fixture()
        boundaries = chunk_boundaries(data, PARAMS)
        self.assertEqual(boundaries, scalar_boundaries(data, PARAMS))
        self.assertGreater(len(boundaries), 20)

    def test_matches_scalar_oracle_when_min_is_shorter_than_window(self):
        params = ChunkingParams(min_size=16, avg_size=64, max_size=256)
        data = fixture()[:20000]
        self.assertEqual(chunk_boundaries(data, params), scalar_boundaries(data, params))

    def test_boundaries_partition_input_within_size_bounds(self):
        data = fixture()
        boundaries = chunk_boundaries(data, PARAMS)
        offset = 0
        for index, (start, length) in enumerate(boundaries):
            self.assertEqual(start, offset)
            self.assertLessEqual(length, PARAMS.max_size)
            if index < len(boundaries) - 1:
                self.assertGreaterEqual(length, PARAMS.min_size)
            offset += length
        self.assertEqual(offset, len(data))

    def test_small_and_empty_inputs(self):
        self.assertEqual(chunk_boundaries(b'', PARAMS), [])
        self.assertEqual(chunk_boundaries(b'x' * PARAMS.min_size, PARAMS), [(0, PARAMS.min_size)])

    def test_constant_input_matches_oracle(self):
        data = b'\x00' * (PARAMS.max_size * 2 + 10)
        self.assertEqual(chunk_boundaries(data, PARAMS), scalar_boundaries(data, PARAMS))

    def test_boundaries_resynchronize_after_insertion(self):
        data = fixture()
        edited = data[:5000] + b'inserted bytes' + data[5000:]
        original = {data[start:start + length] for start, length in chunk_boundaries(data, PARAMS)}
        shifted = [edited[start:start + length] for start, length in chunk_boundaries(edited, PARAMS)]
        shared = sum(1 for chunk in shifted if chunk in original)
        self.assertGreaterEqual(shared, len(shifted) - 3)


class DefaultParameterTests(SimpleTestCase):
    params = ChunkingParams()

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.data = np.random.default_rng(FIXTURE_SEED).integers(0, 256, 10 * MIB, dtype=np.uint8).tobytes()

    def chunk_ids(self, data):
        return [hashlib.sha256(data[start:start + length]).hexdigest() for start, length in chunk_boundaries(data, self.params)]

    def test_mean_chunk_length_on_random_input(self):
        boundaries = chunk_boundaries(self.data, self.params)
        mean = len(self.data) / len(boundaries)
        self.assertGreaterEqual(mean, 512 * 1024)
        self.assertLessEqual(mean, 2 * MIB)

    def test_prepended_byte_changes_only_the_leading_chunks(self):
        original = self.chunk_ids(self.data)
        shifted = self.chunk_ids(b'\x00' + self.data)
        suffix = 0
        while suffix < min(len(original), len(shifted)) and original[-1 - suffix] == shifted[-1 - suffix]:
            suffix += 1
        self.assertGreaterEqual(suffix, len(original) - 2)
        self.assertGreaterEqual(suffix / (len(original) - 1), 0.9)

    @pytest.mark.slow
    def test_matches_scalar_oracle(self):
        self.assertEqual(chunk_boundaries(self.data, self.params), scalar_boundaries(self.data, self.params))


class StreamingChunkerTests(SimpleTestCase):
    def test_stream_chunks_equal_whole_buffer_chunks(self):
        data = fixture()
        expected = [data[start:start + length] for start, length in chunk_boundaries(data, PARAMS)]
        self.assertEqual(list(iter_chunks(io.BytesIO(data), PARAMS)), expected)


class ChunkingParamsTests(SimpleTestCase):
    def test_rejects_inconsistent_parameters(self):
        with self.assertRaises(ValidationError):
            ChunkingParams(min_size=4096, avg_size=2048, max_size=8192)
        with self.assertRaises(ValidationError):
            ChunkingParams(min_size=512, avg_size=3000, max_size=8192)
        with self.assertRaises(ValidationError):
            ChunkingParams(min_size=0, avg_size=2048, max_size=8192)

    def test_round_trips_through_config(self):
        self.assertEqual(ChunkingParams.from_dict(PARAMS.to_dict()), PARAMS)

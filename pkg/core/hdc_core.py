"""
Binary hypervector algebra: generation, binding, bundling, distance.

Hypervectors are bit-packed into little-endian uint64 words. Bit i of a
vector lives in word i // 64 at position i % 64.
"""

import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np

from core.errors import ConfigError, DimensionMismatch, EmptyInputError, InputError

logger = logging.getLogger(__name__)

DEFAULT_DIM = 2048
WORD_BITS = 64
WORD_DTYPE = np.dtype('<u8')

CODEBOOK_MAGIC = b'HVCB'
CODEBOOK_VERSION = 1
_CODEBOOK_HEADER = struct.Struct('<4sHIBIIQ')

# Stream selector for the level codebook flip order, kept apart from entry indices
_LEVEL_PERMUTATION_STREAM = 0x4C4556454C


def check_dim(dim: int) -> int:
    """Validate a hypervector dimension and return it"""
    if dim <= 0 or dim % WORD_BITS:
        raise ConfigError(f"Hypervector dimension must be a positive multiple of {WORD_BITS}, got {dim}")
    return dim


@dataclass(frozen=True, eq=False)
class Hypervector:
    """Bit-packed binary hypervector of dimension `dim`"""

    words: np.ndarray
    dim: int

    def __post_init__(self):
        check_dim(self.dim)
        words = np.ascontiguousarray(self.words, dtype=WORD_DTYPE)
        if words.shape != (self.dim // WORD_BITS,):
            raise ValueError(f"Expected {self.dim // WORD_BITS} words for D={self.dim}, got shape {words.shape}")
        words.flags.writeable = False
        object.__setattr__(self, 'words', words)

    @classmethod
    def zeros(cls, dim: int = DEFAULT_DIM) -> 'Hypervector':
        return cls(np.zeros(check_dim(dim) // WORD_BITS, dtype=WORD_DTYPE), dim)

    @classmethod
    def from_bits(cls, bits: Union[Sequence[int], np.ndarray]) -> 'Hypervector':
        """Build from a 0/1 sequence of length D"""
        bits = np.asarray(bits, dtype=np.uint8)
        dim = check_dim(bits.shape[0])
        packed = np.packbits(bits, bitorder='little')
        return cls(packed.view(WORD_DTYPE).copy(), dim)

    def to_bits(self) -> np.ndarray:
        """Unpack to a uint8 array of 0/1 values"""
        return unpack_rows(self.words[np.newaxis, :])[0]

    def popcount(self) -> int:
        return int(np.bitwise_count(self.words).sum())

    def __invert__(self) -> 'Hypervector':
        return Hypervector(~self.words, self.dim)

    def __xor__(self, other: 'Hypervector') -> 'Hypervector':
        return bind(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Hypervector):
            return NotImplemented
        return self.dim == other.dim and bool(np.array_equal(self.words, other.words))

    def __hash__(self) -> int:
        return hash((self.dim, self.words.tobytes()))

    def __repr__(self) -> str:
        return f"Hypervector(dim={self.dim}, popcount={self.popcount()})"


def _check_pair(a: Hypervector, b: Hypervector) -> None:
    if a.dim != b.dim:
        raise DimensionMismatch(a.dim, b.dim)


def unpack_rows(words: np.ndarray) -> np.ndarray:
    """Unpack an (N, W) uint64 matrix to an (N, W*64) 0/1 uint8 matrix"""
    words = np.ascontiguousarray(words, dtype=WORD_DTYPE)
    return np.unpackbits(words.view(np.uint8), axis=1, bitorder='little')


def pack_rows(hvs: Iterable[Hypervector], dim: int) -> np.ndarray:
    """Stack hypervectors into an (N, D/64) word matrix"""
    rows = [hv.words for hv in hvs]
    for hv_words in rows:
        if hv_words.shape[0] * WORD_BITS != dim:
            raise DimensionMismatch(dim, hv_words.shape[0] * WORD_BITS)
    if not rows:
        return np.zeros((0, dim // WORD_BITS), dtype=WORD_DTYPE)
    return np.vstack(rows)


def random_hv(seed: int, index: int, dim: int = DEFAULT_DIM) -> Hypervector:
    """
    Deterministic pseudo-random hypervector

    Args:
        seed: 64-bit codebook seed
        index: Entry index within the codebook
        dim: Hypervector dimension

    Returns:
        Hypervector whose bits are i.i.d. Bernoulli(0.5) for this (seed, index, dim)
    """
    check_dim(dim)
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, index, dim])
    raw = rng.bytes(dim // 8)
    return Hypervector(np.frombuffer(raw, dtype=WORD_DTYPE).copy(), dim)


def bind(a: Hypervector, b: Hypervector) -> Hypervector:
    """Elementwise XOR"""
    _check_pair(a, b)
    return Hypervector(a.words ^ b.words, a.dim)


def hamming(a: Hypervector, b: Hypervector) -> int:
    """popcount(a XOR b)"""
    _check_pair(a, b)
    return int(np.bitwise_count(a.words ^ b.words).sum())


def hamming_rows(matrix: np.ndarray, query: Hypervector) -> np.ndarray:
    """Hamming distance from `query` to every row of an (N, W) word matrix"""
    if matrix.shape[1] != query.words.shape[0]:
        raise DimensionMismatch(matrix.shape[1] * WORD_BITS, query.dim)
    return np.bitwise_count(matrix ^ query.words).sum(axis=1, dtype=np.int64)


@dataclass
class Accumulator:
    """Per-position counts of bundled hypervectors"""

    dim: int
    counts: np.ndarray = field(default=None)
    total: int = 0

    def __post_init__(self):
        check_dim(self.dim)
        if self.counts is None:
            self.counts = np.zeros(self.dim, dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64).copy()
            if self.counts.shape != (self.dim,):
                raise DimensionMismatch(self.dim, self.counts.shape[0])
        if self.total < 0 or (self.total and (self.counts.min() < 0 or self.counts.max() > self.total)):
            raise ValueError("Accumulator counts must lie in [0, total]")

    @classmethod
    def of(cls, hvs: Iterable[Hypervector], dim: int) -> 'Accumulator':
        acc = cls(dim)
        for hv in hvs:
            acc.add(hv)
        return acc

    def add(self, hv: Hypervector) -> 'Accumulator':
        if hv.dim != self.dim:
            raise DimensionMismatch(self.dim, hv.dim)
        self.counts += hv.to_bits()
        self.total += 1
        return self

    def add_bits(self, bit_rows: np.ndarray) -> 'Accumulator':
        """Add an (N, D) 0/1 matrix in one step"""
        bit_rows = np.atleast_2d(bit_rows)
        if bit_rows.shape[1] != self.dim:
            raise DimensionMismatch(self.dim, bit_rows.shape[1])
        self.counts += bit_rows.sum(axis=0, dtype=np.int64)
        self.total += bit_rows.shape[0]
        return self

    def copy(self) -> 'Accumulator':
        return Accumulator(self.dim, self.counts, self.total)


def bundle(acc: Accumulator, tie_breaker: Hypervector) -> Hypervector:
    """
    Majority vote over an accumulator

    Bit i is 1 when counts[i] > total / 2. Even ties take tie_breaker[i].
    """
    if acc.total < 1:
        raise EmptyInputError("Cannot bundle an empty accumulator")
    if tie_breaker.dim != acc.dim:
        raise DimensionMismatch(acc.dim, tie_breaker.dim)
    twice = acc.counts * 2
    bits = (twice > acc.total) | ((twice == acc.total) & (tie_breaker.to_bits() == 1))
    return Hypervector.from_bits(bits.astype(np.uint8))


class CodebookKind(Enum):
    ID = 0
    LEVEL = 1


@dataclass(frozen=True, eq=False)
class Codebook:
    """Ordered hypervector entries generated from a seed"""

    kind: CodebookKind
    matrix: np.ndarray
    dim: int
    seed: int
    levels: int = 0

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def __getitem__(self, index: int) -> Hypervector:
        return Hypervector(self.matrix[index], self.dim)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Codebook):
            return NotImplemented
        return (self.kind == other.kind and self.dim == other.dim and self.seed == other.seed
                and np.array_equal(self.matrix, other.matrix))

    @property
    def entries(self) -> List[Hypervector]:
        return [self[i] for i in range(len(self))]

    def save(self, path: Union[str, Path]) -> None:
        """Write the binary codebook snapshot"""
        header = _CODEBOOK_HEADER.pack(CODEBOOK_MAGIC, CODEBOOK_VERSION, self.dim, self.kind.value,
                                       len(self), self.levels, self.seed & 0xFFFFFFFFFFFFFFFF)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as f:
            f.write(header)
            f.write(np.ascontiguousarray(self.matrix, dtype=WORD_DTYPE).tobytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'Codebook':
        with open(path, 'rb') as f:
            raw = f.read()
        if len(raw) < _CODEBOOK_HEADER.size:
            raise InputError(f"Codebook snapshot {path} is truncated")
        magic, version, dim, kind, count, levels, seed = _CODEBOOK_HEADER.unpack_from(raw)
        if magic != CODEBOOK_MAGIC or version != CODEBOOK_VERSION:
            raise InputError(f"{path} is not a version {CODEBOOK_VERSION} codebook snapshot")
        words = dim // WORD_BITS
        body = raw[_CODEBOOK_HEADER.size:]
        if len(body) != count * words * 8:
            raise InputError(f"Codebook snapshot {path}: expected {count} entries of D={dim}")
        matrix = np.frombuffer(body, dtype=WORD_DTYPE).reshape(count, words).copy()
        return cls(CodebookKind(kind), matrix, dim, seed, levels)


def make_id_codebook(size: int, seed: int, dim: int = DEFAULT_DIM) -> Codebook:
    """Near-orthogonal random codebook of `size` entries"""
    if size < 1:
        raise ConfigError(f"ID codebook needs at least one entry, got {size}")
    matrix = pack_rows((random_hv(seed, i, dim) for i in range(size)), dim)
    return Codebook(CodebookKind.ID, matrix, dim, seed)


def make_level_codebook(levels: int, seed: int, dim: int = DEFAULT_DIM) -> Codebook:
    """
    Level codebook built by cumulative block flipping

    Entry 0 is random; entry k flips a fresh block of floor(D/2/(levels-1))
    positions of entry k-1, so distance(L_i, L_j) = |i-j| * block.

    Args:
        levels: Number of quantization levels, 2 <= levels <= D/2 + 1
        seed: 64-bit codebook seed
        dim: Hypervector dimension

    Returns:
        LEVEL codebook
    """
    check_dim(dim)
    if not 2 <= levels <= dim // 2 + 1:
        raise ConfigError(f"levels must be in [2, {dim // 2 + 1}] for D={dim}, got {levels}")
    block = (dim // 2) // (levels - 1)
    order = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, _LEVEL_PERMUTATION_STREAM, dim]).permutation(dim)

    bits = random_hv(seed, 0, dim).to_bits()
    rows = np.empty((levels, dim), dtype=np.uint8)
    rows[0] = bits
    for k in range(1, levels):
        flip = order[(k - 1) * block:k * block]
        bits = bits.copy()
        bits[flip] ^= 1
        rows[k] = bits
    matrix = np.packbits(rows, axis=1, bitorder='little').view(WORD_DTYPE)
    return Codebook(CodebookKind.LEVEL, np.ascontiguousarray(matrix), dim, seed, levels)

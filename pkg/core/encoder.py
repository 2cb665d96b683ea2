"""
Spectrum -> hypervector encoding (ID-Level) and precursor bucketing
"""

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from core.errors import ConfigError, InputError, InvariantError
from core.hdc_core import (DEFAULT_DIM, WORD_BITS, WORD_DTYPE, Accumulator, Codebook, CodebookKind,
                           Hypervector, bundle, check_dim, hamming_rows, make_id_codebook,
                           make_level_codebook, random_hv, unpack_rows)
from core.spectra_io import Spectrum

logger = logging.getLogger(__name__)

MAX_ID_BINS = 65536

HV_DUMP_MAGIC = b'HVDM'
HV_DUMP_VERSION = 1
_HV_DUMP_HEADER = struct.Struct('<4sHII')


@dataclass(frozen=True)
class BucketParams:
    m_q: float = 1.00794
    d_c: float = 1.0005079


@dataclass(frozen=True)
class EncoderConfig:
    mz_bin_width: float = 1.0005079
    mz_low: float = 200.0
    mz_high: float = 2000.0
    intensity_levels: int = 64
    dim: int = DEFAULT_DIM
    id_seed: int = 1
    level_seed: int = 2
    tie_seed: int = 3

    def __post_init__(self):
        check_dim(self.dim)
        if self.mz_bin_width <= 0 or not self.mz_low < self.mz_high:
            raise ConfigError("Encoder needs mz_bin_width > 0 and mz_low < mz_high")
        if self.n_id_bins > MAX_ID_BINS:
            raise ConfigError(f"{self.n_id_bins} m/z bins exceed the limit of {MAX_ID_BINS}")
        if not 2 <= self.intensity_levels <= self.dim // 2 + 1:
            raise ConfigError(f"intensity_levels must be in [2, {self.dim // 2 + 1}], got {self.intensity_levels}")

    @property
    def n_id_bins(self) -> int:
        return int(math.ceil((self.mz_high - self.mz_low) / self.mz_bin_width))


def bucket_of(s: Spectrum, p: BucketParams = BucketParams()) -> int:
    """
    Precursor bucket: floor((precursor_mz - m_q) * charge / d_c)

    Raises:
        InputError: precursor m/z below the charge-carrier mass
    """
    return bucket_of_precursor(s.precursor_mz, s.charge, p)


def bucket_of_precursor(precursor_mz: float, charge: int, p: BucketParams = BucketParams()) -> int:
    if charge < 1:
        raise InputError(f"Charge must be >= 1, got {charge}")
    if precursor_mz < p.m_q:
        raise InputError(f"Nonphysical precursor m/z {precursor_mz} < charge mass {p.m_q}")
    return int(math.floor((precursor_mz - p.m_q) * charge / p.d_c))


def build_codebooks(cfg: EncoderConfig) -> Tuple[Codebook, Codebook]:
    """ID and Level codebooks for an encoder configuration"""
    id_cb = make_id_codebook(cfg.n_id_bins, cfg.id_seed, cfg.dim)
    level_cb = make_level_codebook(cfg.intensity_levels, cfg.level_seed, cfg.dim)
    return id_cb, level_cb


def _peak_indices(s: Spectrum, cfg: EncoderConfig) -> Tuple[np.ndarray, np.ndarray]:
    mz = s.mz_array
    intensity = s.intensity_array
    if mz.size == 0:
        raise InvariantError(f"Spectrum '{s.id}' has no peaks to encode")
    if np.any(mz < cfg.mz_low) or np.any(mz >= cfg.mz_high):
        raise InvariantError(f"Spectrum '{s.id}' has peaks outside [{cfg.mz_low}, {cfg.mz_high}); "
                             f"it was not preprocessed with the encoder window")
    if np.any(intensity < 0) or np.any(intensity > 1.0):
        raise InvariantError(f"Spectrum '{s.id}' intensities are not unit-normalized")
    ids = np.minimum(np.floor((mz - cfg.mz_low) / cfg.mz_bin_width).astype(np.int64), cfg.n_id_bins - 1)
    levels = np.floor(intensity * (cfg.intensity_levels - 1) + 0.5).astype(np.int64)
    return ids, levels


def encode_spectrum(s: Spectrum, cfg: EncoderConfig, id_cb: Codebook, level_cb: Codebook,
                    tie_breaker: Hypervector = None) -> Hypervector:
    """
    h = Majority(sum over peaks of ID[bin(mz)] XOR Level[level(intensity)])

    Args:
        s: Preprocessed spectrum
        cfg: Encoder configuration the codebooks were built from
        id_cb: ID codebook, one entry per m/z bin
        level_cb: Level codebook, one entry per intensity level
        tie_breaker: Majority tie-breaker; defaults to the seeded one from cfg

    Returns:
        Binary spectrum hypervector
    """
    if id_cb.kind is not CodebookKind.ID or level_cb.kind is not CodebookKind.LEVEL:
        raise ConfigError("encode_spectrum needs an ID codebook and a LEVEL codebook")
    if len(id_cb) != cfg.n_id_bins or len(level_cb) != cfg.intensity_levels or id_cb.dim != cfg.dim:
        raise ConfigError("Codebooks do not match the encoder configuration")
    if tie_breaker is None:
        tie_breaker = random_hv(cfg.tie_seed, 0, cfg.dim)

    ids, levels = _peak_indices(s, cfg)
    bound = id_cb.matrix[ids] ^ level_cb.matrix[levels]
    acc = Accumulator(cfg.dim).add_bits(unpack_rows(bound))
    return bundle(acc, tie_breaker)


class SpectrumEncoder:
    """Encoder bound to one configuration and its codebooks"""

    def __init__(self, cfg: EncoderConfig, id_cb: Codebook = None, level_cb: Codebook = None):
        self.cfg = cfg
        if id_cb is None or level_cb is None:
            id_cb, level_cb = build_codebooks(cfg)
        self.id_cb = id_cb
        self.level_cb = level_cb
        self.tie_breaker = random_hv(cfg.tie_seed, 0, cfg.dim)

    def encode(self, s: Spectrum) -> Hypervector:
        return encode_spectrum(s, self.cfg, self.id_cb, self.level_cb, self.tie_breaker)

    def encode_many(self, spectra: Iterable[Spectrum]) -> List[Hypervector]:
        return [self.encode(s) for s in spectra]


def estimate_link_threshold(hvs: Sequence[Hypervector], labels: Sequence[str]) -> Tuple[int, float, float]:
    """
    Midpoint of the mean intra-label and mean inter-label distances (all pairs)

    Returns:
        (threshold, intra_mean, inter_mean)
    """
    if len(hvs) != len(labels) or len(hvs) < 2:
        raise InputError("Need at least two labeled hypervectors")
    matrix = np.vstack([hv.words for hv in hvs])
    labels = np.asarray(labels)
    intra_sum = inter_sum = 0.0
    intra_n = inter_n = 0
    for i in range(len(hvs) - 1):
        d = hamming_rows(matrix[i + 1:], hvs[i])
        same = labels[i + 1:] == labels[i]
        intra_sum += float(d[same].sum())
        intra_n += int(same.sum())
        inter_sum += float(d[~same].sum())
        inter_n += int((~same).sum())
    if not intra_n or not inter_n:
        raise InputError("Need both same-label and different-label pairs")
    intra_mean, inter_mean = intra_sum / intra_n, inter_sum / inter_n
    return int((intra_mean + inter_mean) // 2), intra_mean, inter_mean


def write_hv_dump(path: Union[str, Path], rows: np.ndarray, dim: int) -> None:
    """Binary HV dump: header (magic, version, D, count) then packed little-endian rows"""
    rows = np.ascontiguousarray(rows, dtype=WORD_DTYPE).reshape(-1, dim // WORD_BITS)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(_HV_DUMP_HEADER.pack(HV_DUMP_MAGIC, HV_DUMP_VERSION, dim, rows.shape[0]))
        f.write(rows.tobytes())


def read_hv_dump(path: Union[str, Path]) -> Tuple[int, np.ndarray]:
    """
    Returns:
        (D, rows) with rows an (N, D/64) uint64 matrix
    """
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < _HV_DUMP_HEADER.size:
        raise InputError(f"HV dump {path} is truncated")
    magic, version, dim, count = _HV_DUMP_HEADER.unpack_from(raw)
    if magic != HV_DUMP_MAGIC or version != HV_DUMP_VERSION:
        raise InputError(f"{path} is not a version {HV_DUMP_VERSION} HV dump")
    body = raw[_HV_DUMP_HEADER.size:]
    words = dim // WORD_BITS
    if len(body) != count * words * 8:
        raise InputError(f"HV dump {path}: expected {count} rows of D={dim}")
    return dim, np.frombuffer(body, dtype=WORD_DTYPE).reshape(count, words).copy()

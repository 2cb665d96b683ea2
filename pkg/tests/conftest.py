"""
Shared fixtures and builders for the camspec test suite
"""

import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pytest

from config.settings import RunConfig, load_settings
from core.cam_sim import CurrentModel, DeviceParams
from core.cluster_engine import ClusterEngine, ClusterRecord, ThresholdModel
from core.hdc_core import Accumulator, Hypervector, random_hv
from core.scheduler import QueryRecord, Scheduler, SchedulerConfig, SchedulerMode
from core.spectra_io import Peak, Spectrum

ARRAY_BITS = 128 * 128


def make_config(**overrides) -> RunConfig:
    """RunConfig from defaults plus overrides, ignoring the process environment"""
    return RunConfig.from_settings(load_settings(None, overrides, environ={}))


def flip(hv: Hypervector, n: int, seed: int = 0) -> Hypervector:
    """Copy of hv with exactly n distinct bits flipped"""
    bits = hv.to_bits().copy()
    positions = np.random.default_rng(seed).choice(hv.dim, size=n, replace=False)
    bits[positions] ^= 1
    return Hypervector.from_bits(bits)


def make_engine(bucket_rows: Dict[int, int], dim: int = 128, seed: int = 7, threshold: int = 10,
                rewrite_period: float = math.inf) -> ClusterEngine:
    """Engine whose bucket b holds bucket_rows[b] random single-member clusters"""
    tie = random_hv(seed, 10 ** 6, dim)
    engine = ClusterEngine(dim, ThresholdModel({}, threshold, dim=dim), tie, rewrite_period)
    for b, n in bucket_rows.items():
        for c in range(n):
            hv = random_hv(seed + b, c, dim)
            engine.add_record(ClusterRecord(c, b, hv, Accumulator.of([hv], dim), member_ids=[f"s{b}.{c}"]))
    return engine


def make_scheduler(engine: ClusterEngine, arrays: int = 1024, mode: SchedulerMode = SchedulerMode.PARALLEL,
                   cache_rows: int = 2 ** 20, model: Optional[CurrentModel] = None) -> Scheduler:
    config = SchedulerConfig(mode=mode, cam_capacity_bits=arrays * ARRAY_BITS, cache_capacity_rows=cache_rows)
    return Scheduler(engine, engine.dim, DeviceParams(), model or CurrentModel(), config)


def matching_queries(engine: ClusterEngine, buckets: Sequence[int], start: int = 0) -> List[QueryRecord]:
    """One query per listed bucket, equal to that bucket's cluster 0 consensus"""
    return [QueryRecord(f"q{i}", b, engine.records[b][0].consensus, start + i) for i, b in enumerate(buckets)]


def spectrum(peaks, spectrum_id='s1', precursor_mz=500.0, charge=2, label=None) -> Spectrum:
    return Spectrum(spectrum_id, precursor_mz, charge, tuple(Peak(mz, i) for mz, i in peaks), label)


@pytest.fixture
def device() -> DeviceParams:
    return DeviceParams()


@pytest.fixture
def small_config_file(tmp_path: Path) -> Path:
    """Zero-noise synthetic set of 10 peptides x 5 spectra"""
    path = tmp_path / 'camspec.env'
    path.write_text(
        "SYN_PEPTIDES=10\n"
        "SYN_SPECTRA_PER_PEPTIDE=5\n"
        "SYN_DROPOUT=0.0\n"
        "SYN_MZ_JITTER=0.0\n"
        "SYN_INTENSITY_JITTER=0.0\n"
        "REWRITE_PERIOD=inf\n",
        encoding='utf-8',
    )
    return path

"""
Benchmark harness: energy checks, Phase-I fraction sweeps, matched-point quality and speedup breakdown
"""

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from cli.pipeline import cluster_buckets, encode_batch, phase_one_membership, run_experiment, triples
from config.settings import RunConfig
from core.cam_sim import EnergyLatencyLedger, dry_run_search, dry_run_write, lta_select
from core.encoder import SpectrumEncoder
from core.metrics import quality_metrics
from core.spectra_io import Spectrum, generate_synthetic

logger = logging.getLogger(__name__)

# Published per-query search energies and the row counts they correspond to
SEARCH_REFERENCES_NJ = ((882, 1.29), (727924, 1064.43))
SETUP_REFERENCE_MJ = 1.19

DEFAULT_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_SLACKS = (0.8, 1.0, 1.2)
DEFAULT_LINK_THRESHOLDS = tuple(range(100, 1101, 50))


def bench_energy(config: RunConfig) -> pd.DataFrame:
    """Dry-run setup write energy and per-query search energy against the published figures"""
    rows = []
    base, extra = divmod(config.dry_run_rows, config.dry_run_buckets)
    ledger = EnergyLatencyLedger(config.device)
    dry_run_write([base + 1] * extra + [base] * (config.dry_run_buckets - extra), config.dim, ledger)
    modeled = ledger.write_fj / 1e12
    rows.append({'check': f'setup_write_{config.dry_run_rows}_rows', 'unit': 'mJ', 'modeled': modeled,
                 'reference': SETUP_REFERENCE_MJ, 'deviation': modeled / SETUP_REFERENCE_MJ - 1.0})
    for n_rows, reference in SEARCH_REFERENCES_NJ:
        ledger = EnergyLatencyLedger(config.device)
        dry_run_search(n_rows, config.dim, ledger)
        modeled = ledger.search_fj / 1e6
        rows.append({'check': f'search_{n_rows}_rows', 'unit': 'nJ', 'modeled': modeled,
                     'reference': reference, 'deviation': modeled / reference - 1.0})
    return pd.DataFrame(rows)


def bench_lta(trials: int = 10000, seed: int = 2024, max_rows: int = 256) -> pd.DataFrame:
    """Agreement of the LTA tree with a linear-scan argmin (smaller index wins ties)"""
    rng = np.random.default_rng(seed)
    agree = 0
    for _ in range(trials):
        n = int(rng.integers(1, max_rows + 1))
        currents = rng.integers(0, 64, n).astype(np.float64)
        winner, _ = lta_select(list(enumerate(currents)))
        agree += winner == int(np.argmin(currents))
    return pd.DataFrame([{'trials': trials, 'agreement': agree / trials}])


def bench_sweep(config: RunConfig, fractions: Sequence[float] = DEFAULT_FRACTIONS,
                slacks: Sequence[float] = DEFAULT_SLACKS) -> pd.DataFrame:
    """
    Clustered vs incorrect ratio for each Phase-I fraction and threshold slack

    The fraction-1.0 row is the full-clustering oracle itself.
    """
    spectra = generate_synthetic(config.synthetic)
    rows = []
    oracle_point = None
    for slack in slacks:
        run_cfg = replace(config, threshold_slack=slack)
        for fraction in fractions:
            result = run_experiment(spectra, run_cfg, fraction=fraction, with_oracle=oracle_point is None)
            if result.oracle_membership is not None:
                oracle_point = quality_metrics(result.oracle_membership, result.labels)
            quality = quality_metrics(result.membership, result.labels)
            rows.append({'clustering': 'expansion', 'initial_fraction': fraction, 'slack': slack,
                         'clustered_spectra_ratio': quality.clustered_spectra_ratio,
                         'incorrect_clustering_ratio': quality.incorrect_clustering_ratio})
            logger.info("Sweep fraction=%.2f slack=%.2f: clustered %.4f incorrect %.4f", fraction, slack,
                        quality.clustered_spectra_ratio, quality.incorrect_clustering_ratio)
    if oracle_point is not None:
        rows.append({'clustering': 'oracle', 'initial_fraction': 1.0, 'slack': math.nan,
                     'clustered_spectra_ratio': oracle_point.clustered_spectra_ratio,
                     'incorrect_clustering_ratio': oracle_point.incorrect_clustering_ratio})
    return pd.DataFrame(rows)


def oracle_threshold_sweep(spectra: Sequence[Spectrum], config: RunConfig,
                           link_thresholds: Sequence[int] = DEFAULT_LINK_THRESHOLDS) -> pd.DataFrame:
    """Full clustering of all spectra at each link threshold: clustered vs incorrect ratio"""
    encoder = SpectrumEncoder(config.encoder)
    encoded, _ = encode_batch(spectra, config, encoder)
    labels = {e.id: e.spectrum.label for e in encoded if e.spectrum.label is not None}
    rows = []
    for threshold in link_thresholds:
        membership = phase_one_membership(cluster_buckets(triples(encoded), threshold, encoder.tie_breaker))
        quality = quality_metrics(membership, labels)
        rows.append({'link_threshold': threshold,
                     'clustered_spectra_ratio': quality.clustered_spectra_ratio,
                     'incorrect_clustering_ratio': quality.incorrect_clustering_ratio})
    return pd.DataFrame(rows)


def incorrect_at(sweep: pd.DataFrame, clustered_ratio: float) -> Tuple[float, bool]:
    """
    Incorrect ratio of a threshold sweep, linearly interpolated at a clustered ratio

    Sweep points sharing a clustered ratio are averaged first.

    Returns:
        (interpolated incorrect ratio, whether clustered_ratio lies inside the swept range)
    """
    curve = (sweep.groupby('clustered_spectra_ratio', as_index=False)['incorrect_clustering_ratio'].mean()
             .sort_values('clustered_spectra_ratio'))
    xs = curve['clustered_spectra_ratio'].to_numpy()
    ys = curve['incorrect_clustering_ratio'].to_numpy()
    inside = bool(xs[0] <= clustered_ratio <= xs[-1])
    if not inside:
        logger.warning("Clustered ratio %.4f outside the swept range [%.4f, %.4f]; clamping",
                       clustered_ratio, xs[0], xs[-1])
    return float(np.interp(clustered_ratio, xs, ys)), inside


@dataclass
class MatchedPoint:
    """Expansion quality against the full-clustering oracle at the same clustered ratio"""

    clustered_spectra_ratio: float
    expansion_incorrect: float
    oracle_incorrect: float
    in_range: bool
    sweep: pd.DataFrame

    @property
    def delta(self) -> float:
        return self.expansion_incorrect - self.oracle_incorrect


def matched_operating_point(config: RunConfig, spectra: Optional[Sequence[Spectrum]] = None,
                            link_thresholds: Sequence[int] = DEFAULT_LINK_THRESHOLDS) -> MatchedPoint:
    """
    Run the expansion once, then sweep the oracle's link threshold and read its incorrect ratio
    at the expansion's clustered ratio
    """
    spectra = generate_synthetic(config.synthetic) if spectra is None else spectra
    result = run_experiment(spectra, config, with_oracle=False)
    expansion = quality_metrics(result.membership, result.labels)
    sweep = oracle_threshold_sweep(spectra, config, link_thresholds)
    oracle_incorrect, inside = incorrect_at(sweep, expansion.clustered_spectra_ratio)
    logger.info("Matched at clustered %.4f: expansion incorrect %.4f, oracle incorrect %.4f",
                expansion.clustered_spectra_ratio, expansion.incorrect_clustering_ratio, oracle_incorrect)
    return MatchedPoint(expansion.clustered_spectra_ratio, expansion.incorrect_clustering_ratio,
                        oracle_incorrect, inside, sweep)


def bench_matched(config: RunConfig) -> pd.DataFrame:
    point = matched_operating_point(config)
    rows = [{'clustering': 'oracle', 'link_threshold': row.link_threshold,
             'clustered_spectra_ratio': row.clustered_spectra_ratio,
             'incorrect_clustering_ratio': row.incorrect_clustering_ratio}
            for row in point.sweep.itertuples(index=False)]
    rows.append({'clustering': 'oracle_matched', 'link_threshold': math.nan,
                 'clustered_spectra_ratio': point.clustered_spectra_ratio,
                 'incorrect_clustering_ratio': point.oracle_incorrect})
    rows.append({'clustering': 'expansion', 'link_threshold': config.link_threshold,
                 'clustered_spectra_ratio': point.clustered_spectra_ratio,
                 'incorrect_clustering_ratio': point.expansion_incorrect})
    return pd.DataFrame(rows)


def bench_speedup(config: RunConfig) -> pd.DataFrame:
    """Separate contributions of cluster expansion and bucket parallelism on one workload"""
    spectra = generate_synthetic(config.synthetic)
    result = run_experiment(spectra, config)
    metrics = result.metrics()
    parallel = metrics['parallel_speedup']
    incremental = metrics['incremental_speedup']
    rows = [
        {'source': 'bucket_parallelism', 'baseline_ns': parallel['serial_dispatch_ns'],
         'camspec_ns': parallel['parallel_dispatch_ns'], 'speedup': parallel['speedup'],
         'note': f"mean concurrency {parallel['mean_concurrency']:.2f}"},
        {'source': 'cluster_expansion', 'baseline_ns': incremental['full_recluster_ns'],
         'camspec_ns': incremental['expansion_ns'], 'speedup': incremental['speedup'],
         'note': f"{incremental['expansion_row_writes']} expansion writes"},
    ]
    if metrics.get('overlap'):
        rows.append({'source': 'overlap_with_oracle', 'baseline_ns': math.nan, 'camspec_ns': math.nan,
                     'speedup': math.nan, 'note': f"{metrics['overlap']['overlap']:.4f}"})
    return pd.DataFrame(rows)


BENCHES = ('energy', 'lta', 'sweep', 'matched', 'speedup')


def cmd_bench(kind: str, config: RunConfig, out: Optional[Path] = None) -> Dict[str, pd.DataFrame]:
    """Run one benchmark (or 'all'), print its table and save it as CSV under <out>/bench"""
    selected = BENCHES if kind == 'all' else (kind,)
    tables = {}
    for name in selected:
        if name == 'energy':
            tables[name] = bench_energy(config)
        elif name == 'lta':
            tables[name] = bench_lta(seed=config.seed)
        elif name == 'sweep':
            tables[name] = bench_sweep(config)
        elif name == 'matched':
            tables[name] = bench_matched(config)
        elif name == 'speedup':
            tables[name] = bench_speedup(config)
        print(f"\n{name.upper()}")
        print("=" * 60)
        print(tables[name].to_string(index=False))
    if out is not None:
        bench_dir = out / 'bench'
        bench_dir.mkdir(parents=True, exist_ok=True)
        for name, table in tables.items():
            table.to_csv(bench_dir / f"{name}.csv", index=False)
        print(f"\n[OK] Benchmark tables written to {bench_dir}")
    return tables

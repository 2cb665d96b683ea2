"""
End-to-end pipeline: synthetic data, Phase-I setup snapshots and Phase-III runs
"""

import logging
import re
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import RunConfig
from core.cam_sim import EnergyLatencyLedger, dry_run_search, dry_run_write
from core.cluster_engine import (BucketStats, ClusterEngine, ClusterRecord, PhaseOneResult, ThresholdModel,
                                 compare_speedup, fit_threshold, initial_cluster)
from core.encoder import BucketParams, EncoderConfig, SpectrumEncoder, bucket_of, read_hv_dump, write_hv_dump
from core.errors import ConfigError, InputError, TraceDivergence
from core.hdc_core import Accumulator, Codebook, Hypervector, pack_rows
from core.metrics import overlap, quality_metrics
from core.scheduler import CycleReport, Scheduler
from core.spectra_io import (PreprocessConfig, Spectrum, generate_synthetic, preprocess_all, save_jsonl,
                             save_labels, save_mgf, split_spectra)
from core.trace_log import JsonlWriter, first_divergence, read_json, read_jsonl, write_json, write_jsonl
from parsers.mgf_parser import load_labels, parse_mgf_file

logger = logging.getLogger(__name__)

SNAPSHOT_FORMAT = 1
_VERSION_DIR = re.compile(r'^v(\d+)$')


def _versions(root: Path) -> List[int]:
    if not root.is_dir():
        return []
    return sorted(int(m.group(1)) for p in root.iterdir() if p.is_dir() and (m := _VERSION_DIR.match(p.name)))


def next_version_dir(root: Path) -> Path:
    """New `v<N>` directory under root; existing versions are never reused"""
    versions = _versions(root)
    path = root / f"v{(versions[-1] + 1) if versions else 1}"
    try:
        path.mkdir(parents=True)
    except OSError as e:
        raise InputError(f"Cannot create output directory {path}: {e}")
    return path


def latest_version_dir(root: Path) -> Path:
    versions = _versions(root)
    if not versions:
        raise InputError(f"No versions found under {root}")
    return root / f"v{versions[-1]}"


@dataclass(frozen=True)
class EncodedSpectrum:
    spectrum: Spectrum
    bucket_id: int
    hv: Hypervector

    @property
    def id(self) -> str:
        return self.spectrum.id


def encode_batch(spectra: Sequence[Spectrum], config: RunConfig,
                 encoder: SpectrumEncoder) -> Tuple[List[EncodedSpectrum], int]:
    """
    Preprocess, bucket and encode spectra in arrival order

    Returns:
        (encoded spectra, number rejected)
    """
    kept, rejected = preprocess_all(spectra, config.preprocess)
    encoded = []
    n_rejected = len(rejected)
    for s in kept:
        try:
            bucket = bucket_of(s, config.bucket)
        except InputError as e:
            logger.warning("Spectrum '%s' rejected: %s", s.id, e)
            n_rejected += 1
            continue
        encoded.append(EncodedSpectrum(s, bucket, encoder.encode(s)))
    return encoded, n_rejected


def group_by_bucket(encoded: Sequence[EncodedSpectrum]) -> 'OrderedDict[int, List[EncodedSpectrum]]':
    groups: Dict[int, List[EncodedSpectrum]] = {}
    for e in encoded:
        groups.setdefault(e.bucket_id, []).append(e)
    return OrderedDict(sorted(groups.items()))


def cluster_buckets(items: Sequence[Tuple[str, int, Hypervector]], link_threshold: int,
                    tie_breaker: Hypervector) -> List[PhaseOneResult]:
    """Greedy leader clustering of every bucket over (spectrum id, bucket, hv) triples in arrival order"""
    groups: Dict[int, List[Tuple[str, Hypervector]]] = {}
    for spectrum_id, bucket_id, hv in items:
        groups.setdefault(bucket_id, []).append((spectrum_id, hv))
    return [initial_cluster(b, members, link_threshold, tie_breaker) for b, members in sorted(groups.items())]


def triples(encoded: Sequence[EncodedSpectrum]) -> List[Tuple[str, int, Hypervector]]:
    return [(e.id, e.bucket_id, e.hv) for e in encoded]


def phase_one(encoded: Sequence[EncodedSpectrum], config: RunConfig,
              tie_breaker: Hypervector) -> Tuple[List[PhaseOneResult], ThresholdModel]:
    results = cluster_buckets(triples(encoded), config.link_threshold, tie_breaker)
    thresholds = fit_threshold({r.stats.bucket_id: r.stats for r in results}, config.threshold_percentile,
                               config.threshold_slack, config.dim, config.min_clusters_for_bucket_threshold)
    n_clusters = sum(len(r.records) for r in results)
    logger.info("Phase-I: %d spectra in %d buckets formed %d clusters", len(encoded), len(results), n_clusters)
    return results, thresholds


def setup_ledger(results: Sequence[PhaseOneResult], config: RunConfig) -> EnergyLatencyLedger:
    """Cost of writing every Phase-I consensus row into CAM"""
    ledger = EnergyLatencyLedger(config.device)
    dry_run_write([len(r.records) for r in results], config.dim, ledger)
    return ledger


def build_engine(results: Sequence[PhaseOneResult], thresholds: ThresholdModel, config: RunConfig,
                 tie_breaker: Hypervector) -> ClusterEngine:
    engine = ClusterEngine(config.dim, thresholds, tie_breaker, config.rewrite_period)
    for r in results:
        engine.add_phase_one(r)
    return engine


def run_queries(engine: ClusterEngine, queries: Sequence[EncodedSpectrum], config: RunConfig,
                on_cycle: Optional[Callable[[CycleReport], None]] = None) -> Scheduler:
    """Phase-III: admit, initial residency, then cycle until every FIFO drains"""
    scheduler = Scheduler(engine, config.dim, config.device, config.current_model(), config.scheduler,
                          on_cycle=on_cycle)
    scheduler.admit(scheduler.make_queries((q.id, q.bucket_id, q.hv) for q in queries))
    scheduler.prime()
    scheduler.run()
    return scheduler


def phase_one_membership(results: Sequence[PhaseOneResult]) -> Dict[str, Tuple[int, int]]:
    return {sid: (r.stats.bucket_id, cid) for r in results for sid, cid in r.membership.items()}


@dataclass
class ExperimentResult:
    """In-memory outcome of Phase-I on a prefix plus Phase-III on the rest"""

    engine: ClusterEngine
    scheduler: Scheduler
    setup_ledger: EnergyLatencyLedger
    membership: Dict[str, Tuple[int, int]]
    labels: Dict[str, str]
    n_rejected: int
    oracle_membership: Optional[Dict[str, Tuple[int, int]]] = None

    def metrics(self) -> Dict:
        return evaluate(self.membership, self.oracle_membership, self.labels, self.engine, self.scheduler)


def run_experiment(spectra: Sequence[Spectrum], config: RunConfig, fraction: Optional[float] = None,
                   with_oracle: bool = True) -> ExperimentResult:
    """
    Split spectra in arrival order, cluster the prefix, stream the rest through the CAM

    Args:
        spectra: Labeled or unlabeled spectra in arrival order
        config: Run configuration
        fraction: Phase-I share; defaults to config.initial_fraction
        with_oracle: Also cluster all spectra at once for comparison

    Returns:
        ExperimentResult
    """
    encoder = SpectrumEncoder(config.encoder)
    encoded, n_rejected = encode_batch(spectra, config, encoder)
    if not encoded:
        raise InputError("All spectra were rejected")
    initial, queries = split_spectra(encoded, config.initial_fraction if fraction is None else fraction)
    results, thresholds = phase_one(initial, config, encoder.tie_breaker)
    engine = build_engine(results, thresholds, config, encoder.tie_breaker)
    scheduler = run_queries(engine, queries, config)
    oracle = None
    if with_oracle:
        oracle = phase_one_membership(cluster_buckets(triples(encoded), config.link_threshold, encoder.tie_breaker))
    labels = {e.id: e.spectrum.label for e in encoded if e.spectrum.label is not None}
    return ExperimentResult(engine, scheduler, setup_ledger(results, config), engine.membership(), labels,
                            n_rejected, oracle)


def evaluate(membership: Dict[str, Tuple[int, int]], oracle: Optional[Dict[str, Tuple[int, int]]],
             labels: Dict[str, str], engine: ClusterEngine, scheduler: Scheduler) -> Dict:
    """metrics.json content: quality, oracle comparison and speedups"""
    result: Dict = {'labels_available': bool(labels)}
    quality = quality_metrics(membership, labels)
    result['expansion'] = quality.to_dict() if quality else None
    if oracle is not None:
        oracle_quality = quality_metrics(oracle, labels)
        result['oracle'] = oracle_quality.to_dict() if oracle_quality else None
        result['overlap'] = overlap(membership, oracle, labels).to_dict() if labels else None
    result['incremental_speedup'] = compare_speedup(engine.workload(), scheduler.device).to_dict()
    result['parallel_speedup'] = {
        'parallel_dispatch_ns': scheduler.parallel_dispatch_ns,
        'serial_dispatch_ns': scheduler.serial_dispatch_ns,
        'speedup': scheduler.parallel_speedup,
        'mean_concurrency': scheduler.mean_concurrency,
    }
    return result


def cmd_gen(config: RunConfig, out: Path, jsonl: bool = False) -> Dict[str, Path]:
    """
    Write a labeled synthetic data set

    Files: spectra.mgf (all), setup.mgf and queries.mgf (split by INITIAL_FRACTION),
    labels.tsv, and spectra.jsonl when requested.
    """
    spectra = generate_synthetic(config.synthetic)
    initial, queries = split_spectra(spectra, config.initial_fraction)
    paths = {
        'spectra': out / 'spectra.mgf',
        'setup': out / 'setup.mgf',
        'queries': out / 'queries.mgf',
        'labels': out / 'labels.tsv',
    }
    try:
        save_mgf(spectra, paths['spectra'])
        save_mgf(initial, paths['setup'])
        save_mgf(queries, paths['queries'])
        save_labels(spectra, paths['labels'])
        if jsonl:
            paths['jsonl'] = out / 'spectra.jsonl'
            save_jsonl(spectra, paths['jsonl'])
    except OSError as e:
        raise InputError(f"Cannot write to {out}: {e}")
    print(f"[OK] Generated {len(spectra)} spectra for {config.synthetic.n_peptides} peptides in {out}")
    return paths


def _load_spectra(mgf: Path, labels_path: Optional[Path]) -> List[Spectrum]:
    spectra, diagnostics = parse_mgf_file(mgf)
    if diagnostics:
        logger.warning("%s: %d malformed blocks skipped", mgf, len(diagnostics))
    if labels_path is not None:
        labels = load_labels(labels_path)
        spectra = [replace(s, label=labels.get(s.id, s.label)) for s in spectra]
    return spectra


def cmd_setup_dry_run(config: RunConfig, out: Path) -> Path:
    """
    Catalog-only setup: price DRY_RUN_ROWS rows over DRY_RUN_BUCKETS buckets without hypervectors
    """
    if config.dry_run_rows < 1 or config.dry_run_buckets < 1:
        raise ConfigError("DRY_RUN_ROWS and DRY_RUN_BUCKETS must be positive")
    base, extra = divmod(config.dry_run_rows, config.dry_run_buckets)
    rows = [base + 1] * extra + [base] * (config.dry_run_buckets - extra)
    ledger = EnergyLatencyLedger(config.device)
    dry_run_write(rows, config.dim, ledger)
    search_ledger = EnergyLatencyLedger(config.device)
    dry_run_search(int(round(config.dry_run_rows / config.dry_run_buckets)), config.dim, search_ledger)

    snapshot = next_version_dir(out / 'snapshot')
    write_json(snapshot / 'ledger.json', ledger.to_dict())
    write_json(snapshot / 'manifest.json', {
        'format': SNAPSHOT_FORMAT,
        'dry_run': True,
        'dim': config.dim,
        'config_hash': config.config_hash(),
        'config': config.to_dict(),
        'rows': config.dry_run_rows,
        'buckets': config.dry_run_buckets,
        'mean_bucket_search': search_ledger.to_dict(),
    })
    print(f"[OK] Dry-run setup of {config.dry_run_rows} rows in {config.dry_run_buckets} buckets")
    print(f"  - Write energy: {ledger.to_dict()['total_energy_mj']:.4f} mJ")
    print(f"  - Search energy per query (mean bucket): {search_ledger.search_fj / 1e6:.4f} nJ")
    print(f"  - Snapshot: {snapshot}")
    return snapshot


def cmd_setup(mgf: Path, config: RunConfig, out: Path, labels_path: Optional[Path] = None) -> Path:
    """
    Phase-I: preprocess, encode, bucket and cluster the setup spectra, then write a snapshot

    Returns:
        The new snapshot directory

    Raises:
        InputError: unparseable input or every spectrum rejected
    """
    spectra = _load_spectra(mgf, labels_path)
    encoder = SpectrumEncoder(config.encoder)
    encoded, n_rejected = encode_batch(spectra, config, encoder)
    if not encoded:
        raise InputError(f"All {len(spectra)} spectra in {mgf} were rejected")
    results, thresholds = phase_one(encoded, config, encoder.tie_breaker)
    ledger = setup_ledger(results, config)
    snapshot = write_snapshot(out, config, encoder, encoded, results, thresholds, ledger, n_rejected, mgf)
    print(f"[OK] Setup snapshot written to {snapshot}")
    print(f"  - Spectra: {len(encoded)} kept, {n_rejected} rejected")
    print(f"  - Buckets: {len(results)}, clusters: {sum(len(r.records) for r in results)}")
    print(f"  - Write energy: {ledger.total_fj / 1e6:.3f} nJ")
    return snapshot


def write_snapshot(out: Path, config: RunConfig, encoder: SpectrumEncoder, encoded: Sequence[EncodedSpectrum],
                   results: Sequence[PhaseOneResult], thresholds: ThresholdModel, ledger: EnergyLatencyLedger,
                   n_rejected: int, source: Path) -> Path:
    snapshot = next_version_dir(out / 'snapshot')
    records = [rec for r in results for rec in r.records]
    write_hv_dump(snapshot / 'consensus.hvd', pack_rows((rec.consensus for rec in records), config.dim), config.dim)
    np.savez_compressed(
        snapshot / 'accumulators.npz',
        buckets=np.array([rec.bucket_id for rec in records], dtype=np.int64),
        clusters=np.array([rec.cluster_id for rec in records], dtype=np.int64),
        counts=np.vstack([rec.accumulator.counts for rec in records]).astype(np.int64),
        totals=np.array([rec.accumulator.total for rec in records], dtype=np.int64),
        pending=np.array([rec.pending_updates for rec in records], dtype=np.int64),
    )

    by_bucket = group_by_bucket(encoded)
    member_rows, member_hvs = [], []
    for r in results:
        members = by_bucket[r.stats.bucket_id]
        for e, distance in zip(members, r.stats.member_distances):
            member_rows.append({'spectrum_id': e.id, 'bucket': r.stats.bucket_id,
                                'cluster': r.membership[e.id], 'label': e.spectrum.label,
                                'distance': int(distance)})
            member_hvs.append(e.hv)
    write_jsonl(snapshot / 'members.jsonl', member_rows)
    write_hv_dump(snapshot / 'members.hvd', pack_rows(member_hvs, config.dim), config.dim)
    encoder.id_cb.save(snapshot / 'id_codebook.hvcb')
    encoder.level_cb.save(snapshot / 'level_codebook.hvcb')

    write_json(snapshot / 'thresholds.json', {
        **thresholds.to_dict(),
        'stats': [{'bucket': r.stats.bucket_id, 'n_clusters': r.stats.n_clusters,
                   'n_spectra': r.stats.n_spectra, 'comparisons': r.stats.comparisons} for r in results],
    })
    write_json(snapshot / 'ledger.json', ledger.to_dict())

    catalog = []
    for b, members in by_bucket.items():
        precursors = [e.spectrum.precursor_mz for e in members]
        catalog.append({'bucket': b, 'spectra': len(members),
                        'rows': next(len(r.records) for r in results if r.stats.bucket_id == b),
                        'precursor_mz_min': min(precursors), 'precursor_mz_max': max(precursors)})
    write_json(snapshot / 'manifest.json', {
        'format': SNAPSHOT_FORMAT,
        'dry_run': False,
        'dim': config.dim,
        'source': str(source),
        'config_hash': config.config_hash(),
        'config': config.to_dict(),
        'spectra': len(encoded),
        'rejected': n_rejected,
        'clusters': len(records),
        'buckets': catalog,
    })
    return snapshot


@dataclass
class Snapshot:
    path: Path
    manifest: Dict
    encoder: SpectrumEncoder
    thresholds: ThresholdModel
    results: List[PhaseOneResult]
    bucket: BucketParams = BucketParams()
    preprocess: PreprocessConfig = PreprocessConfig()
    members: List[Dict] = field(default_factory=list)


def load_snapshot(path: Path, config: RunConfig) -> Snapshot:
    """
    Rebuild Phase-I state from a snapshot directory

    Raises:
        InputError: missing or corrupt files
        ConfigError: the snapshot was built for another D, or is a dry run
    """
    manifest = read_json(path / 'manifest.json')
    if manifest.get('format') != SNAPSHOT_FORMAT:
        raise InputError(f"{path}: unsupported snapshot format {manifest.get('format')}")
    if manifest.get('dry_run'):
        raise ConfigError(f"{path} is a dry-run snapshot without hypervectors")
    if manifest['dim'] != config.dim:
        raise ConfigError(f"Snapshot D={manifest['dim']} does not match configured D={config.dim}")

    enc_cfg = EncoderConfig(**manifest['config']['encoder'])
    id_cb = Codebook.load(path / 'id_codebook.hvcb')
    level_cb = Codebook.load(path / 'level_codebook.hvcb')
    encoder = SpectrumEncoder(enc_cfg, id_cb, level_cb)

    threshold_data = read_json(path / 'thresholds.json')
    thresholds = ThresholdModel.from_dict(threshold_data)
    dim, consensus = read_hv_dump(path / 'consensus.hvd')
    try:
        with np.load(path / 'accumulators.npz') as acc:
            buckets, clusters, counts = acc['buckets'], acc['clusters'], acc['counts']
            totals, pending = acc['totals'], acc['pending']
    except (OSError, KeyError, ValueError) as e:
        raise InputError(f"{path / 'accumulators.npz'}: {e}")
    if not len(buckets) == len(consensus) == len(counts):
        raise InputError(f"{path}: consensus and accumulator counts disagree")

    members = read_jsonl(path / 'members.jsonl')
    member_ids: Dict[Tuple[int, int], List[str]] = {}
    distances: Dict[int, List[int]] = {}
    membership: Dict[int, Dict[str, int]] = {}
    for m in members:
        member_ids.setdefault((m['bucket'], m['cluster']), []).append(m['spectrum_id'])
        distances.setdefault(m['bucket'], []).append(m['distance'])
        membership.setdefault(m['bucket'], {})[m['spectrum_id']] = m['cluster']

    records: Dict[int, List[ClusterRecord]] = {}
    for i in range(len(buckets)):
        b, c = int(buckets[i]), int(clusters[i])
        records.setdefault(b, []).append(ClusterRecord(
            cluster_id=c, bucket_id=b, consensus=Hypervector(consensus[i], dim),
            accumulator=Accumulator(dim, counts[i], int(totals[i])), members=int(totals[i]),
            pending_updates=int(pending[i]), member_ids=member_ids.get((b, c), []),
        ))
    stats_by_bucket = {s['bucket']: s for s in threshold_data['stats']}
    results = []
    for b in sorted(records):
        s = stats_by_bucket[b]
        stats = BucketStats(b, np.array(distances.get(b, []), dtype=np.int64), s['n_clusters'], s['n_spectra'],
                            s['comparisons'])
        results.append(PhaseOneResult(records[b], stats, membership.get(b, {})))
    bucket = BucketParams(**manifest['config']['bucket'])
    preprocess = PreprocessConfig(**manifest['config']['preprocess'])
    return Snapshot(path, manifest, encoder, thresholds, results, bucket, preprocess, members)


def snapshot_encoding(snapshot: Snapshot, config: RunConfig) -> RunConfig:
    """Run config with the snapshot's bucketing and preprocessing, so queries land in the stored buckets"""
    if (config.bucket, config.preprocess) != (snapshot.bucket, snapshot.preprocess):
        logger.warning("Run config bucketing/preprocessing differs from snapshot %s; using the snapshot's",
                       snapshot.path)
    return replace(config, bucket=snapshot.bucket, preprocess=snapshot.preprocess)


def cmd_run(snapshot_path: Path, queries_mgf: Path, config: RunConfig, out: Path,
            labels_path: Optional[Path] = None) -> Path:
    """
    Phase-III over a snapshot: stream queries through the scheduler and write the run directory

    Returns:
        The new run directory
    """
    snapshot = load_snapshot(snapshot_path, config)
    spectra = _load_spectra(queries_mgf, labels_path)
    queries, n_rejected = encode_batch(spectra, snapshot_encoding(snapshot, config), snapshot.encoder)
    tie_breaker = snapshot.encoder.tie_breaker
    engine = build_engine(snapshot.results, snapshot.thresholds, config, tie_breaker)

    run_dir = next_version_dir(out / 'run')
    with JsonlWriter(run_dir / 'trace.jsonl') as trace:
        scheduler = run_queries(engine, queries, config, on_cycle=lambda r: trace.write(r.to_dict()))

    write_jsonl(run_dir / 'assignments.jsonl', (a.to_dict() for a in engine.assignments))
    labels = {m['spectrum_id']: m['label'] for m in snapshot.members if m.get('label') is not None}
    labels.update({q.id: q.spectrum.label for q in queries if q.spectrum.label is not None})
    membership = engine.membership()
    write_jsonl(run_dir / 'clustering.jsonl', (
        {'spectrum_id': sid, 'bucket': b, 'cluster': c, 'label': labels.get(sid)}
        for sid, (b, c) in sorted(membership.items(), key=lambda kv: (kv[1], kv[0]))
    ))
    write_json(run_dir / 'ledger.json', scheduler.ledger.to_dict())

    oracle = None
    if config.compare_recluster:
        member_hvs = read_hv_dump(snapshot.path / 'members.hvd')[1]
        stored = [(m['spectrum_id'], m['bucket'], Hypervector(member_hvs[i], config.dim))
                  for i, m in enumerate(snapshot.members)]
        oracle = phase_one_membership(cluster_buckets(stored + triples(queries), config.link_threshold,
                                                      tie_breaker))
    metrics = evaluate(membership, oracle, labels, engine, scheduler)
    write_json(run_dir / 'metrics.json', metrics)

    write_json(run_dir / 'run.json', {
        'config_hash': config.config_hash(),
        'config': config.to_dict(),
        'settings': dict(sorted(config.settings.items())),
        'snapshot': str(snapshot_path),
        'snapshot_config_hash': snapshot.manifest['config_hash'],
        'queries': str(queries_mgf),
        'labels': str(labels_path) if labels_path is not None else None,
        'admitted': len(queries),
        'rejected': n_rejected,
        'outcomes': {
            'MATCH': sum(1 for a in engine.assignments if a.outcome.value == 'MATCH'),
            'NEW_CLUSTER': sum(1 for a in engine.assignments if a.outcome.value == 'NEW_CLUSTER'),
        },
        'scheduler': scheduler.summary(),
    })
    print(f"[OK] Run written to {run_dir}")
    print(f"  - Queries: {len(queries)} dispatched in {scheduler.cycle} cycles, {n_rejected} rejected")
    print(f"  - Energy: {scheduler.ledger.total_fj / 1e6:.3f} nJ, latency: {scheduler.ledger.total_ns:.1f} ns")
    if metrics['expansion']:
        print(f"  - Clustered ratio: {metrics['expansion']['clustered_spectra_ratio']:.4f}, "
              f"incorrect ratio: {metrics['expansion']['incorrect_clustering_ratio']:.4f}")
    return run_dir


def replay_cycles(snapshot_path: Path, queries_mgf: Path, config: RunConfig) -> List[Dict]:
    """Re-run Phase-III over a snapshot and return the cycle reports without writing anything"""
    snapshot = load_snapshot(snapshot_path, config)
    spectra, _ = parse_mgf_file(queries_mgf)
    queries, _ = encode_batch(spectra, snapshot_encoding(snapshot, config), snapshot.encoder)
    engine = build_engine(snapshot.results, snapshot.thresholds, config, snapshot.encoder.tie_breaker)
    cycles: List[Dict] = []
    run_queries(engine, queries, config, on_cycle=lambda r: cycles.append(r.to_dict()))
    return cycles


def cmd_verify(run_dir: Path) -> int:
    """
    Replay a run from its recorded settings, snapshot and queries and diff trace.jsonl cycle by cycle

    Returns:
        Number of cycles verified

    Raises:
        InputError: run.json lacks recorded settings
        ConfigError: the recorded settings no longer reproduce the recorded config hash
        TraceDivergence: the first cycle where trace and replay disagree
    """
    run = read_json(run_dir / 'run.json')
    if 'settings' not in run:
        raise InputError(f"{run_dir / 'run.json'} has no recorded settings to replay from")
    config = RunConfig.from_settings(run['settings'])
    if config.config_hash() != run['config_hash']:
        raise ConfigError(f"Recorded settings of {run_dir} no longer hash to {run['config_hash'][:12]}")

    recorded = read_jsonl(run_dir / 'trace.jsonl')
    replayed = replay_cycles(Path(run['snapshot']), Path(run['queries']), config)
    divergence = first_divergence(recorded, replayed)
    if divergence is not None:
        index, fields = divergence
        raise TraceDivergence(str(run_dir / 'trace.jsonl'), index + 1, fields)
    print(f"[OK] {run_dir}: {len(recorded)} cycles replayed identically")
    return len(recorded)

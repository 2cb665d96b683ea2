"""
Phase-I clustering, match/outlier decisions, cluster expansion and consensus upkeep.

Cluster ids are per-bucket counters; the global key of a cluster is
(bucket id, cluster id).
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.cam_sim import (CamBank, DeviceParams, EnergyLatencyLedger, SearchResult, lta_select_rows,
                          rewrite_row, write_rows)
from core.errors import ConfigError, EmptyInputError, InvariantError
from core.hdc_core import WORD_BITS, WORD_DTYPE, Accumulator, Hypervector, bundle, hamming_rows, pack_rows
from core.scheduler import QueryRecord

logger = logging.getLogger(__name__)

NEVER = math.inf


class Outcome(Enum):
    MATCH = 'MATCH'
    NEW_CLUSTER = 'NEW_CLUSTER'


@dataclass
class ClusterRecord:
    """
    One cluster of a bucket

    `consensus` is the row image held in CAM; it equals bundle(accumulator)
    whenever pending_updates is 0.
    """

    cluster_id: int
    bucket_id: int
    consensus: Hypervector
    accumulator: Accumulator
    members: int = 1
    pending_updates: int = 0
    member_ids: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class Assignment:
    spectrum_id: str
    bucket_id: int
    cluster_id: int
    outcome: Outcome
    distance: Optional[int]
    threshold: int

    def to_dict(self) -> Dict:
        return {
            'spectrum_id': self.spectrum_id,
            'bucket': self.bucket_id,
            'cluster': self.cluster_id,
            'outcome': self.outcome.value,
            'distance': self.distance,
            'threshold': self.threshold,
        }


@dataclass
class BucketStats:
    """Phase-I statistics of one bucket"""

    bucket_id: int
    member_distances: np.ndarray
    n_clusters: int
    n_spectra: int
    comparisons: int = 0


@dataclass
class PhaseOneResult:
    records: List[ClusterRecord]
    stats: BucketStats
    membership: Dict[str, int]


def initial_cluster(bucket_id: int, members: Sequence[Tuple[str, Hypervector]], link_threshold: int,
                    tie_breaker: Hypervector) -> PhaseOneResult:
    """
    Greedy leader clustering of one bucket in arrival order

    Each hypervector joins the first cluster whose consensus is within
    `link_threshold`, otherwise it founds a new cluster. The joined cluster's
    consensus is rebundled right away.

    Args:
        bucket_id: Bucket every member belongs to
        members: (spectrum id, hypervector) pairs in arrival order
        link_threshold: Join distance (inclusive)
        tie_breaker: Majority tie-breaker used for every bundle

    Returns:
        Records with consecutive ids from 0, Phase-I statistics
        (member-to-final-consensus distances) and the membership map
    """
    if not members:
        return PhaseOneResult([], BucketStats(bucket_id, np.zeros(0, dtype=np.int64), 0, 0), {})

    dim = members[0][1].dim
    records: List[ClusterRecord] = []
    consensus = np.zeros((len(members), dim // WORD_BITS), dtype=WORD_DTYPE)
    membership: Dict[str, int] = {}
    assigned = np.empty(len(members), dtype=np.int64)
    comparisons = 0

    for pos, (spectrum_id, hv) in enumerate(members):
        n = len(records)
        target = None
        if n:
            d = hamming_rows(consensus[:n], hv)
            hits = np.flatnonzero(d <= link_threshold)
            if hits.size:
                target = int(hits[0])
            comparisons += n if target is None else target + 1
        if target is None:
            target = n
            records.append(ClusterRecord(n, bucket_id, hv, Accumulator.of([hv], dim), member_ids=[spectrum_id]))
        else:
            record = records[target]
            record.accumulator.add(hv)
            record.members += 1
            record.member_ids.append(spectrum_id)
            record.consensus = bundle(record.accumulator, tie_breaker)
        consensus[target] = records[target].consensus.words
        membership[spectrum_id] = target
        assigned[pos] = target

    hvs = pack_rows((hv for _, hv in members), dim)
    distances = np.bitwise_count(hvs ^ consensus[assigned]).sum(axis=1, dtype=np.int64)
    stats = BucketStats(bucket_id, distances, len(records), len(members), comparisons)
    return PhaseOneResult(records, stats, membership)


def nearest_rank_percentile(values: np.ndarray, p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value"""
    values = np.sort(np.asarray(values))
    if values.size == 0:
        raise EmptyInputError("Percentile of an empty distribution")
    rank = max(1, math.ceil(p / 100.0 * values.size))
    return float(values[rank - 1])


@dataclass(frozen=True)
class ThresholdModel:
    """Per-bucket Hamming cutoffs with a pooled fallback"""

    per_bucket: Dict[int, int]
    global_threshold: int
    percentile: float = 95.0
    slack: float = 1.0
    dim: int = 2048

    def threshold_for(self, bucket_id: int) -> int:
        return self.per_bucket.get(bucket_id, self.global_threshold)

    def to_dict(self) -> Dict:
        return {
            'percentile': self.percentile,
            'slack': self.slack,
            'dim': self.dim,
            'global_threshold': self.global_threshold,
            'per_bucket': {str(b): t for b, t in sorted(self.per_bucket.items())},
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'ThresholdModel':
        return cls(per_bucket={int(b): int(t) for b, t in data['per_bucket'].items()},
                   global_threshold=int(data['global_threshold']), percentile=float(data['percentile']),
                   slack=float(data['slack']), dim=int(data['dim']))


def fit_threshold(stats: Dict[int, BucketStats], percentile: float = 95.0, slack: float = 1.0,
                  dim: int = 2048, min_clusters: int = 3) -> ThresholdModel:
    """
    tau_b = floor(slack * p-th percentile of member-to-consensus distances), clamped to [1, D-1]

    Buckets with fewer than `min_clusters` clusters use the threshold of the
    pooled distribution over all buckets.

    Raises:
        EmptyInputError: no Phase-I statistics at all
    """
    if not 0 < percentile <= 100:
        raise ConfigError(f"Threshold percentile must be in (0, 100], got {percentile}")
    if slack <= 0:
        raise ConfigError(f"Threshold slack must be positive, got {slack}")
    populated = [s for s in stats.values() if s.member_distances.size]
    if not populated:
        raise EmptyInputError("Threshold fitting needs Phase-I statistics")

    def cutoff(distances: np.ndarray) -> int:
        value = math.floor(slack * nearest_rank_percentile(distances, percentile))
        return int(min(max(value, 1), dim - 1))

    pooled = cutoff(np.concatenate([s.member_distances for s in populated]))
    per_bucket = {s.bucket_id: cutoff(s.member_distances) for s in populated if s.n_clusters >= min_clusters}
    logger.info("Fitted thresholds: %d bucket-specific, pooled fallback %d", len(per_bucket), pooled)
    return ThresholdModel(per_bucket, pooled, percentile, slack, dim)


def decide(distance: Optional[int], threshold: int) -> Outcome:
    """MATCH when distance <= threshold; no candidate means NEW_CLUSTER"""
    if distance is None or distance > threshold:
        return Outcome.NEW_CLUSTER
    return Outcome.MATCH


def process_query(q: QueryRecord, bank: CamBank, result: Optional[SearchResult], thresholds: ThresholdModel,
                  ledger: EnergyLatencyLedger) -> Assignment:
    """
    Turn a bank search into an Assignment

    The LTA winner's distance is compared against the bucket threshold. A
    MATCH carries the winner's cluster id; a NEW_CLUSTER carries -1 until
    expand() allocates the id.
    """
    tau = thresholds.threshold_for(q.bucket_id)
    ledger.charge_decision()
    if result is None or bank.rows == 0:
        return Assignment(q.spectrum_id, q.bucket_id, -1, Outcome.NEW_CLUSTER, None, tau)
    row, _ = lta_select_rows(result.currents, ledger)
    distance = int(result.distances[row])
    outcome = decide(distance, tau)
    cluster_id = bank.row_to_cluster[row] if outcome is Outcome.MATCH else -1
    return Assignment(q.spectrum_id, q.bucket_id, cluster_id, outcome, distance, tau)


def expand(assignment: Assignment, q: QueryRecord, bank: CamBank, ledger: EnergyLatencyLedger,
           cluster_id: int) -> Tuple[ClusterRecord, Assignment]:
    """Found a cluster for an outlier and append its row to the bank"""
    if assignment.outcome is not Outcome.NEW_CLUSTER:
        raise InvariantError(f"expand() called for a {assignment.outcome.value} assignment")
    record = ClusterRecord(cluster_id, q.bucket_id, q.hv, Accumulator.of([q.hv], q.hv.dim),
                           member_ids=[q.spectrum_id])
    write_rows(bank, [(cluster_id, q.hv)], ledger)
    final = Assignment(assignment.spectrum_id, assignment.bucket_id, cluster_id, Outcome.NEW_CLUSTER,
                       assignment.distance, assignment.threshold)
    return record, final


def update_consensus(record: ClusterRecord, q: QueryRecord, rewrite_period: float, bank: CamBank,
                     ledger: EnergyLatencyLedger, tie_breaker: Hypervector) -> ClusterRecord:
    """
    Fold a matched query into its cluster

    Every `rewrite_period`-th pending update rebundles the consensus and
    rewrites its CAM row; an infinite period keeps the row as created.
    """
    record.accumulator.add(q.hv)
    record.members += 1
    record.member_ids.append(q.spectrum_id)
    record.pending_updates += 1
    if record.pending_updates >= rewrite_period:
        record.consensus = bundle(record.accumulator, tie_breaker)
        rewrite_row(bank, record.cluster_id, record.consensus, ledger)
        record.pending_updates = 0
    return record


class ClusterEngine:
    """Cluster store for all buckets plus the per-query dispatch hook used by the scheduler"""

    def __init__(self, dim: int, thresholds: ThresholdModel, tie_breaker: Hypervector,
                 rewrite_period: float = 16):
        if rewrite_period < 1:
            raise ConfigError(f"Rewrite period must be >= 1 or inf, got {rewrite_period}")
        self.dim = dim
        self.thresholds = thresholds
        self.tie_breaker = tie_breaker
        self.rewrite_period = rewrite_period
        self.records: Dict[int, Dict[int, ClusterRecord]] = defaultdict(dict)
        self.phase_one: Dict[int, BucketStats] = {}
        self.assignments: List[Assignment] = []
        self.outliers: Dict[int, int] = defaultdict(int)
        self.queries: Dict[int, int] = defaultdict(int)

    def add_phase_one(self, result: PhaseOneResult) -> None:
        bucket = result.stats.bucket_id
        for record in result.records:
            self.records[bucket][record.cluster_id] = record
        self.phase_one[bucket] = result.stats

    def add_record(self, record: ClusterRecord) -> None:
        bucket = self.records[record.bucket_id]
        if record.cluster_id in bucket:
            raise InvariantError(f"Cluster ({record.bucket_id}, {record.cluster_id}) already exists")
        bucket[record.cluster_id] = record

    def next_cluster_id(self, bucket_id: int) -> int:
        bucket = self.records.get(bucket_id)
        return max(bucket) + 1 if bucket else 0

    def buckets(self) -> List[int]:
        return sorted(b for b, recs in self.records.items() if recs)

    def row_count(self, bucket_id: int) -> int:
        return len(self.records.get(bucket_id, {}))

    def rows_of(self, bucket_id: int) -> List[Tuple[int, Hypervector]]:
        """CAM row images of a bucket in cluster id order"""
        bucket = self.records.get(bucket_id, {})
        return [(cid, bucket[cid].consensus) for cid in sorted(bucket)]

    def bank_image(self, bucket_id: int) -> Tuple[np.ndarray, List[int]]:
        rows = self.rows_of(bucket_id)
        return pack_rows((hv for _, hv in rows), self.dim), [cid for cid, _ in rows]

    def dispatch(self, q: QueryRecord, bank: CamBank, result: Optional[SearchResult],
                 ledger: EnergyLatencyLedger, reserve_row: Optional[Callable[[], None]] = None) -> Assignment:
        """
        Decision plus its follow-up write: expansion for outliers, consensus upkeep for matches

        reserve_row is called only when an outlier needs a new row, so the
        scheduler can evict or grow the bank at that point.
        """
        assignment = process_query(q, bank, result, self.thresholds, ledger)
        self.queries[q.bucket_id] += 1
        if assignment.outcome is Outcome.MATCH:
            record = self.records[q.bucket_id][assignment.cluster_id]
            update_consensus(record, q, self.rewrite_period, bank, ledger, self.tie_breaker)
        else:
            if reserve_row is not None:
                reserve_row()
            record, assignment = expand(assignment, q, bank, ledger, self.next_cluster_id(q.bucket_id))
            self.add_record(record)
            self.outliers[q.bucket_id] += 1
        self.assignments.append(assignment)
        return assignment

    def membership(self) -> Dict[str, Tuple[int, int]]:
        """spectrum id -> (bucket id, cluster id) over Phase-I members and dispatched queries"""
        result = {}
        for bucket_id, bucket in self.records.items():
            for cid, record in bucket.items():
                for spectrum_id in record.member_ids:
                    result[spectrum_id] = (bucket_id, cid)
        return result

    def workload(self) -> List['BucketWorkload']:
        """Per-bucket counts of this run, for compare_speedup"""
        buckets = sorted(set(self.phase_one) | set(self.queries))
        result = []
        for b in buckets:
            stats = self.phase_one.get(b)
            result.append(BucketWorkload(
                bucket_id=b,
                spectra=stats.n_spectra if stats else 0,
                rows=stats.n_clusters if stats else 0,
                queries=self.queries.get(b, 0),
                outliers=self.outliers.get(b, 0),
            ))
        return result


class ClusteringMode(Enum):
    EXPANSION = 'expansion'
    FULL_RECLUSTER = 'full_recluster'


@dataclass(frozen=True)
class BucketWorkload:
    """Phase-I size of a bucket and what the run sent to it"""

    bucket_id: int
    spectra: int
    rows: int
    queries: int
    outliers: int


@dataclass
class SpeedupReport:
    expansion_ns: float
    recluster_ns: float
    expansion_comparisons: int
    recluster_comparisons: int
    expansion_row_writes: int
    recluster_row_writes: int

    @property
    def ratio(self) -> float:
        if self.expansion_ns == 0:
            return 1.0
        return self.recluster_ns / self.expansion_ns

    def to_dict(self) -> Dict:
        return {
            'expansion_ns': self.expansion_ns,
            'full_recluster_ns': self.recluster_ns,
            'speedup': self.ratio,
            'expansion_comparisons': self.expansion_comparisons,
            'full_recluster_comparisons': self.recluster_comparisons,
            'expansion_row_writes': self.expansion_row_writes,
            'full_recluster_row_writes': self.recluster_row_writes,
        }


def _search_ns(rows: int, device: DeviceParams) -> float:
    stages = math.ceil(math.log2(rows)) if rows > 1 else 0
    return device.search_latency_ns + stages * device.lta_stage_latency_ns + device.decision_latency_ns


def mode_cost(workload: Iterable[BucketWorkload], mode: ClusteringMode,
              device: DeviceParams = DeviceParams()) -> Tuple[float, int, int]:
    """
    Modeled (latency ns, row comparisons, row writes) of one clustering mode

    Both modes pay one search per query. Each outlier then costs one row write
    under EXPANSION, or a full leader-clustering pass over the grown bucket
    (one search per spectrum, then every resulting row rewritten) under
    FULL_RECLUSTER. Matched queries join the reclustered set too; outliers are
    taken as spread evenly through the bucket's query stream, so the j-th
    recluster covers the Phase-I spectra plus the first
    ceil((j + 1) * queries / outliers) queries.
    """
    latency, comparisons, writes = 0.0, 0, 0
    for w in workload:
        matched = w.queries - w.outliers
        latency += matched * _search_ns(max(w.rows, 1), device)
        comparisons += matched * w.rows
        for j in range(w.outliers):
            rows = w.rows + j
            latency += _search_ns(max(rows, 1), device)
            comparisons += rows
            if mode is ClusteringMode.EXPANSION:
                latency += device.write_latency_per_row_ns
                writes += 1
            else:
                arrived = math.ceil((j + 1) * w.queries / w.outliers)
                spectra, new_rows = w.spectra + arrived, rows + 1
                latency += spectra * _search_ns(new_rows, device)
                latency += min(new_rows, device.array_rows) * device.write_latency_per_row_ns
                comparisons += spectra * new_rows
                writes += new_rows
    return latency, comparisons, writes


def compare_speedup(workload: Sequence[BucketWorkload], device: DeviceParams = DeviceParams()) -> SpeedupReport:
    """Modeled latency of FULL_RECLUSTER over EXPANSION on the same workload"""
    e_ns, e_cmp, e_wr = mode_cost(workload, ClusteringMode.EXPANSION, device)
    r_ns, r_cmp, r_wr = mode_cost(workload, ClusteringMode.FULL_RECLUSTER, device)
    return SpeedupReport(e_ns, r_ns, e_cmp, r_cmp, e_wr, r_wr)

"""
Tests for core.cluster_engine
"""

import math

import numpy as np
import pytest

from core.cam_sim import CamBank, CurrentModel, DeviceParams, EnergyLatencyLedger, search, write_rows
from core.cluster_engine import (Assignment, BucketStats, BucketWorkload, ClusterEngine, ClusterRecord,
                                 ClusteringMode, Outcome, ThresholdModel, compare_speedup, decide, expand,
                                 fit_threshold, initial_cluster, mode_cost, nearest_rank_percentile, process_query)
from core.errors import ConfigError, EmptyInputError, InvariantError
from core.hdc_core import Accumulator, random_hv
from core.scheduler import QueryRecord
from tests.conftest import flip, make_engine, make_scheduler

D = 2048
TIE = random_hv(404, 0, D)


def engine_with_cluster(hv, rewrite_period, threshold=100):
    engine = ClusterEngine(hv.dim, ThresholdModel({}, threshold, dim=hv.dim), random_hv(404, 0, hv.dim),
                           rewrite_period)
    engine.add_record(ClusterRecord(0, 1, hv, Accumulator.of([hv], hv.dim), member_ids=['seed']))
    bank = CamBank(1, hv.dim, DeviceParams())
    write_rows(bank, engine.rows_of(1), EnergyLatencyLedger())
    return engine, bank


def dispatch_all(engine, bank, hvs, ledger, bucket_id=1):
    out = []
    for i, hv in enumerate(hvs):
        q = QueryRecord(f"q{i}", bucket_id, hv, i)
        result = search(bank, hv, CurrentModel(), ledger) if bank.rows else None
        out.append(engine.dispatch(q, bank, result, ledger))
    return out


def test_single_spectrum_is_its_own_cluster():
    hv = random_hv(1, 0, D)
    result = initial_cluster(3, [('s', hv)], 600, TIE)
    assert len(result.records) == 1
    assert result.records[0].consensus == hv
    assert result.membership == {'s': 0}
    assert result.stats.member_distances.tolist() == [0]


def test_empty_bucket_gives_empty_result():
    result = initial_cluster(3, [], 600, TIE)
    assert result.records == []
    assert result.stats.n_spectra == 0


def test_zero_noise_bucket_recovers_peptide_partition():
    templates = [random_hv(10, i, D) for i in range(3)]
    members = [(f"p{t}.{r}", templates[t]) for r in range(4) for t in range(3)]
    result = initial_cluster(0, members, 100, TIE)
    assert len(result.records) == 3
    for spectrum_id, cluster in result.membership.items():
        assert cluster == int(spectrum_id[1])
    assert all(r.members == 4 for r in result.records)
    assert result.stats.member_distances.max() == 0


def test_nearest_rank_percentile():
    assert nearest_rank_percentile(np.arange(1, 101), 95) == 95
    assert nearest_rank_percentile(np.array([7]), 95) == 7
    with pytest.raises(EmptyInputError):
        nearest_rank_percentile(np.array([]), 95)


def test_fit_threshold_examples():
    stats = {
        0: BucketStats(0, np.arange(1, 101), n_clusters=3, n_spectra=100),
        1: BucketStats(1, np.full(10, 50), n_clusters=4, n_spectra=10),
        2: BucketStats(2, np.array([10, 20]), n_clusters=1, n_spectra=2),
    }
    model = fit_threshold(stats, percentile=95, slack=1.0, dim=D)
    assert model.threshold_for(0) == 95
    assert model.threshold_for(1) == 50
    assert 2 not in model.per_bucket
    assert model.threshold_for(2) == model.global_threshold
    assert model.threshold_for(999) == model.global_threshold

    scaled = fit_threshold({1: stats[1]}, slack=1.2, dim=D)
    assert scaled.threshold_for(1) == 60


def test_fit_threshold_errors():
    with pytest.raises(EmptyInputError):
        fit_threshold({})
    stats = {0: BucketStats(0, np.arange(1, 11), 3, 10)}
    with pytest.raises(ConfigError):
        fit_threshold(stats, percentile=0)
    with pytest.raises(ConfigError):
        fit_threshold(stats, slack=0)


def test_threshold_model_persists():
    model = ThresholdModel({4: 90, 7: 120}, 100, 95.0, 1.1, D)
    assert ThresholdModel.from_dict(model.to_dict()) == model


def test_decide_boundary():
    assert decide(0, 10) is Outcome.MATCH
    assert decide(10, 10) is Outcome.MATCH
    assert decide(11, 10) is Outcome.NEW_CLUSTER
    assert decide(None, 10) is Outcome.NEW_CLUSTER


def test_process_query_threshold_boundary():
    hv = random_hv(21, 0, 128)
    bank = CamBank(1, 128, DeviceParams())
    write_rows(bank, [(0, hv)], EnergyLatencyLedger())
    thresholds = ThresholdModel({1: 10}, 50, dim=128)
    for flipped, expected in ((10, Outcome.MATCH), (11, Outcome.NEW_CLUSTER)):
        q = QueryRecord('q', 1, flip(hv, flipped), 0)
        ledger = EnergyLatencyLedger()
        assignment = process_query(q, bank, search(bank, q.hv, CurrentModel(), ledger), thresholds, ledger)
        assert assignment.outcome is expected
        assert assignment.distance == flipped
        assert assignment.threshold == 10
        assert ledger.counters['decisions'] == 1


def test_expand_rejects_a_match():
    hv = random_hv(2, 0, 128)
    match = Assignment('q', 1, 0, Outcome.MATCH, 0, 10)
    with pytest.raises(InvariantError):
        expand(match, QueryRecord('q', 1, hv, 0), CamBank(1, 128, DeviceParams()), EnergyLatencyLedger(), 1)


def test_first_queries_into_empty_bucket_found_clusters_in_order():
    engine = ClusterEngine(D, ThresholdModel({}, 10, dim=D), TIE, math.inf)
    bank = CamBank(5, D, DeviceParams())
    out = dispatch_all(engine, bank, [random_hv(6, 0, D), random_hv(6, 1, D)], EnergyLatencyLedger(), bucket_id=5)
    assert [a.cluster_id for a in out] == [0, 1]
    assert all(a.outcome is Outcome.NEW_CLUSTER for a in out)
    assert out[0].distance is None
    assert engine.records[5][0].members == 1


def test_outlier_writes_are_one_row_each():
    engine = ClusterEngine(D, ThresholdModel({}, 10, dim=D), TIE, math.inf)
    bank = CamBank(5, D, DeviceParams())
    ledger = EnergyLatencyLedger()
    dispatch_all(engine, bank, [random_hv(8, i, D) for i in range(100)], ledger, bucket_id=5)
    assert bank.rows == 100
    assert engine.outliers[5] == 100
    assert ledger.write_fj == 100 * D * 278.0


@pytest.mark.parametrize('period, matches, rewrites', [
    (1, 3, 3),
    (16, 16, 1),
    (16, 15, 0),
    (math.inf, 20, 0),
])
def test_rewrite_period(period, matches, rewrites):
    hv = random_hv(30, 0, D)
    engine, bank = engine_with_cluster(hv, period)
    ledger = EnergyLatencyLedger()
    out = dispatch_all(engine, bank, [hv] * matches, ledger)
    assert all(a.outcome is Outcome.MATCH for a in out)
    assert ledger.write_bits == rewrites * D
    assert ledger.write_fj == rewrites * D * 278.0
    record = engine.records[1][0]
    assert record.members == matches + 1


def test_consensus_follows_members_after_rewrite():
    base = random_hv(31, 0, 128)
    engine, bank = engine_with_cluster(base, 2, threshold=20)
    moved = flip(base, 8, seed=3)
    dispatch_all(engine, bank, [moved, moved], EnergyLatencyLedger())
    record = engine.records[1][0]
    assert record.pending_updates == 0
    assert record.consensus == moved
    assert (bank.stored[0] == moved.words).all()


def test_two_bucket_walkthrough():
    engine = make_engine({1: 1, 2: 1}, threshold=10)
    a, b = engine.records[1][0].consensus, engine.records[2][0].consensus
    queries = [
        QueryRecord('b1_first', 1, ~a, 0),
        QueryRecord('b2_first', 2, flip(b, 3), 1),
        QueryRecord('b1_second', 1, flip(~a, 2), 2),
        QueryRecord('b2_second', 2, ~b, 3),
    ]
    scheduler = make_scheduler(engine)
    scheduler.admit(queries)
    scheduler.prime()
    reports = scheduler.run()
    assert len(reports) == 2
    outcomes = {d['spectrum_id']: (d['outcome'], d['cluster']) for r in reports for d in r.dispatches}
    assert outcomes == {
        'b1_first': ('NEW_CLUSTER', 1),
        'b2_first': ('MATCH', 0),
        'b1_second': ('MATCH', 1),
        'b2_second': ('NEW_CLUSTER', 1),
    }


def test_membership_and_workload():
    templates = [random_hv(12, i, D) for i in range(3)]
    phase_one = initial_cluster(1, [(f"s{i}", templates[i % 3]) for i in range(9)], 100, TIE)
    engine = ClusterEngine(D, ThresholdModel({}, 50, dim=D), TIE, math.inf)
    engine.add_phase_one(phase_one)
    bank = CamBank(1, D, DeviceParams())
    write_rows(bank, engine.rows_of(1), EnergyLatencyLedger())
    dispatch_all(engine, bank, [templates[0], random_hv(99, 0, D)], EnergyLatencyLedger())

    membership = engine.membership()
    assert membership['s0'] == (1, 0)
    assert membership['q0'] == (1, 0)
    assert membership['q1'] == (1, 3)
    assert engine.workload() == [BucketWorkload(1, spectra=9, rows=3, queries=2, outliers=1)]


def test_duplicate_record_is_an_invariant_error():
    engine = make_engine({1: 2})
    hv = random_hv(1, 1, 128)
    with pytest.raises(InvariantError):
        engine.add_record(ClusterRecord(1, 1, hv, Accumulator.of([hv], 128)))


def test_no_outliers_means_no_speedup():
    report = compare_speedup([BucketWorkload(0, spectra=200, rows=200, queries=50, outliers=0)])
    assert report.ratio == 1.0
    assert compare_speedup([]).ratio == 1.0


def test_recluster_compares_ten_times_more():
    report = compare_speedup([BucketWorkload(0, spectra=200, rows=200, queries=10, outliers=10)])
    assert report.recluster_comparisons >= 10 * report.expansion_comparisons
    assert report.expansion_row_writes == 10


def test_expansion_speedup_on_two_hundred_row_buckets():
    workload = [BucketWorkload(b, spectra=200, rows=200, queries=200, outliers=10) for b in range(50)]
    report = compare_speedup(workload)
    assert report.ratio >= 10
    assert report.to_dict()['speedup'] == report.ratio


def test_mode_cost_expansion_arithmetic():
    device = DeviceParams()
    latency, comparisons, writes = mode_cost([BucketWorkload(0, 1, 1, 2, 1)], ClusteringMode.EXPANSION, device)
    # one match on 1 row, one outlier on 1 row plus its row write
    assert latency == pytest.approx(2 * (0.485 + 0.1) + 2.0)
    assert comparisons == 2
    assert writes == 1


def test_mode_cost_recluster_covers_matched_queries():
    device = DeviceParams()
    latency, comparisons, writes = mode_cost([BucketWorkload(0, 1, 1, 2, 1)], ClusteringMode.FULL_RECLUSTER, device)
    # the recluster after the outlier covers the Phase-I spectrum and both queries on 2 rows
    assert latency == pytest.approx(2 * (0.485 + 0.1) + 3 * (0.485 + 0.1 + 0.1) + 2 * 2.0)
    assert comparisons == 1 + 1 + 3 * 2
    assert writes == 2

    fewer, _, _ = mode_cost([BucketWorkload(0, 1, 1, 1, 1)], ClusteringMode.FULL_RECLUSTER, device)
    assert fewer < latency

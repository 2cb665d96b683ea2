"""
Tests for core.hdc_core
"""

import numpy as np
import pytest

from core.errors import ConfigError, DimensionMismatch, EmptyInputError, InputError
from core.hdc_core import (Accumulator, Codebook, CodebookKind, Hypervector, bind, bundle, hamming, hamming_rows,
                           make_id_codebook, make_level_codebook, pack_rows, random_hv)


def test_bit_layout_is_little_endian_words():
    bits = np.zeros(128, dtype=np.uint8)
    bits[0] = 1
    bits[65] = 1
    hv = Hypervector.from_bits(bits)
    assert hv.words.tolist() == [1, 2]
    assert np.array_equal(hv.to_bits(), bits)


def test_random_hv_is_deterministic_per_seed_and_index():
    assert random_hv(1, 0) == random_hv(1, 0)
    assert random_hv(1, 0) != random_hv(1, 1)
    assert random_hv(1, 0) != random_hv(2, 0)


def test_random_hv_is_roughly_balanced():
    ones = random_hv(42, 3, 2048).popcount()
    assert 1024 - 200 < ones < 1024 + 200


def test_random_pairs_sit_near_half_the_dimension():
    distances = [hamming(random_hv(100 + k, 0), random_hv(100 + k, 1)) for k in range(1000)]
    assert np.mean(distances) == pytest.approx(1024, rel=0.03)


def test_bind_is_self_inverse():
    a, b = random_hv(5, 0, 256), random_hv(5, 1, 256)
    assert bind(bind(a, b), b) == a
    assert (a ^ a) == Hypervector.zeros(256)


@pytest.mark.parametrize('seed', range(20))
def test_bind_is_associative_and_commutative(seed):
    a, b, c = (random_hv(seed, i, 256) for i in range(3))
    assert bind(a, b) == bind(b, a)
    assert bind(bind(a, b), c) == bind(a, bind(b, c))


@pytest.mark.parametrize('seed', range(20))
def test_bind_preserves_distance(seed):
    a, b, c = (random_hv(seed, i, 512) for i in range(3))
    assert hamming(bind(a, c), bind(b, c)) == hamming(a, b)


def test_hamming_of_complement_is_dim():
    a = random_hv(9, 0, 512)
    assert hamming(a, a) == 0
    assert hamming(a, ~a) == 512


def test_hamming_is_a_metric_at_64_bits():
    hvs = [random_hv(21, i, 64) for i in range(16)] + [Hypervector.zeros(64)]
    hvs.append(~hvs[0])
    d = np.array([[hamming(x, y) for y in hvs] for x in hvs])
    assert (d >= 0).all()
    assert (np.diag(d) == 0).all()
    assert (d == d.T).all()
    assert all(d[i, j] > 0 for i in range(len(hvs)) for j in range(len(hvs)) if hvs[i] != hvs[j])
    # d[i, k] <= d[i, j] + d[j, k] for every triple
    assert (d[:, None, :] <= d[:, :, None] + d[None, :, :]).all()


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        hamming(random_hv(1, 0, 128), random_hv(1, 0, 256))
    with pytest.raises(DimensionMismatch):
        bind(random_hv(1, 0, 128), random_hv(1, 0, 256))


def test_dim_must_be_word_multiple():
    with pytest.raises(ConfigError):
        random_hv(1, 0, 100)


def test_hamming_rows_matches_pairwise():
    rows = [random_hv(3, i, 256) for i in range(10)]
    query = random_hv(4, 0, 256)
    distances = hamming_rows(pack_rows(rows, 256), query)
    assert distances.tolist() == [hamming(r, query) for r in rows]


def test_bundle_majority_and_tie_breaker():
    ones = Hypervector.from_bits(np.ones(64, dtype=np.uint8))
    zeros = Hypervector.zeros(64)
    tie = random_hv(11, 0, 64)

    assert bundle(Accumulator.of([ones, ones, zeros], 64), tie) == ones
    assert bundle(Accumulator.of([ones, zeros, zeros], 64), tie) == zeros
    # even split takes the tie breaker bit by bit
    assert bundle(Accumulator.of([ones, zeros], 64), tie) == tie


def test_bundle_is_central_to_its_inputs():
    closer, trials = 0, 100
    for t in range(trials):
        xs = [random_hv(300 + t, i, 2048) for i in range(3)]
        center = bundle(Accumulator.of(xs, 2048), random_hv(300 + t, 99, 2048))
        to_center = np.mean([hamming(center, x) for x in xs])
        between = np.mean([hamming(xs[i], xs[j]) for i in range(3) for j in range(i + 1, 3)])
        closer += to_center < between
        # bitwise majority minimizes the summed distance to the inputs
        assert sum(hamming(center, x) for x in xs) <= min(sum(hamming(y, x) for x in xs) for y in xs)
    assert closer == trials


def test_bundle_of_single_vector_is_itself():
    hv = random_hv(8, 0, 2048)
    assert bundle(Accumulator.of([hv], 2048), random_hv(8, 1, 2048)) == hv


def test_bundle_empty_accumulator():
    with pytest.raises(EmptyInputError):
        bundle(Accumulator(64), Hypervector.zeros(64))


def test_accumulator_add_bits_matches_add():
    hvs = [random_hv(6, i, 128) for i in range(5)]
    one = Accumulator.of(hvs, 128)
    other = Accumulator(128).add_bits(np.vstack([hv.to_bits() for hv in hvs]))
    assert one.total == other.total == 5
    assert np.array_equal(one.counts, other.counts)


def test_id_codebook_is_near_orthogonal():
    cb = make_id_codebook(20, seed=2026, dim=2048)
    assert len(cb) == 20
    band = 4 * np.sqrt(2048 / 4)
    for i in range(1, 20):
        assert abs(hamming(cb[0], cb[i]) - 1024) <= band
        assert abs(hamming(cb[i - 1], cb[i]) - 1024) <= band


def test_level_codebook_distance_is_linear_in_level_gap():
    cb = make_level_codebook(64, seed=2027, dim=2048)
    block = 1024 // 63
    for i in range(64):
        for j in range(64):
            assert hamming(cb[i], cb[j]) == abs(i - j) * block
    assert hamming(cb[0], cb[63]) == 1008


def test_level_codebook_rejects_too_many_levels():
    with pytest.raises(ConfigError):
        make_level_codebook(66, seed=1, dim=128)
    with pytest.raises(ConfigError):
        make_level_codebook(1, seed=1, dim=128)


def test_codebook_snapshot_reload(tmp_path):
    cb = make_level_codebook(16, seed=77, dim=256)
    path = tmp_path / 'level.hvcb'
    cb.save(path)
    loaded = Codebook.load(path)
    assert loaded == cb
    assert loaded.kind is CodebookKind.LEVEL
    assert loaded.levels == 16


def test_codebook_load_rejects_garbage(tmp_path):
    path = tmp_path / 'bad.hvcb'
    path.write_bytes(b'not a codebook at all, clearly')
    with pytest.raises(InputError):
        Codebook.load(path)

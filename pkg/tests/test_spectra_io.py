"""
Tests for core.spectra_io
"""

import io

import numpy as np
import pytest

from core.errors import ConfigError, SpectrumRejected
from core.spectra_io import (PreprocessConfig, SyntheticConfig, generate_synthetic, is_normalized, make_templates,
                             preprocess, preprocess_all, replicate, split_spectra, write_mgf)
from parsers.mgf_parser import parse_mgf
from tests.conftest import spectrum

FIVE_PEAKS = [(300.0, 100.0), (400.0, 400.0), (500.0, 25.0), (600.0, 0.0), (700.0, 900.0)]


def test_preprocess_sqrt_scales_to_unit_maximum():
    out = preprocess(spectrum(FIVE_PEAKS))
    assert out.preprocessed
    assert [p.mz for p in out.peaks] == [300.0, 400.0, 500.0, 600.0, 700.0]
    assert [p.intensity for p in out.peaks] == pytest.approx([10 / 30, 20 / 30, 5 / 30, 0.0, 1.0])


def test_preprocess_drops_peaks_outside_window():
    raw = FIVE_PEAKS + [(150.0, 10000.0), (2000.0, 10000.0), (2500.0, 1.0)]
    out = preprocess(spectrum(raw))
    assert all(200.0 <= p.mz < 2000.0 for p in out.peaks)
    assert len(out.peaks) == 5


def test_preprocess_keeps_top_n_most_intense():
    raw = [(200.0 + 10 * i, float(i + 1)) for i in range(60)]
    out = preprocess(spectrum(raw), PreprocessConfig(top_n=50))
    assert len(out.peaks) == 50
    assert min(p.mz for p in out.peaks) == 300.0


def test_preprocess_duplicate_mz_keeps_most_intense():
    raw = FIVE_PEAKS + [(400.0, 1600.0)]
    out = preprocess(spectrum(raw))
    assert [p.mz for p in out.peaks].count(400.0) == 1
    assert max(out.peaks, key=lambda p: p.intensity).mz == 400.0


def test_preprocess_is_idempotent():
    once = preprocess(spectrum(FIVE_PEAKS))
    assert preprocess(once) is once


def test_preprocess_rejects_too_few_peaks():
    with pytest.raises(SpectrumRejected) as info:
        preprocess(spectrum(FIVE_PEAKS[:4], spectrum_id='short'))
    assert info.value.spectrum_id == 'short'


def test_preprocess_rejects_all_zero_intensity():
    with pytest.raises(SpectrumRejected):
        preprocess(spectrum([(300.0 + i, 0.0) for i in range(6)]))


def test_preprocess_all_collects_rejections():
    kept, rejected = preprocess_all([spectrum(FIVE_PEAKS, 'a'), spectrum(FIVE_PEAKS[:2], 'b')])
    assert [s.id for s in kept] == ['a']
    assert [e.spectrum_id for e in rejected] == ['b']


def test_preprocess_config_validation():
    with pytest.raises(ConfigError):
        PreprocessConfig(mz_min=500.0, mz_max=400.0)


def test_spectrum_charge_bounds():
    with pytest.raises(ValueError):
        spectrum(FIVE_PEAKS, charge=0)


def test_generate_synthetic_counts_and_labels():
    cfg = SyntheticConfig(n_peptides=10, spectra_per_peptide=5)
    spectra = generate_synthetic(cfg)
    assert len(spectra) == 50
    assert len({s.id for s in spectra}) == 50
    assert {s.label for s in spectra} == {f"peptide_{i}" for i in range(10)}


def test_generate_synthetic_is_deterministic():
    cfg = SyntheticConfig(n_peptides=5, spectra_per_peptide=3, seed=99)
    first, second = io.StringIO(), io.StringIO()
    write_mgf(generate_synthetic(cfg), first)
    write_mgf(generate_synthetic(cfg), second)
    assert first.getvalue() == second.getvalue()


def test_zero_noise_replicas_are_identical():
    cfg = SyntheticConfig(n_peptides=2, spectra_per_peptide=3, dropout_prob=0.0, mz_jitter_sd=0.0,
                          intensity_jitter_rel=0.0, shuffle=False)
    spectra = generate_synthetic(cfg)
    assert spectra[0].peaks == spectra[1].peaks == spectra[2].peaks
    assert spectra[0].peaks != spectra[3].peaks


def test_split_spectra_keeps_arrival_order():
    spectra = generate_synthetic(SyntheticConfig(n_peptides=2, spectra_per_peptide=5))
    setup, queries = split_spectra(spectra, 0.6)
    assert len(setup) == 6 and len(queries) == 4
    assert setup + queries == spectra
    with pytest.raises(ConfigError):
        split_spectra(spectra, 1.5)


def test_preprocess_survives_an_mgf_round_trip():
    once, _ = preprocess_all(generate_synthetic(SyntheticConfig(n_peptides=3, spectra_per_peptide=4)))
    stream = io.StringIO()
    write_mgf(once, stream)
    reread = parse_mgf(stream.getvalue())
    assert not any(s.preprocessed for s in reread)
    assert all(is_normalized(s) for s in reread)
    twice, rejected = preprocess_all(reread)
    assert rejected == []
    assert [s.peaks for s in twice] == [s.peaks for s in once]


def test_raw_spectra_are_not_taken_as_normalized():
    assert not is_normalized(spectrum(FIVE_PEAKS))
    assert not is_normalized(spectrum([(700.0, 1.0), (300.0, 0.5)] + [(400.0 + i, 0.1) for i in range(4)]))
    assert not is_normalized(spectrum([(150.0, 1.0)] + [(300.0 + i, 0.5) for i in range(5)]))


def test_mz_jitter_displacement_is_half_normal():
    cfg = SyntheticConfig(n_peptides=1, spectra_per_peptide=1, dropout_prob=0.0, mz_jitter_sd=0.01,
                          intensity_jitter_rel=0.0)
    rng = np.random.default_rng(5)
    template = make_templates(cfg, rng)[0]
    displacement = np.concatenate([np.abs(replicate(template, cfg, rng)[0] - template.mz) for _ in range(250)])
    assert displacement.size == 10000
    assert displacement.mean() == pytest.approx(0.798 * 0.01, rel=0.1)


def test_sibling_templates_share_precursor_and_most_peaks():
    cfg = SyntheticConfig(n_peptides=30, sibling_fraction=0.5, sibling_shared_peaks=0.6)
    templates = make_templates(cfg, np.random.default_rng(cfg.seed))
    siblings = 0
    for i, t in enumerate(templates):
        earlier = [p for p in templates[:i] if (p.precursor_mz, p.charge) == (t.precursor_mz, t.charge)]
        if earlier:
            siblings += 1
            assert max(np.intersect1d(t.mz, p.mz).size for p in earlier) >= 12
    assert 5 <= siblings <= 25


def test_siblings_off_draws_nothing_extra():
    first = generate_synthetic(SyntheticConfig(n_peptides=5, spectra_per_peptide=2, sibling_shared_peaks=0.1))
    second = generate_synthetic(SyntheticConfig(n_peptides=5, spectra_per_peptide=2, sibling_shared_peaks=0.9))
    assert first == second

"""
Tests for parsers.mgf_parser
"""

import io

import pytest

from core.errors import InputError
from core.spectra_io import SyntheticConfig, generate_synthetic, save_labels, write_mgf
from parsers.mgf_parser import MgfParser, load_labels, parse_mgf, parse_mgf_file

SAMPLE = """\
# comment line
BEGIN IONS
TITLE=spec_a
PEPMASS=512.25 1200.0
CHARGE=2+
SEQ=PEPTIDEA
300.1 10.0
450.2 20.5
END IONS

BEGIN IONS
TITLE=spec_b
PEPMASS=700.5
CHARGE=3
301.0 5.0
END IONS
"""


def test_parse_valid_blocks():
    spectra = parse_mgf(SAMPLE)
    assert [s.id for s in spectra] == ['spec_a', 'spec_b']
    a, b = spectra
    assert a.precursor_mz == 512.25
    assert a.charge == 2
    assert a.label == 'PEPTIDEA'
    assert [(p.mz, p.intensity) for p in a.peaks] == [(300.1, 10.0), (450.2, 20.5)]
    assert b.charge == 3
    assert b.label is None
    assert not a.preprocessed


def test_missing_charge_is_reported_and_skipped():
    text = SAMPLE.replace("CHARGE=3\n", "")
    parser = MgfParser(io.StringIO(text))
    spectra = parser.parse()
    assert [s.id for s in spectra] == ['spec_a']
    assert len(parser.diagnostics) == 1
    diag = parser.diagnostics[0]
    assert diag.title == 'spec_b'
    assert 'CHARGE' in diag.reason
    assert diag.line_no == 11


def test_non_numeric_peak_reports_its_line():
    text = SAMPLE.replace("450.2 20.5", "450.2 abc")
    parser = MgfParser(io.StringIO(text))
    spectra = parser.parse()
    assert [s.id for s in spectra] == ['spec_b']
    assert parser.diagnostics[0].line_no == 8


def test_negative_charge_and_missing_end():
    text = SAMPLE.replace("CHARGE=2+", "CHARGE=2-") + "BEGIN IONS\nTITLE=tail\n"
    parser = MgfParser(io.StringIO(text))
    spectra = parser.parse()
    assert [s.id for s in spectra] == ['spec_b']
    reasons = [d.reason for d in parser.diagnostics]
    assert any('CHARGE' in r for r in reasons)
    assert any('END IONS' in r for r in reasons)


def test_written_mgf_parses_back_exactly():
    spectra = generate_synthetic(SyntheticConfig(n_peptides=3, spectra_per_peptide=2))
    buffer = io.StringIO()
    assert write_mgf(spectra, buffer) == 6
    parsed = parse_mgf(buffer.getvalue())
    assert parsed == spectra


def test_parse_mgf_file_missing(tmp_path):
    with pytest.raises(InputError):
        parse_mgf_file(tmp_path / 'missing.mgf')


def test_load_labels(tmp_path):
    spectra = generate_synthetic(SyntheticConfig(n_peptides=2, spectra_per_peptide=2))
    path = tmp_path / 'labels.tsv'
    save_labels(spectra, path)
    assert load_labels(path) == {s.id: s.label for s in spectra}


def test_load_labels_bad_line(tmp_path):
    path = tmp_path / 'labels.tsv'
    path.write_text("spectrum_id\tlabel\nonly_one_column\n", encoding='utf-8')
    with pytest.raises(InputError, match=':2:'):
        load_labels(path)


def test_validate_returns_clean_blocks_with_start_lines():
    blocks = MgfParser(io.StringIO(SAMPLE)).validate()
    assert [(b['start'], b['title']) for b in blocks] == [(2, 'spec_a'), (11, 'spec_b')]
    assert blocks[0]['text'].startswith('BEGIN IONS\nTITLE=spec_a\n')


def test_label_key_untitled_block_and_peak_charge_column():
    text = "BEGIN IONS\nPEPMASS=400.0\nCHARGE=1+\nLABEL=PEPX\n250.0 3.0 1+\nEND IONS\n"
    [s] = parse_mgf(text)
    assert s.id == '<stream>:1'
    assert s.label == 'PEPX'
    assert (s.precursor_mz, s.charge) == (400.0, 1)
    assert [(p.mz, p.intensity) for p in s.peaks] == [(250.0, 3.0)]

"""
End-to-end tests of the camspec command line (gen -> setup -> run -> report)
"""

import json

import pytest
from openpyxl import load_workbook

from cli import pipeline
from cli.main import EXIT_CONFIG, EXIT_INPUT, EXIT_INVARIANT, EXIT_OK, build_parser, main
from core.errors import InvariantError
from core.trace_log import read_json, read_jsonl
from parsers.mgf_parser import load_labels, parse_mgf_file


def cli(*args):
    return main([str(a) for a in args])


@pytest.fixture
def generated(tmp_path, small_config_file):
    data = tmp_path / 'data'
    assert cli('gen', '--config', small_config_file, '--out', data) == EXIT_OK
    return data


@pytest.fixture
def snapshot(tmp_path, small_config_file, generated):
    out = tmp_path / 'out'
    assert cli('setup', generated / 'setup.mgf', '--config', small_config_file, '--out', out) == EXIT_OK
    return out


def test_parser_knows_every_command():
    parser = build_parser()
    for command in ('gen', 'setup', 'run', 'report', 'verify', 'bench'):
        assert parser.parse_args([command] + (['q.mgf'] if command == 'run' else [])).command == command


def test_gen_writes_fifty_labeled_blocks(generated):
    text = (generated / 'spectra.mgf').read_text(encoding='utf-8')
    assert text.count('BEGIN IONS') == 50
    spectra, diagnostics = parse_mgf_file(generated / 'spectra.mgf')
    assert len(spectra) == 50 and diagnostics == []
    labels = load_labels(generated / 'labels.tsv')
    assert len(set(labels.values())) == 10
    assert all(labels[s.id] == s.label for s in spectra)
    setup, _ = parse_mgf_file(generated / 'setup.mgf')
    queries, _ = parse_mgf_file(generated / 'queries.mgf')
    assert len(setup) == 30 and len(queries) == 20


def test_gen_is_byte_identical_across_runs(tmp_path, small_config_file, generated):
    again = tmp_path / 'again'
    assert cli('gen', '--config', small_config_file, '--out', again, '--jsonl') == EXIT_OK
    for name in ('spectra.mgf', 'setup.mgf', 'queries.mgf', 'labels.tsv'):
        assert (generated / name).read_bytes() == (again / name).read_bytes()
    assert (again / 'spectra.jsonl').exists()


def test_setup_writes_snapshot(snapshot):
    snap = snapshot / 'snapshot' / 'v1'
    for name in ('manifest.json', 'thresholds.json', 'ledger.json', 'consensus.hvd', 'accumulators.npz',
                 'members.jsonl', 'members.hvd', 'id_codebook.hvcb', 'level_codebook.hvcb'):
        assert (snap / name).exists(), name
    manifest = read_json(snap / 'manifest.json')
    assert manifest['dim'] == 2048
    assert manifest['spectra'] == 30
    # zero-noise replicas of one peptide collapse into one cluster
    members = read_jsonl(snap / 'members.jsonl')
    assert manifest['clusters'] == len({m['label'] for m in members})
    ledger = read_json(snap / 'ledger.json')
    assert ledger['bit_operations']['write'] == manifest['clusters'] * 2048


def test_setup_queries_all_match_their_own_clusters(snapshot, small_config_file, generated):
    assert cli('run', generated / 'setup.mgf', '--config', small_config_file, '--out', snapshot) == EXIT_OK
    run = read_json(snapshot / 'run' / 'v1' / 'run.json')
    assert run['outcomes'] == {'MATCH': 30, 'NEW_CLUSTER': 0}
    assignments = read_jsonl(snapshot / 'run' / 'v1' / 'assignments.jsonl')
    assert all(a['distance'] == 0 for a in assignments)


def test_queries_use_the_snapshot_bucketing(snapshot, small_config_file, generated, monkeypatch):
    monkeypatch.setenv('CAMSPEC_BUCKET_WIDTH', '7.0')
    monkeypatch.setenv('CAMSPEC_TOP_N_PEAKS', '10')
    assert cli('run', generated / 'setup.mgf', '--config', small_config_file, '--out', snapshot) == EXIT_OK
    run = read_json(snapshot / 'run' / 'v1' / 'run.json')
    assert run['outcomes'] == {'MATCH': 30, 'NEW_CLUSTER': 0}
    assert run['config']['bucket']['d_c'] == 7.0


def test_run_and_report(snapshot, small_config_file, generated, tmp_path):
    assert cli('run', generated / 'queries.mgf', '--config', small_config_file, '--out', snapshot) == EXIT_OK
    run_dir = snapshot / 'run' / 'v1'
    for name in ('trace.jsonl', 'assignments.jsonl', 'clustering.jsonl', 'ledger.json', 'metrics.json', 'run.json'):
        assert (run_dir / name).exists(), name

    assignments = read_jsonl(run_dir / 'assignments.jsonl')
    assert len(assignments) == 20
    run = read_json(run_dir / 'run.json')
    metrics = read_json(run_dir / 'metrics.json')
    assert metrics['labels_available']
    assert metrics['expansion']['incorrect_clustering_ratio'] == 0.0
    assert metrics['overlap']['overlap'] == 1.0

    xlsx = tmp_path / 'report.xlsx'
    csv_dir = tmp_path / 'plots'
    assert cli('report', run_dir, '--xlsx', xlsx, '--csv', csv_dir) == EXIT_OK
    report = read_json(run_dir / 'report.json')
    assert report['summary'][0]['queries'] == 20
    device = report['device'][0]
    areas = (device['cell_area_um2'], device['cam_unit_area_mm2'], device['lta_footprint_mm2'])
    assert areas == (0.0583, 224.0, 0.2081)
    assert run['config']['device']['cell_area_um2'] == 0.0583
    assert 'device' in load_workbook(xlsx).sheetnames
    assert (csv_dir / 'quality_curve.csv').exists()


def test_identical_runs_are_bit_identical(snapshot, small_config_file, generated):
    for _ in range(2):
        assert cli('run', generated / 'queries.mgf', '--config', small_config_file, '--out', snapshot) == EXIT_OK
    first, second = snapshot / 'run' / 'v1', snapshot / 'run' / 'v2'
    for name in ('assignments.jsonl', 'trace.jsonl', 'ledger.json', 'clustering.jsonl'):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
    assert cli('report', first, '--compare', second) == EXIT_OK
    report = read_json(first / 'report.json')
    assert report['overlap'][0]['overlap'] == 1.0


def test_verify_replays_the_recorded_trace(snapshot, small_config_file, generated, monkeypatch, capsys):
    monkeypatch.setenv('CAMSPEC_SCHEDULER_MODE', 'serial')
    assert cli('run', generated / 'queries.mgf', '--config', small_config_file, '--out', snapshot) == EXIT_OK
    monkeypatch.delenv('CAMSPEC_SCHEDULER_MODE')
    run_dir = snapshot / 'run' / 'v1'
    capsys.readouterr()
    assert cli('verify', run_dir) == EXIT_OK
    assert 'replayed identically' in capsys.readouterr().out


def test_verify_reports_a_tampered_trace(snapshot, small_config_file, generated, capsys):
    assert cli('run', generated / 'queries.mgf', '--config', small_config_file, '--out', snapshot) == EXIT_OK
    trace = snapshot / 'run' / 'v1' / 'trace.jsonl'
    cycles = read_jsonl(trace)
    cycles[-1]['elapsed_ns'] += 1.0
    trace.write_text(''.join(json.dumps(c, sort_keys=True) + '\n' for c in cycles), encoding='utf-8')
    capsys.readouterr()
    assert cli('verify', '--out', snapshot) == EXIT_INPUT
    assert f'diverges at cycle {len(cycles)} (elapsed_ns)' in capsys.readouterr().err


def test_verify_reports_a_truncated_trace(snapshot, small_config_file, generated, capsys):
    assert cli('run', generated / 'queries.mgf', '--config', small_config_file, '--out', snapshot) == EXIT_OK
    trace = snapshot / 'run' / 'v1' / 'trace.jsonl'
    lines = trace.read_text(encoding='utf-8').splitlines(keepends=True)
    trace.write_text(''.join(lines[:-1]), encoding='utf-8')
    capsys.readouterr()
    assert cli('verify', '--out', snapshot) == EXIT_INPUT
    assert 'record count' in capsys.readouterr().err


def test_serial_mode_flag(snapshot, small_config_file, generated):
    assert cli('run', generated / 'queries.mgf', '--config', small_config_file, '--out', snapshot,
               '--mode', 'serial') == EXIT_OK
    run = read_json(snapshot / 'run' / 'v1' / 'run.json')
    assert run['scheduler']['mode'] == 'serial'


def test_empty_query_set_reports_zero_queries(snapshot, small_config_file, tmp_path):
    empty = tmp_path / 'empty.mgf'
    empty.write_text('', encoding='utf-8')
    assert cli('run', empty, '--config', small_config_file, '--out', snapshot) == EXIT_OK
    assert cli('report', '--out', snapshot) == EXIT_OK
    report = read_json(snapshot / 'run' / 'v1' / 'report.json')
    assert report['summary'][0]['queries'] == 0
    assert report['summary'][0]['matches'] == 0


def test_corrupt_assignment_log(snapshot, small_config_file, generated, capsys):
    assert cli('run', generated / 'queries.mgf', '--config', small_config_file, '--out', snapshot) == EXIT_OK
    log = snapshot / 'run' / 'v1' / 'assignments.jsonl'
    with open(log, 'a', encoding='utf-8') as f:
        f.write('{"spectrum_id": \n')
    capsys.readouterr()
    assert cli('report', snapshot / 'run' / 'v1') == EXIT_INPUT
    assert 'assignments.jsonl:21:' in capsys.readouterr().err


def test_dimension_mismatch_is_a_config_error(snapshot, small_config_file, generated, monkeypatch):
    monkeypatch.setenv('CAMSPEC_HV_DIM', '1024')
    assert cli('run', generated / 'queries.mgf', '--config', small_config_file, '--out', snapshot) == EXIT_CONFIG


def test_dry_run_setup_energy(tmp_path):
    out = tmp_path / 'dry'
    assert cli('setup', '--dry-run', '--out', out) == EXIT_OK
    ledger = read_json(out / 'snapshot' / 'v1' / 'ledger.json')
    assert ledger['total_energy_mj'] == pytest.approx(1.138688)
    manifest = read_json(out / 'snapshot' / 'v1' / 'manifest.json')
    assert manifest['dry_run'] is True
    # a dry-run snapshot cannot serve queries
    (tmp_path / 'q.mgf').write_text('', encoding='utf-8')
    assert cli('run', tmp_path / 'q.mgf', '--out', out) == EXIT_CONFIG


def test_input_errors(tmp_path, small_config_file):
    assert cli('setup', tmp_path / 'missing.mgf', '--out', tmp_path) == EXIT_INPUT
    assert cli('setup', '--out', tmp_path) == EXIT_INPUT
    assert cli('report', '--out', tmp_path / 'nothing') == EXIT_INPUT

    short = tmp_path / 'short.mgf'
    short.write_text("BEGIN IONS\nTITLE=x\nPEPMASS=500.0\nCHARGE=2+\n300.0 1.0\nEND IONS\n", encoding='utf-8')
    assert cli('setup', short, '--config', small_config_file, '--out', tmp_path) == EXIT_INPUT


def test_config_errors(tmp_path):
    bad = tmp_path / 'bad.env'
    bad.write_text("NOT_A_SETTING=1\n", encoding='utf-8')
    assert cli('gen', '--config', bad, '--out', tmp_path) == EXIT_CONFIG
    assert cli('gen', '--config', tmp_path / 'absent.env', '--out', tmp_path) == EXIT_CONFIG


def test_invariant_violation_exit_code(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise InvariantError("capacity accounting drifted")

    monkeypatch.setattr(pipeline, 'cmd_gen', broken)
    assert cli('gen', '--out', tmp_path) == EXIT_INVARIANT

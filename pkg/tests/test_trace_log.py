"""
Tests for core.trace_log
"""

import pytest

from core.errors import InputError
from core.trace_log import (JsonlWriter, first_divergence, logs_to_frame, read_json, read_jsonl, write_json,
                             write_jsonl)


def test_jsonl_write_and_read(tmp_path):
    path = tmp_path / 'logs' / 'assignments.jsonl'
    records = [{'spectrum_id': 'a', 'cluster': 0}, {'spectrum_id': 'b', 'cluster': 1}]
    assert write_jsonl(path, records) == 2
    assert read_jsonl(path) == records


def test_writer_sorts_keys(tmp_path):
    path = tmp_path / 'log.jsonl'
    with JsonlWriter(path) as writer:
        writer.write({'b': 1, 'a': 2})
    assert path.read_text(encoding='utf-8') == '{"a": 2, "b": 1}\n'


def test_corrupt_line_is_reported_by_number(tmp_path):
    path = tmp_path / 'log.jsonl'
    path.write_text('{"a": 1}\n{"a": 2}\n{"a": \n', encoding='utf-8')
    with pytest.raises(InputError, match=r'log\.jsonl:3: corrupt log line'):
        read_jsonl(path)


def test_non_object_line(tmp_path):
    path = tmp_path / 'log.jsonl'
    path.write_text('[1, 2]\n', encoding='utf-8')
    with pytest.raises(InputError, match=':1:'):
        read_jsonl(path)


def test_missing_log(tmp_path):
    with pytest.raises(InputError, match='Log not found'):
        read_jsonl(tmp_path / 'nope.jsonl')


def test_empty_log_frame_keeps_columns(tmp_path):
    path = tmp_path / 'empty.jsonl'
    path.write_text('', encoding='utf-8')
    frame = logs_to_frame(path, ['spectrum_id', 'outcome'])
    assert frame.empty
    assert list(frame.columns) == ['spectrum_id', 'outcome']


def test_json_round_trip_and_errors(tmp_path):
    path = tmp_path / 'run.json'
    write_json(path, {'z': 1, 'a': [1, 2]})
    assert read_json(path) == {'z': 1, 'a': [1, 2]}
    assert path.read_text(encoding='utf-8').index('"a"') < path.read_text(encoding='utf-8').index('"z"')
    with pytest.raises(InputError):
        read_json(tmp_path / 'missing.json')


def test_first_divergence(tmp_path):
    path = tmp_path / 'trace.jsonl'
    cycles = [{'cycle': 0, 'evictions': [], 'elapsed_ns': 0.1 + 0.2}, {'cycle': 1, 'evictions': [3], 'elapsed_ns': 2.5}]
    write_jsonl(path, cycles)
    recorded = read_jsonl(path)
    assert first_divergence(recorded, cycles) is None
    assert first_divergence(recorded, [cycles[0], {**cycles[1], 'evictions': [4]}]) == (1, ['evictions'])
    assert first_divergence(recorded, cycles[:1]) == (1, ['record count'])

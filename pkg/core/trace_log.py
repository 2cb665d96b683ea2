"""
Trace Log: JSON-lines writer/reader for assignment, clustering and cycle logs
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import pandas as pd

from core.errors import InputError

logger = logging.getLogger(__name__)


class JsonlWriter:
    """Appends one JSON object per line; usable as a context manager"""

    def __init__(self, path: Union[str, Path]):
        """
        Open a log file for writing

        Args:
            path: Log file path; parent directories are created
        """
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, 'w', encoding='utf-8', newline='\n')
        self.count = 0

    def write(self, record: Dict) -> None:
        self._file.write(json.dumps(record, sort_keys=True) + "\n")
        self.count += 1

    def write_all(self, records: Iterable[Dict]) -> int:
        for record in records:
            self.write(record)
        return self.count

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()
            logger.debug("Wrote %d records to %s", self.count, self.path)

    def __enter__(self) -> 'JsonlWriter':
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def iter_jsonl(path: Union[str, Path]) -> Iterator[Dict]:
    """
    Yield the records of a JSON-lines log

    Raises:
        InputError: missing file, or a line that is not a JSON object (named by number)
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"Log not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise InputError(f"{path}:{line_no}: corrupt log line ({e.msg})")
            if not isinstance(record, dict):
                raise InputError(f"{path}:{line_no}: expected a JSON object")
            yield record


def read_jsonl(path: Union[str, Path]) -> List[Dict]:
    return list(iter_jsonl(path))


def write_jsonl(path: Union[str, Path], records: Iterable[Dict]) -> int:
    with JsonlWriter(path) as writer:
        return writer.write_all(records)


def logs_to_frame(path: Union[str, Path], columns: Optional[List[str]] = None) -> pd.DataFrame:
    """
    Load a JSON-lines log into a DataFrame

    Args:
        path: Log file
        columns: Column order for an empty log

    Returns:
        One row per record
    """
    records = read_jsonl(path)
    if not records:
        return pd.DataFrame(columns=columns or [])
    return pd.DataFrame.from_records(records)


def write_json(path: Union[str, Path], data: Dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: Union[str, Path]) -> Dict:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError:
        raise InputError(f"File not found: {path}")
    except json.JSONDecodeError as e:
        raise InputError(f"{path}:{e.lineno}: corrupt JSON ({e.msg})")


def first_divergence(recorded: Sequence[Dict], replayed: Sequence[Dict]) -> Optional[Tuple[int, List[str]]]:
    """
    Compare a log read back from disk with freshly produced records

    Replayed records go through the same JSON encoding the writer uses.

    Returns:
        (index of the first differing record, differing keys), or None when the logs agree
    """
    for i, (old, new) in enumerate(zip(recorded, replayed)):
        new = json.loads(json.dumps(new, sort_keys=True))
        if old != new:
            return i, sorted(k for k in set(old) | set(new) if old.get(k) != new.get(k))
    if len(recorded) != len(replayed):
        return min(len(recorded), len(replayed)), ['record count']
    return None

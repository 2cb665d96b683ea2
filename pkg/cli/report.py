"""
Run reports: quality, energy, latency and speedup tables from a run directory
"""

import logging
from pathlib import Path
from typing import Dict, Optional

import pandas as pd

from core.errors import InputError
from core.metrics import overlap
from core.trace_log import logs_to_frame, read_json, write_json

logger = logging.getLogger(__name__)

ASSIGNMENT_COLUMNS = ['spectrum_id', 'bucket', 'cluster', 'outcome', 'distance', 'threshold']
CLUSTERING_COLUMNS = ['spectrum_id', 'bucket', 'cluster', 'label']


def _membership(frame: pd.DataFrame) -> Dict[str, tuple]:
    return {row.spectrum_id: (int(row.bucket), int(row.cluster)) for row in frame.itertuples(index=False)}


def _labels(frame: pd.DataFrame) -> Dict[str, str]:
    if 'label' not in frame:
        return {}
    labeled = frame[frame['label'].notna()]
    return dict(zip(labeled['spectrum_id'], labeled['label']))


def build_report(run_dir: Path, compare_dir: Optional[Path] = None) -> Dict[str, pd.DataFrame]:
    """
    Assemble report tables for a run directory

    Outcome counts are recomputed from assignments.jsonl rather than taken
    from run.json, and checked against the run summary.

    Args:
        run_dir: A `run/v<N>` directory
        compare_dir: Optional second run to compute majority-label overlap against

    Returns:
        Named DataFrames: summary, quality, energy, latency, device, speedup (and overlap)
    """
    run = read_json(run_dir / 'run.json')
    metrics = read_json(run_dir / 'metrics.json')
    ledger = read_json(run_dir / 'ledger.json')
    assignments = logs_to_frame(run_dir / 'assignments.jsonl', ASSIGNMENT_COLUMNS)

    counts = assignments['outcome'].value_counts() if not assignments.empty else pd.Series(dtype=int)
    matches, new_clusters = int(counts.get('MATCH', 0)), int(counts.get('NEW_CLUSTER', 0))
    logged = run.get('outcomes', {})
    if logged and (logged.get('MATCH', 0), logged.get('NEW_CLUSTER', 0)) != (matches, new_clusters):
        raise InputError(f"{run_dir}: assignment log disagrees with run.json outcome counts")

    distances = assignments['distance'].dropna()
    tables = {}
    tables['summary'] = pd.DataFrame([{
        'config_hash': run.get('config_hash', ''),
        'queries': len(assignments),
        'matches': matches,
        'new_clusters': new_clusters,
        'mean_distance': float(distances.mean()) if len(distances) else 0.0,
        'cycles': run.get('scheduler', {}).get('cycles', 0),
        'mode': run.get('scheduler', {}).get('mode', ''),
    }])

    quality_rows = []
    for name in ('expansion', 'oracle'):
        if metrics.get(name):
            quality_rows.append({'clustering': name, **metrics[name]})
    tables['quality'] = pd.DataFrame(quality_rows)

    tables['energy'] = pd.DataFrame(
        [{'class': k, 'energy_fj': v, 'energy_nj': v / 1e6} for k, v in ledger['energy_fj'].items()]
        + [{'class': 'total', 'energy_fj': ledger['total_energy_fj'], 'energy_nj': ledger['total_energy_nj']}])
    tables['latency'] = pd.DataFrame(
        [{'class': k, 'latency_ns': v} for k, v in ledger['latency_ns'].items()]
        + [{'class': 'total', 'latency_ns': ledger['total_latency_ns']}])
    # profile constants, including the reported-only area figures
    tables['device'] = pd.DataFrame([ledger.get('device', {})])

    parallel = metrics.get('parallel_speedup', {})
    incremental = metrics.get('incremental_speedup', {})
    tables['speedup'] = pd.DataFrame([
        {'comparison': 'parallel_vs_serial', 'baseline_ns': parallel.get('serial_dispatch_ns', 0.0),
         'camspec_ns': parallel.get('parallel_dispatch_ns', 0.0), 'speedup': parallel.get('speedup', 1.0)},
        {'comparison': 'expansion_vs_full_recluster', 'baseline_ns': incremental.get('full_recluster_ns', 0.0),
         'camspec_ns': incremental.get('expansion_ns', 0.0), 'speedup': incremental.get('speedup', 1.0)},
    ])

    if compare_dir is not None:
        mine = logs_to_frame(run_dir / 'clustering.jsonl', CLUSTERING_COLUMNS)
        theirs = logs_to_frame(compare_dir / 'clustering.jsonl', CLUSTERING_COLUMNS)
        labels = {**_labels(theirs), **_labels(mine)}
        result = overlap(_membership(mine), _membership(theirs), labels)
        tables['overlap'] = pd.DataFrame([{'run': str(run_dir), 'other': str(compare_dir), **result.to_dict()}])
    return tables


def plot_data(run_dir: Path) -> Dict[str, pd.DataFrame]:
    """Curve data: clustered vs incorrect ratio, and per-mode latency for the speedup bars"""
    metrics = read_json(run_dir / 'metrics.json')
    quality = pd.DataFrame([
        {'clustering': name, 'clustered_spectra_ratio': metrics[name]['clustered_spectra_ratio'],
         'incorrect_clustering_ratio': metrics[name]['incorrect_clustering_ratio']}
        for name in ('expansion', 'oracle') if metrics.get(name)
    ])
    incremental = metrics.get('incremental_speedup', {})
    latency = pd.DataFrame([
        {'mode': 'full_recluster', 'latency_ns': incremental.get('full_recluster_ns', 0.0)},
        {'mode': 'expansion', 'latency_ns': incremental.get('expansion_ns', 0.0)},
    ])
    return {'quality_curve': quality, 'incremental_latency': latency}


def cmd_report(run_dir: Path, compare_dir: Optional[Path] = None, csv_dir: Optional[Path] = None,
               xlsx_path: Optional[Path] = None) -> Dict[str, pd.DataFrame]:
    """Print report tables and write report.json, plus optional CSV plot data and an Excel workbook"""
    tables = build_report(run_dir, compare_dir)

    for name, table in tables.items():
        print(f"\n{name.upper()}")
        print("=" * 60)
        print(table.to_string(index=False) if not table.empty else "(empty)")

    write_json(run_dir / 'report.json', {name: table.to_dict(orient='records') for name, table in tables.items()})

    if csv_dir is not None:
        csv_dir.mkdir(parents=True, exist_ok=True)
        for name, table in plot_data(run_dir).items():
            table.to_csv(csv_dir / f"{name}.csv", index=False)
        print(f"\n[OK] Plot data written to {csv_dir}")

    if xlsx_path is not None:
        xlsx_path.parent.mkdir(parents=True, exist_ok=True)
        with pd.ExcelWriter(xlsx_path, engine='openpyxl') as writer:
            for name, table in tables.items():
                table.to_excel(writer, sheet_name=name, index=False)
        print(f"[OK] Workbook written to {xlsx_path}")
    return tables

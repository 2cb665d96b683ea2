"""
Clustering quality against ground-truth labels
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Hashable, Mapping, Optional, Set

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QualityMetrics:
    n_spectra: int
    n_clusters: int
    n_clustered: int
    clustered_spectra_ratio: float
    incorrect_clustering_ratio: float
    incorrect_defined: bool

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class OverlapResult:
    overlap: float
    a_only: int
    b_only: int
    both: int

    def to_dict(self) -> Dict:
        return asdict(self)


def _labeled_frame(membership: Mapping[str, Hashable], labels: Mapping[str, str]) -> pd.DataFrame:
    rows = [(sid, str(cluster), labels[sid]) for sid, cluster in membership.items() if labels.get(sid) is not None]
    return pd.DataFrame(rows, columns=['spectrum_id', 'cluster', 'label'])


def _majority(frame: pd.DataFrame) -> pd.DataFrame:
    """Per cluster: size and majority label (ties go to the smallest label)"""
    counts = frame.groupby(['cluster', 'label']).size().rename('count').reset_index()
    counts = counts.sort_values(['cluster', 'count', 'label'], ascending=[True, False, True])
    top = counts.drop_duplicates('cluster').set_index('cluster')
    top['size'] = frame.groupby('cluster').size()
    return top.rename(columns={'label': 'majority', 'count': 'majority_count'})


def quality_metrics(membership: Mapping[str, Hashable], labels: Mapping[str, str]) -> Optional[QualityMetrics]:
    """
    Clustered-spectra ratio and incorrect-clustering ratio

    Only labeled spectra are counted. A spectrum is clustered when its cluster
    has at least two labeled members; it is incorrect when its label differs
    from its cluster's majority label.

    Args:
        membership: spectrum id -> cluster key
        labels: spectrum id -> ground-truth label

    Returns:
        Metrics, or None when no spectrum carries a label
    """
    frame = _labeled_frame(membership, labels)
    if frame.empty:
        logger.info("No labeled spectra; quality metrics unavailable")
        return None
    top = _majority(frame)
    clustered = top[top['size'] >= 2]
    n_clustered = int(clustered['size'].sum())
    n_incorrect = int((clustered['size'] - clustered['majority_count']).sum())
    defined = n_clustered > 0
    return QualityMetrics(
        n_spectra=len(frame),
        n_clusters=len(top),
        n_clustered=n_clustered,
        clustered_spectra_ratio=n_clustered / len(frame),
        incorrect_clustering_ratio=n_incorrect / n_clustered if defined else 0.0,
        incorrect_defined=defined,
    )


def majority_label_set(membership: Mapping[str, Hashable], labels: Mapping[str, str]) -> Set[str]:
    """Majority labels of all clusters with at least two labeled members"""
    frame = _labeled_frame(membership, labels)
    if frame.empty:
        return set()
    top = _majority(frame)
    return set(top.loc[top['size'] >= 2, 'majority'])


def overlap(a: Mapping[str, Hashable], b: Mapping[str, Hashable], labels: Mapping[str, str]) -> OverlapResult:
    """Jaccard overlap of two clusterings' majority-label sets, with the A-only/B-only/both counts"""
    set_a, set_b = majority_label_set(a, labels), majority_label_set(b, labels)
    union = set_a | set_b
    both = len(set_a & set_b)
    return OverlapResult(both / len(union) if union else 0.0, len(set_a - set_b), len(set_b - set_a), both)


def adjusted_rand_index(membership: Mapping[str, Hashable], labels: Mapping[str, str]) -> float:
    """Adjusted Rand index between a clustering and the label partition"""
    frame = _labeled_frame(membership, labels)
    if len(frame) < 2:
        return 1.0
    table = pd.crosstab(frame['cluster'], frame['label']).to_numpy()

    def pairs(x):
        x = np.asarray(x, dtype=np.float64)
        return float((x * (x - 1) / 2).sum())

    index = pairs(table)
    rows, cols = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    total = len(frame) * (len(frame) - 1) / 2
    expected = rows * cols / total
    maximum = (rows + cols) / 2
    if maximum == expected:
        return 1.0
    return (index - expected) / (maximum - expected)

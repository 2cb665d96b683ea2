"""
Parametric SOT-CAM model: banks of 128x128 arrays, matchline current vs
Hamming distance, loser-takes-all selection and energy/latency accounting.

Energy comes from the device table constants only; currents are in arbitrary
units of `unit_current` and matter only through their ordering and inversion.
"""

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import CapacityError, ConfigError, DimensionMismatch, EmptyInputError, InvariantError
from core.hdc_core import WORD_BITS, WORD_DTYPE, Hypervector

logger = logging.getLogger(__name__)

DEVICE_TABLE_PATH = Path(__file__).parent.parent / 'config' / 'device_table.json'


def load_device_table(path: Path = DEVICE_TABLE_PATH) -> Dict:
    """Load the cell-technology comparison table"""
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


@dataclass(frozen=True)
class DeviceParams:
    """Per-cell constants of the modeled CAM technology plus peripheral timing"""

    search_energy_per_bit_fj: float = 0.714
    search_latency_ns: float = 0.485
    write_energy_per_bit_fj: float = 278.0
    write_latency_per_row_ns: float = 2.0
    operating_voltage_v: float = 0.8
    array_rows: int = 128
    array_cols: int = 128
    lta_stage_latency_ns: float = 0.1
    lta_stage_energy_fj: float = 0.0
    decision_latency_ns: float = 0.1
    profile: str = 'sot_mram'
    # reported only, never priced
    cell_area_um2: float = 0.0583
    cam_unit_bytes: int = 536870912
    cam_unit_area_mm2: float = 224.0
    lta_footprint_mm2: float = 0.2081

    def __post_init__(self):
        for name in ('search_energy_per_bit_fj', 'search_latency_ns', 'write_energy_per_bit_fj',
                     'write_latency_per_row_ns', 'operating_voltage_v', 'array_rows', 'array_cols'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"Device parameter {name} must be positive, got {getattr(self, name)}")
        for name in ('lta_stage_latency_ns', 'lta_stage_energy_fj', 'decision_latency_ns'):
            if getattr(self, name) < 0:
                raise ConfigError(f"Device parameter {name} must be non-negative, got {getattr(self, name)}")
        if self.array_cols % WORD_BITS:
            raise ConfigError(f"array_cols must be a multiple of {WORD_BITS}, got {self.array_cols}")

    @classmethod
    def from_profile(cls, name: str = 'sot_mram', table_path: Path = DEVICE_TABLE_PATH,
                     **overrides) -> 'DeviceParams':
        """
        Build device parameters from a row of the technology table

        Args:
            name: Profile name in config/device_table.json
            table_path: Alternative table location
            **overrides: Peripheral parameters not in the table (LTA, decision latency)

        Returns:
            DeviceParams for that profile
        """
        table = load_device_table(table_path)
        profile = next((p for p in table['profiles'] if p['name'] == name), None)
        if profile is None:
            known = [p['name'] for p in table['profiles']]
            raise ConfigError(f"Unknown device profile '{name}'. Choose from: {known}")
        if not profile.get('modeled', False):
            logger.warning("Device profile '%s' is recorded for comparison only; energy figures are what-if values", name)
        system = table.get('system', {})
        known_fields = {f.name for f in fields(cls)}
        values = {k: v for k, v in profile.items() if k in known_fields}
        values.update({k: v for k, v in system.items() if k in known_fields})
        values.update(overrides)
        values['profile'] = name
        return cls(**values)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class EnergyLatencyLedger:
    """
    Cumulative energy (fJ) and latency (ns) per operation class

    Write and search energies are stored as bit-operation counts and priced on
    read, so totals equal their closed forms exactly.
    """

    device: DeviceParams = field(default_factory=DeviceParams)
    write_bits: int = 0
    search_bits: int = 0
    lta_stages: int = 0
    transfer_fj: float = 0.0
    write_ns: float = 0.0
    search_ns: float = 0.0
    lta_ns: float = 0.0
    decision_ns: float = 0.0
    transfer_ns: float = 0.0
    counters: Counter = field(default_factory=Counter)

    @property
    def write_fj(self) -> float:
        return self.write_bits * self.device.write_energy_per_bit_fj

    @property
    def search_fj(self) -> float:
        return self.search_bits * self.device.search_energy_per_bit_fj

    @property
    def lta_fj(self) -> float:
        return self.lta_stages * self.device.lta_stage_energy_fj

    @property
    def total_fj(self) -> float:
        return self.write_fj + self.search_fj + self.lta_fj + self.transfer_fj

    @property
    def total_ns(self) -> float:
        return self.write_ns + self.search_ns + self.lta_ns + self.decision_ns + self.transfer_ns

    @property
    def dispatch_ns(self) -> float:
        return self.search_ns + self.lta_ns + self.decision_ns

    def charge_write(self, rows: int, dim: int, elapsed_ns: float) -> None:
        self.write_bits += rows * dim
        self.write_ns += elapsed_ns
        self.counters['write_rows'] += rows
        self.counters['write_ops'] += 1

    def charge_search(self, rows: int, dim: int) -> None:
        self.search_bits += rows * dim
        self.search_ns += self.device.search_latency_ns
        self.counters['searches'] += 1
        self.counters['rows_searched'] += rows

    def charge_lta(self, stages: int) -> None:
        self.lta_stages += stages
        self.lta_ns += stages * self.device.lta_stage_latency_ns
        self.counters['lta_selects'] += 1

    def charge_decision(self) -> None:
        self.decision_ns += self.device.decision_latency_ns
        self.counters['decisions'] += 1

    def charge_transfer(self, source: str, n_bytes: int, elapsed_ns: float, energy_fj: float = 0.0) -> None:
        self.transfer_ns += elapsed_ns
        self.transfer_fj += energy_fj
        self.counters[f'{source}_loads'] += 1
        self.counters[f'{source}_bytes'] += n_bytes

    def merge(self, other: 'EnergyLatencyLedger', latency: bool = True) -> None:
        """Add another ledger's energy and counters, and optionally its latencies"""
        self.write_bits += other.write_bits
        self.search_bits += other.search_bits
        self.lta_stages += other.lta_stages
        self.transfer_fj += other.transfer_fj
        self.counters.update(other.counters)
        if latency:
            self.add_latency(write=other.write_ns, search=other.search_ns, lta=other.lta_ns,
                             decision=other.decision_ns, transfer=other.transfer_ns)

    def add_latency(self, write: float = 0.0, search: float = 0.0, lta: float = 0.0,
                    decision: float = 0.0, transfer: float = 0.0) -> None:
        self.write_ns += write
        self.search_ns += search
        self.lta_ns += lta
        self.decision_ns += decision
        self.transfer_ns += transfer

    def fork(self) -> 'EnergyLatencyLedger':
        """Empty ledger on the same device, for per-bank contributions"""
        return EnergyLatencyLedger(self.device)

    def to_dict(self) -> Dict:
        """JSON report: per-class fJ/ns, derived nJ/us totals, device echo"""
        energy = {'write': self.write_fj, 'search': self.search_fj, 'lta': self.lta_fj, 'transfer': self.transfer_fj}
        latency = {'write': self.write_ns, 'search': self.search_ns, 'lta': self.lta_ns,
                   'decision': self.decision_ns, 'transfer': self.transfer_ns}
        return {
            'energy_fj': energy,
            'latency_ns': latency,
            'total_energy_fj': self.total_fj,
            'total_energy_nj': self.total_fj / 1e6,
            'total_energy_mj': self.total_fj / 1e12,
            'total_latency_ns': self.total_ns,
            'total_latency_us': self.total_ns / 1e3,
            'bit_operations': {'write': self.write_bits, 'search': self.search_bits},
            'counters': dict(sorted(self.counters.items())),
            'device': self.device.to_dict(),
        }


class CurrentMode(Enum):
    IDEAL = 'ideal'
    PARASITIC = 'parasitic'


@dataclass(frozen=True, eq=False)
class CurrentModel:
    """Matchline current of one column slice as a function of its Hamming distance"""

    mode: CurrentMode = CurrentMode.IDEAL
    unit_current: float = 1.0
    alpha: float = 0.002
    slice_width: int = 128
    calibration: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.unit_current <= 0:
            raise ConfigError(f"unit_current must be positive, got {self.unit_current}")

    def current(self, distance) -> np.ndarray:
        """Raw slice current I(d)"""
        d = np.asarray(distance, dtype=np.float64)
        if self.mode is CurrentMode.IDEAL:
            return self.unit_current * d
        return self.unit_current * d / (1.0 + self.alpha * d)

    def corrected(self, current) -> np.ndarray:
        """Linearized current I_0 * d_hat; identity without a calibration table"""
        current = np.asarray(current, dtype=np.float64)
        if self.calibration is None:
            return current
        table = self.calibration
        pos = np.clip(np.searchsorted(table, current), 1, table.size - 1)
        lower, upper = table[pos - 1], table[pos]
        nearest = np.where(current - lower <= upper - current, pos - 1, pos)
        return self.unit_current * nearest

    def distance_estimate(self, accumulated_current) -> np.ndarray:
        return np.rint(np.asarray(accumulated_current) / self.unit_current).astype(np.int64)


def calibrate(model: CurrentModel) -> CurrentModel:
    """
    Attach the inverse lookup that linearizes a PARASITIC current model

    Raises:
        ConfigError: model not PARASITIC, or I(d) not strictly increasing on [0, slice_width]
    """
    if model.mode is not CurrentMode.PARASITIC:
        raise ConfigError("Calibration applies to the PARASITIC current model only")
    d = np.arange(model.slice_width + 1, dtype=np.float64)
    with np.errstate(divide='ignore', invalid='ignore'):
        denom = 1.0 + model.alpha * d
        table = model.unit_current * d / denom
    if np.any(denom <= 0) or not np.all(np.isfinite(table)) or np.any(np.diff(table) <= 0):
        raise ConfigError(f"Current model with alpha={model.alpha} is not strictly increasing on "
                          f"[0, {model.slice_width}]; cannot calibrate")
    table.flags.writeable = False
    return CurrentModel(model.mode, model.unit_current, model.alpha, model.slice_width, table)


class CamBank:
    """Rows of one bucket stored across row slices x column slices of CAM arrays"""

    def __init__(self, bucket_id: int, dim: int, device: DeviceParams, row_capacity: int = 0):
        if dim % device.array_cols:
            raise ConfigError(f"D={dim} is not a multiple of the array width {device.array_cols}")
        self.bucket_id = bucket_id
        self.dim = dim
        self.device = device
        self.row_slices = max(1, math.ceil(row_capacity / device.array_rows))
        self._stored = np.zeros((self.capacity_rows, dim // WORD_BITS), dtype=WORD_DTYPE)
        self.rows = 0
        self.row_to_cluster: List[int] = []
        self._cluster_to_row: Dict[int, int] = {}

    @property
    def col_slices(self) -> int:
        return self.dim // self.device.array_cols

    @property
    def arrays(self) -> int:
        return self.row_slices * self.col_slices

    @property
    def capacity_rows(self) -> int:
        return self.row_slices * self.device.array_rows

    @property
    def free_rows(self) -> int:
        return self.capacity_rows - self.rows

    @property
    def stored(self) -> np.ndarray:
        return self._stored[:self.rows]

    def grow(self, extra_row_slices: int = 1) -> None:
        """Attach more row slices (the caller owns the capacity budget)"""
        self.row_slices += extra_row_slices
        grown = np.zeros((self.capacity_rows, self._stored.shape[1]), dtype=WORD_DTYPE)
        grown[:self.rows] = self._stored[:self.rows]
        self._stored = grown

    def row_of(self, cluster_id: int) -> int:
        try:
            return self._cluster_to_row[cluster_id]
        except KeyError:
            raise InvariantError(f"Cluster {cluster_id} has no row in bucket {self.bucket_id}")

    def image(self) -> Tuple[np.ndarray, List[int]]:
        """Copy of the stored rows and their cluster ids"""
        return self.stored.copy(), list(self.row_to_cluster)

    def __repr__(self) -> str:
        return f"CamBank(bucket={self.bucket_id}, rows={self.rows}, arrays={self.arrays})"


def write_rows(bank: CamBank, rows: Sequence[Tuple[int, Hypervector]],
               ledger: EnergyLatencyLedger) -> CamBank:
    """
    Append rows; arrays are written in parallel, rows within one array sequentially

    Raises:
        CapacityError: not enough free rows in the bank's allocated arrays
    """
    n = len(rows)
    if n == 0:
        return bank
    if n > bank.free_rows:
        raise CapacityError(bank.bucket_id, n - bank.free_rows)
    for cluster_id, hv in rows:
        if hv.dim != bank.dim:
            raise DimensionMismatch(bank.dim, hv.dim)
        if cluster_id in bank._cluster_to_row:
            raise InvariantError(f"Cluster {cluster_id} already stored in bucket {bank.bucket_id}")

    start = bank.rows
    for offset, (cluster_id, hv) in enumerate(rows):
        bank._stored[start + offset] = hv.words
        bank.row_to_cluster.append(cluster_id)
        bank._cluster_to_row[cluster_id] = start + offset
    bank.rows += n

    per_array = np.bincount(np.arange(start, start + n) // bank.device.array_rows)
    ledger.charge_write(n, bank.dim, int(per_array.max()) * bank.device.write_latency_per_row_ns)
    return bank


def load_image(bank: CamBank, stored: np.ndarray, row_to_cluster: Sequence[int],
               ledger: EnergyLatencyLedger) -> CamBank:
    """Write a packed bucket image (from the bucket cache or main memory) into an empty bank"""
    rows = [(cid, Hypervector(stored[i], bank.dim)) for i, cid in enumerate(row_to_cluster)]
    return write_rows(bank, rows, ledger)


def rewrite_row(bank: CamBank, cluster_id: int, hv: Hypervector, ledger: EnergyLatencyLedger) -> CamBank:
    """Overwrite the row holding `cluster_id` (one row write)"""
    if hv.dim != bank.dim:
        raise DimensionMismatch(bank.dim, hv.dim)
    bank._stored[bank.row_of(cluster_id)] = hv.words
    ledger.charge_write(1, bank.dim, bank.device.write_latency_per_row_ns)
    return bank


@dataclass(frozen=True)
class SearchResult:
    """Per-row accumulated currents and distance estimates of one bank search"""

    currents: np.ndarray
    distances: np.ndarray

    def pairs(self) -> List[Tuple[int, int]]:
        return [(i, int(d)) for i, d in enumerate(self.distances)]

    def current_pairs(self) -> List[Tuple[int, float]]:
        return [(i, float(c)) for i, c in enumerate(self.currents)]


def slice_distances(stored: np.ndarray, query: Hypervector, slice_width: int) -> np.ndarray:
    """(R, D/slice_width) Hamming distances per column slice"""
    if stored.shape[1] != query.words.shape[0]:
        raise DimensionMismatch(stored.shape[1] * WORD_BITS, query.dim)
    words_per_slice = slice_width // WORD_BITS
    xor = stored ^ query.words
    return np.bitwise_count(xor.reshape(stored.shape[0], -1, words_per_slice)).sum(axis=2, dtype=np.int64)


def search(bank: CamBank, query: Hypervector, model: CurrentModel, ledger: EnergyLatencyLedger) -> SearchResult:
    """
    Parallel search of every stored row against `query`

    Each column slice produces I(d_slice); slice currents (linearized when
    the model is calibrated) are accumulated per row and inverted to a distance.

    Raises:
        EmptyInputError: the bank holds no rows
    """
    if bank.rows == 0:
        raise EmptyInputError(f"Bucket {bank.bucket_id} bank is empty")
    if model.slice_width != bank.device.array_cols:
        raise ConfigError("Current model slice width must equal the array column count")
    per_slice = model.corrected(model.current(slice_distances(bank.stored, query, model.slice_width)))
    accumulated = per_slice.sum(axis=1)
    ledger.charge_search(bank.rows, bank.dim)
    return SearchResult(accumulated, model.distance_estimate(accumulated))


def _tournament(index: np.ndarray, current: np.ndarray) -> Tuple[int, float, int]:
    stages = 0
    while index.size > 1:
        paired = index.size - index.size % 2
        a_i, b_i = index[0:paired:2], index[1:paired:2]
        a_c, b_c = current[0:paired:2], current[1:paired:2]
        take_b = (b_c < a_c) | ((b_c == a_c) & (b_i < a_i))
        next_i = np.where(take_b, b_i, a_i)
        next_c = np.where(take_b, b_c, a_c)
        if paired < index.size:
            next_i = np.append(next_i, index[-1])
            next_c = np.append(next_c, current[-1])
        index, current = next_i, next_c
        stages += 1
    return int(index[0]), float(current[0]), stages


def lta_select(currents: Sequence[Tuple[int, float]],
               ledger: Optional[EnergyLatencyLedger] = None) -> Tuple[int, float]:
    """
    Loser-takes-all tree over (index, current) pairs

    Returns the minimum current with its index; equal currents resolve to the
    smaller index. The tree has ceil(log2(n)) stages.
    """
    if len(currents) == 0:
        raise EmptyInputError("LTA selection over an empty list")
    index = np.fromiter((i for i, _ in currents), dtype=np.int64, count=len(currents))
    current = np.fromiter((c for _, c in currents), dtype=np.float64, count=len(currents))
    winner, value, stages = _tournament(index, current)
    if ledger is not None:
        ledger.charge_lta(stages)
    return winner, value


def lta_select_rows(currents: np.ndarray, ledger: Optional[EnergyLatencyLedger] = None) -> Tuple[int, float]:
    """lta_select where the index of each current is its row position"""
    currents = np.asarray(currents, dtype=np.float64)
    if currents.size == 0:
        raise EmptyInputError("LTA selection over an empty list")
    winner, value, stages = _tournament(np.arange(currents.size, dtype=np.int64), currents)
    if ledger is not None:
        ledger.charge_lta(stages)
    return winner, value


def dry_run_write(rows_per_bucket: Sequence[int], dim: int, ledger: EnergyLatencyLedger) -> None:
    """
    Price loading buckets of the given sizes without materializing hypervectors

    Every bucket starts on fresh arrays, so the elapsed time is set by the
    fullest array: min(largest bucket, array_rows) sequential row writes.
    """
    total = int(sum(rows_per_bucket))
    if total == 0:
        return
    per_array = min(max(rows_per_bucket), ledger.device.array_rows)
    ledger.charge_write(total, dim, per_array * ledger.device.write_latency_per_row_ns)


def dry_run_search(rows: int, dim: int, ledger: EnergyLatencyLedger) -> None:
    """Price one query searched against `rows` stored rows, including its LTA tree"""
    ledger.charge_search(rows, dim)
    ledger.charge_lta(math.ceil(math.log2(rows)) if rows > 1 else 0)

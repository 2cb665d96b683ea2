"""
Bucket-wise query scheduling over a bounded CAM.

Queries wait in per-bucket FIFOs. Each cycle every resident bucket with a
pending query dispatches exactly one; afterwards missing buckets are brought
in, evicting least-frequently-used buckets. Evicted images go to a bounded
bucket cache, and main memory backs every bucket.
"""

import logging
import math
from collections import Counter, OrderedDict, deque
from dataclasses import dataclass, field
from functools import partial
from enum import Enum
from typing import Callable, Deque, Dict, Iterable, List, Optional, Protocol, Sequence, Set, Tuple

import numpy as np

from core.cam_sim import (CamBank, CurrentModel, DeviceParams, EnergyLatencyLedger, SearchResult, load_image,
                          search)
from core.errors import CapacityError, InvariantError
from core.hdc_core import Hypervector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QueryRecord:
    spectrum_id: str
    bucket_id: int
    hv: Hypervector
    seq: int


class SchedulerMode(Enum):
    SERIAL = 'serial'
    PARALLEL = 'parallel'


@dataclass(frozen=True)
class SchedulerConfig:
    mode: SchedulerMode = SchedulerMode.PARALLEL
    cam_capacity_bits: int = 2 ** 32
    cache_capacity_rows: int = 2 ** 20
    cache_ns_per_row: float = 1.0
    cache_energy_per_bit_fj: float = 0.0
    main_memory_bandwidth_gbps: float = 16.0
    main_memory_fixed_ns: float = 100.0
    main_memory_energy_per_bit_fj: float = 0.0


class BucketCatalog(Protocol):
    """What the scheduler needs from the cluster store"""

    def row_count(self, bucket_id: int) -> int: ...

    def bank_image(self, bucket_id: int) -> Tuple[np.ndarray, List[int]]: ...

    def dispatch(self, q: QueryRecord, bank: CamBank, result: Optional[SearchResult],
                 ledger: EnergyLatencyLedger, reserve_row: Optional[Callable[[], None]] = None): ...


class BucketCache:
    """Row images of evicted buckets, bounded in rows; the oldest insertion is dropped first"""

    def __init__(self, capacity_rows: int):
        self.capacity_rows = capacity_rows
        self._images: 'OrderedDict[int, Tuple[np.ndarray, List[int]]]' = OrderedDict()
        self.rows = 0

    def __contains__(self, bucket_id: int) -> bool:
        return bucket_id in self._images

    def __len__(self) -> int:
        return len(self._images)

    def put(self, bucket_id: int, image: Tuple[np.ndarray, List[int]]) -> None:
        self.discard(bucket_id)
        size = len(image[1])
        if size > self.capacity_rows:
            logger.debug("Bucket %d (%d rows) does not fit the bucket cache", bucket_id, size)
            return
        while self.rows + size > self.capacity_rows:
            _, (_, dropped) = self._images.popitem(last=False)
            self.rows -= len(dropped)
        self._images[bucket_id] = image
        self.rows += size

    def get(self, bucket_id: int) -> Optional[Tuple[np.ndarray, List[int]]]:
        return self._images.get(bucket_id)

    def discard(self, bucket_id: int) -> None:
        image = self._images.pop(bucket_id, None)
        if image is not None:
            self.rows -= len(image[1])


@dataclass
class ResidencyState:
    capacity_arrays: int
    cache: BucketCache
    resident: Dict[int, CamBank] = field(default_factory=dict)
    freq: Counter = field(default_factory=Counter)
    fifo: Dict[int, Deque[QueryRecord]] = field(default_factory=dict)

    @property
    def used_arrays(self) -> int:
        return sum(bank.arrays for bank in self.resident.values())

    @property
    def free_arrays(self) -> int:
        return self.capacity_arrays - self.used_arrays

    def pending(self) -> int:
        return sum(len(q) for q in self.fifo.values())

    def pending_buckets(self) -> List[int]:
        return sorted(b for b, q in self.fifo.items() if q)


@dataclass
class CycleReport:
    cycle: int
    dispatches: List[Dict] = field(default_factory=list)
    evictions: List[int] = field(default_factory=list)
    loads: List[Dict] = field(default_factory=list)
    parallel_dispatch_ns: float = 0.0
    serial_dispatch_ns: float = 0.0
    update_ns: float = 0.0
    load_ns: float = 0.0
    elapsed_ns: float = 0.0

    def to_dict(self) -> Dict:
        return {
            'cycle': self.cycle,
            'dispatches': self.dispatches,
            'evictions': self.evictions,
            'loads': self.loads,
            'parallel_dispatch_ns': self.parallel_dispatch_ns,
            'serial_dispatch_ns': self.serial_dispatch_ns,
            'update_ns': self.update_ns,
            'load_ns': self.load_ns,
            'elapsed_ns': self.elapsed_ns,
        }


class Scheduler:
    """Cycle-synchronous coordinator owning the residency map and the run ledger"""

    def __init__(self, catalog: BucketCatalog, dim: int, device: DeviceParams, model: CurrentModel,
                 config: SchedulerConfig = SchedulerConfig(), ledger: Optional[EnergyLatencyLedger] = None,
                 on_cycle: Optional[Callable[[CycleReport], None]] = None):
        self.catalog = catalog
        self.dim = dim
        self.device = device
        self.model = model
        self.config = config
        self.ledger = ledger if ledger is not None else EnergyLatencyLedger(device)
        self.on_cycle = on_cycle
        array_bits = device.array_rows * device.array_cols
        self.state = ResidencyState(config.cam_capacity_bits // array_bits, BucketCache(config.cache_capacity_rows))
        self.col_slices = dim // device.array_cols
        self.cycle = 0
        self.admitted = 0
        self.dispatched = 0
        self.parallel_dispatch_ns = 0.0
        self.serial_dispatch_ns = 0.0
        self.active_cycles = 0
        self._seq = 0

    def admit(self, queries: Iterable[QueryRecord]) -> ResidencyState:
        """Append queries to their bucket FIFOs in arrival order"""
        for q in queries:
            self.state.fifo.setdefault(q.bucket_id, deque()).append(q)
            self.admitted += 1
            self._seq = max(self._seq, q.seq + 1)
        return self.state

    def make_queries(self, items: Iterable[Tuple[str, int, Hypervector]]) -> List[QueryRecord]:
        """Number (spectrum id, bucket, hv) triples with continuing arrival sequence numbers"""
        queries = []
        for spectrum_id, bucket_id, hv in items:
            queries.append(QueryRecord(spectrum_id, bucket_id, hv, self._seq))
            self._seq += 1
        return queries

    def arrays_for(self, rows: int) -> int:
        return max(1, math.ceil(rows / self.device.array_rows)) * self.col_slices

    def prime(self) -> List[int]:
        """
        Initial residency: load pending buckets smallest first while they fit, without eviction

        Returns:
            Buckets loaded
        """
        order = sorted(self.state.pending_buckets(), key=lambda b: (self.catalog.row_count(b), b))
        loaded = []
        for b in order:
            if b in self.state.resident:
                continue
            if self.arrays_for(self.catalog.row_count(b)) > self.state.free_arrays:
                continue
            self._load(b, self.ledger)
            loaded.append(b)
        logger.info("Initial residency: %d of %d pending buckets loaded", len(loaded), len(order))
        self.check_capacity()
        return loaded

    def _evict_victim(self, protected: Set[int]) -> Optional[int]:
        candidates = [b for b in self.state.resident if b not in protected]
        if not candidates:
            return None
        return min(candidates, key=lambda b: (self.state.freq[b], self.state.resident[b].rows, b))

    def evict(self, bucket_id: int) -> None:
        """Drop a bucket from CAM; its rows persist in the bucket cache at no write cost"""
        bank = self.state.resident.pop(bucket_id)
        self.state.cache.put(bucket_id, bank.image())
        logger.debug("Evicted bucket %d (%d rows, freq %d)", bucket_id, bank.rows, self.state.freq[bucket_id])

    def _make_room(self, arrays: int, protected: Set[int], evicted: List[int]) -> bool:
        while self.state.free_arrays < arrays:
            victim = self._evict_victim(protected)
            if victim is None:
                return False
            self.evict(victim)
            evicted.append(victim)
        return True

    def _load(self, bucket_id: int, ledger: EnergyLatencyLedger) -> Dict:
        rows = self.catalog.row_count(bucket_id)
        n_bytes = rows * self.dim // 8
        image = self.state.cache.get(bucket_id)
        source = 'cache' if image is not None else 'main_memory'
        if image is None:
            image = self.catalog.bank_image(bucket_id)
        if len(image[1]) != rows:
            raise InvariantError(f"Bucket {bucket_id} image has {len(image[1])} rows, catalog has {rows}")
        if rows:
            if source == 'cache':
                ns = rows * self.config.cache_ns_per_row
                energy = rows * self.dim * self.config.cache_energy_per_bit_fj
            else:
                ns = self.config.main_memory_fixed_ns + n_bytes / self.config.main_memory_bandwidth_gbps
                energy = rows * self.dim * self.config.main_memory_energy_per_bit_fj
            ledger.charge_transfer(source, n_bytes, ns, energy)
        bank = CamBank(bucket_id, self.dim, self.device, row_capacity=rows)
        load_image(bank, image[0], image[1], ledger)
        self.state.resident[bucket_id] = bank
        logger.debug("Loaded bucket %d (%d rows) from %s", bucket_id, rows, source)
        return {'bucket': bucket_id, 'rows': rows, 'source': source}

    def ensure_resident(self, bucket_id: int, protected: Sequence[int] = (),
                        ledger: Optional[EnergyLatencyLedger] = None) -> Tuple[Optional[CamBank], List[int]]:
        """
        Make a bucket resident, evicting LFU buckets (fewer rows first on equal frequency)

        Args:
            bucket_id: Bucket to load
            protected: Buckets that must not be evicted now
            ledger: Ledger charged for transfer and row writes; defaults to the run ledger

        Returns:
            (bank, evicted buckets); bank is None when the protected set leaves no room

        Raises:
            CapacityError: the bucket alone exceeds the CAM
        """
        bank, evicted, _ = self._ensure(bucket_id, protected, ledger if ledger is not None else self.ledger)
        return bank, evicted

    def _ensure(self, bucket_id: int, protected: Iterable[int],
                ledger: EnergyLatencyLedger) -> Tuple[Optional[CamBank], List[int], Optional[Dict]]:
        if bucket_id in self.state.resident:
            return self.state.resident[bucket_id], [], None
        needed = self.arrays_for(self.catalog.row_count(bucket_id))
        if needed > self.state.capacity_arrays:
            raise CapacityError(bucket_id, needed - self.state.capacity_arrays, 'arrays')
        evicted: List[int] = []
        if not self._make_room(needed, set(protected) | {bucket_id}, evicted):
            return None, evicted, None
        load = self._load(bucket_id, ledger)
        return self.state.resident[bucket_id], evicted, load

    def _ensure_free_row(self, bank: CamBank, protected: Set[int], evicted: List[int]) -> None:
        if bank.free_rows:
            return
        if not self._make_room(self.col_slices, protected, evicted):
            raise CapacityError(bank.bucket_id, self.col_slices - self.state.free_arrays, 'arrays')
        bank.grow(1)

    def step(self) -> CycleReport:
        """
        One cycle: dispatch one query per resident bucket, then load waiting buckets

        Buckets loaded in this cycle dispatch from the next cycle on.
        """
        self.cycle += 1
        report = CycleReport(self.cycle)
        active = [b for b in sorted(self.state.resident) if self.state.fifo.get(b)]
        protected = set(active)

        subs = []
        for b in active:
            bank = self.state.resident[b]
            q = self.state.fifo[b].popleft()
            sub = self.ledger.fork()
            result = search(bank, q.hv, self.model, sub) if bank.rows else None
            reserve = partial(self._ensure_free_row, bank, protected, report.evictions)
            assignment = self.catalog.dispatch(q, bank, result, sub, reserve_row=reserve)
            self.state.freq[b] += 1
            self.dispatched += 1
            subs.append(sub)
            report.dispatches.append({'seq': q.seq, **assignment.to_dict()})

        for sub in subs:
            self.ledger.merge(sub, latency=False)
        if subs:
            critical = max(subs, key=lambda s: s.dispatch_ns)
            report.parallel_dispatch_ns = critical.dispatch_ns
            report.serial_dispatch_ns = sum(s.dispatch_ns for s in subs)
            self.parallel_dispatch_ns += report.parallel_dispatch_ns
            self.serial_dispatch_ns += report.serial_dispatch_ns
            self.active_cycles += 1
            if self.config.mode is SchedulerMode.PARALLEL:
                report.update_ns = max(s.write_ns for s in subs)
                self.ledger.add_latency(search=critical.search_ns, lta=critical.lta_ns,
                                        decision=critical.decision_ns, write=report.update_ns)
            else:
                report.update_ns = sum(s.write_ns for s in subs)
                for s in subs:
                    self.ledger.add_latency(search=s.search_ns, lta=s.lta_ns, decision=s.decision_ns,
                                            write=s.write_ns)

        loader = self.ledger.fork()
        waiting = [b for b in self.state.pending_buckets() if b not in self.state.resident]
        waiting.sort(key=lambda b: (self.state.fifo[b][0].seq, b))
        for b in waiting:
            bank, evicted, load = self._ensure(b, protected, loader)
            report.evictions.extend(evicted)
            if bank is not None:
                protected.add(b)
                report.loads.append(load)
        self.ledger.merge(loader)
        report.load_ns = loader.total_ns
        dispatch_ns = (report.parallel_dispatch_ns if self.config.mode is SchedulerMode.PARALLEL
                       else report.serial_dispatch_ns)
        report.elapsed_ns = dispatch_ns + report.update_ns + report.load_ns

        self.check_capacity()
        if self.dispatched + self.state.pending() != self.admitted:
            raise InvariantError("Dispatched plus pending queries differ from admitted queries")
        if self.on_cycle is not None:
            self.on_cycle(report)
        return report

    def run(self, max_cycles: Optional[int] = None) -> List[CycleReport]:
        """Step until every FIFO is empty"""
        reports = []
        while self.state.pending():
            if max_cycles is not None and len(reports) >= max_cycles:
                break
            report = self.step()
            if not report.dispatches and not report.loads:
                raise InvariantError(f"Scheduler stalled at cycle {report.cycle} "
                                     f"with {self.state.pending()} pending queries")
            reports.append(report)
        logger.info("Scheduler finished: %d queries in %d cycles", self.dispatched, self.cycle)
        return reports

    def check_capacity(self) -> None:
        if self.state.used_arrays > self.state.capacity_arrays:
            raise InvariantError(f"CAM capacity violated: {self.state.used_arrays} arrays in use, "
                                 f"{self.state.capacity_arrays} available")

    @property
    def parallel_speedup(self) -> float:
        """Serial over parallel dispatch latency of this run"""
        return self.serial_dispatch_ns / self.parallel_dispatch_ns if self.parallel_dispatch_ns else 1.0

    @property
    def mean_concurrency(self) -> float:
        return self.dispatched / self.active_cycles if self.active_cycles else 0.0

    def summary(self) -> Dict:
        return {
            'mode': self.config.mode.value,
            'cycles': self.cycle,
            'admitted': self.admitted,
            'dispatched': self.dispatched,
            'parallel_dispatch_ns': self.parallel_dispatch_ns,
            'serial_dispatch_ns': self.serial_dispatch_ns,
            'parallel_speedup': self.parallel_speedup,
            'mean_concurrency': self.mean_concurrency,
            'resident_buckets': len(self.state.resident),
            'cached_buckets': len(self.state.cache),
        }

"""
Central configuration settings for camspec

Precedence: CLI flag > environment (CAMSPEC_<KEY>) > config file (key=value) > default
"""

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional

from dotenv import dotenv_values

from core.cam_sim import CurrentMode, CurrentModel, DeviceParams, calibrate
from core.encoder import BucketParams, EncoderConfig
from core.errors import CamspecError, ConfigError
from core.scheduler import SchedulerConfig, SchedulerMode
from core.spectra_io import PreprocessConfig, SyntheticConfig, synthetic_config_dict

# Base directory
BASE_DIR = Path(__file__).parent.parent

ENV_PREFIX = 'CAMSPEC_'

DEFAULTS: Dict[str, str] = {
    # Hypervectors and seeds (ID/LEVEL/TIE seeds derive from SEED when empty)
    'HV_DIM': '2048',
    'SEED': '2024',
    'ID_SEED': '',
    'LEVEL_SEED': '',
    'TIE_SEED': '',

    # Preprocessing and encoding
    'MZ_BIN_WIDTH': '1.0005079',
    'MZ_MIN': '200.0',
    'MZ_MAX': '2000.0',
    'INTENSITY_LEVELS': '64',
    'TOP_N_PEAKS': '50',
    'MIN_PEAKS': '5',
    'CHARGE_MASS': '1.00794',
    'BUCKET_WIDTH': '1.0005079',

    # CAM device and peripherals
    'DEVICE_PROFILE': 'sot_mram',
    'CURRENT_MODEL': 'ideal',
    'PARASITIC_ALPHA': '0.002',
    'UNIT_CURRENT': '1.0',
    'CALIBRATE': 'true',
    'LTA_STAGE_LATENCY_NS': '0.1',
    'DECISION_LATENCY_NS': '0.1',

    # Memory hierarchy
    'CAM_CAPACITY_BITS': '4294967296',
    'CACHE_CAPACITY_ROWS': '1048576',
    'CACHE_NS_PER_ROW': '1.0',
    'CACHE_ENERGY_PER_BIT_FJ': '0.0',
    'MAIN_MEMORY_BANDWIDTH_GBPS': '16.0',
    'MAIN_MEMORY_FIXED_NS': '100.0',
    'MAIN_MEMORY_ENERGY_PER_BIT_FJ': '0.0',

    # Clustering
    'REWRITE_PERIOD': '16',
    'LINK_THRESHOLD': '600',
    'THRESHOLD_PERCENTILE': '95',
    'THRESHOLD_SLACK': '1.0',
    'MIN_CLUSTERS_FOR_BUCKET_THRESHOLD': '3',
    'SCHEDULER_MODE': 'parallel',
    'INITIAL_FRACTION': '0.6',
    'COMPARE_RECLUSTER': 'true',

    # Synthetic generator
    'SYN_PEPTIDES': '500',
    'SYN_SPECTRA_PER_PEPTIDE': '10',
    'SYN_PEAKS': '40',
    'SYN_DROPOUT': '0.1',
    'SYN_MZ_JITTER': '0.01',
    'SYN_INTENSITY_JITTER': '0.1',
    'SYN_PRECURSOR_MIN': '400.0',
    'SYN_PRECURSOR_MAX': '1200.0',
    'SYN_CHARGES': '2,3',
    'SYN_SHUFFLE': 'true',
    'SYN_SIBLING_FRACTION': '0.0',
    'SYN_SIBLING_SHARED': '0.7',

    # Catalog-only dry run
    'DRY_RUN_ROWS': '2000000',
    'DRY_RUN_BUCKETS': '509',
}


def load_settings(config_path: Optional[Path] = None, overrides: Optional[Mapping[str, object]] = None,
                  environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """
    Merge defaults, a key=value config file, environment and CLI overrides

    Args:
        config_path: Optional config file in dotenv syntax
        overrides: CLI values by key; None entries are ignored
        environ: Environment to read CAMSPEC_* variables from (defaults to os.environ)

    Returns:
        Mapping of every known key to its string value

    Raises:
        ConfigError: unreadable file or unknown keys
    """
    settings = dict(DEFAULTS)

    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        values = dotenv_values(path)
        unknown = sorted(k for k in values if k not in DEFAULTS)
        if unknown:
            raise ConfigError(f"Unknown config keys in {path}: {', '.join(unknown)}")
        settings.update({k: v if v is not None else '' for k, v in values.items()})

    environ = os.environ if environ is None else environ
    for key in DEFAULTS:
        value = environ.get(ENV_PREFIX + key)
        if value is not None:
            settings[key] = value

    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"Unknown setting: {key}")
        if value is not None:
            settings[key] = str(value)

    return settings


def _parse(settings: Mapping[str, str], key: str, kind):
    raw = settings[key].strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ('1', 'true', 'yes', 'on'):
                return True
            if lowered in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse '{raw}' as {kind.__name__}")


def _period(settings: Mapping[str, str]) -> float:
    raw = settings['REWRITE_PERIOD'].strip().lower()
    if raw in ('inf', 'infinity', 'never'):
        return math.inf
    value = _parse(settings, 'REWRITE_PERIOD', int)
    if value < 1:
        raise ConfigError(f"REWRITE_PERIOD must be >= 1 or inf, got {value}")
    return value


@dataclass(frozen=True)
class RunConfig:
    """Typed view of the merged settings; echoed into every report"""

    dim: int
    seed: int
    encoder: EncoderConfig
    bucket: BucketParams
    preprocess: PreprocessConfig
    synthetic: SyntheticConfig
    device: DeviceParams
    current_mode: CurrentMode
    parasitic_alpha: float
    unit_current: float
    calibrate: bool
    scheduler: SchedulerConfig
    rewrite_period: float
    link_threshold: int
    threshold_percentile: float
    threshold_slack: float
    min_clusters_for_bucket_threshold: int
    initial_fraction: float
    compare_recluster: bool
    dry_run_rows: int
    dry_run_buckets: int
    settings: Dict[str, str] = field(default_factory=dict, compare=False)

    @classmethod
    def from_settings(cls, settings: Mapping[str, str]) -> 'RunConfig':
        """
        Parse merged settings into a RunConfig

        Raises:
            ConfigError: unparseable values or values out of range
        """
        try:
            return cls._build(settings)
        except ConfigError:
            raise
        except (CamspecError, ValueError, TypeError) as e:
            raise ConfigError(str(e))

    @classmethod
    def _build(cls, s: Mapping[str, str]) -> 'RunConfig':
        dim = _parse(s, 'HV_DIM', int)
        seed = _parse(s, 'SEED', int)

        def seed_of(key: str, offset: int) -> int:
            return _parse(s, key, int) if s[key].strip() else seed + offset

        mz_min, mz_max = _parse(s, 'MZ_MIN', float), _parse(s, 'MZ_MAX', float)
        encoder = EncoderConfig(
            mz_bin_width=_parse(s, 'MZ_BIN_WIDTH', float), mz_low=mz_min, mz_high=mz_max,
            intensity_levels=_parse(s, 'INTENSITY_LEVELS', int), dim=dim,
            id_seed=seed_of('ID_SEED', 1), level_seed=seed_of('LEVEL_SEED', 2), tie_seed=seed_of('TIE_SEED', 3),
        )
        try:
            charges = tuple(int(c) for c in s['SYN_CHARGES'].split(',') if c.strip())
        except ValueError:
            raise ConfigError(f"SYN_CHARGES: expected comma-separated integers, got '{s['SYN_CHARGES']}'")
        synthetic = SyntheticConfig(
            n_peptides=_parse(s, 'SYN_PEPTIDES', int),
            spectra_per_peptide=_parse(s, 'SYN_SPECTRA_PER_PEPTIDE', int),
            peaks_per_spectrum=_parse(s, 'SYN_PEAKS', int),
            dropout_prob=_parse(s, 'SYN_DROPOUT', float),
            mz_jitter_sd=_parse(s, 'SYN_MZ_JITTER', float),
            intensity_jitter_rel=_parse(s, 'SYN_INTENSITY_JITTER', float),
            mz_range=(mz_min, mz_max),
            precursor_mz_range=(_parse(s, 'SYN_PRECURSOR_MIN', float), _parse(s, 'SYN_PRECURSOR_MAX', float)),
            charges=charges,
            shuffle=_parse(s, 'SYN_SHUFFLE', bool),
            sibling_fraction=_parse(s, 'SYN_SIBLING_FRACTION', float),
            sibling_shared_peaks=_parse(s, 'SYN_SIBLING_SHARED', float),
            seed=seed,
        )
        device = DeviceParams.from_profile(
            s['DEVICE_PROFILE'].strip(),
            lta_stage_latency_ns=_parse(s, 'LTA_STAGE_LATENCY_NS', float),
            decision_latency_ns=_parse(s, 'DECISION_LATENCY_NS', float),
        )
        if dim % device.array_cols:
            raise ConfigError(f"HV_DIM={dim} must be a multiple of the CAM array width {device.array_cols}")
        try:
            mode = CurrentMode(s['CURRENT_MODEL'].strip().lower())
        except ValueError:
            raise ConfigError(f"CURRENT_MODEL must be 'ideal' or 'parasitic', got '{s['CURRENT_MODEL']}'")
        try:
            scheduler_mode = SchedulerMode(s['SCHEDULER_MODE'].strip().lower())
        except ValueError:
            raise ConfigError(f"SCHEDULER_MODE must be 'serial' or 'parallel', got '{s['SCHEDULER_MODE']}'")
        scheduler = SchedulerConfig(
            mode=scheduler_mode,
            cam_capacity_bits=_parse(s, 'CAM_CAPACITY_BITS', int),
            cache_capacity_rows=_parse(s, 'CACHE_CAPACITY_ROWS', int),
            cache_ns_per_row=_parse(s, 'CACHE_NS_PER_ROW', float),
            cache_energy_per_bit_fj=_parse(s, 'CACHE_ENERGY_PER_BIT_FJ', float),
            main_memory_bandwidth_gbps=_parse(s, 'MAIN_MEMORY_BANDWIDTH_GBPS', float),
            main_memory_fixed_ns=_parse(s, 'MAIN_MEMORY_FIXED_NS', float),
            main_memory_energy_per_bit_fj=_parse(s, 'MAIN_MEMORY_ENERGY_PER_BIT_FJ', float),
        )
        if scheduler.cam_capacity_bits < device.array_rows * device.array_cols:
            raise ConfigError("CAM_CAPACITY_BITS must hold at least one array")
        if scheduler.main_memory_bandwidth_gbps <= 0:
            raise ConfigError("MAIN_MEMORY_BANDWIDTH_GBPS must be positive")
        fraction = _parse(s, 'INITIAL_FRACTION', float)
        if not 0.0 <= fraction <= 1.0:
            raise ConfigError(f"INITIAL_FRACTION must be in [0, 1], got {fraction}")
        link = _parse(s, 'LINK_THRESHOLD', int)
        if not 0 <= link < dim:
            raise ConfigError(f"LINK_THRESHOLD must be in [0, {dim}), got {link}")

        return cls(
            dim=dim,
            seed=seed,
            encoder=encoder,
            bucket=BucketParams(m_q=_parse(s, 'CHARGE_MASS', float), d_c=_parse(s, 'BUCKET_WIDTH', float)),
            preprocess=PreprocessConfig(mz_min=mz_min, mz_max=mz_max, top_n=_parse(s, 'TOP_N_PEAKS', int),
                                        min_peaks=_parse(s, 'MIN_PEAKS', int)),
            synthetic=synthetic,
            device=device,
            current_mode=mode,
            parasitic_alpha=_parse(s, 'PARASITIC_ALPHA', float),
            unit_current=_parse(s, 'UNIT_CURRENT', float),
            calibrate=_parse(s, 'CALIBRATE', bool),
            scheduler=scheduler,
            rewrite_period=_period(s),
            link_threshold=link,
            threshold_percentile=_parse(s, 'THRESHOLD_PERCENTILE', float),
            threshold_slack=_parse(s, 'THRESHOLD_SLACK', float),
            min_clusters_for_bucket_threshold=_parse(s, 'MIN_CLUSTERS_FOR_BUCKET_THRESHOLD', int),
            initial_fraction=fraction,
            compare_recluster=_parse(s, 'COMPARE_RECLUSTER', bool),
            dry_run_rows=_parse(s, 'DRY_RUN_ROWS', int),
            dry_run_buckets=_parse(s, 'DRY_RUN_BUCKETS', int),
            settings=dict(s),
        )

    def current_model(self) -> CurrentModel:
        """Matchline model for this run, calibrated when PARASITIC and CALIBRATE is on"""
        model = CurrentModel(self.current_mode, self.unit_current, self.parasitic_alpha, self.device.array_cols)
        if self.current_mode is CurrentMode.PARASITIC and self.calibrate:
            model = calibrate(model)
        return model

    def to_dict(self) -> Dict:
        return {
            'dim': self.dim,
            'seed': self.seed,
            'encoder': asdict(self.encoder),
            'bucket': asdict(self.bucket),
            'preprocess': asdict(self.preprocess),
            'synthetic': synthetic_config_dict(self.synthetic),
            'device': self.device.to_dict(),
            'current_model': {'mode': self.current_mode.value, 'alpha': self.parasitic_alpha,
                              'unit_current': self.unit_current, 'calibrate': self.calibrate},
            'scheduler': {**asdict(self.scheduler), 'mode': self.scheduler.mode.value},
            'rewrite_period': 'inf' if math.isinf(self.rewrite_period) else self.rewrite_period,
            'link_threshold': self.link_threshold,
            'threshold': {'percentile': self.threshold_percentile, 'slack': self.threshold_slack,
                          'min_clusters': self.min_clusters_for_bucket_threshold},
            'initial_fraction': self.initial_fraction,
            'compare_recluster': self.compare_recluster,
            'dry_run': {'rows': self.dry_run_rows, 'buckets': self.dry_run_buckets},
        }

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of to_dict()"""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def format_settings(settings: Mapping[str, str]) -> str:
    """Render merged settings for --verbose output"""
    lines = ["Current Settings:", "=" * 60]
    for key in sorted(settings):
        lines.append(f"  {key}: {settings[key]}")
    lines.append("=" * 60)
    return "\n".join(lines)


if __name__ == '__main__':
    print("camspec Configuration")
    print("=" * 60)
    try:
        merged = load_settings()
        config = RunConfig.from_settings(merged)
        print(f"[OK] Settings are valid (config hash {config.config_hash()[:12]})\n")
        print(format_settings(merged))
    except ConfigError as e:
        print(f"[ERROR] Configuration validation failed: {e}")

"""
Spectrum types, preprocessing, synthetic ground-truth generation and MGF/JSONL writers
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, TextIO, Tuple

import numpy as np

from core.errors import ConfigError, SpectrumRejected

logger = logging.getLogger(__name__)

MAX_CHARGE = 8


@dataclass(frozen=True)
class Peak:
    """Centroided fragment peak"""

    mz: float
    intensity: float

    def __post_init__(self):
        if not self.mz > 0:
            raise ValueError(f"Peak m/z must be positive, got {self.mz}")
        if not self.intensity >= 0:
            raise ValueError(f"Peak intensity must be non-negative, got {self.intensity}")


@dataclass(frozen=True)
class Spectrum:
    """MS/MS spectrum with precursor information and an optional ground-truth label"""

    id: str
    precursor_mz: float
    charge: int
    peaks: Tuple[Peak, ...]
    label: Optional[str] = None
    preprocessed: bool = False

    def __post_init__(self):
        if not 1 <= self.charge <= MAX_CHARGE:
            raise ValueError(f"Spectrum '{self.id}': charge must be in [1, {MAX_CHARGE}], got {self.charge}")
        object.__setattr__(self, 'peaks', tuple(self.peaks))

    @property
    def mz_array(self) -> np.ndarray:
        return np.fromiter((p.mz for p in self.peaks), dtype=np.float64, count=len(self.peaks))

    @property
    def intensity_array(self) -> np.ndarray:
        return np.fromiter((p.intensity for p in self.peaks), dtype=np.float64, count=len(self.peaks))

    def to_dict(self) -> Dict:
        return {
            'id': self.id,
            'precursor_mz': self.precursor_mz,
            'charge': self.charge,
            'label': self.label,
            'preprocessed': self.preprocessed,
            'peaks': [[p.mz, p.intensity] for p in self.peaks],
        }


def peaks_from_arrays(mz: np.ndarray, intensity: np.ndarray) -> Tuple[Peak, ...]:
    return tuple(Peak(float(m), float(i)) for m, i in zip(mz, intensity))


@dataclass(frozen=True)
class PreprocessConfig:
    mz_min: float = 200.0
    mz_max: float = 2000.0
    top_n: int = 50
    min_peaks: int = 5

    def __post_init__(self):
        if not self.mz_min < self.mz_max:
            raise ConfigError(f"Preprocess window requires mz_min < mz_max, got [{self.mz_min}, {self.mz_max})")
        if self.top_n < 1 or self.min_peaks < 1:
            raise ConfigError("top_n and min_peaks must be positive")


def is_normalized(s: Spectrum, cfg: PreprocessConfig = PreprocessConfig()) -> bool:
    """True if s is a fixed point of preprocess: windowed, at most top_n peaks, strictly ascending m/z,
    intensities in [0, 1] with maximum exactly 1"""
    mz, intensity = s.mz_array, s.intensity_array
    if not cfg.min_peaks <= mz.size <= cfg.top_n:
        return False
    return bool(mz[0] >= cfg.mz_min and mz[-1] < cfg.mz_max
                and np.all(np.diff(mz) > 0)
                and intensity.min() >= 0.0 and intensity.max() == 1.0)


def preprocess(s: Spectrum, cfg: PreprocessConfig = PreprocessConfig()) -> Spectrum:
    """
    Window, filter and normalize a raw spectrum

    Peaks outside [mz_min, mz_max) are dropped, the top_n most intense are
    kept, intensities become sqrt(intensity) scaled to unit maximum and the
    peaks are re-sorted by m/z. Duplicate m/z values keep the most intense peak.

    Args:
        s: Raw spectrum
        cfg: Preprocessing parameters

    Returns:
        A new spectrum marked as preprocessed. Input that is already in normalized form
        (see is_normalized) keeps its peaks, so a second pass or an MGF round-trip is a no-op

    Raises:
        SpectrumRejected: fewer than min_peaks peaks survive or no peak has positive intensity
    """
    if s.preprocessed:
        return s
    if is_normalized(s, cfg):
        return replace(s, preprocessed=True)

    mz = s.mz_array
    intensity = s.intensity_array
    keep = (mz >= cfg.mz_min) & (mz < cfg.mz_max)
    mz, intensity = mz[keep], intensity[keep]

    if mz.size:
        # most intense first, m/z breaks ties; first occurrence of each m/z wins
        order = np.lexsort((mz, -intensity))
        mz, intensity = mz[order], intensity[order]
        _, first = np.unique(mz, return_index=True)
        first.sort()
        mz, intensity = mz[first][:cfg.top_n], intensity[first][:cfg.top_n]

    if mz.size < cfg.min_peaks:
        raise SpectrumRejected(s.id, f"{mz.size} peaks in [{cfg.mz_min}, {cfg.mz_max}), need {cfg.min_peaks}")

    scaled = np.sqrt(intensity)
    top = scaled.max()
    if top <= 0:
        raise SpectrumRejected(s.id, "no peak with positive intensity")
    scaled = scaled / top

    order = np.argsort(mz, kind='stable')
    return replace(s, peaks=peaks_from_arrays(mz[order], scaled[order]), preprocessed=True)


def preprocess_all(spectra: Iterable[Spectrum],
                   cfg: PreprocessConfig = PreprocessConfig()) -> Tuple[List[Spectrum], List[SpectrumRejected]]:
    """Preprocess a batch, collecting rejections instead of dropping them silently"""
    kept, rejected = [], []
    for s in spectra:
        try:
            kept.append(preprocess(s, cfg))
        except SpectrumRejected as e:
            logger.warning("%s", e)
            rejected.append(e)
    if rejected:
        logger.info("Preprocessing kept %d spectra, rejected %d", len(kept), len(rejected))
    return kept, rejected


@dataclass(frozen=True)
class SyntheticConfig:
    """Desk-scale ground-truth generator parameters"""

    n_peptides: int = 500
    spectra_per_peptide: int = 10
    peaks_per_spectrum: int = 40
    dropout_prob: float = 0.1
    mz_jitter_sd: float = 0.01
    intensity_jitter_rel: float = 0.1
    mz_range: Tuple[float, float] = (200.0, 2000.0)
    precursor_mz_range: Tuple[float, float] = (400.0, 1200.0)
    charges: Tuple[int, ...] = (2, 3)
    shuffle: bool = True
    seed: int = 2024
    sibling_fraction: float = 0.0
    sibling_shared_peaks: float = 0.7

    def __post_init__(self):
        object.__setattr__(self, 'mz_range', tuple(self.mz_range))
        object.__setattr__(self, 'precursor_mz_range', tuple(self.precursor_mz_range))
        object.__setattr__(self, 'charges', tuple(self.charges))
        if self.n_peptides < 1 or self.spectra_per_peptide < 1 or self.peaks_per_spectrum < 1:
            raise ConfigError("n_peptides, spectra_per_peptide and peaks_per_spectrum must be positive")
        for name in ('dropout_prob', 'intensity_jitter_rel', 'sibling_fraction', 'sibling_shared_peaks'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.mz_jitter_sd < 0:
            raise ConfigError(f"mz_jitter_sd must be non-negative, got {self.mz_jitter_sd}")
        for name in ('mz_range', 'precursor_mz_range'):
            low, high = getattr(self, name)
            if not 0 < low < high:
                raise ConfigError(f"{name} requires 0 < low < high, got {getattr(self, name)}")
        if not self.charges or any(not 1 <= c <= MAX_CHARGE for c in self.charges):
            raise ConfigError(f"charges must be in [1, {MAX_CHARGE}], got {self.charges}")


@dataclass(frozen=True)
class PeptideTemplate:
    label: str
    precursor_mz: float
    charge: int
    mz: np.ndarray = field(repr=False)
    intensity: np.ndarray = field(repr=False)


def _sibling(parent: PeptideTemplate, label: str, cfg: SyntheticConfig,
             rng: np.random.Generator) -> PeptideTemplate:
    n = parent.mz.size
    redraw = rng.random(n) >= cfg.sibling_shared_peaks
    mz = np.where(redraw, rng.uniform(*cfg.mz_range, n), parent.mz)
    intensity = np.where(redraw, rng.lognormal(mean=0.0, sigma=1.0, size=n) * 1000.0, parent.intensity)
    order = np.argsort(mz, kind='stable')
    return PeptideTemplate(label, parent.precursor_mz, parent.charge, mz[order], intensity[order])


def make_templates(cfg: SyntheticConfig, rng: np.random.Generator) -> List[PeptideTemplate]:
    """
    Draw one noise-free template spectrum per peptide

    With sibling_fraction > 0, that share of peptides copies an earlier template's precursor and
    charge and keeps each of its peaks with probability sibling_shared_peaks, redrawing the rest.
    Siblings land in their parent's bucket and are the confusable pairs a clustering can merge.
    """
    low, high = cfg.mz_range
    p_low, p_high = cfg.precursor_mz_range
    templates = []
    for i in range(cfg.n_peptides):
        # consumes no randomness when sibling_fraction is 0
        if cfg.sibling_fraction and templates and rng.random() < cfg.sibling_fraction:
            templates.append(_sibling(templates[int(rng.integers(len(templates)))], f"peptide_{i}", cfg, rng))
            continue
        mz = np.sort(rng.uniform(low, high, cfg.peaks_per_spectrum))
        intensity = rng.lognormal(mean=0.0, sigma=1.0, size=cfg.peaks_per_spectrum) * 1000.0
        templates.append(PeptideTemplate(
            label=f"peptide_{i}",
            precursor_mz=float(rng.uniform(p_low, p_high)),
            charge=int(rng.choice(cfg.charges)),
            mz=mz,
            intensity=intensity,
        ))
    return templates


def replicate(template: PeptideTemplate, cfg: SyntheticConfig,
              rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Noisy replica of a template, peaks kept in template order

    Each peak survives with probability 1 - dropout_prob, its m/z moves by
    N(0, mz_jitter_sd) and its intensity is scaled by 1 + N(0, intensity_jitter_rel).
    """
    n = template.mz.size
    survive = rng.random(n) >= cfg.dropout_prob
    mz = template.mz + rng.normal(0.0, cfg.mz_jitter_sd, n) if cfg.mz_jitter_sd else template.mz.copy()
    scale = 1.0 + rng.normal(0.0, cfg.intensity_jitter_rel, n) if cfg.intensity_jitter_rel else np.ones(n)
    intensity = np.clip(template.intensity * scale, 0.0, None)
    keep = survive & (mz > 0)
    return mz[keep], intensity[keep]


def generate_synthetic(cfg: SyntheticConfig = SyntheticConfig()) -> List[Spectrum]:
    """
    Labeled synthetic spectra: spectra_per_peptide noisy replicas of each template

    Returns:
        n_peptides * spectra_per_peptide spectra, labeled with their peptide, shuffled when cfg.shuffle
    """
    rng = np.random.default_rng(cfg.seed)
    spectra = []
    for template in make_templates(cfg, rng):
        for r in range(cfg.spectra_per_peptide):
            mz, intensity = replicate(template, cfg, rng)
            order = np.argsort(mz, kind='stable')
            spectra.append(Spectrum(
                id=f"{template.label}.{r}",
                precursor_mz=template.precursor_mz,
                charge=template.charge,
                peaks=peaks_from_arrays(mz[order], intensity[order]),
                label=template.label,
            ))
    if cfg.shuffle:
        spectra = [spectra[i] for i in rng.permutation(len(spectra))]
    logger.info("Generated %d synthetic spectra for %d peptides", len(spectra), cfg.n_peptides)
    return spectra


def split_spectra(spectra: List[Spectrum], fraction: float) -> Tuple[List[Spectrum], List[Spectrum]]:
    """Split in arrival order: the first `fraction` for Phase-I setup, the rest as queries"""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"fraction must be in [0, 1], got {fraction}")
    cut = int(math.floor(len(spectra) * fraction))
    return spectra[:cut], spectra[cut:]


def write_mgf(spectra: Iterable[Spectrum], stream: TextIO) -> int:
    """
    Serialize spectra to the MGF subset read by parsers.mgf_parser

    Floats use repr() so a parse of the output reproduces every field exactly.

    Returns:
        Number of blocks written
    """
    count = 0
    for s in spectra:
        stream.write("BEGIN IONS\n")
        stream.write(f"TITLE={s.id}\n")
        stream.write(f"PEPMASS={s.precursor_mz!r}\n")
        stream.write(f"CHARGE={s.charge}+\n")
        if s.label is not None:
            stream.write(f"SEQ={s.label}\n")
        for p in s.peaks:
            stream.write(f"{p.mz!r} {p.intensity!r}\n")
        stream.write("END IONS\n\n")
        count += 1
    return count


def save_mgf(spectra: Iterable[Spectrum], path: Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        return write_mgf(spectra, f)


def save_jsonl(spectra: Iterable[Spectrum], path: Path) -> int:
    """JSON-lines debugging dump, one object per spectrum"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for s in spectra:
            f.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")
            count += 1
    return count


def save_labels(spectra: Iterable[Spectrum], path: Path) -> int:
    """Tab-separated `spectrum_id<TAB>label` file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write("spectrum_id\tlabel\n")
        for s in spectra:
            f.write(f"{s.id}\t{'' if s.label is None else s.label}\n")
            count += 1
    return count


def synthetic_config_dict(cfg: SyntheticConfig) -> Dict:
    data = asdict(cfg)
    data['mz_range'] = list(cfg.mz_range)
    data['precursor_mz_range'] = list(cfg.precursor_mz_range)
    data['charges'] = list(cfg.charges)
    return data

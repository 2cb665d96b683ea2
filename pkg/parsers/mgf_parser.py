"""
MGF (Mascot Generic Format) subset parser
Reads: BEGIN IONS / TITLE= / PEPMASS= / CHARGE= / SEQ= / "mz intensity" lines / END IONS
Output: Spectrum objects, with malformed blocks reported by line number

A line-numbered validation pass screens every block; the blocks that pass are
handed to pyteomics.mgf for the actual parameter and peak parsing.
"""

import io
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, TextIO, Tuple, Union

from pyteomics import mgf

from core.errors import InputError, MgfFormatError
from core.spectra_io import MAX_CHARGE, Peak, Spectrum, peaks_from_arrays, save_jsonl

logger = logging.getLogger(__name__)

COMMENT_PREFIXES = ('#', ';', '!', '/')
LABEL_KEYS = ('seq', 'label')


class MgfParser:
    """Parser for MGF peak-list text"""

    def __init__(self, source: Union[str, Path, TextIO, Iterable[str]]):
        """
        Initialize parser with a path or an already-open text stream

        Args:
            source: Path to an .mgf file, or any iterable of lines
        """
        self.source = source
        self.source_name = str(source) if isinstance(source, (str, Path)) else '<stream>'
        self.diagnostics: List[MgfFormatError] = []

    def _lines(self) -> Iterable[str]:
        if isinstance(self.source, (str, Path)):
            try:
                with open(self.source, 'r', encoding='utf-8') as f:
                    yield from f
            except FileNotFoundError:
                raise InputError(f"File not found: {self.source}")
        else:
            yield from self.source

    def parse(self) -> List[Spectrum]:
        """
        Parse every block, collecting malformed ones in self.diagnostics

        Returns:
            Spectra in file order
        """
        blocks = self.validate()
        if not blocks:
            return []
        text = ''.join(block['text'] for block in blocks)
        with mgf.read(io.StringIO(text), use_header=False, convert_arrays=1, read_charges=False,
                      use_index=False) as reader:
            entries = list(reader)
        if len(entries) != len(blocks):
            raise InputError(f"{self.source_name}: {len(blocks)} valid blocks but {len(entries)} parsed")
        return [self._spectrum(block, entry) for block, entry in zip(blocks, entries)]

    def validate(self) -> List[Dict]:
        """
        Line-numbered screening pass

        Malformed blocks go to self.diagnostics; the rest come back with their
        start line, title and normalized text.
        """
        self.diagnostics = []
        valid: List[Dict] = []
        block: Optional[Dict] = None
        line_no = 0

        for line_no, raw in enumerate(self._lines(), start=1):
            line = raw.strip()
            if not line or line.startswith(COMMENT_PREFIXES):
                continue

            if line == 'BEGIN IONS':
                if block is not None:
                    self._reject(block, "BEGIN IONS before END IONS", line_no)
                block = {'start': line_no, 'params': {}, 'peaks': [], 'lines': [], 'error': None}
                continue

            if line == 'END IONS':
                if block is None:
                    self.diagnostics.append(MgfFormatError("END IONS without BEGIN IONS", line_no))
                    continue
                if self._check(block, line_no):
                    lines = ['BEGIN IONS'] + block['lines'] + ['END IONS']
                    valid.append({'start': block['start'], 'title': self._title(block),
                                  'text': '\n'.join(lines) + '\n\n'})
                block = None
                continue

            if block is None:
                # global parameters are outside the supported subset
                logger.debug("%s:%d: ignoring line outside a block", self.source_name, line_no)
                continue
            if block['error'] is not None:
                continue

            block['lines'].append(line)
            if '=' in line and not line[0].isdigit():
                key, value = line.split('=', 1)
                block['params'][key.strip().upper()] = (value.strip(), line_no)
            else:
                peak = self._parse_peak(line)
                if peak is None:
                    block['error'] = (f"non-numeric peak line '{line}'", line_no)
                else:
                    block['peaks'].append(peak)

        if block is not None:
            self._reject(block, "missing END IONS at end of input", line_no)

        for diag in self.diagnostics:
            logger.warning("%s: %s", self.source_name, diag)
        return valid

    @staticmethod
    def _parse_peak(line: str) -> Optional[Tuple[float, float]]:
        tokens = line.split()
        if len(tokens) < 2:
            return None
        try:
            return float(tokens[0]), float(tokens[1])
        except ValueError:
            return None

    @staticmethod
    def _parse_charge(value: str) -> int:
        text = value.strip()
        if text.endswith('-'):
            raise ValueError("negative charge")
        charge = int(text.rstrip('+'))
        if not 1 <= charge <= MAX_CHARGE:
            raise ValueError(f"charge {charge} outside [1, {MAX_CHARGE}]")
        return charge

    def _title(self, block: Dict) -> Optional[str]:
        title = block['params'].get('TITLE')
        return title[0] if title else None

    def _reject(self, block: Dict, message: str, line_no: int) -> None:
        self.diagnostics.append(MgfFormatError(message, line_no, self._title(block)))

    def _check(self, block: Dict, end_line: int) -> bool:
        """Validate a completed block, reporting the offending line"""
        if block['error'] is not None:
            message, line_no = block['error']
            self._reject(block, message, line_no)
            return False

        params = block['params']
        for required in ('PEPMASS', 'CHARGE'):
            if required not in params:
                self._reject(block, f"missing {required}", block['start'])
                return False

        pepmass, pep_line = params['PEPMASS']
        try:
            float(pepmass.split()[0])
        except (ValueError, IndexError):
            self._reject(block, f"invalid PEPMASS '{pepmass}'", pep_line)
            return False

        charge_text, charge_line = params['CHARGE']
        try:
            self._parse_charge(charge_text)
        except ValueError as e:
            self._reject(block, f"invalid CHARGE '{charge_text}': {e}", charge_line)
            return False

        try:
            for mz, intensity in block['peaks']:
                Peak(mz, intensity)
        except ValueError as e:
            self._reject(block, str(e), end_line)
            return False
        return True

    def _spectrum(self, block: Dict, entry: Dict) -> Spectrum:
        """Spectrum from a pyteomics entry of a block that passed validation"""
        params = entry['params']
        label = next((params[k] for k in LABEL_KEYS if params.get(k)), None)
        return Spectrum(
            id=block['title'] or f"{self.source_name}:{block['start']}",
            precursor_mz=float(params['pepmass'][0]),
            charge=int(params['charge'][0]),
            peaks=peaks_from_arrays(entry['m/z array'], entry['intensity array']),
            label=label,
        )

    def save_to_jsonl(self, output_path: str) -> int:
        """
        Parse and save spectra as a JSON-lines dump

        Args:
            output_path: Path where the dump should be saved

        Returns:
            Number of spectra written
        """
        count = save_jsonl(self.parse(), Path(output_path))
        logger.info("Saved %d spectra to %s", count, output_path)
        return count


def parse_mgf(stream: Union[TextIO, Iterable[str], str]) -> List[Spectrum]:
    """
    Convenience function to parse MGF text

    Args:
        stream: Open text stream, iterable of lines, or the MGF text itself

    Returns:
        Parsed spectra; malformed blocks are logged and skipped
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    return MgfParser(stream).parse()


def parse_mgf_file(path: Union[str, Path]) -> Tuple[List[Spectrum], List[MgfFormatError]]:
    """Parse an MGF file and return spectra together with block diagnostics"""
    parser = MgfParser(Path(path))
    spectra = parser.parse()
    return spectra, parser.diagnostics


def load_labels(path: Union[str, Path]) -> Dict[str, str]:
    """Read a `spectrum_id<TAB>label` file written by core.spectra_io.save_labels"""
    labels = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip('\n')
            if line_no == 1 and line.startswith('spectrum_id'):
                continue
            if not line:
                continue
            parts = line.split('\t')
            if len(parts) != 2:
                raise InputError(f"{path}:{line_no}: expected 'spectrum_id<TAB>label', got '{line}'")
            if parts[1]:
                labels[parts[0]] = parts[1]
    return labels


if __name__ == '__main__':
    import sys

    if len(sys.argv) < 2:
        print("Usage: python -m parsers.mgf_parser <input_file.mgf> [output.jsonl]")
        sys.exit(1)

    try:
        parser = MgfParser(Path(sys.argv[1]))
        result = parser.parse()
        if len(sys.argv) > 2:
            save_jsonl(result, Path(sys.argv[2]))
        print(f"\nSuccessfully parsed '{sys.argv[1]}':")
        print(f"  - Spectra: {len(result)}")
        print(f"  - Rejected blocks: {len(parser.diagnostics)}")
    except InputError as e:
        print(f"Error parsing MGF: {e}", file=sys.stderr)
        sys.exit(1)

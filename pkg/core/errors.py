"""
Exception hierarchy shared by the simulator core and the CLI.

The CLI maps each family to an exit code:
    InputError     -> 1
    ConfigError    -> 2
    InvariantError -> 3
"""

from typing import List, Optional


class CamspecError(Exception):
    """Base class for all simulator errors"""


class InputError(CamspecError, ValueError):
    """Bad user-supplied input (files, spectra, logs)"""


class ConfigError(CamspecError, ValueError):
    """Invalid configuration or mismatched persisted state"""


class InvariantError(CamspecError, RuntimeError):
    """An internal contract was violated"""


class DimensionMismatch(CamspecError, ValueError):
    """Hypervector operands have different dimensions"""

    def __init__(self, left: int, right: int):
        super().__init__(f"Hypervector dimension mismatch: {left} != {right}")
        self.left = left
        self.right = right


class EmptyInputError(CamspecError, ValueError):
    """An operation that needs at least one element received none"""


class SpectrumRejected(InputError):
    """A spectrum failed preprocessing"""

    def __init__(self, spectrum_id: str, reason: str):
        super().__init__(f"Spectrum '{spectrum_id}' rejected: {reason}")
        self.spectrum_id = spectrum_id
        self.reason = reason


class MgfFormatError(InputError):
    """A malformed MGF block"""

    def __init__(self, message: str, line_no: int, title: Optional[str] = None):
        where = f"block '{title}'" if title else "block"
        super().__init__(f"{where} at line {line_no}: {message}")
        self.title = title
        self.line_no = line_no
        self.reason = message


class CapacityError(InvariantError):
    """CAM capacity would be exceeded"""

    def __init__(self, bucket_id: int, deficit: int, unit: str = 'rows'):
        super().__init__(f"Bucket {bucket_id}: CAM capacity exceeded by {deficit} {unit}")
        self.bucket_id = bucket_id
        self.deficit = deficit
        self.unit = unit


class TraceDivergence(InputError):
    """A recorded cycle trace disagrees with a replay of the same run"""

    def __init__(self, path: str, cycle: int, fields: List[str]):
        super().__init__(f"{path}: replay diverges at cycle {cycle} ({', '.join(fields)})")
        self.cycle = cycle
        self.fields = fields

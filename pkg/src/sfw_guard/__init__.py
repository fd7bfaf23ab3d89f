"""Dataset curation pipeline and nine-class safe-for-work guardrail classifier."""

from .corpus import (
    CANONICAL_LABELS,
    Dataset,
    DropReason,
    Label,
    Provenance,
    Record,
    SplitSpec,
    dedup,
    load_dataset,
    parse_label,
    save_dataset,
    stratified_split,
)
from .errors import SfwGuardError

__version__ = "0.1.0"

__all__ = [
    "CANONICAL_LABELS",
    "Dataset",
    "DropReason",
    "Label",
    "Provenance",
    "Record",
    "SfwGuardError",
    "SplitSpec",
    "__version__",
    "dedup",
    "load_dataset",
    "parse_label",
    "save_dataset",
    "stratified_split",
]

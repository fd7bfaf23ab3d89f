"""Label taxonomy, record/dataset model, JSONL persistence, dedup, and stratified splitting.

Datasets are immutable value objects: every operation returns a new value,
so they are safe to share across threads.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .errors import SfwGuardError


class DatasetError(SfwGuardError):
    """Raised for malformed dataset files or invariant violations."""


class Label(str, Enum):
    """The nine-way content taxonomy. safe_for_work is the only non-harm class."""

    PORNOGRAPHY = "pornography"
    HARASSMENT = "harassment"
    SEXIST = "sexist"
    RACIST = "racist"
    RELIGIOUS_INSULT = "religious_insult"
    SELF_HARM = "self_harm"
    PSYCHIATRIC_OR_MENTAL_ILLNESS = "psychiatric_or_mental_illness"
    VIOLENCE = "violence"
    SAFE_FOR_WORK = "safe_for_work"


#: Fixed canonical class order used everywhere a label index matters
#: (classifier rows, confusion matrices, argmax tie-breaking).
CANONICAL_LABELS: tuple[Label, ...] = tuple(Label)

HARM_LABELS: frozenset[Label] = frozenset(CANONICAL_LABELS) - {Label.SAFE_FOR_WORK}

# Closed alias table. Keys are casefolded, whitespace-collapsed, with '-' and
# '_' mapped to spaces, so e.g. "Self-Harm", "self_harm" and "self harm" all
# resolve. Anything not in this table is rejected.
_LABEL_ALIASES: dict[str, Label] = {
    "pornography": Label.PORNOGRAPHY,
    "porn": Label.PORNOGRAPHY,
    "harassment": Label.HARASSMENT,
    "sexist": Label.SEXIST,
    "racist": Label.RACIST,
    "religious insult": Label.RELIGIOUS_INSULT,
    "religion insult": Label.RELIGIOUS_INSULT,
    "self harm": Label.SELF_HARM,
    "psychiatric or mental illness": Label.PSYCHIATRIC_OR_MENTAL_ILLNESS,
    "violence": Label.VIOLENCE,
    "safe for work": Label.SAFE_FOR_WORK,
}


def parse_label(raw: str) -> Label:
    """Resolve a raw label string through the alias table.

    Raises DatasetError for anything outside the closed table.
    """
    if not isinstance(raw, str):
        raise DatasetError(f"label must be a string, got {type(raw).__name__}")
    key = " ".join(raw.replace("-", " ").replace("_", " ").casefold().split())
    try:
        return _LABEL_ALIASES[key]
    except KeyError:
        raise DatasetError(f"unknown label {raw!r}") from None


class Provenance(str, Enum):
    MANUAL = "manual"
    TEACHER_LLM = "teacher_llm"
    PSEUDOLABEL = "pseudolabel"
    IMPORTED = "imported"


class DropReason(str, Enum):
    CENTROID_FILTER = "centroid_filter"
    SENTIMENT_FILTER = "sentiment_filter"


@dataclass(frozen=True)
class Record:
    """One text item with optional label, provenance, confidence and filter marks.

    `extra` carries unknown JSON fields through a lenient load/save round trip;
    it is empty for records loaded in strict mode.
    """

    id: str
    text: str
    label: Label | None = None
    source: str = ""
    provenance: Provenance = Provenance.IMPORTED
    confidence: float | None = None
    polarity: float | None = None
    dropped_by: DropReason | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise DatasetError("record id must be a non-empty string")
        if not isinstance(self.text, str) or not self.text.strip():
            raise DatasetError(f"record {self.id!r}: text is empty")
        if self.confidence is not None:
            if self.provenance not in (Provenance.TEACHER_LLM, Provenance.PSEUDOLABEL):
                raise DatasetError(
                    f"record {self.id!r}: confidence is only valid for "
                    f"teacher_llm/pseudolabel provenance, not {self.provenance.value}"
                )
            if not 0.0 <= self.confidence <= 1.0:
                raise DatasetError(f"record {self.id!r}: confidence {self.confidence} outside [0, 1]")
        if self.polarity is not None and not -1.0 <= self.polarity <= 1.0:
            raise DatasetError(f"record {self.id!r}: polarity {self.polarity} outside [-1, 1]")


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of records with unique ids."""

    records: tuple[Record, ...] = ()

    def __post_init__(self):
        seen: dict[str, int] = {}
        for i, r in enumerate(self.records):
            if r.id in seen:
                raise DatasetError(
                    f"duplicate record id {r.id!r} at positions {seen[r.id]} and {i}"
                )
            seen[r.id] = i

    @classmethod
    def from_records(cls, records) -> "Dataset":
        return cls(tuple(records))

    @property
    def labeled(self) -> tuple[Record, ...]:
        """The D_L view: labeled records that no filter has dropped."""
        return tuple(r for r in self.records if r.label is not None and r.dropped_by is None)

    @property
    def unlabeled(self) -> tuple[Record, ...]:
        """The D_U view: records without a label."""
        return tuple(r for r in self.records if r.label is None)

    def ids(self) -> frozenset[str]:
        return frozenset(r.id for r in self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise DatasetError(f"train_fraction {self.train_fraction} outside (0, 1]")


# --------------------------------------------------------------------------
# JSONL persistence
# --------------------------------------------------------------------------

_RECORD_FIELDS = ("id", "text", "label", "source", "provenance", "confidence", "polarity", "dropped_by")


def record_to_json(record: Record) -> str:
    obj = {
        "id": record.id,
        "text": record.text,
        "label": record.label.value if record.label is not None else None,
        "source": record.source,
        "provenance": record.provenance.value,
        "confidence": record.confidence,
        "polarity": record.polarity,
        "dropped_by": record.dropped_by.value if record.dropped_by is not None else None,
    }
    obj.update(record.extra)
    return json.dumps(obj, ensure_ascii=False)


def _require_number(value, name: str):
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DatasetError(f"field {name!r} must be a number or null")
    return value


def record_from_obj(obj: dict, strict: bool = True) -> Record:
    """Build a Record from a parsed JSON object.

    Strict mode requires exactly the documented fields; lenient mode defaults
    missing optional fields and keeps unknown ones in Record.extra.
    """
    if not isinstance(obj, dict):
        raise DatasetError("record line is not a JSON object")
    unknown = [k for k in obj if k not in _RECORD_FIELDS]
    if strict:
        if unknown:
            raise DatasetError(f"unknown field(s) {unknown} (use lenient mode to keep them)")
        missing = [k for k in _RECORD_FIELDS if k not in obj]
        if missing:
            raise DatasetError(f"missing field(s) {missing}")
    for key in ("id", "text"):
        if key not in obj:
            raise DatasetError(f"missing field {key!r}")
    label = obj.get("label")
    dropped = obj.get("dropped_by")
    provenance_raw = obj.get("provenance", Provenance.IMPORTED.value)
    try:
        provenance = Provenance(provenance_raw)
    except ValueError:
        raise DatasetError(f"unknown provenance {provenance_raw!r}") from None
    if dropped is not None:
        try:
            dropped = DropReason(dropped)
        except ValueError:
            raise DatasetError(f"unknown dropped_by {dropped!r}") from None
    return Record(
        id=obj["id"],
        text=obj["text"],
        label=parse_label(label) if label is not None else None,
        source=obj.get("source", ""),
        provenance=provenance,
        confidence=_require_number(obj.get("confidence"), "confidence"),
        polarity=_require_number(obj.get("polarity"), "polarity"),
        dropped_by=dropped,
        extra={k: obj[k] for k in unknown},
    )


def load_dataset(path: str | Path, strict: bool = True) -> Dataset:
    """Load a line-delimited JSON dataset file. Line order becomes record order."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    records: list[Record] = []
    seen_lines: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            try:
                record = record_from_obj(obj, strict=strict)
            except DatasetError as exc:
                raise DatasetError(f"{path}: line {lineno}: {exc}") from None
            if record.id in seen_lines:
                raise DatasetError(
                    f"{path}: duplicate id {record.id!r} on lines {seen_lines[record.id]} and {lineno}"
                )
            seen_lines[record.id] = lineno
            records.append(record)
    return Dataset(tuple(records))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset as one JSON object per line. load(save(d)) == d."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for record in dataset.records:
                fh.write(record_to_json(record))
                fh.write("\n")
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {path}: {exc}") from exc


# --------------------------------------------------------------------------
# Dedup and splitting
# --------------------------------------------------------------------------


def normalize_text(text: str) -> str:
    """Casefold and collapse all unicode whitespace. Used only for dedup keys."""
    return " ".join(text.casefold().split())


def dedup(dataset: Dataset) -> Dataset:
    """Keep the first record for each normalized text; later duplicates are removed."""
    seen: set[str] = set()
    kept: list[Record] = []
    for record in dataset.records:
        key = normalize_text(record.text)
        if key in seen:
            continue
        seen.add(key)
        kept.append(record)
    return Dataset(tuple(kept))


def stratified_split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Split per label: ceil(train_fraction * n_label) records to train, rest to test.

    Deterministic under spec.seed. Every record must be labeled and every
    label present needs at least 2 records.
    """
    by_label: dict[Label, list[int]] = {}
    for i, record in enumerate(dataset.records):
        if record.label is None:
            raise DatasetError(f"cannot split: record {record.id!r} is unlabeled")
        by_label.setdefault(record.label, []).append(i)
    for label in CANONICAL_LABELS:
        if label in by_label and len(by_label[label]) < 2:
            raise DatasetError(f"cannot split: label {label.value!r} has fewer than 2 records")

    rng = random.Random(spec.seed)
    train_idx: set[int] = set()
    for label in CANONICAL_LABELS:
        if label not in by_label:
            continue
        indices = list(by_label[label])
        rng.shuffle(indices)
        n_train = math.ceil(spec.train_fraction * len(indices))
        train_idx.update(indices[:n_train])

    train = tuple(r for i, r in enumerate(dataset.records) if i in train_idx)
    test = tuple(r for i, r in enumerate(dataset.records) if i not in train_idx)
    return Dataset(train), Dataset(test)


def mark_dropped(records, dropped_ids, reason: DropReason) -> list[Record]:
    """Return record copies with dropped_by set for ids in dropped_ids."""
    dropped_ids = set(dropped_ids)
    return [
        replace(r, dropped_by=reason) if r.id in dropped_ids and r.dropped_by is None else r
        for r in records
    ]

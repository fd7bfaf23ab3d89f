"""Iterative pseudolabeling with review gating, dataset growth, and retraining.

The loop is a single sequential state machine. In queue review mode it
suspends at the review barrier; decisions arrive through the persisted
ReviewQueue, which the guard service writes to. Loop state and the queue
only communicate through that file.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path

from filelock import FileLock

from .corpus import Dataset, Label, Provenance, Record, parse_label
from .errors import SfwGuardError
from .model import EvalReport, LinearClassifier, evaluate, predict


class LoopError(SfwGuardError):
    """Raised for invalid loop configuration or pool overlap."""


class QueueError(SfwGuardError):
    """Raised for invalid review-queue operations."""


class UnknownReviewItem(QueueError):
    """Decision posted for an id that is not in the queue."""


class AlreadyDecided(QueueError):
    """Decision posted for an item that already has one."""


@dataclass(frozen=True)
class LoopConfig:
    target_accuracy: float
    confidence_threshold: float = 0.9
    max_rounds: int = 5
    review_mode: str = "auto_accept"  # "auto_accept" | "queue"
    seed: int = 0

    def __post_init__(self):
        # target 0 is allowed as a degenerate immediate-stop value.
        if not 0.0 <= self.target_accuracy <= 1.0:
            raise LoopError(f"target_accuracy {self.target_accuracy} outside [0, 1]")
        if not 0.0 < self.confidence_threshold < 1.0:
            raise LoopError(f"confidence_threshold {self.confidence_threshold} outside (0, 1)")
        if self.max_rounds < 1:
            raise LoopError(f"max_rounds must be >= 1, got {self.max_rounds}")
        if self.review_mode not in ("auto_accept", "queue"):
            raise LoopError(f"unknown review_mode {self.review_mode!r}")


@dataclass(frozen=True)
class PseudolabelCandidate:
    record_id: str
    proposed: Label
    confidence: float
    round: int


@dataclass(frozen=True)
class Decision:
    action: str  # "accept" | "reject" | "relabel"
    label: Label | None = None

    def __post_init__(self):
        if self.action not in ("accept", "reject", "relabel"):
            raise QueueError(f"unknown decision action {self.action!r}")
        if self.action == "relabel" and self.label is None:
            raise QueueError("relabel decisions require a label")


@dataclass(frozen=True, eq=False)
class RoundReport:
    round: int
    labeled_before: int
    labeled_after: int
    proposed: int
    accepted: int
    rejected: int
    eval: EvalReport
    stop_reason: str | None = None


def pseudolabel(
    model: LinearClassifier, d_u: Dataset, tau: float, round_index: int = 1
) -> list[PseudolabelCandidate]:
    """One candidate per unlabeled record whose top probability reaches tau.

    Sorted by confidence descending, ties broken by record id.
    """
    candidates: list[PseudolabelCandidate] = []
    for record in d_u.records:
        if record.label is not None:
            raise LoopError(f"pseudolabel pool must be unlabeled ({record.id!r} has a label)")
        label, probs = predict(model, record.text)
        confidence = float(probs.max())
        if confidence >= tau:
            candidates.append(PseudolabelCandidate(record.id, label, confidence, round_index))
    candidates.sort(key=lambda c: (-c.confidence, c.record_id))
    return candidates


def apply_reviews(
    candidates, decisions: dict[str, Decision], pool: Dataset
) -> list[Record]:
    """Turn review decisions into labeled records (the round's D_L_new).

    Accepted records take the proposed label, relabeled ones the reviewer's
    label; both get provenance=pseudolabel with the candidate confidence.
    Rejected records simply stay unlabeled in the pool.
    """
    by_id = {c.record_id: c for c in candidates}
    unknown = sorted(set(decisions) - set(by_id))
    if unknown:
        raise LoopError(f"decisions reference unknown candidate ids: {unknown}")
    records = {r.id: r for r in pool.records}
    out: list[Record] = []
    for candidate in candidates:
        decision = decisions.get(candidate.record_id)
        if decision is None or decision.action == "reject":
            continue
        label = decision.label if decision.action == "relabel" else candidate.proposed
        record = records.get(candidate.record_id)
        if record is None:
            raise LoopError(f"candidate {candidate.record_id!r} is not in the unlabeled pool")
        out.append(
            replace(
                record,
                label=label,
                provenance=Provenance.PSEUDOLABEL,
                confidence=candidate.confidence,
            )
        )
    return out


# --------------------------------------------------------------------------
# Durable review queue (shared with the guard service)
# --------------------------------------------------------------------------

_QUEUE_STATES = ("pending", "accepted", "rejected", "relabeled")


class ReviewQueue:
    """File-backed review queue, one JSON object per line.

    Every mutation is a read-modify-write under a cross-process file lock
    followed by an atomic replace, so a crash between operations never loses
    a recorded decision. One entry per record id; re-enqueueing a previously
    decided record for a later round resets it to pending.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = FileLock(str(self.path) + ".lock")

    def _read(self) -> dict[str, dict]:
        if not self.path.exists():
            return {}
        entries: dict[str, dict] = {}
        for line in self.path.read_text("utf-8").splitlines():
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise QueueError(f"corrupt review queue {self.path}: {exc}") from None
            entries[obj["id"]] = obj
        return entries

    def _write(self, entries: dict[str, dict]) -> None:
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for entry in entries.values():
                fh.write(json.dumps(entry, ensure_ascii=False))
                fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)

    def enqueue(self, candidates, texts: dict[str, str]) -> int:
        """Add pending entries for a round; entries already pending for the
        same round are left alone so a restarted run resumes cleanly."""
        added = 0
        with self._lock:
            entries = self._read()
            for candidate in candidates:
                existing = entries.get(candidate.record_id)
                if existing is not None and existing["round"] == candidate.round:
                    continue
                entries[candidate.record_id] = {
                    "id": candidate.record_id,
                    "text": texts.get(candidate.record_id, ""),
                    "proposed": candidate.proposed.value,
                    "confidence": candidate.confidence,
                    "round": candidate.round,
                    "state": "pending",
                    "label": None,
                }
                added += 1
            self._write(entries)
        return added

    def pending(self, limit: int | None = None) -> list[dict]:
        """Pending items, newest round first, then by confidence descending."""
        with self._lock:
            entries = self._read()
        items = [e for e in entries.values() if e["state"] == "pending"]
        items.sort(key=lambda e: (-e["round"], -e["confidence"], e["id"]))
        return items[:limit] if limit is not None else items

    def decide(self, item_id: str, action: str, label: str | None = None) -> dict:
        if action not in ("accept", "reject", "relabel"):
            raise QueueError(f"unknown decision action {action!r}")
        final_label: str | None = None
        if action == "relabel":
            if label is None:
                raise QueueError("relabel requires a label")
            final_label = parse_label(label).value
        with self._lock:
            entries = self._read()
            entry = entries.get(item_id)
            if entry is None:
                raise UnknownReviewItem(f"no review item with id {item_id!r}")
            if entry["state"] != "pending":
                raise AlreadyDecided(f"review item {item_id!r} is already {entry['state']}")
            if action == "accept":
                entry["state"] = "accepted"
                entry["label"] = entry["proposed"]
            elif action == "reject":
                entry["state"] = "rejected"
                entry["label"] = None
            else:
                entry["state"] = "relabeled"
                entry["label"] = final_label
            self._write(entries)
            return dict(entry)

    def stats(self) -> dict:
        with self._lock:
            entries = self._read()
        by_state = {state: 0 for state in _QUEUE_STATES}
        by_round: dict[str, dict[str, int]] = {}
        by_label: dict[str, int] = {}
        for entry in entries.values():
            by_state[entry["state"]] += 1
            round_key = str(entry["round"])
            bucket = by_round.setdefault(round_key, {state: 0 for state in _QUEUE_STATES})
            bucket[entry["state"]] += 1
            if entry["state"] in ("accepted", "relabeled"):
                by_label[entry["label"]] = by_label.get(entry["label"], 0) + 1
            elif entry["state"] == "rejected":
                by_label[entry["proposed"]] = by_label.get(entry["proposed"], 0) + 1
        return {"total": len(entries), "by_state": by_state, "by_round": by_round, "by_label": by_label}

    def round_complete(self, round_index: int) -> bool:
        with self._lock:
            entries = self._read()
        return all(e["state"] != "pending" for e in entries.values() if e["round"] == round_index)

    def decisions_for_round(self, round_index: int) -> dict[str, Decision]:
        with self._lock:
            entries = self._read()
        decisions: dict[str, Decision] = {}
        for entry in entries.values():
            if entry["round"] != round_index or entry["state"] == "pending":
                continue
            if entry["state"] == "accepted":
                decisions[entry["id"]] = Decision("accept")
            elif entry["state"] == "rejected":
                decisions[entry["id"]] = Decision("reject")
            else:
                decisions[entry["id"]] = Decision("relabel", Label(entry["label"]))
        return decisions


# --------------------------------------------------------------------------
# Reviewers
# --------------------------------------------------------------------------


class AutoAcceptReviewer:
    """Accepts every candidate; the no-human fast path."""

    def review(self, candidates, texts: dict[str, str]) -> dict[str, Decision]:
        return {c.record_id: Decision("accept") for c in candidates}


class QueueReviewer:
    """Publishes candidates to the durable queue and blocks until all are decided."""

    def __init__(self, queue: ReviewQueue, poll_interval: float = 0.2, timeout: float | None = None):
        self.queue = queue
        self.poll_interval = poll_interval
        self.timeout = timeout

    def review(self, candidates, texts: dict[str, str]) -> dict[str, Decision]:
        candidates = list(candidates)
        if not candidates:
            return {}
        round_index = candidates[0].round
        self.queue.enqueue(candidates, texts)
        deadline = None if self.timeout is None else time.monotonic() + self.timeout
        while not self.queue.round_complete(round_index):
            if deadline is not None and time.monotonic() > deadline:
                raise QueueError(f"timed out waiting for round {round_index} review decisions")
            time.sleep(self.poll_interval)
        decisions = self.queue.decisions_for_round(round_index)
        return {c.record_id: decisions[c.record_id] for c in candidates if c.record_id in decisions}


# --------------------------------------------------------------------------
# The loop
# --------------------------------------------------------------------------


def _append_run_log(path: Path, report: RoundReport) -> None:
    line = json.dumps(
        {
            "round": report.round,
            "labeled_before": report.labeled_before,
            "labeled_after": report.labeled_after,
            "proposed": report.proposed,
            "accepted": report.accepted,
            "rejected": report.rejected,
            "accuracy": report.eval.accuracy,
            "macro_f1": report.eval.macro_f1,
            "stop_reason": report.stop_reason,
        }
    )
    with path.open("a", encoding="utf-8") as fh:
        fh.write(line + "\n")


def run_loop(
    d_l: Dataset,
    d_u: Dataset,
    test: Dataset,
    cfg: LoopConfig,
    trainer,
    reviewer=None,
    run_log_path: str | Path | None = None,
) -> tuple[LinearClassifier, list[RoundReport]]:
    """Train, evaluate, pseudolabel, review, grow, repeat.

    trainer(dataset, round_index) must return a trained LinearClassifier; the
    round index lets callers swap hyperparameters between rounds. Stops when
    test accuracy reaches cfg.target_accuracy, candidates run out, nothing is
    accepted, or max_rounds is hit. Records move between pools but are never
    duplicated or lost, and test ids never enter D_L.
    """
    if not d_l.labeled:
        raise LoopError("initial labeled pool is empty")
    for record in test.records:
        if record.label is None:
            raise LoopError(f"test record {record.id!r} is unlabeled")
    test_ids = test.ids()
    overlap = sorted(test_ids & (d_l.ids() | d_u.ids()))
    if overlap:
        raise LoopError(f"test ids overlap the training pools: {overlap[:5]}")
    if reviewer is None:
        if cfg.review_mode == "queue":
            raise LoopError("queue review mode requires an explicit reviewer")
        reviewer = AutoAcceptReviewer()
    run_log = Path(run_log_path) if run_log_path is not None else None

    labeled = list(d_l.records)
    unlabeled = list(d_u.records)
    reports: list[RoundReport] = []
    model: LinearClassifier | None = None

    for round_index in range(1, cfg.max_rounds + 1):
        model = trainer(Dataset(tuple(labeled)), round_index)
        report = evaluate(model, test)
        before = len(labeled)

        leaked = test_ids & {r.id for r in labeled}
        if leaked:
            raise LoopError(f"test ids leaked into D_L: {sorted(leaked)[:5]}")

        def record_round(reason, proposed=0, accepted=0, rejected=0, after=None):
            rr = RoundReport(
                round=round_index,
                labeled_before=before,
                labeled_after=after if after is not None else before,
                proposed=proposed,
                accepted=accepted,
                rejected=rejected,
                eval=report,
                stop_reason=reason,
            )
            reports.append(rr)
            if run_log is not None:
                _append_run_log(run_log, rr)

        if report.accuracy >= cfg.target_accuracy:
            record_round("target_reached")
            break
        if round_index == cfg.max_rounds:
            record_round("max_rounds")
            break

        candidates = pseudolabel(
            model, Dataset(tuple(unlabeled)), cfg.confidence_threshold, round_index
        )
        if not candidates:
            record_round("no_candidates")
            break

        texts = {r.id: r.text for r in unlabeled}
        decisions = reviewer.review(candidates, texts)
        new_records = apply_reviews(candidates, decisions, Dataset(tuple(unlabeled)))
        accepted = len(new_records)
        rejected = len(candidates) - accepted
        if accepted == 0:
            record_round("none_accepted", proposed=len(candidates), rejected=rejected)
            break

        accepted_ids = {r.id for r in new_records}
        labeled.extend(new_records)
        unlabeled = [r for r in unlabeled if r.id not in accepted_ids]
        record_round(
            None, proposed=len(candidates), accepted=accepted, rejected=rejected, after=len(labeled)
        )

    assert model is not None
    return model, reports

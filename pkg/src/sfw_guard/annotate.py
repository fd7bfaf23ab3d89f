"""Teacher-LLM zero-shot annotation and manual-label import.

The teacher is any chat-completion endpoint speaking the wire contract
POST {"model": ..., "prompt": ...} -> {"text": ...}. A deterministic stub
client ships here so the full pipeline runs offline.
"""

from __future__ import annotations

import ast
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import requests

from .corpus import DatasetError, Label, Provenance, Record, parse_label, record_from_obj
from .errors import SfwGuardError


class AnnotationError(SfwGuardError):
    """Base class for teacher-annotation failures."""


class MalformedVerdict(AnnotationError):
    """The teacher response contained no parseable JSON object."""


class UnknownLabel(AnnotationError):
    """The teacher returned a label outside the closed alias table."""

    def __init__(self, raw_value: str):
        super().__init__(f"teacher returned unknown label {raw_value!r}")
        self.raw_value = raw_value


class ProviderError(AnnotationError):
    """Network-level failure talking to the teacher endpoint."""


_TEXT_SLOT = "<text content>"

# Zero-shot instruction, pinned verbatim. Note: there is intentionally no
# rule line for religious insult; that label is reachable only through
# manual labels and review.
PROMPT_TEMPLATE = """text: <text content>

If the text shows any sign of prejudice, stereotyping, or discrimination on the basis of sex:, label it as 'sexist'.
If the text shows any sign of content that threatens, incites, glorifies, or expresses desire for violence or harm., label it as 'violence'.
If the text shows any sign of prejudice, discrimination, or antagonism by an individual, community, or institution against a person or people on the basis of their membership of a particular racial or ethnic group, label it as 'racist'.
If the text shows any sign of content depicting adult nudity or sexual behavior that is pornographic or intended to cause sexual arousal, label it as 'porn'.
If the text shows any sign of psychiatric or mental illness, label it as 'psychiatric or mental illness'.
If the text shows any sign of promotion, or otherwise encourage, suicide or self-harm, label it as 'self-harm'.
If the text shows any sign of harassment, label it as 'harassment'.
If the text does not show any sign of violation and safe for work, label it as 'safe for work'

Only use the label from above choice.

return the result in JSON format {'label', 'explain'}"""


@dataclass(frozen=True)
class TeacherPrompt:
    instruction: str
    text: str
    rendered: str


@dataclass(frozen=True)
class TeacherVerdict:
    label: Label
    explain: str
    raw: str


@dataclass(frozen=True)
class TeacherProvider:
    """Connection settings for a teacher endpoint. Model specifics are config, not code."""

    endpoint: str
    model_name: str
    timeout: float = 30.0
    max_retries: int = 2

    def __post_init__(self):
        if self.timeout <= 0:
            raise AnnotationError(f"timeout must be positive, got {self.timeout}")
        if self.max_retries < 0:
            raise AnnotationError(f"max_retries must be >= 0, got {self.max_retries}")


def build_prompt(text: str) -> TeacherPrompt:
    """Substitute the input into the template's text slot."""
    if not text:
        raise AnnotationError("cannot build a prompt for empty text")
    rendered = PROMPT_TEMPLATE.replace(_TEXT_SLOT, text, 1)
    return TeacherPrompt(instruction=PROMPT_TEMPLATE, text=text, rendered=rendered)


def _balanced_object_span(s: str, start: int) -> int | None:
    """End index (exclusive) of the brace-balanced span starting at s[start] == '{'.

    Quote-aware for both quote characters so braces inside strings don't count.
    """
    depth = 0
    quote: str | None = None
    i = start
    while i < len(s):
        ch = s[i]
        if quote is not None:
            if ch == "\\":
                i += 2
                continue
            if ch == quote:
                quote = None
        elif ch in ("'", '"'):
            quote = ch
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i + 1
        i += 1
    return None


def parse_verdict(response: str) -> TeacherVerdict:
    """Extract the first JSON object from a teacher response.

    Accepts prose-wrapped JSON and single-quoted pseudo-JSON, since real model
    output rarely honors the format request exactly.
    """
    decoder = json.JSONDecoder()
    for i, ch in enumerate(response):
        if ch != "{":
            continue
        obj = None
        try:
            obj, _ = decoder.raw_decode(response[i:])
        except ValueError:
            end = _balanced_object_span(response, i)
            if end is not None:
                try:
                    obj = ast.literal_eval(response[i:end])
                except (ValueError, SyntaxError):
                    obj = None
        if isinstance(obj, dict):
            return _verdict_from_obj(obj, response)
    raise MalformedVerdict("no JSON object found in teacher response")


def _verdict_from_obj(obj: dict, raw: str) -> TeacherVerdict:
    if "label" not in obj:
        raise MalformedVerdict("teacher response object has no 'label' key")
    raw_label = obj["label"]
    if not isinstance(raw_label, str):
        raise MalformedVerdict(f"teacher label must be a string, got {type(raw_label).__name__}")
    try:
        label = parse_label(raw_label)
    except DatasetError:
        raise UnknownLabel(raw_label) from None
    explain = obj.get("explain", "")
    if not isinstance(explain, str):
        explain = str(explain)
    return TeacherVerdict(label=label, explain=explain, raw=raw)


class HttpTeacherClient:
    """Talks to any gateway speaking the documented provider wire contract."""

    def __init__(self, provider: TeacherProvider, pre_hook: Callable[[str], str] | None = None):
        self.provider = provider
        self.max_retries = provider.max_retries
        # Optional text transform (e.g. Malay->English translation for
        # English-centric teachers). Default is pass-through.
        self.pre_hook = pre_hook

    def complete(self, prompt: str) -> str:
        try:
            resp = requests.post(
                self.provider.endpoint,
                json={"model": self.provider.model_name, "prompt": prompt},
                timeout=self.provider.timeout,
            )
            resp.raise_for_status()
            body = resp.json()
        except requests.RequestException as exc:
            raise ProviderError(f"teacher request failed: {exc}") from exc
        except ValueError as exc:
            raise ProviderError(f"teacher response is not JSON: {exc}") from exc
        if not isinstance(body, dict) or not isinstance(body.get("text"), str):
            raise ProviderError('teacher response must be {"text": string}')
        return body["text"]


class StubTeacherClient:
    """Deterministic offline teacher: keyword rules over the text slot.

    `rules` maps a lowercase substring to a label alias; the first matching
    rule wins, otherwise the verdict is safe for work.
    """

    pre_hook = None
    max_retries = 0

    def __init__(self, rules: dict[str, str] | None = None):
        self.rules = dict(rules or {})

    def complete(self, prompt: str) -> str:
        first_line = prompt.splitlines()[0]
        text = first_line[len("text: "):] if first_line.startswith("text: ") else first_line
        lowered = text.casefold()
        for needle, label in self.rules.items():
            if needle.casefold() in lowered:
                return json.dumps({"label": label, "explain": f"matched {needle!r}"})
        return json.dumps({"label": "safe for work", "explain": "no rule matched"})


def _annotate_one(client, record: Record, max_retries: int) -> Record:
    pre_hook = getattr(client, "pre_hook", None)
    text = pre_hook(record.text) if pre_hook is not None else record.text
    prompt = build_prompt(text).rendered
    last_error: AnnotationError | None = None
    for _ in range(max_retries + 1):
        try:
            verdict = parse_verdict(client.complete(prompt))
        except AnnotationError as exc:
            last_error = exc
            continue
        return replace(record, label=verdict.label, provenance=Provenance.TEACHER_LLM, confidence=None)
    assert last_error is not None
    raise last_error


def annotate_batch(
    client,
    records,
    *,
    max_retries: int = 2,
    max_in_flight: int = 4,
) -> tuple[list[Record], list[tuple[str, AnnotationError]]]:
    """Label a batch of unlabeled records through a teacher client.

    Per-record failures are retried up to max_retries and then reported in the
    failures list; the batch itself never aborts. Output order matches input
    order and |labeled| + |failures| == |records|.
    """
    records = list(records)
    for record in records:
        if record.label is not None:
            raise AnnotationError(f"record {record.id!r} is already labeled")

    def job(record: Record):
        try:
            return ("ok", _annotate_one(client, record, max_retries))
        except AnnotationError as exc:
            return ("err", (record.id, exc))

    if not records:
        return [], []
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        outcomes = list(pool.map(job, records))
    labeled = [payload for kind, payload in outcomes if kind == "ok"]
    failures = [payload for kind, payload in outcomes if kind == "err"]
    return labeled, failures


def import_manual_labels(path: str | Path) -> list[Record]:
    """Read a JSONL file of human-labeled records; these form the baseline D_L.

    Every line must carry a label; provenance is forced to manual.
    """
    path = Path(path)
    if not path.exists():
        raise AnnotationError(f"manual label file not found: {path}")
    out: list[Record] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AnnotationError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            try:
                record = record_from_obj(obj, strict=False)
            except DatasetError as exc:
                raise AnnotationError(f"{path}: line {lineno}: {exc}") from None
            if record.label is None:
                raise AnnotationError(f"{path}: line {lineno}: missing label")
            out.append(replace(record, provenance=Provenance.MANUAL, confidence=None))
    return out

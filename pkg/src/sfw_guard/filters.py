"""Centroid-based embedding filtering and sentiment-polarity filtering.

Both filters operate per labeled pool and return immutable reports/record
copies; they never mutate their inputs.
"""

from __future__ import annotations

import hashlib
import math
import re
import time
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
import requests

from .corpus import DropReason, Label, Record
from .errors import SfwGuardError


class FilterError(SfwGuardError):
    """Raised for invalid filter inputs or embedding provider failures."""


DEFAULT_DIMENSION = 1024

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


@dataclass(frozen=True)
class EmbeddingProvider:
    """Embedding source: a remote vector API or the local hashing fallback.

    The local_hash provider maps feature-hashed unigram counts into a fixed
    dimension and L2-normalizes, so it is fully deterministic and needs no
    network. The remote kind mirrors an external embedding API.
    """

    kind: str = "local_hash"
    endpoint: str | None = None
    dimension: int = DEFAULT_DIMENSION
    timeout: float = 30.0
    max_retries: int = 2
    batch_size: int = 64

    def __post_init__(self):
        if self.kind not in ("remote", "local_hash"):
            raise FilterError(f"unknown embedding provider kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise FilterError("remote embedding provider requires an endpoint")
        if self.dimension < 1:
            raise FilterError(f"embedding dimension must be >= 1, got {self.dimension}")


def _hash_bucket(token: str, dimension: int) -> int:
    digest = hashlib.sha1(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dimension


def _local_hash_embed(texts: list[str], dimension: int) -> np.ndarray:
    out = np.zeros((len(texts), dimension), dtype=np.float64)
    for row, text in enumerate(texts):
        for token in _TOKEN_RE.findall(text.casefold()):
            out[row, _hash_bucket(token, dimension)] += 1.0
    norms = np.linalg.norm(out, axis=1)
    nonzero = norms > 0
    out[nonzero] /= norms[nonzero, None]
    return out


def _remote_embed(provider: EmbeddingProvider, texts: list[str]) -> np.ndarray:
    vectors: list[list[float]] = []
    for start in range(0, len(texts), provider.batch_size):
        chunk = texts[start : start + provider.batch_size]
        last_exc: Exception | None = None
        for attempt in range(provider.max_retries + 1):
            try:
                resp = requests.post(
                    provider.endpoint,
                    json={"texts": chunk},
                    timeout=provider.timeout,
                )
                resp.raise_for_status()
                body = resp.json()
                break
            except (requests.RequestException, ValueError) as exc:
                last_exc = exc
                if attempt < provider.max_retries:
                    time.sleep(min(0.5 * 2**attempt, 2.0))
        else:
            raise FilterError(f"embedding request failed after retries: {last_exc}")
        got = body.get("vectors") if isinstance(body, dict) else None
        if not isinstance(got, list) or len(got) != len(chunk):
            raise FilterError('embedding response must be {"vectors": [[number]]} matching input size')
        for vec in got:
            if len(vec) != provider.dimension:
                raise FilterError(
                    f"embedding dimension mismatch: expected {provider.dimension}, got {len(vec)}"
                )
        vectors.extend(got)
    return np.asarray(vectors, dtype=np.float64)


def embed(provider: EmbeddingProvider, texts) -> np.ndarray:
    """One vector per text, order preserved, shape (len(texts), dimension)."""
    texts = list(texts)
    if not texts:
        raise FilterError("embed requires at least one text")
    if provider.kind == "local_hash":
        return _local_hash_embed(texts, provider.dimension)
    result = _remote_embed(provider, texts)
    if not np.all(np.isfinite(result)):
        raise FilterError("embedding provider returned non-finite values")
    return result


def centroid(vectors) -> np.ndarray:
    """Coordinate-wise arithmetic mean of a non-empty batch of vectors."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.size == 0 or arr.shape[0] == 0:
        raise FilterError("centroid of an empty vector list is undefined")
    return arr.mean(axis=0)


def euclidean(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise FilterError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


@dataclass(frozen=True)
class CentroidPolicy:
    """Threshold rule over the distance distribution.

    percentile: keep records at or under the p-th percentile (nearest-rank).
    mean_plus_k_sigma: keep records within mean + k * std.
    """

    method: str = "percentile"
    percentile: float = 90.0
    k: float = 2.0

    def __post_init__(self):
        if self.method not in ("percentile", "mean_plus_k_sigma"):
            raise FilterError(f"unknown centroid policy method {self.method!r}")
        if not 0.0 < self.percentile <= 100.0:
            raise FilterError(f"percentile {self.percentile} outside (0, 100]")


def nearest_rank_percentile(values, p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    ordered = sorted(values)
    if not ordered:
        raise FilterError("percentile of an empty sequence is undefined")
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return float(ordered[rank - 1])


@dataclass(frozen=True)
class CentroidReport:
    """Verdicts of one per-label centroid filtering pass."""

    label: Label
    centroid: np.ndarray
    distances: dict[str, float]
    threshold: float
    kept: tuple[str, ...]
    dropped: tuple[str, ...]

    def apply(self, records) -> list[Record]:
        """Record copies with dropped_by=centroid_filter set on dropped ids."""
        dropped = set(self.dropped)
        return [
            replace(r, dropped_by=DropReason.CENTROID_FILTER)
            if r.id in dropped and r.dropped_by is None
            else r
            for r in records
        ]


def centroid_filter(records, vectors, policy: CentroidPolicy | None = None) -> CentroidReport:
    """Algorithmic outlier removal for one label's pool.

    Computes the centroid of the pool's embeddings, each record's Euclidean
    distance to it, a threshold from the distance distribution, and drops
    everything strictly beyond the threshold.
    """
    records = list(records)
    arr = np.asarray(vectors, dtype=np.float64)
    if policy is None:
        policy = CentroidPolicy()
    if len(records) != arr.shape[0]:
        raise FilterError(f"{len(records)} records but {arr.shape[0]} vectors")
    if len(records) < 2:
        raise FilterError("centroid filtering needs at least 2 records")
    labels = {r.label for r in records}
    if None in labels:
        raise FilterError("centroid filtering requires labeled records")
    if len(labels) != 1:
        raise FilterError(
            f"centroid filtering is per-label; got mixed labels {sorted(l.value for l in labels)}"
        )
    label = records[0].label

    center = arr.mean(axis=0)
    dists = np.linalg.norm(arr - center, axis=1)
    if policy.method == "percentile":
        threshold = nearest_rank_percentile(dists.tolist(), policy.percentile)
    else:
        threshold = float(dists.mean() + policy.k * dists.std())

    kept: list[str] = []
    dropped: list[str] = []
    for record, dist in zip(records, dists):
        (dropped if dist > threshold else kept).append(record.id)
    return CentroidReport(
        label=label,
        centroid=center,
        distances={r.id: float(d) for r, d in zip(records, dists)},
        threshold=threshold,
        kept=tuple(kept),
        dropped=tuple(dropped),
    )


# --------------------------------------------------------------------------
# Sentiment polarity
# --------------------------------------------------------------------------

DEFAULT_POSITIVE_THRESHOLD = 0.2


def load_lexicon(path: str | Path | None = None) -> dict[str, float]:
    """Load a polarity lexicon: UTF-8 lines of `term<TAB>weight`, weight in [-1, 1].

    With no path, the small bundled Malay+English lexicon is used.
    """
    if path is None:
        text = resources.files("sfw_guard").joinpath("data/polarity_lexicon.tsv").read_text("utf-8")
        source = "bundled lexicon"
    else:
        path = Path(path)
        if not path.exists():
            raise FilterError(f"lexicon file not found: {path}")
        text = path.read_text("utf-8")
        source = str(path)
    lexicon: dict[str, float] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FilterError(f"{source}: line {lineno}: expected `term<TAB>weight`")
        term, raw_weight = parts
        try:
            weight = float(raw_weight)
        except ValueError:
            raise FilterError(f"{source}: line {lineno}: weight {raw_weight!r} is not a number") from None
        if not -1.0 <= weight <= 1.0:
            raise FilterError(f"{source}: line {lineno}: weight {weight} outside [-1, 1]")
        lexicon[term.casefold()] = weight
    return lexicon


def polarity(text: str, lexicon: dict[str, float]) -> float:
    """Mean lexicon weight over tokens that hit the lexicon; 0 with no hits."""
    hits = [lexicon[tok] for tok in _TOKEN_RE.findall(text.casefold()) if tok in lexicon]
    if not hits:
        return 0.0
    score = sum(hits) / len(hits)
    return max(-1.0, min(1.0, score))


def sentiment_filter(
    records,
    lexicon: dict[str, float],
    tau_pos: float = DEFAULT_POSITIVE_THRESHOLD,
) -> tuple[list[Record], list[Record]]:
    """Drop harm-labeled records whose polarity is positive beyond tau_pos.

    safe_for_work records are never dropped here. Every returned record
    carries its computed polarity; records already dropped by another filter
    pass through to the dropped list unchanged in reason.
    """
    kept: list[Record] = []
    dropped: list[Record] = []
    for record in records:
        if record.label is None:
            raise FilterError(f"sentiment filtering requires labeled records ({record.id!r} is unlabeled)")
        score = polarity(record.text, lexicon)
        updated = replace(record, polarity=score)
        if record.dropped_by is not None:
            dropped.append(updated)
        elif record.label != Label.SAFE_FOR_WORK and score > tau_pos:
            dropped.append(replace(updated, dropped_by=DropReason.SENTIMENT_FILTER))
        else:
            kept.append(updated)
    return kept, dropped

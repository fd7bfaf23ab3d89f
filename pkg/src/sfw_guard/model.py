"""Tokenization, TF-IDF featurization, multinomial logistic regression, evaluation.

This is the desk-scale classifier the pipeline trains and serves: TF-IDF
features (or embedding features, behind a flag) into a softmax linear model
fit by mini-batch gradient descent. Training is single-threaded and fully
deterministic given a seed; trained models are immutable and shareable.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .corpus import CANONICAL_LABELS, Dataset, Label
from .errors import SfwGuardError
from .filters import EmbeddingProvider, embed


class ModelError(SfwGuardError):
    """Raised for invalid training inputs or unreadable model artifacts."""


MODEL_FORMAT_VERSION = 1

_WORD_RE = re.compile(r"\w+", re.UNICODE)


# --------------------------------------------------------------------------
# Tokenization
# --------------------------------------------------------------------------


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Stopword file: UTF-8, one term per line, '#' comments. None -> bundled list."""
    if path is None:
        text = resources.files("sfw_guard").joinpath("data/stopwords_ms_en.txt").read_text("utf-8")
    else:
        path = Path(path)
        if not path.exists():
            raise ModelError(f"stopword file not found: {path}")
        text = path.read_text("utf-8")
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line.casefold())
    return frozenset(words)


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    ngram_range: tuple[int, int] = (1, 2)
    stopwords: frozenset[str] = frozenset()
    min_token_len: int = 1

    def __post_init__(self):
        lo, hi = self.ngram_range
        if not 1 <= lo <= hi <= 3:
            raise ModelError(f"ngram_range {self.ngram_range} must satisfy 1 <= min <= max <= 3")
        if self.min_token_len < 1:
            raise ModelError(f"min_token_len must be >= 1, got {self.min_token_len}")


def tokenize(cfg: TokenizerConfig, text: str) -> list[str]:
    """Unicode word tokens, stopwords removed before n-gram composition.

    N-grams are joined with a single space; all unigrams come first, then
    bigrams, and so on.
    """
    words = _WORD_RE.findall(text)
    if cfg.lowercase:
        words = [w.casefold() for w in words]
    words = [w for w in words if len(w) >= cfg.min_token_len and w not in cfg.stopwords]
    lo, hi = cfg.ngram_range
    out: list[str] = []
    for n in range(lo, hi + 1):
        if n == 1:
            out.extend(words)
        else:
            out.extend(" ".join(words[i : i + n]) for i in range(len(words) - n + 1))
    return out


# --------------------------------------------------------------------------
# TF-IDF
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TfidfModel:
    vocabulary: dict[str, int]
    document_frequency: dict[str, int]
    idf: dict[str, float]
    max_df: float = 0.95
    min_df: int = 1
    n_docs_fitted: int = 0


def fit_tfidf(cfg: TokenizerConfig, corpus, max_df: float = 0.95, min_df: int = 1) -> TfidfModel:
    """Fit document frequencies and idf over a corpus of raw texts.

    A term survives pruning when min_df <= df(term) <= floor(max_df * n_docs).
    idf(t) = ln((1 + n_docs) / (1 + df(t))) + 1, so min_df=1 terms never hit a
    zero denominator. Vocabulary columns are assigned in lexicographic order.
    """
    corpus = list(corpus)
    if not corpus:
        raise ModelError("cannot fit TF-IDF on an empty corpus")
    n_docs = len(corpus)
    df: Counter[str] = Counter()
    for text in corpus:
        df.update(set(tokenize(cfg, text)))
    hi_cut = math.floor(max_df * n_docs)
    kept = {t: c for t, c in df.items() if min_df <= c <= hi_cut}
    if not kept:
        raise ModelError("vocabulary is empty after max_df/min_df pruning")
    vocabulary = {term: i for i, term in enumerate(sorted(kept))}
    idf = {term: math.log((1 + n_docs) / (1 + kept[term])) + 1.0 for term in vocabulary}
    return TfidfModel(
        vocabulary=vocabulary,
        document_frequency=dict(sorted(kept.items())),
        idf=idf,
        max_df=max_df,
        min_df=min_df,
        n_docs_fitted=n_docs,
    )


@dataclass(frozen=True)
class SparseVector:
    indices: tuple[int, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.indices) != len(self.weights):
            raise ModelError("indices and weights length mismatch")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ModelError("indices must be strictly increasing")


def transform(model: TfidfModel, cfg: TokenizerConfig, text: str) -> SparseVector:
    """tf(raw count) * idf, L2-normalized. Out-of-vocabulary terms are ignored."""
    counts: Counter[str] = Counter(t for t in tokenize(cfg, text) if t in model.vocabulary)
    if not counts:
        return SparseVector((), ())
    pairs = sorted((model.vocabulary[t], c * model.idf[t]) for t, c in counts.items())
    weights = np.array([w for _, w in pairs], dtype=np.float64)
    weights /= np.linalg.norm(weights)
    return SparseVector(tuple(i for i, _ in pairs), tuple(float(w) for w in weights))


# --------------------------------------------------------------------------
# Classifier
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1.0
    l2_lambda: float = 1e-4
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be positive")
        if self.l2_lambda < 0:
            raise ModelError("l2_lambda must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ModelError("epochs and batch_size must be >= 1")


@dataclass(frozen=True, eq=False)
class LinearClassifier:
    """Featurizer plus softmax weights over the nine canonical classes."""

    tokenizer: TokenizerConfig
    tfidf: TfidfModel | None
    weights: np.ndarray  # (9, n_features)
    bias: np.ndarray  # (9,)
    classes: tuple[Label, ...]
    hyperparams: Hyperparams
    feature_mode: str = "tfidf"  # "tfidf" | "embedding"
    embedding: EmbeddingProvider | None = None
    epoch_losses: tuple[float, ...] = field(default=(), repr=False)

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def featurize(self, text: str) -> np.ndarray:
        if self.feature_mode == "tfidf":
            vec = transform(self.tfidf, self.tokenizer, text)
            dense = np.zeros(self.n_features, dtype=np.float64)
            if vec.indices:
                dense[list(vec.indices)] = vec.weights
            return dense
        return embed(self.embedding, [text])[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(weights: np.ndarray, bias: np.ndarray, X, y_idx: np.ndarray, l2_lambda: float):
    """Mean cross-entropy + l2_lambda * ||W||^2 and its analytic gradient.

    X may be dense or scipy.sparse with shape (n, features); y_idx holds class
    row indices. The bias is not regularized.
    """
    n = X.shape[0]
    logits = X @ weights.T + bias
    probs = softmax(logits)
    picked = probs[np.arange(n), y_idx]
    ce = -np.log(np.clip(picked, 1e-300, None)).mean()
    loss = ce + l2_lambda * float((weights**2).sum())
    delta = probs
    delta[np.arange(n), y_idx] -= 1.0
    delta /= n
    grad_w = np.asarray(delta.T @ X) + 2.0 * l2_lambda * weights
    grad_b = delta.sum(axis=0)
    return loss, grad_w, grad_b


def _feature_matrix(
    feature_mode: str,
    cfg: TokenizerConfig,
    tfidf: TfidfModel | None,
    embedding: EmbeddingProvider | None,
    texts: list[str],
):
    if feature_mode == "tfidf":
        rows, cols, vals = [], [], []
        for i, text in enumerate(texts):
            vec = transform(tfidf, cfg, text)
            rows.extend([i] * len(vec.indices))
            cols.extend(vec.indices)
            vals.extend(vec.weights)
        return sp.csr_matrix(
            (vals, (rows, cols)), shape=(len(texts), len(tfidf.vocabulary)), dtype=np.float64
        )
    return embed(embedding, texts)


def train(
    train_set: Dataset,
    cfg: TokenizerConfig | None = None,
    hyperparams: Hyperparams | None = None,
    *,
    feature_mode: str = "tfidf",
    embedding: EmbeddingProvider | None = None,
    max_df: float = 0.95,
    min_df: int = 1,
) -> LinearClassifier:
    """Fit the nine-class softmax model on the dataset's labeled pool.

    Mini-batch gradient descent on cross-entropy with L2 penalty; the shuffle
    order is the only randomness and is driven by hyperparams.seed. The
    full-dataset loss after each epoch is recorded in epoch_losses.
    """
    cfg = cfg or TokenizerConfig()
    hp = hyperparams or Hyperparams()
    if feature_mode not in ("tfidf", "embedding"):
        raise ModelError(f"unknown feature_mode {feature_mode!r}")
    if feature_mode == "embedding" and embedding is None:
        embedding = EmbeddingProvider()

    for record in train_set.records:
        if record.label is None:
            raise ModelError(f"training requires labeled records ({record.id!r} is unlabeled)")
    pool = train_set.labeled
    if not pool:
        raise ModelError("training pool is empty")
    present = {r.label for r in pool}
    if len(present) < 2:
        raise ModelError(f"training needs >= 2 distinct labels, got {len(present)}")

    texts = [r.text for r in pool]
    y_idx = np.array([CANONICAL_LABELS.index(r.label) for r in pool], dtype=np.int64)

    tfidf = fit_tfidf(cfg, texts, max_df=max_df, min_df=min_df) if feature_mode == "tfidf" else None
    X = _feature_matrix(feature_mode, cfg, tfidf, embedding, texts)

    n_classes = len(CANONICAL_LABELS)
    n_features = X.shape[1]
    weights = np.zeros((n_classes, n_features), dtype=np.float64)
    bias = np.zeros(n_classes, dtype=np.float64)

    rng = np.random.default_rng(hp.seed)
    n = X.shape[0]
    epoch_losses: list[float] = []
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            batch = order[start : start + hp.batch_size]
            _, grad_w, grad_b = loss_and_grad(weights, bias, X[batch], y_idx[batch], hp.l2_lambda)
            weights -= hp.learning_rate * grad_w
            bias -= hp.learning_rate * grad_b
        loss, _, _ = loss_and_grad(weights, bias, X, y_idx, hp.l2_lambda)
        if not math.isfinite(loss):
            raise ModelError(f"training diverged: non-finite loss at epoch {epoch + 1}")
        epoch_losses.append(float(loss))

    return LinearClassifier(
        tokenizer=cfg,
        tfidf=tfidf,
        weights=weights,
        bias=bias,
        classes=CANONICAL_LABELS,
        hyperparams=hp,
        feature_mode=feature_mode,
        embedding=embedding if feature_mode == "embedding" else None,
        epoch_losses=tuple(epoch_losses),
    )


def predict(model: LinearClassifier, text: str) -> tuple[Label, np.ndarray]:
    """(argmax label, softmax probabilities in canonical class order).

    Ties resolve to the earliest class in canonical order.
    """
    x = model.featurize(text)
    probs = softmax(model.weights @ x + model.bias)
    return model.classes[int(np.argmax(probs))], probs


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True, eq=False)
class EvalReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict[Label, ClassMetrics]
    confusion: np.ndarray  # rows = true class, cols = predicted class


def metrics_from_confusion(confusion: np.ndarray):
    """accuracy, macro P/R/F1 and per-class metrics from a KxK count matrix.

    Per class: precision = TP/(TP+FP), recall = TP/(TP+FN), f1 = harmonic
    mean; each is 0 when its denominator is 0. Macro metrics are the
    unweighted mean over all K classes, including empty ones.
    """
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ModelError(f"confusion matrix must be square, got {cm.shape}")
    total = cm.sum()
    if total <= 0:
        raise ModelError("confusion matrix is empty")
    k = cm.shape[0]
    accuracy = float(np.trace(cm) / total)
    precisions, recalls, f1s, rows = [], [], [], []
    for i in range(k):
        tp = cm[i, i]
        fp = cm[:, i].sum() - tp
        fn = cm[i, :].sum() - tp
        precision = float(tp / (tp + fp)) if tp + fp > 0 else 0.0
        recall = float(tp / (tp + fn)) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
        rows.append(ClassMetrics(precision, recall, f1, int(cm[i, :].sum())))
    return accuracy, float(np.mean(precisions)), float(np.mean(recalls)), float(np.mean(f1s)), rows


def evaluate(model: LinearClassifier, test_set: Dataset) -> EvalReport:
    """Confusion counts over the nine canonical classes plus macro metrics."""
    records = [r for r in test_set.records]
    if not records:
        raise ModelError("cannot evaluate on an empty test set")
    k = len(CANONICAL_LABELS)
    confusion = np.zeros((k, k), dtype=np.int64)
    for record in records:
        if record.label is None:
            raise ModelError(f"evaluation requires labeled records ({record.id!r} is unlabeled)")
        predicted, _ = predict(model, record.text)
        confusion[CANONICAL_LABELS.index(record.label), CANONICAL_LABELS.index(predicted)] += 1
    accuracy, macro_p, macro_r, macro_f1, rows = metrics_from_confusion(confusion)
    return EvalReport(
        accuracy=accuracy,
        macro_precision=macro_p,
        macro_recall=macro_r,
        macro_f1=macro_f1,
        per_class={label: rows[i] for i, label in enumerate(CANONICAL_LABELS)},
        confusion=confusion,
    )


# --------------------------------------------------------------------------
# Artifact persistence
# --------------------------------------------------------------------------


def _classifier_to_doc(model: LinearClassifier) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "classes": [c.value for c in model.classes],
        "tokenizer": {
            "lowercase": model.tokenizer.lowercase,
            "ngram_range": list(model.tokenizer.ngram_range),
            "stopwords": sorted(model.tokenizer.stopwords),
            "min_token_len": model.tokenizer.min_token_len,
        },
        "feature_mode": model.feature_mode,
        "tfidf": None
        if model.tfidf is None
        else {
            "vocabulary": model.tfidf.vocabulary,
            "document_frequency": model.tfidf.document_frequency,
            "idf": model.tfidf.idf,
            "max_df": model.tfidf.max_df,
            "min_df": model.tfidf.min_df,
            "n_docs_fitted": model.tfidf.n_docs_fitted,
        },
        "embedding": None
        if model.embedding is None
        else {
            "kind": model.embedding.kind,
            "endpoint": model.embedding.endpoint,
            "dimension": model.embedding.dimension,
        },
        "hyperparams": {
            "learning_rate": model.hyperparams.learning_rate,
            "l2_lambda": model.hyperparams.l2_lambda,
            "epochs": model.hyperparams.epochs,
            "batch_size": model.hyperparams.batch_size,
            "seed": model.hyperparams.seed,
        },
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
        "epoch_losses": list(model.epoch_losses),
    }


def save_classifier(model: LinearClassifier, path: str | Path) -> None:
    """Write the self-describing JSON artifact. Deterministic byte-for-byte."""
    doc = _classifier_to_doc(model)
    payload = json.dumps(doc, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    try:
        Path(path).write_text(payload + "\n", encoding="utf-8")
    except OSError as exc:
        raise ModelError(f"cannot write model artifact to {path}: {exc}") from exc


def load_classifier(path: str | Path) -> LinearClassifier:
    path = Path(path)
    if not path.exists():
        raise ModelError(f"model artifact not found: {path}")
    try:
        doc = json.loads(path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read model artifact {path}: {exc}") from exc
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelError(
            f"model artifact {path} has format version {version}, expected {MODEL_FORMAT_VERSION}"
        )
    tok = doc["tokenizer"]
    cfg = TokenizerConfig(
        lowercase=tok["lowercase"],
        ngram_range=tuple(tok["ngram_range"]),
        stopwords=frozenset(tok["stopwords"]),
        min_token_len=tok["min_token_len"],
    )
    tfidf_doc = doc["tfidf"]
    tfidf = None
    if tfidf_doc is not None:
        tfidf = TfidfModel(
            vocabulary={t: int(i) for t, i in tfidf_doc["vocabulary"].items()},
            document_frequency={t: int(c) for t, c in tfidf_doc["document_frequency"].items()},
            idf={t: float(v) for t, v in tfidf_doc["idf"].items()},
            max_df=tfidf_doc["max_df"],
            min_df=tfidf_doc["min_df"],
            n_docs_fitted=tfidf_doc["n_docs_fitted"],
        )
    emb_doc = doc["embedding"]
    embedding = None
    if emb_doc is not None:
        embedding = EmbeddingProvider(
            kind=emb_doc["kind"], endpoint=emb_doc["endpoint"], dimension=emb_doc["dimension"]
        )
    hp = Hyperparams(**doc["hyperparams"])
    classes = tuple(Label(c) for c in doc["classes"])
    if classes != CANONICAL_LABELS:
        raise ModelError(f"model artifact {path} has unexpected class order")
    return LinearClassifier(
        tokenizer=cfg,
        tfidf=tfidf,
        weights=np.array(doc["weights"], dtype=np.float64),
        bias=np.array(doc["bias"], dtype=np.float64),
        classes=classes,
        hyperparams=hp,
        feature_mode=doc["feature_mode"],
        embedding=embedding,
        epoch_losses=tuple(doc["epoch_losses"]),
    )


def artifact_digest(path: str | Path) -> str:
    """Short content hash of an artifact file; used as the served model_version."""
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return digest[:12]

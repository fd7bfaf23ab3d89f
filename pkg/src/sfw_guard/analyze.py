"""Per-label topic extraction, 2D projection of embeddings, word-frequency export.

Topic extraction runs TF-IDF pruning (max_df/min_df) over one label's records
and then collapsed-Gibbs LDA on integer token counts over the surviving
vocabulary. The 2D projection is plain PCA; the emitted coordinates are
format-compatible with any other projector.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .corpus import Dataset, Label
from .errors import SfwGuardError
from .model import TokenizerConfig, fit_tfidf, tokenize


class AnalyzeError(SfwGuardError):
    """Raised for degenerate analysis inputs."""


@dataclass(frozen=True, eq=False)
class TopicModel:
    k: int
    vocabulary: tuple[str, ...]
    topic_word: np.ndarray  # (k, V), rows sum to 1
    doc_topic: np.ndarray  # (N, k), rows sum to 1
    iterations: int
    seed: int
    alpha: float
    beta: float
    # Total assigned-token count recorded after every Gibbs sweep; all entries
    # must equal the corpus token count (count-conservation invariant).
    sweep_token_totals: tuple[int, ...] = field(default=(), repr=False)

    def top_terms(self, topic: int, n: int = 10) -> list[tuple[str, float]]:
        row = self.topic_word[topic]
        order = sorted(range(len(self.vocabulary)), key=lambda i: (-row[i], self.vocabulary[i]))
        return [(self.vocabulary[i], float(row[i])) for i in order[:n]]


def fit_lda(
    docs,
    k: int = 10,
    alpha: float | None = None,
    beta: float = 0.01,
    iterations: int = 200,
    seed: int = 0,
) -> TopicModel:
    """Collapsed Gibbs sampling over token-topic assignments.

    docs is a list of token lists. Symmetric Dirichlet priors; alpha defaults
    to 50/k. phi and theta are posterior estimates from the final counts.
    Deterministic given the seed.
    """
    if k < 1:
        raise AnalyzeError(f"topic count must be >= 1, got {k}")
    if iterations < 1:
        raise AnalyzeError(f"iterations must be >= 1, got {iterations}")
    docs = [list(d) for d in docs]
    if not docs:
        raise AnalyzeError("cannot fit LDA on an empty corpus")
    vocabulary = tuple(sorted({t for d in docs for t in d}))
    if not vocabulary:
        raise AnalyzeError("LDA vocabulary is empty")
    if alpha is None:
        alpha = 50.0 / k
    word_id = {t: i for i, t in enumerate(vocabulary)}
    v = len(vocabulary)

    doc_words = [[word_id[t] for t in d] for d in docs]
    rng = random.Random(seed)

    n_kw = [[0] * v for _ in range(k)]  # topic x word counts
    n_k = [0] * k  # tokens per topic
    n_dk = [[0] * k for _ in doc_words]  # doc x topic counts
    assignments = []
    for d, words in enumerate(doc_words):
        z_doc = []
        for w in words:
            z = rng.randrange(k)
            z_doc.append(z)
            n_kw[z][w] += 1
            n_k[z] += 1
            n_dk[d][z] += 1
        assignments.append(z_doc)

    total_tokens = sum(len(w) for w in doc_words)
    v_beta = v * beta
    sweep_totals = []
    for _ in range(iterations):
        for d, words in enumerate(doc_words):
            z_doc = assignments[d]
            dk = n_dk[d]
            for pos, w in enumerate(words):
                z = z_doc[pos]
                n_kw[z][w] -= 1
                n_k[z] -= 1
                dk[z] -= 1
                # p(z=t | rest) ∝ (n_kw + beta)/(n_k + V*beta) * (n_dk + alpha)
                weights = [
                    (n_kw[t][w] + beta) / (n_k[t] + v_beta) * (dk[t] + alpha) for t in range(k)
                ]
                target = rng.random() * sum(weights)
                acc = 0.0
                new_z = k - 1
                for t, wt in enumerate(weights):
                    acc += wt
                    if target < acc:
                        new_z = t
                        break
                z_doc[pos] = new_z
                n_kw[new_z][w] += 1
                n_k[new_z] += 1
                dk[new_z] += 1
        sweep_totals.append(sum(n_k))

    topic_word = (np.asarray(n_kw, dtype=np.float64) + beta) / (
        np.asarray(n_k, dtype=np.float64)[:, None] + v_beta
    )
    doc_lengths = np.array([len(w) for w in doc_words], dtype=np.float64)
    doc_topic = (np.asarray(n_dk, dtype=np.float64) + alpha) / (doc_lengths[:, None] + k * alpha)
    assert all(t == total_tokens for t in sweep_totals)
    return TopicModel(
        k=k,
        vocabulary=vocabulary,
        topic_word=topic_word,
        doc_topic=doc_topic,
        iterations=iterations,
        seed=seed,
        alpha=alpha,
        beta=beta,
        sweep_token_totals=tuple(sweep_totals),
    )


@dataclass(frozen=True)
class TopicReport:
    label: Label
    ngram_range: tuple[int, int]
    top_terms: tuple[tuple[str, float], ...]


def _label_texts(dataset: Dataset, label: Label) -> list[str]:
    texts = [r.text for r in dataset.records if r.label == label and r.dropped_by is None]
    if not texts:
        raise AnalyzeError(f"no records with label {label.value!r}")
    return texts


def label_topics(
    dataset: Dataset,
    label: Label,
    *,
    ngram_range: tuple[int, int] = (1, 1),
    k: int = 10,
    n_terms: int = 10,
    stopwords: frozenset[str] = frozenset(),
    max_df: float = 0.95,
    min_df: int = 1,
    iterations: int = 200,
    seed: int = 0,
    alpha: float | None = None,
    beta: float | None = None,
) -> TopicReport:
    """Top terms of the dominant topic for one label's corpus.

    TF-IDF pruning (max_df/min_df) narrows the vocabulary, LDA runs on
    counts over it, and the topic with the largest doc_topic column mass is
    reported. Fewer than n_terms come back when the vocabulary is small.

    A per-label corpus is thematically homogeneous, so the priors default to
    the sparse 1/k used by the common library implementations; the diffuse
    50/k default of fit_lda splits strongly co-occurring terms across topics
    here.
    """
    texts = _label_texts(dataset, label)
    cfg = TokenizerConfig(ngram_range=ngram_range, stopwords=stopwords)
    if math.floor(max_df * len(texts)) < min_df:
        # degenerate corpora (a single short doc) would otherwise prune away
        # every term
        max_df = 1.0
    tfidf = fit_tfidf(cfg, texts, max_df=max_df, min_df=min_df)
    vocab = tfidf.vocabulary
    docs = [[t for t in tokenize(cfg, text) if t in vocab] for text in texts]
    docs = [d for d in docs if d]
    if not docs:
        raise AnalyzeError(f"label {label.value!r} has no tokens left after pruning")
    model = fit_lda(
        docs,
        k=k,
        alpha=alpha if alpha is not None else 1.0 / k,
        beta=beta if beta is not None else 1.0 / k,
        iterations=iterations,
        seed=seed,
    )
    dominant = int(np.argmax(model.doc_topic.sum(axis=0)))
    return TopicReport(
        label=label,
        ngram_range=ngram_range,
        top_terms=tuple(model.top_terms(dominant, n_terms)),
    )


@dataclass(frozen=True, eq=False)
class Projection2D:
    points: np.ndarray  # (n, 2)
    labels: tuple[Label, ...]
    ids: tuple[str, ...]
    sample_cap: int
    explained_variance: tuple[float, float]
    components: np.ndarray  # (2, d) principal axes, for reconstruction


def pca_project(
    vectors,
    labels,
    ids=None,
    sample_cap: int = 1200,
    seed: int = 0,
) -> Projection2D:
    """Project embeddings to 2D via the top two principal components.

    Each label is first subsampled to sample_cap points (seeded) to keep the
    plot from over-scattering. Component 1 always explains at least as much
    variance as component 2.
    """
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2:
        raise AnalyzeError(f"expected a 2D vector batch, got shape {arr.shape}")
    if arr.shape[1] < 2:
        raise AnalyzeError("projection to 2D needs vectors of dimension >= 2")
    labels = list(labels)
    if len(labels) != arr.shape[0]:
        raise AnalyzeError(f"{arr.shape[0]} vectors but {len(labels)} labels")
    if ids is None:
        ids = [str(i) for i in range(arr.shape[0])]
    ids = list(ids)
    if len(ids) != arr.shape[0]:
        raise AnalyzeError(f"{arr.shape[0]} vectors but {len(ids)} ids")
    if sample_cap < 1:
        raise AnalyzeError(f"sample_cap must be >= 1, got {sample_cap}")

    rng = random.Random(seed)
    by_label: dict[Label, list[int]] = {}
    for i, label in enumerate(labels):
        by_label.setdefault(label, []).append(i)
    selected: list[int] = []
    for label in sorted(by_label, key=lambda l: l.value):
        indices = by_label[label]
        if len(indices) > sample_cap:
            indices = sorted(rng.sample(indices, sample_cap))
        selected.extend(indices)
    selected.sort()

    sample = arr[selected]
    if sample.shape[0] < 3:
        raise AnalyzeError(f"PCA projection needs at least 3 vectors, got {sample.shape[0]}")
    centered = sample - sample.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    points = centered @ vt[:2].T
    denominator = max(sample.shape[0] - 1, 1)
    explained = (float(singular[0] ** 2 / denominator), float(singular[1] ** 2 / denominator))
    return Projection2D(
        points=points,
        labels=tuple(labels[i] for i in selected),
        ids=tuple(ids[i] for i in selected),
        sample_cap=sample_cap,
        explained_variance=explained,
        components=vt[:2],
    )


def term_frequencies(
    dataset: Dataset, label: Label, cfg: TokenizerConfig | None = None
) -> list[tuple[str, int]]:
    """Stopword-filtered token counts over one label's records, descending.

    This is the export feeding any external wordcloud renderer; ties are
    broken alphabetically so output is deterministic.
    """
    cfg = cfg or TokenizerConfig(ngram_range=(1, 1))
    texts = _label_texts(dataset, label)
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(tokenize(cfg, text))
    return sorted(counts.items(), key=lambda item: (-item[1], item[0]))

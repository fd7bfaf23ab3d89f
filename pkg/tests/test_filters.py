import numpy as np
import pytest

from sfw_guard.corpus import DropReason, Label, Record
from sfw_guard.filters import (
    CentroidPolicy,
    FilterError,
    EmbeddingProvider,
    centroid,
    centroid_filter,
    embed,
    euclidean,
    load_lexicon,
    nearest_rank_percentile,
    polarity,
    sentiment_filter,
)


def rec(i, label=Label.HARASSMENT, text=None, **kw):
    return Record(id=f"f{i}", text=text or f"teks {i}", label=label, **kw)


class TestEmbed:
    provider = EmbeddingProvider(dimension=64)

    def test_identical_texts_identical_vectors(self):
        out = embed(self.provider, ["sama ayat ini", "sama ayat ini"])
        assert np.array_equal(out[0], out[1])

    def test_unit_norm(self):
        out = embed(self.provider, ["ayat pertama", "ayat kedua yang lain"])
        norms = np.linalg.norm(out, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-9)

    def test_unrelated_texts_differ(self):
        out = embed(self.provider, ["kereta merah laju", "nasi lemak sedap"])
        assert not np.array_equal(out[0], out[1])

    def test_shape_and_order(self):
        texts = ["a b", "c d", "e f"]
        out = embed(self.provider, texts)
        assert out.shape == (3, 64)
        again = embed(self.provider, list(reversed(texts)))
        assert np.array_equal(out[0], again[2])

    def test_empty_input_rejected(self):
        with pytest.raises(FilterError):
            embed(self.provider, [])

    def test_remote_wire_contract(self, monkeypatch):
        calls = {}

        class FakeResponse:
            def raise_for_status(self):
                pass

            def json(self):
                return {"vectors": [[1.0, 0.0], [0.0, 1.0]]}

        def fake_post(url, json=None, timeout=None):
            calls.update(url=url, body=json)
            return FakeResponse()

        monkeypatch.setattr("sfw_guard.filters.requests.post", fake_post)
        provider = EmbeddingProvider(kind="remote", endpoint="http://emb", dimension=2)
        out = embed(provider, ["a", "b"])
        assert calls["body"] == {"texts": ["a", "b"]}
        assert out.shape == (2, 2)

    def test_remote_dimension_mismatch(self, monkeypatch):
        class FakeResponse:
            def raise_for_status(self):
                pass

            def json(self):
                return {"vectors": [[1.0, 0.0, 0.0]]}

        monkeypatch.setattr("sfw_guard.filters.requests.post", lambda *a, **k: FakeResponse())
        provider = EmbeddingProvider(kind="remote", endpoint="http://emb", dimension=2, max_retries=0)
        with pytest.raises(FilterError, match="dimension"):
            embed(provider, ["a"])


class TestCentroid:
    def test_single_vector(self):
        v = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(centroid([v]), v)

    def test_symmetric_pair(self):
        out = centroid([np.array([0.0, 0.0]), np.array([2.0, 2.0])])
        assert np.array_equal(out, np.array([1.0, 1.0]))

    def test_hand_arithmetic(self):
        out = centroid([np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([2.0, 5.0])])
        assert np.array_equal(out, np.array([1.0, 2.0]))

    def test_empty_rejected(self):
        with pytest.raises(FilterError):
            centroid(np.empty((0, 3)))

    def test_minimizes_mean_squared_distance(self):
        rng = np.random.default_rng(11)
        points = rng.normal(size=(40, 8))
        c = centroid(points)
        base = ((points - c) ** 2).sum()
        for _ in range(100):
            candidate = c + rng.normal(scale=0.1, size=8)
            assert ((points - candidate) ** 2).sum() >= base


class TestEuclidean:
    def test_identity(self):
        v = np.array([3.0, -1.0, 2.0])
        assert euclidean(v, v) == 0.0

    def test_3_4_5(self):
        assert euclidean(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == pytest.approx(5.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b = rng.normal(size=(2, 17))
            expected = sum((x - y) ** 2 for x, y in zip(a, b)) ** 0.5
            assert euclidean(a, b) == pytest.approx(expected, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(FilterError):
            euclidean(np.zeros(3), np.zeros(4))

    def test_metric_properties(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            a, b, c = rng.normal(size=(3, 6))
            dab, dba = euclidean(a, b), euclidean(b, a)
            assert dab >= 0
            assert dab == pytest.approx(dba)
            assert euclidean(a, c) <= dab + euclidean(b, c) + 1e-12


class TestNearestRankPercentile:
    def test_percentile_100_is_max(self):
        assert nearest_rank_percentile([5.0, 1.0, 3.0], 100) == 5.0

    def test_percentile_90_of_ten(self):
        values = list(range(1, 11))
        assert nearest_rank_percentile(values, 90) == 9


class TestCentroidFilter:
    def test_percentile_100_drops_nothing(self):
        rng = np.random.default_rng(0)
        records = [rec(i) for i in range(10)]
        vectors = rng.normal(size=(10, 5))
        report = centroid_filter(records, vectors, CentroidPolicy(percentile=100))
        assert report.dropped == ()
        assert set(report.kept) == {r.id for r in records}

    def test_far_point_dropped_at_90(self):
        rng = np.random.default_rng(1)
        records = [rec(i) for i in range(10)]
        vectors = np.vstack([rng.normal(scale=0.01, size=(9, 4)), np.full((1, 4), 10.0)])
        report = centroid_filter(records, vectors, CentroidPolicy(percentile=90))
        assert report.dropped == ("f9",)
        # verify against direct distance computation
        center = vectors.mean(axis=0)
        distances = np.linalg.norm(vectors - center, axis=1)
        assert report.distances["f9"] == pytest.approx(distances[9])
        assert max(report.distances[k] for k in report.kept) <= report.threshold

    def test_identical_vectors_nothing_dropped(self):
        records = [rec(i) for i in range(6)]
        vectors = np.ones((6, 3))
        for percentile in (10, 50, 90, 100):
            report = centroid_filter(records, vectors, CentroidPolicy(percentile=percentile))
            assert report.dropped == ()

    def test_partition_invariants(self):
        rng = np.random.default_rng(4)
        records = [rec(i) for i in range(50)]
        vectors = rng.normal(size=(50, 16))
        report = centroid_filter(records, vectors, CentroidPolicy(percentile=80))
        assert set(report.kept) | set(report.dropped) == {r.id for r in records}
        assert not (set(report.kept) & set(report.dropped))
        for rid in report.dropped:
            assert report.distances[rid] > report.threshold
        for rid in report.kept:
            assert report.distances[rid] <= report.threshold
        if report.dropped:
            assert max(report.distances[k] for k in report.kept) <= min(
                report.distances[d] for d in report.dropped
            )

    def test_mean_plus_k_sigma(self):
        records = [rec(i) for i in range(5)]
        vectors = np.array([[0.0], [0.0], [0.0], [0.0], [10.0]])
        report = centroid_filter(records, vectors, CentroidPolicy(method="mean_plus_k_sigma", k=1.0))
        assert report.dropped == ("f4",)

    def test_mixed_labels_rejected(self):
        records = [rec(0, Label.RACIST), rec(1, Label.SEXIST)]
        with pytest.raises(FilterError, match="mixed"):
            centroid_filter(records, np.zeros((2, 2)))

    def test_too_few_records_rejected(self):
        with pytest.raises(FilterError):
            centroid_filter([rec(0)], np.zeros((1, 2)))

    def test_apply_marks_dropped(self):
        records = [rec(i) for i in range(3)]
        vectors = np.array([[0.0], [0.1], [9.0]])
        report = centroid_filter(records, vectors, CentroidPolicy(percentile=70))
        marked = report.apply(records)
        dropped = {r.id for r in marked if r.dropped_by is DropReason.CENTROID_FILTER}
        assert dropped == set(report.dropped)


class TestPolarity:
    lexicon = load_lexicon()

    def test_no_hits_zero(self):
        assert polarity("zzz qqq www", self.lexicon) == 0.0

    def test_malay_harassment_is_negative(self):
        assert polarity("Padan muka hang. Tau takut", self.lexicon) < 0

    def test_single_hit_mean(self):
        assert polarity("token hebat sahaja", {"hebat": 0.8}) == pytest.approx(0.8)

    def test_clamped(self):
        assert -1.0 <= polarity("sial babi pukimak", self.lexicon) <= 1.0

    def test_custom_lexicon_file(self, tmp_path):
        path = tmp_path / "lex.tsv"
        path.write_text("bagus\t0.9\nteruk\t-0.9\n")
        lex = load_lexicon(path)
        assert polarity("bagus", lex) == pytest.approx(0.9)

    def test_bad_weight_rejected(self, tmp_path):
        path = tmp_path / "lex.tsv"
        path.write_text("kata\t1.5\n")
        with pytest.raises(FilterError):
            load_lexicon(path)


class TestSentimentFilter:
    lexicon = load_lexicon()

    def test_negative_harassment_kept(self):
        records = [rec(0, Label.HARASSMENT, text="sial betul perangai")]
        kept, dropped = sentiment_filter(records, self.lexicon)
        assert len(kept) == 1 and not dropped
        assert kept[0].polarity < 0

    def test_positive_harassment_dropped(self):
        records = [rec(0, Label.HARASSMENT, text="hebat bagus cantik")]
        kept, dropped = sentiment_filter(records, self.lexicon, tau_pos=0.2)
        assert not kept and len(dropped) == 1
        assert dropped[0].dropped_by is DropReason.SENTIMENT_FILTER
        assert dropped[0].polarity > 0.2

    def test_safe_for_work_exempt(self):
        records = [rec(0, Label.SAFE_FOR_WORK, text="hebat bagus gembira love")]
        kept, dropped = sentiment_filter(records, self.lexicon)
        assert len(kept) == 1 and not dropped
        assert kept[0].polarity > 0.2

    def test_polarity_stored_on_every_record(self):
        records = [
            rec(0, Label.HARASSMENT, text="sial"),
            rec(1, Label.SAFE_FOR_WORK, text="bagus"),
        ]
        kept, dropped = sentiment_filter(records, self.lexicon)
        for r in kept + dropped:
            assert r.polarity is not None

    def test_idempotent_on_kept(self):
        records = [
            rec(i, Label.HARASSMENT, text=t)
            for i, t in enumerate(["sial punya", "biasa sahaja ayat", "bagus hebat", "teruk betul"])
        ]
        kept1, _ = sentiment_filter(records, self.lexicon)
        kept2, dropped2 = sentiment_filter(kept1, self.lexicon)
        assert kept2 == kept1
        assert dropped2 == []

    def test_previously_dropped_passes_through(self):
        already = rec(0, Label.HARASSMENT, text="sial", dropped_by=DropReason.CENTROID_FILTER)
        kept, dropped = sentiment_filter([already], self.lexicon)
        assert not kept
        assert dropped[0].dropped_by is DropReason.CENTROID_FILTER

    def test_unlabeled_rejected(self):
        with pytest.raises(FilterError):
            sentiment_filter([Record(id="u", text="x")], self.lexicon)

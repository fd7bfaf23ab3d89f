import json
import threading
import time
from dataclasses import replace

import numpy as np
import pytest

from synthetic import SYNTH_HYPERPARAMS, SYNTH_TOKENIZER, al_pools, pooled_corpus, simple_corpus
from sfw_guard.active import (
    AlreadyDecided,
    AutoAcceptReviewer,
    Decision,
    LoopConfig,
    LoopError,
    PseudolabelCandidate,
    QueueReviewer,
    ReviewQueue,
    UnknownReviewItem,
    apply_reviews,
    pseudolabel,
    run_loop,
)
from sfw_guard.corpus import CANONICAL_LABELS, Dataset, Label, Provenance, Record
from sfw_guard.model import Hyperparams, LinearClassifier, TokenizerConfig, fit_tfidf, train


def uniform_classifier():
    """Every prediction is exactly uniform over the nine classes."""
    return LinearClassifier(
        tokenizer=TokenizerConfig(),
        tfidf=fit_tfidf(TokenizerConfig(), ["placeholder text"], max_df=1.0),
        weights=np.zeros((9, 2)),
        bias=np.zeros(9),
        classes=CANONICAL_LABELS,
        hyperparams=Hyperparams(),
    )


def unlabeled(i, text=None):
    return Record(id=f"u{i}", text=text or f"ayat {i}")


class TestLoopConfig:
    def test_bounds(self):
        with pytest.raises(LoopError):
            LoopConfig(target_accuracy=1.5)
        with pytest.raises(LoopError):
            LoopConfig(target_accuracy=0.9, confidence_threshold=1.0)
        with pytest.raises(LoopError):
            LoopConfig(target_accuracy=0.9, max_rounds=0)
        with pytest.raises(LoopError):
            LoopConfig(target_accuracy=0.9, review_mode="committee")


class TestPseudolabel:
    def test_tau_zero_takes_everything(self):
        pool = Dataset.from_records([unlabeled(i) for i in range(5)])
        candidates = pseudolabel(uniform_classifier(), pool, tau=0.0)
        assert len(candidates) == 5

    def test_tau_near_one_on_uniform_predictor_empty(self):
        pool = Dataset.from_records([unlabeled(i) for i in range(5)])
        assert pseudolabel(uniform_classifier(), pool, tau=0.999999) == []

    def test_separable_corpus_proposals_match_planted(self, simple_model):
        clf, train_set, _ = simple_model
        stripped = Dataset.from_records(
            [replace(r, label=None) for r in train_set.records[:50]]
        )
        truth = {r.id: r.label for r in train_set.records[:50]}
        candidates = pseudolabel(clf, stripped, tau=0.9)
        assert candidates
        for c in candidates:
            assert c.proposed == truth[c.record_id]
            assert c.confidence >= 0.9

    def test_sorted_by_confidence_then_id(self, simple_model):
        clf, train_set, _ = simple_model
        stripped = Dataset.from_records([replace(r, label=None) for r in train_set.records])
        candidates = pseudolabel(clf, stripped, tau=0.0)
        keys = [(-c.confidence, c.record_id) for c in candidates]
        assert keys == sorted(keys)

    def test_labeled_pool_rejected(self, simple_model):
        clf, train_set, _ = simple_model
        with pytest.raises(LoopError):
            pseudolabel(clf, Dataset.from_records(train_set.records[:2]), tau=0.5)


class TestApplyReviews:
    def candidates(self, n=5):
        return [
            PseudolabelCandidate(f"u{i}", Label.RACIST, 0.95, round=1) for i in range(n)
        ]

    def pool(self, n=5):
        return Dataset.from_records([unlabeled(i) for i in range(n)])

    def test_all_accept(self):
        cands = self.candidates()
        decisions = {c.record_id: Decision("accept") for c in cands}
        out = apply_reviews(cands, decisions, self.pool())
        assert len(out) == 5
        for r in out:
            assert r.label is Label.RACIST
            assert r.provenance is Provenance.PSEUDOLABEL
            assert r.confidence == 0.95

    def test_relabel_overrides_proposal(self):
        cands = self.candidates(1)
        decisions = {"u0": Decision("relabel", Label.RELIGIOUS_INSULT)}
        out = apply_reviews(cands, decisions, self.pool(1))
        assert out[0].label is Label.RELIGIOUS_INSULT

    def test_all_reject_empty(self):
        cands = self.candidates()
        decisions = {c.record_id: Decision("reject") for c in cands}
        assert apply_reviews(cands, decisions, self.pool()) == []

    def test_unknown_candidate_rejected(self):
        with pytest.raises(LoopError, match="unknown candidate"):
            apply_reviews(self.candidates(1), {"nope": Decision("accept")}, self.pool(1))

    def test_relabel_requires_label(self):
        with pytest.raises(Exception):
            Decision("relabel")


class TestRunLoop:
    def trainer(self):
        return lambda dataset, round_index: train(dataset, SYNTH_TOKENIZER, SYNTH_HYPERPARAMS)

    def test_degenerate_target_stops_after_first_eval(self):
        train_set, test_set = simple_corpus(n_train=6, n_test=2)
        d_l, d_u, _ = al_pools(train_set, 0.5)
        cfg = LoopConfig(target_accuracy=0.0, max_rounds=5)
        _, reports = run_loop(d_l, d_u, test_set, cfg, self.trainer())
        assert len(reports) == 1
        assert reports[0].stop_reason == "target_reached"
        assert reports[0].labeled_after == reports[0].labeled_before

    def test_empty_unlabeled_pool_stops_no_candidates(self):
        # force the loop past the target check with an imperfect model so the
        # empty pool is what stops it
        records = [
            Record(id=f"a{i}", text=f"kata rawak {i} sini", label=Label.RACIST) for i in range(3)
        ] + [
            Record(id=f"b{i}", text=f"kata rawak {i} sana", label=Label.SEXIST) for i in range(3)
        ]
        d_l = Dataset.from_records(records)
        test_set = Dataset.from_records(
            [
                Record(id="t0", text="kata rawak 9 sini", label=Label.SEXIST),
                Record(id="t1", text="kata rawak 9 sana", label=Label.RACIST),
            ]
        )
        cfg = LoopConfig(target_accuracy=1.0, max_rounds=3)
        _, reports = run_loop(d_l, Dataset(), test_set, cfg, self.trainer())
        assert len(reports) == 1
        assert reports[0].stop_reason == "no_candidates"

    def test_overlapping_test_ids_rejected(self):
        train_set, _ = simple_corpus(n_train=4, n_test=2)
        d_l, d_u, _ = al_pools(train_set, 0.5)
        bad_test = Dataset.from_records([d_l.records[0]])
        with pytest.raises(LoopError, match="overlap"):
            run_loop(d_l, d_u, bad_test, LoopConfig(target_accuracy=0.9), self.trainer())

    def test_full_al_run_properties(self):
        train_set, test_set = pooled_corpus(seed=0)
        d_l, d_u, truth = al_pools(train_set, 0.2)
        initial_labeled = len(d_l)
        total = len(d_l) + len(d_u)
        cfg = LoopConfig(target_accuracy=0.95, confidence_threshold=0.9, max_rounds=8)
        model, reports = run_loop(d_l, d_u, test_set, cfg, self.trainer())

        assert 1 <= len(reports) <= cfg.max_rounds
        sizes = [r.labeled_before for r in reports] + [reports[-1].labeled_after]
        assert sizes == sorted(sizes)  # |D_L| non-decreasing
        for r in reports:
            assert r.labeled_after == r.labeled_before + r.accepted
        assert reports[-1].stop_reason == "target_reached"
        assert reports[-1].eval.accuracy >= 0.95
        assert reports[-1].labeled_after > initial_labeled  # actually grew

    def test_run_log_appended(self, tmp_path):
        train_set, test_set = simple_corpus(n_train=6, n_test=2)
        d_l, d_u, _ = al_pools(train_set, 0.5)
        log_path = tmp_path / "run.log"
        cfg = LoopConfig(target_accuracy=0.0, max_rounds=2)
        _, reports = run_loop(d_l, d_u, test_set, cfg, self.trainer(), run_log_path=log_path)
        lines = [json.loads(l) for l in log_path.read_text().splitlines()]
        assert len(lines) == len(reports)
        assert lines[0]["round"] == 1
        assert "accuracy" in lines[0]


class TestReviewQueue:
    def candidates(self, n=3, round_index=1):
        return [
            PseudolabelCandidate(f"u{i}", Label.VIOLENCE, 0.9 + i / 100, round=round_index)
            for i in range(n)
        ]

    def texts(self, n=3):
        return {f"u{i}": f"teks {i}" for i in range(n)}

    def test_enqueue_and_pending_order(self, tmp_path):
        q = ReviewQueue(tmp_path / "q.jsonl")
        q.enqueue(self.candidates(3, round_index=1), self.texts())
        q.enqueue([PseudolabelCandidate("u9", Label.RACIST, 0.91, round=2)], {"u9": "baru"})
        items = q.pending()
        assert items[0]["id"] == "u9"  # newest round first
        assert [i["id"] for i in items[1:]] == ["u2", "u1", "u0"]  # confidence desc

    def test_pending_limit(self, tmp_path):
        q = ReviewQueue(tmp_path / "q.jsonl")
        q.enqueue(self.candidates(5), self.texts(5))
        assert len(q.pending(limit=2)) == 2

    def test_decide_accept_reject_relabel(self, tmp_path):
        q = ReviewQueue(tmp_path / "q.jsonl")
        q.enqueue(self.candidates(3), self.texts())
        assert q.decide("u0", "accept")["label"] == "violence"
        assert q.decide("u1", "reject")["label"] is None
        entry = q.decide("u2", "relabel", "religious insult")
        assert entry["label"] == "religious_insult"
        stats = q.stats()
        assert stats["by_state"] == {"pending": 0, "accepted": 1, "rejected": 1, "relabeled": 1}
        assert stats["by_label"]["religious_insult"] == 1

    def test_unknown_and_double_decision(self, tmp_path):
        q = ReviewQueue(tmp_path / "q.jsonl")
        q.enqueue(self.candidates(1), self.texts(1))
        with pytest.raises(UnknownReviewItem):
            q.decide("ghost", "accept")
        q.decide("u0", "accept")
        with pytest.raises(AlreadyDecided):
            q.decide("u0", "reject")

    def test_durable_across_reopen(self, tmp_path):
        path = tmp_path / "q.jsonl"
        ReviewQueue(path).enqueue(self.candidates(2), self.texts(2))
        ReviewQueue(path).decide("u0", "accept")
        # a fresh handle (simulating restart) sees the decision
        stats = ReviewQueue(path).stats()
        assert stats["by_state"]["accepted"] == 1
        assert stats["by_state"]["pending"] == 1

    def test_enqueue_resume_skips_existing_round(self, tmp_path):
        q = ReviewQueue(tmp_path / "q.jsonl")
        cands = self.candidates(2)
        assert q.enqueue(cands, self.texts(2)) == 2
        assert q.enqueue(cands, self.texts(2)) == 0  # crash-restart re-enqueue
        q.decide("u0", "accept")
        assert q.enqueue(cands, self.texts(2)) == 0  # decisions survive resume
        assert q.stats()["by_state"]["accepted"] == 1

    def test_re_enqueue_later_round_resets(self, tmp_path):
        q = ReviewQueue(tmp_path / "q.jsonl")
        q.enqueue(self.candidates(1, round_index=1), self.texts(1))
        q.decide("u0", "reject")
        q.enqueue(self.candidates(1, round_index=2), self.texts(1))
        assert q.pending()[0]["round"] == 2

    def test_round_complete_and_decisions(self, tmp_path):
        q = ReviewQueue(tmp_path / "q.jsonl")
        q.enqueue(self.candidates(2), self.texts(2))
        assert not q.round_complete(1)
        q.decide("u0", "accept")
        q.decide("u1", "relabel", "sexist")
        assert q.round_complete(1)
        decisions = q.decisions_for_round(1)
        assert decisions["u0"].action == "accept"
        assert decisions["u1"].action == "relabel"
        assert decisions["u1"].label is Label.SEXIST


class TestQueueReviewer:
    def test_blocks_until_decided(self, tmp_path):
        queue = ReviewQueue(tmp_path / "q.jsonl")
        cands = [PseudolabelCandidate("u0", Label.RACIST, 0.93, round=1)]
        reviewer = QueueReviewer(queue, poll_interval=0.02, timeout=5.0)

        def decide_later():
            time.sleep(0.15)
            queue.decide("u0", "accept")

        thread = threading.Thread(target=decide_later)
        thread.start()
        decisions = reviewer.review(cands, {"u0": "teks"})
        thread.join()
        assert decisions["u0"].action == "accept"

    def test_timeout(self, tmp_path):
        queue = ReviewQueue(tmp_path / "q.jsonl")
        cands = [PseudolabelCandidate("u0", Label.RACIST, 0.93, round=1)]
        reviewer = QueueReviewer(queue, poll_interval=0.02, timeout=0.1)
        with pytest.raises(Exception, match="timed out"):
            reviewer.review(cands, {"u0": "teks"})

    def test_loop_consumes_exactly_accepted_set(self, tmp_path):
        train_set, test_set = pooled_corpus(n_train=12, n_test=4, seed=0)
        d_l, d_u, truth = al_pools(train_set, 0.25)
        queue = ReviewQueue(tmp_path / "q.jsonl")
        cfg = LoopConfig(
            target_accuracy=0.99, confidence_threshold=0.9, max_rounds=2, review_mode="queue"
        )
        reviewer = QueueReviewer(queue, poll_interval=0.02, timeout=30.0)

        stop = threading.Event()
        outcomes = {}

        def annotator():
            # accept even-indexed ids, reject the rest, as they appear
            while not stop.is_set():
                for item in queue.pending():
                    action = "accept" if int(item["id"].split("-")[-1]) % 2 == 0 else "reject"
                    outcomes[item["id"]] = action
                    try:
                        queue.decide(item["id"], action)
                    except AlreadyDecided:
                        pass
                time.sleep(0.02)

        thread = threading.Thread(target=annotator, daemon=True)
        thread.start()
        trainer = lambda ds, rnd: train(ds, SYNTH_TOKENIZER, SYNTH_HYPERPARAMS)
        try:
            _, reports = run_loop(d_l, d_u, test_set, cfg, trainer, reviewer=reviewer)
        finally:
            stop.set()
            thread.join(timeout=2)
        accepted_total = sum(r.accepted for r in reports)
        assert accepted_total == sum(1 for v in outcomes.values() if v == "accept")
        growth_rounds = [r for r in reports if r.accepted]
        if growth_rounds:
            assert growth_rounds[0].labeled_after == growth_rounds[0].labeled_before + growth_rounds[0].accepted

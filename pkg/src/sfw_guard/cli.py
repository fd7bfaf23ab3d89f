"""Command-line driver for every pipeline stage.

Options resolve in three layers: explicit flag, then the --config JSON file,
then the built-in default. Exit codes: 0 on success, 1 with a one-line
diagnostic on failure, 2 for usage errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import active, analyze, annotate, corpus, filters, model, service
from .errors import SfwGuardError


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise SfwGuardError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise SfwGuardError(f"config file {p} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SfwGuardError(f"config file {p} must hold a JSON object")
    return doc


class Options:
    """Flag > config > default resolution for one parsed invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = _load_config(args.config)

    def get(self, name: str, default=None):
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        if name in self.config:
            return self.config[name]
        return default

    @property
    def seed(self) -> int:
        return int(self.get("seed", 0))


def _stopwords(opts: Options) -> frozenset[str]:
    path = opts.get("stopwords")
    if opts.get("no_stopwords", False):
        return frozenset()
    return model.load_stopwords(path)


def _tokenizer(opts: Options) -> model.TokenizerConfig:
    ngram = opts.get("ngram", "1,2")
    if isinstance(ngram, str):
        lo, _, hi = ngram.partition(",")
        ngram = (int(lo), int(hi or lo))
    return model.TokenizerConfig(ngram_range=tuple(ngram), stopwords=_stopwords(opts))


def _embedding_provider(opts: Options) -> filters.EmbeddingProvider:
    endpoint = opts.get("embed_endpoint")
    return filters.EmbeddingProvider(
        kind="remote" if endpoint else "local_hash",
        endpoint=endpoint,
        dimension=int(opts.get("embed_dim", filters.DEFAULT_DIMENSION)),
    )


def _hyperparams(opts: Options) -> model.Hyperparams:
    return model.Hyperparams(
        learning_rate=float(opts.get("learning_rate", 1.0)),
        l2_lambda=float(opts.get("l2_lambda", 1e-4)),
        epochs=int(opts.get("epochs", 200)),
        batch_size=int(opts.get("batch_size", 32)),
        seed=opts.seed,
    )


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_ingest(opts: Options) -> int:
    source = opts.get("source", "ingest")
    records = []
    for input_path in opts.args.inputs:
        path = Path(input_path)
        if not path.exists():
            raise SfwGuardError(f"input file not found: {path}")
        for lineno, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
            text = line.strip()
            if not text:
                continue
            rid = hashlib.sha1(f"{source}\n{path.name}\n{lineno}\n{text}".encode()).hexdigest()[:16]
            records.append(corpus.Record(id=rid, text=text, source=source))
    dataset = corpus.Dataset.from_records(records)
    if opts.get("dedup", True):
        dataset = corpus.dedup(dataset)
    corpus.save_dataset(dataset, opts.args.output)
    print(f"ingested {len(dataset)} records -> {opts.args.output}")
    return 0


def cmd_annotate(opts: Options) -> int:
    dataset = corpus.load_dataset(opts.args.input, strict=not opts.get("lenient", False))
    todo = list(dataset.unlabeled)
    if opts.get("stub", False):
        client = annotate.StubTeacherClient(opts.config.get("stub_rules", {}))
        max_retries = 0
    else:
        endpoint = opts.get("endpoint")
        if not endpoint:
            raise SfwGuardError("annotate requires --endpoint (or --stub for the offline teacher)")
        provider = annotate.TeacherProvider(
            endpoint=endpoint,
            model_name=opts.get("model_name", "teacher"),
            timeout=float(opts.get("timeout", 30.0)),
            max_retries=int(opts.get("max_retries", 2)),
        )
        client = annotate.HttpTeacherClient(provider)
        max_retries = provider.max_retries
    labeled, failures = annotate.annotate_batch(
        client, todo, max_retries=max_retries, max_in_flight=int(opts.get("max_in_flight", 4))
    )
    by_id = {r.id: r for r in labeled}
    merged = [by_id.get(r.id, r) for r in dataset.records]
    corpus.save_dataset(corpus.Dataset.from_records(merged), opts.args.output)
    for rid, exc in failures:
        print(f"failed {rid}: {exc}", file=sys.stderr)
    print(f"annotated {len(labeled)} records, {len(failures)} failures -> {opts.args.output}")
    return 0 if not failures else 1


def cmd_filter_centroid(opts: Options) -> int:
    dataset = corpus.load_dataset(opts.args.input, strict=not opts.get("lenient", False))
    provider = _embedding_provider(opts)
    policy = filters.CentroidPolicy(
        method=opts.get("method", "percentile"),
        percentile=float(opts.get("percentile", 90.0)),
        k=float(opts.get("k_sigma", 2.0)),
    )
    records = list(dataset.records)
    report_lines = []
    for label in corpus.CANONICAL_LABELS:
        pool = [r for r in records if r.label == label and r.dropped_by is None]
        if len(pool) < 2:
            continue
        vectors = filters.embed(provider, [r.text for r in pool])
        report = filters.centroid_filter(pool, vectors, policy)
        records = corpus.mark_dropped(records, report.dropped, corpus.DropReason.CENTROID_FILTER)
        report_lines.append(
            {
                "label": label.value,
                "threshold": report.threshold,
                "kept": len(report.kept),
                "dropped": len(report.dropped),
            }
        )
    corpus.save_dataset(corpus.Dataset.from_records(records), opts.args.output)
    report_path = opts.get("report")
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            for line in report_lines:
                fh.write(json.dumps(line) + "\n")
    total_dropped = sum(line["dropped"] for line in report_lines)
    print(f"centroid filter dropped {total_dropped} records -> {opts.args.output}")
    return 0


def cmd_filter_sentiment(opts: Options) -> int:
    dataset = corpus.load_dataset(opts.args.input, strict=not opts.get("lenient", False))
    lexicon = filters.load_lexicon(opts.get("lexicon"))
    tau = float(opts.get("tau_pos", filters.DEFAULT_POSITIVE_THRESHOLD))
    labeled = [r for r in dataset.records if r.label is not None]
    unlabeled = [r for r in dataset.records if r.label is None]
    kept, dropped = filters.sentiment_filter(labeled, lexicon, tau)
    merged = {r.id: r for r in kept + dropped}
    out = [merged.get(r.id, r) for r in dataset.records if r.label is not None]
    corpus.save_dataset(corpus.Dataset.from_records(out + unlabeled), opts.args.output)
    newly_dropped = sum(
        1 for r in dropped if r.dropped_by == corpus.DropReason.SENTIMENT_FILTER
    )
    print(f"sentiment filter dropped {newly_dropped} records -> {opts.args.output}")
    return 0


def cmd_split(opts: Options) -> int:
    dataset = corpus.load_dataset(opts.args.input, strict=not opts.get("lenient", False))
    spec = corpus.SplitSpec(train_fraction=float(opts.get("fraction", 0.8)), seed=opts.seed)
    train, test = corpus.stratified_split(dataset, spec)
    corpus.save_dataset(train, opts.args.train_output)
    corpus.save_dataset(test, opts.args.test_output)
    print(f"split {len(dataset)} records into {len(train)} train / {len(test)} test")
    return 0


def cmd_train(opts: Options) -> int:
    dataset = corpus.load_dataset(opts.args.input, strict=not opts.get("lenient", False))
    clf = model.train(
        dataset,
        _tokenizer(opts),
        _hyperparams(opts),
        feature_mode=opts.get("features", "tfidf"),
        embedding=_embedding_provider(opts) if opts.get("features") == "embedding" else None,
        max_df=float(opts.get("max_df", 0.95)),
        min_df=int(opts.get("min_df", 1)),
    )
    model.save_classifier(clf, opts.args.output)
    print(
        f"trained on {len(dataset.labeled)} records, "
        f"final loss {clf.epoch_losses[-1]:.6f} -> {opts.args.output}"
    )
    return 0


def cmd_eval(opts: Options) -> int:
    clf = model.load_classifier(opts.args.model)
    test = corpus.load_dataset(opts.args.test, strict=not opts.get("lenient", False))
    report = model.evaluate(clf, test)
    print(f"accuracy {report.accuracy:.5f}")
    print(f"macro_precision {report.macro_precision:.5f}")
    print(f"macro_recall {report.macro_recall:.5f}")
    print(f"macro_f1 {report.macro_f1:.5f}")
    out = opts.get("report")
    if out:
        doc = {
            "accuracy": report.accuracy,
            "macro_precision": report.macro_precision,
            "macro_recall": report.macro_recall,
            "macro_f1": report.macro_f1,
            "per_class": {
                label.value: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                }
                for label, m in report.per_class.items()
            },
            "confusion": report.confusion.tolist(),
        }
        Path(out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_al_run(opts: Options) -> int:
    strict = not opts.get("lenient", False)
    d_l = corpus.load_dataset(opts.args.labeled, strict=strict)
    d_u = corpus.load_dataset(opts.args.unlabeled, strict=strict)
    test = corpus.load_dataset(opts.args.test, strict=strict)
    cfg = active.LoopConfig(
        target_accuracy=float(opts.get("target_accuracy", 0.95)),
        confidence_threshold=float(opts.get("confidence", 0.9)),
        max_rounds=int(opts.get("max_rounds", 5)),
        review_mode=opts.get("review_mode", "auto_accept"),
        seed=opts.seed,
    )
    tokenizer = _tokenizer(opts)
    hp = _hyperparams(opts)

    def trainer(dataset, round_index):
        return model.train(dataset, tokenizer, hp)

    reviewer = None
    if cfg.review_mode == "queue":
        queue_path = opts.get("queue")
        if not queue_path:
            raise SfwGuardError("queue review mode requires --queue")
        reviewer = active.QueueReviewer(
            active.ReviewQueue(queue_path),
            poll_interval=float(opts.get("poll_interval", 0.5)),
            timeout=opts.get("review_timeout"),
        )
    clf, reports = active.run_loop(
        d_l, d_u, test, cfg, trainer, reviewer=reviewer, run_log_path=opts.get("run_log")
    )
    model.save_classifier(clf, opts.args.output)
    final = reports[-1]
    print(
        f"loop finished after round {final.round} "
        f"(accuracy {final.eval.accuracy:.5f}, reason {final.stop_reason}) -> {opts.args.output}"
    )
    return 0


def cmd_topics(opts: Options) -> int:
    dataset = corpus.load_dataset(opts.args.input, strict=not opts.get("lenient", False))
    cfg_stopwords = _stopwords(opts)
    ngram = opts.get("ngram", "1,1")
    if isinstance(ngram, str):
        lo, _, hi = ngram.partition(",")
        ngram = (int(lo), int(hi or lo))
    wanted = opts.get("label")
    labels = [corpus.parse_label(wanted)] if wanted else list(corpus.CANONICAL_LABELS)
    lines = []
    for label in labels:
        present = any(r.label == label and r.dropped_by is None for r in dataset.records)
        if not present:
            continue
        report = analyze.label_topics(
            dataset,
            label,
            ngram_range=tuple(ngram),
            k=int(opts.get("topics", 10)),
            n_terms=int(opts.get("terms", 10)),
            stopwords=cfg_stopwords,
            iterations=int(opts.get("iterations", 200)),
            seed=opts.seed,
        )
        for rank, (term, weight) in enumerate(report.top_terms, start=1):
            lines.append(
                {
                    "label": label.value,
                    "ngram_min": ngram[0],
                    "ngram_max": ngram[1],
                    "rank": rank,
                    "term": term,
                    "weight": weight,
                }
            )
    with open(opts.args.output, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line, ensure_ascii=False) + "\n")
    print(f"wrote {len(lines)} topic terms -> {opts.args.output}")
    return 0


def cmd_project(opts: Options) -> int:
    dataset = corpus.load_dataset(opts.args.input, strict=not opts.get("lenient", False))
    pool = dataset.labeled
    if not pool:
        raise SfwGuardError("projection needs labeled records")
    provider = _embedding_provider(opts)
    vectors = filters.embed(provider, [r.text for r in pool])
    projection = analyze.pca_project(
        vectors,
        [r.label for r in pool],
        ids=[r.id for r in pool],
        sample_cap=int(opts.get("sample_cap", 1200)),
        seed=opts.seed,
    )
    with open(opts.args.output, "w", encoding="utf-8") as fh:
        fh.write("x\ty\tlabel\trecord_id\n")
        for (x, y), label, rid in zip(projection.points, projection.labels, projection.ids):
            fh.write(f"{x:.6f}\t{y:.6f}\t{label.value}\t{rid}\n")
    print(f"projected {len(projection.ids)} records -> {opts.args.output}")
    return 0


def cmd_freq(opts: Options) -> int:
    dataset = corpus.load_dataset(opts.args.input, strict=not opts.get("lenient", False))
    cfg = model.TokenizerConfig(ngram_range=(1, 1), stopwords=_stopwords(opts))
    wanted = opts.get("label")
    labels = [corpus.parse_label(wanted)] if wanted else list(corpus.CANONICAL_LABELS)
    lines = []
    for label in labels:
        present = any(r.label == label and r.dropped_by is None for r in dataset.records)
        if not present:
            continue
        for rank, (term, count) in enumerate(analyze.term_frequencies(dataset, label, cfg), start=1):
            lines.append({"label": label.value, "rank": rank, "term": term, "count": count})
    with open(opts.args.output, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line, ensure_ascii=False) + "\n")
    print(f"wrote {len(lines)} term counts -> {opts.args.output}")
    return 0


def cmd_serve(opts: Options) -> int:
    config_path = opts.args.config or os.environ.get(service.ENV_CONFIG)
    if config_path:
        cfg = service.ServiceConfig.from_file(config_path)
    else:
        model_path = opts.get("model")
        queue_path = opts.get("queue")
        if not model_path or not queue_path:
            raise SfwGuardError("serve requires --model and --queue (or a config file)")
        cfg = service.ServiceConfig(
            model_path=model_path,
            queue_path=queue_path,
            host=opts.get("host", "127.0.0.1"),
            port=int(opts.get("port", 8756)),
            ui_dir=opts.get("ui_dir"),
        ).with_env_bind()
    service.serve(cfg)
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfw-guard", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--seed", type=int, default=None, help="seed for all randomized steps")
        p.add_argument("--config", default=None, help="JSON file of option defaults")
        p.add_argument("--lenient", action="store_true", default=None, help="keep unknown dataset fields")

    p = sub.add_parser("ingest", help="turn raw text files (one text per line) into a dataset")
    common(p)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--output", required=True)
    p.add_argument("--source", default=None)
    p.add_argument("--dedup", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("annotate", help="label unlabeled records with a teacher LLM")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--model-name", dest="model_name", default=None)
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--max-retries", dest="max_retries", type=int, default=None)
    p.add_argument("--max-in-flight", dest="max_in_flight", type=int, default=None)
    p.add_argument("--stub", action="store_true", default=None, help="use the offline stub teacher")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("filter-centroid", help="per-label embedding outlier filtering")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--method", choices=["percentile", "mean_plus_k_sigma"], default=None)
    p.add_argument("--percentile", type=float, default=None)
    p.add_argument("--k-sigma", dest="k_sigma", type=float, default=None)
    p.add_argument("--embed-endpoint", dest="embed_endpoint", default=None)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    p.set_defaults(func=cmd_filter_centroid)

    p = sub.add_parser("filter-sentiment", help="drop positively-polarized harm records")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--lexicon", default=None)
    p.add_argument("--tau-pos", dest="tau_pos", type=float, default=None)
    p.set_defaults(func=cmd_filter_sentiment)

    p = sub.add_parser("split", help="stratified train/test split")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--train-output", dest="train_output", required=True)
    p.add_argument("--test-output", dest="test_output", required=True)
    p.add_argument("--fraction", type=float, default=None)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the nine-class classifier")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--features", choices=["tfidf", "embedding"], default=None)
    p.add_argument("--ngram", default=None)
    p.add_argument("--stopwords", default=None)
    p.add_argument("--no-stopwords", dest="no_stopwords", action="store_true", default=None)
    p.add_argument("--max-df", dest="max_df", type=float, default=None)
    p.add_argument("--min-df", dest="min_df", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--l2-lambda", dest="l2_lambda", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--embed-endpoint", dest="embed_endpoint", default=None)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model artifact on a labeled test set")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("al-run", help="run the active-learning loop")
    common(p)
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--target-accuracy", dest="target_accuracy", type=float, default=None)
    p.add_argument("--confidence", type=float, default=None)
    p.add_argument("--max-rounds", dest="max_rounds", type=int, default=None)
    p.add_argument("--review-mode", dest="review_mode", choices=["auto_accept", "queue"], default=None)
    p.add_argument("--queue", default=None)
    p.add_argument("--run-log", dest="run_log", default=None)
    p.add_argument("--poll-interval", dest="poll_interval", type=float, default=None)
    p.add_argument("--review-timeout", dest="review_timeout", type=float, default=None)
    p.add_argument("--ngram", default=None)
    p.add_argument("--stopwords", default=None)
    p.add_argument("--no-stopwords", dest="no_stopwords", action="store_true", default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--l2-lambda", dest="l2_lambda", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.set_defaults(func=cmd_al_run)

    p = sub.add_parser("topics", help="per-label LDA topic terms")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--label", default=None)
    p.add_argument("--ngram", default=None)
    p.add_argument("--topics", type=int, default=None)
    p.add_argument("--terms", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--stopwords", default=None)
    p.add_argument("--no-stopwords", dest="no_stopwords", action="store_true", default=None)
    p.set_defaults(func=cmd_topics)

    p = sub.add_parser("project", help="2D PCA projection of embeddings")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--sample-cap", dest="sample_cap", type=int, default=None)
    p.add_argument("--embed-endpoint", dest="embed_endpoint", default=None)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("freq", help="per-label term frequency export")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--label", default=None)
    p.add_argument("--stopwords", default=None)
    p.add_argument("--no-stopwords", dest="no_stopwords", action="store_true", default=None)
    p.set_defaults(func=cmd_freq)

    p = sub.add_parser("serve", help="run the guardrail HTTP service")
    common(p)
    p.add_argument("--model", default=None)
    p.add_argument("--queue", default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--ui-dir", dest="ui_dir", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(Options(args))
    except SfwGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: every pipeline stage, headless and scriptable.

Each subcommand is a thin wrapper over one library operation. Outputs land in
a run directory named by the manifest hash (command + arguments + seed), so
identical invocations reproduce identical artifacts; nothing is written
outside that directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from . import __version__, analysis, annotation, classifier, corpus as corpus_mod
from .classifier import FeatureConfig, TrainConfig
from .corpus import IngestConfig, SlicePair
from .embedding import (
    EmbeddingConfig,
    EmbeddingModel,
    doc_vectors,
    load_reference_lines,
    match_reference_lines,
    train_embeddings,
)
from .errors import DataError
from .labels import StanceLabel
from .sampling import (
    Exemplar,
    PosteriorTable,
    certainty_sample,
    guided_sample,
    margin_sample,
    random_sample,
)
from .textproc import load_ngram_denylist, load_wordlist, ngram_table, tokenize

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit2(f"{self.prog}: error: {message}")


class SystemExit2(Exception):
    """Usage error carrying the message; mapped to exit code 1."""


@dataclass
class RunManifest:
    command: str
    arguments: dict
    seed: int | None
    tool_version: str = __version__

    def digest(self) -> str:
        canon = json.dumps(
            {
                "command": self.command,
                "arguments": self.arguments,
                "seed": self.seed,
                "tool_version": self.tool_version,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


class RunContext:
    """Run directory + output helpers for one invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        arguments = {
            k: str(v)
            for k, v in sorted(vars(args).items())
            if k not in ("func", "out") and v is not None
        }
        self.manifest = RunManifest(
            command=args.command,
            arguments=arguments,
            seed=getattr(args, "seed", None),
        )
        base = Path(args.out) if args.out else Path("runs") / f"{args.command}-{self.manifest.digest()}"
        self.dir = base
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "manifest.json").write_text(
            json.dumps(
                {
                    "command": self.manifest.command,
                    "arguments": self.manifest.arguments,
                    "seed": self.manifest.seed,
                    "tool_version": self.manifest.tool_version,
                },
                sort_keys=True,
                ensure_ascii=False,
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )

    def path(self, name: str) -> Path:
        return self.dir / name

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(
            json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )
        return p

    def write_table(self, name: str, rows: list[dict], columns: list[str]) -> Path:
        p = self.path(name)
        with open(p, "w", encoding="utf-8") as fh:
            fh.write("\t".join(columns) + "\n")
            for row in rows:
                fh.write("\t".join(str(row.get(c, "")) for c in columns) + "\n")
        return p

    def emit(self, rows: list[dict], columns: list[str], name: str) -> None:
        """Print a report and persist it in both formats."""
        self.write_table(f"{name}.tsv", rows, columns)
        self.write_json(f"{name}.json", rows)
        if self.args.format == "structured":
            print(json.dumps(rows, sort_keys=True, ensure_ascii=False))
        else:
            widths = [max(len(c), *(len(str(r.get(c, ""))) for r in rows)) if rows else len(c) for c in columns]
            print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
            for row in rows:
                print("  ".join(str(row.get(c, "")).ljust(w) for c, w in zip(columns, widths)))


def _load_corpus(path, language="", lenient=False) -> corpus_mod.Corpus:
    return corpus_mod.ingest(path, IngestConfig(language=language, lenient=lenient)).corpus


def _parse_date_range(spec: str) -> tuple[date, date]:
    try:
        lo, hi = spec.split(":")
        return date.fromisoformat(lo), date.fromisoformat(hi)
    except ValueError:
        raise SystemExit2(f"bad date range {spec!r}; expected YYYY-MM-DD:YYYY-MM-DD")


def _slices_from_args(args) -> SlicePair | None:
    if not getattr(args, "before", None) and not getattr(args, "after", None):
        return None
    if not (args.before and args.after):
        raise SystemExit2("--before and --after must be given together")
    b = _parse_date_range(args.before)
    a = _parse_date_range(args.after)
    return SlicePair.from_dates(b[0], b[1], a[0], a[1])


def _read_posteriors(path) -> PosteriorTable:
    ids, rows = [], []
    labels: tuple[str, ...] | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                post = obj["posteriors"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"{path}:{lineno}: bad prediction record ({exc})") from exc
            if labels is None:
                labels = tuple(sorted(post))
            ids.append(str(obj["doc_id"]))
            rows.append([float(post[l]) for l in labels])
    if not ids:
        raise DataError(f"{path}: no prediction records")
    return PosteriorTable(ids=ids, probs=np.array(rows), labels=labels)


def _featurize_examples(rows, config: FeatureConfig, embedding=None):
    return [
        (classifier.featurize(tokenize(text, keep_hashtags=True), config, embedding), label)
        for _id, text, label in rows
    ]


# -- handlers ---------------------------------------------------------------


def cmd_ingest(args, ctx: RunContext) -> int:
    result = corpus_mod.ingest(
        args.input,
        IngestConfig(
            language=args.language,
            lenient=args.lenient,
            study_window=_parse_date_range(args.window) if args.window else None,
        ),
    )
    out = ctx.path("corpus.jsonl")
    corpus_mod.write_corpus(result.corpus, out)
    ctx.write_json(
        "stats.json",
        {
            "documents": len(result.corpus),
            "dropped_language": result.dropped_language,
            "dropped_window": result.dropped_window,
            "skipped_malformed": result.skipped_malformed,
            "skipped_duplicates": result.skipped_duplicates,
        },
    )
    print(f"{len(result.corpus)} documents -> {out}")
    return EXIT_OK


def cmd_filter(args, ctx: RunContext) -> int:
    rule_set_id, rules = corpus_mod.load_rules(args.rules)
    c = _load_corpus(args.input, lenient=args.lenient)
    filtered = corpus_mod.apply_rules(c, rules, rule_set_id=rule_set_id)
    out = ctx.path("filtered.jsonl")
    corpus_mod.write_corpus(filtered, out)
    ctx.write_json(
        "stats.json",
        {"input": len(c), "matched": len(filtered), "rule_set_id": rule_set_id},
    )
    print(f"{len(filtered)}/{len(c)} documents matched -> {out}")
    return EXIT_OK


def cmd_slice(args, ctx: RunContext) -> int:
    slices = _slices_from_args(args)
    if slices is None:
        raise SystemExit2("slice requires --before and --after")
    c = _load_corpus(args.input, lenient=args.lenient)
    result = corpus_mod.slice_corpus(c, slices)
    for label, sub in result.slices.items():
        corpus_mod.write_corpus(sub, ctx.path(f"{label.value}.jsonl"))
    ctx.write_json(
        "stats.json",
        {
            "before": len(result.before),
            "after": len(result.after),
            "excluded": result.excluded,
        },
    )
    print(f"before={len(result.before)} after={len(result.after)} excluded={result.excluded}")
    return EXIT_OK


def cmd_phrase_filter(args, ctx: RunContext) -> int:
    c = _load_corpus(args.input, lenient=args.lenient)
    filtered = corpus_mod.phrase_filter(c, args.phrase)
    out = ctx.path("filtered.jsonl")
    corpus_mod.write_corpus(filtered, out)
    print(f"{len(filtered)}/{len(c)} documents contain the phrase -> {out}")
    return EXIT_OK


def cmd_ngrams(args, ctx: RunContext) -> int:
    c = _load_corpus(args.input, lenient=args.lenient)
    stop = load_wordlist(args.stopwords) if args.stopwords else frozenset()
    deny = load_ngram_denylist(args.denylist, n=args.n) if args.denylist else frozenset()
    table = ngram_table(
        [tokenize(d.text, keep_hashtags=args.keep_hashtags) for d in c],
        n=args.n,
        stopwords=stop,
        min_count=args.min_count,
        denylist=deny,
    )
    rows = [
        {"ngram": " ".join(g), "count": n}
        for g, n in table.top(args.top)
    ]
    ctx.emit(rows, ["ngram", "count"], "ngrams")
    return EXIT_OK


def cmd_movers(args, ctx: RunContext) -> int:
    stop = load_wordlist(args.stopwords) if args.stopwords else frozenset()
    before_table = ngram_table(
        [tokenize(d.text) for d in _load_corpus(args.before_corpus, lenient=args.lenient)], n=args.n
    )
    after_table = ngram_table(
        [tokenize(d.text) for d in _load_corpus(args.after_corpus, lenient=args.lenient)], n=args.n
    )
    toward_before, toward_after = analysis.movers(before_table, after_table, stop, k=args.top)
    rows = [
        {"direction": r.direction.value, "token": t, "delta": round(d, 8)}
        for r in (toward_before, toward_after)
        for t, d in r.entries
    ]
    ctx.emit(rows, ["direction", "token", "delta"], "movers")
    return EXIT_OK


def cmd_hashtag_movers(args, ctx: RunContext) -> int:
    toward_before, toward_after = analysis.hashtag_movers(
        _load_corpus(args.before_corpus, lenient=args.lenient),
        _load_corpus(args.after_corpus, lenient=args.lenient),
        k=args.top,
    )
    rows = [
        {"direction": r.direction.value, "hashtag": t, "delta": round(d, 8)}
        for r in (toward_before, toward_after)
        for t, d in r.entries
    ]
    ctx.emit(rows, ["direction", "hashtag", "delta"], "hashtag_movers")
    return EXIT_OK


def cmd_train_embed(args, ctx: RunContext) -> int:
    c = _load_corpus(args.input, lenient=args.lenient)
    config = EmbeddingConfig(
        dim=args.dim,
        window=args.window,
        epochs=args.epochs,
        negatives=args.negatives,
        min_count=args.min_count,
        learning_rate=args.learning_rate,
        char_ngram_min=args.char_ngram_min,
        char_ngram_max=args.char_ngram_max,
        subword_buckets=args.subword_buckets,
        batch_size=args.batch_size,
    )
    model = train_embeddings(
        [tokenize(d.text, keep_hashtags=True, source_doc_id=d.id) for d in c],
        config,
        seed=args.seed,
    )
    out = ctx.path("embedding.npz")
    model.save(out)
    ctx.write_json(
        "stats.json",
        {"vocab": model.vocab_size, "epoch_loss": [round(x, 6) for x in model.train_log]},
    )
    print(f"vocab={model.vocab_size} epochs={config.epochs} -> {out}")
    return EXIT_OK


def cmd_embed_docs(args, ctx: RunContext) -> int:
    model = EmbeddingModel.load(args.model)
    c = _load_corpus(args.input, lenient=args.lenient)
    vecs = doc_vectors(model, c)
    out = ctx.path("doc_vectors.npz")
    np.savez(
        out,
        ids=json.dumps([v.doc_id for v in vecs]),
        vectors=np.stack([v.vector for v in vecs]),
        unresolved=np.array([v.unresolved for v in vecs]),
    )
    print(f"{len(vecs)} vectors ({sum(v.unresolved for v in vecs)} unresolved) -> {out}")
    return EXIT_OK


def cmd_match_lines(args, ctx: RunContext) -> int:
    model = EmbeddingModel.load(args.model)
    c = _load_corpus(args.input, lenient=args.lenient)
    report = match_reference_lines(model, c, load_reference_lines(args.lines))
    rows = [
        {"line": line, "count": n, "percent": round(pct, 2)}
        for line, n, pct in report.entries
    ]
    rows.append({"line": "(unmatched)", "count": report.unmatched, "percent": ""})
    ctx.emit(rows, ["line", "count", "percent"], "line_matches")
    return EXIT_OK


def _write_batch(ctx: RunContext, batch) -> None:
    ctx.write_json(
        "batch.json",
        {
            "round_id": batch.round_id,
            "strategy": batch.strategy.value,
            "doc_ids": list(batch.doc_ids),
            "per_slice_quota": batch.per_slice_quota,
            "metadata": batch.metadata,
        },
    )
    print(f"{len(batch.doc_ids)} documents -> {ctx.path('batch.json')}")


def cmd_sample_random(args, ctx: RunContext) -> int:
    c = _load_corpus(args.input, lenient=args.lenient)
    batch = random_sample(
        c, n=args.n, seed=args.seed, slices=_slices_from_args(args), lenient=args.lenient
    )
    _write_batch(ctx, batch)
    return EXIT_OK


def _read_exemplars(path) -> list[Exemplar]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(
                    Exemplar(
                        annotator_id=str(obj.get("annotator_id", "cli")),
                        text=str(obj["text"]),
                        intended_label=StanceLabel.parse(obj["intended_label"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad exemplar ({exc})") from exc
    if not out:
        raise DataError(f"{path}: no exemplars")
    return out


def cmd_sample_guided(args, ctx: RunContext) -> int:
    model = EmbeddingModel.load(args.model)
    c = _load_corpus(args.input, lenient=args.lenient)
    slices = _slices_from_args(args)
    slices_of = None
    if slices is not None:
        slices_of = {
            d.id: lab.value
            for d in c
            if (lab := slices.label_for(d)) is not None
        }
    batch = guided_sample(
        doc_vectors(model, c),
        _read_exemplars(args.exemplars),
        model,
        k_per_exemplar=args.k,
        slices_of=slices_of,
    )
    _write_batch(ctx, batch)
    return EXIT_OK


def cmd_sample_certainty(args, ctx: RunContext) -> int:
    batch = certainty_sample(_read_posteriors(args.posteriors), target=args.target, n=args.n)
    _write_batch(ctx, batch)
    return EXIT_OK


def cmd_sample_margin(args, ctx: RunContext) -> int:
    batch = margin_sample(_read_posteriors(args.posteriors), n=args.n)
    _write_batch(ctx, batch)
    return EXIT_OK


def cmd_kappa(args, ctx: RunContext) -> int:
    a = annotation.read_label_file(args.a)
    b = annotation.read_label_file(args.b)
    k = annotation.cohens_kappa(a, b)
    ctx.write_json("kappa.json", {"kappa": k, "n": len(a)})
    print(f"{k:.6f}")
    return EXIT_OK


def cmd_resolve(args, ctx: RunContext) -> int:
    store = annotation.AnnotationStore(args.log)
    resolved, unresolved = store.resolve_all()
    text_of = {}
    if args.corpus:
        text_of = {d.id: d.text for d in _load_corpus(args.corpus, lenient=True)}
    rows = [
        (r.doc_id, text_of.get(r.doc_id, ""), r.aggregate_label.value) for r in resolved
    ]
    classifier.write_labeled_examples(ctx.path("resolved.jsonl"), rows)
    summary = annotation.agreement_report(store)
    ctx.write_json(
        "stats.json",
        {
            "resolved": len(resolved),
            "unresolved": len(unresolved),
            "consensus": sum(r.resolution.value == "consensus" for r in resolved),
            "negative_precedence": sum(
                r.resolution.value == "negative_precedence" for r in resolved
            ),
            "kappa_min": summary.kappa_min,
            "kappa_max": summary.kappa_max,
        },
    )
    print(f"resolved={len(resolved)} unresolved={len(unresolved)} -> {ctx.path('resolved.jsonl')}")
    return EXIT_OK


def cmd_train(args, ctx: RunContext) -> int:
    rows = classifier.read_labeled_examples(args.examples)
    embedding = EmbeddingModel.load(args.embedding) if args.embedding else None
    fconfig = FeatureConfig(
        hash_buckets=args.buckets,
        use_doc_embedding=embedding is not None,
        embedding_dim=embedding.dimension if embedding else 0,
    )
    tconfig = TrainConfig(
        l2=args.l2,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        class_weighting=not args.no_class_weights,
    )
    model = classifier.train(
        _featurize_examples(rows, fconfig, embedding),
        tconfig,
        seed=args.seed,
        feature_config=fconfig,
        stage_tag=classifier.StageTag(args.stage),
    )
    out = ctx.path("model.npz")
    model.save(out)
    ctx.write_json("stats.json", {"examples": len(rows), "epoch_loss": [round(x, 6) for x in model.train_log]})
    print(f"trained on {len(rows)} examples -> {out}")
    return EXIT_OK


def cmd_eval(args, ctx: RunContext) -> int:
    model = classifier.ClassifierModel.load(args.model)
    embedding = EmbeddingModel.load(args.embedding) if args.embedding else None
    heldout = _featurize_examples(
        classifier.read_labeled_examples(args.heldout), model.feature_config, embedding
    )
    train_examples = None
    if args.train_examples:
        train_examples = _featurize_examples(
            classifier.read_labeled_examples(args.train_examples), model.feature_config, embedding
        )
    report = classifier.evaluate(
        model, heldout, runs=args.runs, seed=args.seed, train_examples=train_examples
    )
    rows = [
        {
            "class": lab,
            "precision": round(float(p), 4),
            "recall": round(float(r), 4),
            "f1": round(float(f), 4),
        }
        for lab, p, r, f in zip(
            report.labels, report.per_class_precision, report.per_class_recall, report.per_class_f1
        )
    ]
    rows.append(
        {
            "class": "macro",
            "precision": "",
            "recall": "",
            "f1": f"{report.macro_f1:.4f}"
            + (f" ± {report.macro_f1_std:.4f}" if report.runs > 1 else ""),
        }
    )
    ctx.emit(rows, ["class", "precision", "recall", "f1"], "eval")
    return EXIT_OK


def _featurize_one(payload):
    text, config = payload
    return classifier.featurize(tokenize(text, keep_hashtags=True), config)


def cmd_infer(args, ctx: RunContext) -> int:
    model = classifier.ClassifierModel.load(args.model)
    embedding = EmbeddingModel.load(args.embedding) if args.embedding else None
    c = _load_corpus(args.input, lenient=args.lenient)
    if args.jobs > 1 and embedding is None:
        # parallel featurization; posteriors stay a single matrix product
        from multiprocessing import Pool

        with Pool(args.jobs) as pool:
            features = pool.map(
                _featurize_one, [(d.text, model.feature_config) for d in c], chunksize=256
            )
        ids = c.ids()
        probs = classifier.posterior_batch(model, features)
    else:
        ids, probs = classifier.TextStanceClassifier(model, embedding).posterior_corpus(c)
    out = ctx.path("predictions.jsonl")
    classifier.write_predictions(out, ids, probs, model.labels)
    print(f"{len(ids)} predictions -> {out}")
    return EXIT_OK


def cmd_timeseries(args, ctx: RunContext) -> int:
    model = classifier.ClassifierModel.load(args.model)
    embedding = EmbeddingModel.load(args.embedding) if args.embedding else None
    clf = classifier.TextStanceClassifier(model, embedding)
    c = _load_corpus(args.input, lenient=args.lenient)
    series = analysis.stance_timeseries(
        c,
        clf,
        granularity=analysis.Granularity(args.granularity),
        slices=_slices_from_args(args),
    )
    rows = [
        {
            "period": p.period,
            "positive": round(p.positive, 4) if p.positive is not None else "",
            "neutral": round(p.neutral, 4) if p.neutral is not None else "",
            "negative": round(p.negative, 4) if p.negative is not None else "",
            "n": p.n,
        }
        for p in series.points
    ]
    ctx.emit(rows, ["period", "positive", "neutral", "negative", "n"], "timeseries")
    if series.slice_ratios is not None:
        ctx.write_json(
            "slice_summary.json",
            {"shares": series.slice_shares, "after_before_ratio": series.slice_ratios},
        )
        print("after/before ratios:", json.dumps(series.slice_ratios, sort_keys=True))
    if args.chart:
        analysis.render_timeseries_chart(series, ctx.path(args.chart))
        print(f"chart -> {ctx.path(args.chart)}")
    return EXIT_OK


def cmd_creation_hist(args, ctx: RunContext) -> int:
    c = _load_corpus(args.input, lenient=args.lenient)
    users = analysis.user_set_from_corpus(args.name or Path(args.input).stem, c)
    hist = analysis.creation_histogram(users)
    rows = [
        {"month": b, "mass": round(m, 6)} for b, m in zip(hist.bins, hist.mass)
    ]
    ctx.emit(rows, ["month", "mass"], "creation_hist")
    return EXIT_OK


def cmd_divergence(args, ctx: RunContext) -> int:
    baseline = analysis.user_set_from_corpus("baseline", _load_corpus(args.baseline, lenient=args.lenient))
    sets = [
        analysis.user_set_from_corpus(Path(p).stem, _load_corpus(p, lenient=args.lenient))
        for p in args.set
    ]
    ranking = analysis.divergence_ranking(
        sets, baseline, epsilon=args.epsilon, reverse_kl=args.reverse_kl
    )
    rows = [
        {
            "set": r.name,
            "kl": f"{r.kl:.6f}",
            "bhattacharyya": f"{r.bhattacharyya:.6f}",
        }
        for r in ranking.rows
    ]
    ctx.emit(rows, ["set", "kl", "bhattacharyya"], "divergence")
    ctx.write_json(
        "ranking.json",
        {
            "kl": ranking.ranking_kl,
            "bhattacharyya": ranking.ranking_bhattacharyya,
            "rankings_disagree": ranking.rankings_disagree,
        },
    )
    if ranking.rankings_disagree:
        print("note: KL and Bhattacharyya rankings disagree")
    return EXIT_OK


def cmd_serve(args, ctx: RunContext) -> int:
    import uvicorn

    from .service import create_app
    from .service.config import load_service_config

    config = load_service_config(args.data_dir)
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return EXIT_OK


def cmd_synth_bench(args, ctx: RunContext) -> int:
    from .synthbench import GeneratorConfig, run_benchmark, run_timeseries_benchmark

    gen = GeneratorConfig(n_docs=args.n_docs)
    runs = []
    for i in range(args.runs):
        runs.append(run_benchmark(args.seed + i, cfg=gen))
    ts = run_timeseries_benchmark(args.seed)

    rows = []
    for r in runs:
        for s in r.stages:
            rows.append(
                {
                    "seed": r.seed,
                    "stage": s.stage,
                    "n_train": s.n_train,
                    "macro_f1": f"{s.macro_f1:.4f}",
                }
            )
    ctx.emit(rows, ["seed", "stage", "n_train", "macro_f1"], "learning_curve")
    summary = {
        "all_stages_strictly_improve": all(r.strictly_improving for r in runs),
        "min_total_gain": round(min(r.total_gain for r in runs), 4),
        "enrichment_ratios": [round(r.enrichment_ratio, 2) for r in runs],
        "guided_vs_random_2x": all(r.enrichment_ratio >= 2.0 for r in runs),
        "documents_sampled_twice": sum(r.sampled_twice for r in runs),
        "timeseries_recovered_ratio": round(ts.recovered_ratio, 4),
        "runtime_s": round(sum(r.runtime_s for r in runs) + ts.runtime_s, 1),
    }
    ctx.write_json("summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="stancelab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"stancelab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--out", help="run directory (default: runs/<command>-<manifest hash>)")
        p.add_argument("--format", choices=("table", "structured"), default="table")
        p.add_argument("--jobs", type=int, default=1, help="worker processes where supported")
        p.add_argument("--lenient", action="store_true", help="skip malformed records instead of failing")
        return p

    p = add("ingest", cmd_ingest, "read line-delimited JSON documents into a corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--language", default="", help="keep only this language tag")
    p.add_argument("--window", help="study window YYYY-MM-DD:YYYY-MM-DD")

    p = add("filter", cmd_filter, "apply a declarative keyword rule set")
    p.add_argument("--input", required=True)
    p.add_argument("--rules", required=True)

    p = add("slice", cmd_slice, "split a corpus into before/after time slices")
    p.add_argument("--input", required=True)
    p.add_argument("--before", required=True, help="YYYY-MM-DD:YYYY-MM-DD")
    p.add_argument("--after", required=True, help="YYYY-MM-DD:YYYY-MM-DD")

    p = add("phrase-filter", cmd_phrase_filter, "keep documents containing a token phrase")
    p.add_argument("--input", required=True)
    p.add_argument("--phrase", required=True)

    p = add("ngrams", cmd_ngrams, "count n-grams with stop-word removal")
    p.add_argument("--input", required=True)
    p.add_argument("-n", type=int, default=1)
    p.add_argument("--stopwords")
    p.add_argument("--denylist")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--keep-hashtags", action="store_true")

    p = add("movers", cmd_movers, "largest relative-frequency shifts between two corpora")
    p.add_argument("--before-corpus", required=True)
    p.add_argument("--after-corpus", required=True)
    p.add_argument("-n", type=int, default=1)
    p.add_argument("--stopwords")
    p.add_argument("--top", type=int, default=20)

    p = add("hashtag-movers", cmd_hashtag_movers, "hashtag usage shifts between two corpora")
    p.add_argument("--before-corpus", required=True)
    p.add_argument("--after-corpus", required=True)
    p.add_argument("--top", type=int, default=10)

    p = add("train-embed", cmd_train_embed, "train subword skip-gram word vectors")
    p.add_argument("--input", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--char-ngram-min", type=int, default=3)
    p.add_argument("--char-ngram-max", type=int, default=6)
    p.add_argument("--subword-buckets", type=int, default=2_000_000)
    p.add_argument("--batch-size", type=int, default=1024)

    p = add("embed-docs", cmd_embed_docs, "compute document vectors under a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)

    p = add("match-lines", cmd_match_lines, "nearest reference line per document")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--lines", required=True)

    p = add("sample-random", cmd_sample_random, "uniform sample without replacement")
    p.add_argument("--input", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--before", help="slice range YYYY-MM-DD:YYYY-MM-DD")
    p.add_argument("--after", help="slice range YYYY-MM-DD:YYYY-MM-DD")

    p = add("sample-guided", cmd_sample_guided, "expand exemplars via nearest neighbors")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--exemplars", required=True, help="JSONL: text, intended_label")
    p.add_argument("--k", type=int, default=25)
    p.add_argument("--before")
    p.add_argument("--after")

    p = add("sample-certainty", cmd_sample_certainty, "top documents by target-class posterior")
    p.add_argument("--posteriors", required=True, help="predictions.jsonl from infer")
    p.add_argument("--target", required=True, choices=[l.value for l in StanceLabel])
    p.add_argument("--n", type=int, required=True)

    p = add("sample-margin", cmd_sample_margin, "smallest top-two posterior margins")
    p.add_argument("--posteriors", required=True)
    p.add_argument("--n", type=int, required=True)

    p = add("kappa", cmd_kappa, "Cohen's kappa between two label files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)

    p = add("resolve", cmd_resolve, "aggregate an annotation log into training labels")
    p.add_argument("--log", required=True)
    p.add_argument("--corpus", help="corpus JSONL to attach document text")

    p = add("train", cmd_train, "train the stance classifier on labeled examples")
    p.add_argument("--examples", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embedding", help="embedding model for document-vector features")
    p.add_argument("--buckets", type=int, default=2**18)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--no-class-weights", action="store_true")
    p.add_argument("--stage", default="seed", choices=("seed", "certainty", "uncertainty"))

    p = add("eval", cmd_eval, "precision/recall/F1 report on held-out examples")
    p.add_argument("--model", required=True)
    p.add_argument("--heldout", required=True)
    p.add_argument("--embedding")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-examples", help="needed when --runs > 1")

    p = add("infer", cmd_infer, "write per-document posteriors")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--embedding")

    p = add("timeseries", cmd_timeseries, "per-period stance shares under a model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--embedding")
    p.add_argument("--granularity", default="month", choices=("day", "week", "month"))
    p.add_argument("--before")
    p.add_argument("--after")
    p.add_argument("--chart", help="write a static chart (e.g. shares.png)")

    p = add("creation-hist", cmd_creation_hist, "account-creation month histogram")
    p.add_argument("--input", required=True)
    p.add_argument("--name")

    p = add("divergence", cmd_divergence, "KL/Bhattacharyya of user sets vs a baseline")
    p.add_argument("--set", action="append", required=True, help="corpus JSONL (repeatable)")
    p.add_argument("--baseline", required=True)
    p.add_argument("--epsilon", type=float, default=1e-9)
    p.add_argument("--reverse-kl", action="store_true", help="compute D(baseline || set)")

    p = add("serve", cmd_serve, "run the annotation HTTP service")
    p.add_argument("--data-dir", required=True)

    p = add("synth-bench", cmd_synth_bench, "end-to-end synthetic active-learning benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--n-docs", type=int, default=20_000)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit2 as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        ctx = RunContext(args)
        return args.func(args, ctx)
    except SystemExit2 as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line pipeline driver.

One subcommand per stage so every intermediate artifact is an inspectable
file:

    issueview ingest       chat export -> normalized export
    issueview disentangle  export -> conversations (JSON lines)
    issueview extract      conversations + export -> issue records
    issueview train-embed  token corpus -> embedding model files
    issueview index        records + model -> store file
    issueview query        store + model + text -> ranked results (JSON)
    issueview eval         store + model + gold -> metrics report
    issueview serve        store + model -> HTTP service

Exit codes: 0 success, 1 validation error, 2 IO error.  Errors are emitted
as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .annotate import (
    LexicalConfig,
    QueryDetector,
    load_annotations,
    load_labeled_corpus,
    train_query_nb,
)
from .artefacts import ActionDictionary, build_issue_record, save_records
from .disentangle import (
    DisentangleConfig,
    disentangle_all,
    load_conversations,
    serialize_conversations,
)
from .embed import TrainConfig, load_model, save_model, train
from .errors import IssueViewError
from .ingest import parse_chat_export, serialize_chat_export
from .retrieve import (
    SimilarityConfig,
    SymptomLexicon,
    categorize_first_turn,
    evaluate,
    load_gold,
    metrics_table,
    tfidf_baseline,
)
from .service import FeedbackLog, build_store, create_app, load_store, query_store, save_store

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _fail(code: int, message: str, **extra) -> int:
    sys.stderr.write(json.dumps({"error": message, **extra}) + "\n")
    return code


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _detector(args, overrides: dict) -> QueryDetector:
    corpus_path = getattr(args, "query_corpus", None) or overrides.get("query_corpus")
    if corpus_path:
        with open(corpus_path, "r", encoding="utf-8") as fh:
            corpus = load_labeled_corpus(fh)
        return QueryDetector(
            lexical_config=LexicalConfig.bundled(),
            nb_model=train_query_nb(corpus),
            threshold=overrides.get("nb_threshold", 0.5),
        )
    return QueryDetector.bundled(threshold=overrides.get("nb_threshold", 0.5))


def _dictionary(args, overrides: dict) -> ActionDictionary:
    path = getattr(args, "actions", None) or overrides.get("actions")
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            return ActionDictionary(json.load(fh)["verbs"])
    return ActionDictionary.bundled()


def _annotations(args, overrides: dict) -> dict | None:
    path = getattr(args, "annotations", None) or overrides.get("annotations")
    if not path:
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return {utt.message_id: utt for utt in load_annotations(fh)}


def _similarity_config(args, overrides: dict) -> SimilarityConfig:
    cfg = SimilarityConfig()
    cfg.threshold = overrides.get("threshold", cfg.threshold)
    cfg.jaro_gate = overrides.get("jaro_gate", cfg.jaro_gate)
    cfg.weight_gate = overrides.get("weight_gate", cfg.weight_gate)
    cfg.rarity_weighting = overrides.get("rarity_weighting", cfg.rarity_weighting)
    if getattr(args, "threshold", None) is not None:
        cfg.threshold = args.threshold
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    return cfg


def _cmd_ingest(args, overrides: dict) -> int:
    with open(args.export, "r", encoding="utf-8") as fh:
        log = parse_chat_export(
            fh, channel_id=args.channel, on_malformed="skip" if args.skip_malformed else "abort"
        )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(serialize_chat_export(log))
    print(json.dumps({"messages": len(log.messages), "out": args.out}))
    return EXIT_OK


def _cmd_disentangle(args, overrides: dict) -> int:
    with open(args.export, "r", encoding="utf-8") as fh:
        log = parse_chat_export(fh, channel_id=args.channel)
    config = DisentangleConfig(
        window_seconds=args.window,
        max_context_before=args.max_context,
        max_context_after=args.max_context,
        include_bots=args.include_bots,
    )
    conversations = disentangle_all(log, config)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(serialize_conversations(conversations))
    print(json.dumps({"conversations": len(conversations), "out": args.out}))
    return EXIT_OK


def _cmd_extract(args, overrides: dict) -> int:
    with open(args.export, "r", encoding="utf-8") as fh:
        log = parse_chat_export(fh, channel_id=args.channel)
    with open(args.conversations, "r", encoding="utf-8") as fh:
        conversations = load_conversations(fh, log)
    detector = _detector(args, overrides)
    dictionary = _dictionary(args, overrides)
    annotations = _annotations(args, overrides)
    symptoms = SymptomLexicon.bundled()
    records = []
    for conversation in conversations:
        category = categorize_first_turn(conversation.messages[0].text, dictionary, symptoms)
        records.append(
            build_issue_record(
                conversation, detector, dictionary, category.value, annotations=annotations
            )
        )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(save_records(records))
    print(json.dumps({"records": len(records), "out": args.out}))
    return EXIT_OK


def _cmd_train_embed(args, overrides: dict) -> int:
    with open(args.corpus, "r", encoding="utf-8") as fh:
        sentences = [line.split() for line in fh if line.strip()]
    config = TrainConfig(
        dim=args.dim,
        epochs=args.epochs,
        minn=args.minn,
        maxn=args.maxn,
        window=args.window,
        negatives=args.negatives,
        learning_rate=args.lr,
        bucket_count=args.buckets,
        seed=args.seed,
        min_count=args.min_count,
        workers=args.workers,
    )
    model = train(sentences, config)
    vec_path, sidecar_path = save_model(model, args.out)
    print(
        json.dumps(
            {
                "words": len(model.vocab),
                "dim": config.dim,
                "final_loss": model.losses[-1] if model.losses else None,
                "out": [vec_path, sidecar_path],
            }
        )
    )
    return EXIT_OK


def _cmd_index(args, overrides: dict) -> int:
    with open(args.export, "r", encoding="utf-8") as fh:
        log = parse_chat_export(fh, channel_id=args.channel)
    with open(args.conversations, "r", encoding="utf-8") as fh:
        conversations = load_conversations(fh, log)
    model = load_model(args.model)
    detector = _detector(args, overrides)
    dictionary = _dictionary(args, overrides)
    store = build_store(
        conversations, detector, dictionary, model,
        config=_similarity_config(args, overrides), model_ref=args.model,
        annotations=_annotations(args, overrides),
    )
    save_store(store, args.out)
    print(json.dumps({"records": len(store.records), "issues": store.n_issues,
                      "snapshot": store.snapshot, "out": args.out}))
    return EXIT_OK


def _cmd_query(args, overrides: dict) -> int:
    model = load_model(args.model)
    store = load_store(args.store, model)
    dictionary = _dictionary(args, overrides)
    config = _similarity_config(args, overrides)
    results = query_store(
        store, model, dictionary, args.text, k=args.k, mode=config.mode, config=config
    )
    payload = {"results": results, "snapshot": store.snapshot}
    out = json.dumps(payload, indent=2 if args.pretty else None)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out + "\n")
    else:
        print(out)
    return EXIT_OK


def _cmd_eval(args, overrides: dict) -> int:
    model = load_model(args.model)
    store = load_store(args.store, model)
    dictionary = _dictionary(args, overrides)
    config = _similarity_config(args, overrides)
    with open(args.gold, "r", encoding="utf-8") as fh:
        gold = load_gold(fh)
    missing = [q for q in gold if q not in store.term_sets]
    if missing:
        return _fail(EXIT_VALIDATION, f"gold queries missing from store: {missing[:5]}")
    ns = tuple(sorted({*args.p_at, *args.a_at}))
    rankings = {}
    for query_id in gold:
        record = store.record(query_id)
        hits = query_store(
            store, model, dictionary, record.issue_text, k=max(ns), mode=config.mode, config=config
        )
        rankings[query_id] = [h["issue_id"] for h in hits]
    metrics = evaluate(rankings, gold, ns=ns)
    report = {
        "p_at": {str(n): metrics.p_at[n] for n in args.p_at},
        "map": metrics.map,
        "a_at": {str(n): metrics.a_at[n] for n in args.a_at},
    }
    if args.baseline:
        texts = [(r.conversation_id, r.issue_text) for r in store.records
                 if r.conversation_id in store.term_sets]
        base_rankings = {}
        for query_id in gold:
            record = store.record(query_id)
            ranked = tfidf_baseline(record.issue_text, texts, k=max(ns) + 1)
            base_rankings[query_id] = [d for d, _ in ranked if d != query_id][: max(ns)]
        base = evaluate(base_rankings, gold, ns=ns)
        report["baseline_tfidf"] = {
            "p_at": {str(n): base.p_at[n] for n in args.p_at},
            "map": base.map,
            "a_at": {str(n): base.a_at[n] for n in args.a_at},
        }
        table_rows = {"tfidf": base, f"issueview-{config.mode}": metrics}
    else:
        table_rows = {f"issueview-{config.mode}": metrics}
    out = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out + "\n")
    else:
        print(out)
    sys.stderr.write(metrics_table(table_rows) + "\n")
    return EXIT_OK


def _cmd_serve(args, overrides: dict) -> int:
    import uvicorn

    model = load_model(args.model)
    store = load_store(args.store, model)
    dictionary = _dictionary(args, overrides)
    app = create_app(
        store, model, dictionary, FeedbackLog(args.feedback_log),
        config=_similarity_config(args, overrides),
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="issueview", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON file overriding defaults", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a chat export")
    p.add_argument("--export", required=True)
    p.add_argument("--channel", default="default")
    p.add_argument("--skip-malformed", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("disentangle", help="segment conversations")
    p.add_argument("--export", required=True)
    p.add_argument("--channel", default="default")
    p.add_argument("--window", type=int, default=7200)
    p.add_argument("--max-context", type=int, default=50)
    p.add_argument("--include-bots", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_disentangle)

    p = sub.add_parser("extract", help="build issue records")
    p.add_argument("--export", required=True)
    p.add_argument("--channel", default="default")
    p.add_argument("--conversations", required=True)
    p.add_argument("--annotations", default=None, help="CoNLL-U parses keyed by message id")
    p.add_argument("--query-corpus", default=None)
    p.add_argument("--actions", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("train-embed", help="train the subword embedding")
    p.add_argument("--corpus", required=True, help="text file, one sentence per line")
    p.add_argument("--dim", type=int, default=300)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--minn", type=int, default=3)
    p.add_argument("--maxn", type=int, default=20)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--buckets", type=int, default=1 << 21)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="base path for .vec/.itve files")
    p.set_defaults(func=_cmd_train_embed)

    p = sub.add_parser("index", help="build the issue store")
    p.add_argument("--export", required=True)
    p.add_argument("--channel", default="default")
    p.add_argument("--conversations", required=True)
    p.add_argument("--model", required=True, help="base path of .vec/.itve files")
    p.add_argument("--annotations", default=None, help="CoNLL-U parses keyed by message id")
    p.add_argument("--query-corpus", default=None)
    p.add_argument("--actions", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("query", help="rank similar past issues")
    p.add_argument("--store", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--mode", choices=("M1", "M2"), default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--actions", default=None)
    p.add_argument("--pretty", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("eval", help="score rankings against gold relevance")
    p.add_argument("--store", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--mode", choices=("M1", "M2"), default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--p-at", type=int, nargs="+", default=[5, 10])
    p.add_argument("--a-at", type=int, nargs="+", default=[3, 5])
    p.add_argument("--baseline", action="store_true", help="also run the TF-IDF baseline")
    p.add_argument("--actions", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--store", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--actions", default=None)
    p.add_argument("--feedback-log", default="feedback.jsonl")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8177)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = _load_config_file(args.config)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        return _fail(EXIT_VALIDATION, f"config is not valid JSON: {exc}")
    try:
        return args.func(args, overrides)
    except IssueViewError as exc:
        return _fail(EXIT_VALIDATION, str(exc), kind=type(exc).__name__)
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))


if __name__ == "__main__":
    raise SystemExit(main())

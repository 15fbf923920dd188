"""Command-line pipeline: synth, feature-extract, build-targets, train,
predict, evaluate, baseline, sweep-c.

Every command is deterministic given its flags and seed. Failures exit
nonzero with a single machine-parsable line on stderr
(`diverserank-error <kind> <message>`) and any partially written output
files are removed. A JSON file of flag defaults can be supplied through
the DIVERSERANK_CONFIG environment variable (sections per command plus a
"common" section).
"""

import argparse
import json
import os
import sys

import numpy as np

from . import baselines, dataio, features, metrics, model, synth, trainer
from .greedy import build_target
from .types import DegenerateQueryError, MeasureParams, QueryInstance

CONFIG_ENV_VAR = "DIVERSERANK_CONFIG"


class CliError(Exception):
    """User-facing command failure with a short category tag."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Outputs:
    """Tracks output paths so failures can remove partial files."""

    def __init__(self):
        self.paths = []

    def register(self, path) -> str:
        self.paths.append(path)
        return path

    def cleanup(self):
        for path in self.paths:
            try:
                os.remove(path)
            except OSError:
                pass


def _measure_params(args) -> MeasureParams:
    return MeasureParams(measure=args.measure, alpha=args.alpha, beta=args.beta, cutoff=args.cutoff)


def _add_measure_flags(parser, include_measure=True):
    if include_measure:
        parser.add_argument("--measure", choices=["err-ia", "alpha-ndcg", "nrbp"], default="err-ia")
    parser.add_argument("--alpha", type=float, default=0.5)
    parser.add_argument("--beta", type=float, default=0.5)
    parser.add_argument("--cutoff", type=int, default=20)


def _load_dataset(path):
    try:
        return dataio.load_dataset(path)
    except FileNotFoundError:
        raise CliError("missing-input", f"dataset file not found: {path}") from None
    except dataio.DataFormatError as exc:
        raise CliError("bad-dataset", str(exc)) from None


def _doc_index(q, run_doc_ids, run_path):
    index = {doc_id: i for i, doc_id in enumerate(q.doc_ids())}
    ranking = []
    for doc_id in run_doc_ids:
        if doc_id not in index:
            raise CliError("bad-run", f"{run_path}: query {q.query_id}: unknown doc_id {doc_id}")
        ranking.append(index[doc_id])
    return ranking


# ---------------------------------------------------------------- commands


def cmd_synth(args, outputs):
    config = synth.SynthConfig(
        num_queries=args.queries,
        docs_per_query=args.docs,
        num_subtopics=args.subtopics,
        num_relevance_features=args.rel_features,
        num_diversity_channels=args.div_channels,
        relevance_noise=args.noise,
        diversity_signal=args.signal,
        redundancy=args.redundancy,
        irrelevant_rate=args.irrelevant_rate,
        seed=args.seed,
    )
    queries, channels = synth.generate(config)
    ratios = tuple(float(r) for r in args.split.split(","))
    if len(ratios) != 3:
        raise CliError("bad-flag", f"--split needs three comma-separated ratios, got {args.split!r}")
    splits = zip(("train", "val", "test"), synth.split_dataset(queries, ratios))
    written = []
    for name, part in splits:
        if not part:
            continue
        path = outputs.register(f"{args.out}.{name}.jsonl")
        dataio.save_dataset(path, part, channels)
        written.append(f"{path} ({len(part)} queries)")
    print("wrote " + ", ".join(written))


def cmd_feature_extract(args, outputs):
    queries, manifest = _load_dataset(args.data)
    channel_list = tuple(args.channels.split(",")) if args.channels else features.CHANNELS
    config = features.FeatureConfig(
        channels=channel_list,
        top_t=args.top_t,
        num_topics=args.topics,
        plsa_max_iters=args.plsa_max_iters,
        plsa_tol=args.plsa_tol,
        seed=args.seed,
        corpus_field=args.corpus_field,
    )

    def counts_matrix(docs, vocab):
        mat = np.zeros((len(docs), len(vocab)))
        for row, doc in enumerate(docs):
            for term, count in ((doc.fields_text or {}).get(config.corpus_field) or {}).items():
                if term in vocab:
                    mat[row, vocab[term]] += count
        return mat

    topic_rows_by_doc = {}
    if "topic" in channel_list:
        if args.per_query_plsa:
            for q in queries:
                vocab = {}
                for d in q.docs:
                    for term in ((d.fields_text or {}).get(config.corpus_field) or {}):
                        vocab.setdefault(term, len(vocab))
                if not vocab:
                    raise CliError("bad-dataset", f"query {q.query_id}: no {config.corpus_field!r} terms to fit the topic model on")
                tm = features.plsa_fit(counts_matrix(q.docs, vocab), config.num_topics,
                                       max_iters=config.plsa_max_iters, tol=config.plsa_tol, seed=config.seed)
                for row, d in enumerate(q.docs):
                    topic_rows_by_doc[(q.query_id, d.doc_id)] = tm.doc_topic[row]
        else:
            unique = {}
            for q in queries:
                for d in q.docs:
                    unique.setdefault(d.doc_id, d)
            docs = list(unique.values())
            vocab = {}
            for d in docs:
                for term in ((d.fields_text or {}).get(config.corpus_field) or {}):
                    vocab.setdefault(term, len(vocab))
            if not vocab:
                raise CliError("bad-dataset", f"no {config.corpus_field!r} terms anywhere; cannot fit the topic model")
            tm = features.plsa_fit(counts_matrix(docs, vocab), config.num_topics,
                                   max_iters=config.plsa_max_iters, tol=config.plsa_tol, seed=config.seed)
            rows = {d.doc_id: tm.doc_topic[i] for i, d in enumerate(docs)}
            for q in queries:
                for d in q.docs:
                    topic_rows_by_doc[(q.query_id, d.doc_id)] = rows[d.doc_id]

    rebuilt = []
    for q in queries:
        topic_rows = None
        if "topic" in channel_list:
            topic_rows = [topic_rows_by_doc[(q.query_id, d.doc_id)] for d in q.docs]
        tensor, names = features.assemble_pairwise(q.docs, topic_rows=topic_rows, config=config)
        rebuilt.append(QueryInstance(query_id=q.query_id, docs=q.docs, pairwise=tensor, judgments=q.judgments))
    path = outputs.register(args.out)
    dataio.save_dataset(path, rebuilt, names)
    print(f"wrote {path} ({len(rebuilt)} queries, channels: {','.join(names)})")


def cmd_build_targets(args, outputs):
    queries, _ = _load_dataset(args.data)
    params = _measure_params(args)
    entries = []
    skipped = 0
    for q in queries:
        try:
            target = build_target(q, params)
        except DegenerateQueryError:
            entries.append((q.query_id, None, None))
            skipped += 1
            continue
        ideal_raw = metrics.raw_dcem(target, q.judgments, params)
        ids = q.doc_ids()
        entries.append((q.query_id, [ids[i] for i in target], ideal_raw))
    path = outputs.register(args.out)
    dataio.save_targets(path, entries, params)
    print(f"wrote {path} ({len(entries) - skipped} targets, {skipped} skipped)")


def _targets_for(queries, targets_by_id, path):
    resolved = []
    for q in queries:
        if q.query_id not in targets_by_id:
            raise CliError("bad-targets", f"{path}: no target for query {q.query_id}")
        doc_ids = targets_by_id[q.query_id]
        resolved.append(None if doc_ids is None else _doc_index(q, doc_ids, path))
    return resolved


def cmd_train(args, outputs):
    queries, manifest = _load_dataset(args.data)
    params = _measure_params(args)
    targets = None
    if args.targets:
        targets_by_id, target_params = dataio.load_targets(args.targets)
        if target_params != params:
            raise CliError(
                "bad-targets",
                f"targets were built with {target_params}, training asked for {params}",
            )
        targets = _targets_for(queries, targets_by_id, args.targets)
        degenerate = [q.query_id for q, t in zip(queries, targets) if t is None]
        queries = [q for q, t in zip(queries, targets) if t is not None]
        targets = [t for t in targets if t is not None]
        if degenerate:
            print(f"skipping {len(degenerate)} degenerate queries: {' '.join(degenerate)}")
    cfg = trainer.TrainConfig(
        C=args.c,
        epsilon=args.epsilon,
        max_outer_iters=args.max_iters,
        qp_tol=args.qp_tol,
        params=params,
    )
    log_path = args.log or args.out + ".log.jsonl"
    outputs.register(log_path)
    with open(log_path, "w", encoding="utf-8") as log_fh:
        def log_fn(record):
            log_fh.write(json.dumps(record) + "\n")

        weights, stats = trainer.cutting_plane_train(queries, cfg, targets=targets, n_jobs=args.threads, log_fn=log_fn)

    metadata = dataio.ModelMetadata(
        measure=params.measure,
        alpha=params.alpha,
        beta=params.beta,
        cutoff=params.cutoff,
        channels=manifest.channels,
        num_relevance_features=manifest.num_relevance_features,
        train_config={"C": cfg.C, "epsilon": cfg.epsilon, "max_outer_iters": cfg.max_outer_iters, "qp_tol": cfg.qp_tol},
        dataset_sha256=dataio.dataset_sha256(args.data),
    )
    path = outputs.register(args.out)
    dataio.save_model(path, weights, metadata)
    status = "converged" if stats.converged else "hit iteration cap"
    final_loss = stats.loss_trace[-1] if stats.loss_trace else float("nan")
    print(
        f"wrote {path} ({status} after {stats.outer_iterations} iterations, "
        f"{stats.constraints_added} constraints, training loss {final_loss:.4f})"
    )


def cmd_predict(args, outputs):
    queries, manifest = _load_dataset(args.data)
    try:
        weights, metadata = dataio.load_model(args.model)
    except FileNotFoundError:
        raise CliError("missing-input", f"model file not found: {args.model}") from None
    except dataio.DataFormatError as exc:
        raise CliError("bad-model", str(exc)) from None
    try:
        dataio.check_model_compatibility(metadata, manifest)
    except dataio.CompatibilityError as exc:
        raise CliError("incompatible-model", str(exc)) from None
    cutoff = args.cutoff if args.cutoff is not None else metadata.cutoff

    def rank_one(q):
        return model.predict_scored(weights, q, cutoff)

    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            predictions = list(pool.map(rank_one, queries))
    else:
        predictions = [rank_one(q) for q in queries]
    rows = []
    for q, (ranking, gains) in zip(queries, predictions):
        ids = q.doc_ids()
        for rank, (doc, gain) in enumerate(zip(ranking, gains), start=1):
            rows.append((q.query_id, rank, ids[doc], gain))
    path = outputs.register(args.out)
    dataio.write_run(path, rows)
    print(f"wrote {path} ({len(queries)} queries, cutoff {cutoff})")


def cmd_evaluate(args, outputs):
    queries, _ = _load_dataset(args.data)
    try:
        run = dataio.read_run(args.run)
    except FileNotFoundError:
        raise CliError("missing-input", f"run file not found: {args.run}") from None
    except dataio.DataFormatError as exc:
        raise CliError("bad-run", str(exc)) from None
    by_id = {q.query_id: q for q in queries}
    unknown = sorted(set(run) - set(by_id))
    if unknown:
        raise CliError("bad-run", f"{args.run}: run contains unknown query ids: {' '.join(unknown)}")

    header = ["query_id", "status", "err_ia", "alpha_ndcg", "nrbp", "precision_ia", "subtopic_recall"]
    rows = []
    sums = np.zeros(5)
    evaluated = 0
    skipped = 0
    for q in queries:
        if q.query_id not in run:
            continue
        doc_ids = [doc_id for doc_id, _ in run[q.query_id]]
        ranking = _doc_index(q, doc_ids, args.run)[: args.cutoff]
        try:
            values = [
                metrics.dcem(ranking, q, MeasureParams("err-ia", args.alpha, args.beta, args.cutoff)),
                metrics.dcem(ranking, q, MeasureParams("alpha-ndcg", args.alpha, args.beta, args.cutoff)),
                metrics.dcem(ranking, q, MeasureParams("nrbp", args.alpha, args.beta, args.cutoff)),
                metrics.precision_ia(ranking, q, args.cutoff),
                metrics.subtopic_recall(ranking, q, args.cutoff),
            ]
        except DegenerateQueryError:
            rows.append([q.query_id, "skipped", "", "", "", "", ""])
            skipped += 1
            continue
        rows.append([q.query_id, "ok"] + values)
        sums += np.array(values)
        evaluated += 1
    if evaluated:
        rows.append(["mean", "mean"] + list(sums / evaluated))
    path = outputs.register(args.out)
    dataio.write_report(path, header, rows)
    print(dataio.format_table(header, rows))
    print(f"wrote {path} ({evaluated} queries evaluated, {skipped} skipped)")


def cmd_baseline(args, outputs):
    queries, manifest = _load_dataset(args.data)
    params = _measure_params(args)
    rows = []
    if args.method == "relevance":
        note = "relevance-only"
        for q in queries:
            scores = baselines.relevance_scores(q, args.score_channel)
            ranking = baselines.relevance_rank(scores, params.cutoff)
            ids = q.doc_ids()
            for rank, doc in enumerate(ranking, start=1):
                rows.append((q.query_id, rank, ids[doc], float(scores[doc])))
    else:
        channel = args.sim_channel
        if channel not in manifest.channels:
            raise CliError("bad-flag", f"similarity channel {channel!r} not in dataset channels {manifest.channels}")
        channel_idx = manifest.channels.index(channel)
        if args.mmr_lambda is not None:
            lam = args.mmr_lambda
        else:
            grid = [float(v) for v in args.lambda_grid.split(",")]
            tune_on = queries
            if args.val_data:
                tune_on, _ = _load_dataset(args.val_data)
            lam = baselines.tune_mmr_lambda(tune_on, params, grid=grid,
                                            sim_channel=channel_idx, score_channel=args.score_channel)
        note = f"mmr lambda={lam}"
        for q in queries:
            ranking, gains = baselines.mmr_rank_scored(
                baselines.relevance_scores(q, args.score_channel),
                baselines.similarity_from_channel(q, channel_idx),
                lam,
                params.cutoff,
            )
            ids = q.doc_ids()
            for rank, (doc, gain) in enumerate(zip(ranking, gains), start=1):
                rows.append((q.query_id, rank, ids[doc], gain))
    path = outputs.register(args.out)
    dataio.write_run(path, rows)
    print(f"wrote {path} ({note})")


def cmd_sweep_c(args, outputs):
    train_queries, _ = _load_dataset(args.data)
    val_queries, _ = _load_dataset(args.val_data)
    grid = [float(v) for v in args.grid.split(",")] if args.grid else list(trainer.DEFAULT_C_GRID)
    params = _measure_params(args)
    cfg = trainer.TrainConfig(C=1.0, epsilon=args.epsilon, max_outer_iters=args.max_iters,
                              qp_tol=args.qp_tol, params=params)
    result = trainer.c_sweep(train_queries, val_queries, grid, cfg, n_jobs=args.threads)
    header = ["C", "train_loss", "val_" + params.measure.replace("-", "_")]
    rows = [[row.C, row.train_loss, row.val_score] for row in result.rows]
    path = outputs.register(args.out)
    dataio.write_report(path, header, rows)
    print(dataio.format_table(header, rows))
    print(f"best C: {result.best_c}")


# ------------------------------------------------------------------ parser


def build_parser():
    parser = argparse.ArgumentParser(prog="diverserank", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    p = commands["synth"] = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output base path; writes <out>.{train,val,test}.jsonl")
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--docs", type=int, default=50)
    p.add_argument("--subtopics", type=int, default=4)
    p.add_argument("--rel-features", type=int, default=8)
    p.add_argument("--div-channels", type=int, default=7)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--signal", type=float, default=1.0)
    p.add_argument("--redundancy", type=float, default=0.5)
    p.add_argument("--irrelevant-rate", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="60,20,20")
    p.set_defaults(func=cmd_synth)

    p = commands["feature-extract"] = sub.add_parser("feature-extract", help="compute pairwise diversity features from raw fields")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--channels", default=None, help="comma-separated channel names (default: all seven)")
    p.add_argument("--topics", type=int, default=20, help="number of pLSA topics")
    p.add_argument("--top-t", type=int, default=100, help="per-document sparsification count")
    p.add_argument("--plsa-max-iters", type=int, default=200)
    p.add_argument("--plsa-tol", type=float, default=1e-4)
    p.add_argument("--per-query-plsa", action="store_true", help="fit one topic model per query instead of per collection")
    p.add_argument("--corpus-field", default="body")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_feature_extract)

    p = commands["build-targets"] = sub.add_parser("build-targets", help="greedy training targets and ideal scores")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_measure_flags(p)
    p.set_defaults(func=cmd_build_targets)

    p = commands["train"] = sub.add_parser("train", help="cutting-plane training")
    p.add_argument("--data", required=True)
    p.add_argument("--targets", default=None)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--log", default=None, help="training log path (default <out>.log.jsonl)")
    _add_measure_flags(p)
    p.add_argument("--c", type=float, default=100.0)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--qp-tol", type=float, default=1e-8)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = commands["predict"] = sub.add_parser("predict", help="rank with a trained model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="run file")
    p.add_argument("--cutoff", type=int, default=None, help="override the model's cutoff")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_predict)

    p = commands["evaluate"] = sub.add_parser("evaluate", help="score a run file against a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True, help="report file (tab-separated)")
    _add_measure_flags(p, include_measure=False)
    p.set_defaults(func=cmd_evaluate)

    p = commands["baseline"] = sub.add_parser("baseline", help="relevance-only or MMR runs")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="run file")
    p.add_argument("--method", choices=["relevance", "mmr"], default="relevance")
    p.add_argument("--val-data", default=None, help="dataset used for lambda tuning (default: --data)")
    p.add_argument("--lambda", dest="mmr_lambda", type=float, default=None, help="fixed MMR lambda (skips tuning)")
    p.add_argument("--lambda-grid", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    p.add_argument("--sim-channel", default="text", help="diversity channel whose complement is the MMR similarity")
    p.add_argument("--score-channel", type=int, default=None, help="relevance feature used as the score (default: mean)")
    _add_measure_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = commands["sweep-c"] = sub.add_parser("sweep-c", help="train across a C grid and pick by validation score")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data", required=True)
    p.add_argument("--out", required=True, help="report file")
    p.add_argument("--grid", default=None, help="comma-separated C values (default 1e-4..1e3)")
    _add_measure_flags(p)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--qp-tol", type=float, default=1e-8)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_sweep_c)

    _apply_config_defaults(parser, commands)
    return parser


def _apply_config_defaults(parser, commands):
    """Fold flag defaults from the DIVERSERANK_CONFIG JSON file into the parsers."""
    config_path = os.environ.get(CONFIG_ENV_VAR)
    if not config_path:
        return
    try:
        with open(config_path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError("bad-config", f"{config_path}: {exc}") from None
    if not isinstance(config, dict):
        raise CliError("bad-config", f"{config_path}: expected a JSON object")
    for name, p in commands.items():
        section = {}
        section.update(config.get("common", {}))
        section.update(config.get(name, {}))
        dests = {action.dest for action in p._actions}
        overrides = {k.replace("-", "_"): v for k, v in section.items()}
        unknown = set(overrides) - dests
        if unknown:
            raise CliError("bad-config", f"{config_path}: unknown flags for {name}: {sorted(unknown)}")
        p.set_defaults(**overrides)


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"diverserank-error {exc.kind} {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    outputs = _Outputs()
    try:
        args.func(args, outputs)
    except CliError as exc:
        outputs.cleanup()
        print(f"diverserank-error {exc.kind} {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    except (ValueError, OSError, DegenerateQueryError, trainer.QPConvergenceError) as exc:
        outputs.cleanup()
        print(f"diverserank-error {type(exc).__name__} {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

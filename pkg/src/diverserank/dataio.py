"""File formats: dataset container, diversity qrels, model, run, report.

The dataset container is line-delimited JSON: a manifest line followed
by one record per query. Pairwise features are stored sparse
upper-triangular as (i, j, channel, value) with i < j. Floats are
written with repr precision, so reload is bit-exact.
"""

import hashlib
import json
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .types import (
    DocumentRecord,
    MeasureParams,
    QueryInstance,
    SubtopicJudgments,
    WeightVector,
    validate_instance,
)

DATASET_FORMAT = "diverserank-dataset"
TARGETS_FORMAT = "diverserank-targets"
MODEL_FORMAT = "diverserank-model"
FORMAT_VERSION = 1


class DataFormatError(ValueError):
    """Malformed input file; the message carries the first error location."""

    def __init__(self, path, line: Optional[int], message: str):
        location = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{location}: {message}")
        self.path = str(path)
        self.line = line


class CompatibilityError(ValueError):
    """Model and dataset disagree on dimensions or channel names."""


@dataclass
class DatasetManifest:
    num_relevance_features: int
    channels: list
    num_queries: int
    version: int = FORMAT_VERSION


def _doc_to_json(doc: DocumentRecord) -> dict:
    rec = {"doc_id": doc.doc_id, "relevance_features": [float(v) for v in doc.relevance_features]}
    if doc.fields_text is not None:
        rec["fields_text"] = doc.fields_text
    if doc.categories is not None:
        rec["categories"] = doc.categories
    if doc.inlinks is not None:
        rec["inlinks"] = sorted(doc.inlinks)
    if doc.outlinks is not None:
        rec["outlinks"] = sorted(doc.outlinks)
    if doc.url is not None:
        rec["url"] = doc.url
    return rec


def _doc_from_json(rec: dict) -> DocumentRecord:
    return DocumentRecord(
        doc_id=rec["doc_id"],
        relevance_features=np.array(rec["relevance_features"], dtype=np.float64),
        fields_text=rec.get("fields_text"),
        categories=rec.get("categories"),
        inlinks=frozenset(rec["inlinks"]) if "inlinks" in rec else None,
        outlinks=frozenset(rec["outlinks"]) if "outlinks" in rec else None,
        url=rec.get("url"),
    )


def save_dataset(path, queries, channels) -> None:
    """Write the container: manifest line, then one JSON record per query."""
    queries = list(queries)
    num_rel = queries[0].num_relevance_features if queries else 0
    manifest = {
        "format": DATASET_FORMAT,
        "version": FORMAT_VERSION,
        "num_relevance_features": num_rel,
        "channels": list(channels),
        "num_queries": len(queries),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest) + "\n")
        for q in queries:
            i_idx, j_idx, c_idx = np.nonzero(np.triu(np.ones(q.pairwise.shape[:2], dtype=bool), 1)[:, :, None] & (q.pairwise != 0.0))
            entries = [
                [int(i), int(j), int(c), float(q.pairwise[i, j, c])]
                for i, j, c in zip(i_idx, j_idx, c_idx)
            ]
            record = {
                "query_id": q.query_id,
                "docs": [_doc_to_json(d) for d in q.docs],
                "subtopics": {
                    "probs": [float(p) for p in q.judgments.probs],
                    "rel": q.judgments.rel.astype(int).tolist(),
                },
                "pairwise": entries,
            }
            fh.write(json.dumps(record) + "\n")


def _parse_json_line(path, line_no: int, line: str):
    try:
        return json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataFormatError(path, line_no, f"invalid JSON: {exc.msg}") from None


def load_dataset(path):
    """Parse and validate the container; returns (queries, manifest).

    Every structural violation is reported with the query id, the field
    and the line number of the offending record. Trailing non-empty lines
    after the declared query count are rejected.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(path, 1, "empty file, expected a manifest line")

    manifest_rec = _parse_json_line(path, 1, lines[0])
    if manifest_rec.get("format") != DATASET_FORMAT:
        raise DataFormatError(path, 1, f"not a {DATASET_FORMAT} file")
    if manifest_rec.get("version") != FORMAT_VERSION:
        raise DataFormatError(path, 1, f"unsupported version {manifest_rec.get('version')!r}")
    try:
        manifest = DatasetManifest(
            num_relevance_features=int(manifest_rec["num_relevance_features"]),
            channels=list(manifest_rec["channels"]),
            num_queries=int(manifest_rec["num_queries"]),
        )
    except KeyError as exc:
        raise DataFormatError(path, 1, f"manifest missing field {exc.args[0]!r}") from None

    expected_lines = 1 + manifest.num_queries
    for extra in range(expected_lines, len(lines)):
        if lines[extra].strip():
            raise DataFormatError(path, extra + 1, "trailing content after the declared query count")
    if len(lines) < expected_lines:
        raise DataFormatError(path, len(lines), f"expected {manifest.num_queries} query records, found {len(lines) - 1}")

    num_channels = len(manifest.channels)
    queries = []
    for line_no in range(2, expected_lines + 1):
        rec = _parse_json_line(path, line_no, lines[line_no - 1])
        qid = rec.get("query_id", f"<record {line_no - 1}>")

        def fail(field_name, message):
            raise DataFormatError(path, line_no, f"query {qid}: {field_name}: {message}")

        docs = [_doc_from_json(d) for d in rec.get("docs", [])]
        n = len(docs)
        for d in docs:
            if d.relevance_features.shape[0] != manifest.num_relevance_features:
                fail("relevance_features", f"doc {d.doc_id} has {d.relevance_features.shape[0]} features, manifest declares {manifest.num_relevance_features}")

        sub = rec.get("subtopics")
        if not isinstance(sub, dict):
            fail("subtopics", "missing or not an object")
        rel = np.array(sub.get("rel", []), dtype=np.float64)
        if rel.ndim != 2 or rel.shape[1] != n:
            fail("subtopics.rel", f"shape {rel.shape} does not match {n} documents")
        probs = np.array(sub.get("probs", []), dtype=np.float64)
        if probs.shape[0] != rel.shape[0]:
            fail("subtopics.probs", f"{probs.shape[0]} probabilities for {rel.shape[0]} subtopics")

        pairwise = np.zeros((n, n, num_channels))
        for entry in rec.get("pairwise", []):
            if len(entry) != 4:
                fail("pairwise", f"entry {entry!r} is not (i, j, channel, value)")
            i, j, c, value = int(entry[0]), int(entry[1]), int(entry[2]), float(entry[3])
            if not 0 <= i < j < n:
                fail("pairwise", f"indices ({i}, {j}) must satisfy 0 <= i < j < {n}")
            if not 0 <= c < num_channels:
                fail("pairwise", f"channel {c} out of range for {num_channels} channels")
            pairwise[i, j, c] = value
            pairwise[j, i, c] = value

        q = QueryInstance(
            query_id=qid,
            docs=docs,
            pairwise=pairwise,
            judgments=SubtopicJudgments(probs=probs, rel=rel),
        )
        report = validate_instance(q)
        if not report.ok:
            fail("instance", "; ".join(report.problems))
        queries.append(q)
    return queries, manifest


def parse_diversity_qrels(path) -> dict:
    """Parse standard diversity qrels: `topic subtopic docid judgment` lines.

    Judgments binarize as value > 0; subtopic 0 (topic-level) lines are
    ignored. Returns {topic: {subtopic: set(doc_ids)}} with every judged
    subtopic present even when nothing positive was found for it.
    """
    by_topic = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataFormatError(path, line_no, f"expected 4 whitespace-delimited fields, found {len(parts)}")
            topic, subtopic_str, doc_id, judgment_str = parts
            try:
                subtopic = int(subtopic_str)
                judgment = float(judgment_str)
            except ValueError:
                raise DataFormatError(path, line_no, "subtopic and judgment must be numeric") from None
            if subtopic == 0:
                continue
            topic_rec = by_topic.setdefault(topic, {})
            topic_rec.setdefault(subtopic, set())
            if judgment > 0:
                topic_rec[subtopic].add(doc_id)
    return by_topic


def judgments_from_qrels(topic_rec: dict, doc_ids, probs=None) -> SubtopicJudgments:
    """Materialize a judgment matrix for one query's document list.

    Subtopics keep their numeric order; docs absent from the qrels get
    all-zero columns. probs defaults to the uniform distribution.
    """
    subtopics = sorted(topic_rec)
    if not subtopics:
        raise ValueError("no subtopics for this topic")
    rel = np.zeros((len(subtopics), len(doc_ids)))
    index = {doc_id: i for i, doc_id in enumerate(doc_ids)}
    for row, subtopic in enumerate(subtopics):
        for doc_id in topic_rec[subtopic]:
            col = index.get(doc_id)
            if col is not None:
                rel[row, col] = 1.0
    if probs is None:
        return SubtopicJudgments.uniform(rel)
    return SubtopicJudgments(probs=np.asarray(probs, dtype=np.float64), rel=rel)


def dataset_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class ModelMetadata:
    measure: str
    alpha: float
    beta: float
    cutoff: int
    channels: list
    num_relevance_features: int
    train_config: dict
    dataset_sha256: str

    def measure_params(self) -> MeasureParams:
        return MeasureParams(measure=self.measure, alpha=self.alpha, beta=self.beta, cutoff=self.cutoff)


def save_model(path, w: WeightVector, metadata: ModelMetadata) -> None:
    record = {
        "format": MODEL_FORMAT,
        "version": FORMAT_VERSION,
        "w_rel": [float(v) for v in w.w_rel],
        "w_div": [float(v) for v in w.w_div],
        "metadata": asdict(metadata),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(record, indent=2) + "\n")


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            record = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if record.get("format") != MODEL_FORMAT:
        raise DataFormatError(path, 1, f"not a {MODEL_FORMAT} file")
    meta = record["metadata"]
    w = WeightVector(w_rel=np.array(record["w_rel"]), w_div=np.array(record["w_div"]))
    metadata = ModelMetadata(**meta)
    if len(metadata.channels) != w.w_div.shape[0]:
        raise CompatibilityError(
            f"model declares {len(metadata.channels)} channels but carries {w.w_div.shape[0]} diversity weights"
        )
    if metadata.num_relevance_features != w.w_rel.shape[0]:
        raise CompatibilityError(
            f"model declares {metadata.num_relevance_features} relevance features but carries {w.w_rel.shape[0]} weights"
        )
    return w, metadata


def check_model_compatibility(metadata: ModelMetadata, manifest: DatasetManifest) -> None:
    """Raise CompatibilityError when the model cannot score the dataset."""
    if metadata.num_relevance_features != manifest.num_relevance_features:
        raise CompatibilityError(
            f"model expects {metadata.num_relevance_features} relevance features, "
            f"dataset has {manifest.num_relevance_features}"
        )
    if list(metadata.channels) != list(manifest.channels):
        raise CompatibilityError(
            f"model channels {metadata.channels} do not match dataset channels {manifest.channels}"
        )


def save_targets(path, entries, params: MeasureParams) -> None:
    """Write per-query target rankings with their raw ideal scores.

    entries: list of (query_id, doc_ids or None). None marks a skipped
    (degenerate) query.
    """
    manifest = {
        "format": TARGETS_FORMAT,
        "version": FORMAT_VERSION,
        "measure": params.measure,
        "alpha": params.alpha,
        "beta": params.beta,
        "cutoff": params.cutoff,
        "num_queries": len(entries),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest) + "\n")
        for query_id, doc_ids, ideal_raw in entries:
            record = {"query_id": query_id, "skipped": doc_ids is None}
            if doc_ids is not None:
                record["target"] = list(doc_ids)
                record["ideal_raw"] = float(ideal_raw)
            fh.write(json.dumps(record) + "\n")


def load_targets(path):
    """Returns ({query_id: doc_id list or None}, measure params of the file)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(path, 1, "empty file, expected a manifest line")
    manifest = _parse_json_line(path, 1, lines[0])
    if manifest.get("format") != TARGETS_FORMAT:
        raise DataFormatError(path, 1, f"not a {TARGETS_FORMAT} file")
    params = MeasureParams(
        measure=manifest["measure"],
        alpha=manifest["alpha"],
        beta=manifest["beta"],
        cutoff=manifest["cutoff"],
    )
    targets = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rec = _parse_json_line(path, line_no, line)
        targets[rec["query_id"]] = None if rec.get("skipped") else rec["target"]
    return targets, params


def write_run(path, rows) -> None:
    """Write a run file: `query_id rank doc_id score` per line, rank ascending."""
    with open(path, "w", encoding="utf-8") as fh:
        for query_id, rank, doc_id, score in rows:
            fh.write(f"{query_id} {rank} {doc_id} {score!r}\n")


def read_run(path) -> dict:
    """Parse a run file into {query_id: [(doc_id, score), ...]} in rank order."""
    per_query = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataFormatError(path, line_no, f"expected 4 fields, found {len(parts)}")
            query_id, rank_str, doc_id, score_str = parts
            try:
                rank = int(rank_str)
                score = float(score_str)
            except ValueError:
                raise DataFormatError(path, line_no, "rank must be int, score must be float") from None
            rows = per_query.setdefault(query_id, [])
            if rank != len(rows) + 1:
                raise DataFormatError(path, line_no, f"rank {rank} out of order for query {query_id}")
            rows.append((doc_id, score))
    return per_query


def write_report(path, header, rows) -> None:
    """Stable machine-readable report: tab-separated header plus rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_format_cell(v) for v in row) + "\n")


def _format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def format_table(header, rows) -> str:
    """Human-readable aligned rendering of a report."""
    cells = [list(header)] + [[_format_cell(v) for v in row] for row in rows]
    widths = [max(len(r[c]) for r in cells) for c in range(len(header))]
    lines = []
    for r, row in enumerate(cells):
        lines.append("  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip())
        if r == 0:
            lines.append("  ".join("-" * widths[c] for c in range(len(header))))
    return "\n".join(lines)

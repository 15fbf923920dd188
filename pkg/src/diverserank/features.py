"""Pairwise diversity features and the pLSA topic model behind one of them.

Seven channels: implicit-topic distance, per-field TFIDF cosine
dissimilarity (body text, title, anchor text), taxonomy category
distance, link adjacency, and url relationship. Every channel emits
values in [0, 1], symmetric with a zero diagonal.
"""

import math
from dataclasses import dataclass, field
from urllib.parse import urlsplit

import numpy as np

CHANNELS = ("topic", "text", "title", "anchor", "odp", "link", "url")

# conventions for missing inputs, overridable per dataset
NEUTRAL_ODP = 0.5
MISSING_COSINE = 1.0
MISSING_LINK = 1.0
MISSING_URL = 1.0


@dataclass
class TopicModel:
    """Fitted pLSA parameters.

    doc_topic rows are p(z|d) (each sums to 1); word_topic columns are
    p(w|z) (each sums to 1). The likelihood trace is recorded once per EM
    iteration, starting from the initial parameters.
    """

    doc_topic: np.ndarray
    word_topic: np.ndarray
    log_likelihood_trace: list = field(default_factory=list)

    @property
    def num_topics(self) -> int:
        return self.doc_topic.shape[1]


def _log_likelihood(counts, doc_topic, word_topic) -> float:
    mix = doc_topic @ word_topic.T  # p(w|d), n x V
    mask = counts > 0
    return float(np.sum(counts[mask] * np.log(mix[mask])))


def plsa_fit(counts, num_topics: int, max_iters: int = 200, tol: float = 1e-4, seed: int = 0) -> TopicModel:
    """Fit pLSA by EM on a document-term count matrix.

    Deterministic given the seed. Documents with an all-zero row keep the
    uniform topic distribution. Stops when the log-likelihood improves by
    less than tol or after max_iters iterations.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2 or counts.size == 0:
        raise ValueError("counts must be a non-empty 2-D document-term matrix")
    if num_topics < 1:
        raise ValueError("num_topics must be >= 1")
    n_docs, vocab = counts.shape
    rng = np.random.default_rng(seed)

    # uniform document mixtures keep identical documents identical under
    # EM; the seeded word-topic table is what breaks topic symmetry
    doc_topic = np.full((n_docs, num_topics), 1.0 / num_topics)
    word_topic = rng.random((vocab, num_topics)) + 0.1
    word_topic /= word_topic.sum(axis=0, keepdims=True)

    empty_docs = counts.sum(axis=1) == 0

    trace = [_log_likelihood(counts, doc_topic, word_topic)]
    for _ in range(max_iters):
        mix = doc_topic @ word_topic.T
        ratio = np.divide(counts, mix, out=np.zeros_like(counts), where=counts > 0)
        # implicit E-step: responsibilities p(z|d,w) = doc_topic * word_topic / mix
        new_word = word_topic * (ratio.T @ doc_topic)
        new_doc = doc_topic * (ratio @ word_topic)

        col = new_word.sum(axis=0, keepdims=True)
        np.divide(new_word, col, out=new_word, where=col > 0)
        row = new_doc.sum(axis=1, keepdims=True)
        np.divide(new_doc, row, out=new_doc, where=row > 0)
        new_doc[empty_docs] = 1.0 / num_topics

        word_topic, doc_topic = new_word, new_doc
        trace.append(_log_likelihood(counts, doc_topic, word_topic))
        if trace[-1] - trace[-2] < tol:
            break

    return TopicModel(doc_topic=doc_topic, word_topic=word_topic, log_likelihood_trace=trace)


def plsa_fold_in(counts, tm: TopicModel, max_iters: int = 50, tol: float = 1e-6) -> np.ndarray:
    """Topic distributions for new documents with word_topic held fixed."""
    counts = np.asarray(counts, dtype=np.float64)
    n_docs = counts.shape[0]
    doc_topic = np.full((n_docs, tm.num_topics), 1.0 / tm.num_topics)
    empty = counts.sum(axis=1) == 0
    prev = -np.inf
    for _ in range(max_iters):
        mix = doc_topic @ tm.word_topic.T
        ratio = np.divide(counts, mix, out=np.zeros_like(counts), where=counts > 0)
        doc_topic = doc_topic * (ratio @ tm.word_topic)
        row = doc_topic.sum(axis=1, keepdims=True)
        np.divide(doc_topic, row, out=doc_topic, where=row > 0)
        doc_topic[empty] = 1.0 / tm.num_topics
        ll = _log_likelihood(counts, doc_topic, tm.word_topic)
        if ll - prev < tol:
            break
        prev = ll
    return doc_topic


def topic_distance(i: int, j: int, tm: TopicModel) -> float:
    """Euclidean distance between two documents' topic rows; range [0, sqrt(2)]."""
    diff = tm.doc_topic[i] - tm.doc_topic[j]
    return float(np.sqrt(diff @ diff))


def cosine_dissim(vec_i, vec_j) -> float:
    """1 - cosine similarity; an all-zero vector counts as maximally dissimilar."""
    vec_i = np.asarray(vec_i, dtype=np.float64)
    vec_j = np.asarray(vec_j, dtype=np.float64)
    norm_i = np.linalg.norm(vec_i)
    norm_j = np.linalg.norm(vec_j)
    if norm_i == 0.0 or norm_j == 0.0:
        return MISSING_COSINE
    value = 1.0 - float(vec_i @ vec_j) / (norm_i * norm_j)
    return min(1.0, max(0.0, value))


def tfidf_matrix(field_counts) -> np.ndarray:
    """Within-candidate-set TFIDF vectors for one document field.

    field_counts: per document a {term: count} dict (or None). tf is the
    raw count; idf = ln((n + 1) / (df + 1)) + 1. Missing fields become
    all-zero rows, which cosine_dissim treats as maximally dissimilar.
    """
    n = len(field_counts)
    vocab = {}
    for doc in field_counts:
        for term in doc or ():
            vocab.setdefault(term, len(vocab))
    out = np.zeros((n, len(vocab)))
    if not vocab:
        return out
    df = np.zeros(len(vocab))
    for doc in field_counts:
        for term in doc or ():
            df[vocab[term]] += 1
    idf = np.log((n + 1) / (df + 1)) + 1.0
    for row, doc in enumerate(field_counts):
        for term, count in (doc or {}).items():
            col = vocab[term]
            out[row, col] = count * idf[col]
    return out


def category_path_distance(u, v) -> float:
    """1 - (longest common prefix length / longer path length), in segments."""
    if not u or not v:
        return 1.0
    common = 0
    for a, b in zip(u, v):
        if a != b:
            break
        common += 1
    return 1.0 - common / max(len(u), len(v))


def odp_distance(cats_i, cats_j) -> float:
    """Mean pairwise category distance between two category sets.

    An empty (or missing) set on either side yields the neutral 0.5.
    """
    if not cats_i or not cats_j:
        return NEUTRAL_ODP
    total = 0.0
    for u in cats_i:
        for v in cats_j:
            total += category_path_distance(u, v)
    return total / (len(cats_i) * len(cats_j))


def _link_identifiers(doc) -> set:
    ids = {doc.doc_id}
    if doc.url:
        ids.add(doc.url)
    return ids


def link_dissim(doc_i, doc_j) -> float:
    """0 when either document links to the other, 1 otherwise (or when unknown)."""
    neighbors_j = (doc_j.inlinks or frozenset()) | (doc_j.outlinks or frozenset())
    neighbors_i = (doc_i.inlinks or frozenset()) | (doc_i.outlinks or frozenset())
    if _link_identifiers(doc_i) & neighbors_j or _link_identifiers(doc_j) & neighbors_i:
        return 0.0
    return MISSING_LINK


def _url_parts(url: str):
    url = url.strip()
    if "//" not in url:
        url = "//" + url
    parts = urlsplit(url)
    host = parts.netloc.lower()
    if not host:
        raise ValueError(f"no host in url {url!r}")
    path = parts.path or ""
    return host, host + path.rstrip("/")


def url_dissim(url_i, url_j) -> float:
    """0 when one url prefixes the other, 0.5 for same site or registered domain, else 1.

    The registered domain is approximated by the last two host labels.
    Unparseable or missing urls count as unrelated.
    """
    if not url_i or not url_j:
        return MISSING_URL
    try:
        host_i, full_i = _url_parts(url_i)
        host_j, full_j = _url_parts(url_j)
    except ValueError:
        return MISSING_URL
    if full_i.startswith(full_j) or full_j.startswith(full_i):
        return 0.0
    domain_i = ".".join(host_i.split(".")[-2:])
    domain_j = ".".join(host_j.split(".")[-2:])
    if host_i == host_j or domain_i == domain_j:
        return 0.5
    return 1.0


@dataclass
class FeatureConfig:
    channels: tuple = CHANNELS
    top_t: int = 100  # per-document retention count during sparsification
    num_topics: int = 20
    plsa_max_iters: int = 200
    plsa_tol: float = 1e-4
    seed: int = 0
    corpus_field: str = "body"


def sparsify_top_t(matrix: np.ndarray, top_t: int) -> np.ndarray:
    """Keep each document's top_t largest pair values; zero out the rest.

    A pair survives if either endpoint retains it, which keeps the matrix
    symmetric. Ties at the threshold break toward the lower column index.
    """
    n = matrix.shape[0]
    if n - 1 <= top_t:
        return matrix.copy()
    keep = np.zeros((n, n), dtype=bool)
    for i in range(n):
        order = np.argsort(-matrix[i], kind="stable")
        order = order[order != i][:top_t]
        keep[i, order] = True
    keep |= keep.T
    out = np.where(keep, matrix, 0.0)
    np.fill_diagonal(out, 0.0)
    return out


def minmax_offdiag(matrix: np.ndarray) -> np.ndarray:
    """Min-max scale the off-diagonal entries to [0, 1]; flat channels go to 0."""
    n = matrix.shape[0]
    if n < 2:
        return np.zeros_like(matrix)
    mask = ~np.eye(n, dtype=bool)
    lo = matrix[mask].min()
    hi = matrix[mask].max()
    if hi - lo <= 0.0:
        return np.zeros_like(matrix)
    out = np.zeros_like(matrix)
    out[mask] = (matrix[mask] - lo) / (hi - lo)
    return out


def assemble_pairwise(docs, topic_rows=None, config: FeatureConfig = FeatureConfig()):
    """Compute the enabled channels for one candidate set.

    topic_rows: per-document p(z|d) rows aligned with docs (required when
    the topic channel is enabled). Returns (n x n x F tensor, channel
    names); channels are sparsified per document, re-symmetrized, then
    min-max normalized per query.
    """
    n = len(docs)
    unknown = [c for c in config.channels if c not in CHANNELS]
    if unknown:
        raise ValueError(f"unknown feature channels {unknown}; expected subset of {CHANNELS}")
    names = list(config.channels)
    field_of = {"text": "body", "title": "title", "anchor": "anchor"}
    tensors = []
    for name in names:
        mat = np.zeros((n, n))
        if name == "topic":
            if topic_rows is None:
                raise ValueError("topic channel enabled but no topic rows given")
            for i in range(n):
                for j in range(i + 1, n):
                    d = float(np.linalg.norm(topic_rows[i] - topic_rows[j]))
                    mat[i, j] = mat[j, i] = min(1.0, d / math.sqrt(2.0))
        elif name in field_of:
            vectors = tfidf_matrix([(d.fields_text or {}).get(field_of[name]) for d in docs])
            for i in range(n):
                for j in range(i + 1, n):
                    mat[i, j] = mat[j, i] = cosine_dissim(vectors[i], vectors[j])
        elif name == "odp":
            for i in range(n):
                for j in range(i + 1, n):
                    mat[i, j] = mat[j, i] = odp_distance(docs[i].categories, docs[j].categories)
        elif name == "link":
            for i in range(n):
                for j in range(i + 1, n):
                    mat[i, j] = mat[j, i] = link_dissim(docs[i], docs[j])
        elif name == "url":
            for i in range(n):
                for j in range(i + 1, n):
                    mat[i, j] = mat[j, i] = url_dissim(docs[i].url, docs[j].url)
        mat = minmax_offdiag(sparsify_top_t(mat, config.top_t))
        tensors.append(mat)
    return np.stack(tensors, axis=2), names

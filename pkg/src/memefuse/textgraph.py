"""Corpus graph over document and word nodes.

Word-word edges carry positive pointwise mutual information gathered with
a sliding window; document-word edges carry TF-IDF; the diagonal is 1.
The adjacency matrix is symmetrically normalized by inverse square-root
degrees. Per-document L_S x L_S adjacency blocks are extracted for the
graph-attention encoder: sequence position 0 maps to the document node,
the remaining positions map to their word nodes.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .preprocess import PAD_ID, TokenIdSequence, Vocabulary

NEG_INF = float("-inf")
_FIRST_WORD_ID = 3  # ids 0..2 are PAD/CLS/UNK and never become word nodes


@dataclass
class WindowStats:
    total: int                       # N: number of sliding windows
    per_token: Counter               # N_i: windows containing token i
    per_pair: Counter                # N_ij: windows containing both i and j
    window_len: int


@dataclass
class DocAdjacency:
    matrix: np.ndarray  # dense (L_S, L_S)
    doc_index: int      # -1 for documents outside the corpus graph


@dataclass
class CorpusGraph:
    n_D: int
    n_W: int
    raw: sp.csr_matrix         # A, symmetric, unit diagonal
    normalized: sp.csr_matrix  # D^{-1/2} A D^{-1/2}
    degree: np.ndarray
    idf: np.ndarray | None     # per word id (offset by reserved ids), ln(n_D/df)

    @property
    def n_nodes(self) -> int:
        return self.n_D + self.n_W

    def word_node(self, token_id: int) -> int | None:
        if token_id < _FIRST_WORD_ID:
            return None
        node = self.n_D + token_id - _FIRST_WORD_ID
        return node if node < self.n_nodes else None


def count_windows(corpus: list[list[int]], window_len: int) -> WindowStats:
    """Sliding-window co-occurrence counts with step size 1.

    A document shorter than the window contributes one whole-document
    window. Counts are window membership, not occurrences.
    """
    if window_len < 1:
        raise ValueError("window length must be >= 1")
    total = 0
    per_token: Counter = Counter()
    per_pair: Counter = Counter()
    for doc in corpus:
        n_windows = max(1, len(doc) - window_len + 1)
        total += n_windows
        for start in range(n_windows):
            members = sorted(set(doc[start: start + window_len]))
            per_token.update(members)
            for a_idx in range(len(members)):
                for b_idx in range(a_idx + 1, len(members)):
                    per_pair[(members[a_idx], members[b_idx])] += 1
    return WindowStats(total=total, per_token=per_token, per_pair=per_pair,
                       window_len=window_len)


def pmi(stats: WindowStats, i: int, j: int) -> float:
    """ln( p(i,j) / (p(i) p(j)) ) over window probabilities.

    Returns -inf when the pair never co-occurs; such edges are omitted
    from the adjacency matrix.
    """
    if stats.total <= 0:
        raise ValueError("window statistics are empty")
    key = (i, j) if i <= j else (j, i)
    n_ij = stats.per_pair.get(key, 0)
    if i == j:
        n_ij = stats.per_token.get(i, 0)
    n_i = stats.per_token.get(i, 0)
    n_j = stats.per_token.get(j, 0)
    if n_ij == 0 or n_i == 0 or n_j == 0:
        return NEG_INF
    return math.log(n_ij * stats.total / (n_i * n_j))


def doc_frequencies(corpus: list[list[int]], vocab: Vocabulary) -> np.ndarray:
    """Number of documents containing each word token, indexed by id-3."""
    df = np.zeros(vocab.n_W, dtype=np.int64)
    for doc in corpus:
        for t in set(doc):
            if t >= _FIRST_WORD_ID:
                df[t - _FIRST_WORD_ID] += 1
    return df


def tfidf(corpus: list[list[int]], doc: int, token: int) -> float:
    """Raw term count times ln(n_D / document frequency)."""
    df = sum(1 for d in corpus if token in d)
    if df == 0:
        return 0.0
    tf = corpus[doc].count(token)
    return tf * math.log(len(corpus) / df)


def build_adjacency(corpus: list[list[int]], stats: WindowStats,
                    vocab: Vocabulary) -> CorpusGraph:
    """Assemble the sparse symmetric adjacency and its normalization.

    Node order is [documents..., words...]. Only strictly positive PMI
    pairs become word-word edges; document-word entries are TF-IDF with
    IDF computed over this corpus.
    """
    n_D, n_W = len(corpus), vocab.n_W
    if n_D == 0 or n_W + n_D == 0:
        raise ValueError("empty corpus or vocabulary")
    n = n_D + n_W
    rows, cols, vals = [], [], []

    def add_sym(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)
        rows.append(c)
        cols.append(r)
        vals.append(v)

    for (i, j), _ in stats.per_pair.items():
        if i < _FIRST_WORD_ID or j < _FIRST_WORD_ID:
            continue
        value = pmi(stats, i, j)
        if value > 0.0:
            add_sym(n_D + i - _FIRST_WORD_ID, n_D + j - _FIRST_WORD_ID, value)

    df = doc_frequencies(corpus, vocab)
    idf = np.where(df > 0, np.log(n_D / np.maximum(df, 1)), 0.0)
    for k, doc in enumerate(corpus):
        counts = Counter(t for t in doc if t >= _FIRST_WORD_ID)
        for t, tf in counts.items():
            w = t - _FIRST_WORD_ID
            value = tf * idf[w]
            if value != 0.0:
                add_sym(k, n_D + w, value)

    rows.extend(range(n))
    cols.extend(range(n))
    vals.extend([1.0] * n)

    raw = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    degree = np.asarray(raw.sum(axis=1)).ravel()
    return CorpusGraph(n_D=n_D, n_W=n_W, raw=raw,
                       normalized=_normalize(raw, degree),
                       degree=degree, idf=idf)


def _normalize(raw: sp.csr_matrix, degree: np.ndarray) -> sp.csr_matrix:
    """D^{-1/2} A D^{-1/2}, computed entrywise as v / sqrt(d_i * d_j).

    sqrt(d_i * d_j) is symmetric in (i, j), so the result is bitwise
    symmetric whenever A is.
    """
    coo = raw.tocoo()
    data = coo.data / np.sqrt(degree[coo.row] * degree[coo.col])
    return sp.coo_matrix((data, (coo.row, coo.col)), shape=raw.shape).tocsr()


def _fill_word_block(graph: CorpusGraph, seq: TokenIdSequence,
                     matrix: np.ndarray) -> list[int | None]:
    """Word-word entries of the extracted block; returns per-position nodes."""
    nodes: list[int | None] = [None]
    for p in range(1, seq.length):
        if p >= seq.true_length or seq.ids[p] == PAD_ID:
            nodes.append(None)
            continue
        nodes.append(graph.word_node(int(seq.ids[p])))
    positions = [p for p in range(1, seq.length) if nodes[p] is not None]
    if positions:
        node_arr = np.array([nodes[p] for p in positions])
        block = graph.normalized[node_arr][:, node_arr].toarray()
        matrix[np.ix_(positions, positions)] = block
    for p in range(1, seq.length):
        if nodes[p] is None:
            matrix[p, p] = 1.0  # PAD/unknown: unit self-loop only
    return nodes


def extract_document_adjacency(graph: CorpusGraph, doc: int,
                               seq: TokenIdSequence) -> DocAdjacency:
    """Dense L_S x L_S block of the normalized adjacency for one document.

    Row/column 0 is the document node (its edges carry normalized TF-IDF),
    the other positions are word nodes; PAD and out-of-vocabulary
    positions keep only a unit self-loop.
    """
    if not 0 <= doc < graph.n_D:
        raise IndexError(f"document index {doc} out of range")
    matrix = np.zeros((seq.length, seq.length))
    nodes = _fill_word_block(graph, seq, matrix)
    norm = graph.normalized
    matrix[0, 0] = norm[doc, doc]
    for p in range(1, seq.length):
        if nodes[p] is not None:
            value = norm[doc, nodes[p]]
            matrix[0, p] = value
            matrix[p, 0] = value
    return DocAdjacency(matrix=matrix, doc_index=doc)


def extract_unseen_adjacency(graph: CorpusGraph, doc_tokens: list[int],
                             seq: TokenIdSequence) -> DocAdjacency:
    """Adjacency block for a document that is not a node of the graph.

    The document row is synthesized: TF-IDF against the training IDF
    values, pseudo-degree 1 + sum of those entries, and the symmetric
    normalization applied with the stored word degrees. Word-word entries
    are reused from the training graph.
    """
    if graph.idf is None:
        raise ValueError("graph was loaded without IDF values; "
                         "rebuild it from the corpus")
    matrix = np.zeros((seq.length, seq.length))
    nodes = _fill_word_block(graph, seq, matrix)

    counts = Counter(t for t in doc_tokens if graph.word_node(t) is not None)
    row = {t: tf * graph.idf[t - _FIRST_WORD_ID] for t, tf in counts.items()}
    pseudo_degree = 1.0 + sum(row.values())
    matrix[0, 0] = 1.0 / pseudo_degree
    for p in range(1, seq.length):
        node = nodes[p]
        if node is None:
            continue
        token = int(seq.ids[p])
        value = row.get(token, 0.0)
        value /= math.sqrt(pseudo_degree * graph.degree[node])
        matrix[0, p] = value
        matrix[p, 0] = value
    return DocAdjacency(matrix=matrix, doc_index=-1)


def save_graph(graph: CorpusGraph, path: str) -> None:
    """Text format: header line, then upper-triangle `row col value` triplets."""
    coo = sp.triu(graph.raw).tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"TEXTGCN v1 {graph.n_D} {graph.n_W} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")


def load_graph(path: str) -> CorpusGraph:
    """Inverse of save_graph; the normalization is recomputed on load.

    IDF values are not part of the file format, so adjacency extraction
    for unseen documents is unavailable on a loaded graph.
    """
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[0] != "TEXTGCN" or header[1] != "v1":
            raise ValueError(f"not a TEXTGCN v1 graph file: {path}")
        n_D, n_W, nnz = int(header[2]), int(header[3]), int(header[4])
        rows, cols, vals = [], [], []
        for _ in range(nnz):
            r, c, v = fh.readline().split()
            r, c, v = int(r), int(c), float(v)
            rows.append(r)
            cols.append(c)
            vals.append(v)
            if r != c:
                rows.append(c)
                cols.append(r)
                vals.append(v)
    n = n_D + n_W
    raw = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    degree = np.asarray(raw.sum(axis=1)).ravel()
    return CorpusGraph(n_D=n_D, n_W=n_W, raw=raw,
                       normalized=_normalize(raw, degree),
                       degree=degree, idf=None)

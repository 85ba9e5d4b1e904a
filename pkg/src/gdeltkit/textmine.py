"""Concept links and topic extraction over a plain-text article corpus.

Concept links rank the terms that share documents with a given term by the
log-likelihood ratio (G-squared) of their 2x2 document co-occurrence table.
Topics come from a non-negative factorisation of the tf-idf matrix fitted with
multiplicative updates from a seeded random start.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from ._io import atomic_open, dump_json, write_csv
from .ingest import ArticleDoc

STOPWORDS = frozenset(
    """
    a about above after again against all also am an and any are as at be because been
    before being below between both but by can could did do does doing down during each
    few for from further had has have having he her here hers herself him himself his how
    if in into is it its itself just me more most my myself no nor not now of off on once
    only or other our ours ourselves out over own said same she should so some such than
    that the their theirs them themselves then there these they this those through to too
    under until up very was we were what when where which while who whom why will with
    would you your yours yourself yourselves mr mrs ms one two new says say told
    """.split()
)

_WORD = re.compile(r"[^\W\d_]+")


def light_stem(word: str) -> str:
    """Strip common plural endings (``cities``->``city``, ``ships``->``ship``)."""
    if len(word) > 4 and word.endswith("ies"):
        return word[:-3] + "y"
    if word.endswith("sses"):
        return word[:-2]
    if len(word) > 3 and word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    return word


def tokenize(
    doc: Union[ArticleDoc, str], stoplist: Iterable[str] = STOPWORDS, stem: bool = False
) -> list[str]:
    text = doc.text if isinstance(doc, ArticleDoc) else doc
    stop = stoplist if isinstance(stoplist, (set, frozenset)) else set(stoplist)
    out = []
    for tok in _WORD.findall(text.lower()):
        if len(tok) < 2 or tok in stop:
            continue
        out.append(light_stem(tok) if stem else tok)
    return out


class UnknownTermError(KeyError):
    def __str__(self):
        return f"term not in vocabulary: {self.args[0]!r}"


@dataclass
class DocTermMatrix:
    doc_ids: list[str]
    terms: list[str]
    counts: sp.csr_matrix
    vocabulary: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.vocabulary = {t: i for i, t in enumerate(self.terms)}

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    def incidence(self) -> sp.csc_matrix:
        """Binary document-term presence matrix."""
        b = self.counts.copy().tocsc()
        b.data = np.ones_like(b.data)
        return b

    def document_frequency(self) -> np.ndarray:
        return np.asarray(self.incidence().sum(axis=0)).ravel()

    def cooccurrence(self) -> sp.csr_matrix:
        """Term x term count of documents containing both terms."""
        b = self.incidence()
        return (b.T @ b).tocsr()

    def tfidf(self) -> sp.csr_matrix:
        """Raw counts times ``1 + ln(N/df)``, rows scaled to unit length."""
        n = self.counts.shape[0]
        df = self.document_frequency()
        idf = 1.0 + np.log(n / np.maximum(df, 1))
        x = self.counts.astype(float) @ sp.diags(idf)
        norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
        norms[norms == 0] = 1.0
        return sp.diags(1.0 / norms) @ x


def build_matrix(
    docs: Iterable[ArticleDoc],
    stoplist: Iterable[str] = STOPWORDS,
    stem: bool = False,
    min_df: int = 1,
) -> DocTermMatrix:
    docs = list(docs)
    stop = frozenset(stoplist)
    bags = [Counter(tokenize(d, stop, stem)) for d in docs]
    df = Counter(t for bag in bags for t in bag)
    terms = sorted(t for t, n in df.items() if n >= min_df)
    index = {t: i for i, t in enumerate(terms)}
    rows, cols, vals = [], [], []
    for r, bag in enumerate(bags):
        for t, c in bag.items():
            j = index.get(t)
            if j is not None:
                rows.append(r)
                cols.append(j)
                vals.append(c)
    counts = sp.csr_matrix(
        (np.array(vals, dtype=np.int64), (rows, cols)), shape=(len(docs), len(terms))
    )
    counts.sort_indices()
    return DocTermMatrix([d.doc_id for d in docs], terms, counts)


# --- concept links -----------------------------------------------------------


def _xlogx_ratio(k: np.ndarray, expected: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = k * np.log(k / expected)
    return np.where(k > 0, out, 0.0)


def llr(k11: float, k12: float, k21: float, k22: float) -> float:
    """G-squared statistic of a 2x2 contingency table."""
    return float(
        _llr_arrays(np.array([k11], float), np.array([k12], float), np.array([k21], float), np.array([k22], float))[0]
    )


def _llr_arrays(k11, k12, k21, k22) -> np.ndarray:
    n = k11 + k12 + k21 + k22
    r1, r2 = k11 + k12, k21 + k22
    c1, c2 = k11 + k21, k12 + k22
    g = (
        _xlogx_ratio(k11, r1 * c1 / n)
        + _xlogx_ratio(k12, r1 * c2 / n)
        + _xlogx_ratio(k21, r2 * c1 / n)
        + _xlogx_ratio(k22, r2 * c2 / n)
    )
    return np.maximum(2.0 * g, 0.0)


@dataclass(frozen=True)
class ConceptLink:
    source: str
    target: str
    cooccurrence: int
    strength: float


def concept_links(matrix: DocTermMatrix, term: str, top_n: int = 9) -> list[ConceptLink]:
    """Top ``top_n`` terms sharing documents with ``term``.

    Strength is the G-squared statistic of the document co-occurrence table,
    negated when the pair co-occurs less often than independence predicts.
    Ties fall back to raw co-occurrence (higher first), then to the term.
    """
    if term not in matrix.vocabulary:
        raise UnknownTermError(term)
    a = matrix.vocabulary[term]
    b = matrix.incidence()
    n = float(b.shape[0])
    df = np.asarray(b.sum(axis=0)).ravel().astype(float)
    k11 = np.asarray((b[:, a].T @ b).todense()).ravel().astype(float)
    k12 = df[a] - k11
    k21 = df - k11
    k22 = n - df[a] - df + k11
    g2 = _llr_arrays(k11, k12, k21, k22)
    sign = np.where(k11 * n >= df[a] * df, 1.0, -1.0)
    strength = sign * g2

    candidates = [j for j in np.flatnonzero(k11 > 0) if j != a]
    candidates.sort(key=lambda j: (-strength[j], -k11[j], matrix.terms[j]))
    return [
        ConceptLink(term, matrix.terms[j], int(k11[j]), float(strength[j]))
        for j in candidates[: max(top_n, 0)]
    ]


def concept_graph(matrix: DocTermMatrix, terms: Sequence[str], top_n: int = 9) -> list[ConceptLink]:
    """Links for each term in an expansion chain, e.g. a term then one of its neighbours."""
    links: list[ConceptLink] = []
    for t in terms:
        links.extend(concept_links(matrix, t, top_n))
    return links


def write_links(path: str | Path, links: Iterable[ConceptLink]) -> int:
    return write_csv(
        path,
        ["source", "target", "cooccurrence", "strength"],
        ([l.source, l.target, l.cooccurrence, l.strength] for l in links),
    )


# --- topics ------------------------------------------------------------------


@dataclass
class Topic:
    topic_id: int
    top_terms: tuple[str, ...]
    n_terms: int
    n_docs: int
    weights: np.ndarray = field(repr=False)
    docs: tuple[int, ...] = field(default=(), repr=False)


@dataclass
class TopicModel:
    topics: list[Topic]
    terms: list[str]
    doc_ids: list[str]
    doc_topic: np.ndarray
    objective: list[float]
    settings: dict

    def __iter__(self):
        return iter(self.topics)

    def __len__(self):
        return len(self.topics)

    def to_csv(self, path: str | Path) -> int:
        return write_csv(
            path,
            ["topic_id", "top_terms", "n_terms", "n_docs"],
            ([t.topic_id, ",".join(t.top_terms), t.n_terms, t.n_docs] for t in self.topics),
        )

    def to_dict(self) -> dict:
        return {
            "settings": self.settings,
            "terms": self.terms,
            "objective": self.objective,
            "topics": [
                {
                    "topic_id": t.topic_id,
                    "top_terms": list(t.top_terms),
                    "n_terms": t.n_terms,
                    "n_docs": t.n_docs,
                    "docs": [self.doc_ids[i] for i in t.docs],
                    "weights": [float(w) for w in t.weights],
                }
                for t in self.topics
            ],
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = dump_json(self.to_dict())
        if path is not None:
            with atomic_open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def _objective(x: sp.csr_matrix, x_sq: float, w: np.ndarray, h: np.ndarray) -> float:
    """Squared Frobenius error ||X - WH||^2 without forming WH densely."""
    cross = float(np.sum(w * (x @ h.T)))
    gram = float(np.sum((w.T @ w) * (h @ h.T)))
    return max(x_sq - 2.0 * cross + gram, 0.0)


def factorize(
    x: sp.spmatrix, k: int, seed: int = 0, n_iter: int = 200, tol: Optional[float] = 1e-10
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lee-Seung multiplicative updates for X ~ W H with W, H >= 0.

    Runs at most ``n_iter`` iterations and returns ``W`` (docs x k), ``H``
    (k x terms) and the objective after initialisation and after each kept
    iteration.  With ``tol`` set, fitting stops once an iteration improves the
    objective by no more than ``tol`` times its initial value; an iteration
    that fails to lower it at all (rounding noise at a fixed point) is undone.
    """
    x = sp.csr_matrix(x, dtype=float)
    n, v = x.shape
    rng = np.random.default_rng(seed)
    scale = math.sqrt(x.sum() / (n * v) / k)
    w = rng.random((n, k)) * scale
    h = rng.random((k, v)) * scale
    x_sq = float(x.multiply(x).sum())
    tiny = np.finfo(float).tiny
    history = [_objective(x, x_sq, w, h)]
    for _ in range(n_iter):
        h_new = h * (np.asarray(x.T @ w).T / np.maximum((w.T @ w) @ h, tiny))
        w_new = w * (np.asarray(x @ h_new.T) / np.maximum(w @ (h_new @ h_new.T), tiny))
        obj = _objective(x, x_sq, w_new, h_new)
        if tol is not None and obj >= history[-1]:
            break
        w, h = w_new, h_new
        history.append(obj)
        if tol is not None and history[-2] - obj <= tol * history[0]:
            break
    return w, h, history


def extract_topics(
    matrix: DocTermMatrix,
    k: int,
    seed: int = 0,
    n_iter: int = 200,
    tol: Optional[float] = 1e-10,
    doc_threshold: float = 0.2,
    term_cutoff_std: float = 1.0,
    n_top: int = 5,
) -> TopicModel:
    """Fit ``k`` topics on the tf-idf matrix.

    A document joins every topic holding at least ``doc_threshold`` of its
    total topic loading (so it may join none, one or several).  A topic's
    terms are those weighted above mean + ``term_cutoff_std`` standard
    deviations of its weights, plus its top terms.  Topics are numbered from 1
    in order of decreasing document count.
    """
    n_docs, n_terms = matrix.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    if n_docs == 0 or n_terms == 0 or matrix.counts.nnz == 0:
        raise ValueError("cannot extract topics from an empty document-term matrix")
    if k > n_docs:
        raise ValueError(f"k={k} exceeds the number of documents ({n_docs})")

    w, h, history = factorize(matrix.tfidf(), k, seed, n_iter, tol)
    norms = np.linalg.norm(h, axis=1)
    norms[norms == 0] = 1.0
    h = h / norms[:, None]
    w = w * norms[None, :]

    totals = w.sum(axis=1)
    share = np.divide(w, totals[:, None], out=np.zeros_like(w), where=totals[:, None] > 0)
    assigned = (share >= doc_threshold) & (w > 0)

    raw = []
    for t in range(k):
        weights = h[t]
        order = sorted(np.flatnonzero(weights > 0), key=lambda j: (-weights[j], matrix.terms[j]))
        top = order[:n_top]
        cutoff = weights.mean() + term_cutoff_std * weights.std()
        members = set(np.flatnonzero(weights > cutoff)) | set(top)
        docs = tuple(int(i) for i in np.flatnonzero(assigned[:, t]))
        raw.append((t, tuple(matrix.terms[j] for j in top), len(members), docs, float(w[:, t].sum())))

    raw.sort(key=lambda r: (-len(r[3]), -r[4], r[1]))
    topics = []
    for new_id, (t, top, n_members, docs, _) in enumerate(raw, start=1):
        topics.append(Topic(new_id, top, n_members, len(docs), h[t].copy(), docs))
    order = [r[0] for r in raw]
    settings = {
        "k": k,
        "seed": seed,
        "n_iter": n_iter,
        "iterations_run": len(history) - 1,
        "tol": tol,
        "doc_threshold": doc_threshold,
        "term_cutoff": f"mean + {term_cutoff_std} * std",
        "n_top": n_top,
        "weighting": "tf-idf",
    }
    return TopicModel(topics, list(matrix.terms), list(matrix.doc_ids), w[:, order], history, settings)


# --- comparing runs ----------------------------------------------------------


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def _topics(run) -> list[Topic]:
    return list(run.topics if isinstance(run, TopicModel) else run)


def common_topics(run_a, run_b, overlap_threshold: float = 0.25) -> list[tuple[int, int, float]]:
    """Greedy one-to-one matching of topics by Jaccard overlap of their top terms.

    Pairs are taken best-first (ties by topic ids) while both topics are
    unmatched and the overlap is at least ``overlap_threshold``.
    """
    ta, tb = _topics(run_a), _topics(run_b)
    pairs = []
    for x in ta:
        for y in tb:
            j = jaccard(x.top_terms, y.top_terms)
            if j > 0 and j >= overlap_threshold:
                pairs.append((-j, x.topic_id, y.topic_id))
    pairs.sort()
    used_a, used_b, out = set(), set(), []
    for neg_j, a, b in pairs:
        if a in used_a or b in used_b:
            continue
        used_a.add(a)
        used_b.add(b)
        out.append((a, b, -neg_j))
    return out


def common_across(runs: Sequence, overlap_threshold: float = 0.25) -> list[int]:
    """Topic ids of the first run that find a match in every other run."""
    if not runs:
        return []
    keep = {t.topic_id for t in _topics(runs[0])}
    for other in runs[1:]:
        keep &= {a for a, _, _ in common_topics(runs[0], other, overlap_threshold)}
    return sorted(keep)


def ranked(run) -> list[Topic]:
    return sorted(_topics(run), key=lambda t: (-t.n_docs, t.topic_id))


def topic_rank(run, topic_terms: Iterable[str], overlap_threshold: float = 0.25) -> Optional[int]:
    """1-based rank (by document count) of the topic best matching ``topic_terms``."""
    terms = set(topic_terms)
    best: Optional[tuple[float, int]] = None
    for rank, t in enumerate(ranked(run), start=1):
        j = jaccard(terms, t.top_terms)
        if j > 0 and j >= overlap_threshold and (best is None or j > best[0]):
            best = (j, rank)
    return None if best is None else best[1]


def topic_rank_drift(
    run_a, run_b, topic_terms: Iterable[str], overlap_threshold: float = 0.25
) -> tuple[Optional[int], Optional[int]]:
    terms = list(topic_terms)
    return topic_rank(run_a, terms, overlap_threshold), topic_rank(run_b, terms, overlap_threshold)

"""Prefix-truncated exact search, TREC-style files and nDCG / Recall metrics."""

from __future__ import annotations

import hashlib
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .binio import Reader, Writer, read_container, write_container
from .errors import ConfigError, DegenerateInputError, DigestMismatchError, DimensionError, InputFormatError
from .numkit import F32LE

STORE_MAGIC = b"TMRE"
STORE_VERSION = 1

Qrels = dict[str, dict[str, int]]
Run = dict[str, list[tuple[str, float]]]


def _id_key(docid: str):
    """Ascending doc-id order: numeric ids by value, then everything else lexically."""
    return (0, int(docid), "") if docid.isdigit() else (1, 0, docid)


@dataclass
class EmbeddingStore:
    """Document vectors held at 32-bit precision, with a content digest."""

    ids: list[str]
    vectors: np.ndarray
    levels: tuple[int, ...] = ()
    digest: str = field(default="", compare=False)

    def __post_init__(self):
        self.ids = [str(i) for i in self.ids]
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.size == 0:
            vec = vec.reshape(len(self.ids), vec.shape[-1] if vec.ndim == 2 else 0)
        if vec.ndim != 2 or vec.shape[0] != len(self.ids):
            raise DimensionError(f"{len(self.ids)} ids for a vector block of shape {vec.shape}")
        if len(set(self.ids)) != len(self.ids):
            raise InputFormatError("document ids must be unique")
        if not np.all(np.isfinite(vec)):
            raise InputFormatError("store vectors must be finite")
        self.vectors = vec.astype(F32LE).astype(np.float64)
        d = self.vectors.shape[1]
        levels = tuple(int(m) for m in (self.levels or ((d,) if d else ())))
        if levels and (list(levels) != sorted(set(levels)) or levels[-1] != d or levels[0] < 1):
            raise ConfigError(f"store levels {levels} must be ascending with max = d = {d}")
        self.levels = levels
        computed = self.compute_digest()
        if self.digest and self.digest != computed:
            raise DigestMismatchError("store content does not match its recorded digest")
        self.digest = computed
        self._order = sorted(range(len(self.ids)), key=lambda i: _id_key(self.ids[i]))
        self._rank = np.empty(len(self.ids), dtype=np.int64)
        self._rank[self._order] = np.arange(len(self.ids))

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def compute_digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.array([self.vectors.shape[0], self.vectors.shape[1]], dtype="<u8").tobytes())
        h.update(np.array(self.levels, dtype="<u4").tobytes())
        for i in self.ids:
            b = i.encode("utf-8")
            h.update(len(b).to_bytes(4, "little") + b)
        h.update(np.ascontiguousarray(self.vectors, dtype=F32LE).tobytes())
        return h.hexdigest()


def store_save(store: EmbeddingStore, path) -> str:
    w = Writer()
    w.pack("QI", store.n, store.d)
    w.pack("I", len(store.levels))
    w.pack("I" * len(store.levels), *store.levels)
    for i in store.ids:
        w.string(i)
    w.raw(np.ascontiguousarray(store.vectors, dtype=F32LE).tobytes())
    w.raw(bytes.fromhex(store.digest))
    write_container(path, STORE_MAGIC, STORE_VERSION, w.payload())
    return store.digest


def store_load(path) -> EmbeddingStore:
    r, _ = read_container(path, STORE_MAGIC, STORE_VERSION)
    return _read_store(r)


def _read_store(r: Reader) -> EmbeddingStore:
    n, d = r.unpack("QI")
    (nl,) = r.unpack("I")
    levels = r.unpack("I" * nl)
    ids = [r.string() for _ in range(n)]
    data = np.frombuffer(r.take(4 * n * d), dtype=F32LE).reshape(n, d).astype(np.float64)
    digest = r.take(32).hex()
    if not r.done():
        raise InputFormatError(f"{r.what}: unparsed bytes after store payload")
    return EmbeddingStore(ids, data, tuple(levels), digest)


# --------------------------------------------------------------------------
# search


class PrefixIndex:
    """Per-level unit-normalized document prefixes, built lazily."""

    def __init__(self, store: EmbeddingStore):
        self.store = store
        self._unit: dict[int, np.ndarray] = {}

    def unit(self, m: int) -> np.ndarray:
        if m not in self._unit:
            P = self.store.vectors[:, :m]
            norms = np.linalg.norm(P, axis=1)
            if np.any(norms == 0):
                bad = self.store.ids[int(np.argmin(norms))]
                raise DegenerateInputError(f"document {bad} has a zero-norm prefix at m={m}")
            self._unit[m] = P / norms[:, None]
        return self._unit[m]

    def search(self, q, m: int, topk: int) -> list[tuple[str, float]]:
        store = self.store
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        if not 1 <= m <= store.d:
            raise DimensionError(f"truncation m={m} outside [1, {store.d}]")
        if q.size < m:
            raise DimensionError(f"query has dim {q.size} < m={m}")
        if topk < 1:
            raise ConfigError("topk must be >= 1")
        if store.n == 0:
            return []
        qm = q[:m]
        nq = np.linalg.norm(qm)
        if nq == 0:
            raise DegenerateInputError(f"query has a zero-norm prefix at m={m}")
        scores = np.clip(self.unit(m) @ (qm / nq), -1.0, 1.0)
        order = np.lexsort((store._rank, -scores))[:topk]
        return [(store.ids[i], float(scores[i])) for i in order]


def search(store: EmbeddingStore, q, m: int, topk: int) -> list[tuple[str, float]]:
    """Exact top-k by prefix cosine at ``m``; ties broken by ascending doc id."""
    return PrefixIndex(store).search(q, m, topk)


# --------------------------------------------------------------------------
# metrics


def _gain(rel: int, linear: bool) -> float:
    return float(rel) if linear else 2.0**rel - 1.0


def ndcg_query(ranking: Sequence[str], judged: Mapping[str, int], k: int = 10, linear_gain: bool = False) -> float:
    ideal = sorted((g for g in judged.values() if g > 0), reverse=True)[:k]
    idcg = sum(_gain(g, linear_gain) / math.log2(i + 2) for i, g in enumerate(ideal))
    if idcg == 0:
        raise ValueError("query has no relevant documents")
    dcg = sum(_gain(judged.get(doc, 0), linear_gain) / math.log2(i + 2) for i, doc in enumerate(ranking[:k]))
    return dcg / idcg


def recall_query(ranking: Sequence[str], judged: Mapping[str, int], k: int = 100) -> float:
    relevant = {d for d, g in judged.items() if g > 0}
    if not relevant:
        raise ValueError("query has no relevant documents")
    return len(relevant.intersection(ranking[:k])) / len(relevant)


def _rankings(run: Mapping[str, Sequence]) -> dict[str, list[str]]:
    out = {}
    for qid, items in run.items():
        out[qid] = [it[0] if isinstance(it, (tuple, list)) else it for it in items]
    return out


def _evaluable(qrels: Mapping[str, Mapping[str, int]]) -> list[str]:
    return sorted(q for q, judged in qrels.items() if any(g > 0 for g in judged.values()))


def ndcg_at_k(run, qrels, k: int = 10, linear_gain: bool = False) -> float:
    """Mean nDCG@k over queries with at least one relevant document.

    Judged queries absent from the run score 0.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    ranks = _rankings(run)
    qs = _evaluable(qrels)
    if not qs:
        return 0.0
    return float(np.mean([ndcg_query(ranks.get(q, []), qrels[q], k, linear_gain) for q in qs]))


def recall_at_k(run, qrels, k: int = 100) -> float:
    if k < 1:
        raise ConfigError("k must be >= 1")
    ranks = _rankings(run)
    qs = _evaluable(qrels)
    if not qs:
        return 0.0
    return float(np.mean([recall_query(ranks.get(q, []), qrels[q], k) for q in qs]))


# --------------------------------------------------------------------------
# text formats


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            if line.strip():
                yield no, line.split()


def load_qrels(path) -> Qrels:
    """``qid 0 docid grade`` lines; grades are non-negative integers."""
    qrels: Qrels = {}
    for no, parts in _lines(path):
        if len(parts) != 4:
            raise InputFormatError(f"{path}:{no}: expected 4 fields 'qid 0 docid grade', got {len(parts)}")
        qid, _, docid, grade = parts
        if not grade.isdigit():
            raise InputFormatError(f"{path}:{no}: grade {grade!r} is not a non-negative integer")
        judged = qrels.setdefault(qid, {})
        if docid in judged:
            raise InputFormatError(f"{path}:{no}: duplicate judgment for ({qid}, {docid})")
        judged[docid] = int(grade)
    return qrels


def write_qrels(path, qrels: Qrels) -> None:
    lines = [f"{q} 0 {d} {g}\n" for q in sorted(qrels) for d, g in sorted(qrels[q].items())]
    _atomic_write(path, "".join(lines))


def load_run(path) -> Run:
    """``qid docid rank score tag`` lines; ranks must follow score order."""
    raw: dict[str, list[tuple[int, str, float, int]]] = {}
    for no, parts in _lines(path):
        if len(parts) != 5:
            raise InputFormatError(f"{path}:{no}: expected 5 fields 'qid docid rank score tag', got {len(parts)}")
        qid, docid, rank, score, _tag = parts
        try:
            r = int(rank)
            s = float(score)
        except ValueError:
            raise InputFormatError(f"{path}:{no}: rank must be an integer and score a real") from None
        if r < 1 or not math.isfinite(s):
            raise InputFormatError(f"{path}:{no}: rank must be >= 1 and score finite")
        raw.setdefault(qid, []).append((r, docid, s, no))
    run: Run = {}
    for qid, rows in raw.items():
        rows.sort()
        seen = set()
        prev_score = math.inf
        prev_rank = 0
        for r, docid, s, no in rows:
            if r == prev_rank:
                raise InputFormatError(f"{path}:{no}: duplicate rank {r} for query {qid}")
            if docid in seen:
                raise InputFormatError(f"{path}:{no}: document {docid} listed twice for query {qid}")
            if s > prev_score:
                raise InputFormatError(f"{path}:{no}: score increases with rank for query {qid}")
            seen.add(docid)
            prev_score, prev_rank = s, r
        run[qid] = [(docid, s) for _, docid, s, _ in rows]
    return run


def format_run(run: Run, tag: str = "tmrl") -> str:
    if not tag or any(c.isspace() for c in tag):
        raise ConfigError("run tag must be a non-empty token")
    out = []
    for qid in sorted(run, key=_id_key):
        for rank, (docid, score) in enumerate(run[qid], 1):
            out.append(f"{qid} {docid} {rank} {float(score)!r} {tag}\n")
    return "".join(out)


def write_run(path, run: Run, tag: str = "tmrl") -> None:
    _atomic_write(path, format_run(run, tag))


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# dimension sweep

SWEEP_HEADER = "m,ndcg@10,recall@100,n_queries"


@dataclass(frozen=True)
class LevelResult:
    m: int
    ndcg: float
    recall: float
    n_queries: int
    n_excluded: int
    latency_mean_ms: float
    latency_p50_ms: float
    latency_p95_ms: float


@dataclass
class EvalReport:
    rows: list[LevelResult]
    ndcg_k: int = 10
    recall_k: int = 100
    linear_gain: bool = False

    def to_csv(self) -> str:
        lines = [SWEEP_HEADER]
        lines += [f"{r.m},{r.ndcg!r},{r.recall!r},{r.n_queries}" for r in self.rows]
        return "\n".join(lines) + "\n"

    def header(self) -> str:
        gain = "rel" if self.linear_gain else "2^rel - 1"
        return f"# nDCG@{self.ndcg_k} gain={gain} discount=log2(rank+1); Recall@{self.recall_k}"

    def __str__(self) -> str:
        out = [self.header(), f"{'m':>6} {'nDCG':>8} {'Recall':>8} {'queries':>8} {'excluded':>8} {'ms/q':>8}"]
        for r in self.rows:
            out.append(f"{r.m:>6} {r.ndcg:>8.4f} {r.recall:>8.4f} {r.n_queries:>8} {r.n_excluded:>8} "
                       f"{r.latency_mean_ms:>8.3f}")
        return "\n".join(out)

    def by_level(self) -> dict[int, LevelResult]:
        return {r.m: r for r in self.rows}


def run_queries(store: EmbeddingStore, query_ids: Sequence[str], query_vectors: np.ndarray, m: int, topk: int,
                jobs: int = 1, index: PrefixIndex | None = None) -> tuple[Run, np.ndarray]:
    """Search every query at level ``m``; returns the run and per-query latency (ms)."""
    index = index or PrefixIndex(store)
    index.unit(m)

    def one(i):
        t0 = time.perf_counter()
        res = index.search(query_vectors[i], m, topk)
        return res, (time.perf_counter() - t0) * 1e3

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(one, range(len(query_ids))))
    else:
        results = [one(i) for i in range(len(query_ids))]
    run = {q: r for q, (r, _) in zip(query_ids, results)}
    return run, np.array([t for _, t in results])


def matryoshka_sweep(store: EmbeddingStore, query_ids: Sequence[str], query_vectors, qrels: Qrels,
                     M: Sequence[int] | None = None, ndcg_k: int = 10, recall_k: int = 100,
                     linear_gain: bool = False, jobs: int = 1) -> EvalReport:
    """Search and score at every truncation level in ``M``."""
    M = tuple(M) if M else store.levels
    missing = [m for m in M if m not in store.levels]
    if missing:
        raise ConfigError(f"levels {missing} are not declared by the store {store.levels}")
    Q = np.asarray(query_vectors, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[0] != len(query_ids):
        raise DimensionError("one query vector per query id required")
    index = PrefixIndex(store)
    judged = _evaluable(qrels)
    excluded = len(set(qrels) - set(judged))
    rows = []
    for m in M:
        run, lat = run_queries(store, query_ids, Q, m, max(ndcg_k, recall_k), jobs, index)
        rows.append(LevelResult(
            m=m,
            ndcg=ndcg_at_k(run, qrels, ndcg_k, linear_gain),
            recall=recall_at_k(run, qrels, recall_k),
            n_queries=len(judged),
            n_excluded=excluded,
            latency_mean_ms=float(lat.mean()) if lat.size else 0.0,
            latency_p50_ms=float(np.percentile(lat, 50)) if lat.size else 0.0,
            latency_p95_ms=float(np.percentile(lat, 95)) if lat.size else 0.0,
        ))
    return EvalReport(rows, ndcg_k, recall_k, linear_gain)

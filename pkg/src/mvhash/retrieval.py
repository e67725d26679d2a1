"""Bit-packed Hamming search over binary codes and ranking-quality metrics.

Codes are +/-1 vectors packed into uint8 words (bit 1 encodes +1).
Search is a full linear scan with table-driven popcount; corpora in the
hundreds of thousands scan in milliseconds, so no probing structure is
needed. Relevance between a query and a corpus item means their multi-hot
labels share at least one category.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import ShapeError

__all__ = [
    "HashCode",
    "HammingIndex",
    "EvalReport",
    "pack_code",
    "unpack_code",
    "hamming_distance",
    "build_index",
    "search",
    "average_precision",
    "evaluate",
    "write_report_csv",
]

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint16)


@dataclass(frozen=True)
class HashCode:
    k: int
    words: bytes  # packed bits, big-endian within each byte; pad bits are 0

    def __post_init__(self):
        if len(self.words) != (self.k + 7) // 8:
            raise ShapeError(f"{len(self.words)} bytes cannot hold {self.k} bits")


def pack_code(bits) -> HashCode:
    """Pack a +/-1 vector into a HashCode."""
    bits = np.asarray(bits)
    if bits.ndim != 1:
        raise ShapeError("expected a 1-D +/-1 vector")
    return HashCode(k=bits.shape[0], words=np.packbits(bits > 0).tobytes())


def unpack_code(code: HashCode) -> np.ndarray:
    """Inverse of pack_code; returns an int8 +/-1 vector."""
    bits = np.unpackbits(np.frombuffer(code.words, dtype=np.uint8))[: code.k]
    return np.where(bits > 0, 1, -1).astype(np.int8)


def hamming_distance(a: HashCode, b: HashCode) -> int:
    """Number of differing bits; pad bits cancel under XOR."""
    if a.k != b.k:
        raise ShapeError(f"code lengths differ: {a.k} vs {b.k}")
    x = np.frombuffer(a.words, dtype=np.uint8) ^ np.frombuffer(b.words, dtype=np.uint8)
    return int(_POPCOUNT[x].sum())


@dataclass
class HammingIndex:
    k: int
    packed: np.ndarray  # (N, words) uint8
    ids: list
    labels: np.ndarray  # (N, C)


def build_index(codes, ids, labels) -> HammingIndex:
    """Build an index from aligned +/-1 code rows, ids, and multi-hot labels."""
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ShapeError("codes must be a (N, K) +/-1 array")
    if not (len(ids) == codes.shape[0] == len(labels)):
        raise ShapeError("codes, ids, and labels must be aligned")
    packed = np.packbits(codes > 0, axis=1)
    return HammingIndex(k=codes.shape[1], packed=packed, ids=list(ids),
                        labels=np.asarray(labels, dtype=np.int8))


def _distances(index: HammingIndex, query: HashCode) -> np.ndarray:
    q = np.frombuffer(query.words, dtype=np.uint8)
    return _POPCOUNT[index.packed ^ q[None, :]].sum(axis=1)


def search(index: HammingIndex, query: HashCode, k: int):
    """Ids of the k nearest codes; ties break by ascending insertion position."""
    if not index.ids:
        raise RuntimeError("index is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    if query.k != index.k:
        raise ShapeError(f"query has {query.k} bits, index stores {index.k}")
    order = np.argsort(_distances(index, query), kind="stable")
    return [index.ids[i] for i in order[: min(k, len(index.ids))]]


def average_precision(ranked_relevance, total_relevant: int, cutoff=None) -> float:
    """Mean of precision@p over relevant positions in the ranking.

    For a truncated ranking pass cutoff=K; the divisor becomes
    min(total_relevant, K). Returns 0 when nothing is relevant.
    """
    rel = np.asarray(ranked_relevance, dtype=np.float64)
    if total_relevant < 0:
        raise ValueError("total_relevant must be >= 0")
    if cutoff is not None:
        rel = rel[:cutoff]
        denom = min(total_relevant, cutoff)
    else:
        denom = total_relevant
    if denom == 0:
        return 0.0
    hits = np.cumsum(rel)
    precision_at = hits / np.arange(1, rel.size + 1)
    return float((precision_at * rel).sum() / denom)


@dataclass
class EvalReport:
    map: float
    cutoffs: list
    map_at_k: list
    recall_at_k: list
    per_query_ap: list
    config: dict = field(default_factory=dict)


def evaluate(query_codes, query_ids, query_labels, index: HammingIndex,
             cutoffs=(), config=None) -> EvalReport:
    """Full-ranking mAP plus mAP@K / Recall@K at each cutoff.

    A query present in the corpus (matching id) is excluded from its own
    ranking. Deterministic: distance ties resolve by corpus position.
    """
    query_codes = np.asarray(query_codes)
    if query_codes.shape[0] == 0:
        raise ValueError("empty query split")
    cutoffs = sorted(int(c) for c in cutoffs)
    query_labels = np.asarray(query_labels, dtype=np.float64)
    corpus_labels = index.labels.astype(np.float64)

    aps = []
    ap_at = np.zeros(len(cutoffs))
    rec_at = np.zeros(len(cutoffs))
    for qi in range(query_codes.shape[0]):
        code = pack_code(query_codes[qi])
        dist = _distances(index, code).astype(np.float64)
        keep = np.array([cid != query_ids[qi] for cid in index.ids])
        order = np.argsort(dist[keep], kind="stable")
        rel = (corpus_labels[keep] @ query_labels[qi] > 0).astype(np.float64)[order]
        total = int(rel.sum())
        aps.append(average_precision(rel, total))
        for ci, c in enumerate(cutoffs):
            ap_at[ci] += average_precision(rel, total, cutoff=c)
            rec_at[ci] += (rel[:c].sum() / total) if total else 0.0

    nq = len(aps)
    return EvalReport(
        map=float(np.mean(aps)),
        cutoffs=list(cutoffs),
        map_at_k=[float(x / nq) for x in ap_at],
        recall_at_k=[float(x / nq) for x in rec_at],
        per_query_ap=[float(a) for a in aps],
        config=dict(config or {}),
    )


def write_report_csv(report: EvalReport, path) -> None:
    """One row per cutoff, with the full-ranking mAP echoed on each row."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cutoff", "map_at_k", "recall_at_k", "map_full"])
        for c, m, r in zip(report.cutoffs, report.map_at_k, report.recall_at_k):
            writer.writerow([c, f"{m:.6f}", f"{r:.6f}", f"{report.map:.6f}"])
        if not report.cutoffs:
            writer.writerow(["", "", "", f"{report.map:.6f}"])


def format_summary(report: EvalReport) -> str:
    lines = [f"mAP (full ranking): {report.map:.4f}"]
    for c, m, r in zip(report.cutoffs, report.map_at_k, report.recall_at_k):
        lines.append(f"  @{c:<5d} mAP {m:.4f}  recall {r:.4f}")
    return "\n".join(lines)

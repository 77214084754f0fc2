"""Exact cross-video nearest-neighbour mining in pose-embedding space.

For a query frame, the positive is the closest embedding (Euclidean) among all
frames of *other* videos. Ties go to the smallest (video ordinal, frame_id),
then the smallest original row id; video ordinals follow sorted video ids.

Search is blocked brute force: squared distances for a block of queries come
from one matrix product, then every candidate that could be within rounding
of the cut-off is re-scored with the canonical difference-based distance. The
reported results depend only on the canonical distances, so they are identical
for any block size, thread count or BLAS build.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .embed import EmbeddingStore

log = logging.getLogger(__name__)

BLOCK_QUERIES = 256
# relative slack on approximate squared distances before exact re-scoring
_REFINE_RTOL = 1e-9


class MiningError(ValueError):
    pass


def squared_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Canonical squared Euclidean distance between rows of ``a`` and ``b``.

    Accumulates coordinates left to right so every caller gets bit-identical
    values for the same pair of rows.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = a - b
    acc = np.zeros(diff.shape[:-1])
    for j in range(diff.shape[-1]):
        acc += diff[..., j] * diff[..., j]
    return acc


class MiningIndex:
    """Immutable embedding index grouped contiguously by video."""

    def __init__(self, store: EmbeddingStore):
        if len(store) == 0:
            raise MiningError("cannot index an empty embedding store")
        self.store = store
        names = sorted(set(store.video_ids))
        self.video_names = names
        ordinal = {v: i for i, v in enumerate(names)}
        vid = np.array([ordinal[v] for v in store.video_ids], dtype=np.int64)
        frames = store.frame_ids.astype(np.uint64)
        rows = np.arange(len(store), dtype=np.int64)
        perm = np.lexsort((rows, frames, vid))
        self.perm = perm                       # sorted position -> original row
        self.inv_perm = np.empty_like(perm)
        self.inv_perm[perm] = np.arange(len(perm))
        self.video_of = vid                    # original row -> video ordinal
        self._svid = vid[perm]
        counts = np.bincount(self._svid, minlength=len(names))
        self.video_offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self._x = store.rows.astype(np.float64)[perm]
        self._x.setflags(write=False)
        self._sq = np.einsum("ij,ij->i", self._x, self._x)

    def __len__(self) -> int:
        return self._x.shape[0]

    @property
    def n_videos(self) -> int:
        return len(self.video_names)

    def group(self, video_ordinal: int) -> np.ndarray:
        """Original row ids of one video, in tie-break order."""
        lo, hi = self.video_offsets[video_ordinal], self.video_offsets[video_ordinal + 1]
        return self.perm[lo:hi]

    def cross_video_count(self, row: int) -> int:
        v = self.video_of[row]
        return len(self) - int(self.video_offsets[v + 1] - self.video_offsets[v])

    def _search_block(self, positions: np.ndarray, k: int):
        """Top-k cross-video neighbours for sorted positions; returns (pos, d2) lists."""
        xq = self._x[positions]
        sqq = self._sq[positions]
        approx = sqq[:, None] + self._sq[None, :] - 2.0 * (xq @ self._x.T)
        np.maximum(approx, 0.0, out=approx)
        qv = self._svid[positions]
        lo = self.video_offsets[qv]
        hi = self.video_offsets[qv + 1]
        cols = np.arange(len(self))
        same = (cols[None, :] >= lo[:, None]) & (cols[None, :] < hi[:, None])
        approx[same] = np.inf

        n = approx.shape[1]
        if k <= n:
            kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
        else:
            kth = np.full(len(positions), np.inf)
        # rows with fewer than k candidates get kth == inf and keep them all
        slack = _REFINE_RTOL * (sqq + self._sq.max()) + 1e-300
        thr = kth + slack
        mask = (approx <= thr[:, None]) & ~same
        r, c = np.nonzero(mask)
        d2 = squared_distance(self._x[c], xq[r])
        order = np.lexsort((c, d2, r))
        r, c, d2 = r[order], c[order], d2[order]
        starts = np.searchsorted(r, np.arange(len(positions)))
        ends = np.searchsorted(r, np.arange(len(positions)), side="right")
        out_pos, out_d2 = [], []
        for i in range(len(positions)):
            s, e = starts[i], min(ends[i], starts[i] + k)
            out_pos.append(c[s:e])
            out_d2.append(d2[s:e])
        return out_pos, out_d2

    def search(self, rows, k: int, threads: int = 1, block: int = BLOCK_QUERIES):
        """Top-k for many original rows; returns lists of (row ids, distances)."""
        if k < 1:
            raise ValueError("K must be >= 1")
        rows = np.asarray(rows, dtype=np.int64)
        positions = self.inv_perm[rows]
        chunks = [positions[i:i + block] for i in range(0, len(positions), block)]

        def run(chunk):
            return self._search_block(chunk, k)

        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(run, chunks))
        else:
            results = [run(ch) for ch in chunks]
        ids, dists = [], []
        for pos_lists, d2_lists in results:
            for p, d2 in zip(pos_lists, d2_lists):
                ids.append(self.perm[p])
                dists.append(np.sqrt(d2))
        return ids, dists


def build_index(store: EmbeddingStore) -> MiningIndex:
    return MiningIndex(store)


def mine_positive(index: MiningIndex, query_row: int) -> tuple[int, float]:
    """Closest cross-video row to ``query_row`` and its distance."""
    if index.cross_video_count(query_row) == 0:
        raise MiningError("no cross-video candidates")
    ids, dists = index.search([query_row], 1)
    return int(ids[0][0]), float(dists[0][0])


@dataclass(frozen=True)
class TopK:
    rows: np.ndarray
    distances: np.ndarray
    short: bool  # fewer than K cross-video candidates existed

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(zip(self.rows.tolist(), self.distances.tolist()))


def topk(index: MiningIndex, query_row: int, k: int) -> TopK:
    """K nearest cross-video rows, by non-decreasing distance."""
    if k < 1:
        raise ValueError("K must be >= 1")
    if index.cross_video_count(query_row) == 0:
        raise MiningError("no cross-video candidates")
    ids, dists = index.search([query_row], k)
    return TopK(ids[0], dists[0], len(ids[0]) < k)


@dataclass
class PairTable:
    """query row -> (positive row, distance); rows index the mined store."""

    query: np.ndarray
    positive: np.ndarray
    distance: np.ndarray
    rank: int = 1

    def __len__(self) -> int:
        return len(self.query)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PairTable):
            return NotImplemented
        return (
            self.rank == other.rank
            and np.array_equal(self.query, other.query)
            and np.array_equal(self.positive, other.positive)
            and self.distance.tobytes() == other.distance.tobytes()
        )

    def positive_of(self, n_rows: int) -> np.ndarray:
        out = np.full(n_rows, -1, dtype=np.int64)
        out[self.query] = self.positive
        return out


def mine_ranked(index: MiningIndex, rank: int = 1, threads: int = 1) -> PairTable:
    """Pair every row with its ``rank``-th cross-video neighbour.

    Rows with fewer than ``rank`` candidates get their last available one.
    """
    if index.n_videos < 2:
        raise MiningError("mining needs at least two videos")
    rows = np.arange(len(index), dtype=np.int64)
    ids, dists = index.search(rows, rank, threads=threads)
    pos = np.array([r[-1] for r in ids], dtype=np.int64)
    dist = np.array([d[-1] for d in dists], dtype=np.float64)
    return PairTable(rows, pos, dist, rank)


def mine_all(index: MiningIndex, threads: int = 1) -> PairTable:
    """Top-1 cross-video positive for every row."""
    return mine_ranked(index, 1, threads=threads)


def write_pairs(table: PairTable, store: EmbeddingStore, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q, p, d in zip(table.query.tolist(), table.positive.tolist(), table.distance.tolist()):
            obj = {
                "query_video_id": store.video_ids[q],
                "query_frame_id": int(store.frame_ids[q]),
                "pos_video_id": store.video_ids[p],
                "pos_frame_id": int(store.frame_ids[p]),
                "distance": d,
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def write_topk(results, store: EmbeddingStore, path_or_fh) -> None:
    """``results``: iterable of (query row, TopK)."""
    own = isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__")
    fh = open(path_or_fh, "w", encoding="utf-8", newline="\n") if own else path_or_fh
    try:
        for q, tk in results:
            for rank, (p, d) in enumerate(tk, start=1):
                obj = {
                    "query_video_id": store.video_ids[q],
                    "query_frame_id": int(store.frame_ids[q]),
                    "pos_video_id": store.video_ids[p],
                    "pos_frame_id": int(store.frame_ids[p]),
                    "distance": d,
                    "rank": rank,
                }
                fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
    finally:
        if own:
            fh.close()


def read_pairs(path, store: EmbeddingStore) -> PairTable:
    """Load a pair file, resolving (video_id, frame_id) against ``store``."""
    lookup: dict[tuple[str, int], int] = {}
    for i, (v, f) in enumerate(zip(store.video_ids, store.frame_ids.tolist())):
        if (v, f) in lookup:
            raise MiningError(f"ambiguous row key {(v, f)} in embedding store")
        lookup[(v, f)] = i
    q, p, d = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            try:
                q.append(lookup[(obj["query_video_id"], int(obj["query_frame_id"]))])
                p.append(lookup[(obj["pos_video_id"], int(obj["pos_frame_id"]))])
            except KeyError as err:
                raise MiningError(f"line {lineno}: unknown row {err}") from None
            d.append(float(obj["distance"]))
    return PairTable(np.array(q, dtype=np.int64), np.array(p, dtype=np.int64),
                     np.array(d, dtype=np.float64))

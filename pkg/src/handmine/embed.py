"""PCA pose embeddings of flattened 2D keypoints, and the binary embedding cache."""

from __future__ import annotations

import json
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .records import NUM_JOINTS, KeypointRecord, RecordSet

FLAT_DIM = 2 * NUM_JOINTS
DEFAULT_DIM = 14
# fixed shard length so the covariance reduction tree does not depend on thread count
SHARD_ROWS = 32768

CACHE_MAGIC = b"SIMH"
CACHE_VERSION = 1


class CacheError(ValueError):
    pass


def flatten(record: KeypointRecord | np.ndarray) -> np.ndarray:
    """[x1, y1, x2, y2, ..., x21, y21] in joint order."""
    if isinstance(record, KeypointRecord):
        kp = record.to_array()
    else:
        kp = np.asarray(record, dtype=np.float64)
    return kp.reshape(*kp.shape[:-2], FLAT_DIM)


def unflatten(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    return vec.reshape(*vec.shape[:-1], NUM_JOINTS, 2)


def flatten_set(rs: RecordSet) -> np.ndarray:
    return rs.keypoint_array().reshape(len(rs), FLAT_DIM)


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray                # (42,)
    projection: np.ndarray          # (42, D), orthonormal columns
    explained_variance: np.ndarray  # (D,), non-increasing
    centered: bool = True

    @property
    def dim(self) -> int:
        return self.projection.shape[1]

    def to_dict(self) -> dict:
        return {
            "D": self.dim,
            "centered": self.centered,
            "mean": self.mean.tolist(),
            "projection": self.projection.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PcaModel":
        proj = np.array(obj["projection"], dtype=np.float64)
        if proj.shape != (FLAT_DIM, obj["D"]):
            raise ValueError(f"projection shape {proj.shape} does not match D={obj['D']}")
        return cls(
            np.array(obj["mean"], dtype=np.float64),
            proj,
            np.array(obj["explained_variance"], dtype=np.float64),
            bool(obj.get("centered", True)),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PcaModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _shard_moments(x: np.ndarray):
    n = x.shape[0]
    mu = x.mean(axis=0)
    xc = x - mu
    return n, mu, xc.T @ xc


def _merge_moments(a, b):
    # Chan et al. pairwise update of (count, mean, scatter)
    na, ma, sa = a
    nb, mb, sb = b
    n = na + nb
    delta = mb - ma
    mean = ma + delta * (nb / n)
    scatter = sa + sb + np.outer(delta, delta) * (na * nb / n)
    return n, mean, scatter


def _tree_reduce(parts):
    while len(parts) > 1:
        nxt = [_merge_moments(parts[i], parts[i + 1]) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def mean_and_covariance(x: np.ndarray, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and covariance (n - 1 denominator), sharded and tree-reduced."""
    x = np.asarray(x, dtype=np.float64)
    shards = [x[i:i + SHARD_ROWS] for i in range(0, x.shape[0], SHARD_ROWS)]
    if threads > 1 and len(shards) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(_shard_moments, shards))
    else:
        parts = [_shard_moments(s) for s in shards]
    n, mean, scatter = _tree_reduce(parts)
    denom = max(n - 1, 1)
    return mean, scatter / denom


def fit_pca(
    vectors,
    dim: int = DEFAULT_DIM,
    center: bool = True,
    subsample: int | None = None,
    seed: int = 0,
    threads: int = 1,
) -> PcaModel:
    """Fit a D-dimensional PCA on 42-dim keypoint vectors.

    Parameters
    ----------
    vectors : array_like of shape (n, 42)
    dim : int
        Number of principal directions kept (1 <= dim <= min(42, n)).
    center : bool
        Whether :func:`project` subtracts the mean. The fit itself always
        uses the centered covariance.
    subsample : int, optional
        Fit on a seeded uniform subsample of this many rows.

    Returns
    -------
    PcaModel
        Columns of ``projection`` are eigenvectors of the covariance, ordered
        by decreasing variance, each with its largest-magnitude entry positive.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != FLAT_DIM:
        raise ValueError(f"expected an (n, {FLAT_DIM}) array, got shape {x.shape}")
    if not 1 <= dim <= FLAT_DIM:
        raise ValueError(f"D must be in [1, {FLAT_DIM}], got {dim}")
    if dim > x.shape[0]:
        raise ValueError(f"D={dim} exceeds the number of vectors ({x.shape[0]})")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in PCA input")
    if subsample is not None and subsample < x.shape[0]:
        idx = np.sort(np.random.default_rng(seed).choice(x.shape[0], subsample, replace=False))
        x = x[idx]

    mean, cov = mean_and_covariance(x, threads=threads)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:dim]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]

    signs = np.sign(evecs[np.argmax(np.abs(evecs), axis=0), np.arange(dim)])
    signs[signs == 0] = 1.0
    evecs = evecs * signs

    scale = max(float(np.trace(cov)), 1e-300)
    rank_tol = 1e-12 * scale
    if np.any(evals <= rank_tol):
        warnings.warn(
            f"data rank is below D={dim}; trailing components carry zero variance",
            stacklevel=2,
        )
        evals = np.where(evals <= rank_tol, 0.0, evals)
    return PcaModel(mean, np.ascontiguousarray(evecs), evals, center)


def project(model: PcaModel, v) -> np.ndarray:
    """Pose embedding M^T (v - mean); works on one vector or a batch of rows."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != FLAT_DIM:
        raise ValueError(f"expected trailing dimension {FLAT_DIM}, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite input to project")
    if model.centered:
        v = v - model.mean
    return v @ model.projection


def reconstruct(model: PcaModel, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    out = p @ model.projection.T
    return out + model.mean if model.centered else out


@dataclass
class EmbeddingStore:
    rows: np.ndarray          # (count, D) float32
    video_ids: list[str]
    frame_ids: np.ndarray     # (count,) uint64

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        self.frame_ids = np.asarray(self.frame_ids, dtype=np.uint64)
        self.video_ids = [str(v) for v in self.video_ids]
        if self.rows.ndim != 2:
            raise ValueError("rows must be a 2D array")
        if not (len(self.video_ids) == len(self.frame_ids) == self.rows.shape[0]):
            raise ValueError("row metadata does not align with rows")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("non-finite embedding rows")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (
            self.rows.shape == other.rows.shape
            and self.rows.tobytes() == other.rows.tobytes()
            and self.video_ids == other.video_ids
            and np.array_equal(self.frame_ids, other.frame_ids)
        )


def embed_records(model: PcaModel, rs: RecordSet, threads: int = 1) -> EmbeddingStore:
    x = flatten_set(rs)
    if threads > 1 and len(x) > SHARD_ROWS:
        chunks = [x[i:i + SHARD_ROWS] for i in range(0, len(x), SHARD_ROWS)]
        with ThreadPoolExecutor(threads) as pool:
            rows = np.concatenate(list(pool.map(lambda c: project(model, c), chunks)))
    else:
        rows = project(model, x) if len(x) else np.zeros((0, model.dim))
    return EmbeddingStore(
        rows,
        [r.video_id for r in rs.records],
        np.array([r.frame_id for r in rs.records], dtype=np.uint64),
    )


_HEADER = struct.Struct("<4sIIQ")
_LEN = struct.Struct("<I")
_FRAME = struct.Struct("<Q")


def save_cache(store: EmbeddingStore, path) -> None:
    """Write the little-endian ``SIMH`` cache: header, float32 rows, metadata."""
    parts = [_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, store.dim, len(store))]
    parts.append(store.rows.astype("<f4", copy=False).tobytes())
    encoded = {}
    for vid, fid in zip(store.video_ids, store.frame_ids.tolist()):
        b = encoded.get(vid)
        if b is None:
            raw = vid.encode("utf-8")
            b = encoded[vid] = _LEN.pack(len(raw)) + raw
        parts.append(b)
        parts.append(_FRAME.pack(fid))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_cache(path, expected_dim: int | None = None) -> EmbeddingStore:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != CACHE_MAGIC:
        raise CacheError("bad magic")
    if len(data) < _HEADER.size:
        raise CacheError("truncated header")
    _, version, dim, count = _HEADER.unpack_from(data, 0)
    if version != CACHE_VERSION:
        raise CacheError(f"unsupported cache version {version}")
    if expected_dim is not None and dim != expected_dim:
        raise CacheError(f"dim mismatch: file has D={dim}, expected {expected_dim}")
    off = _HEADER.size
    nbytes = count * dim * 4
    if len(data) < off + nbytes:
        raise CacheError("truncated row block")
    rows = np.frombuffer(data, dtype="<f4", count=count * dim, offset=off).reshape(count, dim)
    off += nbytes
    video_ids: list[str] = []
    frame_ids = np.empty(count, dtype=np.uint64)
    decoded: dict[bytes, str] = {}
    try:
        for i in range(count):
            (n,) = _LEN.unpack_from(data, off)
            off += 4
            raw = data[off:off + n]
            if len(raw) != n:
                raise CacheError("truncated metadata block")
            off += n
            vid = decoded.get(raw)
            if vid is None:
                vid = decoded[raw] = raw.decode("utf-8")
            video_ids.append(vid)
            (frame_ids[i],) = _FRAME.unpack_from(data, off)
            off += 8
    except struct.error:
        raise CacheError("truncated metadata block") from None
    if off != len(data):
        raise CacheError(f"{len(data) - off} trailing bytes after metadata")
    return EmbeddingStore(rows.astype(np.float32), video_ids, frame_ids)

"""
Acoustic unit discovery: k-means over feature frames and frame-wise unit assignment.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import ContainerFormatError, DomainError

logger = logging.getLogger(__name__)

CLUSTER_MAGIC = b"UGPK"
CLUSTER_VERSION = 1
_CLUSTER_HEADER = struct.Struct("<4sIIIH")
_CLUSTER_TRAILER = struct.Struct("<Qd")

MFCC_TAG = "mfcc"
DEFAULT_MAX_FRAMES = 200_000


def encoder_layer_tag(index: int) -> str:
    return f"encoder_layer({index})"


def parse_source_tag(tag: str) -> Optional[int]:
    """Layer index of an ``encoder_layer(i)`` tag, None for ``mfcc``."""
    if tag == MFCC_TAG:
        return None
    if tag.startswith("encoder_layer(") and tag.endswith(")"):
        return int(tag[len("encoder_layer("):-1])
    raise DomainError(f"unknown cluster source tag {tag!r}")


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray
    source_tag: str
    seed: int
    inertia: float
    inertia_history: List[float] = field(default_factory=list, compare=False)

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.centroids.shape[1])


@dataclass(frozen=True)
class UnitSequence:
    units: np.ndarray
    k: int

    def __post_init__(self):
        units = np.asarray(self.units, dtype=np.int64)
        if units.ndim != 1:
            raise DomainError("unit sequences are one-dimensional")
        if len(units) and (units.min() < 0 or units.max() >= self.k):
            raise DomainError(f"unit ids must lie in [0, {self.k})")
        object.__setattr__(self, "units", units)

    def __len__(self) -> int:
        return len(self.units)

    def tolist(self) -> List[int]:
        return self.units.tolist()


def _check_frames(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] < 1:
        raise DomainError(f"frames must be an N x D matrix with D >= 1, got shape {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise DomainError("frames contain non-finite values")
    return frames


def _nearest(frames: np.ndarray, centroids: np.ndarray):
    d2 = cdist(frames, centroids, metric="sqeuclidean")
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(frames)), labels]


def kmeans_plusplus(frames: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new centroid drawn with probability proportional to D^2."""
    n = len(frames)
    centroids = np.empty((k, frames.shape[1]), dtype=np.float64)
    centroids[0] = frames[rng.integers(n)]
    closest = cdist(frames, centroids[:1], metric="sqeuclidean")[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point already coincides with a centroid
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centroids[c] = frames[idx]
        closest = np.minimum(closest, cdist(frames, centroids[c:c + 1], metric="sqeuclidean")[:, 0])
    return centroids


def _update_centroids(frames: np.ndarray, labels: np.ndarray, dist: np.ndarray,
                      centroids: np.ndarray) -> np.ndarray:
    k = len(centroids)
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros_like(centroids)
    np.add.at(sums, labels, frames)
    new = centroids.copy()
    filled = counts > 0
    new[filled] = sums[filled] / counts[filled, None]
    empty = np.flatnonzero(~filled)
    if len(empty):
        # re-seed each empty cluster to the frame farthest from its centroid
        order = np.argsort(-dist, kind="stable")
        for c, idx in zip(empty, order):
            new[c] = frames[idx]
        logger.debug("re-seeded %d empty clusters", len(empty))
    return new


def kmeans_fit(frames: np.ndarray, k: int, seed: int, max_iters: int = 100, rel_tol: float = 1e-4,
               source_tag: str = MFCC_TAG, max_frames: int = DEFAULT_MAX_FRAMES,
               init_centroids: Optional[np.ndarray] = None) -> ClusterModel:
    """
    Lloyd's algorithm with k-means++ initialization.

    Args:
        frames: N x D training frames
        k: Number of clusters
        seed: Seed of the generator used for subsampling and k-means++
        max_iters: Maximum number of Lloyd iterations
        rel_tol: Stop when the relative inertia improvement drops below this
        source_tag: ``mfcc`` or ``encoder_layer(i)``
        max_frames: Uniform subsampling cap applied before fitting
        init_centroids: Optional fixed k x D initial centroids (skips k-means++)

    Returns:
        Fitted ClusterModel; ``inertia`` is the sum of squared distances of the
        fitted frames to their nearest centroid

    Raises:
        DomainError: N < k, k < 1, a seed outside [0, 2**64), non-finite frames, or malformed
            init_centroids
    """
    frames = _check_frames(frames)
    if k < 1:
        raise DomainError("k must be >= 1")
    if len(frames) < k:
        raise DomainError(f"need at least k={k} frames, got {len(frames)}")
    if not 0 <= seed < 2**64:
        raise DomainError(f"seed {seed} is not an unsigned 64-bit integer")
    parse_source_tag(source_tag)

    rng = np.random.default_rng(seed)
    if len(frames) > max_frames:
        keep = np.sort(rng.choice(len(frames), size=max_frames, replace=False))
        frames = frames[keep]
        logger.info("subsampled %d frames for k-means fitting", max_frames)

    if init_centroids is not None:
        centroids = np.array(init_centroids, dtype=np.float64)
        if centroids.shape != (k, frames.shape[1]) or not np.all(np.isfinite(centroids)):
            raise DomainError(f"init_centroids must be a finite {k} x {frames.shape[1]} matrix")
    else:
        centroids = kmeans_plusplus(frames, k, rng)

    labels, dist = _nearest(frames, centroids)
    inertia = float(dist.sum())
    history = [inertia]
    for iteration in range(max_iters):
        centroids = _update_centroids(frames, labels, dist, centroids)
        labels, dist = _nearest(frames, centroids)
        new_inertia = float(dist.sum())
        history.append(new_inertia)
        improvement = (inertia - new_inertia) / inertia if inertia > 0 else 0.0
        inertia = new_inertia
        if improvement < rel_tol:
            break

    # centroids persist as f32; round now so a reloaded model assigns identically
    centroids = centroids.astype(np.float32).astype(np.float64)
    inertia = inertia_of(frames, ClusterModel(centroids, source_tag, seed, 0.0))
    logger.info("k-means k=%d on %d x %d frames: %d iterations, inertia %.6g",
                k, frames.shape[0], frames.shape[1], len(history) - 1, inertia)
    return ClusterModel(centroids=centroids, source_tag=source_tag, seed=seed,
                        inertia=inertia, inertia_history=history)


def assign_units(frames: np.ndarray, model: ClusterModel) -> UnitSequence:
    """
    Map each frame to its nearest centroid (Euclidean; ties go to the lowest index).

    Raises:
        DomainError: Frame dimension differs from the model's
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or (len(frames) and frames.shape[1] != model.feature_dim):
        raise DomainError(f"frames have shape {frames.shape}, model expects dim {model.feature_dim}")
    if len(frames) == 0:
        return UnitSequence(np.zeros(0, dtype=np.int64), model.k)
    labels, _ = _nearest(frames, model.centroids)
    return UnitSequence(labels, model.k)


def inertia_of(frames: np.ndarray, model: ClusterModel) -> float:
    _, dist = _nearest(np.asarray(frames, dtype=np.float64), model.centroids)
    return float(dist.sum())


def run_lengths(z: UnitSequence) -> np.ndarray:
    units = z.units
    if len(units) == 0:
        return np.zeros(0, dtype=np.int64)
    starts = np.flatnonzero(np.concatenate([[True], units[1:] != units[:-1]]))
    return np.diff(np.concatenate([starts, [len(units)]]))


def collapse_runs(z: UnitSequence) -> UnitSequence:
    """Merge consecutive identical units: [7,7,7,2,2,7] -> [7,2,7]."""
    units = z.units
    if len(units) == 0:
        return UnitSequence(units, z.k)
    keep = np.concatenate([[True], units[1:] != units[:-1]])
    return UnitSequence(units[keep], z.k)


def expand_runs(z: UnitSequence, lengths: Sequence[int]) -> UnitSequence:
    if len(lengths) != len(z):
        raise DomainError("need one run length per unit")
    return UnitSequence(np.repeat(z.units, np.asarray(lengths, dtype=np.int64)), z.k)


def save_cluster_model(path: Union[str, Path], model: ClusterModel) -> None:
    """Write magic UGPK, version, k, D, source tag, seed, inertia, then k x D f32 centroids."""
    tag = model.source_tag.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CLUSTER_HEADER.pack(CLUSTER_MAGIC, CLUSTER_VERSION, model.k, model.feature_dim, len(tag)))
        fh.write(tag)
        fh.write(_CLUSTER_TRAILER.pack(model.seed, model.inertia))
        fh.write(np.ascontiguousarray(model.centroids, dtype="<f4").tobytes())


def load_cluster_model(path: Union[str, Path]) -> ClusterModel:
    """
    Read a UGPK cluster model. Centroids are stored at 32-bit precision.

    Raises:
        ContainerFormatError: Bad magic, unsupported version or truncated payload
    """
    raw = Path(path).read_bytes()
    if len(raw) < _CLUSTER_HEADER.size:
        raise ContainerFormatError(f"{path}: truncated cluster header")
    magic, version, k, dim, tag_len = _CLUSTER_HEADER.unpack_from(raw)
    if magic != CLUSTER_MAGIC:
        raise ContainerFormatError(f"{path}: bad magic {magic!r}")
    if version != CLUSTER_VERSION:
        raise ContainerFormatError(f"{path}: unsupported cluster container version {version}")
    offset = _CLUSTER_HEADER.size
    tag = raw[offset:offset + tag_len].decode("utf-8")
    offset += tag_len
    if len(raw) != offset + _CLUSTER_TRAILER.size + 4 * k * dim:
        raise ContainerFormatError(f"{path}: truncated or oversized cluster payload")
    seed, inertia = _CLUSTER_TRAILER.unpack_from(raw, offset)
    offset += _CLUSTER_TRAILER.size
    centroids = np.frombuffer(raw[offset:], dtype="<f4").reshape(k, dim).astype(np.float64)
    return ClusterModel(centroids=centroids, source_tag=tag, seed=seed, inertia=inertia)

"""
Codebooks, nearest-code lookup and k-means initialization.
"""

from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from src.autodiff.nn import Module, Parameter
from src.autodiff.tensor import get_dtype
from src.models.base import ShapeError, ValidationError
from src.utils.logging import get_logger

logger = get_logger(__name__)

_CHUNK = 4096


class Codebook(Module):
    """
    ``K`` learnable code vectors of dimension ``D``.

    When ``pin_zero`` is set, entry 0 is the zero vector and stays there through
    training (``enforce_pins`` after every optimizer step).
    """

    def __init__(self, size: int, dim: int, rng: np.random.Generator, pin_zero: bool = False):
        if size < 2:
            raise ValidationError("a codebook needs at least 2 entries", "size")
        self.weight = Parameter(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(size, dim)).astype(get_dtype()))
        self.pin_zero = pin_zero
        self.enforce_pins()

    @property
    def size(self) -> int:
        return int(self.weight.shape[0])

    @property
    def dim(self) -> int:
        return int(self.weight.shape[1])

    def enforce_pins(self) -> None:
        if self.pin_zero:
            self.weight.data[0] = 0.0

    def assign(self, entries: np.ndarray) -> None:
        """Replace all entries (k-means initialization)."""
        if entries.shape != self.weight.shape:
            raise ShapeError('codebook.assign', self.weight.shape, entries.shape)
        if not np.all(np.isfinite(entries)):
            raise ValidationError("codebook entries must be finite", "entries")
        self.weight.data = entries.astype(self.weight.data.dtype)
        self.enforce_pins()


def squared_distances(vectors: np.ndarray, entries: np.ndarray) -> np.ndarray:
    return cdist(np.asarray(vectors, dtype=np.float64), np.asarray(entries, dtype=np.float64), 'sqeuclidean')


def nearest_code(entries: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """
    Index of the nearest entry for every vector (ties go to the lowest index).

    Args:
        entries: [K, D] code vectors
        vectors: [..., D] queries

    Returns:
        Integer array of shape ``vectors.shape[:-1]``
    """
    vectors = np.asarray(vectors)
    if vectors.shape[-1] != entries.shape[1]:
        raise ShapeError('nearest_code', entries.shape, vectors.shape)
    flat = vectors.reshape(-1, entries.shape[1])
    out = np.empty(flat.shape[0], dtype=np.int64)
    for start in range(0, flat.shape[0], _CHUNK):
        out[start:start + _CHUNK] = np.argmin(squared_distances(flat[start:start + _CHUNK], entries), axis=1)
    return out.reshape(vectors.shape[:-1])


def _kmeans_pp(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centers = [data[int(rng.integers(n))]]
    closest = squared_distances(data, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        index = int(rng.choice(n, p=closest / total)) if total > 0 else int(rng.integers(n))
        centers.append(data[index])
        closest = np.minimum(closest, squared_distances(data, data[index][None])[:, 0])
    return np.stack(centers)


def kmeans(data: np.ndarray, k: int, iters: int, rng: np.random.Generator) -> Tuple[np.ndarray, List[float]]:
    """
    k-means++ seeding followed by Lloyd iterations.

    Empty clusters are reseeded to the points currently farthest from their
    centroid.

    Returns:
        (centroids [k, D], mean squared distortion after each assignment)
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ShapeError('kmeans', data.shape)
    centroids = _kmeans_pp(data, k, rng)
    history: List[float] = []
    for _ in range(max(iters, 0) + 1):
        dist = squared_distances(data, centroids)
        labels = np.argmin(dist, axis=1)
        point_cost = dist[np.arange(data.shape[0]), labels]
        history.append(float(point_cost.mean()))
        if len(history) > iters:
            break
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, data)
        occupied = counts > 0
        centroids[occupied] = sums[occupied] / counts[occupied, None]
        empty = np.flatnonzero(~occupied)
        if empty.size:
            farthest = np.argsort(-point_cost, kind='stable')[:empty.size]
            centroids[empty[:farthest.size]] = data[farthest]
            logger.debug(f"kmeans reseeded {empty.size} empty cluster(s)")
    return centroids, history


def kmeans_init(data: np.ndarray, k: int, iters: int, rng: np.random.Generator,
                pin_zero: bool = False, codebook: Optional[Codebook] = None) -> Codebook:
    """Build (or overwrite) a codebook from k-means centroids of ``data``."""
    centroids, history = kmeans(data, k, iters, rng)
    if codebook is None:
        codebook = Codebook(k, data.shape[1], rng, pin_zero=pin_zero)
    codebook.assign(centroids)
    logger.debug(f"kmeans_init k={k}: distortion {history[0]:.4g} -> {history[-1]:.4g}")
    return codebook

"""Point-cloud storage, neighborhood queries, density statistics and local PCA."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateCloudError,
    DegenerateNeighborhoodError,
    DomainError,
    EmptyNeighborhoodError,
    InvalidCloudError,
    ParameterError,
)

DEFAULT_C_QU = 4.0


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered, immutable set of 2D or 3D points.

    Index ``i`` of any per-point field refers to ``points[i]``. The spatial
    index is built lazily and never mutated, so queries are thread-safe.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise InvalidCloudError(f"points must have shape (N, 2) or (N, 3), got {pts.shape}")
        if pts.shape[0] == 0:
            raise InvalidCloudError("point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise InvalidCloudError("point coordinates must be finite")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise DegenerateCloudError("point cloud contains coincident points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    def __repr__(self):
        return f"PointCloud(N={len(self)}, dim={self.dim})"


@dataclass(frozen=True)
class CloudStats:
    fill_estimate: float
    separation: float
    quasi_uniform_ratio: float
    c_qu_bound: float = DEFAULT_C_QU
    typical_separation: float = float("nan")

    @property
    def quasi_uniform(self) -> bool:
        return self.quasi_uniform_ratio <= self.c_qu_bound


@dataclass(frozen=True)
class Neighborhood:
    center: np.ndarray
    member_indices: np.ndarray
    strategy: str
    param: float
    radius_used: float


@dataclass(frozen=True)
class CovarianceAnalysis:
    mean: np.ndarray
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    degenerate: bool = False


def as_cloud(pc) -> PointCloud:
    return pc if isinstance(pc, PointCloud) else PointCloud(np.asarray(pc, dtype=float))


def cloud_stats(pc, c_qu_bound: float = DEFAULT_C_QU) -> CloudStats:
    """Separation distance and a nearest-neighbour estimate of the fill distance.

    ``typical_separation`` is half the median nearest-neighbour distance; it
    equals the separation distance on regular grids but is not dominated by
    a single close pair on irregular clouds.

    The true fill distance is a supremum over the sampled domain, which is not
    available here; the largest nearest-neighbour distance stands in for it.
    """
    pts = np.asarray(pc.points if isinstance(pc, PointCloud) else pc, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise InvalidCloudError("cloud_stats needs at least 2 points")
    dist, _ = cKDTree(pts).query(pts, k=2)
    nn = dist[:, 1]
    if np.any(nn == 0.0):
        raise DegenerateCloudError("point cloud contains coincident points")
    separation = 0.5 * float(nn.min())
    fill = float(nn.max())
    return CloudStats(fill, separation, fill / separation, c_qu_bound, 0.5 * float(np.median(nn)))


def c_delta(theta: float) -> float:
    """Neighbourhood-radius constant for an interior cone of half-angle ``theta``."""
    if not 0.0 < theta < np.pi / 2:
        raise DomainError(f"theta must lie in (0, pi/2), got {theta}")
    s = np.sin(theta)
    return 128.0 * (1.0 + s) ** 2 / (3.0 * s**2)


def knn_indices(pc: PointCloud, centers, k: int, pad: int = 8):
    """Exact k nearest neighbours for many centres.

    Returns ``(idx, dist)`` of shape ``(M, k)`` sorted by distance, equal
    distances broken by the lower point index.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    n = len(pc)
    if not 1 <= k <= n:
        raise ParameterError(f"k must satisfy 1 <= k <= N={n}, got {k}")
    kk = min(n, k + pad)
    _, cand = pc.tree.query(centers, k=kk)
    cand = np.asarray(cand).reshape(len(centers), kk)
    dist = np.linalg.norm(pc.points[cand] - centers[:, None, :], axis=2)
    order = np.lexsort((cand, dist), axis=1)
    cand = np.take_along_axis(cand, order, axis=1)
    dist = np.take_along_axis(dist, order, axis=1)
    if kk < n:
        # a tie straddling the candidate horizon needs a ball query
        suspect = np.nonzero(dist[:, k - 1] >= dist[:, -1] * (1 - 1e-12))[0]
        for m in suspect:
            ball = np.array(pc.tree.query_ball_point(centers[m], dist[m, k - 1] * (1 + 1e-9) + 1e-300))
            d = np.linalg.norm(pc.points[ball] - centers[m], axis=1)
            o = np.lexsort((ball, d))[:k]
            cand[m, :k] = ball[o]
            dist[m, :k] = d[o]
    return cand[:, :k], dist[:, :k]


def radius_indices(pc: PointCloud, center, radius: float) -> np.ndarray:
    """Indices of all points with ``||p - center|| <= radius``, sorted by (distance, index)."""
    center = np.asarray(center, dtype=float)
    cand = np.array(pc.tree.query_ball_point(center, radius * (1 + 1e-12)), dtype=int)
    if cand.size == 0:
        return cand
    d = np.linalg.norm(pc.points[cand] - center, axis=1)
    keep = d <= radius
    cand, d = cand[keep], d[keep]
    return cand[np.lexsort((cand, d))]


def neighborhood(pc: PointCloud, center, strategy: str = "knn", *, k: int | None = None,
                 radius: float | None = None) -> Neighborhood:
    """Neighbourhood of ``center`` under the radius or k-NN strategy."""
    center = np.asarray(center, dtype=float)
    if strategy == "radius":
        if radius is None or radius <= 0:
            raise ParameterError("radius strategy needs radius > 0")
        idx = radius_indices(pc, center, radius)
        if idx.size == 0:
            raise EmptyNeighborhoodError(f"no points within {radius} of {center.tolist()}")
        return Neighborhood(center, idx, "radius", float(radius), float(radius))
    if strategy == "knn":
        if k is None:
            raise ParameterError("knn strategy needs k")
        idx, dist = knn_indices(pc, center[None, :], k)
        return Neighborhood(center, idx[0], "knn", int(k), float(dist[0, -1]))
    raise ParameterError(f"unknown neighbourhood strategy {strategy!r}")


def covariance_of(points, rel_zero: float = 1e-14) -> CovarianceAnalysis:
    """Mean-centred second-moment matrix ``(1/n) sum (p - m)(p - m)^T`` and its eigen-pairs."""
    pts = np.asarray(points, dtype=float)
    n, dim = pts.shape
    if n < dim + 1:
        raise DegenerateNeighborhoodError(f"covariance needs at least {dim + 1} points, got {n}")
    mean = pts.mean(axis=0)
    c = pts - mean
    mat = c.T @ c / n
    mat = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(mat)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    scale = max(vals[0], 0.0)
    vals = np.where(vals <= rel_zero * scale, 0.0, vals)
    # deterministic sign: largest-magnitude component positive
    pick = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pick, np.arange(dim)])
    vecs = vecs * np.where(signs == 0, 1.0, signs)
    return CovarianceAnalysis(mean, mat, vals, vecs, degenerate=bool(vals[-1] == 0.0))


def covariance(pc: PointCloud, nbhd: Neighborhood) -> CovarianceAnalysis:
    return covariance_of(pc.points[nbhd.member_indices])

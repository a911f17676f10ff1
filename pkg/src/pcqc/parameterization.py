"""Harmonic parameterization of sampled open surfaces.

Each point gets a tangent frame from its neighbourhood covariance. The
surface is fitted locally as a height graph over that frame, and an MLS fit
in the frame coordinates yields a Laplace-Beltrami stencil. Solving the
Laplace-Beltrami equation for two coordinate functions with Dirichlet
boundary values gives the parameterization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, minimum_spanning_tree
from scipy.sparse.linalg import splu

from .beltrami_surface import ParamPair, conformality_grade
from .errors import BoundaryDetectionError, FrameError, InterfaceError, SolverError
from .mls import MlsConfig, _local_fit, support_ratio2
from .pointcloud import PointCloud, as_cloud, cloud_stats, knn_indices


@dataclass(frozen=True)
class LocalFrame:
    """Tangent frame at one surface point.

    ``projected`` holds member offsets in the ``tangents`` basis and
    ``heights`` their offsets along ``normal``. ``admissible`` records
    whether every height is below the separation distance of the cloud.
    """

    origin: np.ndarray
    normal: np.ndarray
    tangents: np.ndarray
    members: np.ndarray
    projected: np.ndarray
    heights: np.ndarray
    admissible: bool


@dataclass
class FrameField:
    """Frames of all points, stored as arrays."""

    idx: np.ndarray          # (n, k) neighbour indices
    normals: np.ndarray      # (n, 3), consistently oriented
    tangents: np.ndarray     # (n, 2, 3), right-handed with the normal
    projected: np.ndarray    # (n, k, 2)
    heights: np.ndarray      # (n, k)
    admissible: np.ndarray   # (n,) bool

    def frame(self, i: int, origin) -> LocalFrame:
        return LocalFrame(np.asarray(origin), self.normals[i], self.tangents[i], self.idx[i],
                          self.projected[i], self.heights[i], bool(self.admissible[i]))


def _frames(P, idx):
    nb = P[idx]
    c = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("mki,mkj->mij", c, c) / idx.shape[1]
    vals, vecs = np.linalg.eigh(cov)
    if np.any(vals[:, 1] <= 1e-14 * np.maximum(vals[:, 2], 1e-300)):
        m = int(np.argmax(vals[:, 1] <= 1e-14 * np.maximum(vals[:, 2], 1e-300)))
        raise FrameError(f"neighbourhood of point {m} is collinear; no tangent plane")
    return vecs[:, :, 0], vecs[:, :, 2]


def _orient(normals, idx):
    """Flip normals to agree along a spanning tree of the k-NN graph."""
    n, k = idx.shape
    rows = np.repeat(np.arange(n), k)
    cols = idx.ravel()
    wts = 1.0 - np.abs(np.einsum("ij,ij->i", normals[rows], normals[cols])) + 1e-9
    keep = rows != cols
    G = sp.csr_matrix((wts[keep], (rows[keep], cols[keep])), shape=(n, n))
    T = minimum_spanning_tree(G.maximum(G.T))
    T = T.maximum(T.T)
    out = normals.copy()
    seen = np.zeros(n, dtype=bool)
    for root in range(n):
        if seen[root]:
            continue
        order, pred = breadth_first_order(T, root, directed=False)
        seen[order] = True
        for v in order[1:]:
            if out[v] @ out[pred[v]] < 0:
                out[v] = -out[v]
    return out


def frame_field(pc3, k: int = 25) -> FrameField:
    """Local frames at every point of a 3D cloud."""
    pc3 = as_cloud(pc3)
    if pc3.dim != 3:
        raise InterfaceError("frames need a 3D cloud")
    if k < 6:
        raise FrameError("a frame needs at least 6 neighbours")
    k = min(k, len(pc3))
    P = pc3.points
    idx, _ = knn_indices(pc3, P, k)
    normals, major = _frames(P, idx)
    normals = _orient(normals, idx)
    t1 = major - np.einsum("ij,ij->i", major, normals)[:, None] * normals
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(normals, t1)
    tangents = np.stack([t1, t2], axis=1)
    D = P[idx] - P[:, None, :]
    projected = np.einsum("mkj,mtj->mkt", D, tangents)
    heights = np.einsum("mkj,mj->mk", D, normals)
    sep = cloud_stats(pc3).separation
    admissible = np.all(np.abs(heights) < sep, axis=1)
    return FrameField(idx, normals, tangents, projected, heights, admissible)


def local_frame(pc3, p: int, k: int = 25) -> LocalFrame:
    """Tangent frame at point ``p`` (normals oriented over the whole cloud)."""
    pc3 = as_cloud(pc3)
    return frame_field(pc3, k).frame(p, pc3.points[p])


@dataclass
class LBOperator:
    """Sparse Laplace-Beltrami stencil; row ``i`` approximates the operator at point ``i``."""

    matrix: sp.csr_matrix
    frames: FrameField

    def __matmul__(self, u):
        return self.matrix @ u


def laplace_beltrami(pc3, config: MlsConfig = MlsConfig(), frames: FrameField | None = None) -> LBOperator:
    """Meshless Laplace-Beltrami operator of a sampled surface.

    The surface height over each tangent frame is fitted by MLS. With its
    gradient ``g`` and Hessian ``H`` at the centre, the metric is
    ``I + g g^T`` and the operator on ``u`` is
    ``tr(M^-1 U) - tr(M^-1 H) (g . grad u) / det M`` where ``U`` and
    ``grad u`` are the MLS second and first derivatives in the frame.
    Rows are adjusted on the diagonal to annihilate constants. Unless
    ``config.h`` is set, the Gauss width is a fixed fraction of each
    point's support radius, since surface samples are rarely uniform.
    """
    pc3 = as_cloud(pc3)
    fr = frame_field(pc3, config.k) if frames is None else frames
    n, k = fr.idx.shape
    dist = np.linalg.norm(fr.projected, axis=2)
    delta = config.support_factor * dist.max(axis=1)
    ratio2 = None
    if config.kernel == "gauss":
        if config.h is not None:
            ratio2 = (delta / config.h) ** 2
        else:
            ratio2 = np.full(n, support_ratio2(config))
    mask = np.ones((n, k), dtype=bool)
    res = _local_fit(fr.projected, mask, np.zeros((n, 2)), delta, config.kernel, ratio2,
                     derivs=False, second=True, cond_max=config.cond_max, query_ids=np.arange(n))
    R = res["rows"]
    z = fr.heights
    g = np.column_stack([(R["d1"] * z).sum(1), (R["d2"] * z).sum(1)])
    H11, H12, H22 = ((R[key] * z).sum(1) for key in ("d11", "d12", "d22"))
    det = 1.0 + (g * g).sum(1)
    i11 = 1.0 - g[:, 0] ** 2 / det
    i12 = -g[:, 0] * g[:, 1] / det
    i22 = 1.0 - g[:, 1] ** 2 / det
    trace = i11 * H11 + 2 * i12 * H12 + i22 * H22
    rows = (i11[:, None] * R["d11"] + 2 * i12[:, None] * R["d12"] + i22[:, None] * R["d22"]
            - (trace / det)[:, None] * (g[:, 0, None] * R["d1"] + g[:, 1, None] * R["d2"]))
    L = sp.csr_matrix((rows.ravel(), (np.repeat(np.arange(n), k), fr.idx.ravel())), shape=(n, n))
    L = L - sp.diags(np.asarray(L.sum(axis=1)).ravel())
    return LBOperator(L.tocsr(), fr)


@dataclass(frozen=True)
class ChartBoundary:
    """Dirichlet data for a parameterization: boundary indices and their planar positions."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        val = np.asarray(self.values, dtype=float)
        if val.shape != (idx.size, 2):
            raise InterfaceError("chart boundary values must have shape (len(indices), 2)")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)


def boundary_loop(pc3, frames: FrameField | None = None, k: int = 12, gap: float = 2 * np.pi / 3) -> np.ndarray:
    """Ordered boundary loop of an open surface sample.

    A point is on the boundary when the directions to its neighbours, seen
    in its tangent plane, leave an angular gap wider than ``gap``. The
    boundary points are chained by nearest unvisited neighbour.
    """
    pc3 = as_cloud(pc3)
    fr = frame_field(pc3, k) if frames is None else frames
    ang = np.arctan2(fr.projected[..., 1], fr.projected[..., 0])
    ang = np.where(np.linalg.norm(fr.projected, axis=2) > 0, ang, np.nan)
    ang = np.sort(ang, axis=1)
    cnt = np.sum(np.isfinite(ang), axis=1)
    gaps = np.diff(np.where(np.isfinite(ang), ang, np.inf), axis=1)
    gaps = np.where(np.isfinite(gaps), gaps, -np.inf)
    wrap = ang[:, 0] + 2 * np.pi - ang[np.arange(len(ang)), cnt - 1]
    maxgap = np.maximum(gaps.max(axis=1), wrap)
    on = np.flatnonzero(maxgap > gap)
    if on.size < 3:
        raise BoundaryDetectionError("no boundary loop found")
    B = pc3.points[on]
    from scipy.spatial import cKDTree

    tree = cKDTree(B)
    order = [0]
    used = np.zeros(len(on), dtype=bool)
    used[0] = True
    steps = []
    for _ in range(len(on) - 1):
        kk = min(len(on), 16)
        d, j = tree.query(B[order[-1]], k=kk)
        free = [(dd, jj) for dd, jj in zip(d, j) if not used[jj]]
        if not free:
            d, j = tree.query(B[order[-1]], k=len(on))
            free = [(dd, jj) for dd, jj in zip(d, j) if not used[jj]]
        dd, jj = free[0]
        used[jj] = True
        order.append(jj)
        steps.append(dd)
    steps.append(np.linalg.norm(B[order[-1]] - B[order[0]]))
    steps = np.asarray(steps)
    if steps.max() > 4.0 * np.median(steps):
        raise BoundaryDetectionError("boundary points do not chain into a single closed loop")
    return on[np.asarray(order)]


def _arclength(P, loop):
    seg = np.linalg.norm(np.diff(P[np.r_[loop, loop[:1]]], axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    return s[:-1] / s[-1]


def _disk_values(P, loop):
    t = 2 * np.pi * _arclength(P, loop)
    return np.column_stack([np.cos(t), np.sin(t)])


def _rect_values(P, loop, fr):
    """Square perimeter by arc length between the four sharpest turns of the loop."""
    m = len(loop)
    prev, nxt = P[np.roll(loop, 1)], P[np.roll(loop, -1)]
    a, b = P[loop] - prev, nxt - P[loop]
    cosang = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    corners = np.sort(np.argsort(cosang, kind="stable")[:4])
    if len(corners) < 4 or m < 8:
        raise BoundaryDetectionError("boundary loop too short for a rectangle")
    seg = np.linalg.norm(b, axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    out = np.empty((m, 2))
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]])
    shift = corners[0]
    loop_order = np.roll(np.arange(m), -shift)
    s_rel = np.concatenate([[0.0], np.cumsum(np.roll(seg, -shift))])
    c_rel = list(corners - shift) + [m]
    for side in range(4):
        lo, hi = c_rel[side], c_rel[side + 1]
        t = (s_rel[lo:hi] - s_rel[lo]) / (s_rel[hi] - s_rel[lo])
        out[loop_order[lo:hi]] = square[side] + t[:, None] * (square[side + 1] - square[side])
    return out


def _orientation(P, Q, config):
    """+1 if the parameterization agrees with the propagated normals."""
    from .mls import MlsFit

    fit = MlsFit(PointCloud(Q), config=config)
    d1, d2 = fit.apply(P, "d1"), fit.apply(P, "d2")
    return np.cross(d1, d2)


def conformal_parameterize(pc3, boundary="disk", config: MlsConfig = MlsConfig(),
                           grade: bool = True) -> ParamPair:
    """Harmonic parameterization of an open surface sample onto a planar domain.

    ``boundary`` is a ``ChartBoundary`` (known planar positions of boundary
    points), ``"disk"`` (detected loop mapped to the unit circle by arc
    length) or ``"rect"`` (loop mapped to the unit square's perimeter,
    corners at its four sharpest turns). The grade is computed with
    support-tied Gauss widths unless ``config.h`` is set.
    """
    pc3 = as_cloud(pc3)
    L = laplace_beltrami(pc3, config)
    P = pc3.points
    n = len(P)
    if isinstance(boundary, ChartBoundary):
        bidx, bval = boundary.indices, boundary.values
    elif boundary in ("disk", "rect"):
        bidx = boundary_loop(pc3)
        bval = _disk_values(P, bidx) if boundary == "disk" else _rect_values(P, bidx, L.frames)
    else:
        raise InterfaceError(f"unknown boundary spec {boundary!r}")
    is_b = np.zeros(n, dtype=bool)
    is_b[bidx] = True
    A = L.matrix.tolil()
    A[bidx, :] = 0.0
    A = A.tocsr() + sp.csr_matrix((np.ones(bidx.size), (bidx, bidx)), shape=(n, n))
    rhs = np.zeros((n, 2))
    rhs[bidx] = bval
    try:
        Q = splu(A.tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"Laplace-Beltrami system is singular: {exc}") from exc
    if not np.all(np.isfinite(Q)):
        raise SolverError("Laplace-Beltrami solve produced non-finite values")
    diag = {"boundary_points": int(bidx.size), "admissible": bool(L.frames.admissible.all())}
    if not isinstance(boundary, ChartBoundary):
        normal_dot = np.einsum("ij,ij->i", _orientation(P, Q, config), L.frames.normals)
        if np.median(normal_dot) < 0:
            Q[:, 1] = (1.0 - Q[:, 1]) if boundary == "rect" else -Q[:, 1]
    pair = ParamPair(pc3, PointCloud(Q), np.arange(n), diagnostics=diag)
    if grade:
        gcfg = config if config.h is not None else config.with_(h_source="support")
        pair = ParamPair(pc3, pair.plane_cloud, pair.correspondence,
                         conformality_grade(pair, gcfg), diag)
    return pair

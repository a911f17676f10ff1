"""Recover a planar point-cloud map from a prescribed Beltrami coefficient.

Two formulations are supported: the Beltrami equation
``f_zbar - mu f_z = 0`` written as two real equations, and the divergence
form ``div(A grad u) = div(A grad v) = 0`` whose coefficient matrix has
unit determinant. Each is discretised either by strong-form collocation at
the cloud points or by an element-free Galerkin weak form on a background
quadrature grid. The unknowns are the nodal values of the MLS approximant;
the returned map is that approximant evaluated at the cloud points.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import ConvexHull

from .beltrami2d import PlanarMap
from .errors import (
    BoundaryDetectionError,
    InterfaceError,
    NotQuasiConformalError,
    ParameterError,
    SolverError,
)
from .mls import MlsConfig, MlsFit
from .pointcloud import PointCloud, as_cloud, cloud_stats

FORMULATIONS = ("beltrami", "glaplace")
METHODS = ("collocation", "efg")
DIRECT_LIMIT = 100_000


@dataclass(frozen=True, eq=False)
class QcProblem:
    """Prescribed coefficient ``mu`` on ``cloud`` with Dirichlet data on ``boundary``."""

    cloud: PointCloud
    mu: np.ndarray
    boundary: np.ndarray
    boundary_values: np.ndarray
    formulation: str = "beltrami"
    discretization: str = "collocation"

    def __post_init__(self):
        pc = as_cloud(self.cloud)
        mu = np.asarray(self.mu, dtype=complex).ravel()
        bnd = np.asarray(self.boundary, dtype=int).ravel()
        vals = np.asarray(self.boundary_values, dtype=float).reshape(-1, 2)
        if pc.dim != 2:
            raise InterfaceError("QcProblem needs a 2D cloud")
        if mu.shape != (len(pc),):
            raise InterfaceError(f"mu must have one value per point ({len(pc)}), got {mu.shape}")
        if bnd.size == 0:
            raise InterfaceError("at least one boundary point is required")
        if bnd.min() < 0 or bnd.max() >= len(pc) or np.unique(bnd).size != bnd.size:
            raise InterfaceError("boundary indices must be distinct and within range")
        if vals.shape != (bnd.size, 2):
            raise InterfaceError("boundary_values must be (len(boundary), 2)")
        if self.formulation not in FORMULATIONS:
            raise ParameterError(f"formulation must be one of {FORMULATIONS}")
        if self.discretization not in METHODS:
            raise ParameterError(f"discretization must be one of {METHODS}")
        if not np.all(np.isfinite(mu)) or np.any(np.abs(mu) >= 1.0 - 1e-9):
            raise NotQuasiConformalError("prescribed coefficient must satisfy |mu| < 1 - 1e-9")
        if bnd.size >= len(pc):
            raise InterfaceError("problem has no interior points")
        object.__setattr__(self, "cloud", pc)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "boundary", bnd)
        object.__setattr__(self, "boundary_values", vals)

    @property
    def interior(self) -> np.ndarray:
        mask = np.ones(len(self.cloud), dtype=bool)
        mask[self.boundary] = False
        return np.nonzero(mask)[0]


@dataclass
class QcSolution:
    map: PlanarMap
    residual_norm: float
    boundary_residual: float
    solve_report: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EfgConfig:
    """Background quadrature and penalty settings for the weak form.

    Cells have side ``cell_factor * h`` (``h`` the MLS length scale) and
    carry ``order x order`` Gauss points; a cell is kept when some cloud
    point lies within the fill distance of its centre. With ``vci`` the
    divergence-form weak form uses gradients corrected for linear
    integration consistency (only when the cells tile the bounding box).
    """

    cell_factor: float = 1.0
    order: int = 2
    penalty: float = 1e6
    vci: bool = True


def laplace_coeffs(mu):
    """Entries ``(a, b, c)`` of the unit-determinant matrix of the divergence-form equation."""
    mu = np.asarray(mu, dtype=complex)
    m2 = np.abs(mu) ** 2
    if np.any(m2 >= 1.0):
        raise NotQuasiConformalError("|mu| >= 1: divergence-form coefficients undefined")
    s, t = mu.real, mu.imag
    den = 1.0 - m2
    a = (1.0 + m2 - 2.0 * s) / den
    b = -2.0 * t / den
    c = (1.0 + m2 + 2.0 * s) / den
    if a.ndim == 0:
        return float(a), float(b), float(c)
    return a, b, c


def relative_error(g1, g0) -> float:
    """``sum |g1 - g0| / sum |g0|``; mean of ``|g1|`` when ``g0`` vanishes identically.

    Accepts ``PlanarMap`` objects or arrays of per-point vectors or complex numbers.
    """
    a = g1.targets if isinstance(g1, PlanarMap) else np.asarray(g1)
    b = g0.targets if isinstance(g0, PlanarMap) else np.asarray(g0)
    if a.shape != b.shape:
        raise InterfaceError(f"size mismatch: {a.shape} vs {b.shape}")

    def norms(x):
        x = np.asarray(x)
        if np.iscomplexobj(x):
            return np.abs(x)
        return np.abs(x) if x.ndim == 1 else np.linalg.norm(x, axis=1)

    n0 = norms(b)
    if np.all(n0 == 0):
        return float(norms(a).mean())
    return float(norms(a - b).sum() / n0.sum())


def detect_boundary(pc: PointCloud, tol: float = 1e-9) -> np.ndarray:
    """Indices of points lying on the convex hull boundary (edges included, not only vertices)."""
    pts = pc.points
    if pc.dim != 2 or len(pc) < 3:
        raise BoundaryDetectionError("boundary detection needs a 2D cloud with at least 3 points")
    try:
        hull = ConvexHull(pts)
    except Exception as exc:
        raise BoundaryDetectionError(f"convex hull failed: {exc}") from exc
    scale = np.ptp(pts, axis=0).max()
    # hull.equations: n . x + d <= 0 inside
    dist = pts @ hull.equations[:, :2].T + hull.equations[:, 2]
    on = np.any(np.abs(dist) <= tol * scale, axis=1)
    idx = np.nonzero(on)[0]
    if idx.size < 3:
        raise BoundaryDetectionError("fewer than 3 boundary points detected")
    return idx


def _solve(K, rhs, permc_spec="COLAMD"):
    """Sparse direct solve (iterative above ``DIRECT_LIMIT`` unknowns); rhs may have several columns."""
    K = K.tocsc()
    n = K.shape[0]
    if K.shape[0] != K.shape[1]:
        sol = np.column_stack([spla.lsqr(K, r, atol=1e-14, btol=1e-14)[0] for r in rhs.T])
        return sol
    if n <= DIRECT_LIMIT:
        try:
            lu = spla.splu(K, permc_spec=permc_spec)
        except RuntimeError as exc:
            raise SolverError(f"sparse factorisation failed ({exc}); system of size {n} is singular") from exc
        sol = lu.solve(rhs)
        for _ in range(2):
            # refinement recovers accuracy lost to penalty-scaled rows
            sol = sol + lu.solve(rhs - K @ sol)
    else:
        sol = np.column_stack([spla.lgmres(K, r, atol=1e-13)[0] for r in rhs.T])
    if not np.all(np.isfinite(sol)):
        raise SolverError(f"non-finite solution; system of size {n} is numerically singular")
    return sol


def _beltrami_block(mu, Dx, Dy):
    """Real form of ``f_zbar - mu f_z`` acting on stacked nodal values ``[U; V]``."""
    s = sp.diags(mu.real)
    t = sp.diags(mu.imag)
    one = sp.identity(len(mu))
    row_re = sp.hstack([(one - s) @ Dx - t @ Dy, t @ Dx - (one + s) @ Dy])
    row_im = sp.hstack([-t @ Dx + (one + s) @ Dy, (one - s) @ Dx - t @ Dy])
    return sp.vstack([row_re, row_im])


def _collocation(problem, config):
    pc = problem.cloud
    glap = problem.formulation == "glaplace"
    fit = MlsFit(pc, config=config, derivs=True, second=glap)
    I, B = problem.interior, problem.boundary
    Phi = fit.matrix("value")
    Dx, Dy = fit.matrix("s1"), fit.matrix("s2")
    g = problem.boundary_values
    if not glap:
        # Square interior collocation of this first-order system admits
        # spurious modes; the equation is imposed at every point in least
        # squares subject to exact boundary rows (KKT system).
        n = len(pc)
        op = _beltrami_block(problem.mu, Dx, Dy).tocsr()
        C = sp.block_diag([Phi[B], Phi[B]]).tocsr()
        d = np.concatenate([g[:, 0], g[:, 1]])
        K = sp.bmat([[op.T @ op, C.T], [C, None]]).tocsc()
        rhs = np.concatenate([np.zeros(2 * n), d])
        sol = _solve(K, rhs[:, None], permc_spec="MMD_ATA")[:, 0]
        x = sol[: 2 * n]
        nodal = np.column_stack([x[:n], x[n:]])
        res = np.linalg.norm(K @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300)
    else:
        a, b, c = laplace_coeffs(problem.mu)
        ax, bx, cx = (fit.apply(f, "d1") for f in (a, b, c))
        ay, by, cy = (fit.apply(f, "d2") for f in (a, b, c))
        Dxx, Dxy, Dyy = fit.matrix("d11"), fit.matrix("d12"), fit.matrix("d22")
        L = (sp.diags(a) @ Dxx + 2.0 * sp.diags(b) @ Dxy + sp.diags(c) @ Dyy
             + sp.diags(ax + by) @ Dx + sp.diags(bx + cy) @ Dy)
        K = sp.vstack([L[I], Phi[B]]).tocsr()
        rhs = np.vstack([np.zeros((len(I), 2)), g])
        nodal = _solve(K, rhs)
        res = np.linalg.norm(K @ nodal - rhs) / max(np.linalg.norm(rhs), 1e-300)
    return nodal, Phi, float(res), 2 * len(pc)


def quadrature_grid(pc: PointCloud, side: float, order: int = 2, reach: float | None = None):
    """Tensor Gauss points on square cells covering the bounding box of ``pc``.

    A cell is kept when its centre lies within ``reach`` of a cloud point
    (default: the nearest-neighbour fill estimate, or the cell half-diagonal
    if larger).
    """
    lo, hi = pc.points.min(axis=0), pc.points.max(axis=0)
    ncell = np.maximum(np.ceil((hi - lo) / side - 1e-9).astype(int), 1)
    step = (hi - lo) / ncell
    cx = lo[0] + (np.arange(ncell[0]) + 0.5) * step[0]
    cy = lo[1] + (np.arange(ncell[1]) + 0.5) * step[1]
    C = np.array(np.meshgrid(cx, cy, indexing="ij")).reshape(2, -1).T
    if reach is None:
        reach = max(cloud_stats(pc).fill_estimate, 0.5 * float(np.hypot(*step)))
    near, _ = pc.tree.query(C, k=1)
    C = C[near <= reach]
    gx, gw = np.polynomial.legendre.leggauss(order)
    offs = np.array(np.meshgrid(gx, gx, indexing="ij")).reshape(2, -1).T * (0.5 * step)
    wts = np.outer(gw, gw).ravel() * (0.25 * step[0] * step[1])
    X = (C[:, None, :] + offs[None]).reshape(-1, 2)
    W = np.tile(wts, len(C))
    full = len(C) == ncell[0] * ncell[1]
    return X, W, (lo, hi, ncell, full)


def box_boundary_quadrature(lo, hi, ncell, order: int = 2):
    """Gauss points, weights and outward normals on the edges of the box ``[lo, hi]``."""
    gx, gw = np.polynomial.legendre.leggauss(order)
    pts, wts, nrm = [], [], []
    for axis in (0, 1):
        other = 1 - axis
        edges = np.linspace(lo[axis], hi[axis], ncell[axis] + 1)
        half = 0.5 * np.diff(edges)
        t = ((edges[:-1] + edges[1:]) / 2)[:, None] + half[:, None] * gx[None]
        w = (half[:, None] * gw[None]).ravel()
        t = t.ravel()
        for side, sign in ((lo[other], -1.0), (hi[other], 1.0)):
            P = np.empty((t.size, 2))
            P[:, axis] = t
            P[:, other] = side
            n = np.zeros((t.size, 2))
            n[:, other] = sign
            pts.append(P)
            wts.append(w)
            nrm.append(n)
    return np.vstack(pts), np.concatenate(wts), np.vstack(nrm)


def _vci_correct(Gx, Gy, Pq, wq, boundary_phi, bw, bn):
    """Shift each shape-function gradient by a constant on its support so that
    the quadrature reproduces the divergence theorem (linear consistency)."""
    target = np.column_stack([boundary_phi.T @ (bw * bn[:, 0]), boundary_phi.T @ (bw * bn[:, 1])])
    actual = np.column_stack([Gx.T @ wq, Gy.T @ wq])
    vol = Pq.T @ wq
    xi = (target - actual) / np.where(np.abs(vol) > 0, vol, 1.0)[:, None]
    return Gx + Pq @ sp.diags(xi[:, 0]), Gy + Pq @ sp.diags(xi[:, 1])


def _efg(problem, config, efg):
    pc = problem.cloud
    h = config.length_scale(pc)
    Xq, wq, (lo, hi, ncell, full) = quadrature_grid(pc, efg.cell_factor * h, efg.order)
    fq = MlsFit(pc, Xq, config, derivs=True)
    Pq = fq.matrix("value")
    Gx, Gy = fq.matrix("s1"), fq.matrix("s2")
    vci = efg.vci and problem.formulation == "glaplace" and full
    Tx, Ty = Gx, Gy
    if vci:
        Xb, wb, nb = box_boundary_quadrature(lo, hi, ncell, efg.order)
        fb = MlsFit(pc, Xb, config, derivs=True)
        Pb = fb.matrix("value")
        Tx, Ty = _vci_correct(Gx, Gy, Pq, wq, Pb, wb, nb)
    muq = Pq @ problem.mu
    n = len(pc)
    B = problem.boundary
    PB = MlsFit(pc, pc.points[B], config).matrix("value")
    g = problem.boundary_values
    Wd = sp.diags(wq)
    if problem.formulation == "glaplace":
        a, b, c = laplace_coeffs(muq)
        # corrected gradients on the test side only
        K = (Tx.T @ sp.diags(wq * a) @ Gx + Tx.T @ sp.diags(wq * b) @ Gy
             + Ty.T @ sp.diags(wq * b) @ Gx + Ty.T @ sp.diags(wq * c) @ Gy)
        if vci:
            # boundary flux term, so linear solutions satisfy the discrete weak form exactly
            ab, bb, cb = laplace_coeffs(Pb @ problem.mu)
            flux = (sp.diags(ab * nb[:, 0] + bb * nb[:, 1]) @ fb.matrix("s1")
                    + sp.diags(bb * nb[:, 0] + cb * nb[:, 1]) @ fb.matrix("s2"))
            K = K - Pb.T @ sp.diags(wb) @ flux
        alpha = efg.penalty * float(np.abs(K.diagonal()).mean())
        K = (K + alpha * (PB.T @ PB)).tocsr()
        rhs = alpha * (PB.T @ g)
        nodal = _solve(K, rhs)
        res = np.linalg.norm(K @ nodal - rhs) / max(np.linalg.norm(rhs), 1e-300)
    else:
        R = _beltrami_block(muq, Gx, Gy)
        K = R.T @ sp.block_diag([Wd, Wd]) @ R
        alpha = efg.penalty * float(np.abs(K.diagonal()).mean())
        PB2 = sp.block_diag([PB, PB])
        K = (K + alpha * (PB2.T @ PB2)).tocsr()
        rhs = alpha * (PB2.T @ np.concatenate([g[:, 0], g[:, 1]]))
        x = _solve(K, rhs[:, None])[:, 0]
        nodal = np.column_stack([x[:n], x[n:]])
        res = np.linalg.norm(K @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
    Phi = MlsFit(pc, config=config).matrix("value")
    return nodal, Phi, float(res), 2 * n, {"quadrature_points": len(Xq), "vci": bool(vci)}


def solve_qc_map(problem: QcProblem, config: MlsConfig = MlsConfig(),
                 efg: EfgConfig = EfgConfig()) -> QcSolution:
    """Solve for the map whose Beltrami coefficient is ``problem.mu``."""
    t0 = time.perf_counter()
    a, b, c = laplace_coeffs(problem.mu)
    if np.max(np.abs(a * c - b * b - 1.0)) > 1e-9:
        raise NotQuasiConformalError("coefficient matrix lost unit determinant")
    report = {}
    if problem.discretization == "collocation":
        nodal, Phi, res, nunk = _collocation(problem, config)
    else:
        nodal, Phi, res, nunk, extra = _efg(problem, config, efg)
        report.update(extra)
    t1 = time.perf_counter()
    values = Phi @ nodal
    bres = float(np.abs(values[problem.boundary] - problem.boundary_values).max())
    report.update(solve_time=t1 - t0, n_unknowns=nunk)
    return QcSolution(PlanarMap(problem.cloud, values), res, bres, report)

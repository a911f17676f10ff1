"""Planar quasi-conformal analysis on point clouds.

Beltrami coefficients of sampled maps, composition and dilation, the
angle-distortion statistic, and covariance-based predictions of how a
neighbourhood is stretched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateCompositionError,
    DegenerateJacobianError,
    DegenerateNeighborhoodError,
    FactorizationError,
    InterfaceError,
    NotQuasiConformalError,
)
from .mls import MlsConfig, MlsFit
from .pointcloud import (
    CovarianceAnalysis,
    Neighborhood,
    PointCloud,
    as_cloud,
    cloud_stats,
    covariance_of,
    neighborhood,
)

FLAVORS = ("diffuse", "standard")


@dataclass(frozen=True, eq=False)
class PlanarMap:
    """A map sampled on a 2D cloud: ``targets[i]`` is the image of ``source.points[i]``."""

    source: PointCloud
    targets: np.ndarray

    def __post_init__(self):
        src = as_cloud(self.source)
        tgt = np.asarray(self.targets, dtype=float)
        if src.dim != 2:
            raise InterfaceError("PlanarMap source must be a 2D cloud")
        if tgt.shape != (len(src), 2):
            raise InterfaceError(f"targets must have shape ({len(src)}, 2), got {tgt.shape}")
        if not np.all(np.isfinite(tgt)):
            raise InterfaceError("map targets must be finite")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "targets", tgt)

    @classmethod
    def from_function(cls, pc, func) -> "PlanarMap":
        pc = as_cloud(pc)
        return cls(pc, np.asarray(func(pc.points), dtype=float))


@dataclass
class BeltramiField:
    """Per-point Beltrami coefficients with validity flags.

    ``valid[i]`` is False where the coefficient is undefined (vanishing
    denominator); such points are excluded from ``sup_norm``.
    """

    values: np.ndarray
    flavor: str
    valid: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def sup_norm(self) -> float:
        v = np.abs(self.values[self.valid])
        return float(v.max()) if v.size else float("nan")

    @property
    def pcqc(self) -> bool:
        return bool(np.all(self.valid) and np.all(np.abs(self.values) < 1.0))

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class CovariancePrediction:
    """Predicted stretch of a neighbourhood under a map.

    ``T`` is the coefficient seen after normalising the neighbourhood to an
    isotropic one, ``sigma`` the coefficient of that normalisation and
    ``zeta = mu - sigma``. ``predicted_axis`` is the predicted major
    eigenvector of the image covariance. The ``measured_*`` fields are the
    corresponding quantities of the actual image neighbourhood.
    """

    T: complex
    predicted_ratio: float
    theta: float
    u0: np.ndarray
    sigma: complex
    zeta: complex
    predicted_axis: np.ndarray
    axis_reliable: bool
    mu: complex
    measured_ratio: float
    measured_axis: np.ndarray
    source_cov: CovarianceAnalysis
    image_cov: CovarianceAnalysis


def bc_from_partials(ux, uy, vx, vy):
    """Numerator and denominator of the Beltrami coefficient from first partials."""
    num = (np.asarray(ux) - vy) + 1j * (np.asarray(vx) + uy)
    den = (np.asarray(ux) + vy) + 1j * (np.asarray(vx) - uy)
    return num, den


def analytic_bc(grad) -> complex:
    """Beltrami coefficient of a map with Jacobian ``[[u_x, u_y], [v_x, v_y]]``."""
    g = np.asarray(grad, dtype=float)
    if g.shape != (2, 2):
        raise InterfaceError(f"Jacobian must be 2x2, got {g.shape}")
    num, den = bc_from_partials(g[0, 0], g[0, 1], g[1, 0], g[1, 1])
    if abs(den) <= 1e-300 or abs(den) <= 1e-14 * np.abs(g).max():
        raise DegenerateJacobianError("f_z vanishes: Beltrami coefficient undefined")
    return complex(num / den)


def analytic_bc_field(ux, uy, vx, vy):
    """Vectorised ``analytic_bc``; undefined entries are NaN."""
    num, den = bc_from_partials(ux, uy, vx, vy)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = num / den
    return np.where(den == 0, np.nan + 0j, mu)


def _field_from_jets(d1, d2, flavor, tol=0.0):
    num, den = bc_from_partials(d1[:, 0], d2[:, 0], d1[:, 1], d2[:, 1])
    scale = np.maximum(np.abs(d1).max(axis=1), np.abs(d2).max(axis=1))
    valid = np.abs(den) > tol * scale
    valid &= np.abs(den) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(valid, num / np.where(valid, den, 1.0), np.nan + 0j)
    return BeltramiField(mu, flavor, valid, {"undefined": int(np.count_nonzero(~valid))})


def pcbc(fmap: PlanarMap, flavor: str = "diffuse", config: MlsConfig = MlsConfig(), *,
         fit: MlsFit | None = None) -> BeltramiField:
    """Point-cloud Beltrami coefficient of a sampled planar map.

    A prebuilt ``MlsFit`` over ``fmap.source`` may be passed to reuse its
    weight rows across maps.
    """
    if flavor not in FLAVORS:
        raise InterfaceError(f"flavor must be one of {FLAVORS}")
    if fit is None:
        fit = MlsFit(fmap.source, config=config, derivs=flavor == "standard")
    _, d1, d2 = fit.gradient(fmap.targets, flavor)
    return _field_from_jets(d1, d2, flavor, tol=1e-13)


def compose_bc(mu_f, mu_g, g_z):
    """Beltrami coefficient of ``f o g^-1``, pulled back to the domain of ``g``."""
    mu_f, mu_g, g_z = (np.asarray(a, dtype=complex) for a in (mu_f, mu_g, g_z))
    den = 1.0 - mu_f * np.conj(mu_g)
    if np.any(np.abs(den) <= 1e-15):
        raise DegenerateCompositionError("mu_f * conj(mu_g) has unit modulus")
    if np.any(g_z == 0):
        raise DegenerateCompositionError("g_z vanishes")
    out = (mu_f - mu_g) / den * g_z / np.conj(g_z)
    return complex(out) if out.ndim == 0 else out


def dilation(mu):
    """Maximal dilation ``(1 + |mu|) / (1 - |mu|)``."""
    a = np.abs(np.asarray(mu, dtype=complex))
    if np.any(a >= 1.0):
        raise NotQuasiConformalError("|mu| >= 1: map is not quasi-conformal")
    out = (1.0 + a) / (1.0 - a)
    return float(out) if out.ndim == 0 else out


@dataclass
class AngleDistortion:
    max_change: float
    per_center: np.ndarray
    degenerate_pairs: int


def _pair_angles(V):
    """Unsigned angles between all pairs of vectors along axis 1 of ``V`` (M, K, 2)."""
    dot = np.einsum("mid,mjd->mij", V, V)
    cross = V[:, :, None, 0] * V[:, None, :, 1] - V[:, :, None, 1] * V[:, None, :, 0]
    return np.arctan2(np.abs(cross), dot)


def angle_distortion(fmap: PlanarMap, config: MlsConfig = MlsConfig(), chunk: int = 2048) -> AngleDistortion:
    """Largest change of the angle at ``p0`` spanned by two neighbours, over all centres.

    Neighbourhoods follow ``config`` (k-NN with ``config.k`` or the radius
    strategy). Pairs whose mapped difference vectors vanish are skipped and
    counted.
    """
    from .mls import neighbor_table

    pc = fmap.source
    idx, mask, _ = neighbor_table(pc, pc.points, config)
    per_center = np.zeros(len(pc))
    degenerate = 0
    for start in range(0, len(pc), chunk):
        sl = slice(start, start + chunk)
        ii, mm = idx[sl], mask[sl]
        centers = np.arange(start, min(start + chunk, len(pc)))
        mm = mm & (ii != centers[:, None])
        if np.any(mm.sum(axis=1) < 2):
            raise DegenerateNeighborhoodError("angle statistic needs neighbourhoods of at least 3 points")
        V0 = pc.points[ii] - pc.points[centers][:, None, :]
        V1 = fmap.targets[ii] - fmap.targets[centers][:, None, :]
        zero = np.all(V1 == 0, axis=2) & mm
        ok = mm & ~zero
        pair_ok = ok[:, :, None] & ok[:, None, :]
        degenerate += int(np.count_nonzero((mm[:, :, None] & mm[:, None, :]) & ~pair_ok)) // 2
        diff = np.abs(_pair_angles(V1) - _pair_angles(V0))
        per_center[sl] = np.where(pair_ok, diff, 0.0).max(axis=(1, 2))
    return AngleDistortion(float(per_center.max()), per_center, degenerate)


def sigma_from_covariance(cov: CovarianceAnalysis) -> complex:
    """Beltrami coefficient of the map that whitens a 2D neighbourhood."""
    l1, l2 = cov.eigenvalues
    if l2 <= 0:
        raise DegenerateNeighborhoodError("neighbourhood covariance is singular")
    v2 = cov.eigenvectors[:, 1]
    r1, r2 = np.sqrt(l1), np.sqrt(l2)
    return complex((r1 - r2) / (r1 + r2) * (v2[0] + 1j * v2[1]) ** 2)


@dataclass(frozen=True)
class AffineNormalizer:
    """``x -> G (x - p0) + p0`` with ``G = (U^T)^-1`` and ``M1 = U^T U``."""

    U: np.ndarray
    p0: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.linalg.inv(self.U.T)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (x - self.p0) @ self.matrix.T + self.p0


def cholesky_normalizer(cov, p0=None) -> AffineNormalizer:
    """Affine map sending a neighbourhood with covariance ``M1`` to one with identity covariance."""
    M1 = np.asarray(cov.matrix if isinstance(cov, CovarianceAnalysis) else cov, dtype=float)
    if p0 is None:
        p0 = cov.mean if isinstance(cov, CovarianceAnalysis) else np.zeros(M1.shape[0])
    try:
        L = np.linalg.cholesky(M1)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("covariance matrix is not positive definite") from exc
    return AffineNormalizer(L.T.copy(), np.asarray(p0, dtype=float))


def _fix_sign(vec, ref):
    d = float(vec @ ref)
    if d < 0:
        return -vec
    if d == 0:
        nz = np.flatnonzero(vec)
        if nz.size and vec[nz[0]] < 0:
            return -vec
    return vec


def predict_from_covariance(mu: complex, cov: CovarianceAnalysis, jac):
    """Closed-form prediction pieces from a coefficient, a covariance and a Jacobian.

    Returns ``(T, sigma, theta, u0, axis)``; ``axis`` is unit length, sign
    not yet fixed.
    """
    l1, l2 = cov.eigenvalues[:2]
    sigma = sigma_from_covariance(cov)
    T = (mu - sigma) / (1.0 - np.conj(sigma) * mu)
    theta = float(np.angle(T) / 2.0)
    u0 = np.array([np.cos(theta), np.sin(theta)])
    axis = np.asarray(jac) @ ((cov.matrix + np.sqrt(l1 * l2) * np.eye(2)) @ u0)
    n = np.linalg.norm(axis)
    if n == 0:
        raise DegenerateJacobianError("predicted axis vanishes")
    return complex(T), sigma, theta, u0, axis / n


def covariance_prediction(fmap: PlanarMap, p: int, config: MlsConfig = MlsConfig(), *,
                          nbhd: Neighborhood | None = None, flavor: str = "diffuse",
                          fit: MlsFit | None = None) -> CovariancePrediction:
    """Predict the image covariance shape of the neighbourhood of point ``p``.

    The neighbourhood defaults to the one ``config`` selects around ``p``;
    the coefficient and Jacobian come from the MLS jet at ``p``.
    """
    pc = fmap.source
    x = pc.points[p]
    if nbhd is None:
        if config.strategy == "knn":
            nbhd = neighborhood(pc, x, "knn", k=config.k)
        else:
            nbhd = neighborhood(pc, x, "radius", radius=config.radius(config.length_scale(pc)))
    cov1 = covariance_of(pc.points[nbhd.member_indices])
    if cov1.eigenvalues[1] <= 0:
        raise DegenerateNeighborhoodError(f"source neighbourhood of point {p} is degenerate")
    if fit is None:
        fit = MlsFit(pc, x[None, :], config, derivs=flavor == "standard")
        row = 0
    else:
        row = p
    keys = ("d1", "d2") if flavor == "diffuse" else ("s1", "s2")
    F = fmap.targets[fit.idx[row]]
    (ux, vx), (uy, vy) = (fit.rows[k][row] @ F for k in keys)
    jac = np.array([[ux, uy], [vx, vy]])
    mu = analytic_bc(jac)
    if abs(mu) >= 1.0:
        raise NotQuasiConformalError(f"|mu| >= 1 at point {p}")
    T, sigma, theta, u0, axis = predict_from_covariance(mu, cov1, jac)
    cov2 = covariance_of(fmap.targets[nbhd.member_indices])
    measured_axis = cov2.eigenvectors[:, 0]
    measured_axis = _fix_sign(measured_axis, axis)
    aT = abs(T)
    ratio = ((1.0 + aT) / (1.0 - aT)) ** 2
    zeta = mu - sigma
    h = cloud_stats(pc).fill_estimate
    measured_ratio = (cov2.eigenvalues[0] / cov2.eigenvalues[1]
                      if cov2.eigenvalues[1] > 0 else float("inf"))
    return CovariancePrediction(T, float(ratio), theta, u0, sigma, complex(zeta), axis,
                                bool(abs(zeta) >= 10.0 * h), complex(mu), float(measured_ratio),
                                measured_axis, cov1, cov2)


@dataclass
class PredictionBatch:
    """Array form of ``CovariancePrediction`` for many centres (one entry per centre)."""

    centers: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    T: np.ndarray
    zeta: np.ndarray
    predicted_ratio: np.ndarray
    predicted_axis: np.ndarray
    measured_ratio: np.ndarray
    measured_axis: np.ndarray
    axis_reliable: np.ndarray

    @property
    def ratio_error(self) -> np.ndarray:
        return np.abs(self.measured_ratio - self.predicted_ratio)

    @property
    def axis_error(self) -> np.ndarray:
        return np.linalg.norm(self.measured_axis - self.predicted_axis, axis=1)


def _batched_cov(pts, mask):
    """Mean-centred covariance of masked neighbour sets: (M, K, 2) -> (M, 2, 2) and eigen-pairs."""
    w = mask.astype(float)
    n = w.sum(axis=1)
    mean = np.einsum("mk,mkd->md", w, pts) / n[:, None]
    c = (pts - mean[:, None, :]) * w[..., None]
    mat = np.einsum("mki,mkj->mij", c, c) / n[:, None, None]
    vals, vecs = np.linalg.eigh(mat)
    return mat, vals[:, ::-1], vecs[:, :, ::-1]


def covariance_predictions(fmap: PlanarMap, config: MlsConfig = MlsConfig(), centers=None, *,
                           flavor: str = "diffuse", fit: MlsFit | None = None,
                           h: float | None = None) -> PredictionBatch:
    """Vectorised ``covariance_prediction`` over ``centers`` (default: every point)."""
    from .mls import neighbor_table

    pc = fmap.source
    centers = np.arange(len(pc)) if centers is None else np.asarray(centers, dtype=int)
    q = pc.points[centers]
    idx, mask, _ = neighbor_table(pc, q, config)
    if fit is None:
        fit = MlsFit(pc, q, config, derivs=flavor == "standard")
        rows = np.arange(len(centers))
    else:
        rows = centers
    keys = ("d1", "d2") if flavor == "diffuse" else ("s1", "s2")
    F = fmap.targets[fit.idx[rows]]
    d1, d2 = (np.einsum("mk,mkd->md", fit.rows[k][rows], F) for k in keys)
    jac = np.stack([np.stack([d1[:, 0], d2[:, 0]], -1), np.stack([d1[:, 1], d2[:, 1]], -1)], axis=1)
    num, den = bc_from_partials(d1[:, 0], d2[:, 0], d1[:, 1], d2[:, 1])
    if np.any(den == 0):
        raise DegenerateJacobianError(f"f_z vanishes at point {int(centers[np.argmax(den == 0)])}")
    mu = num / den
    if np.any(np.abs(mu) >= 1):
        raise NotQuasiConformalError(f"|mu| >= 1 at point {int(centers[np.argmax(np.abs(mu) >= 1)])}")

    M1, l12, V1 = _batched_cov(pc.points[idx], mask)
    if np.any(l12[:, 1] <= 1e-14 * l12[:, 0]):
        bad = int(centers[np.argmax(l12[:, 1] <= 1e-14 * l12[:, 0])])
        raise DegenerateNeighborhoodError(f"source neighbourhood of point {bad} is degenerate")
    r1, r2 = np.sqrt(l12[:, 0]), np.sqrt(l12[:, 1])
    v2 = V1[:, :, 1]
    sigma = (r1 - r2) / (r1 + r2) * (v2[:, 0] + 1j * v2[:, 1]) ** 2
    T = (mu - sigma) / (1.0 - np.conj(sigma) * mu)
    theta = np.angle(T) / 2.0
    u0 = np.stack([np.cos(theta), np.sin(theta)], -1)
    corr = M1 + (r1 * r2)[:, None, None] * np.eye(2)
    axis = np.einsum("mij,mj->mi", jac, np.einsum("mij,mj->mi", corr, u0))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    aT = np.abs(T)
    ratio = ((1.0 + aT) / (1.0 - aT)) ** 2

    _, l34, V2 = _batched_cov(fmap.targets[idx], mask)
    w0 = V2[:, :, 0]
    dot = np.einsum("md,md->m", w0, axis)
    first = w0[np.arange(len(w0)), np.argmax(w0 != 0, axis=1)]
    flip = (dot < 0) | ((dot == 0) & (first < 0))
    w0 = np.where(flip[:, None], -w0, w0)
    with np.errstate(divide="ignore"):
        measured = np.where(l34[:, 1] > 0, l34[:, 0] / l34[:, 1], np.inf)
    zeta = mu - sigma
    h = cloud_stats(pc).fill_estimate if h is None else h
    return PredictionBatch(centers, mu, sigma, T, zeta, ratio, axis, measured, w0,
                           np.abs(zeta) >= 10.0 * h)

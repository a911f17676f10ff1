"""Beltrami coefficients of maps into surfaces and between sampled surfaces.

A map from a planar cloud into R^3 is graded by the Beltrami coefficient
built from its first fundamental form. Maps between two sampled surfaces
are described through conformal parameterizations of both: the planar map
between the parameter domains carries the coefficient, indexed back onto
the source surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .beltrami2d import FLAVORS, BeltramiField, PlanarMap, pcbc
from .errors import DegenerateNeighborhoodError, InterfaceError
from .mls import MlsConfig, MlsFit
from .pointcloud import PointCloud, as_cloud, cloud_stats, covariance_of, knn_indices


@dataclass(frozen=True, eq=False)
class SurfaceMap:
    """A map from a 2D cloud into R^3: ``targets[i]`` is the image of ``source.points[i]``."""

    source: PointCloud
    targets: np.ndarray

    def __post_init__(self):
        src = as_cloud(self.source)
        tgt = np.asarray(self.targets, dtype=float)
        if src.dim != 2:
            raise InterfaceError("SurfaceMap source must be a 2D cloud")
        if tgt.shape != (len(src), 3):
            raise InterfaceError(f"targets must have shape ({len(src)}, 3), got {tgt.shape}")
        if not np.all(np.isfinite(tgt)):
            raise InterfaceError("surface map targets must be finite")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "targets", tgt)


@dataclass(frozen=True, eq=False)
class SurfacePointMap:
    """A map between two sampled surfaces: ``targets[i]`` is the image of ``source.points[i]``."""

    source: PointCloud
    targets: np.ndarray

    def __post_init__(self):
        src = as_cloud(self.source)
        tgt = np.asarray(self.targets, dtype=float)
        if src.dim != 3:
            raise InterfaceError("SurfacePointMap source must be a 3D cloud")
        if tgt.shape != (len(src), 3):
            raise InterfaceError(f"targets must have shape ({len(src)}, 3), got {tgt.shape}")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "targets", tgt)


@dataclass(frozen=True, eq=False)
class ParamPair:
    """A surface cloud with planar parameter coordinates.

    Surface point ``i`` sits at plane point ``correspondence[i]``.
    ``e_grade`` is the larger sup-norm of the diffuse and standard
    coefficients of the map plane -> surface (0 for a conformal chart).
    """

    surface_cloud: PointCloud
    plane_cloud: PointCloud
    correspondence: np.ndarray
    e_grade: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        s, q = as_cloud(self.surface_cloud), as_cloud(self.plane_cloud)
        if s.dim != 3 or q.dim != 2:
            raise InterfaceError("ParamPair needs a 3D surface cloud and a 2D plane cloud")
        if len(s) != len(q):
            raise InterfaceError(f"cloud sizes differ: {len(s)} vs {len(q)}")
        corr = np.arange(len(s)) if self.correspondence is None else np.asarray(self.correspondence)
        if corr.shape != (len(s),) or not np.array_equal(np.sort(corr), np.arange(len(s))):
            raise InterfaceError("correspondence must be a permutation of the point indices")
        object.__setattr__(self, "surface_cloud", s)
        object.__setattr__(self, "plane_cloud", q)
        object.__setattr__(self, "correspondence", corr.astype(int))

    @property
    def plane_coords(self) -> np.ndarray:
        """Parameter coordinates in surface-point order."""
        return self.plane_cloud.points[self.correspondence]

    def surface_map(self) -> SurfaceMap:
        """The inverse parameterization, plane -> surface, in plane-point order."""
        inv = np.empty_like(self.correspondence)
        inv[self.correspondence] = np.arange(len(inv))
        return SurfaceMap(self.plane_cloud, self.surface_cloud.points[inv])


def _metric_bc(a1, a2, c1=None, c2=None):
    """Coefficient from tangent vectors; with ``c1, c2`` the correction terms are added."""
    E, G, F = (a1 * a1).sum(1), (a2 * a2).sum(1), (a1 * a2).sum(1)
    num = E - G + 2j * F
    den = E + G
    rad = E * G - F * F
    if c1 is not None:
        C11, C22, C12 = (c1 * c1).sum(1), (c2 * c2).sum(1), (c1 * c2).sum(1)
        num = num + (C11 - C22 + 2j * C12)
        den = den + C11 + C22
        rad = rad + (C11 * C22 - C12 * C12)
    clamped = rad < 0
    den = den + 2.0 * np.sqrt(np.where(clamped, 0.0, rad))
    return num, den, clamped


def _surface_field(num, den, scale, clamped, flavor, tol=1e-13):
    valid = (np.abs(den) > tol * scale) & (den != 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(valid, num / np.where(valid, den, 1.0), np.nan + 0j)
    diag = {"undefined": int(np.count_nonzero(~valid)), "clamped": int(np.count_nonzero(clamped)),
            "clamped_points": np.flatnonzero(clamped)}
    return mu, valid, diag


def surface_bc(smap: SurfaceMap, flavor: str = "diffuse", config: MlsConfig = MlsConfig(), *,
               fit: MlsFit | None = None, standard_form: str = "printed") -> BeltramiField:
    """Beltrami coefficient of a map from a planar cloud into R^3.

    ``diffuse`` uses the tangent vectors from diffuse derivatives. The
    ``standard`` flavor has two forms: ``printed`` adds only the squared
    correction terms of the derivative of the MLS operator to the diffuse
    metric quantities; ``full`` uses the complete standard derivatives. The
    gap between the two is reported as ``diagnostics["consistency_gap"]``.
    Negative radicands are clamped to zero and counted.
    """
    if flavor not in FLAVORS:
        raise InterfaceError(f"flavor must be one of {FLAVORS}")
    if standard_form not in ("printed", "full"):
        raise InterfaceError("standard_form must be 'printed' or 'full'")
    if fit is None:
        fit = MlsFit(smap.source, config=config, derivs=flavor == "standard")
    F = smap.targets
    a1, a2 = fit.apply(F, "d1"), fit.apply(F, "d2")
    scale = (a1 * a1).sum(1) + (a2 * a2).sum(1)
    if flavor == "diffuse":
        num, den, clamped = _metric_bc(a1, a2)
        mu, valid, diag = _surface_field(num, den, scale, clamped, flavor)
        return BeltramiField(mu, flavor, valid, diag)
    s1, s2 = fit.apply(F, "s1"), fit.apply(F, "s2")
    nf, df, cf = _metric_bc(s1, s2)
    mu_full, valid_full, diag_full = _surface_field(nf, df, scale, cf, flavor)
    np_, dp, cp = _metric_bc(a1, a2, s1 - a1, s2 - a2)
    mu_pr, valid_pr, diag_pr = _surface_field(np_, dp, scale, cp, flavor)
    both = valid_full & valid_pr
    gap = float(np.abs(mu_full[both] - mu_pr[both]).max()) if both.any() else float("nan")
    if standard_form == "full":
        mu, valid, diag = mu_full, valid_full, diag_full
    else:
        mu, valid, diag = mu_pr, valid_pr, diag_pr
    diag = dict(diag, consistency_gap=gap, standard_form=standard_form)
    return BeltramiField(mu, flavor, valid, diag)


def conformality_grade(param: ParamPair, config: MlsConfig = MlsConfig()) -> float:
    """``max(sup|mu_diffuse|, sup|mu_standard|)`` of the map plane -> surface.

    Points where a coefficient is undefined are left out of the maximum.
    """
    smap = param.surface_map()
    fit = MlsFit(smap.source, config=config, derivs=True)
    fields = [surface_bc(smap, fl, config, fit=fit) for fl in FLAVORS]
    return float(max(f.sup_norm for f in fields))


def projected_map(bijection, param1: ParamPair, param2: ParamPair) -> PlanarMap:
    """Planar map between parameter domains induced by a surface map, in P1 point order."""
    n = len(param1.surface_cloud)
    if len(param2.surface_cloud) != n:
        raise InterfaceError(f"surface clouds differ in size: {n} vs {len(param2.surface_cloud)}")
    bij = np.arange(n) if bijection is None else np.asarray(bijection, dtype=int)
    if bij.shape != (n,) or not np.array_equal(np.sort(bij), np.arange(n)):
        raise InterfaceError("surface map must be an index bijection P1 -> P2")
    return PlanarMap(PointCloud(param1.plane_coords), param2.plane_coords[bij])


def pcbr(bijection, param1: ParamPair, param2: ParamPair, flavor: str = "diffuse",
         config: MlsConfig = MlsConfig()) -> BeltramiField:
    """Beltrami representation of a map between sampled surfaces, indexed on P1.

    ``bijection[i]`` is the index in P2 of the image of P1 point ``i``;
    ``None`` means the identity pairing.
    """
    return pcbc(projected_map(bijection, param1, param2), flavor, config)


def _angles3(V):
    dot = np.einsum("mid,mjd->mij", V, V)
    cr = np.cross(V[:, :, None, :], V[:, None, :, :])
    return np.arctan2(np.linalg.norm(cr, axis=-1), dot)


def surface_angle_distortion(fmap: SurfacePointMap, param1: ParamPair, config: MlsConfig = MlsConfig()):
    """Largest change of neighbour angles under a surface map.

    Neighbourhoods are taken in the parameter domain of the source surface
    and the angles are measured in R^3.
    """
    from .beltrami2d import AngleDistortion

    Q = param1.plane_coords
    idx, _ = knn_indices(PointCloud(Q), Q, min(config.k, len(Q)))
    P, Fp = fmap.source.points, fmap.targets
    centers = np.arange(len(Q))
    mm = idx != centers[:, None]
    V0 = P[idx] - P[:, None, :]
    V1 = Fp[idx] - Fp[:, None, :]
    ok = mm & ~np.all(V1 == 0, axis=2)
    pair_ok = ok[:, :, None] & ok[:, None, :]
    degenerate = int(np.count_nonzero((mm[:, :, None] & mm[:, None, :]) & ~pair_ok)) // 2
    per = np.where(pair_ok, np.abs(_angles3(V1) - _angles3(V0)), 0.0).max(axis=(1, 2))
    return AngleDistortion(float(per.max()), per, degenerate)


@dataclass(frozen=True)
class SurfaceCovariancePrediction:
    """Predicted and measured shape of a surface neighbourhood under a map.

    ``predicted_dirs[j]`` and ``measured_dirs[j]`` are the unit major/minor
    in-plane axes of the image neighbourhood; ``lambda3`` holds the third
    eigenvalues of the source and image covariances.
    """

    T: complex
    predicted_ratio: float
    measured_ratio: float
    theta: float
    w: np.ndarray
    sigma: complex
    zeta: complex
    mu: complex
    predicted_dirs: np.ndarray
    measured_dirs: np.ndarray
    lambda3: tuple
    reliable: bool
    members: np.ndarray

    @property
    def ratio_error(self) -> float:
        return abs(self.measured_ratio - self.predicted_ratio)

    @property
    def axis_errors(self) -> np.ndarray:
        return np.linalg.norm(self.measured_dirs - self.predicted_dirs, axis=1)


def surface_covariance_prediction(fmap: SurfacePointMap, param1: ParamPair, p: int,
                                  config: MlsConfig = MlsConfig(), *, mu: complex,
                                  ratio_margin: float = 10.0) -> SurfaceCovariancePrediction:
    """Predict how the neighbourhood of surface point ``p`` is stretched by ``fmap``.

    ``mu`` is the Beltrami representation of the map at ``p`` (see ``pcbr``).
    The neighbourhood is the k-NN set of ``p`` in the parameter domain.
    The prediction is flagged unreliable when the source neighbourhood is
    nearly isotropic (eigenvalue ratio minus one below ``ratio_margin``
    times the parameter fill distance) or ``|zeta|`` is below that length.
    """
    Q = param1.plane_coords
    qc = PointCloud(Q)
    k = min(config.k, len(Q))
    members = knn_indices(qc, Q[p], k)[0][0]
    cov1 = covariance_of(fmap.source.points[members])
    cov2 = covariance_of(fmap.targets[members])
    l1, l2, l3 = cov1.eigenvalues
    if l2 <= 0:
        raise DegenerateNeighborhoodError("source neighbourhood is degenerate")
    fit = MlsFit(qc, Q[p][None, :], config)
    J1 = np.column_stack([fit.apply(fmap.source.points, "d1")[0], fit.apply(fmap.source.points, "d2")[0]])
    JF = np.column_stack([fit.apply(fmap.targets, "d1")[0], fit.apply(fmap.targets, "d2")[0]])
    w = np.linalg.lstsq(J1, cov1.eigenvectors[:, 1], rcond=None)[0]
    nw = np.linalg.norm(w)
    if nw == 0:
        raise DegenerateNeighborhoodError("minor axis has no preimage in the parameter plane")
    w = w / nw
    r1, r2 = np.sqrt(l1), np.sqrt(l2)
    wc = w[0] + 1j * w[1]
    T = ((r1 + r2) * mu - (r1 - r2) * wc**2) / ((r1 + r2) - (r1 - r2) * np.conj(wc) ** 2 * mu)
    sigma = (r1 - r2) / (r1 + r2) * wc**2
    aT = abs(T)
    pred_ratio = ((1 + aT) / (1 - aT)) ** 2
    theta = float(np.angle(T) / 2)
    normal = cov1.eigenvectors[:, 2]
    proj = np.eye(3) - np.outer(normal, normal)
    push = np.linalg.pinv(J1)
    pred, meas = [], []
    for th in (theta, theta + np.pi / 2):
        u0 = np.array([np.cos(th), np.sin(th)])
        u = proj @ ((cov1.matrix + np.sqrt(l1 * l2) * np.eye(3)) @ (J1 @ u0))
        d = JF @ (push @ u)
        d = d / np.linalg.norm(d)
        pred.append(d)
    for j, d in enumerate(pred):
        v = cov2.eigenvectors[:, j]
        meas.append(-v if v @ d < 0 else v)
    zeta = complex(mu - sigma)
    hq = cloud_stats(qc).fill_estimate
    reliable = bool(l1 / l2 - 1 > ratio_margin * hq and abs(zeta) >= ratio_margin * hq)
    return SurfaceCovariancePrediction(
        complex(T), float(pred_ratio), float(cov2.eigenvalues[0] / cov2.eigenvalues[1]), theta, w,
        complex(sigma), zeta, complex(mu), np.array(pred), np.array(meas),
        (float(l3), float(cov2.eigenvalues[2])), reliable, members)

"""Moving least squares with a quadratic basis.

Fits are computed in the coordinates ``u = (y - x) / l`` centred at the query
point ``x`` and scaled by the weighted RMS radius ``l`` of its neighbours; the
fitted polynomial is the same as in global coordinates, only the normal
matrix is better conditioned. Row vectors (``Phi``, diffuse and standard derivative weights)
are converted back to global units before they leave this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError, SingularFitError
from .pointcloud import Neighborhood, PointCloud, cloud_stats, c_delta, knn_indices

KERNELS = ("gauss", "wendland", "cubic")
COND_MAX = 1e12


def support_ratio2(config) -> float:
    """``(delta / h)^2`` at an interior point of a regular grid with 25 neighbours."""
    return (config.support_factor * np.sqrt(8.0) / 0.5) ** 2


def _profile(kind, s, ratio2=None):
    """``W(s)`` and ``W'(s)`` for ``s = d**2``; zero for ``s >= 1``."""
    s = np.asarray(s, dtype=float)
    inside = s < 1.0
    if kind == "gauss":
        w = np.exp(-ratio2 * s)
        dw = -ratio2 * w
    elif kind == "wendland":
        t = 1.0 - s
        w = t**4 * (1.0 + 4.0 * s)
        dw = -20.0 * s * t**3
    elif kind == "cubic":
        lo = s < 0.5
        w = np.where(lo, 2 / 3 - 4 * s**2 + 4 * s**3, 4 / 3 - 4 * s + 4 * s**2 - 4 * s**3 / 3)
        dw = np.where(lo, -8 * s + 12 * s**2, -4 * (1 - s) ** 2)
    else:
        raise ParameterError(f"unknown kernel {kind!r}; expected one of {KERNELS}")
    return np.where(inside, w, 0.0), np.where(inside, dw, 0.0)


@dataclass(frozen=True)
class WeightKernel:
    """``w(d) = W(d**2)`` with ``d = ||x - p|| / delta``.

    The Gauss profile ``exp(-delta**2 s / h**2)`` needs both ``h`` and
    ``delta``; it is truncated at ``d = 1`` like the compact kernels.
    """

    kind: str = "gauss"
    h: float | None = None
    delta: float | None = None

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ParameterError(f"unknown kernel {self.kind!r}; expected one of {KERNELS}")
        if self.kind == "gauss" and self.h is not None and self.h <= 0:
            raise ParameterError("gauss kernel needs h > 0")
        if self.delta is not None and self.delta <= 0:
            raise ParameterError("kernel support delta must be positive")

    def ratio2(self, delta=None):
        if self.kind != "gauss":
            return None
        delta = self.delta if delta is None else delta
        if self.h is None or delta is None:
            raise ParameterError("gauss kernel needs both h and delta")
        return (np.asarray(delta, dtype=float) / self.h) ** 2


def weight_eval(kernel: WeightKernel, d):
    """Weight and its derivative with respect to the normalised distance ``d``."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ParameterError("normalised distance must be non-negative")
    w, dw_ds = _profile(kernel.kind, d * d, kernel.ratio2())
    return w, dw_ds * 2.0 * d


def basis_eval(x):
    """Quadratic basis ``q`` and its partial derivatives ``q1``, ``q2`` at ``x``."""
    x1, x2 = (float(v) for v in x)
    q = np.array([1.0, x1, x2, x1 * x1, x1 * x2, x2 * x2])
    q1 = np.array([0.0, 1.0, 0.0, 2 * x1, x2, 0.0])
    q2 = np.array([0.0, 0.0, 1.0, 0.0, x1, 2 * x2])
    return q, q1, q2


def _basis_rows(u):
    """Quadratic basis evaluated on the last axis of ``u`` (..., 2) -> (..., 6)."""
    x, y = u[..., 0], u[..., 1]
    return np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=-1)


@dataclass(frozen=True)
class MlsConfig:
    """How neighbourhoods, supports and kernel widths are chosen.

    ``h`` is the sampling length used by the Gauss width and by the radius
    strategy; when omitted it is taken from the cloud (see ``h_source``).
    ``h_source="support"`` ties the Gauss width to each query's support
    radius instead (see ``support_ratio2``), which matches the default on the
    interior of a regular grid and stays well posed on uneven samples.
    Under k-NN the support radius is ``support_factor`` times the k-th
    neighbour distance.
    """

    kernel: str = "gauss"
    strategy: str = "knn"
    k: int = 25
    radius_factor: float = 6.0
    theta: float | None = None
    h: float | None = None
    h_source: str = "half_fill"
    support_factor: float = 1.5
    cond_max: float = COND_MAX

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ParameterError(f"unknown kernel {self.kernel!r}")
        if self.strategy not in ("knn", "radius"):
            raise ParameterError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "knn" and self.k < 6:
            raise ParameterError("quadratic MLS needs k >= 6")
        if self.h_source not in ("spacing", "separation", "typical", "half_fill", "fill", "support"):
            raise ParameterError(f"unknown h_source {self.h_source!r}")

    def with_(self, **kw) -> "MlsConfig":
        return replace(self, **kw)

    def length_scale(self, pc: PointCloud) -> float:
        if self.h is not None:
            return float(self.h)
        st = cloud_stats(pc)
        return {"spacing": 2.0 * st.separation, "separation": st.separation,
                "typical": st.typical_separation, "half_fill": 0.5 * st.fill_estimate,
                "fill": st.fill_estimate, "support": 0.5 * st.fill_estimate}[self.h_source]

    def radius(self, h: float) -> float:
        factor = c_delta(self.theta) if self.theta is not None else self.radius_factor
        return factor * h


@dataclass
class MlsSystem:
    """Local fit operator at one point, in the basis ``q(y - x)``."""

    x: np.ndarray
    member_indices: np.ndarray
    Q: np.ndarray
    W: np.ndarray
    A: np.ndarray
    dA: np.ndarray | None
    delta: float
    condition_estimate: float


@dataclass
class MlsJet:
    value: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    flavor: str
    condition_estimate: float


def _local_fit(pts_nb, mask, x, delta, kind, ratio2, *, derivs, second, cond_max, full=False,
               query_ids=None):
    """Batched core. ``pts_nb`` is (M, K, 2) neighbour coordinates.

    Returns a dict of (M, K) weight rows in global units; with ``full`` the
    scaled operator pieces are returned too.
    """
    D = pts_nb - x[:, None, :]
    r2 = np.einsum("mkj,mkj->mk", D, D)
    s = r2 / (delta[:, None] ** 2)
    W, dW = _profile(kind, s, None if ratio2 is None else ratio2[:, None])
    W = np.where(mask, W, 0.0)
    dW = np.where(mask, dW, 0.0)
    # basis scale: weighted RMS radius, i.e. the width the weights actually see
    wsum = W.sum(axis=1)
    ell = np.sqrt(np.einsum("mk,mk->m", W, r2) / np.where(wsum > 0, wsum, 1.0))
    ell = np.where(ell > 0, ell, delta)
    U = D / ell[:, None, None]
    Q = _basis_rows(U)
    QW = Q * W[..., None]
    M = np.einsum("mki,mkj->mij", QW, Q)
    cond = np.linalg.cond(M)
    nsupp = np.count_nonzero(W > 0, axis=1)
    bad = ~np.isfinite(cond) | (cond > cond_max) | (nsupp < 6)
    if np.any(bad):
        m = int(np.argmax(bad))
        qid = m if query_ids is None else int(query_ids[m])
        raise SingularFitError(
            f"MLS normal matrix singular or ill-conditioned at query {qid} "
            f"x={x[m].tolist()} (cond={cond[m]:.3g}, support={nsupp[m]})",
            point_index=qid, point=x[m].copy())
    # least squares through QR of sqrt(W) Q: accurate to sqrt(cond) rather than cond
    sw = np.sqrt(W)
    Qr, R = np.linalg.qr(Q * sw[..., None])
    Rt = np.swapaxes(R, 1, 2)

    def minv(X):
        return np.linalg.solve(R, np.linalg.solve(Rt, X))

    A = np.linalg.solve(R, np.swapaxes(Qr, 1, 2) * sw[:, None, :])  # (M, 6, K), scaled basis
    inv_l = 1.0 / ell[:, None]
    rows = {"value": A[:, 0], "d1": A[:, 1] * inv_l, "d2": A[:, 2] * inv_l}
    if second:
        rows["d11"] = 2.0 * A[:, 3] * inv_l**2
        rows["d12"] = A[:, 4] * inv_l**2
        rows["d22"] = 2.0 * A[:, 5] * inv_l**2
    out = {"rows": rows, "cond": cond, "ell": ell}
    if derivs:
        # d/dx_j of W_kk = W'(s) * ds/dx_j with s = ||p - x||^2 / delta^2
        dWj = dW[:, None, :] * (-2.0 * np.swapaxes(D, 1, 2) / (delta[:, None, None] ** 2))  # (M,2,K)
        g = minv(np.broadcast_to(np.eye(6)[0], (M.shape[0], 6))[..., None].copy())[..., 0]
        Qg = np.einsum("mki,mi->mk", Q, g)
        for j in range(2):
            r = Qg * dWj[:, j]
            corr = r - np.einsum("mi,mik->mk", np.einsum("mk,mki->mi", r, Q), A)
            rows[f"s{j + 1}"] = rows[f"d{j + 1}"] + corr
        if full:
            Minv_QdW = [minv(np.swapaxes(Q * dWj[:, j, :, None], 1, 2)) for j in range(2)]
            dA = [Minv_QdW[j] - np.einsum("mij,mjk->mik", Minv_QdW[j] @ Q, A) for j in range(2)]
            out["dA"] = np.stack(dA, axis=1)
    if full:
        out.update(A=A, Q=Q, W=W)
    return out


def _gather(pc: PointCloud, idx_lists):
    m = len(idx_lists)
    K = max(len(i) for i in idx_lists)
    idx = np.zeros((m, K), dtype=int)
    mask = np.zeros((m, K), dtype=bool)
    for r, ii in enumerate(idx_lists):
        idx[r, : len(ii)] = ii
        mask[r, : len(ii)] = True
    return idx, mask


def neighbor_table(pc: PointCloud, queries, config: MlsConfig, h: float | None = None):
    """Padded neighbour indices, mask and support radius per query."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    if config.strategy == "knn":
        k = min(config.k, len(pc))
        idx, dist = knn_indices(pc, queries, k)
        mask = np.ones_like(idx, dtype=bool)
        delta = config.support_factor * dist[:, -1]
    else:
        h = config.length_scale(pc) if h is None else h
        r = config.radius(h)
        lists = pc.tree.query_ball_point(queries, r)
        if any(len(l) == 0 for l in lists):
            from .errors import EmptyNeighborhoodError
            m = next(i for i, l in enumerate(lists) if len(l) == 0)
            raise EmptyNeighborhoodError(f"no points within {r} of query {m}")
        idx, mask = _gather(pc, [np.sort(np.asarray(l, dtype=int)) for l in lists])
        delta = np.full(len(queries), r)
    return idx, mask, delta


class MlsFit:
    """MLS fits at many query points over one cloud.

    Holds, per query, the neighbour indices and the weight rows turning
    per-point samples into fitted values and derivatives:

    ``value``  shape functions ``Phi_i(x)``
    ``d1, d2`` diffuse first derivatives
    ``s1, s2`` standard first derivatives (``derivs=True``)
    ``d11, d12, d22`` second derivatives of the local quadratic (``second=True``)
    """

    def __init__(self, pc: PointCloud, queries=None, config: MlsConfig = MlsConfig(), *,
                 derivs: bool = False, second: bool = False, chunk: int = 4096):
        if pc.dim != 2:
            raise ParameterError("MLS fits need a planar (2D) parameter cloud")
        self.pc = pc
        self.config = config
        self.queries = pc.points if queries is None else np.atleast_2d(np.asarray(queries, dtype=float))
        self.h = config.length_scale(pc)
        self.idx, self.mask, self.delta = neighbor_table(pc, self.queries, config, self.h)
        ratio2 = None
        if config.kernel == "gauss":
            if config.h is None and config.h_source == "support":
                ratio2 = np.full(len(self.queries), support_ratio2(config))
            else:
                ratio2 = (self.delta / self.h) ** 2
        rows, conds = {}, []
        for start in range(0, len(self.queries), chunk):
            sl = slice(start, start + chunk)
            res = _local_fit(pc.points[self.idx[sl]], self.mask[sl], self.queries[sl], self.delta[sl],
                             config.kernel, None if ratio2 is None else ratio2[sl], derivs=derivs,
                             second=second, cond_max=config.cond_max,
                             query_ids=np.arange(start, min(start + chunk, len(self.queries))))
            for key, val in res["rows"].items():
                rows.setdefault(key, []).append(np.where(self.mask[sl], val, 0.0))
            conds.append(res["cond"])
        self.rows = {key: np.concatenate(v) for key, v in rows.items()}
        self.cond = np.concatenate(conds)

    def __len__(self):
        return len(self.queries)

    def apply(self, field, which: str = "value"):
        F = np.asarray(field)
        return np.einsum("mk,mk...->m...", self.rows[which], F[self.idx])

    def diffuse(self, field):
        return self.apply(field, "value"), self.apply(field, "d1"), self.apply(field, "d2")

    def standard(self, field):
        if "s1" not in self.rows:
            raise ParameterError("standard derivatives need MlsFit(..., derivs=True)")
        return self.apply(field, "value"), self.apply(field, "s1"), self.apply(field, "s2")

    def gradient(self, field, flavor: str = "diffuse"):
        """Per-query (value, d1, d2) for the chosen derivative flavor."""
        return self.diffuse(field) if flavor == "diffuse" else self.standard(field)

    def matrix(self, which: str = "value") -> sp.csr_matrix:
        m, K = self.idx.shape
        r = np.repeat(np.arange(m), K)
        data = self.rows[which].ravel()
        keep = self.mask.ravel()
        return sp.csr_matrix((data[keep], (r[keep], self.idx.ravel()[keep])), shape=(m, len(self.pc)))


def _single(pc, x, kernel: WeightKernel, nbhd: Neighborhood, support_factor=1.5):
    x = np.asarray(x, dtype=float).reshape(1, 2)
    if kernel.delta is not None:
        delta = kernel.delta
    elif nbhd.strategy == "radius":
        delta = nbhd.param
    else:
        delta = support_factor * nbhd.radius_used
    ratio2 = kernel.ratio2(delta)
    idx = np.asarray(nbhd.member_indices, dtype=int)
    return idx, np.array([delta], dtype=float), None if ratio2 is None else np.atleast_1d(ratio2)


def mls_system(pc: PointCloud, x, kernel: WeightKernel, nbhd: Neighborhood,
               with_derivs: bool = False, cond_max: float = COND_MAX) -> MlsSystem:
    """Closed-form local fit operator ``A_x = (Q^T W Q)^-1 Q^T W`` at ``x``.

    ``Q`` has rows ``q(p_i - x)``, so ``A_x F`` are the coefficients of the
    fitted quadratic in powers of ``(y - x)``. With ``with_derivs`` the
    derivative ``dA[j] = d A_x / d x_j`` (basis frame held fixed) is included.
    """
    idx, delta, ratio2 = _single(pc, x, kernel, nbhd)
    xx = np.asarray(x, dtype=float).reshape(1, 2)
    res = _local_fit(pc.points[idx][None], np.ones((1, len(idx)), dtype=bool), xx, delta,
                     kernel.kind, ratio2, derivs=with_derivs, second=False, cond_max=cond_max,
                     full=True)
    ell = res["ell"][0]
    S = np.array([1.0, 1 / ell, 1 / ell, 1 / ell**2, 1 / ell**2, 1 / ell**2])
    A = S[:, None] * res["A"][0]
    dA = S[None, :, None] * res["dA"][0] if with_derivs else None
    Q = _basis_rows(pc.points[idx] - xx)
    return MlsSystem(xx[0], idx, Q, res["W"][0], A, dA, float(delta[0]), float(res["cond"][0]))


def shape_functions(pc: PointCloud, x, kernel: WeightKernel, nbhd: Neighborhood) -> sp.csr_matrix:
    """``Phi_i(x)`` as a 1 x N sparse row; nonzero only on neighbourhood members."""
    sysm = mls_system(pc, x, kernel, nbhd)
    phi = sysm.A[0]
    return sp.csr_matrix((phi, (np.zeros(len(phi), dtype=int), sysm.member_indices)), shape=(1, len(pc)))


def diffuse_jet(pc: PointCloud, field, x, kernel: WeightKernel, nbhd: Neighborhood) -> MlsJet:
    sysm = mls_system(pc, x, kernel, nbhd)
    c = np.tensordot(sysm.A, np.asarray(field)[sysm.member_indices], axes=(1, 0))
    return MlsJet(c[0], c[1], c[2], "diffuse", sysm.condition_estimate)


def standard_jet(pc: PointCloud, field, x, kernel: WeightKernel, nbhd: Neighborhood) -> MlsJet:
    sysm = mls_system(pc, x, kernel, nbhd, with_derivs=True)
    F = np.asarray(field)[sysm.member_indices]
    c = np.tensordot(sysm.A, F, axes=(1, 0))
    corr = [np.tensordot(sysm.dA[j, 0], F, axes=(0, 0)) for j in range(2)]
    return MlsJet(c[0], c[1] + corr[0], c[2] + corr[1], "standard", sysm.condition_estimate)

"""Synthetic clouds, analytic test maps and surfaces used by the experiments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .errors import CatalogError, ParameterError
from .pointcloud import PointCloud

MESH_COUNTS = (1047, 1807, 4132, 7185)


def grid_points(m: int, lo=0.0, hi=1.0) -> np.ndarray:
    """``m x m`` closed grid on ``[lo, hi]^2``, x varying fastest."""
    if m < 2:
        raise ParameterError("grid needs at least 2 points per side")
    t = np.linspace(lo, hi, m)
    X, Y = np.meshgrid(t, t)
    return np.column_stack([X.ravel(), Y.ravel()])


def jittered_grid(m: int, seed: int = 0, amplitude: float = 0.2) -> np.ndarray:
    """Closed ``m x m`` unit-square grid with uniform jitter of ``amplitude`` times the spacing.

    Interior points move in both coordinates, edge points only along their
    edge, corners stay fixed, so the cloud keeps the unit square as its hull.
    """
    P = grid_points(m)
    h = 1.0 / (m - 1)
    rng = np.random.default_rng(seed)
    J = rng.uniform(-amplitude * h, amplitude * h, size=P.shape)
    on_x = np.isclose(P[:, 0], 0.0) | np.isclose(P[:, 0], 1.0)
    on_y = np.isclose(P[:, 1], 0.0) | np.isclose(P[:, 1], 1.0)
    J[on_x, 0] = 0.0
    J[on_y, 1] = 0.0
    return P + J


def mesh_vertex_cloud(count: int, seed: int = 0, iterations: int = 12, oversample: int = 64) -> np.ndarray:
    """Irregular quasi-uniform cloud of exactly ``count`` points on the unit square.

    Evenly spaced boundary points (about ``sqrt(count)`` per edge) plus
    interior points relaxed by a few Lloyd iterations on a dense random
    sample, which gives the spacing statistics of a good triangle mesh.
    """
    per_edge = max(int(round(np.sqrt(count))) - 1, 2)
    t = np.arange(per_edge) / per_edge
    bnd = np.concatenate([
        np.column_stack([t, np.zeros_like(t)]),
        np.column_stack([np.ones_like(t), t]),
        np.column_stack([1.0 - t, np.ones_like(t)]),
        np.column_stack([np.zeros_like(t), 1.0 - t]),
    ])
    n_in = count - len(bnd)
    if n_in < 1:
        raise ParameterError(f"count {count} too small for a mesh-like cloud")
    rng = np.random.default_rng(seed)
    margin = 0.5 / per_edge
    gen = rng.uniform(margin, 1.0 - margin, size=(n_in, 2))
    sample = rng.uniform(0.0, 1.0, size=(oversample * count, 2))
    for _ in range(iterations):
        allpts = np.vstack([bnd, gen])
        _, owner = cKDTree(allpts).query(sample)
        owner -= len(bnd)
        keep = owner >= 0
        sums = np.zeros_like(gen)
        np.add.at(sums, owner[keep], sample[keep])
        cnt = np.bincount(owner[keep], minlength=n_in)
        moved = cnt > 0
        gen[moved] = sums[moved] / cnt[moved, None]
    gen = np.clip(gen, 0.25 * margin, 1.0 - 0.25 * margin)
    return np.vstack([bnd, gen])


# analytic maps: value and Jacobian [[u_x, u_y], [v_x, v_y]] per point

def _f1(P):
    x, y = P[:, 0], P[:, 1]
    return np.column_stack([np.exp(x), (x**2 + 1) * y])


def _f1_jac(P):
    x, y = P[:, 0], P[:, 1]
    return np.stack([np.stack([np.exp(x), 0 * x], -1), np.stack([2 * x * y, x**2 + 1], -1)], 1)


def _f2(P):
    x, y = P[:, 0], P[:, 1]
    return np.column_stack([np.sin(x), (x**2 + 1) * np.sin(y)])


def _f2_jac(P):
    x, y = P[:, 0], P[:, 1]
    return np.stack([np.stack([np.cos(x), 0 * x], -1),
                     np.stack([2 * x * np.sin(y), (x**2 + 1) * np.cos(y)], -1)], 1)


_F3_TERMS = ((0.4, -0.5j, 2), (0.008, 0.45 + 0.4j, 3), (0.032, 0.4 + 0.35j, 4))


def f3_complex(z):
    z = np.asarray(z, dtype=complex)
    return sum(c * (z - a) ** k for c, a, k in _F3_TERMS)


def f3_derivative(z):
    z = np.asarray(z, dtype=complex)
    return sum(c * k * (z - a) ** (k - 1) for c, a, k in _F3_TERMS)


def _f3(P):
    w = f3_complex(P[:, 0] + 1j * P[:, 1])
    return np.column_stack([w.real, w.imag])


def _f3_jac(P):
    d = f3_derivative(P[:, 0] + 1j * P[:, 1])
    return np.stack([np.stack([d.real, -d.imag], -1), np.stack([d.imag, d.real], -1)], 1)


def _fig2(P):
    x, y = P[:, 0], P[:, 1]
    return np.column_stack([np.exp(x), (x**2 + 1) * np.sin(y)])


def _fig2_jac(P):
    x, y = P[:, 0], P[:, 1]
    return np.stack([np.stack([np.exp(x), 0 * x], -1),
                     np.stack([2 * x * np.sin(y), (x**2 + 1) * np.cos(y)], -1)], 1)


def table1_fn(P):
    """Scalar benchmark ``(x^2 + 1) sin y`` with its gradient."""
    x, y = P[:, 0], P[:, 1]
    return (x**2 + 1) * np.sin(y), np.column_stack([2 * x * np.sin(y), (x**2 + 1) * np.cos(y)])


def phi1(P):
    """Catenoid-type chart ``[cosh x cos y, cosh x sin y, x]``."""
    x, y = P[:, 0], P[:, 1]
    return np.column_stack([np.cosh(x) * np.cos(y), np.cosh(x) * np.sin(y), x])


def phi2(P):
    """Cylinder chart ``[cos y, sin y, x]``."""
    x, y = P[:, 0], P[:, 1]
    return np.column_stack([np.cos(y), np.sin(y), x])


def jac_to_bc(J):
    from .beltrami2d import analytic_bc_field
    return analytic_bc_field(J[:, 0, 0], J[:, 0, 1], J[:, 1, 0], J[:, 1, 1])


@dataclass
class Instance:
    """A benchmark case: cloud(s) plus analytic map data."""

    name: str
    cloud: PointCloud | None
    func: Callable | None = None
    jacobian: Callable | None = None
    extras: dict = field(default_factory=dict)

    def targets(self) -> np.ndarray:
        return self.func(self.cloud.points)

    def bc(self, P=None) -> np.ndarray:
        P = self.cloud.points if P is None else P
        return jac_to_bc(self.jacobian(P))


PLANAR_MAPS = {
    "f1": (_f1, _f1_jac),
    "f2": (_f2, _f2_jac),
    "f3": (_f3, _f3_jac),
    "fig2_map": (_fig2, _fig2_jac),
}
CATALOG = ("table1_fn", "f1", "f2", "f3", "fig2_map", "phi1_phi2", "perturbed_grid", "mesh_vertices")


def builtin_instance(name: str, resolution: int | None = None, seed: int = 0) -> Instance:
    """Catalog lookup.

    ``resolution`` is points per side for grid-based cases and the point
    count for ``mesh_vertices``. Planar maps default to a regular grid;
    ``perturbed_grid`` carries f2 and ``mesh_vertices`` carries f3, as in
    the solver experiments.
    """
    if name not in CATALOG:
        raise CatalogError(f"unknown instance {name!r}; valid names: {', '.join(CATALOG)}")
    if name == "mesh_vertices":
        count = MESH_COUNTS[0] if resolution is None else int(resolution)
        pc = PointCloud(mesh_vertex_cloud(count, seed))
        return Instance(name, pc, _f3, _f3_jac, {"seed": seed})
    m = 25 if resolution is None else int(resolution)
    if name == "perturbed_grid":
        return Instance(name, PointCloud(jittered_grid(m, seed)), _f2, _f2_jac, {"seed": seed})
    pc = PointCloud(grid_points(m))
    if name == "table1_fn":
        return Instance(name, pc, extras={"scalar": table1_fn})
    if name == "phi1_phi2":
        return Instance(name, pc, _fig2, _fig2_jac, {"phi1": phi1, "phi2": phi2})
    func, jac = PLANAR_MAPS[name]
    inst = Instance(name, pc, func, jac)
    mu = inst.bc()
    if not np.all(np.abs(mu) < 1):
        raise CatalogError(f"builtin map {name} is not quasi-conformal on its domain")
    return inst

"""Convergence experiments: run a quantity over refinements and fit rates.

Rates are least-squares slopes of ``log(error)`` against ``log(h)``, so a
second-order method has slope 2.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .beltrami2d import PlanarMap, angle_distortion, covariance_predictions, pcbc
from .errors import CatalogError, PcqcError, SpecError
from .instances import CATALOG, MESH_COUNTS, builtin_instance, grid_points, phi1, phi2
from .mls import MlsConfig, MlsFit
from .pointcloud import PointCloud, cloud_stats
from .solvers import EfgConfig, QcProblem, detect_boundary, relative_error, solve_qc_map

QUANTITIES = ("derivatives", "bc", "angle", "covariance", "solve", "surface")


@dataclass
class ExperimentSpec:
    """What to measure, on which instance, at which resolutions.

    ``resolutions`` are points per side for grid instances and point counts
    for ``mesh_vertices``. ``mls`` holds ``MlsConfig`` fields; ``solver``
    holds ``formulation``, ``method`` and optionally ``efg`` (``EfgConfig``
    fields) for the ``solve`` quantity.
    """

    name: str
    instance: str
    resolutions: list
    quantities: list
    mls: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    seed: int = 0
    metric: str = "sup"

    def __post_init__(self):
        self.resolutions = [int(r) for r in self.resolutions]
        self.quantities = list(self.quantities)
        self.validate()

    def validate(self) -> None:
        if self.instance not in CATALOG:
            raise CatalogError(f"unknown instance {self.instance!r}; valid names: {', '.join(CATALOG)}")
        if not self.resolutions or any(b <= a for a, b in zip(self.resolutions, self.resolutions[1:])):
            raise SpecError("resolutions must be a non-empty strictly increasing list")
        bad = [q for q in self.quantities if q not in QUANTITIES]
        if bad or not self.quantities:
            raise SpecError(f"unknown quantities {bad}; valid: {', '.join(QUANTITIES)}")
        if self.metric not in ("sup", "mean"):
            raise SpecError("metric must be 'sup' or 'mean'")
        try:
            self.mls_config()
            self.efg_config()
        except TypeError as exc:
            raise SpecError(f"bad configuration: {exc}") from exc
        if "solve" in self.quantities:
            if self.solver.get("formulation", "beltrami") not in ("beltrami", "glaplace"):
                raise SpecError("solver.formulation must be beltrami or glaplace")
            if self.solver.get("method", "collocation") not in ("collocation", "efg"):
                raise SpecError("solver.method must be collocation or efg")

    def mls_config(self) -> MlsConfig:
        return MlsConfig(**self.mls)

    def efg_config(self) -> EfgConfig:
        return EfgConfig(**self.solver.get("efg", {}))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise SpecError(f"unknown spec keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class ConvergenceReport:
    spec: dict
    rows: list
    slopes: dict
    per_interval_slopes: dict
    failures: list

    def to_dict(self, timings: bool = True) -> dict:
        rows = [dict(r) for r in self.rows]
        if not timings:
            for r in rows:
                r.pop("runtime", None)
        return {"spec": self.spec, "rows": rows, "slopes": self.slopes,
                "per_interval_slopes": self.per_interval_slopes, "failures": self.failures}

    def to_json(self, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ConvergenceReport":
        d = json.loads(text)
        return cls(d["spec"], d["rows"], d["slopes"], d["per_interval_slopes"], d["failures"])

    def series(self, metric: str):
        """``(h, error)`` arrays over rows that report ``metric``."""
        pts = [(r["h"], r["metrics"][metric]) for r in self.rows if metric in r["metrics"]]
        return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])


def fit_slope(h, err) -> float:
    """Least-squares slope of ``log err`` against ``log h``; NaN with fewer than 3 usable rows."""
    h, err = np.asarray(h, dtype=float), np.asarray(err, dtype=float)
    ok = (h > 0) & (err > 0) & np.isfinite(err)
    if ok.sum() < 3:
        return float("nan")
    return float(np.polyfit(np.log(h[ok]), np.log(err[ok]), 1)[0])


def interval_slopes(h, err) -> list:
    h, err = np.asarray(h, dtype=float), np.asarray(err, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.diff(np.log(err)) / np.diff(np.log(h))
    return [float(v) for v in s]


def _norm(v, metric):
    v = np.abs(np.asarray(v))
    v = v[np.isfinite(v)]
    return float(v.max() if metric == "sup" else v.mean())


# quantity evaluators: (spec, resolution) -> (h, metrics)

def _derivatives(spec, res, cfg):
    inst = builtin_instance("table1_fn", res)
    pc = inst.cloud
    f, grad = inst.extras["scalar"](pc.points)
    fit = MlsFit(pc, config=cfg, derivs=True)
    out = {}
    for flavor in ("diffuse", "standard"):
        v, d1, d2 = fit.gradient(f, flavor)
        out[flavor] = max(_norm(v - f, spec.metric), _norm(d1 - grad[:, 0], spec.metric),
                          _norm(d2 - grad[:, 1], spec.metric))
    return out


def _planar(spec, res):
    name = spec.instance if spec.instance in ("f1", "f2", "f3", "fig2_map", "perturbed_grid",
                                               "mesh_vertices") else "fig2_map"
    return builtin_instance(name, res, spec.seed)


def _bc(spec, res, cfg):
    inst = _planar(spec, res)
    fm = PlanarMap(inst.cloud, inst.targets())
    mu = inst.bc()
    fit = MlsFit(inst.cloud, config=cfg, derivs=True)
    return {f"bc_{fl}": _norm(pcbc(fm, fl, cfg, fit=fit).values - mu, spec.metric)
            for fl in ("diffuse", "standard")}


def _angle(spec, res, cfg):
    inst = _planar(spec, res)
    a = angle_distortion(PlanarMap(inst.cloud, inst.targets()), cfg)
    return {"angle_change": a.max_change}


def _covariance(spec, res, cfg):
    inst = _planar(spec, res)
    P = inst.cloud.points
    h = cloud_stats(inst.cloud).fill_estimate
    lo, hi = P.min(axis=0) + 2 * h - 1e-12, P.max(axis=0) - 2 * h + 1e-12
    inner = np.flatnonzero(np.all((P >= lo) & (P <= hi), axis=1))
    b = covariance_predictions(PlanarMap(inst.cloud, inst.targets()), cfg, inner)
    return {"ratio_error": _norm(b.ratio_error, spec.metric), "axis_error": _norm(b.axis_error, spec.metric)}


def _solve(spec, res, cfg):
    inst = _planar(spec, res)
    pc, F, mu = inst.cloud, inst.targets(), inst.bc()
    B = detect_boundary(pc)
    prob = QcProblem(pc, mu, B, F[B], spec.solver.get("formulation", "beltrami"),
                     spec.solver.get("method", "collocation"))
    sol = solve_qc_map(prob, cfg, spec.efg_config())
    fit = MlsFit(pc, config=cfg, derivs=True)
    out = {"map_error": relative_error(sol.map.targets, F)}
    for fl in ("diffuse", "standard"):
        out[f"bc_{fl}"] = relative_error(pcbc(sol.map, fl, cfg, fit=fit).values, mu)
    return out


def surface_experiment(m: int, cfg: MlsConfig = MlsConfig()) -> dict:
    """Two sampled surfaces related by a known map, parameterized and compared.

    The source is the catenoid-type chart over an ``m x m`` grid, the target
    the cylinder chart composed with the planar test map. Both are
    parameterized with chart values on the boundary.
    """
    from .beltrami_surface import SurfacePointMap, pcbr, surface_covariance_prediction
    from .instances import _fig2, _fig2_jac, jac_to_bc
    from .parameterization import ChartBoundary, conformal_parameterize

    P = grid_points(m)
    B = detect_boundary(PointCloud(P))
    FP = _fig2(P)
    P1, P2 = phi1(P), phi2(FP)
    par1 = conformal_parameterize(PointCloud(P1), ChartBoundary(B, P[B]), cfg)
    par2 = conformal_parameterize(PointCloud(P2), ChartBoundary(B, FP[B]), cfg)
    mu0 = jac_to_bc(_fig2_jac(P))
    out = {"param_error_1": float(np.abs(par1.plane_coords - P).max()),
           "param_error_2": float(np.abs(par2.plane_coords - FP).max()),
           "grade_1": par1.e_grade, "grade_2": par2.e_grade}
    rep = {}
    for fl in ("diffuse", "standard"):
        rep[fl] = pcbr(None, par1, par2, fl, cfg)
        out[f"pcbr_{fl}"] = float(np.abs(rep[fl].values - mu0).max())
    p = int(np.argmin(np.linalg.norm(P - 0.5, axis=1)))
    pred = surface_covariance_prediction(SurfacePointMap(PointCloud(P1), P2), par1, p, cfg,
                                         mu=rep["diffuse"].values[p])
    out.update(ratio_error=pred.ratio_error, lambda3_source=abs(pred.lambda3[0]),
               lambda3_image=abs(pred.lambda3[1]), axis_error_1=float(pred.axis_errors[0]),
               axis_error_2=float(pred.axis_errors[1]))
    return out


def _surface(spec, res, cfg):
    return surface_experiment(res, cfg)


_EVAL = {"derivatives": _derivatives, "bc": _bc, "angle": _angle, "covariance": _covariance,
         "solve": _solve, "surface": _surface}


def resolution_h(instance: str, res: int, seed: int = 0) -> float:
    """Length scale reported for a resolution: grid spacing, or the fill estimate of irregular clouds."""
    if instance == "mesh_vertices" or instance == "perturbed_grid":
        return cloud_stats(builtin_instance(instance, res, seed).cloud).fill_estimate
    return 1.0 / (res - 1)


def run_convergence(spec: ExperimentSpec) -> ConvergenceReport:
    """Evaluate every quantity at every resolution; failures are recorded, not raised."""
    cfg = spec.mls_config()
    rows, failures = [], []
    for res in spec.resolutions:
        t0 = time.perf_counter()
        metrics = {}
        try:
            h = resolution_h(spec.instance, res, spec.seed)
        except PcqcError as exc:
            failures.append({"resolution": res, "quantity": "instance", "error": f"{type(exc).__name__}: {exc}"})
            continue
        for q in spec.quantities:
            try:
                metrics.update(_EVAL[q](spec, res, cfg))
            except PcqcError as exc:
                failures.append({"resolution": res, "quantity": q, "error": f"{type(exc).__name__}: {exc}"})
        rows.append({"resolution": res, "h": h, "metrics": metrics,
                     "runtime": time.perf_counter() - t0})
    names = sorted({k for r in rows for k in r["metrics"]})
    slopes, per = {}, {}
    for name in names:
        pts = [(r["h"], r["metrics"][name]) for r in rows if name in r["metrics"]]
        h = [p[0] for p in pts]
        e = [p[1] for p in pts]
        slopes[name] = fit_slope(h, e)
        per[name] = interval_slopes(h, e)
    return ConvergenceReport(spec.to_dict(), rows, slopes, per, failures)


TABLE1_SIZES = (25, 33, 49, 65, 97, 129)


def weights_bench(sizes=TABLE1_SIZES, kernels=("gauss", "wendland", "cubic"), metric: str = "mean",
                  radius_factor: float = 6.0) -> list:
    """Derivative benchmark over kernels and derivative flavors.

    Radius neighbourhoods with ``delta = radius_factor * h`` where ``h`` is
    the separation distance. The error is the largest, over the value and
    both first derivatives, of the mean absolute (or ``metric="sup"``)
    error on the grid.
    """
    out = []
    for m in sizes:
        inst = builtin_instance("table1_fn", m)
        pc = inst.cloud
        f, grad = inst.extras["scalar"](pc.points)
        for kernel in kernels:
            cfg = MlsConfig(kernel=kernel, strategy="radius", radius_factor=radius_factor,
                            h_source="separation")
            fit = MlsFit(pc, config=cfg, derivs=True)
            for flavor in ("diffuse", "standard"):
                v, d1, d2 = fit.gradient(f, flavor)
                err = max(_norm(v - f, metric), _norm(d1 - grad[:, 0], metric), _norm(d2 - grad[:, 1], metric))
                out.append({"size": m, "kernel": kernel, "flavor": flavor, "error": err})
    return out


__all__ = ["ExperimentSpec", "ConvergenceReport", "fit_slope", "interval_slopes", "run_convergence",
           "weights_bench", "surface_experiment", "MESH_COUNTS", "QUANTITIES", "TABLE1_SIZES"]

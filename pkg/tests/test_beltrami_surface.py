import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcqc.beltrami2d import PlanarMap, covariance_prediction, pcbc
from pcqc.beltrami_surface import (
    ParamPair,
    SurfaceMap,
    SurfacePointMap,
    conformality_grade,
    pcbr,
    projected_map,
    surface_angle_distortion,
    surface_bc,
    surface_covariance_prediction,
)
from pcqc.errors import InterfaceError
from pcqc.instances import builtin_instance, grid_points, phi1, phi2
from pcqc.pointcloud import PointCloud


def lift(P2):
    return np.column_stack([P2, np.zeros(len(P2))])


def chart_pair(chart, m, perm_seed=None):
    P = grid_points(m)
    S = chart(P)
    if perm_seed is None:
        return ParamPair(PointCloud(S), PointCloud(P), None)
    perm = np.random.default_rng(perm_seed).permutation(len(P))
    # surface point i sits at plane point perm[i]
    Q = np.empty_like(P)
    Q[perm] = P
    return ParamPair(PointCloud(S), PointCloud(Q), perm)


@pytest.mark.parametrize("flavor", ["diffuse", "standard"])
def test_flat_identity_and_stretch(grid17, flavor):
    P = grid17.points
    ident = surface_bc(SurfaceMap(grid17, lift(P)), flavor)
    assert np.abs(ident.values).max() < 1e-12
    stretch = surface_bc(SurfaceMap(grid17, lift(P * [2.0, 1.0])), flavor)
    assert np.abs(stretch.values - 1 / 3).max() < 1e-10


@pytest.mark.parametrize("flavor,form", [("diffuse", "printed"), ("standard", "full")])
def test_planar_reduction(flavor, form):
    inst = builtin_instance("fig2_map", 17)
    F = inst.targets()
    flat = surface_bc(SurfaceMap(inst.cloud, lift(F)), flavor, standard_form=form)
    plane = pcbc(PlanarMap(inst.cloud, F), flavor)
    assert np.abs(np.abs(flat.values) - np.abs(plane.values)).max() < 1e-8


def test_standard_forms_and_gap():
    inst = builtin_instance("fig2_map", 17)
    smap = SurfaceMap(inst.cloud, phi2(inst.targets()))
    printed = surface_bc(smap, "standard")
    full = surface_bc(smap, "standard", standard_form="full")
    gap = printed.diagnostics["consistency_gap"]
    assert gap == pytest.approx(np.abs(printed.values - full.values).max())
    assert full.diagnostics["standard_form"] == "full"
    truth = np.abs(inst.bc())
    for f in (printed, full):
        assert np.abs(np.abs(f.values) - truth).max() < 5e-3
    with pytest.raises(InterfaceError):
        surface_bc(smap, "standard", standard_form="other")


def test_surface_map_validation(grid17):
    with pytest.raises(InterfaceError):
        SurfaceMap(grid17, np.zeros((len(grid17), 2)))
    with pytest.raises(InterfaceError):
        SurfaceMap(PointCloud(lift(grid17.points)), lift(grid17.points))
    with pytest.raises(InterfaceError):
        SurfacePointMap(grid17, lift(grid17.points))


@pytest.mark.parametrize("chart", [phi1, phi2])
def test_conformal_charts_have_small_grade(chart):
    # both charts are conformal, so the grade is discretization error only
    g = [conformality_grade(chart_pair(chart, m)) for m in (9, 17, 33)]
    assert g[2] < 1e-3
    assert g[0] > g[1] > g[2]


def test_param_pair_validation(grid17):
    S = PointCloud(lift(grid17.points))
    with pytest.raises(InterfaceError):
        ParamPair(grid17, grid17, None)
    with pytest.raises(InterfaceError):
        ParamPair(S, PointCloud(grid_points(5)), None)
    bad = np.arange(len(grid17))
    bad[0] = 1
    with pytest.raises(InterfaceError):
        ParamPair(S, grid17, bad)


def test_param_pair_correspondence_roundtrip():
    a = chart_pair(phi1, 9)
    b = chart_pair(phi1, 9, perm_seed=4)
    assert np.array_equal(a.plane_coords, b.plane_coords)
    sa, sb = a.surface_map(), b.surface_map()
    order = np.lexsort(sb.source.points.T[::-1])
    assert np.array_equal(sb.targets[order], sa.targets[np.lexsort(sa.source.points.T[::-1])])


def test_pcbr_identity_and_relabelling():
    a = chart_pair(phi1, 13)
    assert np.abs(pcbr(None, a, a).values).max() < 1e-12
    # the same surface with shuffled labels, matched by the index bijection
    perm = np.random.default_rng(0).permutation(len(a.plane_coords))
    inv = np.argsort(perm)
    b = ParamPair(PointCloud(a.surface_cloud.points[inv]), PointCloud(a.plane_coords[inv]), None)
    assert np.abs(pcbr(perm, a, b).values).max() < 1e-12


def test_projected_map_errors():
    a, c = chart_pair(phi1, 9), chart_pair(phi1, 11)
    with pytest.raises(InterfaceError):
        projected_map(None, a, c)
    with pytest.raises(InterfaceError):
        projected_map(np.zeros(81, dtype=int), a, a)


@given(alpha=st.floats(-np.pi, np.pi))
def test_pcbr_rotation_law(alpha):
    # rotating the source parameter domain turns the representation by 2 alpha
    rng = np.random.default_rng(7)
    Q = rng.random((150, 2))
    S = PointCloud(lift(Q))
    k = 0.3 + 0.1j
    z = Q[:, 0] + 1j * Q[:, 1]
    w = z + k * np.conj(z) + 0.2 * z**2
    base = ParamPair(S, PointCloud(Q), None)
    img = ParamPair(S, PointCloud(np.column_stack([w.real, w.imag])), None)
    zr = z * np.exp(1j * alpha)
    rot = ParamPair(S, PointCloud(np.column_stack([zr.real, zr.imag])), None)
    mu0 = pcbr(None, base, img).values
    mu1 = pcbr(None, rot, img).values
    assert np.abs(mu1 - mu0 * np.exp(2j * alpha)).max() < 1e-8


def test_surface_angle_distortion_isometry():
    pair = chart_pair(phi1, 13)
    c, s = np.cos(0.4), np.sin(0.4)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    P = pair.surface_cloud.points
    res = surface_angle_distortion(SurfacePointMap(pair.surface_cloud, P @ R.T + 1.0), pair)
    assert res.max_change < 1e-12
    assert res.degenerate_pairs == 0


def test_flat_covariance_prediction_matches_planar():
    inst = builtin_instance("fig2_map", 17)
    P, F = inst.cloud.points, inst.targets()
    pair = ParamPair(PointCloud(lift(P)), inst.cloud, None)
    p = 8 * 17 + 8
    mu = pcbc(PlanarMap(inst.cloud, F)).values[p]
    surf = surface_covariance_prediction(SurfacePointMap(pair.surface_cloud, lift(F)), pair, p, mu=mu)
    flat = covariance_prediction(PlanarMap(inst.cloud, F), p)
    assert surf.predicted_ratio == pytest.approx(flat.predicted_ratio, rel=1e-9)
    assert surf.measured_ratio == pytest.approx(flat.measured_ratio, rel=1e-9)
    assert abs(surf.predicted_dirs[0][:2] @ flat.predicted_axis) == pytest.approx(1.0, abs=1e-9)
    assert surf.lambda3 == (0.0, 0.0)

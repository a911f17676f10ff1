import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcqc.beltrami2d import (
    PlanarMap,
    analytic_bc,
    angle_distortion,
    cholesky_normalizer,
    compose_bc,
    covariance_prediction,
    covariance_predictions,
    dilation,
    pcbc,
    sigma_from_covariance,
)
from pcqc.errors import (
    DegenerateCompositionError,
    DegenerateJacobianError,
    FactorizationError,
    InterfaceError,
    NotQuasiConformalError,
)
from pcqc.instances import builtin_instance, jittered_grid
from pcqc.mls import MlsConfig
from pcqc.pointcloud import Neighborhood, PointCloud, covariance_of

unit_disk = st.tuples(st.floats(0, 0.95), st.floats(-np.pi, np.pi)).map(lambda t: t[0] * np.exp(1j * t[1]))


def linear_map(k, a=1.0 + 0j):
    """Targets of z -> a z + k conj(z)."""
    def f(P):
        z = P[:, 0] + 1j * P[:, 1]
        w = a * z + k * np.conj(z)
        return np.column_stack([w.real, w.imag])
    return f


def test_analytic_bc_examples():
    assert analytic_bc(np.eye(2)) == 0
    k = 0.3 - 0.2j
    J = [[1 + k.real, k.imag], [k.imag, 1 - k.real]]
    assert analytic_bc(J) == pytest.approx(k, abs=1e-15)
    with pytest.raises(DegenerateJacobianError):
        analytic_bc([[1, 0], [0, -1]])
    with pytest.raises(InterfaceError):
        analytic_bc(np.eye(3))


@pytest.mark.parametrize("flavor", ["diffuse", "standard"])
def test_pcbc_identity_and_linear(jitter17, flavor):
    ident = pcbc(PlanarMap(jitter17, jitter17.points), flavor)
    assert np.abs(ident.values).max() < 1e-12
    assert ident.pcqc and ident.sup_norm < 1e-12
    lin = pcbc(PlanarMap.from_function(jitter17, linear_map(0.3)), flavor)
    assert np.abs(lin.values - 0.3).max() < 1e-10


@given(k=unit_disk, a=unit_disk.filter(lambda a: abs(a) > 0.2))
def test_pcbc_affine_models(k, a):
    # z -> a z + k conj(z) has coefficient k / a, defined whenever |k| < |a|
    if abs(k) >= 0.98 * abs(a):
        return
    pc = PointCloud(jittered_grid(11, seed=1))
    fm = PlanarMap.from_function(pc, linear_map(k, a))
    for flavor in ("diffuse", "standard"):
        assert np.abs(pcbc(fm, flavor).values - k / a).max() < 1e-10


def test_pcbc_flags_undefined_points(grid17):
    fm = PlanarMap(grid17, grid17.points * [1.0, -1.0])
    field = pcbc(fm)
    assert not field.valid.any()
    assert not field.pcqc
    assert field.diagnostics["undefined"] == len(grid17)


def test_pcbc_rejects_bad_maps(grid17):
    with pytest.raises(InterfaceError):
        PlanarMap(grid17, np.zeros((3, 2)))
    with pytest.raises(InterfaceError):
        pcbc(PlanarMap(grid17, grid17.points), "fancy")


def test_pcbc_accuracy_on_smooth_map():
    inst = builtin_instance("fig2_map", 33)
    fm = PlanarMap(inst.cloud, inst.targets())
    for flavor in ("diffuse", "standard"):
        assert np.abs(pcbc(fm, flavor).values - inst.bc()).max() < 1e-3


def test_compose_examples():
    assert compose_bc(0.3 + 0.1j, 0.3 + 0.1j, 2 - 1j) == 0
    assert compose_bc(0.4j, 0.0, 1.0) == pytest.approx(0.4j)
    with pytest.raises(DegenerateCompositionError):
        compose_bc(0.5, 2.0, 1.0)
    with pytest.raises(DegenerateCompositionError):
        compose_bc(0.5, 0.0, 0.0)


@given(mu=unit_disk, alpha=st.floats(-np.pi, np.pi))
def test_compose_rotation_law(mu, alpha):
    out = compose_bc(mu, 0.0, np.exp(1j * alpha))
    assert abs(out - mu * np.exp(2j * alpha)) < 1e-12
    assert abs(abs(out) - abs(mu)) < 1e-12


def test_dilation():
    assert dilation(0) == 1.0
    assert dilation(1 / 3) == pytest.approx(2.0)
    assert 1000 < dilation(0.999) < np.inf
    with pytest.raises(NotQuasiConformalError):
        dilation(1.0)


def test_angle_distortion_identity(jitter17):
    assert angle_distortion(PlanarMap(jitter17, jitter17.points)).max_change == 0.0


@given(a=st.complex_numbers(min_magnitude=0.1, max_magnitude=10), seed=st.integers(0, 1000))
def test_angle_distortion_similarity(a, seed):
    pc = PointCloud(np.random.default_rng(seed).random((150, 2)))
    res = angle_distortion(PlanarMap.from_function(pc, linear_map(0.0, a)))
    assert res.max_change <= 1e-12
    assert res.degenerate_pairs == 0


def test_angle_distortion_counts_collapsed_pairs(grid17):
    T = grid17.points.copy()
    T[1] = T[0]
    res = angle_distortion(PlanarMap(grid17, T), MlsConfig(k=8))
    assert res.degenerate_pairs > 0
    assert np.isfinite(res.max_change)


def disk_sample(n, seed=0):
    rng = np.random.default_rng(seed)
    r = np.sqrt(rng.random(n))
    t = rng.uniform(0, 2 * np.pi, n)
    return np.vstack([[0.0, 0.0], np.column_stack([r * np.cos(t), r * np.sin(t)])])


def whole_cloud(pc):
    return Neighborhood(pc.points[0], np.arange(len(pc)), "radius", 1.0, 1.0)


def test_prediction_linear_map_dense_oracle():
    pc = PointCloud(disk_sample(20000))
    fm = PlanarMap.from_function(pc, linear_map(0.4))
    pred = covariance_prediction(fm, 0, nbhd=whole_cloud(pc))
    img = covariance_of(fm.targets)  # brute-force covariance of the mapped sample
    measured = img.eigenvalues[0] / img.eigenvalues[1]
    assert abs(pred.predicted_ratio - measured) < 1e-3
    assert pred.mu == pytest.approx(0.4, abs=1e-10)
    assert abs(abs(pred.predicted_axis @ img.eigenvectors[:, 0]) - 1) < 1e-9


def isotropic_cloud():
    t = np.arange(8) * np.pi / 4
    rings = [r * np.column_stack([np.cos(t + r), np.sin(t + r)]) for r in (0.5, 1.0, 1.5, 2.0)]
    return PointCloud(np.vstack([[[0.0, 0.0]]] + rings))


def test_prediction_isotropic_neighbourhood():
    pc = isotropic_cloud()
    k = 0.35 * np.exp(0.7j)
    pred = covariance_prediction(PlanarMap.from_function(pc, linear_map(k)), 0, MlsConfig(k=20),
                                 nbhd=whole_cloud(pc))
    assert abs(pred.sigma) < 1e-12
    assert pred.T == pytest.approx(k, abs=1e-10)
    th = np.angle(k) / 2
    assert np.allclose(pred.u0, [np.cos(th), np.sin(th)], atol=1e-10)
    conf = covariance_prediction(PlanarMap.from_function(pc, linear_map(0.0, 2 - 1j)), 0, MlsConfig(k=20),
                                 nbhd=whole_cloud(pc))
    assert abs(conf.T) < 1e-10 and conf.predicted_ratio == pytest.approx(1.0, abs=1e-9)


@given(mu=unit_disk, seed=st.integers(0, 100))
def test_prediction_invariants(mu, seed):
    pc = PointCloud(jittered_grid(9, seed=seed))
    pred = covariance_prediction(PlanarMap.from_function(pc, linear_map(mu)), 40)
    aT = abs(pred.T)
    assert aT < 1
    assert pred.predicted_ratio >= 1
    assert pred.predicted_ratio * (1 - aT) ** 2 == pytest.approx((1 + aT) ** 2, rel=1e-12)
    assert np.linalg.norm(pred.predicted_axis) == pytest.approx(1.0)
    assert pred.measured_axis @ pred.predicted_axis >= 0


def test_batch_matches_single_predictions():
    inst = builtin_instance("fig2_map", 17)
    fm = PlanarMap(inst.cloud, inst.targets())
    centers = np.array([20, 100, 144, 200])
    batch = covariance_predictions(fm, centers=centers)
    for j, p in enumerate(centers):
        one = covariance_prediction(fm, int(p))
        assert batch.T[j] == pytest.approx(one.T, abs=1e-12)
        assert batch.predicted_ratio[j] == pytest.approx(one.predicted_ratio, rel=1e-12)
        assert np.allclose(batch.predicted_axis[j], one.predicted_axis, atol=1e-12)
        assert np.allclose(batch.measured_axis[j], one.measured_axis, atol=1e-12)
        assert batch.measured_ratio[j] == pytest.approx(one.measured_ratio, rel=1e-10)


def test_cholesky_normalizer():
    g = cholesky_normalizer(np.eye(2))
    assert np.allclose(g.U, np.eye(2))
    rng = np.random.default_rng(0)
    S = rng.normal(size=(500, 2)) @ np.diag([2.0, 1.0])
    cov = covariance_of(S)
    g = cholesky_normalizer(cov)
    assert np.allclose(g.U.T @ g.U, cov.matrix, atol=1e-12)
    assert np.allclose(covariance_of(g(S)).matrix, np.eye(2), atol=1e-10)
    g = cholesky_normalizer(np.diag([4.0, 1.0]))
    assert np.allclose(g.U, np.diag([2.0, 1.0]))
    with pytest.raises(FactorizationError):
        cholesky_normalizer(np.diag([1.0, -1.0]))


@given(seed=st.integers(0, 10_000))
def test_normalizer_coefficient_matches_sigma(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(2, 2))
    if abs(np.linalg.det(A)) < 0.1:
        return
    cov = covariance_of(rng.normal(size=(400, 2)) @ A)
    g = cholesky_normalizer(cov)
    assert analytic_bc(g.matrix) == pytest.approx(sigma_from_covariance(cov), abs=1e-10)

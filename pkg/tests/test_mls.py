import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcqc.errors import ParameterError, SingularFitError
from pcqc.instances import grid_points, jittered_grid, table1_fn
from pcqc.mls import (
    MlsConfig,
    MlsFit,
    WeightKernel,
    basis_eval,
    diffuse_jet,
    mls_system,
    shape_functions,
    standard_jet,
    weight_eval,
)
from pcqc.pointcloud import Neighborhood, PointCloud, neighborhood

KERNELS = ("gauss", "wendland", "cubic")
H = 1.0 / 16


def kernel(kind, delta=4 * H):
    return WeightKernel(kind, h=0.5 * H if kind == "gauss" else None, delta=delta)


def radius_setup(pc, x, kind, delta=4 * H):
    return kernel(kind, delta), neighborhood(pc, x, "radius", radius=delta)


def quad_field(c, P):
    x, y = P[:, 0], P[:, 1]
    return c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y


def quad_grad(c, x):
    return (c[1] + 2 * c[3] * x[0] + c[4] * x[1], c[2] + c[4] * x[0] + 2 * c[5] * x[1])


def lstsq_oracle(pc, x, kern, members):
    """Weighted least squares in the shifted basis, solved by a generic dense solver."""
    D = pc.points[members] - x
    d = np.linalg.norm(D, axis=1) / kern.delta
    w, _ = weight_eval(kern, d)
    Q = np.column_stack([np.ones(len(D)), D[:, 0], D[:, 1], D[:, 0] ** 2, D[:, 0] * D[:, 1], D[:, 1] ** 2])
    sw = np.sqrt(w)
    return np.linalg.pinv(sw[:, None] * Q, rcond=1e-14) * sw[None, :]


def test_weight_examples():
    w, _ = weight_eval(WeightKernel("wendland"), 0.0)
    assert w == 1.0
    w, _ = weight_eval(WeightKernel("wendland"), 1.0)
    assert w == 0.0
    # cubic branch point s = d^2 = 0.5: both branches give 1/6
    w, _ = weight_eval(WeightKernel("cubic"), np.sqrt(0.5))
    assert w == pytest.approx(1 / 6, abs=1e-14)
    for s in (0.5 - 1e-9, 0.5 + 1e-9):
        assert weight_eval(WeightKernel("cubic"), np.sqrt(s))[0] == pytest.approx(1 / 6, abs=1e-8)
    with pytest.raises(ParameterError):
        WeightKernel("gauss", h=-1.0, delta=1.0)
    with pytest.raises(ParameterError):
        WeightKernel("gauss", h=1.0, delta=0.0)
    with pytest.raises(ParameterError):
        WeightKernel("triangle")


@pytest.mark.parametrize("kind", KERNELS)
def test_weights_nonnegative_and_compact(kind):
    d = np.linspace(0, 1.5, 301)
    w, dw = weight_eval(WeightKernel(kind, h=0.2, delta=1.0), d)
    assert np.all(w >= 0)
    assert np.all(w[d >= 1] == 0)
    # derivative in d against central differences
    e = 1e-6
    inner = (d > 0.01) & (d < 0.99)
    wp, _ = weight_eval(WeightKernel(kind, h=0.2, delta=1.0), d[inner] + e)
    wm, _ = weight_eval(WeightKernel(kind, h=0.2, delta=1.0), d[inner] - e)
    assert np.allclose(dw[inner], (wp - wm) / (2 * e), atol=1e-6)


def test_basis_examples():
    q, q1, q2 = basis_eval((0.0, 0.0))
    assert list(q) == [1, 0, 0, 0, 0, 0] and list(q1) == [0, 1, 0, 0, 0, 0] and list(q2) == [0, 0, 1, 0, 0, 0]
    q, q1, q2 = basis_eval((1.0, 2.0))
    assert list(q) == [1, 1, 2, 1, 2, 4]
    assert list(q1) == [0, 1, 0, 2, 2, 0]
    assert list(q2) == [0, 0, 1, 0, 1, 4]


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_basis_derivative_fd(x1, x2):
    e = 1e-5
    _, q1, q2 = basis_eval((x1, x2))
    fd1 = (basis_eval((x1 + e, x2))[0] - basis_eval((x1 - e, x2))[0]) / (2 * e)
    fd2 = (basis_eval((x1, x2 + e))[0] - basis_eval((x1, x2 - e))[0]) / (2 * e)
    assert np.allclose(q1, fd1, atol=1e-8) and np.allclose(q2, fd2, atol=1e-8)


@pytest.mark.parametrize("kind", KERNELS)
def test_system_constant_reproduction(jitter17, kind):
    x = np.array([0.41, 0.57])
    kern, nb = radius_setup(jitter17, x, kind)
    sysm = mls_system(jitter17, x, kern, nb)
    assert np.allclose(sysm.A @ np.ones(len(nb.member_indices)), [1, 0, 0, 0, 0, 0], atol=1e-10)
    M = sysm.Q.T @ (sysm.W[:, None] * sysm.Q)
    assert np.allclose(M, M.T) and np.all(np.linalg.eigvalsh(M) > 0)


@pytest.mark.parametrize("kind", KERNELS)
@given(st.integers(0, 2**31 - 1))
def test_system_matches_lstsq_oracle(kind, seed):
    rng = np.random.default_rng(seed)
    pc = PointCloud(jittered_grid(17, seed=seed % 97))
    x = rng.uniform(0.1, 0.9, size=2)
    kern, nb = radius_setup(pc, x, kind)
    sysm = mls_system(pc, x, kern, nb)
    ref = lstsq_oracle(pc, x, kern, nb.member_indices)
    assert np.allclose(sysm.A, ref, atol=1e-9 * np.abs(ref).max())
    c = rng.normal(size=6)
    F = quad_field(c, pc.points[nb.member_indices] - x)
    assert np.allclose(sysm.A @ F, c, atol=1e-9 * np.abs(c).max())


def test_collinear_members_are_singular():
    pc = PointCloud(np.column_stack([np.linspace(0, 1, 5), np.zeros(5)]))
    nb = neighborhood(pc, [0.5, 0.0], "knn", k=5)
    with pytest.raises(SingularFitError):
        mls_system(pc, [0.5, 0.0], WeightKernel("wendland", delta=2.0), nb)


@pytest.mark.parametrize("kind", KERNELS)
def test_jets_x_squared(jitter17, kind):
    x = np.array([0.33, 0.61])
    kern, nb = radius_setup(jitter17, x, kind)
    f = jitter17.points[:, 0] ** 2
    for jet in (diffuse_jet(jitter17, f, x, kern, nb), standard_jet(jitter17, f, x, kern, nb)):
        assert jet.value == pytest.approx(x[0] ** 2, abs=1e-12)
        assert jet.d1 == pytest.approx(2 * x[0], abs=1e-10)
        assert jet.d2 == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("kind", KERNELS)
@given(st.integers(0, 2**31 - 1))
def test_diffuse_jet_matches_oracle(kind, seed):
    rng = np.random.default_rng(seed)
    pc = PointCloud(jittered_grid(17, seed=5))
    x = rng.uniform(0.1, 0.9, size=2)
    kern, nb = radius_setup(pc, x, kind)
    f = np.sin(3 * pc.points[:, 0]) * np.exp(pc.points[:, 1])
    jet = diffuse_jet(pc, f, x, kern, nb)
    c = lstsq_oracle(pc, x, kern, nb.member_indices) @ f[nb.member_indices]
    assert np.allclose([jet.value, jet.d1, jet.d2], c[:3], atol=1e-9)


@pytest.mark.parametrize("kind", KERNELS)
def test_standard_constant_field(jitter17, kind):
    x = np.array([0.52, 0.48])
    kern, nb = radius_setup(jitter17, x, kind)
    jet = standard_jet(jitter17, np.ones(len(jitter17)), x, kern, nb)
    assert abs(jet.d1) < 1e-12 and abs(jet.d2) < 1e-12


@pytest.mark.parametrize("kind", KERNELS)
def test_standard_derivative_is_fd_of_approximant(jitter17, kind):
    """Standard derivatives differentiate the global approximant (support radius held fixed)."""
    cfg = MlsConfig(kernel=kind, strategy="radius", h=0.5 * H, radius_factor=8.0)
    f = np.sin(3 * jitter17.points[:, 0]) * np.exp(jitter17.points[:, 1])
    e = 1e-5
    rng = np.random.default_rng(7)
    for x in rng.uniform(0.15, 0.85, size=(10, 2)):
        Xs = np.array([x, x + [e, 0], x - [e, 0], x + [0, e], x - [0, e]])
        fit = MlsFit(jitter17, Xs, cfg, derivs=True)
        v = fit.apply(f)
        _, s1, s2 = fit.standard(f)
        assert s1[0] == pytest.approx((v[1] - v[2]) / (2 * e), abs=1e-6)
        assert s2[0] == pytest.approx((v[3] - v[4]) / (2 * e), abs=1e-6)


@pytest.mark.parametrize("kind", KERNELS)
def test_shape_functions(jitter17, kind):
    rng = np.random.default_rng(11)
    for x in rng.uniform(0.05, 0.95, size=(100, 2)):
        kern, nb = radius_setup(jitter17, x, kind)
        phi = shape_functions(jitter17, x, kern, nb)
        assert abs(phi.sum() - 1.0) < 1e-10
        assert np.allclose(phi @ jitter17.points, x, atol=1e-9)
        assert set(phi.indices) <= set(nb.member_indices)


@pytest.mark.parametrize("kind", KERNELS)
@pytest.mark.parametrize("strategy", ["knn", "radius"])
@given(coef=st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_polynomial_reproduction(kind, strategy, coef):
    pc = PointCloud(jittered_grid(13, seed=2))
    if strategy == "knn":
        cfg = MlsConfig(kernel=kind)
    else:
        cfg = MlsConfig(kernel=kind, strategy="radius", radius_factor=6.0, h=0.5 / 12)
    fit = MlsFit(pc, config=cfg, derivs=True)
    c = np.asarray(coef)
    f = quad_field(c, pc.points)
    g1, g2 = quad_grad(c, pc.points.T)
    scale = 1.0 + np.abs(c).sum()
    for flavor in ("diffuse", "standard"):
        v, d1, d2 = fit.gradient(f, flavor)
        assert np.allclose(v, f, atol=1e-9 * scale)
        assert np.allclose(d1, g1, atol=1e-9 * scale)
        assert np.allclose(d2, g2, atol=1e-9 * scale)


def test_permutation_invariance(jitter17):
    x = np.array([0.44, 0.39])
    kern, nb = radius_setup(jitter17, x, "gauss")
    f = np.cos(2 * jitter17.points[:, 0] + jitter17.points[:, 1])
    perm = np.random.default_rng(0).permutation(nb.member_indices)
    nb2 = Neighborhood(nb.center, perm, nb.strategy, nb.param, nb.radius_used)
    for jet_fn in (diffuse_jet, standard_jet):
        a, b = jet_fn(jitter17, f, x, kern, nb), jet_fn(jitter17, f, x, kern, nb2)
        assert np.allclose([a.value, a.d1, a.d2], [b.value, b.d1, b.d2], atol=1e-12)


def test_fit_agrees_with_single_point_system(jitter17):
    cfg = MlsConfig(kernel="wendland", strategy="radius", h=0.5 * H, radius_factor=8.0)
    fit = MlsFit(jitter17, config=cfg, derivs=True)
    f = np.exp(jitter17.points[:, 0]) * jitter17.points[:, 1]
    i = 100
    x = jitter17.points[i]
    nb = neighborhood(jitter17, x, "radius", radius=4 * H)
    jet = standard_jet(jitter17, f, x, WeightKernel("wendland", delta=4 * H), nb)
    _, s1, s2 = fit.standard(f)
    assert s1[i] == pytest.approx(jet.d1, abs=1e-10) and s2[i] == pytest.approx(jet.d2, abs=1e-10)


def test_matrix_form_matches_apply(grid17):
    fit = MlsFit(grid17, derivs=True)
    f = np.sin(grid17.points[:, 0] + 2 * grid17.points[:, 1])
    for which in ("value", "d1", "s2"):
        assert np.allclose(fit.matrix(which) @ f, fit.apply(f, which), atol=1e-13)


def test_config_validation():
    with pytest.raises(ParameterError):
        MlsConfig(k=5)
    with pytest.raises(ParameterError):
        MlsConfig(strategy="ball")
    with pytest.raises(ParameterError):
        MlsConfig(h_source="median")
    with pytest.raises(ParameterError):
        MlsFit(PointCloud(np.random.default_rng(0).random((30, 3))))


def test_derivative_convergence_slope():
    hs, errs = [], []
    for m in (25, 33, 49, 65, 97, 129):
        pc = PointCloud(grid_points(m))
        f, grad = table1_fn(pc.points)
        fit = MlsFit(pc, config=MlsConfig(), derivs=True)
        e = 0.0
        for flavor in ("diffuse", "standard"):
            v, d1, d2 = fit.gradient(f, flavor)
            e = max(e, np.abs(v - f).max(), np.abs(d1 - grad[:, 0]).max(), np.abs(d2 - grad[:, 1]).max())
        hs.append(1.0 / (m - 1))
        errs.append(e)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= 1.6

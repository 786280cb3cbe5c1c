import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nanol.exceptions import AngleNearPi, NotPSD
from nanol.lie import (
    ConcentratedGaussian, bch_first_order, project_rotation, psd_sqrt, sample_concentrated,
    sem_ad, sem_adjoint, sem_exp, sem_from_parts, sem_hat, sem_inverse, sem_left_jacobian,
    sem_log, sem_right_jacobian, sem_vee, so3_angle, so3_exp, so3_hat, so3_left_jacobian,
    so3_left_jacobian_inv, so3_log, so3_right_jacobian, so3_right_jacobian_inv, so3_vee,
)

from conftest import expm_series, random_rotation_vector, random_state, random_tangent

finite3 = arrays(np.float64, 3, elements=st.floats(-10, 10, allow_nan=False))


# ---------------------------------------------------------------- hat / vee

def test_hat_frozen_value():
    expected = np.array([[0.0, -3.0, 2.0], [3.0, 0.0, -1.0], [-2.0, 1.0, 0.0]])
    np.testing.assert_array_equal(so3_hat([1.0, 2.0, 3.0]), expected)


def test_hat_zero():
    np.testing.assert_array_equal(so3_hat(np.zeros(3)), np.zeros((3, 3)))


@given(finite3, finite3)
def test_hat_is_cross_product(a, b):
    np.testing.assert_allclose(so3_hat(a) @ b, np.cross(a, b), atol=1e-12)


@given(finite3)
def test_vee_hat_roundtrip_exact(phi):
    K = so3_hat(phi)
    np.testing.assert_array_equal(K, -K.T)
    np.testing.assert_array_equal(so3_vee(K), phi)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_sem_vee_hat_roundtrip(rng, m):
    xi = rng.standard_normal(3 + 3 * m)
    np.testing.assert_array_equal(sem_vee(sem_hat(xi)), xi)


# ---------------------------------------------------------------- SO(3)

def test_exp_quarter_turn_about_x():
    expected = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    np.testing.assert_allclose(so3_exp([np.pi / 2, 0.0, 0.0]), expected, atol=1e-15)


def test_exp_zero_is_identity():
    np.testing.assert_array_equal(so3_exp(np.zeros(3)), np.eye(3))


def test_exp_matches_series(rng):
    for _ in range(50):
        phi = random_rotation_vector(rng)
        np.testing.assert_allclose(so3_exp(phi), expm_series(so3_hat(phi), 40), atol=1e-12)


@pytest.mark.parametrize("norm", [0.1, 1.0, 3.0])
def test_log_roundtrip(rng, norm):
    axis = rng.standard_normal(3)
    phi = norm * axis / np.linalg.norm(axis)
    np.testing.assert_allclose(so3_log(so3_exp(phi)), phi, atol=1e-12)


def test_log_identity():
    np.testing.assert_array_equal(so3_log(np.eye(3)), np.zeros(3))


def test_log_near_pi_raises():
    R = so3_exp([0.0, 0.0, np.pi - 1e-5])
    with pytest.raises(AngleNearPi):
        so3_log(R)
    # the angle helper is valid on the cut locus
    assert so3_angle(R) == pytest.approx(np.pi - 1e-5, abs=1e-9)


@pytest.mark.parametrize("scale", [1e-12, 1e-8, 5e-8, 2e-7, 1e-5])
def test_small_angle_branches_agree_with_series(rng, scale):
    phi = scale * rng.standard_normal(3)
    np.testing.assert_allclose(so3_exp(phi), expm_series(so3_hat(phi)), atol=1e-15)
    np.testing.assert_allclose(so3_log(so3_exp(phi)), phi, rtol=1e-6, atol=1e-20)
    J = so3_left_jacobian(phi)
    np.testing.assert_allclose(J @ so3_left_jacobian_inv(phi), np.eye(3), atol=1e-14)


def test_jacobian_frozen_value():
    # closed form about z: J_l = [[s/t, -(1-c)/t, 0], [(1-c)/t, s/t, 0], [0, 0, 1]]
    t = 0.7
    s, c = np.sin(t), np.cos(t)
    expected = np.array([[s / t, -(1 - c) / t, 0.0], [(1 - c) / t, s / t, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(so3_left_jacobian([0.0, 0.0, t]), expected, atol=1e-15)


def test_jacobian_relations(rng):
    for _ in range(100):
        phi = random_rotation_vector(rng)
        Jl, Jr = so3_left_jacobian(phi), so3_right_jacobian(phi)
        np.testing.assert_allclose(Jr, so3_left_jacobian(-phi), atol=1e-15)
        D = Jl - Jr
        np.testing.assert_allclose(D, -D.T, atol=1e-14)
        np.testing.assert_allclose(Jl @ so3_left_jacobian_inv(phi), np.eye(3), atol=1e-10)
        np.testing.assert_allclose(Jr @ so3_right_jacobian_inv(phi), np.eye(3), atol=1e-10)


def test_right_jacobian_finite_difference_second_order(rng):
    phi = random_rotation_vector(rng, 2.5)
    direction = rng.standard_normal(3)
    errs = []
    for h in (1e-3, 1e-4):
        d = h * direction
        lhs = so3_exp(phi + d)
        rhs = so3_exp(phi) @ so3_exp(so3_right_jacobian(phi) @ d)
        errs.append(np.linalg.norm(lhs - rhs))
    assert errs[1] < errs[0] / 50  # ratio 100 for exact second order


def test_project_rotation_restores_orthogonality(rng):
    R = so3_exp(rng.standard_normal(3)) + 1e-6 * rng.standard_normal((3, 3))
    Rp = project_rotation(R)
    np.testing.assert_allclose(Rp @ Rp.T, np.eye(3), atol=1e-14)
    assert np.linalg.det(Rp) == pytest.approx(1.0, abs=1e-14)
    assert np.linalg.norm(Rp - R) < 1e-5


def test_batched_maps_match_loops(rng):
    phis = rng.standard_normal((7, 3))
    batched = so3_exp(phis)
    for k in range(7):
        np.testing.assert_allclose(batched[k], so3_exp(phis[k]), atol=1e-15)
    np.testing.assert_allclose(so3_log(batched), [so3_log(R) for R in batched], atol=1e-15)


# ---------------------------------------------------------------- SE_m(3)

@pytest.mark.parametrize("m", [1, 2, 3])
def test_sem_exp_matches_series_and_log(rng, m):
    for _ in range(30):
        xi = random_tangent(rng, m)
        X = sem_exp(xi)
        np.testing.assert_allclose(X, expm_series(sem_hat(xi), 40), atol=1e-12)
        np.testing.assert_allclose(sem_log(X), xi, atol=1e-9)


def test_sem_exp_pure_translation():
    xi = np.array([0.0, 0.0, 0.0, 1.0, 2.0, 3.0, -4.0, 5.0, 6.0])
    X = sem_exp(xi)
    np.testing.assert_array_equal(X[:3, :3], np.eye(3))
    np.testing.assert_array_equal(X[:3, 3], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(X[:3, 4], [-4.0, 5.0, 6.0])


def test_sem_exp_frozen_value():
    # rotation pi/2 about z with rho=[1,0,0]: p = J_l rho = [2/pi, 2/pi, 0]
    X = sem_exp([0.0, 0.0, np.pi / 2, 1.0, 0.0, 0.0])
    np.testing.assert_allclose(X[:3, 3], [2 / np.pi, 2 / np.pi, 0.0], atol=1e-15)


def test_sem_exp_zero_is_identity():
    np.testing.assert_array_equal(sem_exp(np.zeros(12)), np.eye(6))


@pytest.mark.parametrize("m", [1, 2, 3])
def test_adjoint_identities(rng, m):
    assert np.array_equal(sem_adjoint(np.eye(3 + m)), np.eye(3 + 3 * m))
    for _ in range(50):
        X1, X2 = random_state(rng, m), random_state(rng, m)
        xi = 0.1 * rng.standard_normal(3 + 3 * m)
        np.testing.assert_allclose(X1 @ sem_exp(xi) @ sem_inverse(X1),
                                   sem_exp(sem_adjoint(X1) @ xi), atol=1e-9)
        np.testing.assert_allclose(sem_adjoint(X1 @ X2), sem_adjoint(X1) @ sem_adjoint(X2),
                                   atol=1e-10)


def test_adjoint_block_layout():
    R = so3_exp([0.1, -0.2, 0.3])
    p1, p2 = np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.5, 0.0])
    Ad = sem_adjoint(sem_from_parts(R, p1, p2))
    for i in range(3):
        np.testing.assert_array_equal(Ad[3 * i:3 * i + 3, 3 * i:3 * i + 3], R)
    np.testing.assert_allclose(Ad[3:6, :3], so3_hat(p1) @ R)
    np.testing.assert_allclose(Ad[6:9, :3], so3_hat(p2) @ R)
    assert not np.any(Ad[:3, 3:])


@pytest.mark.parametrize("m", [1, 2, 3])
def test_little_adjoint_is_bracket(rng, m):
    a, b = rng.standard_normal((2, 3 + 3 * m))
    A, B = sem_hat(a), sem_hat(b)
    np.testing.assert_allclose(sem_ad(a) @ b, sem_vee(A @ B - B @ A), atol=1e-12)


def test_right_jacobian_zero_and_so3_block():
    np.testing.assert_array_equal(sem_right_jacobian(np.zeros(9)), np.eye(9))
    phi = np.array([0.4, -1.1, 0.7])
    xi = np.concatenate([phi, np.zeros(6)])
    J = sem_right_jacobian(xi)
    np.testing.assert_allclose(J[:3, :3], so3_right_jacobian(phi), atol=1e-12)
    # degenerate SE_0(3) is SO(3) itself
    np.testing.assert_allclose(sem_right_jacobian(phi), so3_right_jacobian(phi), atol=1e-12)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_right_jacobian_finite_difference(rng, m):
    xi = random_tangent(rng, m, 2.0)
    direction = rng.standard_normal(3 + 3 * m)
    errs = []
    for h in (1e-3, 1e-4):
        d = h * direction
        lhs = sem_exp(xi + d)
        rhs = sem_exp(xi) @ sem_exp(sem_right_jacobian(xi) @ d)
        errs.append(np.linalg.norm(lhs - rhs))
    assert errs[1] < errs[0] / 50


@pytest.mark.parametrize("m", [1, 2, 3])
def test_left_right_jacobian_relation(rng, m):
    for _ in range(20):
        xi = random_tangent(rng, m, 2.5)
        np.testing.assert_allclose(sem_left_jacobian(xi),
                                   sem_adjoint(sem_exp(xi)) @ sem_right_jacobian(xi), atol=1e-10)


def test_group_closure_after_many_compositions(rng):
    X = np.eye(5)
    steps = sem_exp(0.05 * rng.standard_normal((10_000, 9)))
    for S in steps:
        X = X @ S
    R = X[:3, :3]
    assert np.linalg.norm(R @ R.T - np.eye(3)) < 1e-9
    assert abs(np.linalg.det(R) - 1.0) < 1e-9
    np.testing.assert_array_equal(X[3:, :], np.eye(5)[3:, :])


# ---------------------------------------------------------------- BCH

def test_bch_zero_and_commuting():
    x1 = np.array([0.3, 0.1, -0.2, 1.0, 2.0, 3.0])
    np.testing.assert_allclose(bch_first_order(x1, np.zeros(6)), x1)
    a = np.array([0.2, 0.4, 0.0, 0, 0, 0])
    np.testing.assert_allclose(bch_first_order(a, 0.5 * a), 1.5 * a, atol=1e-15)
    np.testing.assert_allclose(bch_first_order(0.5 * a, a, "x1"), 1.5 * a, atol=1e-15)


@pytest.mark.parametrize("which", ["x1", "x2"])
def test_bch_second_order_convergence(rng, which):
    big = random_tangent(rng, 2, 1.5)
    small = rng.standard_normal(9)
    errs = []
    for h in (1e-2, 1e-3):
        s = h * small
        x1, x2 = (s, big) if which == "x1" else (big, s)
        approx = sem_exp(bch_first_order(x1, x2, which))
        errs.append(np.linalg.norm(approx - sem_exp(x1) @ sem_exp(x2)))
    assert errs[1] < errs[0] / 50


def test_bch_bad_flag():
    with pytest.raises(ValueError):
        bch_first_order(np.zeros(6), np.zeros(6), "both")


# ---------------------------------------------------------------- Gaussians

def test_psd_sqrt_zero_and_jitter():
    np.testing.assert_array_equal(psd_sqrt(np.zeros((3, 3))), np.zeros((3, 3)))
    # rank deficient: fails plain Cholesky, succeeds with jitter
    v = np.array([1.0, 2.0, 3.0])
    L = psd_sqrt(np.outer(v, v))
    np.testing.assert_allclose(L @ L.T, np.outer(v, v), atol=1e-10)
    with pytest.raises(NotPSD):
        psd_sqrt(np.diag([1.0, -1.0, 1.0]))


def test_concentrated_gaussian_validation():
    with pytest.raises(ValueError):
        ConcentratedGaussian(np.eye(5), np.eye(6))
    C = np.eye(9)
    C[0, 1] = 1e-6
    with pytest.raises(ValueError):
        ConcentratedGaussian(np.eye(5), C)
    with pytest.raises(NotPSD):
        ConcentratedGaussian(np.eye(5), -np.eye(9))


def test_sample_zero_covariance_is_mean(rng):
    X = random_state(rng, 2)
    g = ConcentratedGaussian(X, np.zeros((9, 9)))
    np.testing.assert_array_equal(sample_concentrated(g, 3), X)


def test_sampling_deterministic(rng):
    g = ConcentratedGaussian(random_state(rng, 2), 0.01 * np.eye(9))
    np.testing.assert_array_equal(sample_concentrated(g, 7, 5), sample_concentrated(g, 7, 5))


def test_sample_moments():
    rng = np.random.default_rng(0)
    A = 0.05 * rng.standard_normal((9, 9))
    cov = A @ A.T + 1e-3 * np.eye(9)
    mean = random_state(rng, 2, 2.0)
    n = 100_000
    X = sample_concentrated(ConcentratedGaussian(mean, cov), 11, n)
    xi = sem_log(sem_inverse(mean) @ X)
    sigma = np.sqrt(np.diag(cov))
    assert np.all(np.abs(xi.mean(axis=0)) < 5 * sigma / np.sqrt(n))
    emp = np.cov(xi.T)
    assert np.max(np.abs(emp - cov)) / np.max(np.abs(cov)) < 0.05
    np.testing.assert_allclose(np.diag(emp), np.diag(cov), rtol=0.05)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 9, elements=st.floats(-3, 3, allow_nan=False)))
def test_log_exp_roundtrip_property(xi):
    # angles up to pi - 1e-3; the log cut sits at trace -1 + 1e-6, i.e. ~1e-11 rad beyond
    limit = np.pi - 1e-3 - 1e-9
    if np.linalg.norm(xi[:3]) > limit:
        xi = xi.copy()
        xi[:3] *= limit / np.linalg.norm(xi[:3])
    np.testing.assert_allclose(sem_log(sem_exp(xi)), xi, atol=1e-9)

import numpy as np
import pytest

from kdvlab.fourier_core import FourierSeries, ModeSet
from kdvlab.homological import TorusField
from kdvlab.normalform import (
    PipelineConfig, TaylorHamiltonian, diagonal_real_defect, build_vector_field, check_imaginary_diagonal,
    default_base_point, full_pipeline, measured_order, normalize_multiplier_quadratic, normalize_smoothing,
    regularize_symbol_step, skew_defect, step1_normalize_linear, step2_normalize_eps2,
    step3_normalize_affine, y_component,
)
from kdvlab.normalform import _eps_linear_defect, affine_block_defect
from kdvlab.paradiff import paraproduct_matrix
from kdvlab.spectrum_melnikov import FrequencyModel
from kdvlab.taylor import Evaluator


def model(J=16, omega=7.3, tail=None):
    tail = {1: 0.5, 3: 0.1} if tail is None else tail
    return FrequencyModel(ModeSet((1,), J), np.array([omega]), tail, 2.0, 0.01)


def cos_theta(L=1):
    f = TorusField.zeros(1, L)
    f.coeffs[L - 1] = f.coeffs[L + 1] = 0.5
    return f


def constant(v, L=1):
    f = TorusField.zeros(1, L)
    f.coeffs[L] = v
    return f


def random_H(seed=1, size=1e-2, **kw):
    return TaylorHamiltonian.random(model(), [[0.5]], np.random.default_rng(seed), L=4, J=16, size=size, **kw)


# --- Hamiltonian steps

def test_step1_cos_example():
    H = TaylorHamiltonian.empty(model(8, omega=1.0), [[0.5]], L=2, J=8)
    H.set_block("P00", (0,), cos_theta())
    H1, gens = step1_normalize_linear(H)
    # F00 = -sin(theta)
    np.testing.assert_allclose(gens["F00"].coeffs, [-0.5j, 0, 0.5j], atol=1e-15)
    assert max(H1.residuals.values()) <= 1e-15
    assert H1.grid.fluctuation(H1.poly.get((1, (0,), "s"))) <= 1e-12
    assert abs(H1.grid.mean(H1.poly.get((1, (0,), "s")))) <= 1e-14


def test_step1_theta_independent_blocks_give_zero_generators():
    H = TaylorHamiltonian.empty(model(), [[0.5]], L=2, J=16)
    H.set_block("P00", (0,), constant(0.3))
    H.set_block("P10", (1,), constant(-0.2))
    H1, gens = step1_normalize_linear(H)
    assert np.max(np.abs(gens["F00"].coeffs)) == 0
    assert np.max(np.abs(gens["F10"][0].coeffs)) == 0
    assert np.max(np.abs(gens["F01"].coeffs)) == 0
    for key in ((1, (0,), "s"), (1, (1,), "s")):
        np.testing.assert_array_equal(H1.poly.get(key), H.poly.get(key))
    np.testing.assert_allclose(H1.normal_form()["omega_hat"], [-0.2])


def test_step1_random_residuals(rng):
    for seed in range(3):
        H1, _ = step1_normalize_linear(random_H(seed))
        assert max(H1.residuals.values()) <= 1e-14
        assert _eps_linear_defect(H1) <= 1e-12


def test_step2_examples():
    H = TaylorHamiltonian.empty(model(8, omega=1.0), [[0.5]], L=2, J=8)
    H.set_block("P00_2", (0,), cos_theta())
    H2, F2 = step2_normalize_eps2(H)
    np.testing.assert_allclose(F2.coeffs, [-0.5j, 0, 0.5j], atol=1e-15)
    assert H2.grid.fluctuation(H2.poly.get((2, (0,), "s"))) <= 1e-12
    H = TaylorHamiltonian.empty(model(8, omega=1.0), [[0.5]], L=2, J=8)
    H.set_block("P00_2", (0,), constant(0.7))
    H2, F2 = step2_normalize_eps2(H)
    assert np.max(np.abs(F2.coeffs)) == 0
    H2, _ = step2_normalize_eps2(random_H(4))
    assert H2.residuals["F2"] <= 1e-14


def test_step3_single_harmonic_division():
    m = model(8)
    H = TaylorHamiltonian.empty(m, [[0.5]], L=2, J=8)
    P = TorusField.zeros(1, 2, 8)
    c = 0.2 + 0.1j
    P.coeffs[3, 8 + 3] = c
    P.coeffs[1, 8 - 3] = np.conj(c)
    H.set_block("P21", (2,), P)
    H3, gens = step3_normalize_affine(H)
    G = gens[(0, (2,), "w1")]
    assert np.count_nonzero(np.abs(G.coeffs) > 1e-15) == 2
    # (omega.d_theta + i Omega) G + P = 0 at (ell, j) = (1, 3)
    np.testing.assert_allclose(G.coeffs[3, 11], -c / (1j * (7.3 + m.Omega(3))), rtol=1e-14)
    assert affine_block_defect(H3) <= 1e-12


def test_step3_constant_P20_enters_Q():
    H = TaylorHamiltonian.empty(model(), [[0.5]], L=2, J=16)
    H.set_block("P20", (2,), constant(0.125))
    H3, gens = step3_normalize_affine(H)
    assert all(np.max(np.abs(g.coeffs)) == 0 for g in gens.values())
    Q = H3.normal_form()["Q"]
    assert Q[(0, (2,))] == pytest.approx(0.25)
    assert Q[(1, (2,))] == pytest.approx(0.125)


def test_lie_series_matches_generator_flow():
    H = random_H(3, size=0.1, quartic=False)
    H1, _ = step1_normalize_linear(H)
    base = default_base_point(H)
    th = np.array([[0.3], [1.7]])
    errs = []
    scales = [0.5, 0.25, 0.125, 0.0625]
    for t in scales:
        p = base.scaled(t)
        y = np.tile(p.y, (2, 1))
        w = np.tile(p.w.resize(H.J).coeffs, (2, 1))
        x = Evaluator(H1.generator).flow(th, y, w, p.eps, steps=16)
        exact = Evaluator(H.poly).value(*x, p.eps)
        series = Evaluator(H1.poly).value(th, y, w, p.eps)
        errs.append(np.max(np.abs(exact - series)))
    slope = np.polyfit(np.log(scales), np.log(errs), 1)[0]
    assert slope >= 3.9  # truncation at degree three


def test_y_component_without_steps_is_first_order():
    H = random_H(5)
    base = default_base_point(H)
    order = measured_order(lambda p: y_component(H, [], p, 32, 4), base)
    assert order == pytest.approx(1.0, abs=0.1)


# --- symbol regularization

def cos_density_H(J=32, amp=0.25):
    m = model(J, tail={})
    H = TaylorHamiltonian.empty(m, [[0.5]], L=2, J=J)
    q = TorusField.zeros(1, 0, 2 * J)
    q.coeffs[0, 2 * J + 1] = q.coeffs[0, 2 * J - 1] = amp
    H.set_block("P02_y", (1,), q)
    return m, H


def test_regularize_cos_coefficient():
    J = 32
    m, H = cos_density_H(J)
    V = build_vector_field(H, 2, m)
    K, c = V.Kx, V.L
    # linear symbol a_1 = y cos(2 pi x) on the y slot, angle-independent
    assert V.sym1[1][c, 1, K + 1] == pytest.approx(0.5)
    assert np.count_nonzero(V.sym1[1]) == 2
    V2, b, _ = regularize_symbol_step(V, 0)
    # b = y sin(2 pi x) / (6 pi)
    assert b[c, 1, K + 1] == pytest.approx(-1j / (12 * np.pi), rel=1e-14)
    assert b[c, 1, K - 1] == pytest.approx(1j / (12 * np.pi), rel=1e-14)
    assert np.count_nonzero(b) == 2
    assert np.max(np.abs(V2.sym1[1])) <= 1e-12


def test_regularize_dense_conjugation():
    """exp(-Y) (i Omega + T_a d) exp(Y) with Y = T_b d^{-1} has no order-one part left."""
    J = 32
    k = np.arange(-J, J + 1)
    perp = ModeSet((1,), J).perp_mask(J)
    P = np.diag(perp.astype(float))
    a = FourierSeries.from_modes(J, {1: 0.5})
    b = FourierSeries.from_modes(J, {1: -1j / (12 * np.pi)})
    T = (P @ paraproduct_matrix(a, J, 1) @ P).astype(np.clongdouble)
    Y = (P @ paraproduct_matrix(b, J, -1) @ P).astype(np.clongdouble)
    two_pi = 2 * np.arccos(np.longdouble(-1))
    iOm = 1j * (two_pi * k.astype(np.longdouble)) ** 3 * perp
    np.testing.assert_allclose(iOm.astype(complex), 1j * model(J, tail={}).Omega(k) * perp, rtol=1e-14)
    ad = lambda Z: Y @ Z - Z @ Y
    term = -ad(T) + Y * (iOm[:, None] - iOm[None, :])
    X = np.diag(iOm) + T + term
    for n in range(2, 40):
        term = -ad(term) / n
        X = X + term
    xi = np.arange(10, 30).astype(np.longdouble)
    vals = np.array([X[int(x) + 1 + J, int(x) + J] for x in xi]) / (1j * two_pi)
    A = np.vstack([xi ** (1 - p) for p in range(8)]).T.astype(float)
    coef = np.linalg.lstsq(A, vals.astype(complex), rcond=None)[0]
    assert abs(coef[0]) <= 1e-12
    # order zero comes from -3 d_x^2 b: -3 (2 pi i) b_1 = -1/2
    assert coef[1] == pytest.approx(-0.5, abs=1e-9)


def test_regularize_constant_coefficient():
    m, H = cos_density_H(16, amp=0.0)
    q = TorusField.zeros(1, 0, 32)
    q.coeffs[0, 32] = 0.2
    H.set_block("P02_y", (1,), q)
    V = build_vector_field(H, 2, m)
    V2, b, _ = regularize_symbol_step(V, 0)
    assert np.max(np.abs(b)) == 0
    assert V2.mult1[1][V.L, 1] == pytest.approx(0.4)
    assert np.count_nonzero(V2.mult1[1]) == 1
    assert np.max(np.abs(V2.sym1[1])) == 0


def test_odd_step_means_vanish_and_diagonal_imaginary():
    H = random_H(7)
    H3 = step3_normalize_affine(step2_normalize_eps2(step1_normalize_linear(H)[0])[0])[0]
    V = build_vector_field(H3, 2)
    assert diagonal_real_defect(V) <= 1e-12
    for n in range(4):
        V, _, _ = regularize_symbol_step(V, n)
        assert diagonal_real_defect(V) <= 1e-12
        if n % 2 == 1:
            assert np.max(np.abs(V.mult1[1 - n])) <= 1e-12


# --- multiplier and smoothing normalization

def test_multiplier_single_coefficient():
    m = model(8)
    V = build_vector_field(TaylorHamiltonian.empty(m, [[0.5]], L=2, J=8), 2, m)
    c = np.zeros((5, 17), dtype=complex)
    c[3, 8 + 2] = c[1, 8 - 2] = 0.3
    V.mult2[0] = c
    V2, gens = normalize_multiplier_quadratic(V)
    assert 0 not in V2.mult2
    Xi = gens[0].coeffs
    assert np.count_nonzero(np.abs(Xi) > 1e-15) == 2
    # pairing Lambda[w] = sum c_j w_{-j}: the coefficient lives at j = -2
    np.testing.assert_allclose(Xi[3, 8 - 2], -0.3 / (1j * (7.3 + m.Omega(-2))), rtol=1e-14)


def test_multiplier_zero_is_identity():
    m = model(8)
    V = build_vector_field(TaylorHamiltonian.empty(m, [[0.5]], L=2, J=8), 2, m)
    V2, gens = normalize_multiplier_quadratic(V)
    assert gens == {}
    assert skew_defect(V2) == 0


def test_smoothing_zero_kernels():
    m = model(8)
    V = build_vector_field(TaylorHamiltonian.empty(m, [[0.5]], L=2, J=8), 2, m)
    V2, S = normalize_smoothing(V)
    for g in S.values():
        assert np.max(np.abs(g.coeffs)) == 0
    assert np.max(np.abs(V2.z_perp)) == 0 and np.max(np.abs(V2.z_theta)) == 0


# --- diagnostics

def test_check_imaginary_diagonal_examples():
    J = 16
    k = np.arange(-J, J + 1)
    m = model(J)
    assert check_imaginary_diagonal(np.diag(1j * m.Omega(k)))[0] == 0
    a = FourierSeries.from_modes(J, {1: 0.4, 2: 0.1 - 0.2j})
    assert check_imaginary_diagonal(paraproduct_matrix(a, J, 1))[0] <= 1e-14
    d2 = np.diag(-(2 * np.pi * k) ** 2.0)
    assert check_imaginary_diagonal(d2)[0] > 1.0
    _, implied = check_imaginary_diagonal(d2, {1: 0.5, 0: 0.3, -1: 0.0, -2: 0.1})
    assert implied == {0: 0.3, -2: 0.1}


def test_measured_order_examples():
    H = TaylorHamiltonian.empty(model(), [[0.5]], L=2, J=16)
    base = default_base_point(H)
    assert measured_order(lambda p: p.y ** 2, base) == pytest.approx(2.0, abs=0.01)
    g = lambda p: p.eps * p.y + np.sum(np.abs(p.w.coeffs) ** 2) * np.max(np.abs(p.w.coeffs))
    assert measured_order(g, base) == pytest.approx(2.0, abs=0.05)
    assert measured_order(lambda p: np.ones(3), base) == pytest.approx(0.0, abs=1e-12)
    assert measured_order(lambda p: np.zeros(3), base) == np.inf


# --- pipeline

def test_zero_perturbation_pipeline():
    rep = full_pipeline(TaylorHamiltonian.empty(model(), [[0.5]], L=4, J=16))
    assert rep.passed
    V = rep.final_field
    assert skew_defect(V) == 0
    assert all(np.max(np.abs(c)) == 0 for c in V.mult1.values())
    assert rep.sections["orders"]["y_component"] == np.inf


def test_random_pipeline():
    rep = full_pipeline(random_H(1), config=PipelineConfig())
    assert rep.passed, rep.failures
    s = rep.sections
    assert max(s[f"step{i}"]["homological_residual"] for i in (1, 2, 3)) <= 1e-10
    assert s["hamiltonian"]["eps_linear_angle_dependence"] <= 1e-12
    assert max(s["multiplier"]["skew_defect_D5"], s["smoothing"]["skew_defect_D6"]) <= 1e-12
    assert max(s["smoothing"][f"residual_{k}"] for k in ("linear", "bilinear", "theta")) <= 1e-10
    assert s["orders"]["y_component"] >= 2.8
    assert s["orders"]["symbol_a"] >= 1.8
    assert "[summary]" in rep.to_text()

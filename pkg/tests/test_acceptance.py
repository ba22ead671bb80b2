"""End-to-end acceptance checks; each test records one PASS/FAIL line via the criterion fixture."""
import hashlib
import time

import numpy as np
import pytest

from kdvlab.cli import main
from kdvlab.fourier_core import FourierSeries, ModeSet, dx_power, multiply, sobolev_norm
from kdvlab.homological import (DivisorBelowThreshold, SmoothingKernel, TorusField, solve_first_melnikov,
                                solve_second_melnikov, solve_theta_quadratic, solve_third_melnikov,
                                solve_torus_transport)
from kdvlab.kdv_sim import cnoidal, projected_runtime
from kdvlab.linpde import LinearPDEProblem, airy_symbol, galerkin_solve, growth_constant
from kdvlab.normalform import TaylorHamiltonian, full_pipeline
from kdvlab.paradiff import (PerturbationDensity, SymbolExpansion, bony_remainder, commutator_expansion,
                             compose_expansion, measured_smoothing, paraproduct)
from kdvlab.spectrum_melnikov import (FrequencyFamily, FrequencyModel, check_melnikov, fermat_cube_scan,
                                      four_wave_scan, measure_estimate)
from test_homological import (first_residual, iomega_l, ld_residual, omega_dot_ell, omega_ld, rand_field,
                              second_residual, third_residual)

PROBES = range(16, 171)


def nf_model(J=16):
    return FrequencyModel(ModeSet((1,), J), np.array([7.3]), {1: 0.5, 3: 0.1}, 2.0, 0.01)


def test_01_bony_identity(criterion):
    rng = np.random.default_rng(0)
    K = 128
    start, worst = time.perf_counter(), 0.0
    for _ in range(100):
        a = FourierSeries.random(K, rng, decay=1.0)
        u = FourierSeries.random(K, rng, decay=1.0)
        rest = paraproduct(a, u, K=2 * K) + paraproduct(u, a, K=2 * K) + bony_remainder(a, u, K=2 * K)
        worst = max(worst, float(np.max(np.abs((multiply(a, u, 2 * K) - rest).coeffs))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-13 and elapsed < 5
    criterion(1, ok, f"max defect {worst:.2e} (<= 1e-13), {elapsed:.1f} s (< 5 s)")
    assert ok


def smooth_pair(K=256, seed=7):
    rng = np.random.default_rng(seed)
    return (FourierSeries.random(6, rng, decay=2).resize(K), FourierSeries.random(6, rng, decay=2).resize(K))


def test_02_composition_remainder(criterion):
    K, N = 256, 2
    a, b = smooth_pair(K)
    start = time.perf_counter()
    C = compose_expansion(SymbolExpansion.single(a, 1, K), SymbolExpansion.single(b, 0, K), N)
    slope = measured_smoothing(C.remainder, PROBES)
    elapsed = time.perf_counter() - start
    ok = slope <= -(N + 1) + 0.5 and elapsed < 30
    criterion(2, ok, f"remainder slope {slope:.2f} (<= -2.5), {elapsed:.1f} s (< 30 s)")
    assert ok


def test_03_commutator(criterion):
    K, m, mp = 256, 1, 0
    a, b = smooth_pair(K)
    A, B = SymbolExpansion.single(a, m, K), SymbolExpansion.single(b, mp, K)
    X = commutator_expansion(A, B, 1)
    kept = SymbolExpansion(K, [(o, c) for o, c in X.terms if o >= m + mp - 2])
    slope = measured_smoothing(A.dense() @ B.dense() - B.dense() @ A.dense() - kept.symbol_matrix(), PROBES)
    # a = b: the leading coefficient is (m - m') a a_x, checked against a pointwise product
    X2 = commutator_expansion(SymbolExpansion.single(a, m, K), SymbolExpansion.single(a, mp, K), 1)
    lead = X2.coefficient(m + mp - 1).resize(K)
    ref = ((m - mp) * multiply(a, dx_power(a, 1), 2 * K)).resize(K)
    err = float(np.max(np.abs((lead - ref).coeffs))) / float(np.max(np.abs(ref.coeffs)))
    ok = slope <= -1.5 and err <= 1e-14
    criterion(3, ok, f"commutator slope {slope:.2f} (<= -1.5), a=b leading coefficient rel. error {err:.1e}")
    assert ok


def test_04_fermat_scan(criterion):
    start = time.perf_counter()
    best, witness = fermat_cube_scan(200)
    elapsed = time.perf_counter() - start
    ok = best == 1 and witness == (6, 8, -9) and elapsed < 60
    criterion(4, ok, f"min |sum of cubes| {best}, witness {witness}, {elapsed:.1f} s (< 60 s)")
    assert ok


def test_05_four_wave_witness(criterion):
    start = time.perf_counter()
    found = four_wave_scan(12)
    elapsed = time.perf_counter() - start
    target = tuple(sorted((10, 9, -1, -12), reverse=True))
    hits = [q for q in found if q == target or q == tuple(sorted((-v for v in target), reverse=True))]
    genuine = all(sum(v ** 3 for v in q) == 0 and not any(q[i] == -q[j] for i in range(4) for j in range(i + 1, 4))
                  for q in found)
    ok = len(hits) == 1 and genuine and elapsed < 5
    criterion(5, ok, f"witness class found {len(hits)}x among {len(found)} classes, all genuine: {genuine}, "
                     f"{elapsed:.2f} s (< 5 s)")
    assert ok


def test_06_measure_estimate(criterion):
    ms = ModeSet((1, 2), 24)
    c = np.array([(2 * np.pi) ** 3, (4 * np.pi) ** 3])
    fam = FrequencyFamily(ms, c - 5, c + 5, {1: 0.5, 3: 0.1}, {1: np.array([0.01, 0.02])}, tau=2.5)
    start = time.perf_counter()
    tab = measure_estimate(fam, [0.4, 0.2, 0.1, 0.05, 0.025], 100_000, seed=1, L=6, J=24)
    elapsed = time.perf_counter() - start
    f, se = tab["excluded_fraction"], tab["stderr"]
    monotone = all(f[i + 1] <= f[i] + 2 * np.hypot(se[i], se[i + 1]) for i in range(len(f) - 1))
    ok = monotone and tab["slope"] > 0 and elapsed < 120
    criterion(6, ok, f"fractions {np.array2string(f, precision=4)}, non-increasing within 2 sigma: {monotone}, "
                     f"slope {tab['slope']:.2f} (> 0), {elapsed:.1f} s")
    assert ok


def solver_residuals(rng, m, L=4, J=16):
    worst = {}
    for _ in range(100):
        P = TorusField.random(1, L, rng)
        F = solve_torus_transport(m, P)
        res = iomega_l(m, L, 1) * F.coeffs + P.coeffs
        res[L] -= P.coeffs[L]
        worst["torus"] = max(worst.get("torus", 0), np.max(np.abs(res)) / np.max(np.abs(P.coeffs)))

        P = rand_field(rng, m)
        F = solve_first_melnikov(m, P)
        worst["first"] = max(worst.get("first", 0), np.max(first_residual(m, P, F)) / np.max(np.abs(P.coeffs)))

        R = SmoothingKernel(rand_field(rng, m, extra=1).coeffs, 1, L, J)
        S, Z = solve_second_melnikov(m, R)
        worst["second"] = max(worst.get("second", 0),
                              np.max(second_residual(m, R, S, Z)) / np.max(np.abs(R.coeffs)))

        R = SmoothingKernel(rand_field(rng, m, extra=2).coeffs, 1, L, J)
        S = solve_third_melnikov(m, R)
        worst["third"] = max(worst.get("third", 0), np.max(third_residual(m, R, S)) / np.max(np.abs(R.coeffs)))

        M = SmoothingKernel(rand_field(rng, m, extra=1).coeffs, 1, L, J)
        S, Z = solve_theta_quadratic(m, M)
        Om = omega_ld(m, J)
        div = omega_dot_ell(m.omega, L).astype(np.longdouble)[:, None, None] - Om[:, None] - Om[None, :]
        rhs = -M.coeffs.copy()
        rhs[L] += Z
        worst["theta"] = max(worst.get("theta", 0), np.max(ld_residual(div, S.coeffs, rhs)) / np.max(np.abs(M.coeffs)))
    return worst


def abort_matches(m, rng, L=4, J=16):
    viol = {o: bool(check_melnikov(m, o, L, J)) for o in range(4)}
    mask = m.modes.perp_mask(J)
    ones2 = np.ones((2 * L + 1, 2 * J + 1, 2 * J + 1), complex)
    ones3 = np.ones((2 * L + 1,) + (2 * J + 1,) * 3, complex)
    cases = [
        (solve_torus_transport, TorusField.random(1, L, rng), viol[0]),
        (solve_first_melnikov, TorusField(TorusField.random(1, L, rng, J).coeffs * mask, 1, L, J), viol[1]),
        (solve_second_melnikov, SmoothingKernel(ones2, 1, L, J), viol[2]),
        (solve_third_melnikov, SmoothingKernel(ones3, 1, L, J), viol[3] or viol[1]),
        (solve_theta_quadratic, SmoothingKernel(ones2, 1, L, J), viol[2]),
    ]
    agree = True
    for solver, data, v in cases:
        try:
            solver(m, data)
            raised = False
        except DivisorBelowThreshold:
            raised = True
        agree &= raised == v
    return agree, any(viol.values())


def test_07_homological_residuals(criterion):
    rng = np.random.default_rng(7)
    worst = solver_residuals(rng, nf_model())
    models = [nf_model(),
              FrequencyModel(ModeSet((2,), 16), np.array([7.3]), {1: 0.3}, 1.2, 0.9),
              FrequencyModel(ModeSet((2,), 16), np.array([8 * np.pi ** 3]), {1: 0.3}, 1.5, 0.5),
              FrequencyModel(ModeSet((2,), 16), np.array([0.0]), {1: 0.3}, 1.5, 0.5),
              FrequencyModel(ModeSet((1,), 16), np.array([248.5]), {1: 0.3}, 1.01, 0.99)]
    checks = [abort_matches(m, rng) for m in models]
    agree = all(a for a, _ in checks)
    ok = max(worst.values()) <= 1e-12 and agree and any(v for _, v in checks)
    criterion(7, ok, "worst relative residuals " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
              + f" (<= 1e-12); abort iff violation on {len(models)} models: {agree}")
    assert ok


@pytest.fixture(scope="module")
def pipeline():
    H = TaylorHamiltonian.random(nf_model(), [[0.5]], np.random.default_rng(1), L=4, J=16, size=1e-2)
    start = time.perf_counter()
    rep = full_pipeline(H)
    return rep, time.perf_counter() - start


def test_08_normal_form_pipeline(criterion, pipeline):
    rep, elapsed = pipeline
    s = rep.sections
    eps_lin = s["hamiltonian"]["eps_linear_angle_dependence"]
    skew = max(s["multiplier"]["skew_defect_D5"], s["smoothing"]["skew_defect_D6"])
    y_ord, a_ord = s["orders"]["y_component"], s["orders"]["symbol_a"]
    ok = eps_lin <= 1e-12 and skew <= 1e-12 and y_ord >= 2.8 and a_ord >= 1.8 and elapsed < 60
    criterion(8, ok, f"eps-linear {eps_lin:.1e}, skew {skew:.1e}, y order {y_ord:.2f} (>= 2.8), "
                     f"a order {a_ord:.2f} (>= 1.8), {elapsed:.1f} s (< 60 s)")
    assert ok


def test_09_diagonal_check(criterion, pipeline):
    rep, _ = pipeline
    reg = rep.sections["regularization"]
    diag, odd = reg["diagonal_real_defect"], reg["odd_step_mean"]
    ok = diag <= 1e-12 and odd <= 1e-12
    criterion(9, ok, f"max |Re diag| over intermediate blocks {diag:.1e}, odd-step means {odd:.1e} (<= 1e-12)")
    assert ok


def linpde_data(N):
    rng = np.random.default_rng(0)
    w0 = FourierSeries.random(N, rng, decay=4, mean_zero=True)
    f = FourierSeries.random(20, rng, decay=4, mean_zero=True)
    return w0, f


def test_10_linear_pde_energy(criterion):
    N, model = 128, nf_model()
    w0, f = linpde_data(N)
    sym = lambda t: airy_symbol(model, N) * (1 + 0.3 * np.sin(t))
    tr = galerkin_solve(LinearPDEProblem(sym, w0, 1.0, N, modes=model.modes), 1e-3, every=100)
    n = np.array([sobolev_norm(w, 2) for w in tr.states])
    drift = float(np.max(np.abs(n - n[0])) / n[0])
    a = FourierSeries.from_modes(N, {1: 0.5e-2})
    p = LinearPDEProblem(sym, w0, 1.0, N, a=a, forcing=f, modes=model.modes)
    C = growth_constant(p, galerkin_solve(p, 1e-3, every=50))
    # self-convergence: distance between the N and N+8 truncations shrinks with N
    r = np.random.default_rng(3)
    k = np.arange(1, 201, dtype=float)
    v = k ** -2.5 * np.exp(2j * np.pi * r.random(200))
    v[0] = 0.0
    u0 = FourierSeries(np.concatenate([np.conj(v[::-1]), [0], v]))
    band = FourierSeries.random(6, np.random.default_rng(4), decay=2, mean_zero=True) * 0.05
    diffs = []
    for Nc in (64, 96, 128):
        fin = [galerkin_solve(LinearPDEProblem(airy_symbol(model, NN), u0, 1.0, NN, a=band, modes=model.modes),
                              2.5e-4, every=10 ** 6).final() for NN in (Nc, Nc + 8)]
        diffs.append(float(np.linalg.norm((fin[1] - fin[0]).coeffs)))
    monotone = diffs[0] > diffs[1] > diffs[2]
    ok = drift <= 1e-8 and C <= 3 and monotone
    criterion(10, ok, f"skew norm drift {drift:.1e} (<= 1e-8), forced constant {C:.2f} (<= 3), "
                      f"truncation gaps {', '.join(f'{d:.1e}' for d in diffs)} decreasing: {monotone}")
    assert ok


@pytest.mark.xfail(strict=True, reason="the resolved step for the forced wave frame needs about 2.6e8 steps; "
                                       "see test_kdv_sim for the short-horizon version of the same table")
def test_11_stability_window_runtime(criterion):
    K = 128
    w = cnoidal(1.0, K=K)
    zero = FourierSeries.zeros(K)
    f = PerturbationDensity([zero, zero, zero, FourierSeries.from_modes(K, {1: 0.5})])
    total, per_step, steps = projected_runtime(w, f, [1e-2, 5e-3, 2.5e-3], probe_steps=50)
    ok = total < 600
    criterion(11, ok, f"projected {steps:.2e} steps at {per_step * 1e3:.2f} ms/step = {total / 3600:.1f} h "
                      f"(target < 10 min); not run")
    assert ok


CLI_CONFIG = """
[paradiff-check]
samples = 5
[resonance-scan]
fermat_J = 30
[measure]
samples = 5000
[normalform]
J = 8
L = 2
[linpde]
N = 32
T = 0.1
[stability]
K = 32
amplitude = 0.5
eps = 1e-2, 5e-3
horizon = 2e-5
zero_horizon = 0.1
samples = 10
companion_dt = 1e-4
"""


def test_12_determinism(criterion, tmp_path):
    cfg = tmp_path / "cfg.ini"
    cfg.write_text(CLI_CONFIG)
    runs = []
    for name in ("a", "b"):
        digests = {}
        for cmd in ("paradiff-check", "resonance-scan", "measure", "normalform", "linpde", "stability"):
            out = tmp_path / name / cmd
            assert main([cmd, "--config", str(cfg), "--seed", "11", "--out", str(out)]) == 0
            for p in sorted(out.iterdir()):
                digests[f"{cmd}/{p.name}"] = hashlib.sha256(p.read_bytes()).hexdigest()
        runs.append(digests)
    ok = runs[0] == runs[1] and any(k.endswith(".csv") for k in runs[0])
    criterion(12, ok, f"{len(runs[0])} output files, identical hashes across repeated runs: {runs[0] == runs[1]}")
    assert ok

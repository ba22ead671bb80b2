from itertools import product

import numpy as np
import pytest

from kdvlab.fourier_core import ModeSet
from kdvlab.spectrum_melnikov import (FrequencyFamily, FrequencyModel, check_melnikov, divisor,
                                      fermat_cube_scan, four_wave_scan, measure_csv,
                                      measure_estimate, melnikov_tuples)


def model(omega=(7.3,), tail=None, tau=2.0, gamma=0.5, s_plus=(1,), J=16):
    return FrequencyModel(ModeSet(s_plus, J), np.array(omega, float), tail or {}, tau, gamma)


def test_divisor_examples():
    m = model()
    assert divisor(m, [0], [1, -1]) == 0.0
    assert divisor(m, [0], [1]) == pytest.approx(8 * np.pi ** 3, rel=1e-15)


def test_divisor_resummation(rng):
    for _ in range(20):
        tail = {1: rng.normal(), 3: rng.normal()}
        m = model(omega=rng.normal(size=2) * 10, tail=tail, s_plus=(1, 2), tau=3.0)
        ell = rng.integers(-4, 5, size=2)
        js = rng.integers(3, 17, size=3) * rng.choice([-1, 1], size=3)
        ref = float(np.dot(m.omega, ell))
        for j in js:
            ref += (2 * np.pi * j) ** 3 + tail[1] / j + tail[3] / j ** 3
        assert divisor(m, ell, js) == pytest.approx(ref, rel=1e-14, abs=1e-14 * abs(ref))


def test_frequency_model_invariants():
    m = model(tail={1: 0.7, 3: -0.2})
    j = np.arange(1, 200)
    assert np.array_equal(m.Omega(-j), -m.Omega(j))
    assert np.all(np.abs(m.Omega(j) - (2 * np.pi * j) ** 3) * j <= 0.9 + 1e-6)
    with pytest.raises(ValueError):
        model(tail={2: 1.0})
    with pytest.raises(ValueError):
        model(tau=1.0)
    with pytest.raises(ValueError):
        model(gamma=1.5)


def test_check_melnikov_order0_passes():
    m = model(omega=(1.0,), tau=2.0, gamma=0.5)
    assert check_melnikov(m, 0, 3, 4) == []


def test_check_melnikov_matches_enumeration():
    m = model(omega=(3.7,), tail={1: 0.4}, tau=1.5, gamma=0.9, J=6)
    for order in range(4):
        got = {(t.ell, t.j_list) for t in check_melnikov(m, order, 3, 6)}
        js = [j for j in range(-6, 7) if j not in (0, 1, -1)]
        ref = set()
        for ell in range(-3, 4):
            for T in product(js, repeat=order):
                if list(T) != sorted(T):
                    continue
                if order == 0 and ell == 0:
                    continue
                if order == 2 and ell == 0 and T[0] + T[1] == 0:
                    continue
                if order == 3 and any(T[a] + T[b] == 0 for a in range(3) for b in range(a + 1, 3)):
                    continue
                w = max(1, abs(ell)) ** 1.5 * (np.prod([max(1, abs(j)) ** 2 for j in T]) if order == 3 else 1)
                if abs(divisor(m, [ell], T)) * w < m.gamma:
                    ref.add(((ell,), tuple(T)))
        assert got == ref


def test_order3_never_reports_opposite_pairs():
    m = model(omega=(0.0,), gamma=0.99, tau=1.01, J=8)
    out = check_melnikov(m, 3, 2, 8)
    for t in out:
        j = t.j_list
        assert all(j[a] + j[b] != 0 for a in range(3) for b in range(a + 1, 3))
    # the first family always reaches a violation for gamma near 1 and a resonant omega
    m2 = model(omega=(64 * np.pi ** 3,), gamma=0.99, tau=1.01)
    assert check_melnikov(m2, 1, 1, 4)


def test_csv_row():
    t = check_melnikov(model(omega=(64 * np.pi ** 3,), gamma=0.99, tau=1.01), 1, 1, 4)[0]
    assert t.csv_row().count(",") == 2


def test_fermat_scan():
    best, witness = fermat_cube_scan(10)
    assert best == 1 and witness == (6, 8, -9)
    assert 6 ** 3 + 8 ** 3 - 9 ** 3 == -1
    with pytest.raises(ValueError):
        fermat_cube_scan(1)


def test_fermat_scan_matches_brute_force():
    J = 9
    vals = [j for j in range(-J, J + 1) if j]
    best = min(abs(a ** 3 + b ** 3 + c ** 3) for a, b, c in product(vals, repeat=3)
               if a + b != 0 and a + c != 0 and b + c != 0)
    assert fermat_cube_scan(J)[0] == best


def _canonical(q):
    a = tuple(sorted(q, reverse=True))
    b = tuple(sorted((-v for v in q), reverse=True))
    return min(a, b)


def test_four_wave_scan():
    found = four_wave_scan(12)
    witness = _canonical((10, 9, -1, -12))
    assert found.count(witness) == 1
    assert four_wave_scan(5) == []
    # complete against brute force; other genuine classes such as 3^3 + 4^3 + 5^3 = 6^3 also occur
    vals = [j for j in range(-12, 13) if j]
    ref = {_canonical(q) for q in product(vals, repeat=4)
           if sum(v ** 3 for v in q) == 0 and not any(q[a] == -q[b] for a in range(4) for b in range(a + 1, 4))}
    assert set(found) == ref and len(found) == len(ref)
    assert _canonical((5, 4, 3, -6)) in found
    assert _canonical((3, -3, 2, -2)) not in found
    for q in found:
        assert sum(v ** 3 for v in q) == 0
        assert not any(q[a] == -q[b] for a in range(4) for b in range(a + 1, 4))


FAMILY = FrequencyFamily(ModeSet((1, 2), 24), [(2 * np.pi) ** 3 - 5, (4 * np.pi) ** 3 - 5],
                         [(2 * np.pi) ** 3 + 5, (4 * np.pi) ** 3 + 5], {1: 0.5, 3: 0.1},
                         {1: np.array([0.01, 0.02])}, tau=2.5)


def test_measure_nesting_and_slope():
    gammas = [0.4, 0.2, 0.1, 0.05, 0.025]
    t = measure_estimate(FAMILY, gammas, 20000, seed=3)
    frac = t["excluded_fraction"]
    kappa = t["kappa"]
    for g_big, g_small in zip(gammas, gammas[1:]):
        assert np.all((kappa < g_small) <= (kappa < g_big))
    assert np.all(np.diff(frac) <= 2 * np.maximum(t["stderr"][1:], t["stderr"][:-1]) + 1e-15)
    assert t["slope"] > 0
    assert measure_csv(t).startswith("gamma,excluded_fraction,stderr")


def test_measure_margin_is_exact_minimum():
    """Margin from the affine candidates agrees with a direct check on the same window."""
    t = measure_estimate(FAMILY, [0.4], 200, seed=5, L=2, J=6)
    rng = np.random.default_rng(5)
    omegas = FAMILY.lo + rng.random((200, 2)) * (FAMILY.hi - FAMILY.lo)
    for om, k in zip(omegas[:40], t["kappa"][:40]):
        m = FAMILY.model(om, gamma=0.4)
        bad = any(check_melnikov(m, o, 2, 6) for o in range(4))
        assert bad == (k < 0.4)


def test_measure_rejects_small_samples():
    with pytest.raises(ValueError):
        measure_estimate(FAMILY, [0.1], 50, seed=0)
    with pytest.raises(ValueError):
        measure_estimate(FAMILY, [], 200, seed=0)


def test_gamma_to_zero_excludes_nothing():
    t = measure_estimate(FAMILY, [1e-12], 2000, seed=1, L=3, J=8)
    assert t["excluded_fraction"][0] == 0.0


def test_oddness_of_divisors(rng):
    m = model(omega=(3.3, 5.1), tail={1: 0.3}, s_plus=(1, 2), tau=3.0)
    for _ in range(50):
        ell = rng.integers(-5, 6, size=2)
        j = int(rng.integers(3, 30))
        assert divisor(m, ell, [j]) + divisor(m, -ell, [-j]) == 0.0


def test_one_large_index_triples_are_far_from_resonance():
    m = model(omega=(7.3,), tail={1: 1.0}, J=200)
    big = np.arange(60, 200)
    for ell in range(-3, 4):
        for j2, j3 in product([2, 3, -2, -3, 4], repeat=2):
            if j2 + j3 == 0:
                continue
            d = m.omega[0] * ell + m.Omega(big) + m.Omega(j2) + m.Omega(j3)
            assert np.all(np.abs(d) >= 1)


def test_melnikov_tuples_orders():
    ms = ModeSet((1,), 5)
    ells, T = melnikov_tuples(ms, 0, 2, 5)
    assert T.shape == (1, 0) and not np.any(np.all(ells == 0, axis=1))
    with pytest.raises(ValueError):
        melnikov_tuples(ms, 4, 2, 5)

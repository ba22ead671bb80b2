"""Para-products, Bony decomposition and the symbolic calculus of T_a d_x^m.

Operators act on the mode window |k| <= K. A dense operator is a
(2K+1)x(2K+1) complex matrix M with (Mu)_k = sum_xi M[k, xi] u_xi.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial

import numpy as np

from .fourier_core import FourierSeries, bracket, dx_multiplier, dx_power, multiply


def _g(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


@dataclass(frozen=True)
class CutoffFunction:
    """psi(eta, xi) = chi(|eta| / <xi>), chi = 1 below eps_inner, 0 above eps_outer."""

    eps_inner: float = 0.1
    eps_outer: float = 0.2

    def __post_init__(self):
        if not 0 < self.eps_inner < self.eps_outer < 1:
            raise ValueError("need 0 < eps_inner < eps_outer < 1")

    def chi(self, t):
        a, b = _g(self.eps_outer - t), _g(t - self.eps_inner)
        return a / (a + b)

    def __call__(self, eta, xi):
        return self.chi(np.abs(eta) / bracket(xi))


DEFAULT_CUTOFF = CutoffFunction()


@lru_cache(maxsize=8)
def _pair_weights(K, cutoff):
    """psi(k - xi, xi) on the (k, xi) grid of the window (cached, read-only)."""
    k = np.arange(-K, K + 1)
    eta = k[:, None] - k[None, :]
    psi = cutoff(eta, k[None, :])
    psi.flags.writeable = False
    eta.flags.writeable = False
    return psi, eta


def _coeff_at(a, eta):
    """a_hat(eta) for an integer array eta (zero outside a's window)."""
    out = np.zeros(eta.shape, dtype=complex)
    inside = np.abs(eta) <= a.K
    out[inside] = a.coeffs[eta[inside] + a.K]
    return out


def paraproduct_matrix(a, K, m=0, cutoff=DEFAULT_CUTOFF):
    """Dense matrix of T_a d_x^m on the window |k| <= K."""
    psi, eta = _pair_weights(K, cutoff)
    xi = np.arange(-K, K + 1)
    return psi * _coeff_at(a, eta) * dx_multiplier(xi, m)[None, :]


def multiplier_matrix(symbol):
    return np.diag(np.asarray(symbol, dtype=complex))


def apply_dense(M, u):
    K = (M.shape[1] - 1) // 2
    return FourierSeries(M @ u.resize(K).coeffs, check=False)


def paraproduct(a, u, cutoff=DEFAULT_CUTOFF, K=None):
    K = K or max(a.K, u.K)
    return apply_dense(paraproduct_matrix(a, K, 0, cutoff), u)


def bony_remainder(a, u, cutoff=DEFAULT_CUTOFF, K=None):
    """R(a, u) with weight 1 - psi(eta, xi) - psi(xi, eta), summed directly."""
    K = K or max(a.K, u.K)
    k = np.arange(-K, K + 1)
    xi = np.arange(-u.K, u.K + 1)
    eta = k[:, None] - xi[None, :]
    w = 1.0 - cutoff(eta, xi[None, :]) - cutoff(xi[None, :], eta)
    R = w * _coeff_at(a, eta) * u.coeffs[None, :]
    return FourierSeries(R.sum(axis=1), check=False)


def gen_binomial(m, n):
    """Coefficient of T_{a d^n b} d^{m-n} in d^m T_b: the binomial C(m, n) for integer m."""
    num = 1.0
    for i in range(n):
        num *= m - i
    return num / factorial(n)


@dataclass
class SymbolExpansion:
    """sum over terms (order, coefficient) of T_coeff d_x^order, plus a dense remainder."""

    K: int
    terms: list = field(default_factory=list)
    remainder: np.ndarray = None
    depth: int = 0
    cutoff: CutoffFunction = DEFAULT_CUTOFF

    @classmethod
    def single(cls, a, m, K, cutoff=DEFAULT_CUTOFF):
        return cls(K, [(m, a)], None, 0, cutoff)

    @property
    def base_order(self):
        return max(o for o, _ in self.terms) if self.terms else None

    def symbol_matrix(self):
        n = 2 * self.K + 1
        M = np.zeros((n, n), dtype=complex)
        for order, a in self.terms:
            M += paraproduct_matrix(a, self.K, order, self.cutoff)
        return M

    def dense(self):
        M = self.symbol_matrix()
        if self.remainder is not None:
            M = M + self.remainder
        return M

    def coefficient(self, order):
        out = None
        for o, a in self.terms:
            if o == order:
                out = a if out is None else out + a
        return out

    def to_csv(self):
        rows = ["order,mode,re,im"]
        for o, a in self.terms:
            for k, c in zip(a.modes, a.coeffs):
                rows.append(f"{o},{k},{c.real:.17g},{c.imag:.17g}")
        return "\n".join(rows) + "\n"


def _exact_product(a, b):
    return multiply(a, b, a.K + b.K)


def _merge(terms):
    """Sum coefficients of equal order; drop identically zero ones; sort descending."""
    acc = {}
    for o, a in terms:
        acc[o] = a if o not in acc else acc[o] + a
    return [(o, acc[o]) for o in sorted(acc, reverse=True) if np.any(acc[o].coeffs != 0)]


def _check_windows(A, B):
    if A.K != B.K:
        raise ValueError(f"window mismatch: {A.K} vs {B.K}")


def _composition_terms(A, B, N):
    terms = []
    for m, a in A.terms:
        for mp, b in B.terms:
            terms.append((m + mp, _exact_product(a, b)))
            for n in range(1, N + m + mp + 1):
                K = gen_binomial(m, n)
                if K != 0:
                    terms.append((m + mp - n, K * _exact_product(a, dx_power(b, n))))
    return [(o, a) for o, a in terms if o >= -N]


def compose_expansion(A, B, N):
    """Expansion of A o B through order -N with the exact remainder."""
    _check_windows(A, B)
    out = SymbolExpansion(A.K, _merge(_composition_terms(A, B, N)), None, N, A.cutoff)
    out.remainder = A.dense() @ B.dense() - out.symbol_matrix()
    return out


def commutator_expansion(A, B, N):
    _check_windows(A, B)
    terms = _composition_terms(A, B, N)
    terms += [(o, -c) for o, c in _composition_terms(B, A, N)]
    out = SymbolExpansion(A.K, _merge(terms), None, N, A.cutoff)
    DA, DB = A.dense(), B.dense()
    out.remainder = DA @ DB - DB @ DA - out.symbol_matrix()
    return out


def transpose(M):
    """Transpose for the pairing int u v dx; equals the conjugate transpose for real operators."""
    return M[::-1, ::-1].T


def adjoint_expansion(A, N):
    terms = []
    for m, a in A.terms:
        sign = (-1) ** (m % 2)
        for n in range(0, N + m + 1):
            K = gen_binomial(m, n)
            if K != 0:
                terms.append((m - n, sign * K * dx_power(a, n)))
    out = SymbolExpansion(A.K, _merge([(o, a) for o, a in terms if o >= -N]), None, N, A.cutoff)
    out.remainder = A.dense().conj().T - out.symbol_matrix()
    return out


def measured_smoothing(R, mode_range, s=0.0, floor=1e-13, return_table=False):
    """Log-log slope of ||R e_j||_s / <j>^s against <j> over single-mode probes.

    Norms below floor * max|R| count as exact zeros; if fewer than two probes
    survive the slope is -inf.
    """
    modes = np.asarray(list(mode_range))
    if len(modes) < 8:
        raise ValueError("need at least 8 probe modes")
    K = (R.shape[1] - 1) // 2
    k = np.arange(-K, K + 1)
    weights = bracket(k) ** s
    norms = np.array([np.linalg.norm(weights * R[:, j + K]) / bracket(j) ** s for j in modes])
    scale = max(np.max(np.abs(R)), 1e-300)
    keep = norms > floor * scale
    if keep.sum() < 2:
        slope = -np.inf
    else:
        x = np.log(bracket(modes[keep]))
        slope = float(np.polyfit(x, np.log(norms[keep]), 1)[0])
    if return_table:
        return slope, list(zip(modes.tolist(), norms.tolist()))
    return slope


def smoothing_csv(table, slope):
    rows = ["j,norm,fitted_slope"]
    rows += [f"{j},{n:.17g},{slope:.6g}" for j, n in table]
    return "\n".join(rows) + "\n"


class PerturbationDensity:
    """f(x, zeta) = sum_d c_d(x) zeta^d with real trigonometric-polynomial coefficients."""

    def __init__(self, coeffs):
        self.coeffs = list(coeffs)
        if not self.coeffs:
            raise ValueError("need at least one coefficient")

    @property
    def degree(self):
        return len(self.coeffs) - 1

    def derivative(self):
        """d/dzeta as a new density."""
        return PerturbationDensity([d * c for d, c in enumerate(self.coeffs)][1:] or
                                   [FourierSeries.zeros(self.coeffs[0].K)])

    def is_x_independent(self):
        return all(np.all(c.coeffs[np.arange(-c.K, c.K + 1) != 0] == 0) for c in self.coeffs)

    def compose(self, u, K=None):
        """x -> f(x, u(x)) on the window K (exact if K covers the full product)."""
        Kfull = max(c.K for c in self.coeffs) + self.degree * u.K
        K = K or Kfull
        M = 2 * max(K, Kfull) + 2
        uv = u.values(M)
        total = np.zeros(M)
        power = np.ones(M)
        for c in self.coeffs:
            total += c.values(M) * power
            power = power * uv
        return FourierSeries.from_values(total, K)


def paralinearize_composition(f, u, K=None):
    """(b, R) with d_zeta f(x, u) = T_b u + R and b = d_zeta^2 f(x, u)."""
    K = K or u.K
    f1 = f.derivative()
    f2 = f1.derivative()
    b = f2.compose(u)
    lhs = f1.compose(u, K)
    R = lhs - paraproduct(b, u, K=K)
    return b, R

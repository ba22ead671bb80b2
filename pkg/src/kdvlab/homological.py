"""Fourier-space solvers for the homological equations of the normal form.

Angle modes ell live on the box |ell|_inf <= L (array axes 0..d-1, index ell+L);
space modes j on the window |j| <= J (index j+J), with entries outside S^perp
kept at zero. Every solver checks the full window against the matching
Melnikov family and raises DivisorBelowThreshold on the first violation.
"""
from dataclasses import dataclass

import numpy as np

from .fourier_core import dx_power
from .spectrum_melnikov import check_melnikov, ell_bracket, ell_window


class DivisorBelowThreshold(ArithmeticError):
    def __init__(self, violations):
        self.violations = list(violations)
        head = self.violations[0] if self.violations else None
        super().__init__(f"{len(self.violations)} small divisors on the window, first: {head}")


def ell_grid(d, L):
    """Array of shape (2L+1,)*d + (d,) with the integer angle modes."""
    ax = np.arange(-L, L + 1)
    if d == 0:
        return np.zeros((0,))
    return np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)


def omega_dot_ell(omega, L):
    d = len(omega)
    if d == 0:
        return np.zeros(())
    return ell_grid(d, L) @ np.asarray(omega, dtype=float)


def flip_all(c):
    return c[tuple(slice(None, None, -1) for _ in range(c.ndim))]


@dataclass
class TorusField:
    """Coefficients c[ell, j] of sum c e^{i ell.theta} e^{2 pi i j x}; j-axis absent for scalars."""

    coeffs: np.ndarray
    d: int
    L: int
    J: int = None

    @classmethod
    def zeros(cls, d, L, J=None, extra=()):
        shape = (2 * L + 1,) * d + (() if J is None else (2 * J + 1,)) + tuple(extra)
        return cls(np.zeros(shape, dtype=complex), d, L, J)

    @classmethod
    def random(cls, d, L, rng, J=None, mask=None, decay=1.0):
        f = cls.zeros(d, L, J)
        c = rng.standard_normal(f.coeffs.shape) + 1j * rng.standard_normal(f.coeffs.shape)
        if d:
            c *= ell_bracket(ell_grid(d, L)).reshape((2 * L + 1,) * d + (1,) * (c.ndim - d)) ** (-decay)
        if mask is not None:
            c = c * mask
        f.coeffs = 0.5 * (c + np.conj(flip_all(c)))
        return f

    def reality_defect(self):
        return float(np.max(np.abs(self.coeffs - np.conj(flip_all(self.coeffs))), initial=0.0))

    def mean(self):
        """Angle average: the ell = 0 slice."""
        return self.coeffs[(self.L,) * self.d]

    def __add__(self, other):
        return TorusField(self.coeffs + other.coeffs, self.d, self.L, self.J)

    def __mul__(self, s):
        return TorusField(self.coeffs * s, self.d, self.L, self.J)

    __rmul__ = __mul__

    def omega_derivative(self, omega):
        """omega . d_theta applied coefficientwise."""
        od = omega_dot_ell(omega, self.L)
        od = od.reshape(od.shape + (1,) * (self.coeffs.ndim - self.d))
        return TorusField(1j * od * self.coeffs, self.d, self.L, self.J)

    def to_csv(self):
        rows = [",".join([f"ell{i}" for i in range(self.d)] + ["n", "j", "jp", "re", "im"])]
        ells = ell_window(self.d, self.L)
        flat = self.coeffs.reshape((len(ells),) + self.coeffs.shape[self.d:])
        for e, block in zip(ells, flat):
            for idx in zip(*np.nonzero(block)):
                c = block[idx]
                jj = [str(i - self.J) for i in idx] if self.J is not None else []
                jj = (["", ""] + jj)[-3:] if len(jj) < 3 else jj
                rows.append(",".join([str(v) for v in e] + jj + [f"{c.real:.17g}", f"{c.imag:.17g}"]))
        return "\n".join(rows) + "\n"


def _raise_if(violations):
    if violations:
        raise DivisorBelowThreshold(violations)


def _bcast(a, ndim_lead, ndim_total):
    return a.reshape(a.shape + (1,) * (ndim_total - ndim_lead))


def _window_j(J):
    return np.arange(-J, J + 1)


def solve_torus_transport(model, P):
    """F with omega.d_theta F + P = <P>_theta, zero average."""
    _raise_if(check_melnikov(model, 0, P.L, 1))
    od = _bcast(omega_dot_ell(model.omega, P.L), P.d, P.coeffs.ndim)
    safe = np.where(od == 0, 1.0, od)
    F = np.where(od == 0, 0.0, -P.coeffs / (1j * safe))
    return TorusField(F, P.d, P.L, P.J)


def first_melnikov_divisor(model, L, J):
    od = omega_dot_ell(model.omega, L)
    Om = model.Omega(_window_j(J))
    return od[..., None] + Om


def solve_first_melnikov(model, P):
    """F with (omega.d_theta + i Omega_perp) F + P = 0."""
    _raise_if(check_melnikov(model, 1, P.L, P.J))
    div = first_melnikov_divisor(model, P.L, P.J)
    mask = model.modes.__class__(model.modes.s_plus, P.J).perp_mask(P.J)
    div = _bcast(div, P.d + 1, P.coeffs.ndim)
    mask = _bcast(mask, 1, P.coeffs.ndim - P.d)
    F = np.where(mask, -P.coeffs / (1j * np.where(mask, div, 1.0)), 0.0)
    return TorusField(F, P.d, P.L, P.J)


def solve_multiplier_homological(model, Lambda):
    """a_Xi with (omega.d_theta + i Omega_perp) a_Xi + a_Lambda = 0."""
    return solve_first_melnikov(model, Lambda)


def solve_x_transport(a):
    """b = (1/3) d_x^{-1}(a - <a>_x), so that -3 d_x b + a = <a>_x."""
    return dx_power(a, -1) * (1.0 / 3.0)


def solve_x_transport_coeffs(c):
    """Array version on the last axis (x-modes centered), for angle-dependent coefficients."""
    K = (c.shape[-1] - 1) // 2
    k = np.arange(-K, K + 1)
    inv = np.zeros(len(k), dtype=complex)
    inv[k != 0] = 1.0 / (2j * np.pi * k[k != 0])
    return c * inv / 3.0


@dataclass
class SmoothingKernel:
    """Linear kernel R[ell, j, jp] ((R w)_j = sum R_j^jp w_jp) or bilinear R[ell, n, j, jp]."""

    coeffs: np.ndarray
    d: int
    L: int
    J: int
    order_tag: int = 0

    @property
    def bilinear(self):
        return self.coeffs.ndim - self.d == 3

    def norms_per_ell(self):
        flat = self.coeffs.reshape((-1,) + self.coeffs.shape[self.d:])
        return np.sqrt(np.sum(np.abs(flat.reshape(len(flat), -1)) ** 2, axis=1))


def second_melnikov_divisor(model, L, J):
    od = omega_dot_ell(model.omega, L)
    j = _window_j(J)
    return od[..., None, None] + model.combination([j[:, None], j[None, :]], [1, -1])


def _perp_mask(model, J):
    return model.modes.__class__(model.modes.s_plus, J).perp_mask(J)


def solve_second_melnikov(model, R):
    """(S, Z): omega.d_theta S + [i Omega, S] + R = Z with Z = diag of the mean of R.

    Extra trailing axes of R (parameter slots, e.g. y-components) are carried along.
    """
    _raise_if(check_melnikov(model, 2, R.L, R.J))
    d, L, J = R.d, R.L, R.J
    div = second_melnikov_divisor(model, L, J)
    m = _perp_mask(model, J)
    valid = m[:, None] & m[None, :]
    resonant = np.zeros(div.shape, dtype=bool)
    centre = (L,) * d
    resonant[centre] = np.eye(2 * J + 1, dtype=bool)
    nd = R.coeffs.ndim
    divb = _bcast(div, d + 2, nd)
    solvable = _bcast(valid & ~resonant, d + 2, nd)
    S = np.where(solvable, -R.coeffs / (1j * np.where(solvable, divb, 1.0)), 0.0)
    Z = np.diagonal(R.coeffs[centre], axis1=0, axis2=1)
    Z = np.moveaxis(Z, -1, 0) * _bcast(m, 1, Z.ndim)
    return SmoothingKernel(S, d, L, J, R.order_tag - 1), Z


def third_melnikov_divisor(model, L, J):
    od = omega_dot_ell(model.omega, L)
    j = _window_j(J)
    return od[..., None, None, None] + model.combination(
        [j[:, None, None], j[None, :, None], j[None, None, :]], [1, -1, -1])


def solve_third_melnikov(model, R):
    """S with omega.d_theta S + i Omega S[w,v] - S[i Omega w, v] - S[w, i Omega v] + R = 0.

    Returns the kernel and the per-slot amplification |1/divisor| bookkeeping.
    """
    _raise_if(check_melnikov(model, 3, R.L, R.J) + check_melnikov(model, 1, R.L, R.J))
    d, L, J = R.d, R.L, R.J
    div = third_melnikov_divisor(model, L, J)
    m = _perp_mask(model, J)
    valid = m[:, None, None] & m[None, :, None] & m[None, None, :]
    valid = np.broadcast_to(valid, div.shape)
    S = np.where(valid, -R.coeffs / (1j * np.where(valid, div, 1.0)), 0.0)
    out = SmoothingKernel(S, d, L, J, R.order_tag - 1)
    out.amplification = np.where(valid, 1.0 / np.abs(np.where(valid, div, 1.0)), 0.0)
    return out


def theta_quadratic_divisor(model, L, J):
    od = omega_dot_ell(model.omega, L)
    j = _window_j(J)
    return od[..., None, None] - model.combination([j[:, None], j[None, :]], [1, 1])


def solve_theta_quadratic(model, M):
    """(S, Z) for omega.d_theta S[w,w] - S[i Omega w, w] - S[w, i Omega w] - M[w,w] = -Z[w,w].

    M has axes (ell..., j, jp, component); Z keeps the angle mean on the slots jp = -j.
    """
    _raise_if(check_melnikov(model, 2, M.L, M.J))
    d, L, J = M.d, M.L, M.J
    div = theta_quadratic_divisor(model, L, J)
    m = _perp_mask(model, J)
    valid = m[:, None] & m[None, :]
    resonant = np.zeros(div.shape, dtype=bool)
    centre = (L,) * d
    resonant[centre] = np.eye(2 * J + 1, dtype=bool)[::-1]
    nd = M.coeffs.ndim
    solvable = _bcast(valid & ~resonant, d + 2, nd)
    divb = _bcast(div, d + 2, nd)
    S = np.where(solvable, M.coeffs / (1j * np.where(solvable, divb, 1.0)), 0.0)
    Z = np.where(_bcast(resonant[centre] & valid, 2, nd - d), M.coeffs[centre], 0.0)
    return SmoothingKernel(S, d, L, J), Z

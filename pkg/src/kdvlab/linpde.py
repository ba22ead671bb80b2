"""Galerkin solver for the linear para-differential evolution

    w_t = Pi_N ( D(t) w + Pi_perp T_a(t) d_x w ) + f(t)

with D(t) a skew-adjoint Fourier multiplier, plus energy-estimate diagnostics.
The multiplier part is diagonal, so its propagator over [t, t + h] is the
exponential of its time integral (Gauss-Legendre quadrature); the remaining
terms go through classical RK4 on the integrating-factor form.
"""
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .fourier_core import FourierSeries, ModeSet, dx_multiplier, sobolev_norm
from .paradiff import paraproduct_matrix

TimeField = Union[FourierSeries, Callable[[float], FourierSeries], None]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)


def _at(field_, t, N):
    if field_ is None:
        return None
    u = field_(t) if callable(field_) else field_
    return u.resize(N)


@dataclass
class LinearPDEProblem:
    """Data of the linear problem on the window |k| <= N.

    multiplier: callable t -> symbol array on k = -N..N (purely imaginary,
    odd in k), or a fixed array. a, forcing: FourierSeries or callables of t.
    """

    multiplier: Union[np.ndarray, Callable[[float], np.ndarray]]
    w0: FourierSeries
    T: float
    N: int
    s: float = 2.0
    order: int = 3
    a: TimeField = None
    forcing: TimeField = None
    modes: ModeSet = None

    def __post_init__(self):
        if self.order not in (1, 3):
            raise ValueError("multiplier order must be 1 or 3")
        if self.modes is None:
            self.modes = ModeSet((), self.N)
        self.mask = self.modes.perp_mask(self.N)
        self.w0 = FourierSeries(self.w0.resize(self.N).coeffs * self.mask, check=False)

    @property
    def k(self):
        return np.arange(-self.N, self.N + 1)

    def symbol(self, t):
        d = self.multiplier(t) if callable(self.multiplier) else self.multiplier
        d = np.asarray(d, dtype=complex)
        if d.shape != (2 * self.N + 1,):
            raise ValueError("multiplier symbol must live on the window -N..N")
        return d

    def skew_defect(self, t=0.0):
        """max |D + D^T| for the multiplier at time t (zero iff the symbol is imaginary)."""
        return float(np.max(np.abs(self.symbol(t).real), initial=0.0))

    def transport_matrix(self, t):
        if self.a is None:
            return None
        if not callable(self.a):
            if getattr(self, "_fixed_transport", None) is None:
                self._fixed_transport = self.mask[:, None] * paraproduct_matrix(
                    self.a.resize(self.N), self.N, 1)
            return self._fixed_transport
        return self.mask[:, None] * paraproduct_matrix(_at(self.a, t, self.N), self.N, 1)

    def forcing_at(self, t):
        f = _at(self.forcing, t, self.N)
        return None if f is None else f.coeffs * self.mask

    def rhs(self, t, w):
        """Full right-hand side on coefficient arrays (used by the diagnostics)."""
        out = self.symbol(t) * w
        M = self.transport_matrix(t)
        if M is not None:
            out = out + M @ w
        f = self.forcing_at(t)
        if f is not None:
            out = out + f
        return out


def _symbol_integral(p, t, h):
    if not callable(p.multiplier):
        return p.symbol(t) * h
    nodes = t + 0.5 * h * (_GL_NODES + 1.0)
    return 0.5 * h * sum(w * p.symbol(x) for w, x in zip(_GL_WEIGHTS, nodes))


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def final(self):
        return self.states[-1]


def galerkin_solve(p: LinearPDEProblem, dt, every=1):
    """Trajectory of the truncated system sampled every `every` steps (and at T)."""
    n = max(1, int(round(p.T / dt)))
    h = p.T / n
    w = p.w0.coeffs.copy()
    traj = Trajectory([0.0], [p.w0])

    def explicit(t, v):
        out = np.zeros_like(v)
        M = p.transport_matrix(t)
        if M is not None:
            out += M @ v
        f = p.forcing_at(t)
        if f is not None:
            out += f
        return out

    lazy = p.a is None and p.forcing is None
    for i in range(n):
        t = i * h
        Eh = np.exp(_symbol_integral(p, t, h / 2))
        E2 = np.exp(_symbol_integral(p, t + h / 2, h / 2))
        E = Eh * E2
        if lazy:
            w = E * w
        else:
            k1 = explicit(t, w)
            k2 = explicit(t + h / 2, Eh * (w + h / 2 * k1))
            k3 = explicit(t + h / 2, Eh * w + h / 2 * k2)
            k4 = explicit(t + h, E * w + h * E2 * k3)
            w = E * w + h / 6 * (E * k1 + 2 * E2 * (k2 + k3) + k4)
        w = w * p.mask
        if (i + 1) % every == 0 or i == n - 1:
            traj.times.append((i + 1) * h)
            traj.states.append(FourierSeries(w, check=False))
    return traj


def homogeneous_norm(w, s):
    """||d_x^s w||_0 on coefficient arrays."""
    K = (len(w) - 1) // 2
    k = np.arange(-K, K + 1)
    return float(np.sqrt(np.sum(np.abs(dx_multiplier(k, s) * w) ** 2)))


@dataclass
class EnergyReport:
    times: np.ndarray
    norms: np.ndarray
    derivative: np.ndarray
    ratio: np.ndarray

    @property
    def worst_constant(self):
        return float(np.max(self.ratio, initial=0.0))

    def to_csv(self, comment=None):
        lines = [] if comment is None else [f"# {comment}"]
        lines.append("t,norm_s,energy_defect")
        for t, n, d in zip(self.times, self.norms, self.derivative):
            lines.append(f"{t:.17g},{n:.17g},{d:.17g}")
        return "\n".join(lines) + "\n"


def energy_defect(p: LinearPDEProblem, traj: Trajectory, s=None, sigma=2.0):
    """d/dt ||d_x^s w||^2 along the trajectory and its ratio to the a priori bound.

    The bound is ||a||_sigma ||d_x^s w||^2 + 2 ||f||_s ||d_x^s w||; the ratio is the
    constant that the trajectory actually requires.
    """
    s = p.s if s is None else s
    k = p.k
    weight = np.abs(dx_multiplier(k, s)) ** 2
    times, norms, der, ratio = [], [], [], []
    for t, w in zip(traj.times, traj.states):
        c = w.coeffs
        # the multiplier enters only through its real part, so skew cancellation is exact
        d = 2.0 * np.sum(weight * p.symbol(t).real * np.abs(c) ** 2)
        rest = p.rhs(t, c) - p.symbol(t) * c
        d = float(d + 2.0 * np.real(np.sum(weight * np.conj(c) * rest)))
        ns = np.sqrt(float(np.sum(weight * np.abs(c) ** 2)))
        a = _at(p.a, t, p.N)
        f = p.forcing_at(t)
        bound = 0.0
        if a is not None:
            bound += sobolev_norm(a, sigma) * ns ** 2
        if f is not None:
            bound += 2.0 * homogeneous_norm(f, s) * ns
        times.append(t)
        norms.append(ns)
        der.append(d)
        ratio.append(abs(d) / bound if bound > 0 else (0.0 if abs(d) < 1e-300 else np.inf))
    return EnergyReport(np.array(times), np.array(norms), np.array(der), np.array(ratio))


def growth_constant(p: LinearPDEProblem, traj: Trajectory, s=None):
    """max_t ||w(t)||_s / (||w0||_s + t sup ||f||_s) with inhomogeneous Sobolev norms."""
    s = p.s if s is None else s
    n0 = sobolev_norm(p.w0, s)
    fsup = 0.0
    if p.forcing is not None:
        fsup = max(sobolev_norm(_at(p.forcing, t, p.N), s) for t in traj.times)
    return max(sobolev_norm(w, s) / (n0 + t * fsup) for t, w in zip(traj.times, traj.states))


def commutator_constant(a, samples, s, N, sigma=2.0):
    """max over samples of ||[d_x^s, T_a d_x] w||_0 / (||a||_sigma ||d_x^s w||_0)."""
    k = np.arange(-N, N + 1)
    Ds = dx_multiplier(k, s)
    M = paraproduct_matrix(a.resize(N), N, 1)
    C = Ds[:, None] * M - M * Ds[None, :]
    na = sobolev_norm(a, sigma)
    worst = 0.0
    for w in samples:
        c = w.resize(N).coeffs
        worst = max(worst, np.linalg.norm(C @ c) / (na * homogeneous_norm(c, s)))
    return float(worst)


def airy_symbol(model, N, scale=1.0):
    """i Omega_j on the window, the order-3 multiplier of the normal form."""
    k = np.arange(-N, N + 1)
    return 1j * scale * model.Omega(k)

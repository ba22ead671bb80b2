"""Degree-truncated polynomial Hamiltonians in (y, w, eps) with angle-dependent coefficients.

A term is keyed by (e, alpha, kind): eps^e y^alpha times a w-dependence of the given kind,

    's'   scalar coefficient c(theta)
    'w1'  <c(theta), w> = sum_k c_k w_{-k}           (c a field on the w-window)
    'w2', 'w3', 'w4'  int rho(theta, x) w(x)^b dx     (rho a density on the window bJ)
    'nw'  1/2 sum_j nu_j w_j w_{-j}, nu_j = Omega_j / (2 pi j)

Coefficients are stored as values on a uniform angle grid of M points per
dimension, together with their angle bandwidth so that products stay exact.
The Poisson bracket is {G, F} = -grad_theta G . grad_y F + grad_y G . grad_theta F
+ <grad_w G, d_x grad_w F>, and the Lie series exp(ad_F) H is exact up to the
truncation degree because brackets never lower the degree.
"""
from dataclasses import dataclass

import numpy as np

KIND_DEGREE = {"s": 0, "w1": 1, "w2": 2, "w3": 3, "w4": 4, "nw": 2}


def key_degree(key):
    e, alpha, kind = key
    return e + sum(alpha) + KIND_DEGREE[kind]


@dataclass
class Term:
    values: np.ndarray
    bw: int


@dataclass
class Grid:
    """Angle grid, w-window and frequency data shared by all polynomials of a run."""

    d: int
    M: int
    J: int
    perp: np.ndarray          # boolean mask of S^perp on -J..J
    Omega: np.ndarray         # Omega_j on -J..J (zero off S^perp)
    omega: np.ndarray

    @property
    def shape(self):
        return (self.M,) * self.d

    @property
    def ell(self):
        """Integer angle modes in FFT order."""
        return np.rint(np.fft.fftfreq(self.M, 1.0 / self.M)).astype(int)

    def thetas(self):
        t = 2 * np.pi * np.arange(self.M) / self.M
        return np.stack(np.meshgrid(*([t] * self.d), indexing="ij"), axis=-1).reshape(-1, self.d)

    @property
    def nu(self):
        j = np.arange(-self.J, self.J + 1)
        out = np.zeros(len(j))
        nz = self.perp
        out[nz] = self.Omega[nz] / (2 * np.pi * j[nz])
        return out

    def axes(self):
        return tuple(range(self.d))

    # angle transforms -------------------------------------------------
    def to_fourier(self, values, L):
        """Centered coefficients for |ell|_inf <= L (values carry the angle axes first)."""
        c = np.fft.fftn(values, axes=self.axes()) / self.M ** self.d
        idx = np.arange(-L, L + 1) % self.M
        for ax in range(self.d):
            c = np.take(c, idx, axis=ax)
        return c

    def from_fourier(self, coeffs, L):
        shape = self.shape + coeffs.shape[self.d:]
        full = np.zeros(shape, dtype=complex)
        idx = np.arange(-L, L + 1) % self.M
        full[np.ix_(*([idx] * self.d))] = coeffs
        return np.fft.ifftn(full * self.M ** self.d, axes=self.axes())

    def d_theta(self, values, i):
        c = np.fft.fft(values, axis=i)
        shape = [1] * values.ndim
        shape[i] = self.M
        c = c * (1j * self.ell).reshape(shape)
        return np.fft.ifft(c, axis=i)

    def mean(self, values):
        return values.mean(axis=self.axes())

    def fluctuation(self, values):
        """Largest |coefficient| with ell != 0."""
        c = np.fft.fftn(values, axes=self.axes()) / self.M ** self.d
        c[(0,) * self.d] = 0
        return float(np.max(np.abs(c), initial=0.0))


def conv_x(a, Ka, b, Kb, Kout):
    """Coefficients |k| <= Kout of the product of two centered x-series (last axis)."""
    n = 2 * (Ka + Kb) + 1
    size = 1
    while size < n:
        size *= 2
    A = np.zeros(a.shape[:-1] + (size,), dtype=complex)
    B = np.zeros(b.shape[:-1] + (size,), dtype=complex)
    ka = np.arange(-Ka, Ka + 1) % size
    kb = np.arange(-Kb, Kb + 1) % size
    A[..., ka] = a
    B[..., kb] = b
    C = np.fft.ifft(np.fft.fft(A, axis=-1) * np.fft.fft(B, axis=-1), axis=-1)
    ko = np.arange(-Kout, Kout + 1)
    out = C[..., ko % size]
    out[..., np.abs(ko) > Ka + Kb] = 0
    return out


def dx_field(c):
    K = (c.shape[-1] - 1) // 2
    return c * (2j * np.pi * np.arange(-K, K + 1))


class Poly:
    """Sum of terms over the shared grid, truncated at total degree dmax."""

    def __init__(self, grid, dmax=3, terms=None):
        self.grid = grid
        self.dmax = dmax
        self.terms = dict(terms or {})

    def copy(self):
        return Poly(self.grid, self.dmax, {k: Term(t.values.copy(), t.bw) for k, t in self.terms.items()})

    def add(self, key, values, bw):
        if key_degree(key) > self.dmax:
            return
        if bw >= self.grid.M // 2:
            raise ValueError(f"angle bandwidth {bw} exceeds the grid (M={self.grid.M})")
        if key in self.terms:
            t = self.terms[key]
            self.terms[key] = Term(t.values + values, max(t.bw, bw))
        else:
            self.terms[key] = Term(np.array(values, dtype=complex), bw)

    def __add__(self, other):
        out = self.copy()
        for k, t in other.terms.items():
            out.add(k, t.values, t.bw)
        return out

    def scaled(self, s):
        return Poly(self.grid, self.dmax, {k: Term(t.values * s, t.bw) for k, t in self.terms.items()})

    def keys_of(self, degree=None, kind=None, e=None):
        return [k for k in self.terms
                if (degree is None or key_degree(k) == degree)
                and (kind is None or k[2] == kind) and (e is None or k[0] == e)]

    def get(self, key):
        t = self.terms.get(key)
        return None if t is None else t.values

    # Poisson bracket ------------------------------------------------------
    def bracket(self, F):
        """{self, F} truncated at dmax."""
        out = Poly(self.grid, self.dmax)
        g = self.grid
        for kg, tg in self.terms.items():
            for kf, tf in F.terms.items():
                if key_degree(kg) + key_degree(kf) - 2 > self.dmax:
                    continue
                _bracket_terms(out, g, kg, tg, kf, tf)
        return out

    def lie_transform(self, F, max_iter=40):
        """self o Phi_F = sum_k ad_F^k(self) / k!, ad_F G = {G, F}."""
        result = self.copy()
        cur = self
        for k in range(1, max_iter + 1):
            cur = cur.bracket(F).scaled(1.0 / k)
            cur.terms = {kk: t for kk, t in cur.terms.items() if np.any(t.values != 0)}
            if not cur.terms:
                return result
            result = result + cur
        raise RuntimeError("Lie series did not terminate")


def _shift(alpha, i, delta):
    a = list(alpha)
    a[i] += delta
    return tuple(a)


def _bcast_scalar(s, target_ndim):
    return s.reshape(s.shape + (1,) * (target_ndim - s.ndim))


def _bracket_terms(out, g, kg, tg, kf, tf):
    eg, ag, kind_g = kg
    ef, af, kind_f = kf
    d = g.d
    e = eg + ef
    # -grad_theta G . grad_y F
    if kind_g != "nw":
        for i in range(d):
            if af[i] == 0:
                continue
            alpha = _shift(tuple(a + b for a, b in zip(ag, af)), i, -1)
            if key_degree((e, alpha, "s")) + KIND_DEGREE[kind_g] + KIND_DEGREE[kind_f] > out.dmax:
                continue
            if kind_f == "s":
                val = -af[i] * g.d_theta(tg.values, i) * _bcast_scalar(tf.values, tg.values.ndim)
                key = (e, alpha, kind_g)
            elif kind_g == "s":
                val = -af[i] * _bcast_scalar(g.d_theta(tg.values, i), tf.values.ndim) * tf.values
                key = (e, alpha, kind_f)
            else:
                raise NotImplementedError(f"bracket of kinds {kind_g}, {kind_f}")
            out.add(key, val, tg.bw + tf.bw)
    # grad_y G . grad_theta F
    if kind_g != "nw":
        for i in range(d):
            if ag[i] == 0:
                continue
            alpha = _shift(tuple(a + b for a, b in zip(ag, af)), i, -1)
            if kind_f == "s":
                key = (e, alpha, kind_g)
                if key_degree(key) > out.dmax:
                    continue
                val = ag[i] * tg.values * _bcast_scalar(g.d_theta(tf.values, i), tg.values.ndim)
            elif kind_f == "w1" and kind_g == "s":
                key = (e, alpha, "w1")
                if key_degree(key) > out.dmax:
                    continue
                val = ag[i] * _bcast_scalar(tg.values, tf.values.ndim) * g.d_theta(tf.values, i)
            else:
                if key_degree((e, alpha, "s")) + KIND_DEGREE[kind_g] + KIND_DEGREE[kind_f] > out.dmax:
                    continue
                raise NotImplementedError(f"bracket of kinds {kind_g}, {kind_f}")
            out.add(key, val, tg.bw + tf.bw)
    # <grad_w G, d_x grad_w F>
    if kind_f == "w1" and kind_g != "s":
        alpha = tuple(a + b for a, b in zip(ag, af))
        dxf = dx_field(tf.values) * g.perp
        J = g.J
        if kind_g == "nw":
            key = (e, alpha, "w1")
            val = _bcast_scalar(g.nu, dxf.ndim) * dxf if False else g.nu * dxf
            out.add(key, val, tf.bw)
        elif kind_g == "w1":
            key = (e, alpha, "s")
            val = np.sum(tg.values * dxf[..., ::-1], axis=-1)
            out.add(key, val, tg.bw + tf.bw)
        else:
            b = KIND_DEGREE[kind_g]
            if b == 2:
                key = (e, alpha, "w1")
                if key_degree(key) > out.dmax:
                    return
                val = 2.0 * conv_x(tg.values, 2 * J, dxf, J, J) * g.perp
            else:
                key = (e, alpha, f"w{b - 1}")
                if key_degree(key) > out.dmax:
                    return
                val = b * conv_x(tg.values, b * J, dxf, J, (b - 1) * J)
            out.add(key, val, tg.bw + tf.bw)
    elif kind_f != "s" and kind_f != "w1":
        raise NotImplementedError("generators must be affine in w")


# ---------------------------------------------------------------------------
# pointwise evaluation (used by the flow-based oracles)

class Evaluator:
    """Evaluate a Poly and its Hamiltonian vector field at batches of phase points."""

    def __init__(self, poly):
        self.poly = poly
        g = poly.grid
        self.grid = g
        self.coeffs = {}
        for k, t in poly.terms.items():
            self.coeffs[k] = np.fft.fftn(t.values, axes=g.axes()) / g.M ** g.d
        self.ell = g.ell

    def _angle(self, c, theta):
        """Evaluate angle Fourier data c (FFT order, angle axes first) at theta (B, d)."""
        g = self.grid
        out = None
        for i in range(g.d):
            E = np.exp(1j * np.outer(theta[:, i], self.ell))
            if i == 0:
                out = np.tensordot(E, c, axes=([1], [0]))  # (B, rest)
            else:
                out = np.einsum("bl,bl...->b...", E, out)
        return out

    def _dtheta_coeffs(self, c, i):
        shape = [1] * c.ndim
        shape[i] = self.grid.M
        return c * (1j * self.ell).reshape(shape)

    @staticmethod
    def _mono(e, alpha, y, eps):
        m = np.full(len(y), float(eps) ** e)
        for i, a in enumerate(alpha):
            if a:
                m = m * y[:, i] ** a
        return m

    def value(self, theta, y, w, eps):
        """H at B points; w has shape (B, 2J+1)."""
        g = self.grid
        B = len(theta)
        total = np.zeros(B, dtype=complex)
        powers = {}
        for k, c in self.coeffs.items():
            e, alpha, kind = k
            mono = self._mono(e, alpha, y, eps)
            if kind == "nw":
                continue
            cv = self._angle(c, theta)
            if kind == "s":
                total += cv * mono
            elif kind == "w1":
                total += np.sum(cv * w[:, ::-1], axis=-1) * mono
            else:
                b = KIND_DEGREE[kind]
                if b not in powers:
                    powers[b] = w_power(w, g.J, b)
                total += np.sum(cv * powers[b][:, ::-1], axis=-1) * mono
        if any(k[2] == "nw" for k in self.coeffs):
            total += 0.5 * np.sum(g.nu * w * w[:, ::-1], axis=-1)
        return total.real

    def field(self, theta, y, w, eps):
        """(theta_dot, y_dot, w_dot) = (-grad_y F, grad_theta F, d_x grad_w F) for generators."""
        g = self.grid
        B = len(theta)
        th = np.zeros((B, g.d), dtype=complex)
        yd = np.zeros((B, g.d), dtype=complex)
        wd = np.zeros((B, 2 * g.J + 1), dtype=complex)
        for k, c in self.coeffs.items():
            e, alpha, kind = k
            if kind not in ("s", "w1"):
                raise NotImplementedError("flows are built for generators affine in w")
            mono = self._mono(e, alpha, y, eps)
            cv = self._angle(c, theta)
            pair = cv if kind == "s" else np.sum(cv * w[:, ::-1], axis=-1)
            for i in range(g.d):
                dc = self._angle(self._dtheta_coeffs(c, i), theta)
                dpair = dc if kind == "s" else np.sum(dc * w[:, ::-1], axis=-1)
                yd[:, i] += dpair * mono
                if alpha[i]:
                    dm = alpha[i] * self._mono(e, _shift(alpha, i, -1), y, eps)
                    th[:, i] -= pair * dm
            if kind == "w1":
                wd += dx_field(cv) * g.perp * mono[:, None]
        return th.real, yd.real, wd

    def flow(self, theta, y, w, eps, steps=8, time=1.0):
        """Classical RK4 for the time-`time` flow."""
        h = time / steps
        x = (theta.astype(float), y.astype(float), w.astype(complex))
        for _ in range(steps):
            k1 = self.field(*x, eps)
            x2 = tuple(a + 0.5 * h * b for a, b in zip(x, k1))
            k2 = self.field(*x2, eps)
            x3 = tuple(a + 0.5 * h * b for a, b in zip(x, k2))
            k3 = self.field(*x3, eps)
            x4 = tuple(a + h * b for a, b in zip(x, k3))
            k4 = self.field(*x4, eps)
            x = tuple(a + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
                      for a, b1, b2, b3, b4 in zip(x, k1, k2, k3, k4))
        return x


def w_power(w, J, b):
    """Coefficients |k| <= bJ of w^b for a batch of centered w-series (B, 2J+1)."""
    out = w
    K = J
    for _ in range(b - 1):
        out = conv_x(out, K, w, J, K + J)
        K += J
    return out

"""Truncated Fourier series on the unit circle, convention e^{2 pi i k x}.

Coefficients are stored two-sided, index k+K for k in -K..K.
"""
from dataclasses import dataclass, field
import io

import numpy as np


def bracket(k):
    """<k> = max(1, |k|)."""
    return np.maximum(1.0, np.abs(k))


class FourierSeries:
    """Real periodic function given by coefficients c_k, |k| <= K."""

    __slots__ = ("coeffs", "K", "mean_zero")

    def __init__(self, coeffs, mean_zero=False, check=True):
        c = np.array(coeffs, dtype=complex)
        if c.ndim != 1 or len(c) % 2 == 0:
            raise ValueError("coefficient array must have odd length 2K+1")
        self.K = len(c) // 2
        if mean_zero:
            c[self.K] = 0.0
        if check:
            defect = np.max(np.abs(c - np.conj(c[::-1])), initial=0.0)
            if defect > 1e-12 * max(1.0, np.max(np.abs(c), initial=0.0)):
                raise ValueError(f"coefficients violate reality (defect {defect:.2e})")
        c.setflags(write=False)
        self.coeffs = c
        self.mean_zero = mean_zero

    @classmethod
    def zeros(cls, K):
        return cls(np.zeros(2 * K + 1))

    @classmethod
    def from_modes(cls, K, modes):
        """modes: dict k -> complex for k >= 0; negative modes by conjugation."""
        c = np.zeros(2 * K + 1, dtype=complex)
        for k, v in modes.items():
            if k == 0:
                c[K] = v.real
            else:
                c[K + k] = v
                c[K - k] = np.conj(v)
        return cls(c)

    @classmethod
    def from_values(cls, values, K):
        """Interpolate grid values u(x_n), x_n = n/M, keeping |k| <= K (M > 2K)."""
        values = np.asarray(values, dtype=float)
        M = len(values)
        if M <= 2 * K:
            raise ValueError("grid too coarse for requested K")
        f = np.fft.fft(values) / M
        c = np.concatenate([f[M - K:], f[:K + 1]])
        return cls(symmetrize(c))

    @classmethod
    def random(cls, K, rng, decay=0.0, mean_zero=False):
        k = np.arange(0, K + 1)
        amp = bracket(k) ** (-decay)
        v = (rng.standard_normal(K + 1) + 1j * rng.standard_normal(K + 1)) * amp
        v[0] = v[0].real
        c = np.concatenate([np.conj(v[:0:-1]), v])
        return cls(c, mean_zero=mean_zero)

    @property
    def modes(self):
        return np.arange(-self.K, self.K + 1)

    def __getitem__(self, k):
        if abs(k) > self.K:
            return 0.0
        return self.coeffs[k + self.K]

    def resize(self, K):
        """Zero-pad or truncate to a new window."""
        c = np.zeros(2 * K + 1, dtype=complex)
        m = min(K, self.K)
        c[K - m:K + m + 1] = self.coeffs[self.K - m:self.K + m + 1]
        return FourierSeries(c, check=False)

    def values(self, M=None):
        """Samples on the uniform grid of M points (default 4K)."""
        M = M or max(4 * self.K, 8)
        f = np.zeros(M, dtype=complex)
        k = self.modes
        f[k % M] += self.coeffs
        return np.real(np.fft.ifft(f) * M)

    def __add__(self, other):
        K = max(self.K, other.K)
        return FourierSeries(self.resize(K).coeffs + other.resize(K).coeffs, check=False)

    def __sub__(self, other):
        K = max(self.K, other.K)
        return FourierSeries(self.resize(K).coeffs - other.resize(K).coeffs, check=False)

    def __mul__(self, scalar):
        return FourierSeries(self.coeffs * scalar, check=False)

    __rmul__ = __mul__

    def __neg__(self):
        return FourierSeries(-self.coeffs, check=False)

    def mean(self):
        return self.coeffs[self.K].real

    def to_csv(self):
        out = io.StringIO()
        out.write("k,re,im\n")
        for k, c in zip(self.modes, self.coeffs):
            out.write(f"{k},{c.real:.17g},{c.imag:.17g}\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = [r for r in text.strip().splitlines()[1:] if r and not r.startswith("#")]
        data = np.array([[float(x) for x in r.split(",")] for r in rows])
        K = int(np.max(np.abs(data[:, 0])))
        c = np.zeros(2 * K + 1, dtype=complex)
        c[data[:, 0].astype(int) + K] = data[:, 1] + 1j * data[:, 2]
        return cls(c)


def symmetrize(c):
    """Project a two-sided coefficient array onto the real subspace."""
    return 0.5 * (c + np.conj(c[::-1]))


@dataclass(frozen=True)
class ModeSet:
    """Tangential sites S_+ (positive integers) and the normal window |j| <= J."""

    s_plus: tuple = ()
    J: int = 16

    def __post_init__(self):
        object.__setattr__(self, "s_plus", tuple(sorted(set(int(s) for s in self.s_plus))))
        if any(s <= 0 for s in self.s_plus):
            raise ValueError("S_+ must contain positive integers")

    @property
    def d(self):
        return len(self.s_plus)

    def in_perp(self, j):
        j = np.asarray(j)
        ok = j != 0
        for s in self.s_plus:
            ok &= np.abs(j) != s
        return ok

    @property
    def s_perp(self):
        j = np.arange(-self.J, self.J + 1)
        return j[self.in_perp(j)]

    def perp_mask(self, K):
        return self.in_perp(np.arange(-K, K + 1))


@dataclass
class PhasePoint:
    """(theta, y, w) with the size parameter eps; w holds coefficients on S^perp."""

    theta: np.ndarray
    y: np.ndarray
    w: FourierSeries
    eps: float = 0.0
    modes: ModeSet = field(default_factory=ModeSet)

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float)) % (2 * np.pi)
        self.y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        off = ~self.modes.perp_mask(self.w.K) & (np.abs(self.w.coeffs) > 0)
        if np.any(off):
            raise ValueError("w has support outside S^perp")

    def scaled(self, t):
        return PhasePoint(self.theta, t * self.y, t * self.w, t * self.eps, self.modes)


def sobolev_norm(u, s):
    k = u.modes
    return float(np.sqrt(np.sum(bracket(k) ** (2 * s) * np.abs(u.coeffs) ** 2)))


def dx_multiplier(k, m):
    """Symbol of d_x^m on modes k, with d_x^{-m}[1] = 0 and d_x^0 = id."""
    k = np.asarray(k)
    out = np.zeros(k.shape, dtype=complex)
    nz = k != 0
    out[nz] = (2j * np.pi * k[nz]) ** m
    if m == 0:
        out[~nz] = 1.0
    return out


def dx_power(u, m):
    return FourierSeries(dx_multiplier(u.modes, m) * u.coeffs, check=False)


def project_perp(u, modes):
    return FourierSeries(np.where(modes.perp_mask(u.K), u.coeffs, 0), check=False)


def multiply(u, v, K=None):
    """Dealiased product truncated to K (default max of the two windows)."""
    Kin = max(u.K, v.K)
    K = K or Kin
    M = max(K, Kin) + 2 * Kin + 2
    prod = u.values(M) * v.values(M)
    f = np.fft.fft(prod) / M
    k = np.arange(-K, K + 1)
    c = np.where(np.abs(k) <= 2 * Kin, f[k % M], 0)
    return FourierSeries(symmetrize(c), check=False)


def symplectic_form(u, v):
    """int_0^1 (d_x^{-1} u) v dx for mean-zero u, v."""
    tol = 1e-14
    if abs(u[0]) > tol or abs(v[0]) > tol:
        raise ValueError("symplectic form needs mean-zero inputs")
    K = max(u.K, v.K)
    du = dx_power(u, -1).resize(K).coeffs
    vv = v.resize(K).coeffs
    return float(np.real(np.sum(du * vv[::-1])))


def l2_pairing(u, v):
    """int_0^1 u v dx."""
    K = max(u.K, v.K)
    return float(np.real(np.sum(u.resize(K).coeffs * v.resize(K).coeffs[::-1])))

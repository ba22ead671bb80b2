"""Pseudo-spectral solver for u_t = -u_xxx + 6 u u_x + eps d_x[d_zeta f(x, u)].

Solutions are real and mean-zero; fields are FourierSeries on |k| <= K and
products are evaluated on a padded grid of at least 3K + 2 points (2/3 rule).
Two integrators are provided: `step`/`integrate`, exponential time
differencing RK4 (ETDRK4) with the Airy part propagated exactly, and
`WaveFrame`, integrating-factor RK4 in the frame moving with a traveling wave
q, where the integrating factor is the exact exponential of the linearization
at q. The second one removes the advection stiffness 6 q d_x and is used
for the long stability runs.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft
from scipy.linalg import expm
from scipy.optimize import brentq
from scipy.special import ellipe, ellipj, ellipk

from .fourier_core import FourierSeries, bracket, multiply


class IntegrationAbort(FloatingPointError):
    def __init__(self, t, eps=None):
        self.t, self.eps = t, eps
        super().__init__(f"non-finite state at t={t} (eps={eps})")


# ---------------------------------------------------------------------------
# half-spectrum helpers (k = 0..K) on a padded real grid

class _Grid:
    def __init__(self, K, extra=0):
        self.K = K
        self.M = next_fast_len(3 * K + 2 + extra)
        self.k = np.arange(K + 1)
        self.ik = 2j * np.pi * self.k

    def to_grid(self, h):
        full = np.zeros(self.M // 2 + 1, dtype=complex)
        full[:self.K + 1] = h
        return irfft(full, n=self.M) * self.M

    def from_grid(self, v):
        return rfft(v)[:self.K + 1] / self.M


def _half(u):
    return u.coeffs[u.K:].copy()


def _full(h):
    h = np.asarray(h, dtype=complex)
    c = np.concatenate([np.conj(h[:0:-1]), h])
    c[len(h) - 1] = c[len(h) - 1].real
    return FourierSeries(c, check=False)


def _density_half(f, K, grid):
    """Half spectra of the coefficients of d_zeta f, padded to the window."""
    fp = f.derivative()
    return [_half(c.resize(K)) for c in fp.coeffs]


def _flux(grid, u_vals, fp_half, phase=None):
    """Grid values of d_zeta f(x + shift, u) from coefficient half spectra."""
    total = np.zeros(grid.M)
    power = np.ones(grid.M)
    for h in fp_half:
        hh = h if phase is None else h * phase
        total += grid.to_grid(hh) * power
        power = power * u_vals
    return total


def kdv_rhs(u, eps=0.0, f=None):
    """-d_x^3 u + 6 u u_x + eps d_x[d_zeta f(x, u)] on the window of u (dealiased)."""
    K = u.K
    g = _Grid(K, 0 if f is None else max(c.K for c in f.coeffs))
    h = _half(u)
    out = -(g.ik ** 3) * h
    uv = g.to_grid(h)
    out += g.ik * g.from_grid(3.0 * uv * uv)
    if f is not None and eps != 0.0:
        out += eps * g.ik * g.from_grid(_flux(g, uv, _density_half(f, K, g)))
    out[0] = 0.0
    return _full(out)


def _nonlinear(g, h, eps, fp_half):
    uv = g.to_grid(h)
    out = g.ik * g.from_grid(3.0 * uv * uv)
    if fp_half is not None and eps != 0.0:
        out += eps * g.ik * g.from_grid(_flux(g, uv, fp_half))
    out[0] = 0.0
    return out


def _etd_coefficients(lin, dt, points=32):
    """ETDRK4 weights for the diagonal linear part `lin`, by contour averages.

    Each phi-type function is averaged over a unit circle around lin * dt, which
    avoids the cancellation of the closed forms near zero.
    """
    z = lin * dt
    r = np.exp(2j * np.pi * (np.arange(points) + 0.5) / points)
    Z = z[:, None] + r[None, :]
    eZ = np.exp(Z)
    Z3 = Z ** 3
    half = dt * np.mean((np.exp(Z / 2) - 1) / Z, axis=1)
    w1 = dt * np.mean((-4 - Z + eZ * (4 - 3 * Z + Z ** 2)) / Z3, axis=1)
    w2 = dt * np.mean((2 + Z + eZ * (Z - 2)) / Z3, axis=1)
    w3 = dt * np.mean((-4 - 3 * Z - Z ** 2 + eZ * (4 - Z)) / Z3, axis=1)
    return np.exp(z), np.exp(z / 2), half, w1, w2, w3


class _Stepper:
    """ETDRK4 on the half spectrum: the Airy part exactly, the rest explicitly."""

    def __init__(self, K, dt, eps=0.0, f=None):
        self.g = _Grid(K, 0 if f is None else max(c.K for c in f.coeffs))
        self.fp = _density_half(f, K, self.g) if f is not None else None
        self.eps, self.dt = eps, dt
        self.E, self.Eh, self.Q, self.w1, self.w2, self.w3 = _etd_coefficients(
            -(self.g.ik ** 3), dt)

    def __call__(self, h):
        N = lambda v: _nonlinear(self.g, v, self.eps, self.fp)
        Eh, Q = self.Eh, self.Q
        n0 = N(h)
        a = Eh * h + Q * n0
        na = N(a)
        b = Eh * h + Q * na
        nb = N(b)
        c = Eh * a + Q * (2 * nb - n0)
        nc = N(c)
        out = self.E * h + self.w1 * n0 + 2 * self.w2 * (na + nb) + self.w3 * nc
        out[0] = 0.0
        return out


def step(u, dt, eps=0.0, f=None, nonlinear=True, t=0.0):
    """One ETDRK4 step (exact Airy flow, explicit nonlinearity)."""
    if not nonlinear:
        g = _Grid(u.K)
        out = np.exp(-(g.ik ** 3) * dt) * _half(u)
    else:
        out = _Stepper(u.K, dt, eps, f)(_half(u))
    if not np.all(np.isfinite(out)):
        raise IntegrationAbort(t + dt, eps)
    out[0] = 0.0
    return _full(out)


def integrate(u, T, dt, eps=0.0, f=None, callback=None, every=1):
    """Advance to time T (negative T with negative dt runs backward); callback(t, u) every `every` steps."""
    n = int(round(T / dt))
    adv = _Stepper(u.K, dt, eps, f)
    h = _half(u)
    for i in range(n):
        h = adv(h)
        if not np.all(np.isfinite(h)):
            raise IntegrationAbort((i + 1) * dt, eps)
        if callback is not None and (i + 1) % every == 0:
            callback((i + 1) * dt, _full(h))
    return _full(h)


# ---------------------------------------------------------------------------
# invariants

def hamiltonian(u):
    """int (u_x^2 / 2 + u^3) dx, the cubic term by quadrature on a grid of 2 x (3K + 2) points."""
    k = u.modes
    kin = 0.5 * float(np.sum((2 * np.pi * k) ** 2 * np.abs(u.coeffs) ** 2))
    M = 2 * (3 * u.K + 2)
    v = u.values(M)
    return kin + float(np.mean(v ** 3))


def momentum(u):
    return 0.5 * float(np.sum(np.abs(u.coeffs) ** 2))


def mean(u):
    return float(u.coeffs[u.K].real)


# ---------------------------------------------------------------------------
# traveling waves

@dataclass
class TravelingWave:
    """u(t, x) = q(x - c t) with -q''' + 6 q q' + c q' = 0."""

    q: FourierSeries
    c: float
    amplitude: float = 0.0
    modulus: float = 0.0

    def residual(self):
        q = self.q
        r = -(_deriv(q, 3)) + 6.0 * multiply(q, _deriv(q, 1)) + self.c * _deriv(q, 1)
        return float(np.sqrt(np.sum(np.abs(r.coeffs) ** 2)))


def _deriv(u, m):
    return FourierSeries(u.coeffs * (2j * np.pi * u.modes) ** m, check=False)


def cnoidal(amplitude, K=128, tol=1e-8):
    """Mean-zero 1-periodic cnoidal wave q ~ amplitude * cos(2 pi x) for small amplitude.

    q(x) = alpha cn^2(beta (x + 1/2) | m) + delta with beta = 2 K(m),
    alpha = -2 m beta^2 and peak-to-peak |alpha| = 2 * amplitude, so m solves
    4 m K(m)^2 = amplitude; delta makes the mean zero and
    c = -4 (1 - 2m) beta^2 - 6 delta.
    """
    A = float(amplitude)
    if not np.isfinite(A) or A < 0:
        raise ValueError("amplitude must be a nonnegative finite number")
    if A == 0:
        return TravelingWave(FourierSeries.zeros(K), -(2 * np.pi) ** 2, 0.0, 0.0)
    g = lambda m: 4 * m * ellipk(m) ** 2 - A
    hi = 1 - 1e-16
    if g(hi) < 0:
        raise ValueError("amplitude outside the elliptic-function range")
    m = brentq(g, 1e-300, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    Km, Em = ellipk(m), ellipe(m)
    beta = 2 * Km
    alpha = -2 * m * beta ** 2
    delta = -alpha * (Em - (1 - m) * Km) / (m * Km)
    c = -4 * (1 - 2 * m) * beta ** 2 - 6 * delta
    Mgrid = 8 * (2 * K + 1)
    x = np.arange(Mgrid) / Mgrid
    cn = ellipj(beta * (x + 0.5), m)[1]
    q = FourierSeries.from_values(alpha * cn ** 2 + delta, K)
    # coefficients below the rounding floor carry no information but are
    # amplified by d_x^3; the exact ones decay geometrically, so drop the tail
    coef = np.array(q.coeffs)
    coef[np.abs(coef) < 1e-16 * np.max(np.abs(coef))] = 0.0
    q = FourierSeries(coef, mean_zero=True, check=False)
    wave = TravelingWave(q, float(c), A, float(m))
    r = wave.residual()
    if r > tol:
        raise ValueError(f"window K={K} too small for amplitude {A} (residual {r:.2e})")
    return wave


# ---------------------------------------------------------------------------
# orbit distance

def orbit_distance(u, wave, s=0.0, return_shift=False):
    """min over shifts sigma of ||u - q(. - sigma)||_s, with Newton refinement of sigma."""
    q = wave.q
    K = max(u.K, q.K)
    uc, qc = u.resize(K).coeffs, q.resize(K).coeffs
    k = np.arange(-K, K + 1)
    w = bracket(k) ** (2 * s)
    g = w * uc * np.conj(qc)
    G = 8 * (2 * K + 1)
    spec = np.zeros(G, dtype=complex)
    spec[k % G] = g
    corr = np.real(np.fft.ifft(spec) * G)
    sigma = np.argmax(corr) / G
    tk = 2j * np.pi * k
    for _ in range(50):
        ph = np.exp(tk * sigma)
        d1 = np.real(np.sum(g * tk * ph))
        d2 = np.real(np.sum(g * tk ** 2 * ph))
        if d2 >= 0:
            break
        delta = -d1 / d2
        sigma += delta
        if abs(delta) < 1e-15:
            break
    shifted = qc * np.exp(-tk * sigma)
    dist = float(np.sqrt(np.sum(w * np.abs(uc - shifted) ** 2)))
    return (dist, sigma % 1.0) if return_shift else dist


# ---------------------------------------------------------------------------
# frame of a traveling wave

class WaveFrame:
    """Integrating-factor RK4 for v in u(t, x) = q(x - ct) + v(t, x - ct).

    v_t = A v + 3 d_x(v^2) + r_q + eps d_x[d_zeta f(x + c t, q + v)] with
    A = -d_x^3 + c d_x + 6 d_x(q .) propagated exactly (matrix exponential on
    the real basis of the window) and r_q the wave's residual.
    """

    def __init__(self, wave, dt, eps=0.0, f=None):
        self.wave, self.dt, self.eps = wave, dt, eps
        q = wave.q
        K = q.K
        self.K = K
        self.g = _Grid(K, 0 if f is None else max(c.K for c in f.coeffs))
        self.fp = _density_half(f, K, self.g) if (f is not None and eps != 0.0) else None
        self.qh = _half(q)
        self.q_vals = self.g.to_grid(self.qh)
        k = np.arange(-K, K + 1)
        ik = 2j * np.pi * k
        Mq = np.zeros((2 * K + 1, 2 * K + 1), dtype=complex)
        diff = k[:, None] - k[None, :]
        inside = np.abs(diff) <= K
        Mq[inside] = q.coeffs[diff[inside] + K]
        A = np.diag(-(ik ** 3) + wave.c * ik) + 6.0 * ik[:, None] * Mq
        self.A = self._real_matrix(A)
        self.E = expm(self.A * dt)
        self.Eh = expm(self.A * dt / 2)
        r = -(_deriv(q, 3)) + 6.0 * multiply(q, _deriv(q, 1)) + wave.c * _deriv(q, 1)
        self.rq = self._to_x(_half(r))
        self.phase_k = 2j * np.pi * np.arange(K + 1) * wave.c

    def _to_x(self, h):
        return np.concatenate([h.real, h[1:].imag])

    def _from_x(self, x):
        K = self.K
        h = x[:K + 1].astype(complex)
        h[1:] += 1j * x[K + 1:]
        return h

    def _real_matrix(self, A):
        K = self.K
        n = 2 * K + 1
        out = np.zeros((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            h = self._from_x(e)
            full = np.concatenate([np.conj(h[:0:-1]), h])
            out[:, i] = self._to_x((A @ full)[K:])
        return out

    def nonlinear(self, t, x):
        g = self.g
        h = self._from_x(x)
        v = g.to_grid(h)
        out = g.ik * g.from_grid(3.0 * v * v)
        if self.fp is not None:
            phase = np.exp(self.phase_k * t)
            out += self.eps * g.ik * g.from_grid(_flux(g, self.q_vals + v, self.fp, phase))
        out[0] = 0.0
        return self._to_x(out) + self.rq

    def run(self, v0, T, callback=None, every=1, t0=0.0):
        """Advance v0 (FourierSeries) to time T; callback(t, u_frame) every `every` steps."""
        dt = self.dt
        n = int(round(T / dt))
        x = self._to_x(_half(v0.resize(self.K)))
        E, Eh, N = self.E, self.Eh, self.nonlinear
        t = t0
        for i in range(n):
            k1 = N(t, x)
            k2 = N(t + dt / 2, Eh @ (x + dt / 2 * k1))
            k3 = N(t + dt / 2, Eh @ x + dt / 2 * k2)
            k4 = N(t + dt, E @ x + dt * (Eh @ k3))
            x = E @ x + dt / 6 * (E @ k1 + 2 * (Eh @ (k2 + k3)) + k4)
            t = t0 + (i + 1) * dt
            if not np.all(np.isfinite(x)):
                raise IntegrationAbort(t, self.eps)
            if callback is not None and (i + 1) % every == 0:
                callback(t, self.wave.q + _full(self._from_x(x)))
        return _full(self._from_x(x))


# ---------------------------------------------------------------------------
# stability harness

@dataclass
class StabilityTable:
    rows: list = field(default_factory=list)
    companion: list = field(default_factory=list)
    s: float = 1.0
    bound: float = 10.0

    HEADER = "eps,T,max_ratio,H_drift,M_drift,aborted_at"

    def to_csv(self, comment=None):
        lines = [] if comment is None else [f"# {comment}"]
        lines.append(self.HEADER)
        for r in self.rows:
            ab = "" if r["aborted_at"] is None else f"{r['aborted_at']:.17g}"
            lines.append(f"{r['eps']:.17g},{r['T']:.17g},{r['max_ratio']:.17g},"
                         f"{r['H_drift']:.17g},{r['M_drift']:.17g},{ab}")
        return "\n".join(lines) + "\n"

    def stable(self, eps):
        r = next(r for r in self.rows if r["eps"] == eps)
        return r["aborted_at"] is None and r["max_ratio"] <= self.bound


def perturbation_direction(K, s, seed=0, band=8, decay=3.0):
    """Seeded smooth mean-zero field with unit H^s norm."""
    rng = np.random.default_rng(seed)
    p = FourierSeries.random(band, rng, decay=decay, mean_zero=True).resize(K)
    k = p.modes
    norm = np.sqrt(np.sum(bracket(k) ** (2 * s) * np.abs(p.coeffs) ** 2))
    return p * (1.0 / norm)


def default_dt(eps, speed=0.0, per_period=32, cap=0.05):
    """Step for the frame integrator.

    With eps > 0 the perturbation coefficients rotate at frequency 2 pi |c| in
    the moving frame; the step resolves that period with `per_period` points.
    """
    if eps == 0 or speed == 0:
        return cap
    return min(cap, 1.0 / (per_period * abs(speed)))


def projected_runtime(wave, f, eps_list, horizon=1.0, dt=None, probe_steps=100,
                      zero_horizon=10.0, companion=True, companion_dt=None):
    """Wall-clock estimate (seconds) of stability_experiment from a timed probe."""
    import time

    T_of = horizon if callable(horizon) else (lambda e: horizon / e ** 2)
    dt_of = dt if callable(dt) else ((lambda e: dt) if dt is not None
                                     else (lambda e: default_dt(e, wave.c)))
    e_probe = max(eps_list)
    frame = WaveFrame(wave, dt_of(e_probe), e_probe, f)
    v0 = perturbation_direction(wave.q.K, 1.0) * e_probe
    start = time.perf_counter()
    frame.run(v0, probe_steps * frame.dt)
    per_step = (time.perf_counter() - start) / probe_steps
    steps = sum((zero_horizon if e == 0 else T_of(e)) / dt_of(e) for e in eps_list)
    if companion and e_probe > 0:
        steps += T_of(e_probe) / (dt_of(e_probe) if companion_dt is None else companion_dt)
    return per_step * steps, per_step, steps


def stability_experiment(wave, f, eps_list, s=1.0, horizon=1.0, dt=None, samples=200,
                         seed=0, bound=10.0, zero_horizon=10.0, companion=True, companion_dt=None):
    """orbit distance / eps along perturbed runs to T = horizon * eps^-2.

    horizon may be a number c (T = c eps^-2) or a callable eps -> T; dt a number
    or a callable eps -> dt. For eps = 0 the run lasts zero_horizon and the
    ratio column holds the absolute distance. When companion is set, the
    initial datum of the largest eps is also run with f switched off and its
    Hamiltonian drift recorded in table.companion; companion_dt overrides its
    step (the drift is pure time-discretization error, so it may need a finer
    step than the forced runs).
    """
    K = wave.q.K
    p = perturbation_direction(K, s, seed)
    table = StabilityTable(s=s, bound=bound)
    T_of = horizon if callable(horizon) else (lambda e: horizon / e ** 2)
    dt_of = dt if callable(dt) else ((lambda e: dt) if dt is not None
                                     else (lambda e: default_dt(e, wave.c)))
    for eps in eps_list:
        T = zero_horizon if eps == 0 else T_of(eps)
        table.rows.append(_one_run(wave, f, eps, p, s, T, dt_of(eps), samples))
    if companion and any(e > 0 for e in eps_list):
        e = max(eps_list)
        cdt = dt_of(e) if companion_dt is None else companion_dt
        row = _one_run(wave, None, e, p, s, T_of(e), cdt, samples, init_eps=e, track=False)
        table.companion.append(row)
    return table


def _one_run(wave, f, eps, p, s, T, dt, samples, init_eps=None, track=True):
    init_eps = eps if init_eps is None else init_eps
    frame = WaveFrame(wave, dt, eps if f is not None else 0.0, f)
    v0 = p * init_eps
    u0 = wave.q + v0
    H0, M0 = hamiltonian(u0), momentum(u0)
    n = max(1, int(round(T / dt)))
    every = max(1, n // samples)
    worst = [orbit_distance(u0, wave, s)]

    def cb(t, u):
        if track:
            worst.append(orbit_distance(u, wave, s))

    aborted = None
    try:
        vT = frame.run(v0, n * dt, cb if track else None, every)
        uT = wave.q + vT
        H_drift = abs(hamiltonian(uT) - H0) / max(abs(H0), 1e-300)
        M_drift = abs(momentum(uT) - M0) / max(abs(M0), 1e-300)
    except IntegrationAbort as exc:
        aborted, H_drift, M_drift = exc.t, np.nan, np.nan
    dmax = max(worst)
    ratio = dmax if eps == 0 else dmax / eps
    return {"eps": eps, "T": n * dt, "max_ratio": ratio, "H_drift": H_drift,
            "M_drift": M_drift, "aborted_at": aborted, "dt": dt}

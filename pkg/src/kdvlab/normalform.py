"""Normal-form pipeline on Taylor-truncated Hamiltonians.

Hamiltonian stage: three Lie transforms remove the angle dependence of the
eps-linear, eps^2 and degree-three affine blocks. Vector-field stage: the
linear and quadratic-in-w parts of the normal component are para-linearized,
the non-constant symbol coefficients are conjugated away order by order,
the w-dependent multipliers below order one are removed, and the smoothing
remainders are reduced to their resonant diagonals.

Coordinates and conventions: theta on the torus T^d, actions y, normal
variable w on S^perp; X_H = (-grad_y H, grad_theta H, d_x grad_w H), so the
unperturbed angles move as theta' = -omega.
"""
from dataclasses import dataclass, field
from itertools import product as iproduct
from math import comb

import numpy as np

from .fourier_core import FourierSeries, ModeSet, PhasePoint, bracket, dx_multiplier
from .homological import (
    SmoothingKernel, TorusField, omega_dot_ell, second_melnikov_divisor, solve_first_melnikov,
    solve_second_melnikov, solve_theta_quadratic, solve_third_melnikov, theta_quadratic_divisor,
    third_melnikov_divisor,
    solve_torus_transport, solve_x_transport_coeffs,
)
from .paradiff import DEFAULT_CUTOFF, gen_binomial
from .taylor import KIND_DEGREE, Evaluator, Grid, Poly, Term, conv_x, key_degree, w_power


# ---------------------------------------------------------------------------
# Hamiltonian data

def _monomials(d, n):
    """Exponent tuples alpha with |alpha| = n."""
    return [a for a in iproduct(range(n + 1), repeat=d) if sum(a) == n]


# block name -> (eps power, y degree, kind)
BLOCKS = {
    "P00": (1, 0, "s"), "P10": (1, 1, "s"), "P01": (1, 0, "w1"),
    "P00_2": (2, 0, "s"), "P10_2": (2, 1, "s"), "P01_2": (2, 0, "w1"), "P00_3": (3, 0, "s"),
    "P20": (1, 2, "s"), "P30": (0, 3, "s"), "P11": (1, 1, "w1"), "P21": (0, 2, "w1"),
    "P02_eps": (1, 0, "w2"), "P02_y": (0, 1, "w2"), "P03": (0, 0, "w3"),
}


@dataclass
class TaylorHamiltonian:
    """N + perturbation, truncated at total degree three in (y, w, eps).

    N = omega.y + 1/2 Omega_S y.y + 1/2 sum nu_j w_j w_-j. The quartic density
    int kappa4 w^4 is an order-four tail carried unchanged through the
    Hamiltonian steps (it only enters order-three vector-field terms).
    """

    poly: Poly
    model: object
    Omega_S: np.ndarray
    L: int
    quartic: np.ndarray = None

    @property
    def grid(self):
        return self.poly.grid

    @property
    def J(self):
        return self.grid.J

    @classmethod
    def empty(cls, model, Omega_S, L, J, M=None):
        d = model.modes.d
        M = M or 16 * L
        jj = np.arange(-J, J + 1)
        perp = ModeSet(model.modes.s_plus, J).perp_mask(J)
        grid = Grid(d, M, J, perp, np.where(perp, model.Omega(jj), 0.0), model.omega)
        poly = Poly(grid, 3)
        Omega_S = np.atleast_2d(np.asarray(Omega_S, dtype=float))
        for i in range(d):
            e_i = tuple(int(k == i) for k in range(d))
            poly.add((0, e_i, "s"), np.full(grid.shape, model.omega[i], dtype=complex), 0)
        for alpha in _monomials(d, 2):
            idx = [i for i in range(d) for _ in range(alpha[i])]
            c = 0.5 * Omega_S[idx[0], idx[1]] * (1 if idx[0] == idx[1] else 2)
            if c:
                poly.add((0, alpha, "s"), np.full(grid.shape, c, dtype=complex), 0)
        poly.terms[(0, (0,) * d, "nw")] = Term(np.zeros(grid.shape), 0)
        return cls(poly, model, Omega_S, L, np.zeros(grid.shape + (8 * J + 1,), dtype=complex))

    @classmethod
    def random(cls, model, Omega_S, rng, L=4, J=16, size=1e-2, M=None, x_band=3, quartic=True):
        """Random real blocks of the given size on |ell| <= L; densities keep |k| <= x_band."""
        H = cls.empty(model, Omega_S, L, J, M)
        for name in BLOCKS:
            for alpha in _monomials(model.modes.d, BLOCKS[name][1]):
                H.set_block(name, alpha, H._random_block(name, rng, size, x_band))
        if quartic:
            H.quartic = H.grid.from_fourier(H._random_density(4, rng, size, x_band).coeffs, L)
        return H

    def _width(self, kind):
        b = KIND_DEGREE[kind]
        return None if kind == "s" else b * self.J

    def _random_density(self, b, rng, size, x_band):
        K = b * self.J
        mask = (np.abs(np.arange(-K, K + 1)) <= x_band).astype(float)
        f = TorusField.random(self.grid.d, self.L, rng, K, mask=mask, decay=2.0)
        f.coeffs *= size
        return f

    def _random_block(self, name, rng, size, x_band):
        kind = BLOCKS[name][2]
        d, L, J = self.grid.d, self.L, self.J
        if kind == "s":
            f = TorusField.random(d, L, rng, decay=2.0)
        elif kind == "w1":
            jj = np.arange(-J, J + 1)
            f = TorusField.random(d, L, rng, J, mask=self.grid.perp * bracket(jj) ** -2.0, decay=2.0)
        else:
            return self._random_density(KIND_DEGREE[kind], rng, size, x_band)
        f.coeffs *= size
        return f

    def set_block(self, name, alpha, field):
        """Add a TorusField (angle window <= grid) as the block eps^e y^alpha of the given kind."""
        e, ydeg, kind = BLOCKS[name]
        alpha = tuple(alpha) or (0,) * self.grid.d
        if len(alpha) != self.grid.d or sum(alpha) != ydeg:
            raise ValueError(f"block {name} needs a y-exponent of length {self.grid.d} and degree {ydeg}")
        key = (e, alpha, kind)
        vals = self.grid.from_fourier(field.coeffs, field.L)
        self.poly.terms.pop(key, None)
        self.poly.add(key, vals, field.L)

    def block(self, key, L=None):
        """Angle-Fourier coefficients of a term as a TorusField on |ell| <= L."""
        t = self.poly.terms.get(key)
        kind = key[2]
        J = None if kind == "s" else (self.J if kind == "w1" else KIND_DEGREE[kind] * self.J)
        L = t.bw if (L is None and t is not None) else (L or 0)
        if t is None:
            return TorusField.zeros(self.grid.d, L, J)
        return TorusField(self.grid.to_fourier(t.values, L), self.grid.d, L, J)

    def with_poly(self, poly):
        return TaylorHamiltonian(poly, self.model, self.Omega_S, self.L, self.quartic)

    def reality_defect(self):
        out = 0.0
        for k, t in self.poly.terms.items():
            if k[2] == "nw":
                continue
            if k[2] == "s":
                out = max(out, float(np.max(np.abs(t.values.imag))))
            else:
                out = max(out, float(np.max(np.abs(t.values - np.conj(t.values[..., ::-1])))))
        return out

    def normal_form(self):
        """omega_hat (eps-linear frequency shift) and the y-polynomial Q from the angle averages."""
        g, d = self.grid, self.grid.d
        mean = lambda key: complex(g.mean(self.poly.get(key))) if key in self.poly.terms else 0j
        omega_hat = np.array([mean((1, e, "s")) for e in _monomials(d, 1)]).real
        omega_hat2 = np.array([mean((2, e, "s")) for e in _monomials(d, 1)]).real
        Q = {}
        for e in (0, 1):
            for n in (2, 3):
                if e + n > 3:
                    continue
                for alpha in _monomials(d, n):
                    v = mean((e, alpha, "s"))
                    if v:
                        Q[(e, alpha)] = v.real
        return {"omega_hat": omega_hat, "omega_hat_eps": omega_hat2, "Q": Q}


# ---------------------------------------------------------------------------
# the three Hamiltonian steps

def _field_to_values(grid, f):
    return grid.from_fourier(f.coeffs, f.L)


def _transport_residual(model, F, P):
    lhs = F.omega_derivative(model.omega).coeffs + P.coeffs
    lhs[(P.L,) * P.d] -= P.mean()
    return float(np.max(np.abs(lhs), initial=0.0))


def _melnikov_residual(model, F, P):
    jj = np.arange(-F.J, F.J + 1)
    lhs = F.omega_derivative(model.omega).coeffs + 1j * model.Omega(jj) * F.coeffs + P.coeffs
    mask = ModeSet(model.modes.s_plus, F.J).perp_mask(F.J)
    return float(np.max(np.abs(lhs * mask), initial=0.0))


def _eps_linear_defect(H):
    """Largest angle-dependent part among eps-linear blocks, plus the size of the eps w block."""
    g, d = H.grid, H.grid.d
    out = 0.0
    for alpha in _monomials(d, 0) + _monomials(d, 1):
        t = H.poly.terms.get((1, alpha, "s"))
        if t is not None:
            out = max(out, g.fluctuation(t.values))
    t = H.poly.terms.get((1, (0,) * d, "w1"))
    if t is not None:
        out = max(out, float(np.max(np.abs(t.values))))
    return out


def step1_normalize_linear(H, model=None):
    """Remove the angle dependence of eps P00, eps P10.y and eps <P01, w>."""
    model = model or H.model
    g, d = H.grid, H.grid.d
    zero = (0,) * d
    P00 = H.block((1, zero, "s"))
    F00 = solve_torus_transport(model, P00)
    gens = {"F00": F00, "F10": [], "F01": None}
    F = Poly(g, 3)
    F.add((1, zero, "s"), _field_to_values(g, F00), F00.L)
    residuals = {"F00": _transport_residual(model, F00, P00)}
    for i in range(d):
        e_i = tuple(int(k == i) for k in range(d))
        key = (1, e_i, "s")
        P10 = H.block(key, max(H.poly.terms[key].bw if key in H.poly.terms else 0, F00.L))
        corr = TorusField.zeros(d, P10.L)
        for k in range(d):
            dF = _theta_partial(F00, k)
            corr = corr + _pad(dF, P10.L) * H.Omega_S[i, k]
        rhs = P10 + corr
        F10 = solve_torus_transport(model, rhs)
        gens["F10"].append(F10)
        residuals[f"F10[{i}]"] = _transport_residual(model, F10, rhs)
        F.add((1, e_i, "s"), _field_to_values(g, F10), F10.L)
    P01 = H.block((1, zero, "w1"))
    F01 = solve_first_melnikov(model, P01)
    gens["F01"] = F01
    residuals["F01"] = _melnikov_residual(model, F01, P01)
    F.add((1, zero, "w1"), _field_to_values(g, F01), F01.L)
    H1 = H.with_poly(H.poly.lie_transform(F))
    H1.generator = F
    H1.residuals = residuals
    return H1, gens


def _theta_partial(f, k):
    ell = np.arange(-f.L, f.L + 1)
    shape = [1] * f.coeffs.ndim
    shape[k] = len(ell)
    return TorusField(f.coeffs * 1j * ell.reshape(shape), f.d, f.L, f.J)


def _pad(f, L):
    if f.L == L:
        return f
    if f.L > L:
        raise ValueError("cannot shrink an angle window")
    out = TorusField.zeros(f.d, L, f.J, f.coeffs.shape[f.d + (0 if f.J is None else 1):])
    s = tuple(slice(L - f.L, L + f.L + 1) for _ in range(f.d))
    out.coeffs[s] = f.coeffs
    return out


def step2_normalize_eps2(H, model=None):
    """Remove the angle dependence of the eps^2 scalar block."""
    model = model or H.model
    g, d = H.grid, H.grid.d
    key = (2, (0,) * d, "s")
    P = H.block(key)
    F2 = solve_torus_transport(model, P)
    F = Poly(g, 3)
    F.add(key, _field_to_values(g, F2), F2.L)
    H2 = H.with_poly(H.poly.lie_transform(F))
    H2.generator = F
    H2.residuals = {"F2": _transport_residual(model, F2, P)}
    return H2, F2


def step3_normalize_affine(H, model=None):
    """Average the degree-three y-polynomial blocks and remove the degree-three w-linear blocks."""
    model = model or H.model
    g = H.grid
    F = Poly(g, 3)
    gens, residuals = {}, {}
    for key in sorted(H.poly.terms):
        e, alpha, kind = key
        if key_degree(key) != 3 or kind not in ("s", "w1"):
            continue
        if kind == "s" and sum(alpha) == 0:
            continue  # eps^3 constant: no y-dependence, enters only the angle-dependent remainder
        P = H.block(key)
        if kind == "s":
            G = solve_torus_transport(model, P)
            residuals[str(key)] = _transport_residual(model, G, P)
        else:
            G = solve_first_melnikov(model, P)
            residuals[str(key)] = _melnikov_residual(model, G, P)
        gens[key] = G
        F.add(key, _field_to_values(g, G), G.L)
    H3 = H.with_poly(H.poly.lie_transform(F))
    H3.generator = F
    H3.residuals = residuals
    return H3, gens


def hamiltonian_steps(H, model=None):
    """Run steps 1-3; returns the final Hamiltonian and the list of generator polynomials."""
    H1, g1 = step1_normalize_linear(H, model)
    H2, g2 = step2_normalize_eps2(H1, model)
    H3, g3 = step3_normalize_affine(H2, model)
    return (H1, H2, H3), (g1, g2, g3)


def affine_block_defect(H):
    """Largest angle-dependent part among degree-three y-blocks and size of degree-three w-linear blocks."""
    g = H.grid
    out = 0.0
    for key, t in H.poly.terms.items():
        e, alpha, kind = key
        if key_degree(key) != 3:
            continue
        if kind == "s" and sum(alpha) > 0:
            out = max(out, g.fluctuation(t.values))
        elif kind == "w1":
            out = max(out, float(np.max(np.abs(t.values))))
    return out


# ---------------------------------------------------------------------------
# evaluation of the transformed Hamiltonian through the generator flows

def _theta_grid(d, M):
    t = 2 * np.pi * np.arange(M) / M
    return np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1).reshape(-1, d)


def _full_evaluator(H):
    """Evaluator for H including the quartic tail."""
    poly = Poly(H.grid, 4, dict(H.poly.terms))
    if H.quartic is not None and np.any(H.quartic != 0):
        poly.terms[(0, (0,) * H.grid.d, "w4")] = Term(H.quartic, H.L)
    return Evaluator(poly)


def y_component(H0, generators, point, M=64, steps=8):
    """grad_theta of H0 o Phi_1 o Phi_2 o Phi_3 on an angle grid at the point's (y, w, eps).

    Returns an array of shape (M^d, d): the y-velocity of the transformed
    Hamiltonian, computed from the flows of the generators (not from the
    truncated series), so that all neglected orders are present.
    """
    d = H0.grid.d
    theta = _theta_grid(d, M)
    B = len(theta)
    y = np.tile(point.y, (B, 1))
    w = np.tile(point.w.resize(H0.J).coeffs, (B, 1))
    x = (theta, y, w)
    for F in reversed(generators):
        x = Evaluator(F).flow(*x, point.eps, steps=steps)
    vals = _full_evaluator(H0).value(*x, point.eps).reshape((M,) * d)
    c = np.fft.fftn(vals)
    ell = np.rint(np.fft.fftfreq(M, 1.0 / M))
    out = []
    for i in range(d):
        shape = [1] * d
        shape[i] = M
        out.append(np.fft.ifftn(c * 1j * ell.reshape(shape)).real.reshape(-1))
    return np.stack(out, axis=-1)


# ---------------------------------------------------------------------------
# smallness orders

def measured_order(g, base, scales=None):
    """Least-squares slope of log ||g(t-scaled base)|| against log t; inf if g vanishes."""
    scales = np.asarray(scales if scales is not None else 2.0 ** -np.arange(1, 7), dtype=float)
    norms = []
    for t in scales:
        v = g(base.scaled(t))
        if isinstance(v, FourierSeries):
            v = v.coeffs
        norms.append(float(np.max(np.abs(np.asarray(v))))) if np.size(v) else norms.append(0.0)
    norms = np.array(norms)
    keep = norms >= 1e-14
    if not keep.any():
        return np.inf
    if keep.sum() < 2:
        return np.inf
    return float(np.polyfit(np.log(scales[keep]), np.log(norms[keep]), 1)[0])


# ---------------------------------------------------------------------------
# vector-field stage

@dataclass
class NormalVectorField:
    """Normal component iOmega w + X_1(theta, y, eps)[w] + X_2(theta)[w, w] + order-3 tail.

    X_1 = sum over slots s in (eps, y_1, ..., y_d) of slot_s times
          sum_o mult1[o] d^o + sum_o Pi T_{sym1[o]} d^o + rem1,
    X_2[w] = sum_o Lambda_o[w] d^o + sum_o Pi T_{A_o[w]} d^o + rem2[w]
    with A_o[e_j] = sym2[o][..., j, :]. Angle Fourier window |ell| <= L, space
    window |j| <= J, symbol coefficients on |k| <= 2J. The angle component's
    quadratic block is theta_quad[ell, j, jp, i]; quartic is the density of the
    order-three tail Pi d_x(4 kappa4 w^3).
    """

    model: object
    d: int
    L: int
    J: int
    N: int
    mult1: dict
    sym1: dict
    rem1: np.ndarray
    mult2: dict
    sym2: dict
    rem2: np.ndarray
    theta_quad: np.ndarray
    quartic: np.ndarray
    z_perp: np.ndarray = None
    z_theta: np.ndarray = None
    log: dict = field(default_factory=dict)

    @property
    def Kx(self):
        return 2 * self.J

    @property
    def ns(self):
        return self.d + 1

    @property
    def lead(self):
        return (2 * self.L + 1,) * self.d

    def copy(self):
        cp = lambda dct: {k: v.copy() for k, v in dct.items()}
        return NormalVectorField(
            self.model, self.d, self.L, self.J, self.N, cp(self.mult1), cp(self.sym1),
            self.rem1.copy(), cp(self.mult2), cp(self.sym2), self.rem2.copy(),
            self.theta_quad.copy(), self.quartic.copy(),
            None if self.z_perp is None else self.z_perp.copy(),
            None if self.z_theta is None else self.z_theta.copy(), dict(self.log))


class _Window:
    """Precomputed para-product weights and multipliers on |j| <= J."""

    def __init__(self, model, J, cutoff=DEFAULT_CUTOFF):
        self.J = J
        self.k = np.arange(-J, J + 1)
        self.perp = ModeSet(model.modes.s_plus, J).perp_mask(J)
        self.P2 = self.perp[:, None] & self.perp[None, :]
        self.eta = self.k[:, None] - self.k[None, :]
        self.psi = cutoff(self.eta, self.k[None, :]) * self.P2
        self.iOm = 1j * model.Omega(self.k) * self.perp

    def T(self, coef, m):
        """Dense Pi T_coef d^m Pi; coef has the x-axis last on |k| <= 2J."""
        Kx = 2 * self.J
        return coef[..., self.eta + Kx] * self.psi * dx_multiplier(self.k, m)[None, :]

    def mult(self, coef, m):
        """Dense multiplier coef * d^m (coef broadcast over leading axes)."""
        diag = dx_multiplier(self.k, m) * self.perp
        return coef[..., None, None] * np.diag(diag)

    def commutator_iOmega(self, D):
        return self.iOm[:, None] * D - D * self.iOm[None, :]


def _dx_coef(c, r):
    K = (c.shape[-1] - 1) // 2
    return c * (2j * np.pi * np.arange(-K, K + 1)) ** r


def _theta_eval(c, d, L, theta):
    """Evaluate angle-Fourier data (angle axes first) at one angle vector."""
    out = c
    ell = np.arange(-L, L + 1)
    for i in range(d):
        out = np.tensordot(np.exp(1j * ell * theta[i]), out, axes=([0], [0]))
    return out


def _i_omega_ell(model, L, ndim_total, d):
    od = omega_dot_ell(model.omega, L)
    return 1j * od.reshape(od.shape + (1,) * (ndim_total - d))


def build_vector_field(H, N=2, model=None):
    """Para-linearized normal component and angle quadratic block of the Hamiltonian's field."""
    model = model or H.model
    g, d, J = H.grid, H.grid.d, H.J
    zero = (0,) * d
    slot_keys = [(1, zero, "w2")] + [(0, tuple(int(k == i) for k in range(d)), "w2") for i in range(d)]
    L6 = max([H.poly.terms[k].bw for k in slot_keys + [(0, zero, "w3")] if k in H.poly.terms] + [H.L])
    if 2 * L6 >= g.M:
        raise ValueError("angle grid too coarse for the vector-field window")
    q = np.stack([H.block(k, L6).coeffs for k in slot_keys], axis=d)        # (lead, ns, 4J+1)
    kappa = H.block((0, zero, "w3"), L6).coeffs                              # (lead, 6J+1)
    kappa4 = TorusField(g.to_fourier(H.quartic, L6), d, L6, 4 * J).coeffs   # (lead, 8J+1)
    win = _Window(model, J)
    Kx = 2 * J
    k = win.k
    # linear part: Pi d_x (2 q w)
    a1 = 2.0 * q[..., 2 * J - Kx: 2 * J + Kx + 1]
    a0 = _dx_coef(a1, 1)
    exact1 = (2j * np.pi * k)[:, None] * (2.0 * q[..., win.eta + 2 * J]) * win.P2
    rem1 = exact1 - win.T(a1, 1) - win.T(a0, 0)
    # quadratic part: Pi d_x (3 kappa w^2) with A_1[e_j] = 6 kappa e_j, A_0 = d_x A_1
    kx = np.arange(-Kx, Kx + 1)
    idx = kx[None, :] - k[:, None] + 3 * J                                    # (j, kx)
    A1 = 6.0 * kappa[..., idx] * win.perp[:, None]                           # (lead, j, kx)
    A0 = _dx_coef(A1, 1)
    n_out = k[:, None, None]
    exact2 = (2j * np.pi * n_out) * 3.0 * kappa[..., n_out - k[None, :, None] - k[None, None, :] + 3 * J]
    exact2 = exact2 * (win.perp[:, None, None] & win.perp[None, :, None] & win.perp[None, None, :])
    # store slot-first: rem2[..., j, n, jp]
    rem2 = np.moveaxis(exact2, -3, -2) - win.T(A1, 1) - win.T(A0, 0)
    # angle component: Upsilon_i[w, w] = int q_i w^2 with kernel q_i(ell, -j - jp)
    ups = q[..., 1:, :][..., -(k[:, None] + k[None, :]) + 2 * J]             # (lead, d, j, jp)
    ups = np.moveaxis(ups, d, -1) * win.P2[..., None]
    V = NormalVectorField(
        model, d, L6, J, N, {}, {1: a1, 0: a0}, rem1, {}, {1: A1, 0: A0}, rem2, ups, kappa4)
    V.log["windows"] = {"L": L6, "J": J, "N": N}
    return V


def _commutator_terms(model, b, m, N):
    """Symbol terms of [i Omega, T_b d^m] through order -N, as (order, coefficient)."""
    terms = []
    for r in range(1, 4):
        if 3 + m - r >= -N:
            terms.append((3 + m - r, -comb(3, r) * _dx_coef(b, r)))
    for kk, dk in model.tail.items():
        ck = dk * (2 * np.pi) ** kk * 1j ** (kk + 1)
        r = 1
        while -kk + m - r >= -N:
            terms.append((-kk + m - r, ck * gen_binomial(-kk, r) * _dx_coef(b, r)))
            r += 1
    return terms


def _regularize_block(V, win, mult, sym, rem, n, slot_shift):
    """One conjugation for a slot-batched block; returns the generator coefficient b."""
    o, m = 1 - n, -n - 1
    Kx = V.Kx
    a = sym.get(o)
    if a is None:
        a = np.zeros(rem.shape[:-2] + (2 * Kx + 1,), dtype=complex)
    mean = a[..., Kx].copy()
    mult[o] = mult.get(o, 0) + mean
    b = solve_x_transport_coeffs(a)
    iwl = _i_omega_ell(V.model, V.L, b.ndim, V.d)
    theta_coef = iwl * b - slot_shift[..., None] * b
    terms = _commutator_terms(V.model, b, m, V.N)
    if m >= -V.N:
        terms.append((m, theta_coef))
        exact_theta = 0.0
    else:
        exact_theta = win.T(theta_coef, m)
    symbolic = 0.0
    for order, c in terms:
        sym[order] = sym.get(order, 0) + c
        if c is not theta_coef:  # the angle-derivative term is exact as a para-product
            symbolic = symbolic + win.T(c, order)
    sym[o][..., Kx] -= mean
    Y = win.T(b, m)
    rem += win.commutator_iOmega(Y) - symbolic + exact_theta
    return b


def regularize_symbol_step(V, n):
    """Conjugate away the non-constant order-(1-n) coefficients of the linear and quadratic parts.

    Returns (V', b_n, B_n) with b_n[..., slot, k] and B_n[..., j, k] the
    generator coefficients of Pi T_b d^{-n-1}.
    """
    V = V.copy()
    win = _Window(V.model, V.J)
    zero_shift = np.zeros(V.ns)
    b = _regularize_block(V, win, V.mult1, V.sym1, V.rem1, n, zero_shift)
    B = _regularize_block(V, win, V.mult2, V.sym2, V.rem2, n, win.iOm)
    V.log.setdefault("means", {})[1 - n] = float(np.max(np.abs(V.mult1[1 - n]), initial=0.0))
    return V, b, B


def dense_linear(V, theta=None):
    """Dense X_1 per slot: angle-Fourier coefficients (lead, ns, n, n), or values at theta."""
    win = _Window(V.model, V.J)
    D = V.rem1.copy()
    for o, c in V.mult1.items():
        D = D + win.mult(c, o)
    for o, c in V.sym1.items():
        D = D + win.T(c, o)
    if theta is None:
        return D
    return _theta_eval(D, V.d, V.L, theta)


def check_imaginary_diagonal(X, expansion=None, tol=1e-12):
    """(max |Re X_jj|, {even order: max |mean coefficient|}) for a dense operator.

    expansion maps order -> mean coefficient(s) of the multiplier part; the
    entries at even orders must vanish when the diagonal is imaginary.
    """
    X = np.asarray(X)
    defect = float(np.max(np.abs(np.diagonal(X, axis1=-2, axis2=-1).real), initial=0.0))
    implied = {}
    if expansion:
        for o, c in expansion.items():
            if o % 2 == 0:
                implied[o] = float(np.max(np.abs(c), initial=0.0))
    return defect, implied


def diagonal_real_defect(V, samples=5):
    """Largest |Re diag| of the slot operators X_1 at a few angles."""
    D = dense_linear(V)
    out = 0.0
    for t in np.linspace(0.1, 2 * np.pi, samples, endpoint=False):
        X = _theta_eval(D, V.d, V.L, np.full(V.d, t))
        out = max(out, check_imaginary_diagonal(X)[0])
    return out


def normalize_multiplier_quadratic(V, model=None):
    """Remove Lambda_o[w] d^o for o <= 0 through (omega.d_theta + i Omega) c_Xi + c_Lambda = 0."""
    model = model or V.model
    V = V.copy()
    gens, res = {}, 0.0
    for o in sorted(V.mult2):
        if o >= 1:
            continue
        # pairing convention: Lambda[w] = sum_j c_j w_{-j}
        c = TorusField(V.mult2[o][..., ::-1].copy(), V.d, V.L, V.J)
        Xi = solve_first_melnikov(model, c)
        res = max(res, _melnikov_residual(model, Xi, c))
        gens[o] = Xi
        del V.mult2[o]
    V.log["multiplier_residual"] = res
    return V, gens


def multiplier_symbols(V, theta=None):
    """Diagonal symbols d_j of the w-independent multiplier part per slot: (lead, ns, n)."""
    win = _Window(V.model, V.J)
    out = np.zeros(V.lead + (V.ns, 2 * V.J + 1), dtype=complex)
    for o, c in V.mult1.items():
        out = out + c[..., None] * dx_multiplier(win.k, o) * win.perp
    if V.z_perp is not None:
        out = out + V.z_perp
    if theta is None:
        return out
    return _theta_eval(out, V.d, V.L, theta)


def skew_defect(V):
    """max |d_j + d_{-j}| over the multiplier part (slot operators and Lambda_1[e_j] d_x)."""
    win = _Window(V.model, V.J)
    d1 = multiplier_symbols(V)
    out = float(np.max(np.abs(d1 + d1[..., ::-1]), initial=0.0))
    for o, c in V.mult2.items():
        s = dx_multiplier(win.k, o) * win.perp
        sym = c[..., :, None] * s
        out = max(out, float(np.max(np.abs(sym + sym[..., ::-1]), initial=0.0)))
    return out


def normalize_smoothing(V, model=None):
    """Second/third Melnikov and angle-quadratic equations for the smoothing blocks."""
    model = model or V.model
    V = V.copy()
    d, L, J = V.d, V.L, V.J
    # linear remainder: kernel (lead, j, jp, slot)
    R1 = SmoothingKernel(np.moveaxis(V.rem1, d, -1), d, L, J, -V.N - 1)
    S1, Z = solve_second_melnikov(model, R1)
    nd = R1.coeffs.ndim
    div1 = second_melnikov_divisor(model, L, J).reshape(V.lead + (2 * J + 1,) * 2 + (1,) * (nd - d - 2))
    resid1 = 1j * div1 * S1.coeffs + R1.coeffs
    centre = (L,) * d
    resid1[centre] -= np.einsum("js,jk->jks", Z, np.eye(2 * J + 1))
    # quadratic remainder: kernel (lead, n, j, jp)
    R2 = SmoothingKernel(np.moveaxis(V.rem2, d + 1, d), d, L, J, -V.N - 1)
    S2 = solve_third_melnikov(model, R2)
    resid2 = 1j * third_melnikov_divisor(model, L, J) * S2.coeffs + R2.coeffs
    # angle component
    Mq = SmoothingKernel(V.theta_quad, d, L, J)
    S3, Zt = solve_theta_quadratic(model, Mq)
    nd3 = Mq.coeffs.ndim
    div3 = theta_quadratic_divisor(model, L, J).reshape(V.lead + (2 * J + 1,) * 2 + (1,) * (nd3 - d - 2))
    resid3 = 1j * div3 * S3.coeffs - Mq.coeffs
    resid3[centre] += Zt
    scale = lambda R: max(float(np.max(np.abs(R))), 1e-300)
    V.log["smoothing_residuals"] = {
        "linear": float(np.max(np.abs(resid1))) / scale(R1.coeffs),
        "bilinear": float(np.max(np.abs(resid2))) / scale(R2.coeffs),
        "theta": float(np.max(np.abs(resid3))) / scale(Mq.coeffs),
    }
    # D6 = D5 + Z_perp(y): diagonal symbols per slot at ell = 0 only
    zp = np.zeros(V.lead + (V.ns, 2 * J + 1), dtype=complex)
    zp[centre] = Z.T
    V.z_perp = zp
    V.z_theta = Zt
    V.rem1 = np.zeros_like(V.rem1)
    V.rem2 = np.zeros_like(V.rem2)
    V.theta_quad = np.zeros_like(V.theta_quad)
    V.log["z_perp_real_part"] = float(np.max(np.abs(Z.real), initial=0.0))
    return V, {"S_linear": S1, "S_bilinear": S2, "S_theta": S3}


def symbol_at(V, point):
    """a(x): order-one coefficient of the para-differential part left in the normal component.

    Sum of the regularized linear and quadratic order-one coefficients and the
    order-one coefficient 12 kappa4 w^2 of the quartic tail; returns x-Fourier
    coefficients on |k| <= 2J.
    """
    J, Kx = V.J, V.Kx
    slots = np.concatenate([[point.eps], point.y])
    w = point.w.resize(J).coeffs
    out = np.zeros(2 * Kx + 1, dtype=complex)
    if 1 in V.sym1:
        out += np.tensordot(slots, _theta_eval(V.sym1[1], V.d, V.L, point.theta), axes=([0], [0]))
    if 1 in V.sym2:
        out += np.tensordot(w, _theta_eval(V.sym2[1], V.d, V.L, point.theta), axes=([0], [0]))
    k4 = _theta_eval(V.quartic, V.d, V.L, point.theta)
    w2 = w_power(w[None, :], J, 2)[0]
    out += 12.0 * conv_x(k4[None, :], 4 * J, w2[None, :], 2 * J, Kx)[0]
    return out


def smoothing_leftover_at(V, point):
    """Order-three tail of the normal component without its order-one para-product part.

    Pi d_x(4 kappa4 w^3) - Pi T_{12 kappa4 w^2} d_x w on the window; the
    smoothing blocks of order two are zero after normalize_smoothing.
    """
    J = V.J
    win = _Window(V.model, J)
    w = point.w.resize(J).coeffs
    k4 = _theta_eval(V.quartic, V.d, V.L, point.theta)
    w3 = w_power(w[None, :], J, 3)[0]
    full = 4.0 * conv_x(k4[None, :], 4 * J, w3[None, :], 3 * J, J)[0] * 2j * np.pi * win.k * win.perp
    a = 12.0 * conv_x(k4[None, :], 4 * J, w_power(w[None, :], J, 2), 2 * J, 2 * J)[0]
    para = win.T(a, 1) @ w
    left = full - para
    rem = _theta_eval(V.rem1, V.d, V.L, point.theta)
    slots = np.concatenate([[point.eps], point.y])
    left = left + np.tensordot(slots, rem, axes=([0], [0])) @ w
    return left


# ---------------------------------------------------------------------------
# the full pipeline

@dataclass
class PipelineReport:
    sections: dict = field(default_factory=dict)
    passed: bool = True
    failures: list = field(default_factory=list)

    def record(self, section, key, value):
        self.sections.setdefault(section, {})[key] = value

    def require(self, name, ok):
        if not ok:
            self.passed = False
            self.failures.append(name)

    def to_text(self):
        lines = []
        for sec, items in self.sections.items():
            lines.append(f"[{sec}]")
            for k, v in items.items():
                lines.append(f"{k}: {_fmt(v)}")
            lines.append("")
        lines.append("[summary]")
        lines.append(f"passed: {self.passed}")
        lines.append(f"failures: {', '.join(self.failures) if self.failures else 'none'}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6e}"
    if isinstance(v, np.ndarray):
        return "[" + ", ".join(_fmt(float(x)) for x in np.ravel(v)) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}: {_fmt(x)}" for k, x in v.items()) + "}"
    return str(v)


@dataclass
class PipelineConfig:
    N: int = 2
    flow_steps: int = 8
    oracle_grid: int = 64
    residual_tol: float = 1e-10
    skew_tol: float = 1e-12
    y_order_min: float = 2.8
    a_order_min: float = 1.8


def default_base_point(H, rng=None, size=0.3):
    """Phase point with |y|, ||w||, eps of the given size and a smooth w."""
    rng = rng or np.random.default_rng(12345)
    d, J = H.grid.d, H.J
    w = np.zeros(2 * J + 1, dtype=complex)
    for j in range(1, J + 1):
        if H.grid.perp[j + J]:
            w[j + J] = (rng.standard_normal() + 1j * rng.standard_normal()) * j ** -2.0
    w[:J] = np.conj(w[J + 1:][::-1])
    w *= size / np.sqrt(np.sum(np.abs(w) ** 2))
    y = size * rng.uniform(0.5, 1.0, d)
    return PhasePoint(rng.uniform(0, 2 * np.pi, d), y, FourierSeries(w), size, ModeSet(H.model.modes.s_plus, J))


def full_pipeline(H, model=None, config=None, base=None):
    """Hamiltonian steps 1-3, symbol regularization, multiplier and smoothing normalization."""
    model = model or H.model
    cfg = config or PipelineConfig()
    rep = PipelineReport()
    rep.record("windows", "L", H.L)
    rep.record("windows", "J", H.J)
    rep.record("windows", "N", cfg.N)
    rep.record("windows", "angle_grid", H.grid.M)
    # Hamiltonian stage
    (H1, H2, H3), _ = hamiltonian_steps(H, model)
    for name, Hs in (("step1", H1), ("step2", H2), ("step3", H3)):
        r = max(Hs.residuals.values(), default=0.0)
        rep.record(name, "homological_residual", r)
        rep.record(name, "generator_angle_window", max((t.bw for t in Hs.generator.terms.values()), default=0))
        rep.require(f"{name} residual", r <= cfg.residual_tol)
    eps_lin = _eps_linear_defect(H3)
    rep.record("hamiltonian", "eps_linear_angle_dependence", eps_lin)
    rep.record("hamiltonian", "affine_degree3_defect", affine_block_defect(H3))
    rep.require("eps-linear blocks", eps_lin <= 1e-12)
    nf = H3.normal_form()
    rep.record("normal_form", "omega_hat", nf["omega_hat"])
    rep.record("normal_form", "omega_hat_eps", nf["omega_hat_eps"])
    rep.record("normal_form", "Q", {str(k): v for k, v in nf["Q"].items()})
    # vector-field stage
    V = build_vector_field(H3, cfg.N, model)
    diag_re = diagonal_real_defect(V)
    odd_means = 0.0
    for n in range(cfg.N + 2):
        V, _, _ = regularize_symbol_step(V, n)
        diag_re = max(diag_re, diagonal_real_defect(V))
        if n % 2 == 1:
            odd_means = max(odd_means, float(np.max(np.abs(V.mult1[1 - n]), initial=0.0)))
    order1_left = float(np.max(np.abs(V.sym1.get(1, 0))))
    rep.record("regularization", "steps", cfg.N + 2)
    rep.record("regularization", "diagonal_real_defect", diag_re)
    rep.record("regularization", "odd_step_mean", odd_means)
    rep.record("regularization", "order1_linear_coefficient_left", order1_left)
    rep.require("real diagonal", diag_re <= 1e-12 and odd_means <= 1e-12)
    V, _ = normalize_multiplier_quadratic(V, model)
    rep.record("multiplier", "residual", V.log["multiplier_residual"])
    d5 = skew_defect(V)
    rep.record("multiplier", "skew_defect_D5", d5)
    V, _ = normalize_smoothing(V, model)
    for k, v in V.log["smoothing_residuals"].items():
        rep.record("smoothing", f"residual_{k}", v)
        rep.require(f"smoothing {k}", v <= cfg.residual_tol)
    d6 = skew_defect(V)
    rep.record("smoothing", "skew_defect_D6", d6)
    rep.require("skew", max(d5, d6) <= cfg.skew_tol)
    rep.record("angle_component", "resonant_quadratic_kept", float(np.max(np.abs(V.z_theta))))
    # orders
    base = base or default_base_point(H)
    gens = [H1.generator, H2.generator, H3.generator]
    y_ord = measured_order(
        lambda p: y_component(H, gens, p, cfg.oracle_grid, cfg.flow_steps), base)
    a_ord = measured_order(lambda p: symbol_at(V, p), base)
    r_ord = measured_order(lambda p: smoothing_leftover_at(V, p), base)
    rep.record("orders", "y_component", y_ord)
    rep.record("orders", "symbol_a", a_ord)
    rep.record("orders", "perp_remainder", r_ord)
    rep.require("y order", y_ord >= cfg.y_order_min)
    rep.require("a order", a_ord >= cfg.a_order_min)
    rep.final_field = V
    rep.hamiltonians = (H1, H2, H3)
    return rep

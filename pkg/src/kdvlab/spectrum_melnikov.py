"""Normal frequencies with cubic asymptotics, Melnikov non-resonance checks,
cube scans and Monte Carlo estimates of the resonant parameter set.
"""
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .fourier_core import ModeSet


@dataclass
class FrequencyModel:
    """omega on S_+ and Omega_j = (2 pi j)^3 + sum_k d_k j^{-k} (k odd) on S^perp."""

    modes: ModeSet
    omega: np.ndarray
    tail: dict = field(default_factory=dict)
    tau: float = None
    gamma: float = 0.1

    def __post_init__(self):
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        if len(self.omega) != self.modes.d:
            raise ValueError("omega must have one entry per tangential site")
        if any(k % 2 == 0 or k < 1 for k in self.tail):
            raise ValueError("only odd positive inverse powers keep Omega odd and real")
        if self.tau is None:
            self.tau = self.modes.d + 1.0
        if self.tau <= self.modes.d:
            raise ValueError("tau must exceed |S_+|")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")

    def Omega(self, j):
        j = np.asarray(j, dtype=float)
        a = np.abs(j)
        out = (2 * np.pi * a) ** 3
        nz = a != 0
        for k, d in self.tail.items():
            out = out + np.where(nz, d / np.where(nz, a, 1.0) ** k, 0.0)
        return np.sign(j) * out

    def tail_part(self, j):
        """Omega_j - (2 pi j)^3, odd in j."""
        j = np.asarray(j, dtype=float)
        a = np.abs(j)
        out = np.zeros_like(a)
        nz = a != 0
        for k, d in self.tail.items():
            out = out + np.where(nz, d / np.where(nz, a, 1.0) ** k, 0.0)
        return np.sign(j) * out

    def combination(self, js, signs):
        """sum_i signs[i] * Omega(js[i]) with broadcasting; the cubic part is summed in integers
        so that near-cancelling combinations keep full relative accuracy."""
        cubes = sum(int(sg) * np.asarray(j, dtype=np.int64) ** 3 for j, sg in zip(js, signs))
        tails = sum(sg * self.tail_part(j) for j, sg in zip(js, signs))
        return (2 * np.pi) ** 3 * cubes + tails

    def with_params(self, **kw):
        args = dict(modes=self.modes, omega=self.omega, tail=self.tail, tau=self.tau, gamma=self.gamma)
        args.update(kw)
        return FrequencyModel(**args)


@dataclass(frozen=True)
class ResonanceTuple:
    ell: tuple
    j_list: tuple
    divisor_value: float
    condition_order: int

    def csv_row(self):
        vals = list(self.ell) + list(self.j_list)
        return ",".join(str(v) for v in vals) + f",{self.divisor_value:.17g}"


def ell_bracket(ell):
    """<ell> = max(1, |ell|) with the Euclidean norm; ell has shape (..., d)."""
    ell = np.asarray(ell, dtype=float)
    return np.maximum(1.0, np.sqrt(np.sum(ell ** 2, axis=-1)))


def divisor(model, ell, j_list):
    ell = np.atleast_1d(np.asarray(ell, dtype=float))
    return float(model.omega @ ell + sum(model.Omega(j) for j in j_list))


def ell_window(d, L):
    if d == 0:
        return np.zeros((1, 0), dtype=int)
    return np.array(list(product(range(-L, L + 1), repeat=d)), dtype=int)


def _perp(modes, J):
    return ModeSet(modes.s_plus, J).s_perp


def _j_tuples(js, order, admissible):
    """Non-decreasing j-tuples of the given length over js (divisors are symmetric)."""
    if order == 0:
        return np.zeros((1, 0), dtype=int)
    idx = np.array([c for c in _combos(len(js), order)], dtype=int)
    T = js[idx]
    if admissible is not None:
        T = T[admissible(T)]
    return T


def _combos(n, r):
    from itertools import combinations_with_replacement
    return combinations_with_replacement(range(n), r)


def _no_opposite_pairs(T):
    ok = np.ones(len(T), dtype=bool)
    r = T.shape[1]
    for a in range(r):
        for b in range(a + 1, r):
            ok &= T[:, a] + T[:, b] != 0
    return ok


def melnikov_tuples(modes, order, L, J):
    """(ells, jtuples, pair index arrays) of admissible tuples for a Melnikov order."""
    ells = ell_window(modes.d, L)
    js = _perp(modes, J)
    if order == 0:
        ells = ells[np.any(ells != 0, axis=1)]
        T = np.zeros((1, 0), dtype=int)
    elif order == 1:
        T = _j_tuples(js, 1, None)
    elif order == 2:
        T = _j_tuples(js, 2, None)
    elif order == 3:
        T = _j_tuples(js, 3, _no_opposite_pairs)
    else:
        raise ValueError("Melnikov order must be 0..3")
    return ells, T


def _weights(modes, order, ells, T, tau):
    wl = ell_bracket(ells) ** tau
    if order == 3:
        wj = np.prod(np.maximum(1, np.abs(T)) ** 2.0, axis=1)
    else:
        wj = np.ones(len(T))
    return wl[:, None] * wj[None, :]


def check_melnikov(model, order, L, J):
    """All admissible tuples on the window whose divisor falls below the threshold."""
    ells, T = melnikov_tuples(model.modes, order, L, J)
    om = ells @ model.omega if model.modes.d else np.zeros(len(ells))
    OmT = model.Omega(T).sum(axis=1) if T.shape[1] else np.zeros(len(T))
    div = om[:, None] + OmT[None, :]
    W = _weights(model.modes, order, ells, T, model.tau)
    bad = np.abs(div) * W < model.gamma
    if order == 2:
        # the trivially resonant (0, j, -j) family is excluded
        zero_ell = np.all(ells == 0, axis=1)
        opposite = T[:, 0] + T[:, 1] == 0
        bad &= ~(zero_ell[:, None] & opposite[None, :])
    out = []
    for a, b in zip(*np.nonzero(bad)):
        out.append(ResonanceTuple(tuple(int(v) for v in ells[a]), tuple(int(v) for v in T[b]),
                                  float(div[a, b]), order))
    return out


def canonical_triple(t):
    """Sort by absolute value; pick the global sign with at least two positive entries."""
    t = sorted(t, key=lambda v: (abs(v), v))
    if sum(v > 0 for v in t) < 2:
        t = [-v for v in t]
    return tuple(t)


def fermat_cube_scan(J):
    """Minimum of |j1^3 + j2^3 + j3^3| over admissible triples with 1 <= |j| <= J."""
    if J < 2:
        raise ValueError("J must be at least 2")
    # by the global sign symmetry we may take at least two entries positive
    pos = np.arange(1, J + 1, dtype=np.int64)
    allj = np.concatenate([-pos[::-1], pos])
    best, witnesses = None, []
    c3 = allj ** 3
    for a in pos:
        b = pos[pos >= a]
        s2 = a ** 3 + b ** 3
        S = s2[:, None] + c3[None, :]
        ok = (allj[None, :] + a != 0) & (allj[None, :] + b[:, None] != 0)
        vals = np.where(ok, np.abs(S), np.iinfo(np.int64).max)
        m = vals.min()
        if best is None or m < best:
            best, witnesses = int(m), []
        if m == best:
            for ib, ic in zip(*np.nonzero(vals == m)):
                witnesses.append(canonical_triple((int(a), int(b[ib]), int(allj[ic]))))
    witness = min(set(witnesses), key=lambda t: (max(abs(v) for v in t), tuple(abs(v) for v in t)))
    if best < 1:
        raise AssertionError(f"zero sum of cubes found: {witness}")
    return best, witness


def canonical_quadruple(q):
    """Descending order; of the two global signs take the lexicographically smaller."""
    a = tuple(sorted(q, reverse=True))
    b = tuple(sorted((-v for v in q), reverse=True))
    return min(a, b)


def four_wave_scan(J):
    """Nontrivial zeros of j1^3 + j2^3 + j3^3 + j4^3 with 1 <= |j| <= J, up to symmetry."""
    pos = np.arange(1, J + 1)
    js = np.concatenate([-pos[::-1], pos]).tolist()
    sums = {}
    for i, a in enumerate(js):
        for b in js[i:]:
            sums.setdefault(a ** 3 + b ** 3, []).append((a, b))
    found = set()
    for s, pairs in sums.items():
        for c, d in sums.get(-s, []):
            for a, b in pairs:
                q = (a, b, c, d)
                if any(q[x] == -q[y] for x in range(4) for y in range(x + 1, 4)):
                    continue
                found.add(canonical_quadruple(q))
    return sorted(found)


@dataclass
class FrequencyFamily:
    """omega ranging over a box; tail coefficients affine in omega."""

    modes: ModeSet
    lo: np.ndarray
    hi: np.ndarray
    tail0: dict = field(default_factory=dict)
    tail_grad: dict = field(default_factory=dict)
    tau: float = None

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        self.center = 0.5 * (self.lo + self.hi)
        if self.tau is None:
            self.tau = self.modes.d + 1.0

    def tail(self, omega):
        keys = set(self.tail0) | set(self.tail_grad)
        return {k: self.tail0.get(k, 0.0) + np.dot(self.tail_grad.get(k, np.zeros(self.modes.d)),
                                                     np.asarray(omega) - self.center) for k in keys}

    def model(self, omega, gamma=0.5):
        return FrequencyModel(self.modes, omega, self.tail(omega), self.tau, gamma)

    def affine_Omega(self, j):
        """(value at the box center, gradient in omega) of Omega_j."""
        j = np.asarray(j, dtype=float)
        val = (2 * np.pi * j) ** 3
        grad = np.zeros(j.shape + (self.modes.d,))
        for k in set(self.tail0) | set(self.tail_grad):
            val = val + self.tail0.get(k, 0.0) / j ** k
            g = np.asarray(self.tail_grad.get(k, np.zeros(self.modes.d)))
            grad = grad + (1.0 / j ** k)[..., None] * g
        return val, grad


def _candidates(family, L, J, gamma_max):
    """Affine divisors (c0, grad, weight) that can drop below gamma_max/weight on the box."""
    half = 0.5 * (family.hi - family.lo)
    rows = []
    for order in range(4):
        ells, T = melnikov_tuples(family.modes, order, L, J)
        if T.shape[1]:
            v, g = family.affine_Omega(T)
            cT, gT = v.sum(axis=1), g.sum(axis=1)
        else:
            cT, gT = np.zeros(1), np.zeros((1, family.modes.d))
        W = _weights(family.modes, order, ells, T, family.tau)
        if order == 2:
            excl = np.all(ells == 0, axis=1)[:, None] & (T[:, 0] + T[:, 1] == 0)[None, :]
        else:
            excl = np.zeros(W.shape, dtype=bool)
        for a in range(len(ells)):
            c0 = ells[a] @ family.center + cT
            grad = ells[a][None, :] + gT
            radius = np.abs(grad) @ half
            keep = (np.maximum(np.abs(c0) - radius, 0.0) * W[a] < gamma_max) & ~excl[a]
            for b in np.nonzero(keep)[0]:
                rows.append((c0[b], grad[b], W[a, b]))
    if not rows:
        return np.zeros(0), np.zeros((0, family.modes.d)), np.zeros(0)
    c0 = np.array([r[0] for r in rows])
    G = np.array([r[1] for r in rows])
    W = np.array([r[2] for r in rows])
    return c0, G, W


def melnikov_margin(family, omegas, L, J, gamma_max):
    """kappa(omega) = min over tuples of |divisor| * weight; omega is excluded at gamma iff kappa < gamma.

    Tuples that stay above gamma_max on the whole box are skipped, so values
    above gamma_max are reported as +inf.
    """
    c0, G, W = _candidates(family, L, J, gamma_max)
    kappa = np.full(len(omegas), np.inf)
    if len(c0) == 0:
        return kappa
    dom = omegas - family.center
    for start in range(0, len(c0), 2048):
        sl = slice(start, start + 2048)
        div = c0[sl][None, :] + dom @ G[sl].T
        kappa = np.minimum(kappa, np.min(np.abs(div) * W[sl][None, :], axis=1))
    return kappa


def measure_estimate(family, gamma_list, samples, seed, L=6, J=24):
    """Monte Carlo excluded fraction per gamma with binomial stderr and log-log slope."""
    if samples < 100:
        raise ValueError("need at least 100 samples")
    gammas = np.asarray(list(gamma_list), dtype=float)
    if len(gammas) == 0:
        raise ValueError("empty gamma list")
    rng = np.random.default_rng(seed)
    omegas = family.lo + rng.random((samples, family.modes.d)) * (family.hi - family.lo)
    kappa = melnikov_margin(family, omegas, L, J, gammas.max())
    frac = np.array([np.mean(kappa < g) for g in gammas])
    stderr = np.sqrt(frac * (1 - frac) / samples)
    pos = frac > 0
    slope = float(np.polyfit(np.log(gammas[pos]), np.log(frac[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
    return {"gamma": gammas, "excluded_fraction": frac, "stderr": stderr, "slope": slope,
            "kappa": kappa, "L": L, "J": J}


def measure_csv(table):
    rows = ["gamma,excluded_fraction,stderr"]
    for g, f, e in zip(table["gamma"], table["excluded_fraction"], table["stderr"]):
        rows.append(f"{g:.6g},{f:.17g},{e:.17g}")
    return "\n".join(rows) + "\n"

"""Batch front-end: `kdvlab <command> [--config PATH] [--seed N] [--out DIR] [--threads N]`.

The config file holds `key = value` pairs in one section per command
(section name = command name). Every CSV starts with a comment line carrying
the config hash and the windows, then a header row. Exit status: 0 pass,
1 failed check, 2 usage error, 3 small-divisor abort; on a nonzero status a
machine-readable failure.json is written to the output directory.
"""
import argparse
import configparser
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .fourier_core import FourierSeries, ModeSet
from .homological import DivisorBelowThreshold

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_DIVISOR = 0, 1, 2, 3


class UsageError(ValueError):
    pass


def _checked(build, *args, **kw):
    """Call a constructor on config values, reporting rejected values as usage errors."""
    try:
        return build(*args, **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# configuration

DEFAULTS = {
    "paradiff-check": {
        "K": "128", "samples": "100", "seed": "0", "smoothing_K": "256", "N": "2",
        "m": "1", "m_prime": "0", "band": "6", "mode_lo": "16", "mode_hi": "170",
        "bony_tol": "1e-13", "slope_margin": "0.5",
    },
    "resonance-scan": {"fermat_J": "200", "four_wave_J": "12"},
    "measure": {
        "s_plus": "1, 2", "half_width": "5", "tail": "1:0.5, 3:0.1", "tail_grad_1": "0.01, 0.02",
        "tau": "2.5", "gammas": "0.4, 0.2, 0.1, 0.05, 0.025", "samples": "100000",
        "L": "6", "J": "24", "seed": "1",
    },
    "normalform": {
        "s_plus": "1", "omega": "7.3", "tail": "1:0.5, 3:0.1", "gamma": "0.01",
        "Omega_S": "0.5", "L": "4", "J": "16", "size": "1e-2", "N": "2", "seed": "1",
    },
    "linpde": {
        "N": "128", "T": "1.0", "dt": "1e-3", "s": "2", "s_plus": "1", "omega": "7.3",
        "a_amplitude": "1e-2", "forcing_amplitude": "1e-2", "data_decay": "4", "seed": "0",
        "growth_bound": "3",
    },
    "stability": {
        "amplitude": "1.0", "K": "128", "eps": "1e-2, 5e-3, 2.5e-3", "horizon": "1.0",
        "dt": "auto", "samples": "200", "s": "1", "bound": "10", "zero_horizon": "10",
        "seed": "0", "companion": "yes", "companion_dt": "auto", "f_mode": "1", "f_power": "3",
    },
}

COMMANDS = tuple(DEFAULTS)


class Section:
    """Typed access to one config section with range validation."""

    def __init__(self, name, items):
        self.name, self.items = name, dict(items)

    def _raw(self, key):
        if key not in self.items:
            raise UsageError(f"[{self.name}] missing key {key!r}")
        return self.items[key].strip()

    def int(self, key, lo=1):
        try:
            v = int(self._raw(key))
        except ValueError:
            raise UsageError(f"[{self.name}] {key} must be an integer") from None
        if v < lo:
            raise UsageError(f"[{self.name}] {key} must be >= {lo}")
        return v

    def float(self, key, positive=True, allow_zero=False):
        try:
            v = float(self._raw(key))
        except ValueError:
            raise UsageError(f"[{self.name}] {key} must be a number") from None
        if not np.isfinite(v) or (positive and (v < 0 or (v == 0 and not allow_zero))):
            raise UsageError(f"[{self.name}] {key} must be {'nonnegative' if allow_zero else 'positive'}")
        return v

    def floats(self, key, allow_zero=False):
        raw = self._raw(key)
        out = []
        for part in [p for p in raw.split(",") if p.strip()]:
            try:
                v = float(part)
            except ValueError:
                raise UsageError(f"[{self.name}] {key}: bad entry {part!r}") from None
            if v < 0 or (v == 0 and not allow_zero):
                raise UsageError(f"[{self.name}] {key}: entries must be positive")
            out.append(v)
        if not out:
            raise UsageError(f"[{self.name}] {key} must not be empty")
        return out

    def ints(self, key):
        return [int(v) for v in self.floats(key)]

    def mapping(self, key):
        out = {}
        for part in [p for p in self._raw(key).split(",") if p.strip()]:
            try:
                k, v = part.split(":")
                out[int(k)] = float(v)
            except ValueError:
                raise UsageError(f"[{self.name}] {key}: expected k:value pairs") from None
        return out

    def flag(self, key):
        return self._raw(key).lower() in ("1", "yes", "true", "on")

    def canonical(self):
        return "\n".join(f"{k} = {self.items[k].strip()}" for k in sorted(self.items))

    def digest(self):
        return hashlib.sha256(f"[{self.name}]\n{self.canonical()}".encode()).hexdigest()[:16]


def load_section(command, path=None, seed=None):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_dict({command: DEFAULTS[command]})
    if path is not None:
        if not Path(path).is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise UsageError(f"config does not parse: {exc}") from None
    items = dict(parser[command])
    unknown = set(items) - set(DEFAULTS[command])
    if unknown:
        raise UsageError(f"[{command}] unknown keys: {', '.join(sorted(unknown))}")
    if seed is not None and "seed" in items:
        items["seed"] = str(seed)
    return Section(command, items)


def comment_line(section, windows):
    win = " ".join(f"{k}={v}" for k, v in windows.items())
    return f"# config_hash={section.digest()} {win}"


# ---------------------------------------------------------------------------
# commands; each returns (passed, {filename: text}, failures)

def cmd_paradiff_check(cfg, threads):
    from .fourier_core import multiply
    from .paradiff import (SymbolExpansion, bony_remainder, commutator_expansion,
                           compose_expansion, measured_smoothing, paraproduct, smoothing_csv)

    K, n, seed = cfg.int("K"), cfg.int("samples"), cfg.int("seed", 0)
    rng = np.random.default_rng(seed)
    rows, worst = ["sample,bony_defect"], 0.0
    for i in range(n):
        a = FourierSeries.random(K, rng, decay=1.0)
        u = FourierSeries.random(K, rng, decay=1.0)
        prod = multiply(a, u, 2 * K)
        rest = paraproduct(a, u, K=2 * K) + paraproduct(u, a, K=2 * K) + bony_remainder(a, u, K=2 * K)
        d = float(np.max(np.abs((prod - rest).coeffs)))
        worst = max(worst, d)
        rows.append(f"{i},{d:.17g}")
    Ks, N, band = cfg.int("smoothing_K"), cfg.int("N"), cfg.int("band")
    m, mp = cfg.int("m", 0), cfg.int("m_prime", 0)
    a = FourierSeries.random(band, rng, decay=2.0).resize(Ks)
    b = FourierSeries.random(band, rng, decay=2.0).resize(Ks)
    A, B = SymbolExpansion.single(a, m, Ks), SymbolExpansion.single(b, mp, Ks)
    modes = range(cfg.int("mode_lo"), cfg.int("mode_hi") + 1)
    comp_slope, table = measured_smoothing(compose_expansion(A, B, N).remainder, modes,
                                           return_table=True)
    X = commutator_expansion(A, B, N)
    kept = SymbolExpansion(Ks, [(o, c) for o, c in X.terms if o >= m + mp - 2])
    comm_rem = A.dense() @ B.dense() - B.dense() @ A.dense() - kept.symbol_matrix()
    comm_slope = measured_smoothing(comm_rem, modes)
    margin = cfg.float("slope_margin")
    win = {"K": K, "smoothing_K": Ks, "N": N}
    head = comment_line(cfg, win)
    files = {
        "bony.csv": head + "\n" + "\n".join(rows) + "\n",
        "composition_smoothing.csv": head + "\n" + smoothing_csv(table, comp_slope),
        "summary.csv": head + "\ncheck,value,threshold\n"
        + f"bony_max_defect,{worst:.17g},{cfg.float('bony_tol'):.6g}\n"
        + f"composition_slope,{comp_slope:.17g},{-(N + 1) + margin:.6g}\n"
        + f"commutator_slope,{comm_slope:.17g},{-2 + margin:.6g}\n",
    }
    failures = []
    if worst > cfg.float("bony_tol"):
        failures.append("bony identity")
    if comp_slope > -(N + 1) + margin:
        failures.append("composition smoothing")
    if comm_slope > -2 + margin:
        failures.append("commutator smoothing")
    return not failures, files, failures


def cmd_resonance_scan(cfg, threads):
    from .spectrum_melnikov import fermat_cube_scan, four_wave_scan

    Jf, J4 = cfg.int("fermat_J", 2), cfg.int("four_wave_J")
    best, witness = fermat_cube_scan(Jf)
    quads = four_wave_scan(J4)
    head = comment_line(cfg, {"fermat_J": Jf, "four_wave_J": J4})
    files = {
        "fermat.csv": head + "\nmin_abs_sum,j1,j2,j3\n" + f"{best},{witness[0]},{witness[1]},{witness[2]}\n",
        "four_wave.csv": head + "\nj1,j2,j3,j4,cube_sum\n"
        + "".join(f"{q[0]},{q[1]},{q[2]},{q[3]},{sum(v ** 3 for v in q)}\n" for q in quads),
    }
    failures = [] if best >= 1 else ["fermat zero"]
    return not failures, files, failures


def _measure_family(cfg):
    from .spectrum_melnikov import FrequencyFamily

    s_plus = tuple(cfg.ints("s_plus"))
    J = cfg.int("J")
    modes = ModeSet(s_plus, J)
    center = np.array([(2 * np.pi * s) ** 3 for s in s_plus])
    w = cfg.float("half_width")
    grad = np.array(cfg.floats("tail_grad_1", allow_zero=True))
    if len(grad) != len(s_plus):
        raise UsageError("[measure] tail_grad_1 needs one entry per site of s_plus")
    return _checked(FrequencyFamily, modes, center - w, center + w, cfg.mapping("tail"), {1: grad},
                    tau=cfg.float("tau"))


def cmd_measure(cfg, threads):
    from .spectrum_melnikov import measure_estimate

    gammas = cfg.floats("gammas")
    fam = _measure_family(cfg)
    L, J = cfg.int("L"), cfg.int("J")
    tab = measure_estimate(fam, gammas, cfg.int("samples", 100), cfg.int("seed", 0), L=L, J=J)
    frac, err = tab["excluded_fraction"], tab["stderr"]
    order = np.argsort(-np.asarray(gammas))
    f, e = frac[order], err[order]
    monotone = bool(np.all(f[1:] <= f[:-1] + 2 * np.hypot(e[1:], e[:-1])))
    head = comment_line(cfg, {"L": L, "J": J, "samples": cfg.int("samples", 100)})
    rows = ["gamma,excluded_fraction,stderr"]
    rows += [f"{g:.6g},{x:.17g},{s:.17g}" for g, x, s in zip(tab["gamma"], frac, err)]
    rows.append(f"# fitted_slope={tab['slope']:.6g}")
    files = {"measure.csv": head + "\n" + "\n".join(rows) + "\n"}
    failures = []
    if not monotone:
        failures.append("excluded fraction not non-increasing")
    if not tab["slope"] > 0:
        failures.append("slope not positive")
    return not failures, files, failures


def normalform_setup(cfg):
    from .normalform import TaylorHamiltonian
    from .spectrum_melnikov import FrequencyModel

    s_plus = tuple(cfg.ints("s_plus"))
    J = cfg.int("J")
    omega = cfg.floats("omega")
    if len(omega) != len(s_plus):
        raise UsageError("[normalform] omega needs one entry per site of s_plus")
    model = _checked(FrequencyModel, ModeSet(s_plus, J), omega, cfg.mapping("tail"), gamma=cfg.float("gamma"))
    OmS = np.diag(cfg.floats("Omega_S")) if len(s_plus) > 1 else np.array([[cfg.floats("Omega_S")[0]]])
    rng = np.random.default_rng(cfg.int("seed", 0))
    H = TaylorHamiltonian.random(model, OmS, rng, L=cfg.int("L"), J=J, size=cfg.float("size"))
    return model, H


def cmd_normalform(cfg, threads):
    from .normalform import PipelineConfig, full_pipeline

    model, H = normalform_setup(cfg)
    rep = full_pipeline(H, model, PipelineConfig(N=cfg.int("N")))
    head = comment_line(cfg, {"L": H.L, "J": H.J, "N": cfg.int("N")})
    orders = rep.sections["orders"]
    files = {
        "report.txt": head + "\n" + rep.to_text(),
        "orders.csv": head + "\nquantity,measured_order\n"
        + "".join(f"{k},{v:.17g}\n" for k, v in orders.items()),
    }
    return rep.passed, files, list(rep.failures)


def cmd_linpde(cfg, threads):
    from .linpde import LinearPDEProblem, airy_symbol, energy_defect, galerkin_solve, growth_constant
    from .spectrum_melnikov import FrequencyModel

    N, T, dt, s = cfg.int("N"), cfg.float("T"), cfg.float("dt"), cfg.float("s", allow_zero=True)
    s_plus = tuple(cfg.ints("s_plus"))
    model = _checked(FrequencyModel, ModeSet(s_plus, N), cfg.floats("omega"))
    rng = np.random.default_rng(cfg.int("seed", 0))
    w0 = FourierSeries.random(N, rng, decay=cfg.float("data_decay"), mean_zero=True)
    a = FourierSeries.from_modes(N, {1: 0.5 * cfg.float("a_amplitude", allow_zero=True)})
    f = FourierSeries.random(16, rng, decay=cfg.float("data_decay"), mean_zero=True) \
        * cfg.float("forcing_amplitude", allow_zero=True)
    sym = airy_symbol(model, N)
    head = comment_line(cfg, {"N": N, "T": T, "dt": dt, "s": s})
    files, failures = {}, []
    skew = LinearPDEProblem(sym, w0, T, N, s=s, modes=model.modes)
    forced = LinearPDEProblem(sym, w0, T, N, s=s, a=a, forcing=f, modes=model.modes)
    every = max(1, int(round(T / dt)) // 100)
    summary = ["case,max_norm_drift,worst_energy_constant,growth_constant"]
    for name, p in (("skew", skew), ("forced", forced)):
        traj = galerkin_solve(p, dt, every)
        rep = energy_defect(p, traj)
        drift = float(np.max(np.abs(rep.norms - rep.norms[0])) / rep.norms[0])
        C = growth_constant(p, traj)
        files[f"energy_{name}.csv"] = rep.to_csv(head[2:])
        summary.append(f"{name},{drift:.17g},{rep.worst_constant:.17g},{C:.17g}")
        if name == "skew" and drift > 1e-8:
            failures.append("skew norm drift")
        if name == "forced" and C > cfg.float("growth_bound"):
            failures.append("forced growth constant")
    files["summary.csv"] = head + "\n" + "\n".join(summary) + "\n"
    return not failures, files, failures


def _stability_row(args):
    from .kdv_sim import _one_run

    wave, f, eps, p, s, T, dt, samples, init_eps, track = args
    return _one_run(wave, f, eps, p, s, T, dt, samples, init_eps, track)


def stability_density(cfg, K):
    from .paradiff import PerturbationDensity

    mode, power = cfg.int("f_mode", 0), cfg.int("f_power", 2)
    coeffs = [FourierSeries.zeros(K)] * power
    coeffs.append(FourierSeries.from_modes(K, {mode: 0.5}) if mode else FourierSeries.from_modes(K, {0: 1.0}))
    return PerturbationDensity(coeffs)


def cmd_stability(cfg, threads):
    from .kdv_sim import StabilityTable, cnoidal, default_dt, perturbation_direction

    K = cfg.int("K")
    wave = _checked(cnoidal, cfg.float("amplitude"), K)
    f = stability_density(cfg, K)
    eps_list = cfg.floats("eps", allow_zero=True)
    s, c = cfg.float("s", allow_zero=True), cfg.float("horizon")
    dt_raw = cfg._raw("dt")
    if dt_raw == "auto":
        dt_of = lambda e: default_dt(e, wave.c)
    else:
        fixed = cfg.float("dt")
        dt_of = lambda e: fixed
    samples = cfg.int("samples")
    p = perturbation_direction(K, s, cfg.int("seed", 0))
    jobs = [(wave, f, e, p, s, cfg.float("zero_horizon") if e == 0 else c / e ** 2, dt_of(e),
             samples, None, True) for e in eps_list]
    positive = [e for e in eps_list if e > 0]
    if cfg.flag("companion") and positive:
        e = max(positive)
        cdt = dt_of(e) if cfg._raw("companion_dt") == "auto" else cfg.float("companion_dt")
        jobs.append((wave, None, e, p, s, c / e ** 2, cdt, samples, e, False))
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_stability_row, jobs))
    else:
        rows = [_stability_row(j) for j in jobs]
    table = StabilityTable(rows=rows[:len(eps_list)], companion=rows[len(eps_list):], s=s,
                           bound=cfg.float("bound"))
    head = comment_line(cfg, {"K": K, "horizon": c, "speed": f"{wave.c:.12g}"})
    files = {"stability.csv": table.to_csv(head[2:])}
    if table.companion:
        comp = StabilityTable(rows=table.companion, s=s, bound=table.bound)
        files["companion.csv"] = comp.to_csv(head[2:])
    failures = []
    for r in table.rows:
        if r["eps"] == 0:
            if r["aborted_at"] is not None or r["max_ratio"] > 1e-6:
                failures.append("eps=0 distance above 1e-6")
        elif not table.stable(r["eps"]):
            failures.append(f"eps={r['eps']:g} unstable")
    return not failures, files, failures


HANDLERS = {
    "paradiff-check": cmd_paradiff_check,
    "resonance-scan": cmd_resonance_scan,
    "measure": cmd_measure,
    "normalform": cmd_normalform,
    "linpde": cmd_linpde,
    "stability": cmd_stability,
}


# ---------------------------------------------------------------------------
# entry point

def build_parser():
    ap = argparse.ArgumentParser(prog="kdvlab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", type=Path, default=Path("kdvlab_out"))
    ap.add_argument("--threads", type=int, default=1)
    return ap


def _write(out, files):
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)


def _failure_record(out, command, status, failures):
    out.mkdir(parents=True, exist_ok=True)
    rec = {"command": command, "status": status, "failures": failures}
    (out / "failure.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")


def run(command, config_path=None, seed=None, out=Path("kdvlab_out"), threads=1):
    """Run one command; returns the exit status."""
    out = Path(out)
    try:
        if threads < 1:
            raise UsageError("--threads must be positive")
        cfg = load_section(command, config_path, seed)
        passed, files, failures = HANDLERS[command](cfg, threads)
    except UsageError as exc:
        print(f"kdvlab: usage error: {exc}", file=sys.stderr)
        _failure_record(out, command, EXIT_USAGE, [str(exc)])
        return EXIT_USAGE
    except DivisorBelowThreshold as exc:
        print(f"kdvlab: divisor abort: {exc}", file=sys.stderr)
        _failure_record(out, command, EXIT_DIVISOR, [repr(v) for v in exc.violations[:20]])
        return EXIT_DIVISOR
    _write(out, files)
    stale = out / "failure.json"
    if passed:
        if stale.exists():
            stale.unlink()
        return EXIT_PASS
    print(f"kdvlab: {command} failed: {', '.join(failures)}", file=sys.stderr)
    _failure_record(out, command, EXIT_FAIL, failures)
    return EXIT_FAIL


def main(argv=None):
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.seed, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end and persistent run manifests.

Every dispatch writes its artifacts plus a manifest recording the config
hash, code version, wall clock, per-check outcomes, and the output files
with sizes and digests.  Exit codes: 0 pass, 2 config error, 3 numerical
failure, 4 acceptance failure.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .config import RunConfig, config_from_dict, parse_config
from .correctors import corrector_csv_row, nonslip_via_decomposition
from .errors import ConfigError, OsLabError
from .evolution import (LOCAL_H, NONLOCAL_L, RAYLEIGH_EULER, evolve,
                        fit_decay, spacetime_report)
from .grid import build_grid
from .nonlinear import (LEDGER_COLUMNS, ProbeResolution, init_perturbation,
                        run_and_ledger, threshold_bisect)
from .operators import BC, ModeProblem, solve_forced, assemble
from .resolvent import (EnvelopeSpec, ScanSpec, default_lambda_grid,
                        envelope_check, lambda_scan, pseudospectrum,
                        scaling_fit, write_fit_json, write_scan_csv)

__all__ = ["main", "dispatch", "RunManifest"]


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    def __init__(self, config: RunConfig):
        canon = json.dumps(config.data, sort_keys=True).encode()
        self.data = {
            "config_hash": hashlib.sha256(canon).hexdigest(),
            "config": config.data,
            "code_version": __version__,
            "wall_clock_s": 0.0,
            "checks": [],
            "outputs": [],
        }
        self._t0 = time.monotonic()

    def check(self, name, passed, **extra):
        entry = {"name": name, "pass": bool(passed)}
        entry.update(extra)
        self.data["checks"].append(entry)

    def add_output(self, path):
        self.data["outputs"].append({
            "path": os.path.basename(path),
            "bytes": os.path.getsize(path),
            "sha256": _sha256(path),
        })

    def write(self, path):
        self.data["wall_clock_s"] = time.monotonic() - self._t0
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @property
    def all_passed(self):
        return all(c["pass"] for c in self.data["checks"])


def verify_manifest(path):
    """Recompute output hashes recorded in a manifest; True when they match."""
    with open(path) as fh:
        data = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    for out in data["outputs"]:
        target = os.path.join(base, out["path"])
        if not os.path.exists(target):
            return False, f"missing output {out['path']}"
        if os.path.getsize(target) != out["bytes"]:
            return False, f"size mismatch for {out['path']}"
        if _sha256(target) != out["sha256"]:
            return False, f"hash mismatch for {out['path']}"
    return True, "ok"


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


# ---------------------------------------------------------------------------
# command implementations


def _cmd_resolvent_scan(cfg, outdir, manifest):
    spec = ScanSpec(
        bc=cfg["bc"], k=tuple(cfg["k"]), nu_list=tuple(cfg["nu_list"]),
        in_norm=cfg["in_norm"], out_quantity=cfg["out_quantity"],
        out_norm=cfg["out_norm"], n=cfg["n"], eps_shift=cfg["eps_shift"],
    )
    records = []
    for nu in spec.nu_list:
        lams = default_lambda_grid(nu, spec.k[0], cfg["lambda_min"],
                                   cfg["lambda_max"], cfg["lambda_step"])
        records.append(lambda_scan(
            ScanSpec(**{**spec.__dict__, "lambda_grid": lams}), nu=nu))
    csv_path = os.path.join(outdir, "resolvent_scan.csv")
    write_scan_csv(csv_path, records)
    manifest.add_output(csv_path)
    fit = scaling_fit(records)
    fit_path = os.path.join(outdir, "scan_fit.json")
    write_fit_json(fit_path, cfg["proposition_id"], fit, True,
                   extra={"argmax_lambda": [r.argmax_lambda for r in records]})
    manifest.add_output(fit_path)
    manifest.check("scan", True, slope=fit["slope"])
    return 0


def _cmd_envelope_check(cfg, outdir, manifest):
    spec = ScanSpec(
        bc=cfg["bc"], k=tuple(cfg["k"]), nu_list=tuple(cfg["nu_list"]),
        in_norm=cfg["in_norm"], out_quantity=cfg["out_quantity"],
        out_norm=cfg["out_norm"], n=cfg["n"],
    )
    records = [lambda_scan(spec, nu=nu) for nu in spec.nu_list]
    env = EnvelopeSpec(cfg["proposition_id"], cfg["nu_exponent"],
                       lambda_exponent=cfg["lambda_exponent"])
    report = envelope_check(records, env)
    path = os.path.join(outdir, "envelope_report.json")
    with open(path, "w") as fh:
        json.dump({
            "proposition_id": env.proposition_id,
            "c_fit": report.c_fit,
            "violations": report.violations,
            "plateau_band": report.plateau_band,
            "record_consistency": report.record_consistency,
            "pass": report.passed,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add_output(path)
    manifest.check("envelope", report.passed)
    return 0 if report.passed else 4


def _cmd_pseudospectrum(cfg, outdir, manifest):
    base = ModeProblem(cfg["nu"], tuple(cfg["k"]), 0.0, cfg["bc"])
    re_grid = np.linspace(cfg["re_min"], cfg["re_max"], cfg["grid_points"])
    im_grid = np.linspace(cfg["im_min"], cfg["im_max"], cfg["grid_points"])
    field = pseudospectrum(base, re_grid, im_grid, n=cfg["n"])
    path = os.path.join(outdir, "pseudospectrum.csv")
    rows = []
    for i, im in enumerate(im_grid):
        for j, re in enumerate(re_grid):
            rows.append({"lambda_re": re, "lambda_im": im, "log10_gain": field[i, j]})
    _write_csv(path, ("lambda_re", "lambda_im", "log10_gain"), rows)
    manifest.add_output(path)
    manifest.check("pseudospectrum", True)
    return 0


def _cmd_airy_corrector(cfg, outdir, manifest):
    from .norms import NormKind, norm as norm_of
    from .grid import GridFunction
    rows = []
    ok = True
    for nu in cfg["nu_list"]:
        problem = ModeProblem(nu, tuple(cfg["k"]), cfg["lambda"], BC.NON_SLIP)
        grid = build_grid(cfg["n"])
        F = grid.from_callable(lambda y: np.sin(np.pi * y))
        dec = nonslip_via_decomposition(problem, F, grid=grid)
        direct = solve_forced(assemble(problem, grid), F)
        h1 = NormKind("H1k", problem.k)
        diff = GridFunction(grid, dec.phi_total.values - direct.phi.values)
        rel = norm_of(diff, h1) / max(norm_of(direct.phi, h1), 1e-300)
        rows.append(corrector_csv_row(dec, rel))
        ok = ok and rel < 1e-5
    path = os.path.join(outdir, "correctors.csv")
    _write_csv(path, ("nu", "k1", "k3", "lambda", "L", "abs_A0", "abs_C11",
                      "abs_C12", "abs_c1", "abs_c2", "decomposition_err"), rows)
    manifest.add_output(path)
    manifest.check("decomposition-vs-direct", ok)
    return 0 if ok else 4


def _cmd_nonslip_decompose(cfg, outdir, manifest):
    return _cmd_airy_corrector(cfg, outdir, manifest)


def _cmd_evolve_linear(cfg, outdir, manifest):
    kind = {"local-h": LOCAL_H, "nonlocal-l": NONLOCAL_L,
            "rayleigh-euler": RAYLEIGH_EULER}[cfg["kind"]]
    nu = cfg["nu"]
    k = tuple(cfg["k"])
    grid = build_grid(cfg["n"])
    y = grid.nodes
    if kind == NONLOCAL_L:
        phi0 = (1 - y**2) ** 2 * np.sin(np.pi * y)
        omega0 = grid.d2 @ phi0 - (k[0] ** 2 + k[1] ** 2) * phi0
    else:
        omega0 = (1 - y**2) * np.sin(np.pi * y)
    T = cfg.get("T") or 50.0
    dt = cfg.get("dt") or min(0.01, 0.1 / abs(k[0]))
    traj = evolve(kind, nu, k, omega0, T=T, dt=dt, grid=grid)
    rate = fit_decay(traj, window=(0.25 * T, T))["rate"]
    cw = cfg.get("c_weight")
    if cw is None:
        cw = 0.25 * rate / np.sqrt(nu)
    report = spacetime_report(traj, cw)
    csv_path = os.path.join(outdir, "trajectory.csv")
    names = sorted(traj.norms)
    rows = [dict(t=t, **{nm: traj.norms[nm][i] for nm in names})
            for i, t in enumerate(traj.times)]
    _write_csv(csv_path, ("t", *names), rows)
    manifest.add_output(csv_path)
    fit_path = os.path.join(outdir, "decay_fit.json")
    with open(fit_path, "w") as fh:
        json.dump({"kind": kind, "nu": nu, "rate": rate,
                   "theorem_ratio": report.theorem_ratio,
                   "c_weight": cw}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add_output(fit_path)
    manifest.check("evolve", True, rate=rate)
    return 0


def _cmd_rayleigh_damping(cfg, outdir, manifest):
    nu = cfg["nu"]
    k = tuple(cfg["k"])
    n = max(cfg["n"], 257)
    grid = build_grid(n)
    y = grid.nodes
    omega0 = (1 - y**2) ** 2 * np.sin(2 * np.pi * y)
    T = cfg.get("T") or 100.0
    dt = cfg.get("dt") or 0.02
    traj = evolve(RAYLEIGH_EULER, nu, k, omega0, T=T, dt=dt, grid=grid)
    fit = fit_decay(traj, quantity="kpsi_l2", window=(10.0, T), algebraic=True)
    drift = abs(traj.norms["omega_l2"][-1] / traj.norms["omega_l2"][0] - 1.0)
    csv_path = os.path.join(outdir, "rayleigh.csv")
    names = sorted(traj.norms)
    rows = [dict(t=t, **{nm: traj.norms[nm][i] for nm in names})
            for i, t in enumerate(traj.times)]
    _write_csv(csv_path, ("t", *names), rows)
    manifest.add_output(csv_path)
    fit_path = os.path.join(outdir, "damping_fit.json")
    payload = {"algebraic_exponent": fit["algebraic_exponent"],
               "omega_conservation_drift": drift}
    with open(fit_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add_output(fit_path)
    ok = -2.3 <= fit["algebraic_exponent"] <= -1.7 and drift < 1e-6
    manifest.check("inviscid-damping", ok, **payload)
    return 0 if ok else 4


def _ledger_csv(path, ledger):
    rows = [{k: r[k] for k in LEDGER_COLUMNS} for r in ledger.rows]
    _write_csv(path, LEDGER_COLUMNS, rows)


def _cmd_evolve_nonlinear(cfg, outdir, manifest):
    res = ProbeResolution(K1=cfg["K1"], K3=cfg["K3"], n=cfg["n"])
    nu = cfg["nu"]
    amp = cfg.get("amplitude") or 0.01 * nu**1.75
    f0 = init_perturbation(cfg["shape"], amp, seed=cfg["seed"], res=res)
    T = cfg.get("T") or max(10.0 / np.sqrt(nu), 1.2 / nu)
    dt = cfg.get("dt") or 0.05
    result = run_and_ledger(f0, nu, T, dt=dt)
    path = os.path.join(outdir, "ledger.csv")
    _ledger_csv(path, result.ledger)
    manifest.add_output(path)
    manifest.check("run", result.verdict != "Undecided",
                   verdict=result.verdict,
                   max_energy_ratio=result.max_energy_ratio)
    return 0


def _cmd_threshold_probe(cfg, outdir, manifest):
    res = ProbeResolution(K1=cfg["K1"], K3=cfg["K3"], n=cfg["n"])
    nu = cfg["nu"]
    a_lo = cfg.get("a_lo") or 0.01 * nu**1.75
    a_hi = cfg.get("a_hi") or 0.5
    T = cfg.get("T")
    dt = cfg.get("dt") or 0.05
    history_paths = []

    runs = []

    def runner(a, horizon=None):
        f0 = init_perturbation(cfg["shape"], a, seed=cfg["seed"], res=res)
        horizon = horizon or T or max(10.0 / np.sqrt(nu), 1.2 / nu)
        result = run_and_ledger(f0, nu, horizon, dt=dt)
        idx = len(runs)
        runs.append(result)
        path = os.path.join(outdir, f"ledger_{idx:02d}.csv")
        _ledger_csv(path, result.ledger)
        history_paths.append(path)
        return result.verdict

    result = threshold_bisect(nu, cfg["shape"], a_lo, a_hi, runner=runner,
                              res=res, seed=cfg["seed"], dt=dt)
    for p in history_paths:
        manifest.add_output(p)
    path = os.path.join(outdir, "threshold.json")
    with open(path, "w") as fh:
        json.dump({
            "nu": nu,
            "amplitude_stable": result.amplitude_stable,
            "amplitude_unstable": result.amplitude_unstable,
            "criterion": result.criterion,
            "history": [[a, v] for a, v in result.history],
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add_output(path)
    manifest.check("threshold", True,
                   bracket=[result.amplitude_stable, result.amplitude_unstable])
    return 0


def _cmd_selftest(cfg, outdir, manifest):
    """Run the directly-checkable definitional examples."""
    from .grid import differentiate, quad_integrate
    from .norms import NormKind, norm as norm_of
    from .airy import a0

    checks = []
    g = build_grid(33)
    checks.append(("node endpoints", g.nodes[0] == 1.0 and g.nodes[-1] == -1.0))
    checks.append(("odd-grid midpoint", g.nodes[16] == 0.0))
    one = g.from_callable(lambda y: np.ones_like(y))
    checks.append(("d1 of constant", float(np.max(np.abs(differentiate(one).values))) < 1e-12 * 33**2))
    checks.append(("quadrature of 1", abs(quad_integrate(one) - 2.0) < 1e-13))
    yfun = g.from_callable(lambda y: y)
    checks.append(("quadrature of y", abs(quad_integrate(yfun)) < 1e-13))
    checks.append(("L2 of constant", abs(norm_of(one, NormKind("L2")) - np.sqrt(2)) < 1e-12))
    checks.append(("a0 far-field", abs(a0(40.0)) < 1e-12))
    problem = ModeProblem(1e-3, (1, 0), 0.5)
    zero = build_grid(65).function(np.zeros(65))
    sol = solve_forced(assemble(problem, zero.grid), zero)
    checks.append(("zero forcing", float(np.max(np.abs(sol.w.values))) == 0.0))
    for name, ok in checks:
        manifest.check(name, ok)
    return 0 if all(ok for _, ok in checks) else 4


_DISPATCH = {
    "resolvent-scan": _cmd_resolvent_scan,
    "envelope-check": _cmd_envelope_check,
    "pseudospectrum": _cmd_pseudospectrum,
    "airy-corrector": _cmd_airy_corrector,
    "nonslip-decompose": _cmd_nonslip_decompose,
    "evolve-linear": _cmd_evolve_linear,
    "rayleigh-damping": _cmd_rayleigh_damping,
    "evolve-nonlinear": _cmd_evolve_nonlinear,
    "threshold-probe": _cmd_threshold_probe,
    "selftest": _cmd_selftest,
}


def dispatch(config: RunConfig, outdir=None):
    """Run one command; returns (exit_code, manifest_path)."""
    outdir = outdir or config.get("output_dir", ".")
    os.makedirs(outdir, exist_ok=True)
    manifest = RunManifest(config)
    code = _DISPATCH[config["command"]](config, outdir, manifest)
    manifest_path = manifest.write(os.path.join(outdir, "manifest.json"))
    return code, manifest_path


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="oslab",
        description="spectral laboratory for wall-bounded shear-flow estimates",
    )
    parser.add_argument("--config", help="path to a JSON run configuration")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override or supply config entries")
    parser.add_argument("--output-dir", default=None)
    parser.add_argument("--verify", metavar="MANIFEST",
                        help="recompute hashes for an existing manifest")
    parser.add_argument("command", nargs="?", help="command to run")
    args = parser.parse_args(argv)

    if args.verify:
        ok, msg = verify_manifest(args.verify)
        print(f"verify: {msg}")
        return 0 if ok else 3

    try:
        raw = {}
        if args.config:
            raw = parse_config(args.config).data
        if args.command:
            raw["command"] = args.command
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, val = item.split("=", 1)
            try:
                raw[key] = json.loads(val)
            except json.JSONDecodeError:
                raw[key] = val
        cfg = config_from_dict(raw)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    try:
        code, manifest_path = dispatch(cfg, outdir=args.output_dir)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except OsLabError as err:
        record = {"error": type(err).__name__, "message": str(err)}
        print(json.dumps(record), file=sys.stderr)
        return 3
    print(f"manifest: {manifest_path}")
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Configuration-driven entry point.

Subcommands:

- ``verify-calculus``: paradifferential property suite; JSON report, exit 1
  if any residual exceeds its threshold.
- ``scan-mass``: Diophantine mass scan; per-mass CSV and fraction summary.
- ``normal-form``: assembles the paralinearized system at a seeded state and
  applies diagonalization, normal-form, and Birkhoff steps; JSON ledger of
  every before/after norm.
- ``lifespan``: the quadratic-lifespan experiment; trajectory and study CSVs
  plus a summary with the envelope checks.
- ``report``: renders matplotlib figures from the artifacts of a previous
  run, next to the delimited output.

The data-producing commands emit CSV/JSON only; figures live behind the
separate ``report`` path.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, get_bool, get_float, get_float_list, get_int
from .density import canonical_density
from .evolution import SimConfig, initial_datum, run
from .grid import GridSpec, PairField, sobolev_norm
from .normal_form import NFParams, assemble_system, conjugation_step
from .small_divisors import ScanConfig, ZeroDivisorError, d_star
from .verify import calculus_checks


def _outdir(args, cfg) -> Path:
    out = Path(args.out or cfg.get("output_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _archive_config(args, out: Path) -> None:
    if args.config:
        shutil.copyfile(args.config, out / "config.txt")


def _corrupt_eta(y):
    # fault-injection hook: violates the support contract on purpose
    return np.clip(1.2 - 0.3 * np.abs(np.asarray(y, dtype=float)), 0.0, 1.0)


def cmd_verify_calculus(args) -> int:
    cfg = cfgmod.load_config(args.config, "verify-calculus") if args.config else {}
    seed = args.seed if args.seed is not None else get_int(cfg, "seed", 0)
    grid = cfgmod.grid_from_config(cfg) if "grid.d" in cfg else GridSpec(
        d=1, K=16, G=np.eye(1), m=0.5)
    override = _corrupt_eta if get_bool(cfg, "debug.corrupt_eta", False) else None
    checks = calculus_checks(grid, seed=seed, eta_override=override)
    out = _outdir(args, cfg)
    _archive_config(args, out)
    report = {
        "grid": {"d": grid.d, "K": grid.K, "m": grid.m, "eps_q": grid.eps_q},
        "seed": seed,
        "checks": checks,
        "all_pass": all(c["passed"] for c in checks),
    }
    (out / "verify_calculus.json").write_text(json.dumps(report, indent=2) + "\n")
    for c in checks:
        status = "pass" if c["passed"] else "FAIL"
        print(f"[{status}] {c['name']}: residual {c['residual']:.3e} "
              f"(threshold {c['threshold']:.3e})")
    if not report["all_pass"]:
        bad = [c["name"] for c in checks if not c["passed"]]
        print(f"failing checks: {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


def cmd_scan_mass(args) -> int:
    cfg = cfgmod.load_config(args.config, "scan-mass")
    seed = args.seed if args.seed is not None else get_int(cfg, "seed", 0)
    d = get_int(cfg, "grid.d")
    gammas = get_float_list(cfg, "scan.gamma", [1e-3])
    tau_star = get_float(cfg, "scan.tau_star", float(d_star(d) + 1))
    cutoff = get_int(cfg, "scan.ell_cutoff", 20)
    lo = get_float(cfg, "scan.mass_lo", 0.0)
    hi = get_float(cfg, "scan.mass_hi", 1.0)
    count = get_int(cfg, "scan.mass_count", 10_000)

    raw_omega = cfg.get("scan.omega", "random")
    if raw_omega == "random":
        rng = np.random.default_rng(seed)
        omega = rng.uniform(0.5, 1.5, size=d_star(d))
    else:
        omega = np.array([float(v) for v in raw_omega.split(",")])
        if len(omega) != d_star(d):
            raise ConfigError(f"scan.omega needs {d_star(d)} entries")

    out = _outdir(args, cfg)
    _archive_config(args, out)
    fractions = []
    worst_l = worst_v = None
    for gi, gamma in enumerate(gammas):
        scan = ScanConfig(d=d, gamma=gamma, tau_star=tau_star,
                          ell_cutoff=cutoff, mass_lo=lo, mass_hi=hi,
                          mass_count=count)
        from .small_divisors import excluded_measure_scan
        frac, masses, passes = excluded_measure_scan(scan, omega)
        fractions.append((gamma, frac))
        if worst_l is None:
            worst_l, worst_v = _worst_divisors(omega, masses, gamma, tau_star, cutoff)
        path = out / f"masses_gamma{gi}.csv"
        with open(path, "w") as fh:
            fh.write("m,pass,worst_ell,worst_value\n")
            for m, ok, wl, wv in zip(masses, passes, worst_l, worst_v):
                fh.write(f"{float(m)!r},{int(ok)},{wl},{float(wv)!r}\n")
    with open(out / "fractions.csv", "w") as fh:
        fh.write("gamma,excluded_fraction\n")
        for gamma, frac in fractions:
            fh.write(f"{gamma!r},{frac!r}\n")
    summary = {"omega": [float(v) for v in omega], "tau_star": tau_star,
               "ell_cutoff": cutoff,
               "fractions": [{"gamma": g, "excluded_fraction": f}
                             for g, f in fractions]}
    (out / "scan_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for gamma, frac in fractions:
        print(f"gamma {gamma:g}: excluded fraction {frac:.6f}")
    return 0


def _worst_divisors(omega, masses, gamma, tau_star, cutoff):
    """Per-mass argmin of |omega . l +- m| <l>^{tau*} over the l-box."""
    from .small_divisors import _box
    ells = _box(cutoff, len(omega))
    dots = ells @ omega
    japt = (1.0 + np.sum(ells ** 2, axis=1)) ** (tau_star / 2.0)
    n_mass = len(masses)
    worst_idx = np.zeros(n_mass, dtype=int)
    worst_v = np.empty(n_mass)
    block = 64
    buf = np.empty((len(ells), block))
    buf2 = np.empty((len(ells), block))
    for i0 in range(0, n_mass, block):
        mb = masses[i0:i0 + block]
        w = len(mb)
        np.add(dots[:, None], mb[None, :], out=buf[:, :w])
        np.abs(buf[:, :w], out=buf[:, :w])
        np.subtract(dots[:, None], mb[None, :], out=buf2[:, :w])
        np.abs(buf2[:, :w], out=buf2[:, :w])
        np.minimum(buf[:, :w], buf2[:, :w], out=buf[:, :w])
        buf[:, :w] *= japt[:, None]
        idx = np.argmin(buf[:, :w], axis=0)
        worst_idx[i0:i0 + w] = idx
        worst_v[i0:i0 + w] = buf[idx, np.arange(w)]
    worst_l = [";".join(str(int(v)) for v in ells[i]) for i in worst_idx]
    return worst_l, worst_v


def cmd_normal_form(args) -> int:
    cfg = cfgmod.load_config(args.config, "normal-form")
    seed = args.seed if args.seed is not None else get_int(cfg, "seed", 0)
    grid = cfgmod.grid_from_config(cfg)
    p = NFParams(
        get_float(cfg, "nf.delta", 0.75),
        get_float(cfg, "nf.tau", {1: 1.0, 2: 1.5, 3: 2.5}[grid.d]),
        get_float(cfg, "nf.eps_nf", {1: 0.3, 2: 0.25, 3: 0.2}[grid.d]),
        d=grid.d,
    )
    n_diag = get_int(cfg, "nf.steps_diag", 2)
    n_nf = get_int(cfg, "nf.steps_nf", 2)
    eps_data = get_float(cfg, "nf.eps_data", 0.05)
    band = get_int(cfg, "nf.band", max(1, grid.K // 4))
    s = get_float(cfg, "nf.s", 1.0)

    f0 = canonical_density(grid.d)
    u = initial_datum(grid, 4.0, eps_data, seed)
    # initial_datum uses K//4 band; reuse directly unless band overridden
    if band != max(1, grid.K // 4):
        from .grid import random_band_field
        rng = np.random.default_rng(seed)
        u = random_band_field(grid, rng, band=band, shape_exp=5.0)
        u = (eps_data / sobolev_norm(u, 4.0)) * u
    U = PairField.from_u(u)

    out = _outdir(args, cfg)
    _archive_config(args, out)
    state = assemble_system(f0, U)
    from .normal_form import _offdiag_norm, _nf_violation
    ledger = [{
        "kind": "initial",
        "offdiag_norm": _offdiag_norm(state, s),
        "nf_violation": _nf_violation(state, p, s)[0],
        "linear_remainder_max": state.lin_family.max_abs(),
    }]
    try:
        for _ in range(n_diag):
            state, rep = conjugation_step(state, "diag", p, s=s)
            ledger.append(rep.to_json())
        for _ in range(n_nf):
            state, rep = conjugation_step(state, "nf", p, s=s)
            ledger.append(rep.to_json())
        state, rep = conjugation_step(state, "birkhoff", p, s=s)
        ledger.append(rep.to_json())
    except ZeroDivisorError as exc:
        ledger.append({"kind": "error", "message": str(exc),
                       "k": list(exc.k), "xi": list(exc.xi)})
        (out / "normal_form_ledger.json").write_text(
            json.dumps(ledger, indent=2) + "\n")
        print(f"birkhoff step failed: {exc}", file=sys.stderr)
        return 1
    (out / "normal_form_ledger.json").write_text(json.dumps(ledger, indent=2) + "\n")
    for entry in ledger:
        kind = entry["kind"]
        if kind == "initial":
            print(f"initial: offdiag {entry['offdiag_norm']:.6e}, "
                  f"nf violation {entry['nf_violation']:.6e}")
        elif "before" in entry:
            key = next(iter(entry["before"]))
            print(f"{kind}: {key} {entry['before'][key]:.6e} -> "
                  f"{entry['after'][key]:.6e}")
    return 0


def cmd_lifespan(args) -> int:
    cfg = cfgmod.load_config(args.config, "lifespan")
    seed = args.seed if args.seed is not None else get_int(cfg, "seed", 0)
    threads = args.threads if args.threads is not None else get_int(cfg, "threads", 1)
    grid = cfgmod.grid_from_config(cfg)
    sim = SimConfig(
        dt=get_float(cfg, "sim.dt", 2e-3),
        t_max=get_float(cfg, "sim.t_max", 0.0),
        rho=get_float(cfg, "sim.rho", 4.0),
        s_high=tuple(get_float_list(cfg, "sim.s_high", [8.0])),
        blowup_factor=get_float(cfg, "sim.blowup_factor", 2.0),
        record_stride=get_int(cfg, "sim.record_stride", 25),
    )
    eps_list = get_float_list(cfg, "lifespan.eps_list", [0.1, 0.05, 0.025])
    n_seeds = get_int(cfg, "lifespan.seeds", 1)
    horizon = get_float(cfg, "lifespan.horizon_factor", 0.1)
    seeds = [seed + i for i in range(n_seeds)]

    f0 = canonical_density(grid.d)
    out = _outdir(args, cfg)
    _archive_config(args, out)

    # one trajectory per (eps, seed): envelope checks + study rows
    from .evolution import LifespanRow, LifespanTable

    def one(task):
        eps, sd = task
        t_cap = horizon * eps ** (-2.0)
        if sim.t_max > 0.0:
            t_cap = min(t_cap, sim.t_max)
        local = SimConfig(dt=sim.dt, t_max=t_cap, rho=sim.rho,
                          s_high=sim.s_high, blowup_factor=sim.blowup_factor,
                          record_stride=sim.record_stride)
        u0 = initial_datum(grid, sim.rho, eps, sd)
        return eps, sd, t_cap, run(u0, f0, local)

    tasks = [(eps, sd) for eps in eps_list for sd in seeds]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, tasks))
    else:
        results = [one(t) for t in tasks]

    summary_rows = []
    rows = []
    for eps, sd, t_cap, traj in results:
        traj.to_csv(out / f"traj_eps{eps:g}_seed{sd}.csv")
        high0 = {s: traj.high_norms[s][0] for s in traj.high_norms}
        summary_rows.append({
            "eps": eps, "seed": sd, "exit": traj.exit,
            "t_star": traj.t_star,
            "low_max": max(traj.low_norms),
            "low_ok": max(traj.low_norms) <= 2.0 * eps * (1 + 1e-9),
            "high_ratio_max": max(
                max(v / high0[s] for v in traj.high_norms[s])
                for s in traj.high_norms),
            "high_ok": all(
                v <= 4.0 * high0[s] for s in traj.high_norms
                for v in traj.high_norms[s]),
        })
        censored = traj.exit == "completed"
        rows.append(LifespanRow(eps, sd, t_cap if censored else float(traj.t_star),
                                censored))

    by_key = {(r.eps, r.seed): r for r in rows}
    ratios = []
    for hi_e, lo_e in zip(eps_list, eps_list[1:]):
        if abs(hi_e - 2.0 * lo_e) > 1e-12 * hi_e:
            continue
        for sd in seeds:
            a, b = by_key[(lo_e, sd)], by_key[(hi_e, sd)]
            if not (a.censored or b.censored):
                ratios.append((lo_e, sd, a.t_star / b.t_star))
    table = LifespanTable(rows, ratios)
    table.to_csv(out / "study.csv")
    ratio_ok = all(r >= 3.0 for _, _, r in table.ratios) if table.ratios else True
    summary = {
        "rows": summary_rows,
        "ratios": [{"eps": e, "seed": s, "ratio": r} for e, s, r in table.ratios],
        "all_censored": all(r.censored for r in table.rows),
        "low_ok": all(r["low_ok"] for r in summary_rows),
        "high_ok": all(r["high_ok"] for r in summary_rows),
        "ratio_ok": ratio_ok,
    }
    summary["pass"] = bool(summary["low_ok"] and summary["high_ok"]
                           and summary["ratio_ok"])
    (out / "lifespan_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"low_ok {summary['low_ok']}, high_ok {summary['high_ok']}, "
          f"ratio_ok {summary['ratio_ok']} "
          f"({'all censored' if summary['all_censored'] else 'uncensored runs present'})")
    return 0 if summary["pass"] else 1


def cmd_report(args) -> int:
    from .figures import render_all
    out = Path(args.out or "out")
    made = render_all(out)
    for p in made:
        print(f"wrote {p}")
    if not made:
        print("no renderable artifacts found", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="torusnls",
        description="spectral normal-form toolkit for derivative NLS on generic tori")
    ap.add_argument("command",
                    choices=["verify-calculus", "scan-mass", "normal-form",
                             "lifespan", "report"])
    ap.add_argument("--config", help="flat key-value config file")
    ap.add_argument("--seed", type=int, default=None, help="override config seed")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads (1 = deterministic path)")
    ap.add_argument("--out", default=None, help="output directory")
    args = ap.parse_args(argv)

    handlers = {
        "verify-calculus": cmd_verify_calculus,
        "scan-mass": cmd_scan_mass,
        "normal-form": cmd_normal_form,
        "lifespan": cmd_lifespan,
        "report": cmd_report,
    }
    if args.command != "verify-calculus" and args.command != "report" \
            and not args.config:
        ap.error(f"{args.command} requires --config")
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Figure rendering for run artifacts.

The data-producing commands emit CSV/JSON only; this module (behind the
``report`` subcommand) reads those files back and drops PNG figures next to
them.  Each renderer is a no-op when its artifact is absent.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

FIGSIZE = (6.0, 3.7)


def _read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            parts = line.strip().split(",")
            if parts == [""]:
                continue
            rows.append([_maybe_float(v) for v in parts])
    return header, rows


def _maybe_float(v: str):
    try:
        return float(v)
    except ValueError:
        return v


def render_verify(out: Path) -> list[Path]:
    src = out / "verify_calculus.json"
    if not src.exists():
        return []
    report = json.loads(src.read_text())
    names = [c["name"] for c in report["checks"]]
    resid = [max(c["residual"], 1e-18) for c in report["checks"]]
    thr = [max(c["threshold"], 1e-18) for c in report["checks"]]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    x = np.arange(len(names))
    ax.bar(x - 0.2, resid, width=0.4, label="residual", color="#336699")
    ax.bar(x + 0.2, thr, width=0.4, label="threshold", color="#CC6633")
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("residual")
    ax.legend(fontsize=8)
    fig.tight_layout()
    dest = out / "verify_calculus.png"
    fig.savefig(dest, dpi=150)
    plt.close(fig)
    return [dest]


def render_scan(out: Path) -> list[Path]:
    made = []
    frac = out / "fractions.csv"
    if frac.exists():
        header, rows = _read_csv(frac)
        gammas = [r[0] for r in rows]
        fracs = [r[1] for r in rows]
        fig, ax = plt.subplots(figsize=FIGSIZE)
        ax.loglog(gammas, np.maximum(fracs, 1e-12), "o-", color="#336699",
                  label="excluded fraction")
        ax.loglog(gammas, [10 * g for g in gammas], "--", color="#999999",
                  label="10 gamma envelope")
        ax.set_xlabel("gamma")
        ax.set_ylabel("excluded fraction")
        ax.legend(fontsize=8)
        fig.tight_layout()
        dest = out / "excluded_fraction.png"
        fig.savefig(dest, dpi=150)
        plt.close(fig)
        made.append(dest)
    masses0 = out / "masses_gamma0.csv"
    if masses0.exists():
        header, rows = _read_csv(masses0)
        m = np.array([r[0] for r in rows])
        ok = np.array([r[1] for r in rows])
        fig, ax = plt.subplots(figsize=FIGSIZE)
        bad = m[ok == 0]
        ax.plot(m, ok, ".", markersize=1, color="#336699")
        if len(bad):
            ax.plot(bad, np.zeros_like(bad), "|", color="#CC3333", markersize=12)
        ax.set_xlabel("mass m")
        ax.set_yticks([0, 1])
        ax.set_yticklabels(["excluded", "pass"])
        fig.tight_layout()
        dest = out / "mass_scan.png"
        fig.savefig(dest, dpi=150)
        plt.close(fig)
        made.append(dest)
    return made


def render_normal_form(out: Path) -> list[Path]:
    src = out / "normal_form_ledger.json"
    if not src.exists():
        return []
    ledger = json.loads(src.read_text())
    labels, offd, nfv, rem = [], [], [], []
    for entry in ledger:
        kind = entry.get("kind")
        if kind == "initial":
            labels.append("init")
            offd.append(entry["offdiag_norm"])
            nfv.append(entry["nf_violation"])
            rem.append(None)
        elif kind in ("diag", "nf", "birkhoff") and "before" in entry:
            labels.append(kind)
            offd.append(entry["after"].get("offdiag_norm"))
            nfv.append(entry["after"].get("nf_violation"))
            rem.append(entry["after"].get("linear_remainder_norm"))
    fig, ax = plt.subplots(figsize=FIGSIZE)
    x = np.arange(len(labels))

    def series(vals, label, color):
        pts = [(i, v) for i, v in enumerate(vals) if v is not None and v > 0]
        if pts:
            ax.semilogy([p[0] for p in pts], [p[1] for p in pts], "o-",
                        label=label, color=color)

    series(offd, "off-diagonal norm", "#336699")
    series(nfv, "non-normal-form content", "#CC6633")
    series(rem, "linear remainder", "#339933")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("norm")
    ax.legend(fontsize=8)
    fig.tight_layout()
    dest = out / "normal_form_ledger.png"
    fig.savefig(dest, dpi=150)
    plt.close(fig)
    return [dest]


def render_lifespan(out: Path) -> list[Path]:
    made = []
    trajs = sorted(out.glob("traj_eps*_seed*.csv"))
    if trajs:
        fig, ax = plt.subplots(figsize=FIGSIZE)
        for path in trajs:
            header, rows = _read_csv(path)
            t = [r[0] for r in rows]
            low = [r[1] for r in rows]
            ax.plot(t, low, label=path.stem.replace("traj_", ""), linewidth=1)
        ax.set_xlabel("t")
        ax.set_ylabel("low Sobolev norm")
        ax.legend(fontsize=6)
        fig.tight_layout()
        dest = out / "lifespan_norms.png"
        fig.savefig(dest, dpi=150)
        plt.close(fig)
        made.append(dest)
    study = out / "study.csv"
    if study.exists():
        header, rows = _read_csv(study)
        # columns: eps, T_star, censored
        eps = np.array([r[0] for r in rows])
        tstar = np.array([r[1] for r in rows])
        cens = np.array([r[2] for r in rows])
        fig, ax = plt.subplots(figsize=FIGSIZE)
        unc = cens == 0
        if np.any(unc):
            ax.loglog(eps[unc], tstar[unc], "o", color="#336699", label="T*")
        if np.any(~unc):
            ax.loglog(eps[~unc], tstar[~unc], "^", color="#999999",
                      label="censored (horizon)")
        ref = sorted(set(eps))
        ax.loglog(ref, [0.1 * e ** -2 for e in ref], "--", color="#CC6633",
                  label="0.1 eps^-2")
        ax.set_xlabel("eps")
        ax.set_ylabel("T*")
        ax.legend(fontsize=8)
        fig.tight_layout()
        dest = out / "lifespan_tstar.png"
        fig.savefig(dest, dpi=150)
        plt.close(fig)
        made.append(dest)
    return made


def render_all(out: Path) -> list[Path]:
    made = []
    made += render_verify(out)
    made += render_scan(out)
    made += render_normal_form(out)
    made += render_lifespan(out)
    return made

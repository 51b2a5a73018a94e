"""Command-line runner: ``facelift-lab <subcommand> [options]``.

Every run writes its CSV/JSON artifacts and a ``manifest.json`` holding the
resolved configuration and SHA-256 checksums of the artifacts. Exit codes:
0 success, 2 configuration or validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from . import config as cfgmod
from .config import ConfigError
from .dual import convergence_table, primal_objective_mc, richardson_limit
from .facelift import critical_z, facelift_value, primal_limit
from .germ import bang_estimate, germ_analytic, kappa_sweep, optimize_germ
from .hjb import HjbGrid, NumericalFailure, facelift_distance, solve_dual_hjb
from .market import Estimate, simulate_paths
from .nonattain import marginal_integrability, nonattainment_report, sweep_controls
from .output import csv_bytes, fmt, json_bytes, sha256, write_atomic
from .utility import eval_u, eval_v

SUBCOMMANDS = ("facelift", "germ", "dual-mc", "primal-mc", "hjb", "nonattain", "report")
ROW_COLUMNS = ("T", "z_or_x", "family", "params", "estimate", "ci_low", "ci_high", "naive",
               "facelift_target")


class ReportError(ValueError):
    pass


def _est_row(T, label, family, params, est: Estimate, analytic):
    lo, hi = est.ci
    return {"T": T, "z_or_x": label, "family": family, "params": params, "estimate": est.mean,
            "ci_low": lo, "ci_high": hi, "analytic_target": analytic}


# --- subcommands ---------------------------------------------------------------------


def run_facelift(cfg):
    u = cfgmod.utility(cfg)
    phi, psi = cfg["facelift.phi"], cfg["facelift.psi"]
    lo, hi, n = cfg["facelift.z_grid"]
    z = np.linspace(lo, hi, n)
    naive = eval_v(u, z) + phi * z
    lifted = facelift_value(u, z, phi, psi)
    zc = critical_z(u, phi, psi)
    rows = [{"z": a, "naive": b, "facelift": c, "z_c": zc} for a, b, c in zip(z, naive, lifted)]
    return {"facelift.csv": csv_bytes(("z", "naive", "facelift", "z_c"), rows)}, {"z_c": zc}


def run_germ(cfg):
    endow = cfgmod.endowment(cfg)
    T, seed = cfg["germ.T"], cfg["seed"]
    nu_max = cfg["germ.nu_max"]
    bundle = simulate_paths(cfgmod.market(cfg), T, cfg["germ.n_steps"], cfg["germ.n_paths"], seed)
    target_value = germ_analytic("controllable", endow)
    search = optimize_germ(T, endow, cfg["germ.budget"], seed, nu_max=nu_max,
                           kappa_max=cfg["germ.kappa_max"], bundle=bundle)
    rows = [_est_row(T, "optimized", search.control.family, search.control.describe(), search.estimate,
                     target_value)]
    hint = endow.argmin_hint()
    sweep = kappa_sweep(T, endow, hint, cfg["germ.kappas"], bundle, nu_max=nu_max)
    for k, est in sweep:
        rows.append(_est_row(T, "kappa_sweep", "push", f"target={hint:g};kappa={k:g};nu_max={nu_max:g}",
                             est, target_value))
    n = cfg["germ.bang_n"]
    bang = None
    if 1.0 / n <= T:
        bang = bang_estimate(T, endow, hint, n, bundle, nu_max=nu_max)
        rows.append(_est_row(T, "bang", "bang", f"target={hint:g};n={n};nu_max={nu_max:g}", bang,
                             target_value))
    columns = ("T", "z_or_x", "family", "params", "estimate", "ci_low", "ci_high", "analytic_target")
    monotone = all(b.mean <= a.mean + math.hypot(a.half_width, b.half_width)
                   for (_, a), (_, b) in zip(sweep, sweep[1:]))
    summary = {"optimized": search.estimate.mean, "bang": None if bang is None else bang.mean,
               "sweep_monotone": monotone, "analytic_target": target_value}
    return {"germ.csv": csv_bytes(columns, rows)}, summary


def run_dual(cfg):
    table = convergence_table(
        cfg["dual.z_list"], cfg["dual.T_list"], cfgmod.endowment(cfg), cfgmod.market(cfg),
        cfgmod.utility(cfg), cfg["dual.budget"], cfg["seed"], n_paths=cfg["dual.n_paths"],
        n_steps=cfg["dual.n_steps"], nu_max=cfg["dual.nu_max"], kappa_max=cfg["dual.kappa_max"],
    )
    extrapolated = {}
    for z in cfg["dual.z_list"]:
        cells = [r for r in table.rows if r["z_or_x"] == z]
        if len(cells) >= 2:
            a, b = cells[-2], cells[-1]
            ea = Estimate(a["estimate"], (a["ci_high"] - a["ci_low"]) / (2 * 1.959963984540054), 1)
            eb = Estimate(b["estimate"], (b["ci_high"] - b["ci_low"]) / (2 * 1.959963984540054), 1)
            lim = richardson_limit(a["T"], ea, b["T"], eb)
            extrapolated[fmt(z)] = {"estimate": lim.mean, "ci_low": lim.ci[0], "ci_high": lim.ci[1]}
    summary = {"trends": {fmt(k): v for k, v in table.trends.items()}, "extrapolated": extrapolated}
    return {"dual.csv": csv_bytes(table.columns, table.rows)}, summary


def run_primal(cfg):
    endow, params, u = cfgmod.endowment(cfg), cfgmod.market(cfg), cfgmod.utility(cfg)
    T = cfg["primal.T"]
    bundle = simulate_paths(params, T, cfg["primal.n_steps"], cfg["primal.n_paths"], cfg["seed"])
    rows = []
    for x in cfg["primal.x_list"]:
        for theta in cfg["primal.theta_list"]:
            res = primal_objective_mc(T, x, theta, endow, params, bundle, u)
            lo, hi = res.estimate.ci
            with np.errstate(divide="ignore", invalid="ignore"):
                naive = float(eval_u(u, x + endow.phi0)) if x + endow.phi0 > 0 else -math.inf
                target = float(primal_limit(u, endow.phi0, endow.inf_phi, x)) if x + endow.phi0 > 0 \
                    else -math.inf
            rows.append({"T": T, "z_or_x": x, "family": "constant_exposure", "params": f"theta={theta:g}",
                         "estimate": res.estimate.mean, "ci_low": lo, "ci_high": hi, "naive": naive,
                         "facelift_target": target, "n_negative": res.n_negative,
                         "floor_breaches": res.floor_breaches})
    columns = ROW_COLUMNS + ("n_negative", "floor_breaches")
    return {"primal.csv": csv_bytes(columns, rows)}, {}


def hjb_grid(cfg) -> HjbGrid:
    return HjbGrid(cfg["hjb.eta_min"], cfg["hjb.eta_max"], cfg["hjb.n_eta"], cfg["hjb.logz_min"],
                   cfg["hjb.logz_max"], cfg["hjb.n_z"], cfg["hjb.T_max"], nu_max=cfg["hjb.nu_max"],
                   eps_zz=cfg["hjb.eps_zz"], lam=cfgmod.market(cfg).lam)


def run_hjb(cfg):
    endow, params, u = cfgmod.endowment(cfg), cfgmod.market(cfg), cfgmod.utility(cfg)
    grid = hjb_grid(cfg)
    sol = solve_dual_hjb(grid, u, endow, params, cfg["hjb.save_times"])
    eta, z = grid.eta, grid.z
    rows = []
    for k, T in enumerate(sol.times):
        for i in range(grid.n_eta):
            for j in range(grid.n_z):
                rows.append({"T": T, "eta": eta[i], "z": z[j], "v": sol.values[k, i, j],
                             "nu_star": sol.nu_star[k, i, j], "floor_active": int(sol.floor_active[k, i, j])})
    header = {
        "grid": sol.meta,
        "n_steps": sol.n_steps,
        "times": list(sol.times),
        "floor_activations": [int(c) for c in sol.floor_counts],
        "eta0": endow.eta0,
        "large_z_slope": [sol.large_z_slope(T, endow.eta0) for T in sol.times],
        "facelift_distance": [facelift_distance(sol, T, endow, u) for T in sol.times],
    }
    files = {
        "hjb_slices.csv": csv_bytes(("T", "eta", "z", "v", "nu_star", "floor_active"), rows),
        "hjb_header.json": json_bytes(header),
    }
    return files, {"times": list(sol.times)}


def run_nonattain(cfg):
    endow, params, u = cfgmod.endowment(cfg), cfgmod.market(cfg), cfgmod.utility(cfg)
    T = cfg["nonattain.T"]
    controls = sweep_controls(endow, T, cfg["nonattain.kappas"], cfg["nonattain.window_fraction"],
                              cfg["nonattain.nu_max"])
    bundle = simulate_paths(params, T, cfg["nonattain.n_steps"], cfg["nonattain.n_paths"], cfg["seed"])
    reports, rows = [], []
    for z in cfg["nonattain.z_list"]:
        rep = nonattainment_report(T, z, controls, endow, params, u, cfg["seed"], bundle=bundle)
        reports.append(rep.to_dict())
        for r in rep.rows:
            rows.append({"T": T, "z": z, **r.row()})
    integ = marginal_integrability(endow, u, T)
    doc = {"reports": reports, "integrability": {"verdict": integ.verdict, "value": integ.value,
                                                 "rel_change": integ.rel_change, "note": integ.note}}
    columns = ("T", "z") + tuple(rows[0].keys())[2:] if rows else ("T", "z")
    return {"nonattain.json": json_bytes(doc), "nonattain.csv": csv_bytes(columns, rows)}, {
        "verdicts": {fmt(r["z"]): r["verdict"] for r in reports}}


# --- report --------------------------------------------------------------------------


def _read_csv(path):
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def run_report(directory):
    manifests = []
    for root, _, files in sorted(os.walk(directory)):
        if "manifest.json" in files:
            with open(os.path.join(root, "manifest.json"), encoding="utf-8") as fh:
                m = json.load(fh)
            if m.get("subcommand") != "report":
                manifests.append((root, m))
    if not manifests:
        raise ReportError(f"no run manifests under {directory}")
    cfgs = [cfgmod.resolve(cfgmod.parse_text(m["config_text"]), need_model=False) for _, m in manifests]
    # envelope-only runs carry no market model
    keys = {cfgmod.model_key(c) for (_, m), c in zip(manifests, cfgs) if m["subcommand"] != "facelift"}
    if len(keys) > 1:
        raise ReportError("runs disagree on the model, utility or endowment configuration")
    cfg = next((c for (_, m), c in zip(manifests, cfgs) if m["subcommand"] != "facelift"), cfgs[0])
    convergence, cross, acceptance = [], [], {}
    dual_rows, hjb_runs = [], []
    for (root, m), c in zip(manifests, cfgs):
        if m["subcommand"] == "dual-mc":
            rows = _read_csv(os.path.join(root, "dual.csv"))
            dual_rows.extend((c["dual.nu_max"], r) for r in rows)
            convergence.extend({"run": os.path.relpath(root, directory), **r} for r in rows)
        elif m["subcommand"] == "hjb":
            hjb_runs.append((root, c))
    endow = cfgmod.endowment(cfg)
    for root, c in hjb_runs:
        grid = hjb_grid(c)
        values = {}
        for r in _read_csv(os.path.join(root, "hjb_slices.csv")):
            values.setdefault(float(r["T"]), []).append(r)
        for nu_max, d in dual_rows:
            if nu_max != c["hjb.nu_max"]:
                continue  # only runs with the same control bound are comparable
            T, z = float(d["T"]), float(d["z_or_x"])
            match = [t for t in values if abs(t - T) <= grid.dT]
            if not match or not (grid.z[0] <= z <= grid.z[-1]):
                continue
            pde = _interp_slice(values[match[0]], grid, endow.eta0, z)
            mc = float(d["estimate"])
            width = float(d["ci_high"]) - float(d["ci_low"])
            threshold = max(3.0 * width, 0.02 * abs(mc))
            cross.append({"T": T, "z": z, "mc": mc, "pde": pde, "abs_diff": abs(mc - pde),
                          "threshold": threshold, "verdict": "pass" if abs(mc - pde) <= threshold else "fail"})
    if cross:
        acceptance["mc_pde_crosscheck"] = "pass" if all(r["verdict"] == "pass" for r in cross) else "fail"
    for (root, m), c in zip(manifests, cfgs):
        s = m.get("summary", {})
        if m["subcommand"] == "germ":
            ok = s["optimized"] <= 0.05 and s["sweep_monotone"] and (s["bang"] is not None and s["bang"] <= 0.15)
            acceptance["germ_price"] = "pass" if ok else "fail"
        if m["subcommand"] == "nonattain":
            with open(os.path.join(root, "nonattain.json"), encoding="utf-8") as fh:
                doc = json.load(fh)
            ok = all(r["infima_gap"] <= 3 * r["infima_se"] for r in doc["reports"])
            ok &= all(all(k["gap"] > 3 * k["gap_se"] for k in r["candidates"])
                      for r in doc["reports"] if r["z"] >= 2)
            acceptance["modified_objective"] = "pass" if ok else "fail"
    summary = {"runs": [os.path.relpath(r, directory) for r, _ in manifests], "acceptance": acceptance,
               "cross_checks": cross, "n_convergence_rows": len(convergence)}
    files = {"summary.json": json_bytes(summary)}
    if convergence:
        files["report_convergence.csv"] = csv_bytes(("run",) + ROW_COLUMNS + ("gap_naive", "gap_target"),
                                                    convergence)
    if cross:
        files["report_crosscheck.csv"] = csv_bytes(tuple(cross[0].keys()), cross)
    return files, summary


def _interp_slice(rows, grid: HjbGrid, eta, z):
    layer = np.empty((grid.n_eta, grid.n_z))
    for r in rows:
        i = int(round((float(r["eta"]) - grid.eta_min) / grid.d_eta))
        j = int(round((math.log(float(r["z"])) - grid.logz_min) / grid.d_x))
        layer[i, j] = float(r["v"])
    fi = (eta - grid.eta_min) / grid.d_eta
    fj = (math.log(z) - grid.logz_min) / grid.d_x
    i, j = min(int(fi), grid.n_eta - 2), min(int(fj), grid.n_z - 2)
    a, b = fi - i, fj - j
    return float((1 - a) * (1 - b) * layer[i, j] + a * (1 - b) * layer[i + 1, j]
                 + (1 - a) * b * layer[i, j + 1] + a * b * layer[i + 1, j + 1])


RUNNERS = {
    "facelift": run_facelift,
    "germ": run_germ,
    "dual-mc": run_dual,
    "primal-mc": run_primal,
    "hjb": run_hjb,
    "nonattain": run_nonattain,
}


# --- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="facelift-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        if name == "report":
            p.add_argument("directory")
            p.add_argument("--out", default=None, help="output directory (default: DIRECTORY)")
            continue
        p.add_argument("--config", default=None)
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", default=os.path.join("facelift-out", name))
        p.add_argument("--seed", default=None)
        if name == "facelift":
            p.add_argument("--utility", default=None)
            p.add_argument("--phi", default=None)
            p.add_argument("--psi", default=None)
            p.add_argument("--z-grid", dest="z_grid", default=None)
    return ap


_FLAG_KEYS = {"utility": "utility", "phi": "facelift.phi", "psi": "facelift.psi",
              "z_grid": "facelift.z_grid", "seed": "seed"}


def _overrides(args) -> dict:
    out = dict(cfgmod.parse_override(item) for item in args.overrides)
    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    return out


def _write_run(out_dir, files: dict, manifest: dict) -> None:
    for name, data in files.items():
        write_atomic(os.path.join(out_dir, name), data)
    write_atomic(os.path.join(out_dir, "manifest.json"), json_bytes(manifest))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        if args.command == "report":
            if not os.path.isdir(args.directory):
                raise ReportError(f"{args.directory} is not a directory")
            files, summary = run_report(args.directory)
            out_dir = args.out or args.directory
            manifest = {"subcommand": "report", "tool": "facelift-lab", "version": __version__,
                        "wall_clock_s": time.perf_counter() - start,
                        "outputs": {k: sha256(v) for k, v in files.items()}}
            _write_run(out_dir, files, manifest)
            return 0
        cfg = cfgmod.load(args.config, _overrides(args), need_model=args.command != "facelift")
        files, summary = RUNNERS[args.command](cfg)
        for name, data in files.items():
            if name.endswith(".csv") and (b",nan" in data or b"nan," in data):
                raise NumericalFailure(f"non-finite values in {name}")
        manifest = {
            "subcommand": args.command,
            "tool": "facelift-lab",
            "version": __version__,
            "seed": cfg["seed"],
            "config_text": cfgmod.dump(cfg),
            "wall_clock_s": time.perf_counter() - start,
            "outputs": {k: sha256(v) for k, v in files.items()},
            "summary": summary,
        }
        _write_run(args.out, files, manifest)
        return 0
    except (ConfigError, ReportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

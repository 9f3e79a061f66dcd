"""Batch front door: validate, solve, equilibria, simulate, sweep.

Each run writes into a fresh timestamped subfolder of the output
directory: a JSON report embedding the fully resolved configuration,
plus CSV tables and rendered figures where the command produces curves.

Exit codes: 0 success, 1 configuration error, 2 validation failure,
3 solver failure, 4 certification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import equilibrium, oracle, plots, stopping
from .config import ConfigError, build_model, load_document, model_echo
from .equilibrium import Atom, IndifferenceHazard, Strategy, StrategyProfile
from .payoffs import validate as validate_model
from .simulate import SimConfig, estimate_values, play_game, simulate_paths
from .stopping import ThresholdError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_CERTIFICATION = 4

CERT_GAIN_TOL = 1e-3


def _out_dir(base: str, command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    root = Path(base)
    for k in range(1000):
        suffix = "" if k == 0 else f"-{k}"
        p = root / f"{command}-{stamp}{suffix}"
        if not p.exists():
            p.mkdir(parents=True)
            return p
    raise RuntimeError("could not allocate a fresh run directory")


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and math.isinf(o):
        return "inf"
    raise TypeError(f"cannot serialize {type(o)}")


def _write_csv(path: Path, header: list, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)


def _load(args):
    doc = load_document(args.model)
    model, meta = build_model(doc, hetero=args.hetero, deterministic=args.deterministic)
    overrides = {k: getattr(args, k) for k in ("seed", "paths", "grid", "dt", "tol", "x0")
                 if getattr(args, k, None) is not None}
    return doc, model, meta, model_echo(doc, meta, overrides)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    doc, model, meta, echo = _load(args)
    rep = validate_model(model, grid_size=args.grid or 400)
    out = _out_dir(args.out, "validate")
    _write_json(out / "validation.json", {"config": echo, "report": rep.to_dict()})
    for c in rep.checks:
        print(f"  [{c.status:4s}] {c.name}" + (f"  (worst at {c.worst_x:.6g}, margin {c.magnitude:.3g})"
                                               if c.worst_x is not None and c.magnitude is not None else ""))
    print(f"validation {'passed' if rep.ok else 'FAILED'} -> {out}")
    return EXIT_OK if rep.ok else EXIT_VALIDATION


def cmd_solve(args) -> int:
    doc, model, meta, echo = _load(args)
    rep = validate_model(model)
    if not rep.ok:
        print("model failed validation; run the validate command for details", file=sys.stderr)
        return EXIT_VALIDATION
    out = _out_dir(args.out, "solve")
    try:
        sols = {i: stopping.optimal_threshold(model, i) for i in (1, 2)}
    except ThresholdError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    lo, hi = model.window
    n = args.grid or 201
    span = 0.1 * (hi - lo)
    xs = np.linspace(lo + span, hi - span, n)
    cols = stopping.curve_table(model, xs)
    _write_csv(out / "curves.csv", list(cols.keys()), zip(*[cols[k] for k in cols]))
    thresholds = {"theta1": sols[1].threshold, "theta2": sols[2].threshold}
    plots.save_curves(cols, thresholds, out / "curves.png")
    _write_json(out / "solve.json", {
        "config": echo,
        "solutions": {str(i): s.to_dict() for i, s in sols.items()},
    })
    for i, s in sols.items():
        print(f"  firm {i}: threshold {s.threshold:.8g}  (break-even {s.break_even:.8g}, "
              f"pasting residual {s.smooth_pasting_residual:.2e})")
    print(f"curves and thresholds -> {out}")
    return EXIT_OK


def cmd_equilibria(args) -> int:
    doc, model, meta, echo = _load(args)
    rep = validate_model(model)
    if not rep.ok:
        print("model failed validation", file=sys.stderr)
        return EXIT_VALIDATION
    out = _out_dir(args.out, "equilibria")

    if model.diffusion.deterministic:
        det = equilibrium.deterministic_mixed_mpe(model, q1=args.q1)
        _write_json(out / "equilibria.json", {"config": echo, "deterministic": det.to_dict()})
        iv = "empty" if det.interval_empty else f"[{det.feasible_q_lo:.3f}, {det.feasible_q_hi:.3f}]"
        print(f"  deterministic-mode profile: feasible q1 interval {iv}")
        print(f"report -> {out}")
        return EXIT_OK

    try:
        report = equilibrium.analyze(model, x0=meta.get("x0") if args.x0 is None else args.x0)
    except ThresholdError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    status = EXIT_OK
    if args.certify:
        grid = oracle.build_grid(model, args.grid or 4001)
        gains = oracle.certify_profile(grid, model, report.pure_weak)
        report.oracle["pure_weak"] = gains
        if report.pure_strong is not None:
            report.oracle["pure_strong"] = oracle.certify_profile(grid, model, report.pure_strong)
        if report.mixed is not None:
            report.oracle["mixed"] = oracle.certify_profile(grid, model, report.mixed.profile)
        tol = args.tol or CERT_GAIN_TOL
        for name, gains in report.oracle.items():
            for key, g in gains.items():
                firm = int(key[-1])
                bound = tol * max(1.0, abs(model.firms[firm].exit_payoff(model.diffusion.x_ref)))
                if g > bound:
                    print(f"certification FAILED: {name} {key} = {g:.3g} > {bound:.3g}", file=sys.stderr)
                    status = EXIT_CERTIFICATION

    if report.mixed is not None:
        lo, _ = model.window
        sup = report.mixed.support_hi
        xs = np.linspace(lo + 0.05 * (sup - lo), sup, 200)
        lam1 = report.mixed.profile.firm1.hazard_at(xs)
        lam2 = report.mixed.profile.firm2.hazard_at(xs)
        _write_csv(out / "hazards.csv", ["x", "lambda_1", "lambda_2"], zip(xs, lam1, lam2))
        plots.save_hazards(xs, lam1, lam2, sup, out / "hazards.png")

    _write_json(out / "equilibria.json", {"config": echo, "report": report.to_dict()})
    print(f"  classification: {report.classification()}  "
          f"(thresholds {report.thresholds['theta1']:.6g} / {report.thresholds['theta2']:.6g}, "
          f"kappa {report.kappa if math.isfinite(report.kappa) else 'inf'})")
    print(f"report -> {out}")
    return status


def _profile_for(args, model, report):
    if args.profile == "weak":
        return report.pure_weak
    if args.profile == "strong":
        if report.pure_strong is None:
            raise ConfigError("strong-exits profile does not exist for this model")
        return report.pure_strong
    if args.profile == "mixed":
        if report.mixed is None:
            raise ConfigError("no mixed profile: outside options differ")
        return report.mixed.profile
    raise ConfigError(f"unknown profile {args.profile!r}")


def cmd_simulate(args) -> int:
    doc, model, meta, echo = _load(args)
    rep = validate_model(model)
    if not rep.ok:
        print("model failed validation", file=sys.stderr)
        return EXIT_VALIDATION
    out = _out_dir(args.out, "simulate")
    x0 = args.x0 if args.x0 is not None else meta.get("x0")
    if x0 is None:
        print("simulation needs an initial state: set x0 in the document or pass --x0", file=sys.stderr)
        return EXIT_CONFIG

    if model.diffusion.deterministic:
        det = equilibrium.deterministic_mixed_mpe(model, q1=args.q1)
        if det.interval_empty and args.q1 is None:
            print("no feasible q1: nothing to simulate", file=sys.stderr)
            return EXIT_SOLVER
        q1 = args.q1 if args.q1 is not None else det.feasible_q_lo
        profile = StrategyProfile(
            Strategy(hazard=IndifferenceHazard(model, 2, det.theta1), atoms=(Atom(det.theta1, q1),)),
            Strategy(hazard=IndifferenceHazard(model, 1, det.theta1)),
        )
    else:
        report = equilibrium.analyze(model)
        try:
            profile = _profile_for(args, model, report)
        except ConfigError as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_CONFIG

    cfg = SimConfig(x0=float(x0), n_paths=args.paths or 10000, dt=args.dt or 1e-3,
                    seed=args.seed or 0, bridge_correction=args.bridge,
                    horizon=args.horizon)
    outcomes = play_game(simulate_paths(model.diffusion, cfg), profile, model)
    est = estimate_values(outcomes, model)
    _write_json(out / "summary.json", {
        "config": echo,
        "profile": profile.to_dict(),
        "sim": {"n_paths": cfg.n_paths, "dt": cfg.dt, "seed": cfg.seed, "x0": cfg.x0,
                "bridge_correction": cfg.bridge_correction, "horizon": outcomes.horizon},
        "outcomes": outcomes.summary(),
        "values": {str(i): est[i].to_dict() for i in (1, 2)},
    })
    if args.per_path:
        _write_csv(out / "outcomes.csv", ["path", "winner", "tie", "exit_time", "pay1", "pay2"],
                   zip(range(outcomes.n), outcomes.winner, outcomes.tie.astype(int),
                       outcomes.exit_time, outcomes.pay1, outcomes.pay2))
    plots.save_outcomes(outcomes, out / "outcomes.png")
    for i in (1, 2):
        print(f"  firm {i}: value {est[i].mean:.6g} +- {est[i].se:.2g}")
    print(f"summary -> {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc, model, meta, echo = _load(args)
    out = _out_dir(args.out, "sweep")
    values = np.linspace(args.start, args.stop, args.steps)
    rows = []
    for v in values:
        doc_v = json.loads(json.dumps(doc))
        lp = doc_v.get("exit_payoffs")
        if lp is None:
            print("sweep requires the basic-mode exit_payoffs field", file=sys.stderr)
            return EXIT_CONFIG
        lp[0 if args.param == "l1" else 1] = float(v)
        if lp[0] > lp[1]:
            print(f"skipping {args.param}={v:.6g}: would violate l1 <= l2", file=sys.stderr)
            continue
        model_v, _ = build_model(doc_v, hetero=False, deterministic=args.deterministic)
        repv = validate_model(model_v)
        if not repv.ok:
            print(f"skipping {args.param}={v:.6g}: validation failed", file=sys.stderr)
            continue
        rep = equilibrium.analyze(model_v)
        ne = rep.nonexistence
        rows.append({
            args.param: float(v),
            "theta1": rep.thresholds["theta1"], "theta2": rep.thresholds["theta2"],
            "gap": rep.thresholds["gap"], "kappa": rep.kappa,
            "class": rep.classification(),
            "strong_exists": rep.pure_strong is not None,
            "witness_lo": None if ne is None or not ne.has_witness else ne.witness_lo,
            "witness_hi": None if ne is None or not ne.has_witness else ne.witness_hi,
        })
        print(f"  {args.param}={v:.6g}: class {rows[-1]['class']}, gap {rows[-1]['gap']:.6g}")
    header = [args.param, "theta1", "theta2", "gap", "kappa", "class",
              "strong_exists", "witness_lo", "witness_hi"]
    _write_csv(out / "sweep.csv", header, ([r[h] for h in header] for r in rows))
    plots.save_sweep(rows, args.param, out / "sweep.png")
    _write_json(out / "sweep.json", {"config": echo, "rows": rows})
    print(f"sweep -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _common(sub):
    sub.add_argument("--model", required=True, help="model document (JSON)")
    sub.add_argument("--out", default="out", help="output directory (default ./out)")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--paths", type=int, default=None, help="Monte Carlo path count")
    sub.add_argument("--grid", type=int, default=None, help="grid size (validation/oracle/curves)")
    sub.add_argument("--dt", type=float, default=None, help="simulation time step")
    sub.add_argument("--tol", type=float, default=None, help="certification gain tolerance")
    sub.add_argument("--x0", type=float, default=None, help="initial state override")
    sub.add_argument("--deterministic", action="store_true", help="force the sigma == 0 mode")
    sub.add_argument("--hetero", action="store_true", help="read per-firm blocks (heterogeneous mode)")
    sub.add_argument("--q1", type=float, default=None, help="deterministic-mode atom probability")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="attrition",
                                 description="solver and simulator for two-player exit games over diffusions")
    sp = ap.add_subparsers(dest="command", required=True)

    for name, fn, extra in (
        ("validate", cmd_validate, None),
        ("solve", cmd_solve, None),
        ("equilibria", cmd_equilibria, "certify"),
        ("simulate", cmd_simulate, "simulate"),
        ("sweep", cmd_sweep, "sweep"),
    ):
        sub = sp.add_parser(name)
        _common(sub)
        sub.set_defaults(func=fn)
        if extra == "certify":
            sub.add_argument("--certify", action="store_true", help="run the chain-oracle no-deviation check")
        elif extra == "simulate":
            sub.add_argument("--profile", default="weak", choices=["weak", "strong", "mixed"])
            sub.add_argument("--bridge", action="store_true", help="Brownian-bridge crossing correction")
            sub.add_argument("--horizon", type=float, default=None)
            sub.add_argument("--per-path", action="store_true", help="dump per-path outcomes CSV")
        elif extra == "sweep":
            sub.add_argument("--param", default="l2", choices=["l1", "l2"])
            sub.add_argument("--start", type=float, required=True)
            sub.add_argument("--stop", type=float, required=True)
            sub.add_argument("--steps", type=int, default=11)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

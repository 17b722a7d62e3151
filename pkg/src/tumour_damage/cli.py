"""Command-line entry points: ``run``, ``verify``, ``sweep-tau`` and ``energy``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import constitutive as cm
from . import diagnostics as dg
from .errors import InvalidInitialData, ParseError, SchemaError, ValidationError, Violation
from .grid import contract, div_tensor, inner, laplacian, node_inner, sym_grad, zero_boundary
from .io import RunConfig, load_config, write_snapshot
from .presets import build_initial_data
from .solvers import NonConvergence
from .stepper import DAMAGE_TOL, initialize, iterate

log = logging.getLogger("tumour_damage")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _initial_state(cfg: RunConfig, params):
    data = build_initial_data(cfg.preset, cfg.grid, params)
    return initialize(data, params, cfg.grid)


def _energy_row(k, t, e: dg.EnergyBreakdown, verdict: str) -> list:
    return [k, repr(float(t)), *(repr(getattr(e, n)) for n in dg.EnergyBreakdown.ADDENDS),
            repr(e.total), repr(e.dissipation), verdict]


def simulate(cfg: RunConfig, out_dir: Path | None, check_energy: bool, write: bool = True):
    """Run a config; return per-step energies, verdicts and the final state."""
    params = cfg.effective_params()
    grid = cfg.grid
    state = _initial_state(cfg, params)
    e_prev = dg.energy(state, params, grid)
    rows = [_energy_row(0, 0.0, e_prev, "n/a")]
    failures: list[dict] = []
    if write and out_dir is not None and cfg.snapshot_stride:
        write_snapshot(state, grid, out_dir / f"snap_{0:06d}")
    prev = state
    for state, _ in iterate(state, params, grid, cfg.n_steps, cfg.treatment_fn()):
        e = dg.energy(state, params, grid, prev=prev)
        verdict = "n/a"
        if check_energy:
            v = dg.check_energy_step(e_prev, e, state.k, raise_on_fail=False)
            verdict = "pass" if v.passed else "fail"
            if not v.passed:
                failures.append(v.detail)
        dg.check_bounds(state, params)
        rows.append(_energy_row(state.k, state.t, e, verdict))
        if write and out_dir is not None and cfg.snapshot_stride and state.k % cfg.snapshot_stride == 0:
            write_snapshot(state, grid, out_dir / f"snap_{state.k:06d}")
        e_prev, prev = e, state
    if write and out_dir is not None:
        with (out_dir / "energy.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(dg.energy_columns())
            w.writerows(rows)
    return rows, failures, state


def _out_dir(cfg: RunConfig, override: str | None) -> Path:
    path = Path(override or cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_run(cfg: RunConfig, args) -> tuple[int, dict]:
    out = _out_dir(cfg, args.out)
    sources_off = cfg.effective_params() == cfg.effective_params().sources_off()
    rows, failures, state = simulate(cfg, out, check_energy=sources_off)
    summary = {"command": "run", "passed": not failures, "steps": state.k, "t": state.t,
               "output_dir": str(out), "energy_checked": sources_off, "failures": failures}
    return (EXIT_OK if not failures else EXIT_FAIL), summary


def cmd_energy(cfg: RunConfig, args) -> tuple[int, dict]:
    cfg = cfg.sources_off()
    out = _out_dir(cfg, args.out)
    rows, failures, _ = simulate(cfg, out, check_energy=True)
    # telescoped form: total_k + cumulative dissipation never exceeds total_0
    totals = np.array([float(r[-3]) for r in rows])
    cumulative = np.cumsum([float(r[-2]) for r in rows])
    excess = totals + cumulative - totals[0]
    tol = np.arange(len(rows)) * dg.energy_tolerance(totals[0]) + dg.energy_tolerance(totals[0])
    telescoped = bool(np.all(excess <= tol))
    passed = not failures and telescoped
    summary = {"command": "energy", "passed": passed, "steps": len(rows) - 1,
               "failures": failures, "telescoped": telescoped,
               "max_excess": float(excess.max()), "energy_csv": str(out / "energy.csv")}
    return (EXIT_OK if passed else EXIT_FAIL), summary


def _sampled_checks(rng: np.random.Generator, params) -> list[dg.Verdict]:
    x = rng.uniform(-3.0, 3.0, 10_000)
    y = rng.uniform(-3.0, 3.0, 10_000)
    out = []
    for name, fn in (("psi split", cm.psi), ("h split", lambda r: cm.h_split(r, params.h_star))):
        sx, sy = fn(x), fn(y)
        gap = (sx.convex_deriv + sy.concave_deriv) * (x - y) - (sx.value - sy.value)
        worst = float(gap.min())
        out.append(dg.Verdict(f"convex-concave inequality ({name})", worst >= -1e-13,
                              {"min_gap": worst}))
    tau = params.tau
    bx, by = cm.beta_tau(x, tau)[1], cm.beta_tau(y, tau)[1]
    lip = float(np.max(np.abs(bx - by) - np.abs(x - y) / tau))
    mono = float(np.min((bx - by) * (x - y)))
    out.append(dg.Verdict("Yosida Lipschitz <= 1/tau and monotone",
                          lip <= 1e-12 and mono >= 0.0, {"lip_excess": lip, "monotone_min": mono}))
    return out


def _operator_checks(cfg: RunConfig, rng: np.random.Generator) -> list[dg.Verdict]:
    grid = cfg.grid
    f, g = rng.standard_normal(grid.shape), rng.standard_normal(grid.shape)
    a, b = inner(grid, laplacian(grid, f), g), inner(grid, f, laplacian(grid, g))
    sym = abs(a - b) / max(abs(a), abs(b))
    u = zero_boundary(rng.standard_normal((2,) + grid.node_shape))
    t = rng.standard_normal((3,) + grid.shape)
    lhs = node_inner(grid, div_tensor(grid, t), u)
    rhs = -grid.cell_area * float(np.sum(contract(t, sym_grad(grid, u))))
    adj = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
    return [dg.Verdict("laplacian symmetric", sym < 1e-12, {"rel": sym}),
            dg.Verdict("div_tensor = -sym_grad^T", adj < 1e-12, {"rel": adj})]


def cmd_verify(cfg: RunConfig, args) -> tuple[int, dict]:
    params = cfg.effective_params()
    grid = cfg.grid
    verdicts: list[dg.Verdict] = []
    rng = np.random.default_rng(0)
    verdicts += _sampled_checks(rng, params)
    verdicts += _operator_checks(cfg, rng)

    state = _initial_state(cfg, params)
    sigma_ok, vel_err, el_worst, z_exc = True, 0.0, 0.0, 0.0
    prev = state
    for state, reports in iterate(state, params, grid, cfg.n_steps, cfg.treatment_fn()):
        b = dg.check_bounds(state, params, raise_on_fail=False)
        sigma_ok &= b.passed
        z_exc = max(z_exc, b.detail["C_z"])
        vel = state.v - (state.u - prev.u) / state.tau
        vel_err = max(vel_err, float(np.max(np.abs(vel))))
        el_worst = max(el_worst, reports["damage"].residual)
        prev = state
    verdicts.append(dg.Verdict("nutrient in [0, M]", sigma_ok, {"steps": state.k}))
    verdicts.append(dg.Verdict("velocity consistency", vel_err <= 1e-12 * (1.0 + 1.0 / cfg.tau),
                               {"max_err": vel_err}))
    verdicts.append(dg.Verdict("damage stationarity", el_worst <= 10 * DAMAGE_TOL,
                               {"max_residual": el_worst}))
    verdicts.append(dg.Verdict("damage range excursion (reported)", True, {"C_z": z_exc}))

    code, esum = cmd_energy(cfg, argparse.Namespace(out=args.out))
    verdicts.append(dg.Verdict("energy inequality, sources off", code == EXIT_OK,
                               {k: esum[k] for k in ("steps", "telescoped", "max_excess")}))

    mass_cfg = replace(cfg, couple_growth=False)
    mp = mass_cfg.effective_params()
    s = _initial_state(mass_cfg, mp)
    m0 = dg.modified_mass(s, grid, mp.tau)
    drift = 0.0
    for s, _ in iterate(s, mp, grid, mass_cfg.n_steps, mass_cfg.treatment_fn()):
        drift = max(drift, abs(dg.modified_mass(s, grid, mp.tau) - m0))
    verdicts.append(dg.Verdict("modified mass, growth off", drift <= 1e-10, {"drift": drift}))

    passed = all(v.passed for v in verdicts)
    report = {"command": "verify", "passed": passed,
              "invariants": [{"name": v.name, "passed": v.passed, "detail": v.detail}
                             for v in verdicts]}
    return (EXIT_OK if passed else EXIT_FAIL), report


def cmd_sweep(cfg: RunConfig, args) -> tuple[int, dict]:
    if args.levels < 1:
        raise ValidationError("levels", "levels >= 1", args.levels)
    out = _out_dir(cfg, args.out)
    params = cfg.effective_params()
    taus = [cfg.tau / 2**i for i in range(args.levels + 1)]
    table = dg.tau_refinement_study(lambda p: build_initial_data(cfg.preset, cfg.grid, p),
                                    params, cfg.grid, taus, cfg.T, cfg.study_field,
                                    cfg.treatment_fn())
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau_coarse", "tau_fine", "distance", "ratio"])
        for row in table.rows():
            w.writerow([repr(row["tau_coarse"]), repr(row["tau_fine"]), repr(row["distance"]),
                        repr(row["ratio"])])
    d = table.distances
    decreasing = all(b < a for a, b in zip(d[:-1], d[1:]))
    summary = {"command": "sweep-tau", "passed": decreasing, "field": cfg.study_field,
               "taus": list(table.taus), "distances": list(d), "ratios": list(table.ratios),
               "sweep_csv": str(out / "sweep.csv")}
    return (EXIT_OK if decreasing else EXIT_FAIL), summary


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "sweep-tau": cmd_sweep, "energy": cmd_energy}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tumour-damage",
                                     description="Tumour growth with damage: runs and checks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "simulate and write snapshots plus energy.csv"),
                       ("verify", "run the invariant suite"),
                       ("sweep-tau", "time-step halving Cauchy study"),
                       ("energy", "energy audit with every source switched off")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="key = value config file")
        p.add_argument("--out", help="output directory (default: config or $TUMOUR_DAMAGE_OUT)")
        if name == "sweep-tau":
            p.add_argument("--levels", type=int, default=3, help="number of halvings of tau")
    return parser


def _emit(summary: dict) -> None:
    print(json.dumps(summary, indent=1, default=str))


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        _emit({"command": args.command, "passed": False, "error": "IoError", "message": str(exc)})
        return EXIT_USAGE
    except (ParseError, ValidationError) as exc:
        _emit({"command": args.command, "passed": False, "error": type(exc).__name__,
               "message": str(exc), **({"line": exc.line} if isinstance(exc, ParseError)
                                      else {"field": exc.field, "constraint": exc.constraint})})
        return EXIT_USAGE
    try:
        code, summary = COMMANDS[args.command](cfg, args)
    except (Violation, NonConvergence, InvalidInitialData, SchemaError, ValidationError,
            OSError) as exc:
        detail = getattr(exc, "detail", None)
        _emit({"command": args.command, "passed": False, "error": type(exc).__name__,
               "message": str(exc), "detail": detail})
        return EXIT_FAIL
    _emit(summary)
    return code


if __name__ == "__main__":
    sys.exit(main())

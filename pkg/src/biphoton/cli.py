"""Command-line entry point: ``biphoton <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .analysis import _width_estimate, estimate_sigma_k, estimate_sigma_r, schmidt_from_widths
from .campaign import reconstruct, run_sweep, run_table1, sha256, simulate, write_manifest
from .config import bundled_path, load_scenario
from .core import beta as beta_of
from .errors import ConfigurationError, DomainError, FormatError, ModeMismatchError
from .io import (TABLE_COLUMNS, read_bpfs, read_bpgm, read_projection_csv, write_bpfs, write_bpgm, write_pgm,
                 write_projection_csv, write_rows_csv)
from .reconstruction import ProjectionKind, project
from .simulator import ImagingMode

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_MODE, EXIT_FIT = 0, 2, 3, 4, 5

ANALYZE_COLUMNS = ["source", "kind", "mode", "quantity", "value", "uncertainty", "unit", "unmasked", "converged"]

EPILOG = f"""\
exit codes: 0 ok, 2 configuration error, 3 file format error, 4 imaging-mode or
projection-kind mismatch, 5 fit did not converge (only with --strict).

CSV columns
  table1.csv          {", ".join(TABLE_COLUMNS)}
  regression.csv      scenario, lc_um, lc_source, inv_lc2_per_mm2, sigma_k_rad_per_mm,
                      sigma_k2_rad2_per_mm2
  regression_fit.csv  slope, slope_stderr, intercept_rad2_per_mm2, r_squared, n
  analyze output      {", ".join(ANALYZE_COLUMNS)}
  sweep.csv           scenario, key, value, quantity, estimate, uncertainty, unmasked, converged
"""


class NonConvergence(RuntimeError):
    pass


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _scenario(args):
    path = args.config
    if not Path(path).exists() and not Path(path).suffix:
        path = bundled_path(f"{path}.cfg")
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["scenario.seed"] = str(args.seed)
    return load_scenario(path, overrides)


def _require_out(args) -> Path:
    if not args.out:
        raise ConfigurationError("--out is required")
    return Path(args.out)


def cmd_simulate(args) -> int:
    scenario = _scenario(args)
    out = _require_out(args)
    out.parent.mkdir(parents=True, exist_ok=True)
    stack, pump = simulate(scenario, args.threads)
    write_bpfs(out, stack)
    record = {"command": "simulate", "config": str(args.config), "scenario": scenario.name, "seed": scenario.seed,
              "resolved": {k: v for k, v in scenario.values.items() if v is not None},
              "stats": dataclasses.asdict(stack.stats),
              "output": {"path": out.name, "sha256": sha256(out)}}
    if pump is not None:
        record["pump"] = {"ground_truth_lc": pump.ground_truth_lc, "farfield_lc": pump.farfield_lc}
    write_manifest(str(out) + ".json", record, args.reproducible)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    out = _require_out(args)
    stack = read_bpfs(args.stack, mmap=True)
    gamma = reconstruct(stack, args.reproducible)
    write_bpgm(out, gamma, clipped=args.clipped)
    return EXIT_OK


def cmd_project(args) -> int:
    out = _require_out(args)
    gamma = read_bpgm(args.gamma)
    proj = project(gamma, ProjectionKind(args.kind.upper()), include_diagonal=args.include_diagonal)
    write_projection_csv(out, proj)
    if args.pgm:
        write_pgm(args.pgm, proj.values, lo=0.0)
    return EXIT_OK


_UNITS = {"sigma_k": ("rad/mm", 1e-3), "sigma_r": ("um", 1e6), "k_minus_width": ("rad/mm", 1e-3),
          "r_plus_width": ("um", 1e6)}


def cmd_analyze(args) -> int:
    projs = [(p, read_projection_csv(p)) for p in args.projections]
    by_mode = {}
    for path, p in projs:
        if p.kind not in (ProjectionKind.SUM, ProjectionKind.MINUS):
            raise ModeMismatchError(f"{path}: {p.kind.value} projections carry no width to analyze")
        by_mode.setdefault((p.mode, p.kind), (path, p))
    b = args.beta if args.beta is not None else beta_of(args.alpha)
    fit_kw = dict(mask_center=not args.no_mask_center, pixel_correction=not args.no_pixel_correction)
    rows, found = [], {}
    for path, p in projs:
        other = ProjectionKind.MINUS if p.kind is ProjectionKind.SUM else ProjectionKind.SUM
        partner = by_mode.get((p.mode, other), (None, None))[1]
        if p.mode is ImagingMode.MOMENTUM:
            quantity = "sigma_k" if p.kind is ProjectionKind.SUM else "k_minus_width"
        else:
            quantity = "r_plus_width" if p.kind is ProjectionKind.SUM else "sigma_r"
        if quantity == "sigma_k":
            est = estimate_sigma_k(p, partner, **fit_kw)
        elif quantity == "sigma_r":
            est = estimate_sigma_r(p, b, partner, **fit_kw)
        else:
            est = _width_estimate(p, partner, fit_kw["mask_center"], fit_kw["pixel_correction"])
        unit, scale = _UNITS[quantity]
        rows.append({"source": Path(path).name, "kind": p.kind.value, "mode": p.mode.name.lower(),
                     "quantity": quantity, "value": est.value * scale, "uncertainty": est.uncertainty * scale,
                     "unit": unit, "unmasked": est.unmasked * scale, "converged": int(est.converged)})
        found[quantity] = est
    if "sigma_k" in found and "sigma_r" in found and found["sigma_k"].converged and found["sigma_r"].converged:
        ek, er = found["sigma_k"], found["sigma_r"]
        K = schmidt_from_widths(er.value, ek.value, er.uncertainty, ek.uncertainty)
        rows.append({"source": "", "kind": "", "mode": "", "quantity": "K", "value": K.k_value,
                     "uncertainty": K.k_uncertainty, "unit": "", "unmasked": math.nan, "converged": 1})
    if args.out:
        write_rows_csv(args.out, rows, ANALYZE_COLUMNS)
    else:
        writer_rows = [ANALYZE_COLUMNS] + [[str(r[c]) for c in ANALYZE_COLUMNS] for r in rows]
        for r in writer_rows:
            print(",".join(r))
    if args.strict and not all(r["converged"] for r in rows):
        raise NonConvergence("a width fit did not converge")
    return EXIT_OK


def _strict_check(args, report) -> None:
    if args.strict:
        bad = [n for n, r in report.results.items() if not r.analysis.estimate.converged]
        if bad:
            raise NonConvergence(f"fits did not converge for {', '.join(bad)}")


def cmd_table1(args) -> int:
    out = _require_out(args)
    base = None
    if args.config:
        base = load_scenario(args.config, _overrides(args.set))
    elif args.set:
        base = load_scenario(bundled_path("table1.cfg"), _overrides(args.set))
    report = run_table1(out, base, workers=args.threads, reproducible=args.reproducible, frames=args.frames,
                        seed=args.seed)
    for row in report.rows:
        print(", ".join(f"{c}={row[c]:.4g}" if isinstance(row[c], float) else f"{c}={row[c]}" for c in TABLE_COLUMNS))
    for check in report.manifest["theory_vs_published"]:
        if check["discrepancy"]:
            print(f"note: K_theory at lc={check['lc'] * 1e6:g} um is {check['computed']:.1f}, "
                  f"published {check['published']:g} (documented discrepancy)")
    reg = report.regression
    print(f"regression: slope={reg.slope:.4f} +/- {reg.slope_stderr:.4f}, r2={reg.r_squared:.4f}")
    _strict_check(args, report)
    return EXIT_OK


def cmd_sweep(args) -> int:
    out = _require_out(args)
    base = _scenario(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    report = run_sweep(base, args.key, values, out, workers=args.threads, reproducible=args.reproducible)
    for row in report.rows:
        print(f"{row['scenario']}: {args.key}={row['value']} -> {row['quantity']}={row['estimate']:.6g}")
    if report.regression is not None:
        print(f"regression: slope={report.regression.slope:.4f}, r2={report.regression.r_squared:.4f}")
    _strict_check(args, report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override scenario.seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads (pump ensembles, campaign scenarios)")
    common.add_argument("--reproducible", action="store_true",
                        help="require exact accumulation and omit host/timing details from manifests")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--strict", action="store_true", help="exit 5 when a width fit does not converge")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="biphoton", parents=[common], epilog=EPILOG,
                                     formatter_class=argparse.RawDescriptionHelpFormatter,
                                     description="Simulate, reconstruct and analyze biphoton joint distributions.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_, epilog=EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=fn)
        return p

    p = add("simulate", cmd_simulate, "render a frame stack (BPFS) from a scenario config")
    p.add_argument("config", help="config file, or the name of a bundled scenario")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    p = add("reconstruct", cmd_reconstruct, "accumulate Gamma (BPGM) from a frame stack")
    p.add_argument("stack")
    p.add_argument("--clipped", action="store_true", help="store the non-negative clipped matrix")

    p = add("project", cmd_project, "project Gamma to SUM, MINUS, XPLUS or XMINUS (CSV)")
    p.add_argument("gamma")
    p.add_argument("--kind", required=True, type=str.upper, choices=[k.value for k in ProjectionKind])
    p.add_argument("--pgm", default=None, help="also write a 16-bit PGM image")
    p.add_argument("--include-diagonal", action="store_true")

    p = add("analyze", cmd_analyze, "fit widths on projection CSVs (SUM/MINUS pairs share acceptance)")
    p.add_argument("projections", nargs="+")
    p.add_argument("--beta", type=float, default=None, help="explicit beta for sigma_r (default from --alpha)")
    p.add_argument("--alpha", type=float, default=0.455)
    p.add_argument("--no-pixel-correction", action="store_true")
    p.add_argument("--no-mask-center", action="store_true")

    p = add("table1", cmd_table1, "run the coherent + three-diffuser campaign")
    p.add_argument("--config", default=None, help="base scenario (default: bundled table1.cfg)")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")

    p = add("sweep", cmd_sweep, "repeat a scenario over values of one key")
    p.add_argument("config")
    p.add_argument("--key", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as exc:
        print(f"format error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_FORMAT
    except ModeMismatchError as exc:
        print(f"mode mismatch: {exc}", file=sys.stderr)
        return EXIT_MODE
    except NonConvergence as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())

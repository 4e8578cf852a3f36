"""Command-line front end.

Verbs: ``solve``, ``bounds``, ``sample``, ``verify``, ``sweep``, ``report``.
Exit codes: 0 success, 1 computation error or failed check, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

from . import fem
from . import minorant as mn
from .mesh import MeshError
from .problem import ScenarioError
from .report import (BoundsReport, compute_bounds, from_json, sample_radius, scenario_echo,
                     sweep, verify_suite)
from .scenario_file import (UsageError, apply_overrides, build_scenario, check_keys, load_scenario,
                            parse_text)

logger = logging.getLogger(__name__)

VERBS = ("solve", "bounds", "sample", "verify", "sweep", "report")
CSV_COLUMNS = ("delta", "lower_norm", "upper_norm", "empirical_norm", "ratio")


def fmt(x) -> str:
    """9 significant digits for every printed float."""
    x = from_json(x)
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uncertain-radius",
                                description="Two-sided bounds on the solution-set radius.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("path", help="scenario file, or a JSON report for 'report'")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=50, help="random oracle samples")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--param", default="delta", help="sweep parameter")
    p.add_argument("--values", help="comma-separated sweep values")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _write(out: Path | None, name: str, text: str):
    if out is None:
        sys.stdout.write(text)
        return None
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return str(path)


def _mean_lines(data: dict) -> list[str]:
    mean = data["mean"]
    return [f"{k}: {fmt(mean[k])}" for k in ("energy_norm", "energy_sq", "delta_norm_sq", "h")]


def _summary(data: dict) -> list[str]:
    """Human-readable lines for any JSON report written by this tool."""
    lines = _mean_lines(data)
    if "constants" in data:
        c = data["constants"]
        lines += [f"c_upper: {fmt(c['c_upper'])}", f"c_lower: {fmt(c['c_lower'])}",
                  f"theta: {fmt(c['theta'])}", "sigma: " + " ".join(fmt(x) for x in c["sigma"])]
    for section, keys in (("lower", ("analytic", "optimized", "normalized")),
                          ("upper", ("value", "normalized"))):
        if section in data:
            lines += [f"{section}.{k}: {fmt(data[section][k])}" for k in keys]
    if data.get("majorant"):
        lines.append(f"majorant.total: {fmt(data['majorant']['total'])}")
    if data.get("oracle"):
        o = data["oracle"]
        lines += [f"oracle.samples: {o['samples']}", f"oracle.empirical: {fmt(o['empirical'])}",
                  f"oracle.empirical_normalized: {fmt(o['empirical_normalized'])}",
                  f"oracle.worst_id: {o['worst_id']}", f"oracle.slack: {fmt(o['slack'])}"]
    if "ordering" in data:
        r = data["ordering"]
        lines.append(f"ordering.ratio: {fmt(from_json(r['ratio']))} "
                     f"{'PASS' if r['pass'] else 'FAIL'}")
    return lines


def _bounds(s, args, out: Path | None, with_oracle: bool) -> BoundsReport:
    opts = mn.MinorantOptions(seed=args.seed, threads=args.threads)
    rep = compute_bounds(s, minorant_opts=opts)
    if with_oracle:
        rep.data["oracle"] = sample_radius(s, args.samples, args.seed, args.threads, u0=rep.u0)
    if out is not None:
        rep.data["majorant"]["flux_file"] = _write(out, "flux.txt", fem.dump_flux(rep.flux))
        _write(out, "u0.field", fem.dump_field(rep.u0))
        _write(out, "witness.field", fem.dump_field(rep.witness))
    return rep


def _sweep_builder(path: Path, overrides, param: str):
    base_cfg = apply_overrides(parse_text(path.read_text()), overrides)

    def build(value):
        return build_scenario(apply_overrides(base_cfg, [f"{param}={value!r}"]), path.parent)
    return build


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if args.out else None
    path = Path(args.path)
    try:
        if args.samples < 0 or args.threads < 1:
            raise UsageError("--samples must be >= 0 and --threads >= 1")
        for item in args.overrides:
            if "=" not in item:
                raise UsageError(f"override '{item}' is not of the form key=value")
        check_keys(item.split("=", 1)[0].strip() for item in args.overrides)
        if not path.exists():
            raise FileNotFoundError(f"no such file: {path}")

        if args.verb == "report":
            data = json.loads(path.read_text())
            print("\n".join(_summary(data)))
            return 0

        if args.verb == "sweep":
            if not args.values:
                raise UsageError("sweep needs --values a,b,c")
            check_keys([args.param])
            try:
                values = [float(v) for v in args.values.split(",")]
            except ValueError as exc:
                raise UsageError(f"--values: {exc}") from exc
            rows = sweep(values, _sweep_builder(path, args.overrides, args.param),
                         args.samples, args.seed, args.threads)
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in rows:
                writer.writerow([fmt(row[c]) for c in CSV_COLUMNS])
            _write(out, "sweep.csv", buf.getvalue())
            return 0

        s = load_scenario(path, args.overrides)

        if args.verb == "solve":
            u0 = fem.solve_scenario(s)
            e0 = fem.bilinear(s.mean, u0, u0)
            data = {"scenario": scenario_echo(s),
                    "mean": {"energy_norm": math.sqrt(e0), "energy_sq": e0,
                             "delta_norm_sq": fem.delta_norm(s, u0), "h": s.mesh.h}}
            if out is not None:
                data["field_file"] = _write(out, "u0.field", fem.dump_field(u0))
                _write(out, "solution.json", json.dumps(data, indent=2) + "\n")
            print("\n".join(_mean_lines(data)))
            return 0

        if args.verb in ("bounds", "sample"):
            rep = _bounds(s, args, out, with_oracle=args.verb == "sample")
            name = "bounds.json" if args.verb == "bounds" else "report.json"
            _write(out, name, rep.to_json())
            if out is not None:
                print("\n".join(_summary(rep.data)))
            return 0

        if args.verb == "verify":
            checks = verify_suite(s, args.samples, args.seed, args.threads,
                                  mn.MinorantOptions(seed=args.seed, threads=args.threads))
            for c in checks:
                print(c.line)
            return 0 if all(c.ok for c in checks) else 1
    except (UsageError, FileNotFoundError, ScenarioError, MeshError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (fem.SolverError, fem.FEMError, ArithmeticError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return 1
    return 2


def main():
    sys.exit(run())

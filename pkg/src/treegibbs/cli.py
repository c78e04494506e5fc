"""Command-line front end.

    treegibbs chain-info CONFIG
    treegibbs bounds CONFIG
    treegibbs estimate {reconstruction,qea,overlap,bad-rate,cov-decay} CONFIG
    treegibbs verify

A config is a JSON file with a ``model`` section (ModelSpec fields) and a
``run`` section (depths, N, seed, L, spacing, output, workers, ...).  Flags
override config keys.  Exit codes: 0 success, 2 config error, 3 resource
guard, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .boundary_law import HomotopyError, central_kernel, chain_from_law, free_law, solve_central
from .model import ModelError, ModelSpec, bounds_report, eigen_report
from .tree import BallGeometry, GeometryError, GuardExceeded, branch_plan, default_spacing

log = logging.getLogger("treegibbs")

SCHEMA = "treegibbs.report/1"
OUTPUT_ENV = "TREEGIBBS_OUTPUT_DIR"

EXIT_OK, EXIT_CONFIG, EXIT_GUARD, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def build_id():
    """Version plus a digest of the installed sources."""
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


# ---------------------------------------------------------------------------
# config handling

RUN_DEFAULTS = {
    "depths": [8],
    "N": 2000,
    "seed": None,
    "L": 6,
    "L_values": None,
    "spacing": "default",
    "plan_m": None,
    "spin": 0,
    "distances": [2, 4, 8, 16],
    "workers": 1,
    "output": None,
}


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    if not isinstance(data, dict) or "model" not in data:
        raise ConfigError("config needs a 'model' section")
    return data


def _override(cfg, args):
    run = dict(RUN_DEFAULTS)
    run.update(cfg.get("run", {}))
    unknown = set(run) - set(RUN_DEFAULTS) - {"command", "estimator"}
    if unknown:
        raise ConfigError(f"unknown run keys: {sorted(unknown)}")
    for key in ("N", "seed", "L", "spin", "workers", "output", "plan_m"):
        val = getattr(args, key, None)
        if val is not None:
            run[key] = val
    for key in ("depths", "distances", "L_values"):
        val = getattr(args, key, None)
        if val is not None:
            run[key] = [int(x) for x in val.split(",")]
    model = dict(cfg["model"])
    for key in ("beta", "q", "d"):
        val = getattr(args, key, None)
        if val is not None:
            model[key] = val
    return {"model": model, "run": run}


def _spec(cfg):
    try:
        return ModelSpec.from_dict(cfg["model"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad model section: {exc}") from None


def _spacing(run):
    s = run["spacing"]
    if s == "default":
        return default_spacing
    if isinstance(s, list) and all(isinstance(x, int) and x > 0 for x in s):
        return s
    raise ConfigError("spacing must be 'default' or a list of positive integers")


def _output_path(run, name):
    out = run.get("output")
    base = os.environ.get(OUTPUT_ENV)
    if out is None and base is None:
        return None
    if out is None:
        out = f"{name}.jsonl"
    p = Path(out)
    if base is not None and not p.is_absolute():
        p = Path(base) / p
    return p


# runtime knobs that cannot change results stay out of the echoed config,
# so records are byte-identical across worker counts and output locations
NON_ECHOED = ("workers", "output")


def _record(cfg, payload):
    echo = {"model": cfg["model"], "run": {k: v for k, v in cfg["run"].items() if k not in NON_ECHOED}}
    return {"schema": SCHEMA, "build": build_id(), "config": echo, **payload}


def _dump(obj):
    return json.dumps(obj, sort_keys=True, allow_nan=False, default=_default)


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serialisable: {type(o)}")


def _emit(lines, path, stdout):
    text = "".join(_dump(r) + "\n" for r in lines)
    if path is None:
        stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        log.info("wrote %s", path)


def _write_csv(path, rows):
    rows = list(rows)
    if not rows:
        return
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# commands


def cmd_chain_info(cfg, stdout=sys.stdout):
    spec = _spec(cfg)
    if spec.clock_flag and not spec.has_field:
        law = free_law(spec)
        kind = "free"
    else:
        law = solve_central(spec)
        kind = "central"
    kern = chain_from_law(spec, law)
    payload = {
        "command": "chain-info",
        "state": kind,
        "boundary_law": law.law.tolist(),
        "residual": law.residual,
        "chain": kern.to_dict(),
        "bounds": bounds_report(spec, kern.p1).to_dict(),
    }
    run = cfg["run"]
    _emit([_record(cfg, payload)], _output_path(run, "chain-info") if run.get("output") else None, stdout)
    return EXIT_OK


def cmd_bounds(cfg, stdout=sys.stdout):
    spec = _spec(cfg)
    kern = central_kernel(spec)
    payload = {"command": "bounds", "bounds": bounds_report(spec, kern.p1).to_dict()}
    if spec.clock_flag:
        payload["eigen"] = eigen_report(spec).to_dict()
    _emit([_record(cfg, payload)], None, stdout)
    return EXIT_OK


ESTIMATORS = ("reconstruction", "qea", "overlap", "bad-rate", "cov-decay")


def cmd_estimate(cfg, kind, stdout=sys.stdout):
    from . import estimators as est

    spec = _spec(cfg)
    run = cfg["run"]
    if run["seed"] is None:
        raise ConfigError("a seed is mandatory (run.seed or --seed)")
    seed, N, workers = int(run["seed"]), int(run["N"]), int(run["workers"])
    depths = [int(n) for n in run["depths"]]
    if any(b <= a for a, b in zip(depths, depths[1:])):
        raise ConfigError("depths must be strictly increasing")
    kernel = central_kernel(spec)
    records, csv_rows = [], []
    if kind in ("reconstruction", "qea"):
        prev = None
        for n in depths:
            if kind == "qea":
                r = est.estimate_qea(spec, n, N, seed, kernel, workers)
            else:
                r = est.estimate_reconstruction(spec, int(run["spin"]), n, N, seed, kernel, workers)
            row = r.to_dict()
            if prev is not None:
                row["delta"] = r.estimate - prev.estimate
                row["delta_se"] = float(np.hypot(r.stderr, prev.stderr))
            prev = r
            records.append({"estimator": kind, "n": n, "report": row})
            csv_rows.append({"n": n, "estimate": r.estimate, "stderr": r.stderr})
    elif kind == "overlap":
        for n in depths:
            plan = _plan(spec, run, n)
            s = est.estimate_overlap(spec, plan, n, N, seed, kernel, workers)
            records.append({"estimator": kind, "n": n, "report": s.to_dict()})
            csv_rows.extend({"n": n, **row} for row in s.rows())
    elif kind == "bad-rate":
        r = est.estimate_bad_rate(spec, int(run["L"]), N, seed, kernel, run["L_values"], workers=workers)
        records.append({"estimator": kind, "n": None, "L": r.L, "report": r.to_dict()})
        csv_rows = r.extras["L_series"]
    elif kind == "cov-decay":
        c = est.estimate_cov_decay(spec, run["distances"], int(run["L"]), N, seed, kernel, workers)
        records.append({"estimator": kind, "n": None, "L": c.L, "report": c.to_dict()})
        csv_rows = list(c.rows())
    else:
        raise ConfigError(f"unknown estimator {kind}")
    path = _output_path(run, kind)
    _emit([_record(cfg, r) for r in records], path, stdout)
    if path is not None:
        _write_csv(path.with_suffix(".csv"), csv_rows)
    return EXIT_OK


def _plan(spec, run, n):
    r = _spacing(run)
    geom = BallGeometry(spec.d, n)
    from .estimators import default_plan

    if run.get("plan_m"):
        return branch_plan(r, int(run["plan_m"]), geom)
    plan = default_plan(spec.d, n, r=r)
    if plan is None:
        raise ConfigError(f"no branch plan fits depth {n}")
    return plan


def cmd_verify(cfg=None, stdout=sys.stdout, quick=False):
    from . import oracle

    results = oracle.verify_all(quick=quick)
    failed = 0
    for r in results:
        stdout.write(r.line() + "\n")
        failed += not r.passed
    stdout.write(f"{len(results) - failed}/{len(results)} cases passed\n")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="treegibbs", description="Gibbs states of spin models on Cayley trees")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="JSON config file")
        sp.add_argument("--beta", type=float)
        sp.add_argument("--q", type=int)
        sp.add_argument("--d", type=int)
        sp.add_argument("--output", help="output file (relative paths resolve under $%s)" % OUTPUT_ENV)

    common(sub.add_parser("chain-info", help="boundary law, chain kernel and constants"))
    common(sub.add_parser("bounds", help="closed-form constants and eigenvalue bounds"))
    e = sub.add_parser("estimate", help="Monte Carlo estimators")
    e.add_argument("estimator", choices=ESTIMATORS)
    common(e)
    e.add_argument("--seed", type=int)
    e.add_argument("--N", type=int)
    e.add_argument("--depths", help="comma-separated depths")
    e.add_argument("--L", type=int)
    e.add_argument("--L-values", dest="L_values", help="comma-separated truncations")
    e.add_argument("--distances", help="comma-separated distances")
    e.add_argument("--spin", type=int)
    e.add_argument("--plan-m", dest="plan_m", type=int)
    e.add_argument("--workers", type=int)
    v = sub.add_parser("verify", help="oracle verification matrix")
    v.add_argument("config", nargs="?")
    v.add_argument("--quick", action="store_true", help="smaller random matrix")
    return p


def main(argv=None, stdout=None):
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            return cmd_verify(stdout=stdout, quick=args.quick)
        cfg = _override(load_config(args.config), args)
        if args.command == "chain-info":
            return cmd_chain_info(cfg, stdout)
        if args.command == "bounds":
            return cmd_bounds(cfg, stdout)
        return cmd_estimate(cfg, args.estimator, stdout)
    except GuardExceeded as exc:
        print(f"error: resource guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (HomotopyError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ModelError, GeometryError, ValueError, KeyError, TypeError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

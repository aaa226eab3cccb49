"""``glfield`` command line."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__


def _floats(s: str):
    return [float(v) for v in s.replace(",", " ").split()]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glfield", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--seed", type=int, default=None,
                   help="overrides the config seed (default 0 for curve commands)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("theta0", help="de Gennes constant with its convergence table")
    t.add_argument("--h", type=_floats, default=None, help="spacings, e.g. '4e-3 2e-3 1e-3'")
    t.add_argument("--T", type=float, default=None)

    g = sub.add_parser("gcurve", help="bulk energy g(b)")
    g.add_argument("--b-list", type=_floats, default=[0, .25, .5, .75, 1, 1.2, 1.5])
    g.add_argument("--r-list", type=_floats, default=[8, 12, 16])
    g.add_argument("--h", type=float, default=0.125)
    g.add_argument("--restarts", type=int, default=3)
    g.add_argument("--out", default="g_curve.csv")

    e = sub.add_parser("esurf", help="surface energy E_surf(b)")
    e.add_argument("--b-list", type=_floats, default=None)
    e.add_argument("--R-list", type=_floats, default=[8, 12, 16])
    e.add_argument("--h", type=float, default=0.05)
    e.add_argument("--restarts", type=int, default=3)
    e.add_argument("--out", default="esurf.csv")

    s = sub.add_parser("solve", help="minimize the GL energy for the sweep in a run config")
    s.add_argument("--config", required=True)

    d = sub.add_parser("diagnose", help="evaluate probes on a state dump")
    d.add_argument("--state", required=True)
    d.add_argument("--config", required=True)
    d.add_argument("--out", default="report.json")

    r = sub.add_parser("run", help="run every job of a config")
    r.add_argument("config")

    x = sub.add_parser("export", help="export |psi|^2 from a state dump")
    x.add_argument("--state", required=True)
    x.add_argument("--format", choices=["csv", "bin"], default="csv")
    x.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except Exception as err:  # exit code carries the failure
        print(f"glfield: error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    out_dir = Path(args.out_dir) if args.out_dir else Path(".")
    if args.cmd == "theta0":
        from .degennes import theta0
        kw = {}
        if args.h:
            kw["hs"] = tuple(args.h)
        if args.T:
            kw["T"] = args.T
        print(json.dumps(theta0(**kw).to_dict(), indent=2))
        return 0
    if args.cmd == "gcurve":
        from .bulk_cell import g_curve
        c = g_curve(tuple(args.b_list), tuple(int(r) if r == int(r) else r for r in args.r_list),
                    h=args.h, restarts=args.restarts, seed=args.seed or 0)
        c.to_csv(out_dir / args.out)
        for v in c.violations:
            print(f"property failure: {v}", file=sys.stderr)
        return 0 if not c.violations else 1
    if args.cmd == "esurf":
        from .reference import THETA0
        from .surface_strip import esurf_curve
        bl = args.b_list or [1.0, 1.2, 1.4, 1.0 / THETA0]
        c = esurf_curve(bl, THETA0, R_grid=tuple(args.R_list), h=args.h,
                        restarts=args.restarts, seed=args.seed or 0)
        c.to_csv(out_dir / args.out)
        return 0 if c.is_monotone() else 1
    if args.cmd in ("run", "solve"):
        from .pipeline import load_config, run
        path = args.config
        if args.cmd == "solve":
            cfg = load_config(path)
            cfg["jobs"] = ["solve"]
            path = cfg
        m = run(path, out_dir=args.out_dir, workers=args.workers, seed=args.seed)
        for jid, rec in m["jobs"].items():
            print(f"{jid}: {rec['status']}")
        return 0 if m["success"] else 1
    if args.cmd == "diagnose":
        from .pipeline import run_diagnose
        from .persistence import load_state
        header, _, _ = load_state(args.state)
        params = dict(header["meta"]["job"])
        with open(args.config) as fh:
            params["diagnostics"] = json.load(fh)
        params["state_path"] = str(args.state)
        tmp = Path(args.out).resolve().parent
        _, ok = run_diagnose(params, tmp, {})
        produced = tmp / "report.json"
        if produced != Path(args.out).resolve():
            produced.replace(args.out)
        return 0 if ok else 1
    if args.cmd == "export":
        from .persistence import export_density
        n = export_density(args.state, args.format, args.out)
        print(f"{n} rows")
        return 0
    return 2

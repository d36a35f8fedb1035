"""Command line interface: ``vrlab run|identities|scan|report``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config, parse_config

log = logging.getLogger("vrlab")


def data_root() -> Path:
    return Path(os.environ.get("VRL_DATA_DIR", "vrl_runs"))


def _threads(n: int | None) -> None:
    if n:
        import numba

        avail = numba.config.NUMBA_NUM_THREADS
        if n > avail:
            log.warning("--threads %d exceeds the %d available; using %d", n, avail, avail)
        numba.set_num_threads(max(1, min(n, avail)))


def _history_config(history_dir: Path, cfg_arg: str | None):
    if cfg_arg:
        return load_config(cfg_arg)
    echo = history_dir.parent / "scenario.cfg"
    if echo.exists():
        return parse_config(echo.read_text(), str(echo))
    return None


def cmd_run(args) -> int:
    from .pipeline import emit_report, run_scenario

    cfg = load_config(args.config)
    out = Path(args.out) if args.out else data_root() / cfg.name
    res = run_scenario(cfg, out, seed=args.seed, tolerance_scale=args.tolerance_scale,
                       progress=lambda m: log.info(m))
    sys.stdout.write(emit_report(out))
    return 0 if res.passed else 1


def cmd_identities(args) -> int:
    from .identities import check_radiation_identities, write_identities_csv
    from .pipeline import identity_suite
    from .solver import SourceHistory

    hdir = Path(args.history)
    history = SourceHistory.load(hdir)
    cfg = _history_config(hdir, args.config)
    if cfg is not None:
        seed = args.seed
        summary = hdir.parent / "summary.json"
        if seed is None and summary.exists():
            seed = json.loads(summary.read_text()).get("seed")
        results = identity_suite(cfg, history, args.tolerance_scale, seed)
    else:
        from .identities import check_vp_identities

        t = float(history.times[history.n_frames // 2])
        xis = [(1.0, 0, 0), (0, 1.0, 0), (0, 0, 1.0), (0.0, 0.6, 0.8)]
        results = (check_vp_identities(history, t, xis) if history.mode == "gravity"
                   else check_radiation_identities(history, (0.0, 0.6, 0.8), t, 1e3, 16.0))
    out = Path(args.out) if args.out else hdir.parent / "identities.csv"
    write_identities_csv(results, out)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:<32} rel={r.rel_residual:.3e} tol={r.tolerance:.1e}")
    return 0 if all(r.passed for r in results) else 1


def cmd_scan(args) -> int:
    from .pipeline import scan_history
    from .solver import SourceHistory

    hdir = Path(args.history)
    history = SourceHistory.load(hdir)
    cfg = load_config(args.config)
    rep = scan_history(cfg, history)
    out = Path(args.out) if args.out else hdir.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.to_json())
    (out / "report.csv").write_text(rep.to_csv())
    sys.stdout.write(rep.to_csv())
    for f in rep.fits:
        if "exponent" in f:
            print(f"{f['name']}: {f['exponent']:+.3f} ± {f['half_width']:.3f}")
        else:
            print(f"{f['name']}: {f.get('flag', '')}")
    return 0


def cmd_report(args) -> int:
    from .pipeline import emit_report

    sys.stdout.write(emit_report(args.directory))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--threads", type=int, default=None, help="number of worker threads")
    common.add_argument("--tolerance-scale", type=float, default=1.0,
                        help="multiply every check tolerance by this factor")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="vrlab", description="Kinetic radiation laboratory.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="evolve a scenario and write all artifacts")
    r.add_argument("config", help="config file or bundled scenario name")
    r.add_argument("--out", help="output directory (default $VRL_DATA_DIR/<scenario>)")
    r.set_defaults(func=cmd_run)
    i = sub.add_parser("identities", parents=[common], help="run the identity suite on a saved history")
    i.add_argument("history")
    i.add_argument("--config", help="scenario for times and directions (default: echo next to the history)")
    i.add_argument("--out", help="CSV path (default: identities.csv next to the history)")
    i.set_defaults(func=cmd_identities)
    s = sub.add_parser("scan", parents=[common], help="order scan of a saved history")
    s.add_argument("history")
    s.add_argument("config")
    s.add_argument("--out", help="output directory (default: next to the history)")
    s.set_defaults(func=cmd_scan)
    rp = sub.add_parser("report", parents=[common], help="print the summary of a run directory")
    rp.add_argument("directory")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    _threads(args.threads)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``run``, ``sweep``, ``certify`` and ``check``.

Exit status is 0 when every bound holds, 2 on a bound violation and 1 on
any error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import SensDecayError
from . import io
from .config import load_config
from ..cost import build_chain_cost
from ..topology import build_graph
from .experiment import certify, evaluate, run_experiment, sweep

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2

log = logging.getLogger("sensdecay")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (defaults reproduce the 25-vehicle chain run)")
    common.add_argument("--s", type=int)
    common.add_argument("--i-star", type=int, dest="i_star")
    common.add_argument("--h", type=float)
    common.add_argument("--eps", type=float)
    common.add_argument("--horizon", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key, e.g. --set model.beta=2")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sensdecay", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("run", parents=[common], help="run one experiment")
    sw = sub.add_parser("sweep", parents=[common], help="run the (s, i*) sweep")
    sw.add_argument("--workers", type=int)
    sub.add_parser("certify", parents=[common], help="print certificate and decay constants")
    ck = sub.add_parser("check", parents=[common], help="re-verify bounds on a stored trajectory")
    ck.add_argument("trajectory", help="trajectory.npz written by 'run'")
    return p


def _config(args):
    import yaml

    cfg = load_config(args.config)
    extra = {}
    for item in args.set:
        key, _, raw = item.partition("=")
        extra[key] = yaml.safe_load(raw)
    cfg = cfg.with_overrides(s=args.s, i_star=args.i_star, h=args.h, eps=args.eps,
                             horizon=args.horizon, out_dir=args.out_dir, **extra)
    return cfg.validate()


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        out = Path(cfg.output.out_dir)
        if args.verb == "run":
            res = run_experiment(cfg, out)
            s = res.summary
            print(f"N={s['N']} converged={s['converged']} slope={s['slope']} r2={s['r2']} "
                  f"max_bound_ratio={s['max_bound_ratio']:.3e} -> {out}")
            return EXIT_OK if res.all_satisfied else EXIT_VIOLATION
        if args.verb == "sweep":
            rows = sweep(cfg, out, workers=args.workers)
            for r in rows:
                print(", ".join(f"{k}={v}" for k, v in r.items()))
            if any(str(r["status"]).startswith("error") for r in rows):
                return EXIT_ERROR
            return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_VIOLATION
        if args.verb == "certify":
            dc = certify(cfg)
            summary = dc.summary()
            for k, v in summary.items():
                print(f"{k} = {v}")
            out.mkdir(parents=True, exist_ok=True)
            io.write_summary(out / "certificate.json", summary)
            return EXIT_OK
        if args.verb == "check":
            traj = io.load_trajectory(args.trajectory)
            cost = build_chain_cost(cfg.model.s, cfg.model.gamma, cfg.model.delta)
            if traj.node_count != cfg.model.s:
                raise SensDecayError(f"trajectory has {traj.node_count} nodes, config says s={cfg.model.s}")
            dc = certify(cfg, cost)
            records, lem1, *_ = evaluate(cfg, cost, build_graph(cost), dc, traj)
            bad = [r for r in records + [lem1] if r.satisfied is False]
            for r in records + [lem1]:
                print(f"{r.kind:5s} {','.join(map(str, r.target)):>12s} dist={r.dist} "
                      f"measured={r.measured:.6e} bound={r.bound:.6e} {r.status}")
            return EXIT_VIOLATION if bad else EXIT_OK
    except (SensDecayError, OSError, ValueError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

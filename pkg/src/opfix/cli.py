"""``opfix`` command line: simulate, bounds, audit.

Exit codes: 0 success, 1 configuration error, 2 a scientific check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import bounds as B
from .config import ConfigError, Experiment, load_config
from .engine import BACKEND
from .montecarlo import (
    AUDIT_SLACK,
    closure_audit,
    family_audit,
    markov_comparison,
    block_params,
    run_ensemble,
    standard_curves,
)

EXIT_OK, EXIT_CONFIG, EXIT_SCIENCE = 0, 1, 2

TRAJ_COLUMNS = ("trial", "ell", "block", "dist", "fpr_summand", "cum_fpr", "beta", "mask", "sigma")


def fmt(x) -> str:
    return B.fmt(x)


def _curves(exp: Experiment, only=None):
    props = exp.propositions
    if only:
        bad = [o for o in only if o not in B.PROPOSITIONS]
        if bad:
            raise ConfigError(f"unknown curve {bad[0]!r}; choose from {', '.join(B.PROPOSITIONS)}")
        props = tuple(only)
    return standard_curves(
        exp.iteration, deltas=exp.deltas, propositions=props, eps=exp.eps, which=exp.which_sigma
    )


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)


def trajectories_csv(ens, num_trials: int, stride: int) -> str:
    """Rows for the first ``num_trials`` trials at every ``stride``-th iteration and the last."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJ_COLUMNS)
    m = min(num_trials, ens.num_trials)
    L = ens.horizon
    n = ens.dist.shape[2]
    ells = sorted(set(range(0, L + 1, stride)) | {L})
    summ = ens.fpr_summand[:m]
    cum = ens.cum_fpr[:m]
    beta = ens.beta[:m]
    sigma = ens.sigma_max
    for t in range(m):
        for ell in ells:
            for i in range(n):
                step = ell < L
                w.writerow([
                    t,
                    ell,
                    i,
                    fmt(ens.dist[t, ell, i]),
                    fmt(summ[t, ell, i]) if step else "",
                    fmt(cum[t, ell, i]) if step else "",
                    int(beta[t, ell, i]),
                    int(ens.mask[t, ell, i]) if step else "",
                    fmt(sigma[t, ell, i]) if (step and sigma is not None) else "",
                ])
    return buf.getvalue()


def _markov_table(exp: Experiment) -> list:
    it = exp.iteration
    if it.online or it.base.cls != "contractive":
        return []
    out = []
    ell = np.arange(it.horizon + 1)
    for i in range(it.base.partition.n):
        prm = block_params(it, i)
        for dl in exp.deltas:
            cmp = markov_comparison(prm, dl, ell)
            out.append({"block": i, "delta": dl, "hp_below_markov_from": cmp["hp_below_from"],
                        "hp_at_horizon": float(cmp["hp"][-1]),
                        "markov_at_horizon": float(cmp["markov"][-1])})
    return out


def cmd_simulate(args) -> int:
    exp = load_config(args.config, _overrides(args))
    out = Path(args.out or exp.directory)
    if exp.trials < 100:
        raise ConfigError(f"{args.config}: the coverage harness needs at least 100 trials")
    curves = _curves(exp, args.only)
    report = run_ensemble(exp.iteration, exp.trials, exp.base_seed, curves, workers=args.workers or exp.workers)
    report.metadata.update({
        "opfix_version": __version__,
        "config": str(args.config),
        "markov_comparison": _markov_table(exp),
    })
    stride = exp.iteration.effective_stride
    _write(out / "trajectories.csv", trajectories_csv(report.ensemble, exp.trajectory_trials, stride))
    _write(out / "report.json", report.to_json())
    _write(out / "bounds.csv", B.curves_to_csv(curves))
    clamps = int(report.ensemble.clamp_count.sum())
    failed = [r for r in report.coverage if not r.passed]
    for r in report.coverage:
        tag = "PASS" if r.passed else "FAIL"
        extra = f" which_sigma={r.meta['which_sigma']}" if "which_sigma" in r.meta else ""
        extra += f" eps={r.meta['eps']}" if "eps" in r.meta else ""
        print(f"[{tag}] {r.proposition} block={r.block} delta={r.delta}{extra} margin={r.margin:.4g}")
    if clamps:
        print(f"note: {clamps} noisy iterates were clamped back onto the domain")
    print(f"wrote {out}/trajectories.csv, report.json, bounds.csv")
    return EXIT_SCIENCE if failed else EXIT_OK


def cmd_bounds(args) -> int:
    exp = load_config(args.config, _overrides(args))
    out = Path(args.out or exp.directory)
    only = list(args.only or [])
    if "eta" in only:
        only.remove("eta")
        it = exp.iteration
        if it.base.cls != "contractive":
            raise ConfigError(f"{args.config}: eta needs a contractive operator")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ell", "block", "eta"])
        for i, p in enumerate(it.update.probabilities):
            values = B.eta_curve(it.base.constant, p, np.arange(it.horizon + 1))
            for ell, v in enumerate(values):
                w.writerow([ell, i, fmt(v)])
        _write(out / "eta.csv", buf.getvalue())
        print(f"wrote {out}/eta.csv")
        if not only:
            return EXIT_OK
    curves = _curves(exp, only or None)
    _write(out / "bounds.csv", B.curves_to_csv(curves))
    print(f"wrote {len(curves)} curves to {out}/bounds.csv")
    return EXIT_OK


def cmd_audit(args) -> int:
    if args.samples < 10**4:
        raise ConfigError("audit needs at least 1e4 samples")
    records = family_audit(args.samples, seed=args.seed) + closure_audit(args.samples, seed=args.seed)
    payload = {"slack": AUDIT_SLACK, "samples": args.samples, "seed": args.seed,
               "records": [r.to_dict() for r in records]}
    payload["passed"] = all(r.passed for r in records)
    for r in records:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: max_ratio={r.max_ratio:.4f} (k={r.worst_k:g})")
    if args.out:
        _write(Path(args.out) / "audit.json", json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return EXIT_OK if payload["passed"] else EXIT_SCIENCE


def _overrides(args) -> dict:
    return {
        "trials": getattr(args, "trials", None),
        "base_seed": getattr(args, "seed", None),
        "horizon": getattr(args, "horizon", None),
    }


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="opfix", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"opfix {__version__} ({BACKEND} kernel)")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="experiment configuration (YAML)")
        p.add_argument("--horizon", type=int, help="override run.horizon")
        p.add_argument("--out", help="output directory (default: output.directory)")
        p.add_argument("--only", action="append", metavar="CURVE",
                       help="restrict to a proposition (repeatable); 'eta' with bounds")

    s = sub.add_parser("simulate", help="run the Monte Carlo ensemble and check every bound")
    common(s)
    s.add_argument("--seed", type=int, help="override run.base_seed")
    s.add_argument("--trials", type=int, help="override run.trials")
    s.add_argument("--workers", type=int, help="threads for the trial batches")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bounds", help="evaluate the bound curves without simulating")
    common(b)
    b.set_defaults(func=cmd_bounds)

    a = sub.add_parser("audit", help="check sampler and closure-rule parameters")
    a.add_argument("--samples", type=int, default=10**6)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", help="directory for audit.json")
    a.set_defaults(func=cmd_audit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"opfix: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Command line interface: ``miqmc {run,rates,eigs,telescope-check}``."""
from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .config import ConfigError, parse_config
from .field import FIELD_PRESETS, MaternParams, build_kl_basis
from .mindex import IndexSetSpec, Problem, generate_index_set
from .sweep import rate_table, read_runs, run_sweep


def _cmd_run(args) -> int:
    try:
        plan = parse_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        plan.seed = args.seed
    code = run_sweep(plan, args.out, args.workers)
    print(f"wrote {args.out or plan.out}/runs.csv")
    return code


def _cmd_rates(args) -> int:
    rows = read_runs(args.csv)
    w = csv.writer(sys.stdout)
    w.writerow(["estimator", "measure", "r", "q", "intercept", "residual", "n_points"])
    for kind, measure, fit in rate_table(rows):
        w.writerow([kind, measure, f"{fit.r:.4f}", f"{fit.q:.4f}", f"{fit.intercept:.6g}",
                    f"{fit.residual:.4g}", fit.n_points])
    return 0


def _field(args) -> MaternParams:
    if args.corr_len is not None:
        return MaternParams(args.corr_len, args.variance, args.smoothness)
    return FIELD_PRESETS[args.field]


def _cmd_eigs(args) -> int:
    basis = build_kl_basis(_field(args), args.d, args.n_quad, args.kl_tol)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["r", "theta", "ratio"] + [f"mode{i + 1}" for i in range(args.d)])
        for r, (th, f) in enumerate(zip(basis.values, basis.factors), start=1):
            w.writerow([r, repr(float(th)), repr(float(th / basis.values[0]))] + list(map(int, f)))
    finally:
        if args.out:
            out.close()
    print(f"# s={basis.s}", file=sys.stderr)
    return 0


def telescope_check(d: int, L: int, samples: int, field: MaternParams, qoi: str = "G1",
                    seed: int = 0) -> float:
    """Largest relative gap between the full-tensor sum of differences and the finest QoI."""
    problem = Problem(build_kl_basis(field, d), qoi)
    rng = np.random.default_rng(seed)
    worst = 0.0
    indices = generate_index_set(IndexSetSpec("FT", d), L)
    for _ in range(samples):
        xi = rng.standard_normal(problem.n_random)
        total = sum(problem.sample_delta(ell, xi).value for ell in indices)
        fine = problem.evaluate((L,) * d, xi)
        worst = max(worst, abs(total - fine) / abs(fine))
    return worst


def _cmd_telescope(args) -> int:
    gap = telescope_check(args.d, args.L, args.samples, _field(args), args.qoi, args.seed)
    ok = gap <= args.rtol
    print(f"d={args.d},L={args.L},samples={args.samples},max_rel_gap={gap:.3e},{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _add_field_args(p):
    p.add_argument("--field", default="F1", choices=sorted(FIELD_PRESETS))
    p.add_argument("--corr-len", type=float, default=None, help="custom Matérn correlation length")
    p.add_argument("--variance", type=float, default=1.0)
    p.add_argument("--smoothness", type=float, default=0.5)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="miqmc", description="Multi-index (quasi-)Monte Carlo experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a tolerance sweep from a config file")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="override the seed root")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("rates", help="fit eps ~ cost^-r for each estimator in a runs.csv")
    p.add_argument("csv")
    p.set_defaults(func=_cmd_rates)

    p = sub.add_parser("eigs", help="dump the truncated KL spectrum")
    _add_field_args(p)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--n-quad", type=int, default=512)
    p.add_argument("--kl-tol", type=float, default=1e-3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eigs)

    p = sub.add_parser("telescope-check", help="check sum of FT differences equals the finest QoI")
    _add_field_args(p)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--L", type=int, default=2)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--qoi", default="G1", choices=["G1", "G2"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rtol", type=float, default=1e-10)
    p.set_defaults(func=_cmd_telescope)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

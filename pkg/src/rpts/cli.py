"""Command-line entry point: ``rpts run|envelope|survive|approx-check``."""
import argparse
import csv
from dataclasses import replace
import io
import sys

import numpy as np

from .bandits import InvalidEnvironmentError
from .harness import envelope_report, fmt, load_config, run_experiment, survival_report, write_envelope_csv
from .netslice import approx_expected_reward, gaussian_reward_quadrature, hypoexponential_reward_mc
from .rng import make_rng
from .samplers import ConfigError
from .survival import EnvelopeAssumptionError


def _pair(text):
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return vals


def _read_numeric_csv(path):
    """Rows of floats; a non-numeric first row is treated as a header."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(x.strip() for x in r)]
    header = None
    try:
        float(rows[0][0])
    except (ValueError, IndexError):
        header, rows = rows[0], rows[1:]
    try:
        data = np.array([[float(x) for x in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from None
    return header, data


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def cmd_run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    if args.runs is not None:
        cfg = replace(cfg, runs=args.runs)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    cfg.validate()
    result, _ = run_experiment(cfg, workers=args.workers)
    t = result.mean_cum_regret.shape[0]
    print(
        f"{cfg.algorithm}: {result.runs} runs, T={t}, mean cumulative regret {result.mean_cum_regret[-1]:.4f} "
        f"(se {result.stderr_cum_regret[-1]:.4f}), {result.wall_clock:.1f}s -> {cfg.output_dir}"
    )
    return 0


def cmd_envelope(args):
    _, particles = _read_numeric_csv(args.particles)
    if particles.ndim != 2 or particles.shape[1] != 2:
        raise ConfigError("particle CSV must have exactly two columns (theta_1, theta_2)")
    buf = io.StringIO()
    write_envelope_csv(buf, envelope_report(args.theta_star, particles))
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_survive(args):
    rows = survival_report(args.run_dir, args.tol)
    holds = sum(1 for r in rows if r[1] == "holds")
    print(f"survival condition holds in {holds}/{len(rows)} runs at tol={args.tol}")
    return 0


def cmd_approx_check(args):
    header, grid = _read_numeric_csv(args.grid)
    if grid.ndim != 2 or grid.shape[1] < 2:
        raise ConfigError("grid CSV needs columns mu_1..mu_D, d")
    means, d = grid[:, :-1], grid[:, -1]
    if np.any(means < 0.0) or np.any(d <= 0.0):
        raise ConfigError("grid needs mu_i >= 0 and d > 0")
    approx = np.array([approx_expected_reward(m, dd) for m, dd in zip(means, d)])
    quad = np.array([gaussian_reward_quadrature(m, dd) for m, dd in zip(means, d)])
    mc = hypoexponential_reward_mc(means, d, args.mc_samples, make_rng(args.seed)) if args.mc_samples else None
    names = [f"mu_{i + 1}" for i in range(means.shape[1])] + ["d", "approx", "quadrature", "quad_abs_err"]
    if mc is not None:
        names += ["monte_carlo", "mc_abs_err"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for g in range(grid.shape[0]):
        row = [fmt(x) for x in grid[g]] + [fmt(approx[g]), fmt(quad[g]), fmt(abs(approx[g] - quad[g]))]
        if mc is not None:
            row += [fmt(mc[g]), fmt(abs(approx[g] - mc[g]))]
        w.writerow(row)
    _emit(buf.getvalue(), args.out)
    quad_err = float(np.max(np.abs(approx - quad)))
    msg = f"max |approx - quadrature| = {quad_err:.3e} (tol {args.quad_tol:g})"
    if mc is not None:
        mc_err = float(np.max(np.abs(approx - mc)))
        msg += f"; max |approx - monte carlo| = {mc_err:.4f} (report only, tol {args.mc_tol:g}: "
        msg += "within)" if mc_err <= args.mc_tol else "exceeded)"
    print(msg, file=sys.stderr)
    return 0 if quad_err <= args.quad_tol else 1


def build_parser():
    p = argparse.ArgumentParser(prog="rpts", description="Particle Thompson sampling experiments and analysis.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a seeded experiment from a YAML/JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="override base_seed")
    r.add_argument("--runs", type=int, help="override the number of runs")
    r.add_argument("--out", help="override output_dir")
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("envelope", help="divergence-diagram breakpoints and contraction set (2-arm Bernoulli)")
    e.add_argument("--theta-star", type=_pair, required=True, metavar="A,B")
    e.add_argument("--particles", required=True, help="CSV with two columns theta_1, theta_2")
    e.add_argument("--out", help="write CSV here instead of stdout")
    e.set_defaults(func=cmd_envelope)

    s = sub.add_parser("survive", help="survival-condition report for a run directory with particle snapshots")
    s.add_argument("--run-dir", required=True)
    s.add_argument("--tol", type=float, default=0.01)
    s.set_defaults(func=cmd_survive)

    a = sub.add_parser("approx-check", help="Gaussian reward approximation vs quadrature and Monte Carlo")
    a.add_argument("--grid", required=True, help="CSV with columns mu_1..mu_D, d")
    a.add_argument("--mc-samples", type=int, default=10_000_000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--quad-tol", type=float, default=1e-9)
    a.add_argument("--mc-tol", type=float, default=0.05)
    a.add_argument("--out", help="write CSV here instead of stdout")
    a.set_defaults(func=cmd_approx_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidEnvironmentError, EnvelopeAssumptionError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

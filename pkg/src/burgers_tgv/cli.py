"""Command line front end: ``burgers-tgv {solve,sweep,compare-tv-tgv,mu-ablation,gradcheck}``.

Exit status is 0 when every run converged, 2 when at least one run failed
(or a gradient check exceeded its tolerance) and 1 on usage or I/O errors.
"""

import argparse
import sys

import numpy as np

from .experiments import (
    BENCHMARK_PARAMETERS, MetricsRow, ScenarioSpec, benchmark_start, emit_report, generate_scenario,
    run_tv, ssim, sweep,
)
from .huber import RegWeights
from .newton import SolverConfig, solve
from .objective import gradient_check

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2
DEFAULT_SIGMA = float(np.sqrt(0.1))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")


def _experiment(text):
    key = text if text.startswith("exp") else f"exp{text}"
    if key not in BENCHMARK_PARAMETERS:
        raise argparse.ArgumentTypeError(f"experiment must be 1-4, got {text!r}")
    return key


def _start(text):
    if text == "background":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("start must be 'background' or a number")


def _common(p):
    g = p.add_argument_group("scenario")
    g.add_argument("--experiment", type=_experiment, default="exp2", help="benchmark 1-4 (default 2)")
    g.add_argument("--n", type=int, default=50, help="spatial nodes")
    g.add_argument("--nt", type=int, default=150, help="time levels")
    g.add_argument("--obs", type=int, default=25, help="number of observations")
    g.add_argument("--obs-strategy", choices=["strided", "random"], default="strided")
    g.add_argument("--sigma", type=float, default=DEFAULT_SIGMA,
                   help="background noise std; ASSUMED sqrt(0.1), i.e. noise with covariance B = 0.1 I")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scheme", choices=["upwind", "forward", "backward"], default="upwind",
                   help="advection stencil")
    m = p.add_argument_group("model")
    m.add_argument("--alpha", type=float, help="first-order TGV weight (default: per experiment)")
    m.add_argument("--beta", type=float, help="second-order TGV weight (default: per experiment)")
    m.add_argument("--gamma", type=float, default=1e4, help="Huber parameter")
    m.add_argument("--mu", type=float, default=1e-10, help="Tikhonov weight on w")
    s = p.add_argument_group("solver")
    s.add_argument("--c1", type=float, default=1e-4, help="Armijo constant")
    s.add_argument("--tol", type=float, default=1e-3, help="stop when the u step is below this")
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--norm", choices=["inf", "l2"], default="inf", help="norm of the u step test")
    s.add_argument("--start", type=_start, default=1.0,
                   help="constant initial u with w = 1 (default 1), or 'background' for u = u_b, w = 0")
    p.add_argument("--out", metavar="PREFIX", help="write metrics.csv, JSON logs and xy files with this prefix")


def _config(args):
    return SolverConfig(c1=args.c1, tol_step=args.tol, max_iter=args.max_iter, step_norm=args.norm)


def _scenario(args, alpha=None, beta=None, mu=None):
    params = BENCHMARK_PARAMETERS[args.experiment]
    a = alpha if alpha is not None else (args.alpha if args.alpha is not None else params["alpha"])
    b = beta if beta is not None else (args.beta if args.beta is not None else params["beta"])
    spec = ScenarioSpec(args.experiment, n=args.n, N_t=args.nt, n_obs=args.obs, noise_sigma=args.sigma,
                        seed=args.seed, obs_strategy=args.obs_strategy)
    weights = RegWeights(a, b, args.mu if mu is None else mu)
    return generate_scenario(spec, weights, args.gamma, args.scheme)


def _initial(args, problem):
    if args.start == "background":
        return None, None
    return benchmark_start(problem, args.start)


def _print_rows(rows, labels):
    print(f"{'run':>12} {'alpha':>9} {'beta':>9} {'gamma':>8} {'mu':>8} {'iter':>5} {'ssim':>8} "
          f"{'cost':>12} conv")
    for label, r in zip(labels, rows):
        print(f"{label:>12} {r.alpha:9.4g} {r.beta:9.4g} {r.gamma:8.2g} {r.mu:8.2g} {r.iterations:5d} "
              f"{r.ssim:8.4f} {r.final_cost:12.6g} {r.converged}")


def _finish(args, problem, u_exact, rows, reports, labels):
    _print_rows(rows, labels)
    if args.out:
        emit_report(rows, reports, args.out, problem.grid, u_exact, labels)
    return EXIT_OK if all(r.converged for r in rows) else EXIT_FAILED


def cmd_solve(args):
    problem, u_exact = _scenario(args)
    rep = solve(problem, _config(args), *_initial(args, problem))
    for r in rep.iterations:
        print(f"it {r.iteration:3d} cost {r.cost:.8g} step {r.step:.3g} |g| {r.grad_norm:.3e} "
              f"min eig {r.min_eig:.3e} ({r.direction})")
    if not rep.converged:
        print(f"not converged: {rep.reason} {rep.failure or ''}".rstrip())
    return _finish(args, problem, u_exact, [MetricsRow.from_report(problem, rep, u_exact)], [rep], ["tgv"])


def cmd_sweep(args):
    problem, u_exact = _scenario(args)
    alphas = args.alphas or [problem.weights.alpha]
    betas = args.betas or [a * r / problem.grid.n for a in alphas[:1] for r in (0.8, 1.0, 1.2, 1.4)]
    u0, w0 = _initial(args, problem)
    config = _config(args)
    rows, reports, best, band = sweep(problem, u_exact, alphas, betas, config, args.workers, u0, w0)
    labels = [f"a{r.alpha:g}_b{r.beta:g}" for r in rows]
    code = _finish(args, problem, u_exact, rows, reports, labels)
    if best is not None:
        print(f"best SSIM {rows[best].ssim:.4f} at alpha={rows[best].alpha:g}, beta={rows[best].beta:g}")
        print(f"inside heuristic band: {sum(band)} of {len(band)} runs")
    return code


def cmd_compare(args):
    problem, u_exact = _scenario(args)
    u0, w0 = _initial(args, problem)
    config = _config(args)
    tgv = solve(problem, config, u0, w0)
    tv_problem = problem.with_(regularizer="tv", tv_weight=args.beta_tv, gamma=args.gamma_tv)
    tv = run_tv(problem, args.beta_tv, config, u0, args.gamma_tv)
    rows = [MetricsRow.from_report(problem, tgv, u_exact),
            MetricsRow(0.0, args.beta_tv, args.gamma_tv, 0.0, tv.n_iter,
                       ssim(tv.final.u, u_exact), tv.final.cost, tv.converged)]
    code = _finish(args, tv_problem, u_exact, rows, [tgv, tv], ["tgv", "tv"])
    winner = "TGV" if rows[0].ssim > rows[1].ssim else "TV"
    print(f"SSIM TGV {rows[0].ssim:.4f} vs TV {rows[1].ssim:.4f}: {winner} is closer to the exact solution")
    return code


def cmd_mu_ablation(args):
    rows, reports, labels = [], [], []
    problem = u_exact = None
    config = _config(args)
    for mu in args.mus:
        problem, u_exact = _scenario(args, mu=mu)
        rep = solve(problem, config, *_initial(args, problem))
        rows.append(MetricsRow.from_report(problem, rep, u_exact))
        reports.append(rep)
        labels.append(f"mu{mu:g}")
        if not rep.converged:
            print(f"mu={mu:g}: {rep.reason} ({rep.failure})")
    return _finish(args, problem, u_exact, rows, reports, labels)


def cmd_gradcheck(args):
    problem, _ = _scenario(args)
    rng = np.random.default_rng(args.seed)
    n = problem.grid.n
    worst = 0.0
    for k in range(args.points):
        u = problem.background.u_b + 0.3 * rng.standard_normal(n)
        w = rng.standard_normal(n - 1)
        coords, an, fd, rel = gradient_check(problem, u, w, args.coords, args.eps, rng)
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
        print(f"point {k}: {coords.size} coordinates, max relative error {rel.max():.3e}")
    ok = worst <= args.rtol
    print(f"worst relative error {worst:.3e} ({'ok' if ok else 'above'} tolerance {args.rtol:g})")
    return EXIT_OK if ok else EXIT_FAILED


def build_parser():
    parser = _Parser(prog="burgers-tgv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="one TGV reconstruction")
    _common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="SSIM over an (alpha, beta) grid")
    _common(p)
    p.add_argument("--alphas", type=_floats, help="comma separated alpha values")
    p.add_argument("--betas", type=_floats,
                   help="comma separated beta values (default: alpha*{0.8,1,1.2,1.4}/n)")
    p.add_argument("--workers", type=int, default=1, help="parallel solver processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare-tv-tgv", help="TGV against TV on the same scenario")
    _common(p)
    p.add_argument("--beta-tv", type=float, default=0.85, help="TV weight")
    p.add_argument("--gamma-tv", type=float, default=1e5, help="Huber parameter of the TV run")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("mu-ablation", help="repeat one solve for several mu values")
    _common(p)
    p.add_argument("--mus", type=_floats, default=[0.0, 1e-6, 1e-8, 1e-10, 1e-12])
    p.set_defaults(func=cmd_mu_ablation, experiment="exp3", alpha=2.5, beta=0.05)

    p = sub.add_parser("gradcheck", help="adjoint gradient against finite differences")
    _common(p)
    p.add_argument("--points", type=int, default=5, help="random evaluation points")
    p.add_argument("--coords", type=int, default=20, help="coordinates per point")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--rtol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck, n=20, nt=30)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"burgers-tgv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

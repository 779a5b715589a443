"""Benchmark scenarios, the SSIM score, TV/TGV runs, parameter sweeps and report files."""

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .dynamics import solve_state
from .grid import Grid, build_grid
from .huber import RegWeights
from .newton import SolveReport, SolverConfig, residual_ratio_diagnostics, solve
from .objective import Background, ObservationSet, Problem, random_selection, strided_selection

__all__ = [
    "EXPERIMENTS",
    "BENCHMARK_PARAMETERS",
    "ScenarioSpec",
    "MetricsRow",
    "exact_solution",
    "generate_scenario",
    "ssim",
    "benchmark_start",
    "run_tgv",
    "run_tv",
    "sweep",
    "heuristic_band",
    "emit_report",
    "read_metrics_csv",
]

EXPERIMENTS = ("exp1", "exp2", "exp3", "exp4")

# (alpha, beta) used for each benchmark unless overridden
BENCHMARK_PARAMETERS = {
    "exp1": {"alpha": 10.0, "beta": 0.2},
    "exp2": {"alpha": 23.5, "beta": 0.611},
    "exp3": {"alpha": 5.0, "beta": 0.1},
    "exp4": {"alpha": 10.0, "beta": 0.2},
}


def _piecewise(x, pieces):
    """``pieces`` is a list of ``(left, right, f)``; intervals are ``[left, right)``."""
    out = np.zeros_like(x)
    for left, right, f in pieces:
        m = (x >= left) & (x < right)
        out[m] = f(x[m])
    return out


_PIECES = {
    "exp1": [(0.0, 5.0, lambda x: x / 5.0),
             (5.0, np.inf, lambda x: -0.4 * (x - 10.0))],
    "exp2": [(2.5, 5.0, lambda x: 0.4 * x - 1.0),
             (5.0, 7.5, lambda x: -0.8 * x + 6.0)],
    "exp3": [(0.0, 2.0, lambda x: 1.5 * x),
             (2.0, 5.0, lambda x: x - 2.0),
             (5.0, 8.0, lambda x: x - 5.0),
             (8.0, np.inf, lambda x: 10.0 - x)],
    "exp4": [(0.0, 2.0, lambda x: 1.5 * x),
             (2.0, 4.0, lambda x: x - 2.0),
             (4.0, 5.0, lambda x: np.full_like(x, 2.0)),
             (5.0, 6.0, lambda x: 3.0 * x - 15.0),
             (6.0, 8.0, lambda x: -0.75 * x + 6.0)],
}


def _experiment_id(e):
    e = str(e)
    key = e if e.startswith("exp") else f"exp{e}"
    if key not in _PIECES:
        raise ValueError(f"unknown experiment {e!r}; choose from {EXPERIMENTS}")
    return key


def exact_solution(experiment_id, x, L=10.0):
    """Piecewise-linear initial condition; right-continuous at breakpoints."""
    key = _experiment_id(experiment_id)
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(xa > L):
        raise ValueError(f"x must lie in [0, {L}]")
    out = _piecewise(np.atleast_1d(xa), _PIECES[key])
    return out.reshape(xa.shape) if xa.ndim else float(out[0])


@dataclass(frozen=True)
class ScenarioSpec:
    """Recipe for a synthetic assimilation problem.

    ``noise_sigma`` is the standard deviation of the Gaussian perturbation that
    turns the exact initial condition into the background.  It defaults to
    ``sqrt(B_scale)`` at the default ``B_scale = 0.1``, i.e. noise drawn with
    the background covariance.
    """

    experiment_id: str = "exp2"
    n: int = 50
    N_t: int = 150
    n_obs: int = 25
    noise_sigma: float = float(np.sqrt(0.1))
    seed: int = 0
    obs_strategy: str = "strided"
    L: float = 10.0
    T: float = 1.0
    B_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "experiment_id", _experiment_id(self.experiment_id))
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.n_obs < 0 or self.n_obs > self.n * self.N_t:
            raise ValueError("n_obs must lie between 0 and n*N_t")
        if self.obs_strategy not in ("strided", "random"):
            raise ValueError("obs_strategy must be 'strided' or 'random'")
        if self.B_scale <= 0:
            raise ValueError("B_scale must be positive")


def generate_scenario(spec: ScenarioSpec, weights: RegWeights, gamma=1e4, stencil="upwind",
                      scale_by_h=True):
    """Build the problem and return ``(problem, u_exact)``.

    Observations are exact point values of the true trajectory (``R = I``);
    the background is the truth plus seeded Gaussian noise, with ``B = B_scale I``.
    """
    grid = build_grid(spec.n, spec.N_t, spec.L, spec.T)
    u_exact = exact_solution(spec.experiment_id, grid.x, spec.L)
    y = solve_state(u_exact, None, grid, stencil)
    rng = np.random.default_rng(spec.seed)
    if spec.obs_strategy == "strided":
        sel = strided_selection(grid, spec.n_obs)
    else:
        sel = random_selection(grid, spec.n_obs, rng)
    sel = np.asarray(sel, dtype=int).reshape(-1, 2)
    z = y[sel[:, 0], sel[:, 1]]
    obs = ObservationSet(z, sel[:, 0], sel[:, 1], np.ones(len(z)))
    noise = rng.standard_normal(grid.n) * spec.noise_sigma if spec.noise_sigma > 0 else 0.0
    bg = Background(u_exact + noise, np.full(grid.n, 1.0 / spec.B_scale))
    problem = Problem(grid, obs, bg, weights, gamma=float(gamma), stencil=stencil,
                      scale_by_h=scale_by_h, meta={"scenario": asdict(spec)})
    return problem, u_exact


def ssim(x, y, dynamic_range=2.0, k1=0.01, k2=0.03):
    """Global SSIM with population statistics."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("ssim needs two 1-D arrays of equal length")
    if x.shape[0] < 2:
        raise ValueError("ssim needs at least two samples")
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx, vy, cxy = np.mean(dx * dx), np.mean(dy * dy), np.mean(dx * dy)
    if np.array_equal(x, y):
        return 1.0
    return float((2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))


def benchmark_start(problem: Problem, level=1.0):
    """Constant start ``u0 = level`` with ``w0 = 1`` used by the benchmark runs."""
    n = problem.grid.n
    return np.full(n, float(level)), np.ones(n - 1)


def run_tgv(problem: Problem, config: SolverConfig = SolverConfig(), u0=None, w0=None) -> SolveReport:
    return solve(problem.with_(regularizer="tgv"), config, u0, w0)


def run_tv(problem: Problem, beta_tv: float, config: SolverConfig = SolverConfig(), u0=None,
           gamma=None) -> SolveReport:
    """Solve with the TV regulariser ``beta_tv sum H(Du)`` and ``w`` frozen at zero."""
    tv = problem.with_(regularizer="tv", tv_weight=float(beta_tv),
                       gamma=problem.gamma if gamma is None else float(gamma))
    return solve(tv, config, u0)


@dataclass
class MetricsRow:
    alpha: float
    beta: float
    gamma: float
    mu: float
    iterations: int
    ssim: float
    final_cost: float
    converged: bool

    @classmethod
    def from_report(cls, problem: Problem, report: SolveReport, u_exact):
        return cls(float(problem.weights.alpha), float(problem.weights.beta), float(problem.gamma),
                   float(problem.weights.mu), report.n_iter, ssim(report.final.u, u_exact),
                   float(report.final.cost), bool(report.converged))


def heuristic_band(alpha, beta, n):
    """True when ``beta/alpha`` lies in ``(0.75/n, 1.5/n)``."""
    r = beta / alpha
    return 0.75 / n < r < 1.5 / n


def _sweep_job(args):
    problem, alpha, beta, config, u_exact, u0, w0 = args
    p = problem.with_(weights=RegWeights(alpha, beta, problem.weights.mu))
    report = solve(p, config, u0, w0)
    return MetricsRow.from_report(p, report, u_exact), report


def sweep(problem: Problem, u_exact, alphas: Sequence[float], betas: Sequence[float],
          config: SolverConfig = SolverConfig(), workers: int = 1, u0=None, w0=None):
    """Solve on every ``(alpha, beta)`` pair.

    Every run starts from ``(u0, w0)`` (solver defaults when ``None``).
    Returns ``(rows, reports, best_index, in_band)`` where ``best_index``
    points at the highest SSIM and ``in_band`` flags rows inside the
    ``beta/alpha`` heuristic band.
    """
    jobs = [(problem, float(a), float(b), config, u_exact, u0, w0) for a in alphas for b in betas]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    rows = [r for r, _ in results]
    reports = [rep for _, rep in results]
    best = int(np.argmax([r.ssim for r in rows])) if rows else None
    band = [heuristic_band(r.alpha, r.beta, problem.grid.n) for r in rows]
    return rows, reports, best, band


# output files ----------------------------------------------------------

CSV_FIELDS = [f.name for f in fields(MetricsRow)]


def _write(path: Path, writer):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer(fh)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_metrics_csv(path) -> List[MetricsRow]:
    with open(path, newline="") as fh:
        out = []
        for rec in csv.DictReader(fh):
            out.append(MetricsRow(float(rec["alpha"]), float(rec["beta"]), float(rec["gamma"]),
                                  float(rec["mu"]), int(rec["iterations"]), float(rec["ssim"]),
                                  float(rec["final_cost"]), rec["converged"] == "True"))
        return out


def _num(v):
    return repr(float(v))


def emit_report(rows: Sequence[MetricsRow], reports: Sequence[SolveReport], path_prefix,
                grid: Optional[Grid] = None, u_exact=None, labels: Optional[Sequence[str]] = None):
    """Write ``<prefix>metrics.csv``, one JSON log per run and plot-ready xy files.

    Returns the list of written paths.
    """
    prefix = str(path_prefix)
    written = []

    def metrics(fh):
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in rows:
            w.writerow([_num(v) if isinstance(v, float) else v for v in asdict(r).values()])

    written.append(_write(Path(prefix + "metrics.csv"), metrics))
    labels = list(labels) if labels is not None else [f"run{i}" for i in range(len(reports))]
    for label, rep in zip(labels, reports):
        log = rep.to_dict()
        written.append(_write(Path(f"{prefix}{label}.json"), lambda fh: json.dump(log, fh, indent=1)))

        def conv(fh, rep=rep):
            fh.write("# iteration cost step grad_norm\n")
            for r in rep.iterations:
                fh.write(f"{r.iteration} {_num(r.cost)} {_num(r.step)} {_num(r.grad_norm)}\n")
            fh.write(f"{rep.n_iter + 1} {_num(rep.final.cost)} nan {_num(rep.final.grad_norm)}\n")

        written.append(_write(Path(f"{prefix}{label}_convergence.xy"), conv))

        def ratios(fh, rep=rep):
            fh.write("# iteration ratio\n")
            for k, v in enumerate(residual_ratio_diagnostics(rep), start=1):
                fh.write(f"{k} {_num(v)}\n")

        written.append(_write(Path(f"{prefix}{label}_ratios.xy"), ratios))
        if grid is not None:
            def recon(fh, rep=rep):
                fh.write("# x reconstruction" + (" exact\n" if u_exact is not None else "\n"))
                for i, xi in enumerate(grid.x):
                    extra = f" {_num(u_exact[i])}" if u_exact is not None else ""
                    fh.write(f"{_num(xi)} {_num(rep.final.u[i])}{extra}\n")

            written.append(_write(Path(f"{prefix}{label}_reconstruction.xy"), recon))
    return written

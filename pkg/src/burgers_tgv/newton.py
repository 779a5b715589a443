"""Globalised reduced primal-dual Newton method for the smoothed problem.

Each iteration solves the state and adjoint equations, assembles the reduced
matrix ``Pi`` in the ``(u, w)`` variables, computes the Newton direction from
``Pi d = -grad``, updates the dual variables and chooses the step by polynomial
backtracking under the Armijo condition.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List, NamedTuple, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .dynamics import StepFailure, apply_curvature, solve_linearized
from .huber import huber_grad, projected_hessian
from .objective import GradientInfo, Problem, _dense, cost, gradient_info, kkt_residual

__all__ = [
    "SolverConfig",
    "IterateState",
    "IterationRecord",
    "SolveReport",
    "NonDescentError",
    "LineSearchFailure",
    "LineSearchResult",
    "reduced_state_hessian",
    "assemble_pi",
    "compute_direction",
    "dual_step",
    "polynomial_line_search",
    "solve",
    "residual_ratio_diagnostics",
]



class NonDescentError(ArithmeticError):
    """The reduced system could not be factorised or gave an ascent direction."""

    def __init__(self, message, min_eig=None):
        super().__init__(message)
        self.min_eig = min_eig


class LineSearchFailure(ArithmeticError):
    def __init__(self, message, trials):
        super().__init__(message)
        self.trials = trials


@dataclass(frozen=True)
class SolverConfig:
    """Solver controls.

    ``dual_step_rule`` is ``"same_as_primal"`` (duals move with the accepted
    step length) or ``"full"``.  ``curvature`` selects the exact second
    derivative of the state constraint or the Gauss-Newton approximation that
    drops it.  ``step_norm`` is used for the ``tol_step`` test.

    ``clip`` chooses how the duals enter ``Q1``/``Q2`` (see
    ``projected_hessian``).  With ``clip="unit"`` entries on the linear part of
    the Huber function vanish once the duals align with the sign, and the
    Newton direction can become huge along ``w``.  When the accepted step of
    such a direction is below ``fallback_step``, the iteration is redone with
    the ``clip="gamma"`` matrix, which is always positive definite, and that
    trial replaces the Newton one.  ``fallback_step=0`` disables this.
    """

    c1: float = 1e-4
    tol_step: float = 1e-3
    tol_kkt: float = 1e-10
    max_iter: int = 100
    max_linesearch: int = 30
    dual_step_rule: str = "same_as_primal"
    curvature: str = "exact"
    step_norm: str = "inf"
    dual_init: str = "consistent"
    clip: str = "unit"
    fallback_step: float = 1e-3
    keep_matrices: bool = False

    def __post_init__(self):
        if not 0 < self.c1 < 1:
            raise ValueError("c1 must lie in (0, 1)")
        if not (self.tol_step > 0 and self.tol_kkt > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1 or self.max_linesearch < 1:
            raise ValueError("iteration limits must be positive")
        if self.dual_step_rule not in ("same_as_primal", "full"):
            raise ValueError(f"unknown dual_step_rule {self.dual_step_rule!r}")
        if self.curvature not in ("exact", "gauss_newton"):
            raise ValueError(f"unknown curvature {self.curvature!r}")
        if self.dual_init not in ("consistent", "zero"):
            raise ValueError(f"unknown dual_init {self.dual_init!r}")
        if self.clip not in ("unit", "gamma"):
            raise ValueError(f"unknown clip {self.clip!r}")
        if not 0 <= self.fallback_step < 1:
            raise ValueError("fallback_step must lie in [0, 1)")
        if self.step_norm not in ("inf", "l2"):
            raise ValueError(f"unknown step_norm {self.step_norm!r}")


@dataclass
class IterateState:
    u: np.ndarray
    w: np.ndarray
    q1: np.ndarray
    q2: Optional[np.ndarray]
    y: np.ndarray
    p: np.ndarray
    cost: float
    grad_norm: float


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    grad_norm: float
    kkt: float
    step: float
    new_cost: float
    slope: float
    min_eig: float
    max_eig: float
    cos_angle: float
    u_change: float
    direction: str = "newton"
    trials: list = field(default_factory=list)


@dataclass
class SolveReport:
    iterations: List[IterationRecord]
    final: IterateState
    converged: bool
    reason: str
    u_history: List[np.ndarray]
    w_history: List[np.ndarray]
    failure: Optional[str] = None
    matrices: list = field(default_factory=list)

    @property
    def n_iter(self) -> int:
        return len(self.iterations)

    @property
    def costs(self) -> List[float]:
        out = [r.cost for r in self.iterations]
        return out + [self.final.cost]

    @property
    def residual_ratios(self) -> List[float]:
        return residual_ratio_diagnostics(self)

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "reason": self.reason,
            "failure": self.failure,
            "final_cost": self.final.cost,
            "iterations": [asdict(r) for r in self.iterations],
            "u_history": [u.tolist() for u in self.u_history],
            "w_history": [w.tolist() for w in self.w_history],
            "residual_ratios": self.residual_ratios,
        }


# reduced matrix --------------------------------------------------------

def reduced_state_hessian(problem: Problem, y, p, curvature="exact"):
    """``S^T Psi S`` with ``S = dy/du``; the state part of the reduced Hessian."""
    n = problem.grid.n
    sens = solve_linearized(y, np.eye(n), problem.grid, problem.stencil)
    obs = problem.observations
    V = sens[obs.times, obs.nodes, :]
    R = obs.R_inv
    M = V.T @ (R[:, None] * V if R.ndim == 1 else R @ V)
    if curvature == "exact":
        KS = apply_curvature(y, p, sens, problem.grid, problem.stencil)
        M = M - np.einsum("tia,tib->ab", sens, KS)
    return 0.5 * (M + M.T)


def _duals_hessians(problem, u, w, q1, q2, clip="unit"):
    ops, gam = problem.ops, problem.gamma
    if problem.is_tv:
        return projected_hessian(ops.D(u), q1, gam, clip), None
    return (projected_hessian(ops.D(u) - w, q1, gam, clip),
            projected_hessian(ops.E(w), q2, gam, clip))


def assemble_pi(problem: Problem, u, w, q1, q2, y, p, curvature="exact", clip="unit"):
    """Dense reduced matrix ``Pi``; size ``2n-1`` for TGV and ``n`` in TV mode."""
    Dm = problem.ops.D_matrix()
    Q1, Q2 = _duals_hessians(problem, u, w, q1, q2, clip)
    Puu = _dense(problem.background.B_inv) + reduced_state_hessian(problem, y, p, curvature)
    if problem.is_tv:
        Pi = Puu + problem.tv_weight * Dm.T @ (Q1[:, None] * Dm)
        return 0.5 * (Pi + Pi.T)
    a, b, mu = problem.weights.alpha, problem.weights.beta, problem.weights.mu
    Em = problem.ops.E_matrix()
    n = problem.grid.n
    Pi = np.empty((2 * n - 1, 2 * n - 1))
    Pi[:n, :n] = Puu + a * Dm.T @ (Q1[:, None] * Dm)
    Pi[:n, n:] = -a * Dm.T * Q1[None, :]
    Pi[n:, :n] = Pi[:n, n:].T
    Pi[n:, n:] = mu * np.eye(n - 1) + a * np.diag(Q1) + b * Em.T @ (Q2[:, None] * Em)
    return 0.5 * (Pi + Pi.T)


def compute_direction(Pi, g):
    """Solve ``Pi d = -g`` by Cholesky; raise ``NonDescentError`` if that is impossible."""
    g = np.asarray(g, dtype=float)
    if not np.any(g):
        return np.zeros_like(g)
    try:
        factor = cho_factor(Pi, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        lam = float(np.linalg.eigvalsh(Pi)[0]) if np.all(np.isfinite(Pi)) else float("nan")
        raise NonDescentError(f"reduced matrix is not positive definite (min eig {lam:.3e})",
                              min_eig=lam) from exc
    d = cho_solve(factor, -g)
    slope = float(g @ d)
    if not (np.all(np.isfinite(d)) and slope < 0):
        raise NonDescentError(f"no descent direction (slope {slope:.3e})")
    return d


def dual_step(problem: Problem, u, w, q1, q2, du, dw, clip="unit"):
    """Newton increments of the duals from the linearised consistency equations."""
    ops, gam = problem.ops, problem.gamma
    Q1, Q2 = _duals_hessians(problem, u, w, q1, q2, clip)
    if problem.is_tv:
        return Q1 * ops.D(du) - q1 + huber_grad(ops.D(u), gam), None
    dq1 = Q1 * (ops.D(du) - dw) - q1 + huber_grad(ops.D(u) - w, gam)
    dq2 = Q2 * ops.E(dw) - q2 + huber_grad(ops.E(w), gam)
    return dq1, dq2


# line search -----------------------------------------------------------

@dataclass
class LineSearchResult:
    step: float
    value: float
    trials: list


def _cubic_step(f0, slope, s, fs, sp, fp):
    r1 = fs - f0 - slope * s
    r2 = fp - f0 - slope * sp
    a = (r1 / s ** 2 - r2 / sp ** 2) / (s - sp)
    b = (-sp * r1 / s ** 2 + s * r2 / sp ** 2) / (s - sp)
    if a == 0.0:
        return -slope / (2.0 * b) if b != 0 else 0.5 * s
    disc = b * b - 3.0 * a * slope
    if disc < 0:
        return 0.5 * s
    return (-b + math.sqrt(disc)) / (3.0 * a)


def polynomial_line_search(phi: Callable[[float], float], f0: float, slope: float,
                           c1: float = 1e-4, max_trials: int = 30):
    """Backtracking with quadratic then cubic interpolation.

    ``phi(s)`` is the cost at step ``s`` (``inf`` if it cannot be evaluated),
    ``slope`` the directional derivative at 0.  The first trial is ``s = 1``.
    After one rejection the quadratic minimiser is clamped to
    ``[0.1, 1/(2(1-c1))]``; later trials use the cubic model clamped to
    ``[0.1 s, 0.5 s]`` where ``s`` is the last rejected step.
    """
    if not slope < 0:
        raise ValueError("line search needs a descent direction")
    trials = []
    s, fs = 1.0, phi(1.0)
    prev = None
    for _ in range(max_trials):
        trials.append((s, fs))
        if math.isfinite(fs) and fs <= f0 + c1 * s * slope:
            return LineSearchResult(s, fs, trials)
        if not math.isfinite(fs):
            s_new = 0.5 * s
        elif prev is None:
            s_new = -slope * s * s / (2.0 * (fs - f0 - slope * s))
            s_new = min(max(s_new, 0.1 * s), s / (2.0 * (1.0 - c1)))
        elif not math.isfinite(prev[1]):
            s_new = -slope * s * s / (2.0 * (fs - f0 - slope * s))
            s_new = min(max(s_new, 0.1 * s), 0.5 * s)
        else:
            s_new = _cubic_step(f0, slope, s, fs, *prev)
            if not math.isfinite(s_new):
                s_new = 0.5 * s
            s_new = min(max(s_new, 0.1 * s), 0.5 * s)
        prev = (s, fs)
        s, fs = s_new, phi(s_new)
    raise LineSearchFailure(f"no acceptable step after {max_trials} trials", trials)


# main loop -------------------------------------------------------------

def _norm(v, kind):
    return float(np.abs(v).max()) if kind == "inf" else float(np.linalg.norm(v))


def _initial_duals(problem, u, w, rule="consistent"):
    ops, gam = problem.ops, problem.gamma
    if rule == "zero":
        return np.zeros(problem.grid.n - 1), (None if problem.is_tv else np.zeros(problem.grid.n - 1))
    if problem.is_tv:
        return huber_grad(ops.D(u), gam), None
    return huber_grad(ops.D(u) - w, gam), huber_grad(ops.E(w), gam)


def _state(info: GradientInfo, u, w, q1, q2):
    g = np.concatenate([info.g_u, info.g_w])
    return IterateState(u, w, q1, q2, info.y, info.p, info.cost, float(np.linalg.norm(g)))


class _Trial(NamedTuple):
    Pi: np.ndarray
    d: np.ndarray
    du: np.ndarray
    dw: np.ndarray
    slope: float
    ls: LineSearchResult
    clip: str


def _attempt(problem, config, u, w, q1, q2, info, g, clip) -> _Trial:
    """Newton direction with the given clip rule followed by the line search."""
    n = problem.grid.n
    Pi = assemble_pi(problem, u, w, q1, q2, info.y, info.p, config.curvature, clip)
    d = compute_direction(Pi, g)
    du, dw = (d, np.zeros(n - 1)) if problem.is_tv else (d[:n], d[n:])
    slope = float(g @ d)

    def phi(s):
        try:
            return cost(problem, u + s * du, w + s * dw)
        except StepFailure:
            return math.inf

    ls = polynomial_line_search(phi, info.cost, slope, config.c1, config.max_linesearch)
    return _Trial(Pi, d, du, dw, slope, ls, clip)


def solve(problem: Problem, config: SolverConfig = SolverConfig(), u0=None, w0=None,
          q0=None) -> SolveReport:
    """Run the globalised Newton iteration from ``(u0, w0)``.

    ``u0`` defaults to the background, ``w0`` to zero and the duals to the
    Huber derivatives at the starting point.  Solver breakdowns are returned as
    a report with ``converged=False`` instead of being raised.
    """
    n = problem.grid.n
    u = np.array(problem.background.u_b if u0 is None else u0, dtype=float)
    w = np.zeros(n - 1) if (w0 is None or problem.is_tv) else np.array(w0, dtype=float)
    if u.shape != (n,) or w.shape != (n - 1,):
        raise ValueError("starting point has the wrong shape")
    q1, q2 = _initial_duals(problem, u, w, config.dual_init) if q0 is None else (np.array(q0[0]), q0[1])
    tv = problem.is_tv
    records, matrices = [], []
    u_hist, w_hist = [u.copy()], [w.copy()]

    def finish(converged, reason, failure=None):
        return SolveReport(records, _state(info, u, w, q1, q2), converged, reason,
                           u_hist, w_hist, failure, matrices)

    try:
        info = gradient_info(problem, u, w)
    except StepFailure as exc:
        raise ValueError(f"state equation cannot be solved at the starting point: {exc}") from exc

    for k in range(config.max_iter):
        g = info.g_u if tv else np.concatenate([info.g_u, info.g_w])
        kkt = kkt_residual(problem, u, w, q1, q2, info)
        if kkt < config.tol_kkt:
            return finish(True, "kkt")
        try:
            trial = _attempt(problem, config, u, w, q1, q2, info, g, config.clip)
        except NonDescentError as exc:
            return finish(False, "non_descent", str(exc))
        except LineSearchFailure as exc:
            trial, err = None, exc
        if config.clip == "unit" and config.fallback_step > 0 and (
                trial is None or trial.ls.step < config.fallback_step):
            # tiny or failed Newton step: redo the iteration with the safeguard matrix
            try:
                trial = _attempt(problem, config, u, w, q1, q2, info, g, "gamma")
            except (NonDescentError, LineSearchFailure) as exc:
                err = exc
        if trial is None:
            return finish(False, "line_search", str(err))
        Pi, d, du, dw, slope, ls, used = trial
        eig = np.linalg.eigvalsh(Pi)
        if config.keep_matrices:
            matrices.append(Pi)
        dq1, dq2 = dual_step(problem, u, w, q1, q2, du, dw, used)
        s = ls.step
        ts = s if config.dual_step_rule == "same_as_primal" else 1.0
        u_new, w_new = u + s * du, w + s * dw
        q1 = q1 + ts * dq1
        if not tv:
            q2 = q2 + ts * dq2
        change = _norm(u_new - u, config.step_norm)
        gn = float(np.linalg.norm(g))
        cos = float(-slope / (gn * np.linalg.norm(d))) if gn > 0 else 1.0
        records.append(IterationRecord(k + 1, info.cost, gn, kkt, s, ls.value, slope,
                                       float(eig[0]), float(eig[-1]), cos, change,
                                       "newton" if used == config.clip else "safeguard", ls.trials))
        u, w = u_new, w_new
        u_hist.append(u.copy())
        w_hist.append(w.copy())
        info = gradient_info(problem, u, w)
        if change < config.tol_step:
            return finish(True, "step")
    return finish(False, "max_iter")


def residual_ratio_diagnostics(report: SolveReport, u_star=None) -> List[float]:
    """``|u^k - u*| / |u^{k-1} - u*|`` for ``k = 1..K-1`` (2-norm).

    ``u_star`` defaults to the final iterate, in which case the trivial last
    ratio (always 0) is left out.
    """
    hist = report.u_history
    if u_star is None:
        u_star = hist[-1]
        hist = hist[:-1]
    errs = [float(np.linalg.norm(u - u_star)) for u in hist]
    return [errs[k] / errs[k - 1] if errs[k - 1] > 0 else float("nan") for k in range(1, len(errs))]

"""Semi-implicit Euler discretisation of the inviscid Burgers equation.

State levels are stored as an array ``y`` of shape ``(N_t, n)``; ``y[0]`` is the
initial condition ``u``.  Level ``j >= 1`` solves

    (y^j - y^{j-1})/dt + diag(y^{j-1}) U_j y^j = f^j

which is linear in ``y^j``.  The advection matrix ``U_j`` is a first-order
difference with homogeneous Dirichlet ghosts.  Three stencils are available:

``forward``   (U y)_i = (y_{i+1} - y_i)/h
``backward``  (U y)_i = (y_i - y_{i-1})/h
``upwind``    backward where ``y^{j-1}_i >= 0``, forward otherwise

For ``upwind`` the stencil is frozen by the sign pattern of the previous level
and is treated as a constant when differentiating.

All derivative operators below act on stacked trajectories of the same
``(N_t, n)`` shape, optionally with a trailing column axis for several
right-hand sides at once.
"""

import numpy as np
from scipy.linalg import solve_banded

from .grid import Grid

__all__ = [
    "STENCILS",
    "StepFailure",
    "advection_bands",
    "apply_advection",
    "apply_advection_T",
    "step_state",
    "solve_state",
    "state_residual",
    "apply_state_jacobian",
    "apply_state_jacobian_T",
    "solve_linearized",
    "apply_inverse_state_jacobian",
    "solve_adjoint",
    "apply_inverse_state_transpose",
    "apply_curvature",
    "state_jacobian_dense",
    "state_norm_bound",
]

STENCILS = ("forward", "backward", "upwind")
PIVOT_TOL = 1e-12


class StepFailure(ArithmeticError):
    """A per-level linear system was (numerically) singular."""

    def __init__(self, message, level=None, index=None):
        super().__init__(message)
        self.level = level
        self.index = index


def advection_bands(y_prev, h, stencil="upwind"):
    """Bands ``(lo, di, up)`` of ``U``; row i reads ``lo[i] y_{i-1} + di[i] y_i + up[i] y_{i+1}``."""
    y_prev = np.asarray(y_prev, dtype=float)
    n = y_prev.shape[0]
    if stencil == "forward":
        back = np.zeros(n, dtype=bool)
    elif stencil == "backward":
        back = np.ones(n, dtype=bool)
    elif stencil == "upwind":
        back = y_prev >= 0.0
    else:
        raise ValueError(f"unknown stencil {stencil!r}; choose from {STENCILS}")
    inv_h = 1.0 / h
    di = np.where(back, inv_h, -inv_h)
    lo = np.where(back, -inv_h, 0.0)
    up = np.where(back, 0.0, inv_h)
    lo[0] = 0.0
    up[-1] = 0.0
    return lo, di, up


def _bcast(a, v):
    return a.reshape((-1,) + (1,) * (v.ndim - 1))


def apply_advection(bands, v):
    lo, di, up = bands
    out = _bcast(di, v) * v
    out[1:] += _bcast(lo[1:], v) * v[:-1]
    out[:-1] += _bcast(up[:-1], v) * v[1:]
    return out


def apply_advection_T(bands, v):
    lo, di, up = bands
    out = _bcast(di, v) * v
    out[:-1] += _bcast(lo[1:], v) * v[1:]
    out[1:] += _bcast(up[:-1], v) * v[:-1]
    return out


def _level_bands(y_prev, bands, diag_shift, scale):
    """Bands of ``diag_shift*I + scale*diag(y_prev) U``."""
    lo, di, up = bands
    return scale * y_prev * lo, diag_shift + scale * y_prev * di, scale * y_prev * up


def _solve_tri(lo, di, up, rhs, transpose=False, level=None):
    if transpose:
        lo, up = np.r_[0.0, up[:-1]], np.r_[lo[1:], 0.0]
    n = di.shape[0]
    triangular = not lo.any() or not up.any()
    if triangular:
        bad = np.flatnonzero(~(np.abs(di) >= PIVOT_TOL))
        if bad.size:
            i = int(bad[0])
            raise StepFailure(f"zero pivot at level {level}, node {i} (|pivot|={abs(di[i]):.3e})",
                              level=level, index=i)
    ab = np.zeros((3, n))
    ab[0, 1:] = up[:-1]
    ab[1] = di
    ab[2, :-1] = lo[1:]
    try:
        x = solve_banded((1, 1), ab, rhs, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise StepFailure(f"singular system at level {level}: {exc}", level=level) from exc
    if not np.all(np.isfinite(x)):
        raise StepFailure(f"non-finite solution at level {level}", level=level)
    return x


def step_state(y_prev, f_next, grid: Grid, stencil="upwind", level=None):
    """Solve ``(I + dt diag(y_prev) U) y_next = dt f_next + y_prev``."""
    y_prev = np.asarray(y_prev, dtype=float)
    bands = advection_bands(y_prev, grid.h, stencil)
    lo, di, up = _level_bands(y_prev, bands, 1.0, grid.dt)
    rhs = y_prev if f_next is None else grid.dt * np.asarray(f_next, dtype=float) + y_prev
    return _solve_tri(lo, di, up, rhs, level=level)


def _source(f, grid):
    if f is None:
        return None
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.N_t - 1, grid.n):
        raise ValueError(f"source term must have shape {(grid.N_t - 1, grid.n)}, got {f.shape}")
    return f


def solve_state(u, f, grid: Grid, stencil="upwind"):
    """March the state from ``y[0] = u``.  ``f`` holds ``f^2..f^{N_t}`` (shape ``(N_t-1, n)``) or ``None``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.n,):
        raise ValueError(f"initial condition must have shape ({grid.n},), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("initial condition is not finite")
    f = _source(f, grid)
    y = np.empty((grid.N_t, grid.n))
    y[0] = u
    for j in range(1, grid.N_t):
        y[j] = step_state(y[j - 1], None if f is None else f[j - 1], grid, stencil, level=j)
    return y


def state_residual(y, u, f, grid: Grid, stencil="upwind"):
    """``e(y, u)`` stacked as ``(N_t, n)``."""
    f = _source(f, grid)
    r = np.empty_like(y)
    r[0] = (y[0] - u) / grid.dt
    for j in range(1, grid.N_t):
        bands = advection_bands(y[j - 1], grid.h, stencil)
        r[j] = (y[j] - y[j - 1]) / grid.dt + y[j - 1] * apply_advection(bands, y[j])
        if f is not None:
            r[j] -= f[j - 1]
    return r


def apply_state_jacobian(y, v, grid: Grid, stencil="upwind"):
    """``e_y(y) v``."""
    dt = grid.dt
    out = np.empty_like(v)
    out[0] = v[0] / dt
    for j in range(1, grid.N_t):
        bands = advection_bands(y[j - 1], grid.h, stencil)
        Uy = apply_advection(bands, y[j])
        out[j] = ((v[j] - v[j - 1]) / dt
                  + _bcast(y[j - 1], v[j]) * apply_advection(bands, v[j])
                  + _bcast(Uy, v[j]) * v[j - 1])
    return out


def apply_state_jacobian_T(y, p, grid: Grid, stencil="upwind"):
    """``e_y(y)^T p``."""
    dt = grid.dt
    out = p / dt
    for j in range(1, grid.N_t):
        bands = advection_bands(y[j - 1], grid.h, stencil)
        Uy = apply_advection(bands, y[j])
        out[j] += apply_advection_T(bands, _bcast(y[j - 1], p[j]) * p[j])
        out[j - 1] += -p[j] / dt + _bcast(Uy, p[j]) * p[j]
    return out


def solve_linearized(y, du, grid: Grid, stencil="upwind"):
    """Sensitivity ``dy`` with ``e_y dy = -e_u du = (du/dt, 0, ..., 0)``.

    ``du`` may carry a trailing column axis to propagate several directions at
    once.
    """
    du = np.asarray(du, dtype=float)
    rhs = np.zeros((grid.N_t,) + du.shape)
    rhs[0] = du / grid.dt
    return apply_inverse_state_jacobian(y, rhs, grid, stencil)


def apply_inverse_state_jacobian(y, rhs, grid: Grid, stencil="upwind"):
    """``e_y(y)^{-1} rhs``, marching forward in time."""
    dt = grid.dt
    out = np.empty_like(rhs)
    out[0] = dt * rhs[0]
    for j in range(1, grid.N_t):
        bands = advection_bands(y[j - 1], grid.h, stencil)
        Uy = apply_advection(bands, y[j])
        lo, di, up = _level_bands(y[j - 1], bands, 1.0 / dt, 1.0)
        b = rhs[j] + out[j - 1] / dt - _bcast(Uy, out[j - 1]) * out[j - 1]
        out[j] = _solve_tri(lo, di, up, b, level=j)
    return out


def apply_inverse_state_transpose(y, v, grid: Grid, stencil="upwind"):
    """``e_y(y)^{-T} v`` by a backward-in-time recursion."""
    dt = grid.dt
    v = np.asarray(v, dtype=float)
    p = np.empty_like(v)
    nxt = None
    for j in range(grid.N_t - 1, 0, -1):
        bands = advection_bands(y[j - 1], grid.h, stencil)
        b = v[j].copy()
        if nxt is not None:
            pj1, Uy1 = nxt
            b += pj1 / dt - _bcast(Uy1, pj1) * pj1
        lo, di, up = _level_bands(y[j - 1], bands, 1.0 / dt, 1.0)
        p[j] = _solve_tri(lo, di, up, b, transpose=True, level=j)
        nxt = (p[j], apply_advection(bands, y[j]))
    b = v[0].copy()
    if nxt is not None:
        pj1, Uy1 = nxt
        b += pj1 / dt - _bcast(Uy1, pj1) * pj1
    p[0] = dt * b
    return p


def solve_adjoint(y, rhs, grid: Grid, stencil="upwind"):
    """Adjoint state ``p`` with ``e_y(y)^T p = rhs`` (rhs = observation misfit gradient)."""
    return apply_inverse_state_transpose(y, rhs, grid, stencil)


def apply_curvature(y, p, v, grid: Grid, stencil="upwind"):
    """Second derivative of ``p^T e(y, u)`` in ``y`` applied to ``v``.

    The only nonlinearity is ``diag(y^{j-1}) U_j y^j``, so the Hessian couples
    neighbouring levels only:

        (K v)_k = p^{k+1} * U_{k+1} v^{k+1} + U_k^T (p^k * v^{k-1})
    """
    out = np.zeros_like(v)
    for j in range(1, grid.N_t):
        bands = advection_bands(y[j - 1], grid.h, stencil)
        out[j - 1] += _bcast(p[j], v[j]) * apply_advection(bands, v[j])
        out[j] += apply_advection_T(bands, _bcast(p[j], v[j - 1]) * v[j - 1])
    return out


def state_jacobian_dense(y, grid: Grid, stencil="upwind"):
    """Dense ``e_y(y)`` of size ``(n N_t) x (n N_t)``; for small test instances only."""
    m = grid.n * grid.N_t
    eye = np.eye(m).reshape(grid.N_t, grid.n, m)
    return apply_state_jacobian(y, eye, grid, stencil).reshape(m, m)


def state_norm_bound(u, f, grid: Grid):
    """Right-hand side ``||u|| + dt * sum_{i<=j} ||f^i||`` for every level ``j``."""
    bound = np.full(grid.N_t, np.linalg.norm(u))
    if f is not None:
        bound[1:] += grid.dt * np.cumsum(np.linalg.norm(np.asarray(f), axis=1))
    return bound

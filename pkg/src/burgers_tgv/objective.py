"""Data assimilation problem: observations, background, smoothed cost and gradient.

The smoothed objective is

    J(u, w) = 1/2 |S y - z|^2_{R^-1} + 1/2 |u - u_b|^2_{B^-1} + mu/2 |w|^2
              + alpha sum H(Du - w) + beta sum H(Ew)

where ``y`` solves the discrete Burgers system with initial condition ``u``.
In TV mode ``w`` is fixed at zero and the regulariser is ``tv_weight sum H(Du)``.
"""

import json
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .dynamics import STENCILS, solve_adjoint, solve_state
from .grid import DifferenceOperators, Grid
from .huber import RegWeights, huber_constants, huber_grad, huber_value, tgv_exact, tgv_smoothed

__all__ = [
    "ObservationSet",
    "Background",
    "Problem",
    "GradientInfo",
    "strided_selection",
    "random_selection",
    "cost",
    "exact_cost",
    "reduced_gradient",
    "gradient_info",
    "kkt_residual",
    "neg_log_posterior",
    "map_equivalence_check",
    "gradient_check",
]


def _check_spd(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        if not np.all(M > 0):
            raise ValueError(f"{name} diagonal must be strictly positive")
    elif M.ndim == 2:
        if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
            raise ValueError(f"{name} must be a symmetric square matrix")
        if np.linalg.eigvalsh(M)[0] <= 0:
            raise ValueError(f"{name} must be positive definite")
    else:
        raise ValueError(f"{name} must be a diagonal vector or a square matrix")
    return M


def _apply(M, v):
    return M * v if M.ndim == 1 else M @ v


def _min_eig(M):
    return float(M.min()) if M.ndim == 1 else float(np.linalg.eigvalsh(M)[0])


def _dense(M):
    return np.diag(M) if M.ndim == 1 else M


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Point observations ``z_k = y[times[k], nodes[k]]`` with inverse covariance ``R_inv``."""

    z: np.ndarray
    times: np.ndarray
    nodes: np.ndarray
    R_inv: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        t = np.asarray(self.times, dtype=int)
        s = np.asarray(self.nodes, dtype=int)
        if not (z.ndim == t.ndim == s.ndim == 1 and z.shape == t.shape == s.shape):
            raise ValueError("z, times and nodes must be 1-D arrays of equal length")
        R = _check_spd(self.R_inv, "R_inv")
        if R.shape[0] != z.shape[0]:
            raise ValueError(f"R_inv has size {R.shape[0]} but there are {z.shape[0]} observations")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "nodes", s)
        object.__setattr__(self, "R_inv", R)

    @classmethod
    def identity_cov(cls, z, selection):
        sel = np.asarray(selection, dtype=int).reshape(-1, 2)
        return cls(np.asarray(z, dtype=float), sel[:, 0], sel[:, 1], np.ones(sel.shape[0]))

    @property
    def size(self) -> int:
        return int(self.z.shape[0])

    @property
    def selection(self):
        return list(zip(self.times.tolist(), self.nodes.tolist()))

    def validate(self, grid: Grid):
        if self.size and (self.times.min() < 0 or self.times.max() >= grid.N_t
                          or self.nodes.min() < 0 or self.nodes.max() >= grid.n):
            raise ValueError("observation index outside the space-time lattice")

    def extract(self, y):
        return y[self.times, self.nodes]


@dataclass(frozen=True, eq=False)
class Background:
    u_b: np.ndarray
    B_inv: np.ndarray

    def __post_init__(self):
        u_b = np.asarray(self.u_b, dtype=float)
        if u_b.ndim != 1:
            raise ValueError("background must be a vector")
        B = _check_spd(self.B_inv, "B_inv")
        if B.shape[0] != u_b.shape[0]:
            raise ValueError("B_inv size does not match background")
        object.__setattr__(self, "u_b", u_b)
        object.__setattr__(self, "B_inv", B)

    @property
    def min_eig(self) -> float:
        return _min_eig(self.B_inv)


@dataclass(frozen=True, eq=False)
class Problem:
    """Immutable description of one assimilation problem.

    ``source`` holds the forcing for levels 1..N_t-1 (shape ``(N_t-1, n)``) or
    ``None`` for no forcing.  ``meta`` carries free-form provenance (seed, noise
    level, experiment id) that is stored with the JSON form.
    """

    grid: Grid
    observations: ObservationSet
    background: Background
    weights: RegWeights
    gamma: float = 1e4
    stencil: str = "upwind"
    scale_by_h: bool = True
    source: Optional[np.ndarray] = None
    regularizer: str = "tgv"
    tv_weight: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stencil not in STENCILS:
            raise ValueError(f"unknown stencil {self.stencil!r}")
        if self.regularizer not in ("tgv", "tv"):
            raise ValueError(f"regularizer must be 'tgv' or 'tv', got {self.regularizer!r}")
        if self.tv_weight < 0:
            raise ValueError("tv_weight must be nonnegative")
        if not self.gamma >= 1:
            raise ValueError("gamma must be >= 1")
        if self.background.u_b.shape[0] != self.grid.n:
            raise ValueError("background length does not match grid")
        self.observations.validate(self.grid)
        if self.source is not None:
            f = np.asarray(self.source, dtype=float)
            if f.shape != (self.grid.N_t - 1, self.grid.n):
                raise ValueError(f"source must have shape {(self.grid.N_t - 1, self.grid.n)}")
            object.__setattr__(self, "source", f)
        object.__setattr__(self, "ops", DifferenceOperators(self.grid, self.scale_by_h))

    @property
    def is_tv(self) -> bool:
        return self.regularizer == "tv"

    def with_(self, **changes) -> "Problem":
        return replace(self, **changes)

    def state(self, u):
        return solve_state(u, self.source, self.grid, self.stencil)

    # JSON round trip ---------------------------------------------------
    def to_dict(self) -> dict:
        obs, bg = self.observations, self.background
        return {
            "grid": self.grid.to_dict(),
            "stencil": self.stencil,
            "scale_by_h": self.scale_by_h,
            "gamma": self.gamma,
            "weights": {"alpha": self.weights.alpha, "beta": self.weights.beta, "mu": self.weights.mu},
            "regularizer": self.regularizer,
            "tv_weight": self.tv_weight,
            "observations": {"z": obs.z.tolist(), "times": obs.times.tolist(),
                             "nodes": obs.nodes.tolist(), "R_inv": obs.R_inv.tolist()},
            "background": {"u_b": bg.u_b.tolist(), "B_inv": bg.B_inv.tolist()},
            "source": None if self.source is None else self.source.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Problem":
        g = d["grid"]
        o, b = d["observations"], d["background"]
        return cls(
            grid=Grid(int(g["n"]), int(g["N_t"]), float(g["domain_length"]), float(g["horizon"])),
            observations=ObservationSet(np.array(o["z"], dtype=float), np.array(o["times"], dtype=int),
                                        np.array(o["nodes"], dtype=int), np.array(o["R_inv"], dtype=float)),
            background=Background(np.array(b["u_b"], dtype=float), np.array(b["B_inv"], dtype=float)),
            weights=RegWeights(**d["weights"]),
            gamma=float(d["gamma"]),
            stencil=d["stencil"],
            scale_by_h=bool(d["scale_by_h"]),
            source=None if d.get("source") is None else np.array(d["source"], dtype=float),
            regularizer=d.get("regularizer", "tgv"),
            tv_weight=float(d.get("tv_weight", 0.0)),
            meta=dict(d.get("meta", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Problem":
        return cls.from_dict(json.loads(text))


# observation layouts ---------------------------------------------------

def strided_selection(grid: Grid, n_obs: int):
    """Evenly spread ``n_obs`` points over the lattice, skipping the initial level.

    Rows of the pattern sit at equally spaced time levels; within each row the
    nodes are equally spaced and shifted row by row so that different rows
    sample different nodes.
    """
    if n_obs < 0 or n_obs > grid.n * (grid.N_t - 1):
        raise ValueError(f"cannot place {n_obs} observations on this grid")
    if n_obs == 0:
        return []
    n_t = min(math.ceil(math.sqrt(n_obs)), grid.N_t - 1)
    n_x = math.ceil(n_obs / n_t)
    out = []
    for r in range(n_t):
        t = (r + 1) * (grid.N_t - 1) // n_t
        for k in range(n_x):
            if len(out) == n_obs:
                break
            node = int((k + (r + 1) / (n_t + 1)) * grid.n / n_x)
            out.append((t, min(node, grid.n - 1)))
    if len(set(out)) != len(out):
        raise ValueError("strided layout produced duplicate points; use random selection")
    return out


def random_selection(grid: Grid, n_obs: int, rng: np.random.Generator):
    total = grid.n * grid.N_t
    if n_obs < 0 or n_obs > total:
        raise ValueError(f"cannot place {n_obs} observations on this grid")
    flat = np.sort(rng.choice(total, size=n_obs, replace=False))
    return [(int(i // grid.n), int(i % grid.n)) for i in flat]


# cost and derivatives --------------------------------------------------

def _misfit(problem, y):
    obs = problem.observations
    r = obs.extract(y) - obs.z
    Rr = _apply(obs.R_inv, r)
    return 0.5 * float(r @ Rr), Rr


def _regularizer(problem, u, w):
    if problem.is_tv:
        return problem.tv_weight * float(np.sum(huber_value(problem.ops.D(u), problem.gamma)))
    return (0.5 * problem.weights.mu * float(w @ w)
            + tgv_smoothed(u, w, problem.weights, problem.gamma, problem.ops))


def _background(problem, u):
    d = u - problem.background.u_b
    return 0.5 * float(d @ _apply(problem.background.B_inv, d))


def _zero_w(problem, w):
    if w is None:
        return np.zeros(problem.grid.n - 1)
    w = np.asarray(w, dtype=float)
    if w.shape != (problem.grid.n - 1,):
        raise ValueError(f"w must have shape ({problem.grid.n - 1},)")
    return w


def cost(problem: Problem, u, w=None, return_state=False):
    """Smoothed objective; optionally also returns the state trajectory."""
    u = np.asarray(u, dtype=float)
    w = _zero_w(problem, w)
    y = problem.state(u)
    val = float(_misfit(problem, y)[0] + _background(problem, u) + _regularizer(problem, u, w))
    return (val, y) if return_state else val


def exact_cost(problem: Problem, u, w=None, include_mu=False):
    """Objective with the true absolute values in place of the Huber terms."""
    u = np.asarray(u, dtype=float)
    w = _zero_w(problem, w)
    y = problem.state(u)
    val = _misfit(problem, y)[0] + _background(problem, u)
    if problem.is_tv:
        return val + problem.tv_weight * float(np.sum(np.abs(problem.ops.D(u))))
    val += tgv_exact(u, w, problem.weights, problem.ops)
    if include_mu:
        val += 0.5 * problem.weights.mu * float(w @ w)
    return float(val)


class GradientInfo(NamedTuple):
    cost: float
    y: np.ndarray
    p: np.ndarray
    g_u: np.ndarray
    g_w: np.ndarray


def gradient_info(problem: Problem, u, w=None, y=None) -> GradientInfo:
    """Cost, state, adjoint and reduced gradient at ``(u, w)`` in one pass."""
    u = np.asarray(u, dtype=float)
    w = _zero_w(problem, w)
    if y is None:
        y = problem.state(u)
    J_mis, Rr = _misfit(problem, y)
    rhs = np.zeros_like(y)
    obs = problem.observations
    np.add.at(rhs, (obs.times, obs.nodes), Rr)
    p = solve_adjoint(y, rhs, problem.grid, problem.stencil)
    ops, gam = problem.ops, problem.gamma
    g_u = p[0] / problem.grid.dt + _apply(problem.background.B_inv, u - problem.background.u_b)
    if problem.is_tv:
        g_u = g_u + problem.tv_weight * ops.Dt(huber_grad(ops.D(u), gam))
        g_w = np.zeros_like(w)
    else:
        a, b, mu = problem.weights.alpha, problem.weights.beta, problem.weights.mu
        h1 = huber_grad(ops.D(u) - w, gam)
        g_u = g_u + a * ops.Dt(h1)
        g_w = mu * w - a * h1 + b * ops.Et(huber_grad(ops.E(w), gam))
    J = float(J_mis + _background(problem, u) + _regularizer(problem, u, w))
    return GradientInfo(J, y, p, g_u, g_w)


def reduced_gradient(problem: Problem, u, w=None):
    info = gradient_info(problem, u, w)
    return info.g_u, info.g_w


def kkt_residual(problem: Problem, u, w, q1, q2, info: Optional[GradientInfo] = None):
    """Max-norm of the smoothed stationarity equations and the dual consistency gaps."""
    if info is None:
        info = gradient_info(problem, u, w)
    parts = [np.abs(info.g_u).max()]
    if not problem.is_tv:
        ops, gam = problem.ops, problem.gamma
        parts += [np.abs(info.g_w).max(),
                  np.abs(q1 - huber_grad(ops.D(u) - w, gam)).max(),
                  np.abs(q2 - huber_grad(ops.E(w), gam)).max()]
    elif q1 is not None:
        parts.append(np.abs(q1 - huber_grad(problem.ops.D(u), problem.gamma)).max())
    return float(max(parts))


def _smooth_pattern(problem, u, w):
    """Huber regions of every argument and the signs steering the upwind stencil."""
    k = huber_constants(problem.gamma)
    args = [problem.ops.D(u)] if problem.is_tv else [problem.ops.D(u) - w, problem.ops.E(w)]
    a = np.abs(np.concatenate(args))
    regions = np.where(a < k.l1, 0, np.where(a > k.l2, 2, 1))
    return np.concatenate([regions, (problem.state(u) >= 0).ravel()])


def gradient_check(problem: Problem, u, w=None, n_coords=20, eps=1e-6, rng=None):
    """Compare the reduced gradient with central differences of ``cost``.

    Coordinates are drawn at random among those whose perturbation by
    ``+-eps`` leaves every Huber argument in its region and every state sign
    unchanged, so the cost is smooth along the difference stencil.  Returns
    ``(coords, analytic, finite_diff, rel_err)`` with coordinates indexing the
    stacked vector ``(u, w)`` (just ``u`` in TV mode) and
    ``rel_err = |g - fd| / max(|g|, |fd|, 1e-12)``.
    """
    rng = np.random.default_rng(rng)
    u = np.asarray(u, dtype=float)
    w = _zero_w(problem, w)
    n = problem.grid.n
    g_u, g_w = reduced_gradient(problem, u, w)
    g = g_u if problem.is_tv else np.concatenate([g_u, g_w])
    x = u if problem.is_tv else np.concatenate([u, w])

    def split(v):
        return (v, w) if problem.is_tv else (v[:n], v[n:])

    base = _smooth_pattern(problem, *split(x))
    coords, fd = [], []
    for i in rng.permutation(x.size):
        if len(coords) == n_coords:
            break
        e = np.zeros_like(x)
        e[i] = eps
        if not (np.array_equal(_smooth_pattern(problem, *split(x + e)), base)
                and np.array_equal(_smooth_pattern(problem, *split(x - e)), base)):
            continue
        coords.append(int(i))
        fd.append((cost(problem, *split(x + e)) - cost(problem, *split(x - e))) / (2 * eps))
    coords = np.array(coords, dtype=int)
    fd = np.array(fd)
    an = g[coords]
    rel = np.abs(an - fd) / np.maximum(np.maximum(np.abs(an), np.abs(fd)), 1e-12)
    return coords, an, fd, rel


# Bayesian view ---------------------------------------------------------

def neg_log_posterior(problem: Problem, u, w, theta=1.0):
    """Negative log of Gaussian likelihood times Laplace prior, up to the evidence.

    The data vector stacks the observations and the background; the prior is a
    Laplace density with scale ``theta`` on each entry of ``[[aD, -aI], [0, bE]] (u, w)``.
    All normalising constants are kept so that only the evidence is dropped.
    """
    u = np.asarray(u, dtype=float)
    w = _zero_w(problem, w)
    obs, bg = problem.observations, problem.background
    y = problem.state(u)
    G_inv = np.zeros((obs.size + problem.grid.n,) * 2)
    G_inv[:obs.size, :obs.size] = _dense(obs.R_inv)
    G_inv[obs.size:, obs.size:] = _dense(bg.B_inv)
    r = np.concatenate([obs.z - obs.extract(y), bg.u_b - u])
    m = r.shape[0]
    logdet_G = -np.linalg.slogdet(G_inv)[1]
    gauss = 0.5 * m * math.log(2 * math.pi) + 0.5 * logdet_G + 0.5 * float(r @ G_inv @ r)
    a, b = problem.weights.alpha, problem.weights.beta
    Dx = np.concatenate([a * (problem.ops.D(u) - w), b * problem.ops.E(w)])
    laplace = Dx.shape[0] * math.log(2 * theta) + float(np.sum(np.abs(Dx))) / theta
    return gauss + laplace


def map_equivalence_check(problem: Problem, x1, x2, theta=1.0):
    """Return ``(J(x1) - J(x2), -log post(x1) + log post(x2))`` with the unsmoothed cost."""
    (u1, w1), (u2, w2) = x1, x2
    d_cost = exact_cost(problem, u1, w1) - exact_cost(problem, u2, w2)
    d_post = neg_log_posterior(problem, u1, w1, theta) - neg_log_posterior(problem, u2, w2, theta)
    return d_cost, d_post

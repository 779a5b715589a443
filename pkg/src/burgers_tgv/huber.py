"""C^2 Huber smoothing of |t| and the TGV functional built on it.

The smoothing splits the real line into three regions

    B = {|t| <  l1}           quadratic: gamma t^2 / 2
    I = {l1 <= |t| <= l2}     cubic blend
    A = {|t| >  l2}           shifted absolute value

with ``l1 = (1 - 1/(2 gamma))/gamma`` and ``l2 = (1 + 1/(2 gamma))/gamma``.
Points exactly on ``l1`` or ``l2`` belong to the blend region.  All functions
here work on the scalar (1-D) specialisation, where ``x/|x|`` reduces to the
sign and ``1/|x| - x*x/|x|^3`` vanishes identically.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "HuberConstants",
    "huber_constants",
    "RegWeights",
    "huber_value",
    "huber_grad",
    "huber_hess_diag",
    "projected_hessian",
    "projected_Q1",
    "projected_Q2",
    "tgv_smoothed",
    "tgv_exact",
]


@dataclass(frozen=True)
class HuberConstants:
    gamma: float
    l1: float
    l2: float
    F: float
    G: float
    C: float
    D: float
    C1: float
    K: float


@lru_cache(maxsize=64)
def huber_constants(gamma: float) -> HuberConstants:
    gamma = float(gamma)
    if not gamma >= 1.0:
        raise ValueError(f"Huber parameter must satisfy gamma >= 1, got {gamma}")
    l1 = (1.0 - 1.0 / (2.0 * gamma)) / gamma
    l2 = (1.0 + 1.0 / (2.0 * gamma)) / gamma
    F = 1.0 - (2.0 * gamma + 1.0) ** 2 / (8.0 * gamma)
    G = 0.5 * gamma * (2.0 * gamma + 1.0)
    C = -0.5 * gamma ** 3
    D = (0.5 * gamma - 0.5 * G) * l1 ** 2 - F * l1 - C / 3.0 * l1 ** 3
    C1 = 0.5 * gamma * l1 ** 2 - l2
    K = F * (l2 - l1) + 0.5 * G * (l2 ** 2 - l1 ** 2) + C / 3.0 * (l2 ** 3 - l1 ** 3)
    return HuberConstants(gamma, l1, l2, F, G, C, D, C1, K)


@dataclass(frozen=True)
class RegWeights:
    """TGV weights ``alpha`` (first order), ``beta`` (second order) and the
    Tikhonov weight ``mu`` on ``w``.  ``mu = 0`` is accepted but the reduced
    Newton matrix is then only semidefinite."""

    alpha: float
    beta: float
    mu: float = 1e-10

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.mu >= 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")

    @property
    def degenerate(self) -> bool:
        return self.mu == 0.0


def _regions(a, k):
    inner = a < k.l1
    outer = a > k.l2
    return inner, outer, ~(inner | outer)


def huber_value(t, gamma):
    k = huber_constants(gamma)
    t = np.asarray(t, dtype=float)
    a = np.abs(t)
    inner, outer, blend = _regions(a, k)
    out = np.where(inner, 0.5 * k.gamma * t * t, 0.0)
    out = np.where(outer, a + k.C1 + k.K, out)
    out = np.where(blend, k.F * a + 0.5 * k.G * a * a + k.C / 3.0 * a ** 3 + k.D, out)
    return out if out.ndim else float(out)


def _theta(a, gamma):
    return 1.0 - gamma * a + 1.0 / (2.0 * gamma)


def huber_grad(x, gamma):
    """Componentwise derivative ``h_gamma``; always within [-1, 1]."""
    k = huber_constants(gamma)
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    s = np.sign(x)
    inner, outer, blend = _regions(a, k)
    th = _theta(a, k.gamma)
    out = np.where(inner, k.gamma * x, s)
    out = np.where(blend, s * (1.0 - 0.5 * k.gamma * th * th), out)
    return out


def huber_hess_diag(x, gamma):
    """Diagonal of ``h'_gamma``: gamma on B, gamma^2 theta on I, exactly 0 on A."""
    k = huber_constants(gamma)
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    inner, outer, blend = _regions(a, k)
    out = np.zeros_like(a)
    out[inner] = k.gamma
    out[blend] = k.gamma ** 2 * _theta(a[blend], k.gamma)
    return out


def projected_hessian(arg, q, gamma, clip="unit"):
    """Huber curvature with the sign factor replaced by the clipped dual.

    With ``clip="unit"`` the clipped dual is ``q/max(1,|q|)``; on A the entry is
    ``(1 - s*q_c)/|arg|``, which is 0 when the dual equals the sign.  With
    ``clip="gamma"`` it is ``q/max(1,gamma|q|)``, which keeps the A entries
    strictly positive.  On the blend region the last term
    ``gamma^2 theta (arg/|arg|)^2`` keeps the unprojected sign factor so it
    stays nonnegative.
    """
    k = huber_constants(gamma)
    arg = np.asarray(arg, dtype=float)
    q = np.asarray(q, dtype=float)
    a = np.abs(arg)
    s = np.sign(arg)
    inner, outer, blend = _regions(a, k)
    if clip == "unit":
        qc = q / np.maximum(1.0, np.abs(q))
    elif clip == "gamma":
        qc = q / np.maximum(1.0, k.gamma * np.abs(q))
    else:
        raise ValueError(f"unknown clip rule {clip!r}")
    out = np.full_like(a, k.gamma)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        bracket = (1.0 - qc * s) / a
    out[outer] = bracket[outer]
    th = _theta(a[blend], k.gamma)
    out[blend] = ((1.0 - 0.5 * k.gamma * th * th) * bracket[blend]
                  + k.gamma ** 2 * th * s[blend] ** 2)
    return out


def projected_Q1(zeta, q1, gamma, clip="unit"):
    """``diag(Q1)`` for ``zeta = Du - w``."""
    return projected_hessian(zeta, q1, gamma, clip)


def projected_Q2(Ew, q2, gamma, clip="unit"):
    """``diag(Q2)`` for the argument ``Ew``."""
    return projected_hessian(Ew, q2, gamma, clip)


def tgv_smoothed(u, w, weights: RegWeights, gamma, ops):
    return (weights.alpha * np.sum(huber_value(ops.D(u) - w, gamma))
            + weights.beta * np.sum(huber_value(ops.E(w), gamma)))


def tgv_exact(u, w, weights: RegWeights, ops):
    return (weights.alpha * np.sum(np.abs(ops.D(u) - w))
            + weights.beta * np.sum(np.abs(ops.E(w))))

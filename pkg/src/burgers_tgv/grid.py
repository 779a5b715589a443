"""Space-time mesh and the finite-difference operators used by the TGV term."""

from dataclasses import dataclass

import numpy as np

__all__ = ["Grid", "build_grid", "DifferenceOperators"]


@dataclass(frozen=True)
class Grid:
    """Uniform mesh on (0, L) x (0, T) with homogeneous Dirichlet boundaries.

    Only interior nodes ``x_i = i*h`` (i = 1..n) are unknowns.  ``N_t`` is the
    number of stored time levels; level 0 holds the initial condition.
    """

    n: int
    N_t: int
    domain_length: float = 10.0
    horizon: float = 1.0

    @property
    def h(self) -> float:
        return self.domain_length / (self.n + 1)

    @property
    def dt(self) -> float:
        return self.horizon / (self.N_t + 1)

    @property
    def x(self) -> np.ndarray:
        return self.h * np.arange(1, self.n + 1)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.N_t)

    def to_dict(self) -> dict:
        return {"n": self.n, "N_t": self.N_t,
                "domain_length": self.domain_length, "horizon": self.horizon}


def build_grid(n: int, N_t: int, L: float = 10.0, T: float = 1.0) -> Grid:
    if int(n) != n or n < 3:
        raise ValueError(f"need n >= 3 interior points, got {n}")
    if int(N_t) != N_t or N_t < 2:
        raise ValueError(f"need N_t >= 2 time levels, got {N_t}")
    if not (L > 0 and np.isfinite(L)):
        raise ValueError(f"domain length must be positive, got {L}")
    if not (T > 0 and np.isfinite(T)):
        raise ValueError(f"time horizon must be positive, got {T}")
    return Grid(int(n), int(N_t), float(L), float(T))


class DifferenceOperators:
    """Matrix-free forward difference ``D`` and backward difference ``E``.

    ``D`` maps R^n -> R^(n-1), ``(Du)_i = (u_{i+1} - u_i)/h``.
    ``E`` maps R^(n-1) -> R^(n-1) with a zero ghost value on the left, so
    ``(Ew)_1 = w_1/h`` and ``(Ew)_i = (w_i - w_{i-1})/h``.
    With ``scale_by_h=False`` the 1/h factor is dropped.
    """

    def __init__(self, grid: Grid, scale_by_h: bool = True):
        self.grid = grid
        self.scale_by_h = bool(scale_by_h)
        self.scale = 1.0 / grid.h if scale_by_h else 1.0

    def _check(self, v, size, name):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != size:
            raise ValueError(f"{name}: expected leading dimension {size}, got {v.shape[0]}")
        return v

    def D(self, u):
        u = self._check(u, self.grid.n, "D")
        return self.scale * (u[1:] - u[:-1])

    def Dt(self, v):
        v = self._check(v, self.grid.n - 1, "Dt")
        out = np.zeros((self.grid.n,) + v.shape[1:])
        out[:-1] -= v
        out[1:] += v
        return self.scale * out

    def E(self, w):
        w = self._check(w, self.grid.n - 1, "E")
        out = w.copy()
        out[1:] -= w[:-1]
        return self.scale * out

    def Et(self, v):
        v = self._check(v, self.grid.n - 1, "Et")
        out = v.copy()
        out[:-1] -= v[1:]
        return self.scale * out

    # dense forms, used by tests and by the reduced Hessian assembly
    def D_matrix(self) -> np.ndarray:
        return self.D(np.eye(self.grid.n))

    def E_matrix(self) -> np.ndarray:
        return self.E(np.eye(self.grid.n - 1))

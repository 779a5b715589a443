import numpy as np
import pytest

from burgers_tgv.grid import build_grid
from burgers_tgv.huber import RegWeights
from burgers_tgv.objective import Background, ObservationSet, Problem, random_selection


def random_problem(seed, n=20, N_t=30, gamma=1e4, n_obs=15, alpha=2.0, beta=0.1, mu=1e-10,
                   stencil="upwind", regularizer="tgv", tv_weight=0.0):
    """Small random problem with observations of a perturbed smooth trajectory."""
    rng = np.random.default_rng(seed)
    grid = build_grid(n, N_t)
    truth = 0.5 + 0.5 * np.sin(2 * np.pi * grid.x / grid.domain_length + rng.uniform(0, 6))
    sel = random_selection(grid, n_obs, rng)
    y = Problem(grid, ObservationSet.identity_cov(np.zeros(n_obs), sel),
                Background(truth, np.full(n, 10.0)), RegWeights(alpha, beta, mu),
                stencil=stencil).state(truth)
    z = np.array([y[t, i] for t, i in sel]) + 0.01 * rng.standard_normal(n_obs)
    u_b = truth + 0.1 * rng.standard_normal(n)
    return Problem(grid, ObservationSet.identity_cov(z, sel), Background(u_b, np.full(n, 10.0)),
                   RegWeights(alpha, beta, mu), gamma=gamma, stencil=stencil,
                   regularizer=regularizer, tv_weight=tv_weight)


@pytest.fixture
def small_problem():
    return random_problem(0, gamma=10.0)


_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def record_criterion(request):
    """Print and remember one PASS/FAIL line for an acceptance criterion."""
    store = request.config.stash.setdefault(_CRITERIA, [])

    def record(number, title, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title} | {detail}"
        print(line)
        store.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

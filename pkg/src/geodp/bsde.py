"""Backward SDE solver along a trajectory ensemble.

Discretization: backward in time,

    Z_i = E[Y_{i+1} dW^T | X_i] / dt
    Y_i = E[Y_{i+1} | X_i] + dt * f(t_i, X_i, Y_i, Z_i, v_i)

with the implicit Y_i resolved by a fixed number of Picard iterations
(contraction guard K*dt < 1), and conditional expectations estimated by global
least squares on ambient monomial features of X_i.  When all paths share the
state (the deterministic start node, or any degenerate layer) plain averaging
is used instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb
from typing import Callable, Optional

import numpy as np

from .dynamics import CHUNK, TrajectoryEnsemble
from .errors import (
    ComparisonViolated,
    ContractionViolated,
    GridMismatch,
    IllConditionedRegression,
)

_COND_LIMIT = 1e12
# Relative singular-value cutoff: ambient monomials are exactly collinear on an
# embedded manifold (e.g. x1^2 + x2^2 = 1), so the null directions of the
# feature matrix are structural and are truncated rather than flagged.
_SV_CUTOFF = 1e-12


@dataclass(frozen=True)
class Driver:
    """Generator f(t, x, y, z, v); must be vectorized over paths."""

    f: Callable[[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    lipschitz_K: float
    bound_K0: float

    def __call__(self, t, x, y, z, v):
        return self.f(t, x, y, z, v)


@dataclass(frozen=True)
class TerminalCost:
    phi: Callable[[np.ndarray], np.ndarray]
    lipschitz_K: float

    def __call__(self, x):
        return self.phi(x)


@dataclass(frozen=True)
class RegressionBasis:
    """Ambient monomials of the embedded coordinates up to a total degree."""

    degree: int = 2

    def feature_count(self, ambient_dim: int) -> int:
        return comb(ambient_dim + self.degree, self.degree)

    def features(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        N, n = X.shape
        cols = [np.ones(N)]
        for deg in range(1, self.degree + 1):
            for combo in combinations_with_replacement(range(n), deg):
                col = np.ones(N)
                for j in combo:
                    col = col * X[:, j]
                cols.append(col)
        return np.stack(cols, axis=1)


@dataclass(frozen=True)
class BsdeSolution:
    grid: "object"
    Y: np.ndarray  # (n_steps+1, n_paths)
    Z: np.ndarray  # (n_steps, n_paths, d)
    y_at_t0: float
    picard_residual: float
    ensemble: Optional[TrajectoryEnsemble] = field(default=None, repr=False)


def _chunked_gram(F: np.ndarray, R: np.ndarray):
    """Phi^T Phi and Phi^T R accumulated in fixed-size chunks, in index order."""
    k = F.shape[1]
    G = np.zeros((k, k))
    b = np.zeros((k, R.shape[1]))
    for p0 in range(0, F.shape[0], CHUNK):
        Fc = F[p0 : p0 + CHUNK]
        Rc = R[p0 : p0 + CHUNK]
        G += Fc.T @ Fc
        b += Fc.T @ Rc
    return G, b


def _regress(F: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Least-squares prediction of each column of R on features F, at the samples.

    Solved through the SVD of the Gram matrix with structural null directions
    truncated; raises IllConditionedRegression only if the truncated system is
    still numerically unusable.
    """
    G, b = _chunked_gram(F, R)
    w, V = np.linalg.eigh(G)
    wmax = float(w[-1])
    if wmax <= 0.0:
        raise IllConditionedRegression("feature Gram matrix is zero")
    keep = w > wmax * _SV_CUTOFF
    if float(wmax / np.min(w[keep])) > _COND_LIMIT:
        raise IllConditionedRegression(
            f"truncated Gram condition {wmax / np.min(w[keep]):.3g}"
        )
    Vk = V[:, keep]
    beta = Vk @ ((Vk.T @ b) / w[keep][:, None])
    return F @ beta


def conditional_expectation(
    X: np.ndarray, R: np.ndarray, basis: RegressionBasis
) -> np.ndarray:
    """E[R | X] per path; plain average when all paths share the state."""
    R = np.atleast_2d(np.asarray(R, dtype=float).T).T  # (N, m)
    spread = np.max(np.abs(X - X[0:1])) if X.shape[0] > 1 else 0.0
    if spread < 1e-12:
        mean = np.mean(R, axis=0)
        return np.broadcast_to(mean, R.shape).copy()
    try:
        return _regress(basis.features(X), R)
    except IllConditionedRegression:
        if basis.degree <= 1:
            raise
        return _regress(RegressionBasis(degree=1).features(X), R)


def backward_sweep(
    states: np.ndarray,
    increments: np.ndarray,
    grid,
    driver_fn: Callable[[int, np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    terminal_values: np.ndarray,
    basis: RegressionBasis,
    picard_iters: int = 3,
) -> BsdeSolution:
    """Generic backward recursion with per-path terminal values.

    driver_fn(i, x, y, z) evaluates the generator on step i (control already
    folded in by the caller).
    """
    n_steps = grid.n_steps
    n_paths = states.shape[1]
    d = increments.shape[2] if n_steps > 0 else 0
    dt = grid.dt

    Y = np.empty((n_steps + 1, n_paths))
    Z = np.zeros((n_steps, n_paths, d))
    Y[n_steps] = np.asarray(terminal_values, dtype=float)
    residual = 0.0

    for i in range(n_steps - 1, -1, -1):
        X = states[i]
        dW = increments[i]
        R = np.concatenate([Y[i + 1][:, None], Y[i + 1][:, None] * dW], axis=1)
        pred = conditional_expectation(X, R, basis)
        y_bar = pred[:, 0]
        Z[i] = pred[:, 1:] / dt
        y = y_bar
        for _ in range(picard_iters):
            y_new = y_bar + dt * driver_fn(i, X, y, Z[i])
            residual = max(residual, float(np.max(np.abs(y_new - y))))
            y = y_new
        Y[i] = y

    return BsdeSolution(
        grid=grid,
        Y=Y,
        Z=Z,
        y_at_t0=float(np.mean(Y[0])),
        picard_residual=residual,
    )


def _policy_driver(ens: TrajectoryEnsemble, driver: Driver):
    times = ens.grid.times

    def fn(i, x, y, z):
        v = ens.policy.values(i, x)
        return driver(times[i], x, y, z, v)

    return fn


def solve_backward(
    ens: TrajectoryEnsemble,
    driver: Driver,
    terminal: TerminalCost,
    basis: RegressionBasis,
    picard_iters: int = 3,
) -> BsdeSolution:
    """Solve the BSDE with terminal cost at maturity along the ensemble."""
    if ens.grid.n_steps > 0 and driver.lipschitz_K * ens.grid.dt >= 1.0:
        raise ContractionViolated(
            f"K*dt = {driver.lipschitz_K * ens.grid.dt:.3g} >= 1"
        )
    sol = backward_sweep(
        ens.states,
        ens.noise.increments,
        ens.grid,
        _policy_driver(ens, driver),
        terminal(ens.states[-1]),
        basis,
        picard_iters=picard_iters,
    )
    return BsdeSolution(
        grid=sol.grid,
        Y=sol.Y,
        Z=sol.Z,
        y_at_t0=sol.y_at_t0,
        picard_residual=sol.picard_residual,
        ensemble=ens,
    )


def semigroup(
    ens: TrajectoryEnsemble,
    driver: Driver,
    basis: RegressionBasis,
    eta: np.ndarray,
    picard_iters: int = 3,
) -> float:
    """One-window recursion operator: BSDE value at the window start with
    terminal payoff eta at the window end.

    With a zero-length window this is just eta at the (deterministic) start;
    with f == 0 it reduces to the sample mean of eta.
    """
    eta = np.asarray(eta, dtype=float)
    if ens.grid.n_steps == 0:
        return float(np.mean(eta))
    if driver.lipschitz_K * ens.grid.dt >= 1.0:
        raise ContractionViolated(
            f"K*dt = {driver.lipschitz_K * ens.grid.dt:.3g} >= 1"
        )
    sol = backward_sweep(
        ens.states,
        ens.noise.increments,
        ens.grid,
        _policy_driver(ens, driver),
        eta,
        basis,
        picard_iters=picard_iters,
    )
    return sol.y_at_t0


@dataclass(frozen=True)
class StabilityReport:
    lhs: float
    rhs: float
    beta0: float
    passed: bool


def stability_check(
    sol1: BsdeSolution,
    sol2: BsdeSolution,
    xi1: np.ndarray,
    xi2: np.ndarray,
    phi1: np.ndarray,
    phi2: np.ndarray,
    C_L: float,
    slack: float = 0.05,
) -> StabilityReport:
    """Mean-square stability of a BSDE pair differing only in (xi, phi).

    Both solutions must share the grid, the noise and the common generator g;
    phi1/phi2 are the per-path-per-step additive perturbation processes,
    shape (n_steps, n_paths).
    """
    if sol1.grid != sol2.grid:
        raise GridMismatch("solutions built on different time grids")
    if (
        sol1.ensemble is not None
        and sol2.ensemble is not None
        and sol1.ensemble.noise.seed != sol2.ensemble.noise.seed
    ):
        raise GridMismatch("solutions do not share the noise")
    beta0 = 16.0 * (1.0 + C_L**2)
    grid = sol1.grid
    dt = grid.dt
    t = grid.times
    horizon = grid.T - grid.t0

    dY = sol1.Y - sol2.Y
    dZ = sol1.Z - sol2.Z
    w = np.exp(beta0 * (t[:-1] - grid.t0))  # left-endpoint weights
    integrand = dY[:-1] ** 2 + np.sum(dZ**2, axis=-1)
    lhs = float(
        (sol1.y_at_t0 - sol2.y_at_t0) ** 2
        + 0.5 * np.mean(np.sum(w[:, None] * integrand, axis=0) * dt)
    )
    dxi = np.asarray(xi1, dtype=float) - np.asarray(xi2, dtype=float)
    dphi = np.asarray(phi1, dtype=float) - np.asarray(phi2, dtype=float)
    rhs = float(
        np.mean(dxi**2) * np.exp(beta0 * horizon)
        + np.mean(np.sum(w[:, None] * dphi**2, axis=0) * dt)
    )
    return StabilityReport(lhs=lhs, rhs=rhs, beta0=beta0, passed=lhs <= rhs * (1.0 + slack))


def comparison_check(
    sol_low: BsdeSolution,
    sol_high: BsdeSolution,
    tol: float = 1e-8 + 1e-3,
) -> bool:
    """Assert Y_low <= Y_high + tol at every node; raises ComparisonViolated."""
    if sol_low.grid != sol_high.grid:
        raise GridMismatch("solutions built on different time grids")
    diff = sol_low.Y - sol_high.Y
    if np.any(diff > tol):
        i, p = np.unravel_index(int(np.argmax(diff)), diff.shape)
        raise ComparisonViolated(int(i), int(p), float(sol_low.Y[i, p]), float(sol_high.Y[i, p]))
    return True

"""Controlled diffusion simulation in ambient coordinates.

One Euler-Maruyama step reads

    X' = proj( X + v0*V0 dt + sum_a v_a*Va dW^a + 1/2 sum_a v_a^2 (D_Va Va) dt )

where the last term is the ambient directional-derivative correction that makes
the projected chain consistent with the geometric (Stratonovich) dynamics, and
proj is the metric projection, which enforces manifold invariance at every
step instead of relying on it analytically.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import rng
from .errors import GridMismatch, NonTangentField
from .geometry import ManifoldModel, VectorField, ambient_derivative

# Paths are processed in fixed-size chunks regardless of worker count so that
# any cross-path reduction downstream can use a partition-independent order.
CHUNK = 2048


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        # n_steps == 0 with t0 == T is the degenerate window used by the
        # zero-delta semigroup; otherwise the grid must be nontrivial.
        if self.n_steps == 0:
            if self.t0 != self.T:
                raise ValueError("zero-step grid requires t0 == T")
            return
        if not self.t0 < self.T:
            raise ValueError(f"need t0 < T, got [{self.t0}, {self.T}]")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def dt(self) -> float:
        if self.n_steps == 0:
            return 0.0
        return (self.T - self.t0) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def window(self, i0: int, i1: int) -> "TimeGrid":
        """Sub-grid covering steps [i0, i1)."""
        t = self.times
        return TimeGrid(t0=float(t[i0]), T=float(t[i1]), n_steps=i1 - i0)


@dataclass(frozen=True)
class BrownianGrid:
    """Counter-based Brownian increments on a time grid.

    increments[i, p, a] is a pure function of (seed, i, p, a); see rng.py.
    """

    grid: TimeGrid
    d: int
    n_paths: int
    seed: int
    antithetic: bool = False
    increments: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        inc = rng.normal_increments(
            self.seed, self.grid.n_steps, self.n_paths, self.d, self.grid.dt,
            antithetic=self.antithetic,
        )
        object.__setattr__(self, "increments", inc)


@dataclass(frozen=True)
class ControlSet:
    """A box in R^{d+1} with a finite uniform grid used for minimization."""

    lower: np.ndarray
    upper: np.ndarray
    grid_points_per_axis: int = 1

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        up = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        if lo.shape != up.shape:
            raise ValueError("lower/upper shape mismatch")
        if np.any(lo > up):
            raise ValueError("need lower <= upper componentwise")
        if self.grid_points_per_axis < 1:
            raise ValueError("grid_points_per_axis must be >= 1")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, v, tol=1e-12) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(
            np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol)
        )

    def grid(self, points_per_axis: Optional[int] = None) -> np.ndarray:
        """Finite control grid, rows in lexicographic order.

        Axes with lower == upper collapse to a single point.
        """
        k = points_per_axis or self.grid_points_per_axis
        axes = []
        for lo, up in zip(self.lower, self.upper):
            if up - lo < 1e-15:
                axes.append(np.array([lo]))
            else:
                axes.append(np.linspace(lo, up, k))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


class ControlPolicy:
    """Piecewise-constant-in-time control: open-loop or feedback.

    ``values(i, X)`` returns the control applied on step i for states X of
    shape (N, n), as an array of shape (N, d+1).
    """

    def __init__(self, kind: str, fn: Callable[[int, np.ndarray], np.ndarray]):
        self.kind = kind
        self._fn = fn

    def values(self, i: int, X: np.ndarray) -> np.ndarray:
        return self._fn(i, np.asarray(X, dtype=float))

    @classmethod
    def constant(cls, v) -> "ControlPolicy":
        v = np.atleast_1d(np.asarray(v, dtype=float))

        def fn(i, X):
            return np.broadcast_to(v, (X.shape[0], v.shape[0])).copy()

        return cls("open_loop_constant", fn)

    @classmethod
    def piecewise(cls, per_step: Sequence) -> "ControlPolicy":
        vals = np.asarray(per_step, dtype=float)

        def fn(i, X):
            return np.broadcast_to(vals[i], (X.shape[0], vals.shape[1])).copy()

        p = cls("open_loop_piecewise", fn)
        p.n_steps = vals.shape[0]
        return p

    @classmethod
    def feedback(cls, fn: Callable[[int, np.ndarray], np.ndarray]) -> "ControlPolicy":
        return cls("feedback", fn)


@dataclass(frozen=True)
class TrajectoryEnsemble:
    grid: TimeGrid
    manifold: ManifoldModel
    states: np.ndarray  # (n_steps+1, n_paths, ambient_dim)
    noise: BrownianGrid
    policy: ControlPolicy

    @property
    def n_paths(self) -> int:
        return self.states.shape[1]

    def constraint_violation(self) -> float:
        return float(np.max(self.manifold.constraint_violation(self.states)))

    def control_values(self) -> np.ndarray:
        """Controls actually applied, shape (n_steps, n_paths, d+1)."""
        out = []
        for i in range(self.grid.n_steps):
            out.append(self.policy.values(i, self.states[i]))
        return np.stack(out, axis=0)


def _step(m, fields, t, dt, X, v, dW):
    """One projected Euler step for a block of paths."""
    d = len(fields) - 1
    drift = v[:, 0:1] * fields[0](t, X)
    for a in range(1, d + 1):
        va = v[:, a : a + 1]
        drift = drift + 0.5 * va**2 * ambient_derivative(m, fields[a], fields[a], t, X)
        drift = drift + (va * dW[:, a - 1 : a]) / dt * fields[a](t, X)
    return m.project(X + dt * drift)


def simulate(
    m: ManifoldModel,
    fields: Sequence[VectorField],
    x0: np.ndarray,
    policy: ControlPolicy,
    noise: BrownianGrid,
    workers: int = 1,
) -> TrajectoryEnsemble:
    """Run the projected Euler scheme for all paths of the noise grid."""
    d = len(fields) - 1
    if noise.d != d:
        raise GridMismatch(f"noise has d={noise.d}, fields imply d={d}")
    for f in fields[1:]:
        if not f.tangency_certified:
            raise NonTangentField(f"diffusion field '{f.id}' lacks a tangency certificate")
    x0 = np.asarray(x0, dtype=float)
    grid = noise.grid
    n_paths = noise.n_paths
    times = grid.times
    dt = grid.dt

    states = np.empty((grid.n_steps + 1, n_paths, m.ambient_dim))
    states[0] = x0

    def run_chunk(p0: int, p1: int) -> np.ndarray:
        out = np.empty((grid.n_steps + 1, p1 - p0, m.ambient_dim))
        out[0] = x0
        X = out[0].copy()
        for i in range(grid.n_steps):
            v = policy.values(i, X)
            dW = noise.increments[i, p0:p1]
            X = _step(m, fields, times[i], dt, X, v, dW)
            out[i + 1] = X
        return out

    bounds = [(p, min(p + CHUNK, n_paths)) for p in range(0, n_paths, CHUNK)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda b: run_chunk(*b), bounds))
    else:
        results = [run_chunk(*b) for b in bounds]
    for (p0, p1), block in zip(bounds, results):
        states[:, p0:p1] = block

    return TrajectoryEnsemble(grid=grid, manifold=m, states=states, noise=noise, policy=policy)


@dataclass(frozen=True)
class FlowContinuityReport:
    lhs: float
    rhs: float
    constant_C: float
    passed: bool


def flow_continuity_check(
    m: ManifoldModel,
    fields: Sequence[VectorField],
    x: np.ndarray,
    x2: np.ndarray,
    policy: ControlPolicy,
    policy2: ControlPolicy,
    noise: BrownianGrid,
    C: float,
    workers: int = 1,
) -> FlowContinuityReport:
    """Mean-square flow continuity under shared noise.

    lhs: Monte Carlo estimate of E sup_s |X_s - X'_s|^2 (ambient norm).
    rhs: C * (|x - x'|^2 + E int |v - v'|^2 ds), with C supplied by config.
    """
    ens1 = simulate(m, fields, x, policy, noise, workers=workers)
    ens2 = simulate(m, fields, x2, policy2, noise, workers=workers)
    diff2 = np.sum((ens1.states - ens2.states) ** 2, axis=-1)  # (steps+1, paths)
    lhs = float(np.mean(np.max(diff2, axis=0)))
    v1 = ens1.control_values()
    v2 = ens2.control_values()
    ctrl_term = float(np.mean(np.sum(np.sum((v1 - v2) ** 2, axis=-1), axis=0) * noise.grid.dt))
    rhs = C * (float(np.sum((np.asarray(x) - np.asarray(x2)) ** 2)) + ctrl_term)
    return FlowContinuityReport(lhs=lhs, rhs=rhs, constant_C=C, passed=lhs <= rhs)


def export_paths(ens: TrajectoryEnsemble, path: str) -> None:
    """Columnar CSV dump: step, path, embedded coordinates."""
    n = ens.manifold.ambient_dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "path"] + [f"x{k}" for k in range(n)])
        for i in range(ens.grid.n_steps + 1):
            for p in range(ens.n_paths):
                w.writerow([i, p] + [repr(float(c)) for c in ens.states[i, p]])

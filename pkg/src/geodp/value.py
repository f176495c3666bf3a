"""Cost functional and value function by backward dynamic programming.

The recursion works on a manifold mesh: the terminal layer is the terminal
cost at the nodes, and each earlier layer takes, per node, the minimum over a
finite control grid of the one-step recursion value computed from a restarted
Monte Carlo ensemble.  Next-layer values at off-node states are obtained by
positively weighted interpolation (periodic linear on the circle, bilinear
lat-lon with shared pole values on the sphere, periodic bilinear on the
torus), which preserves comparison and the maximum principle.

Common random numbers: every node and every control on a given layer share the
same antithetic increment block, so the estimated value field is smooth in the
node index and control comparisons are low-variance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import rng
from .bsde import RegressionBasis, semigroup, solve_backward
from .dynamics import BrownianGrid, ControlPolicy, TimeGrid, simulate
from .geometry import Circle, FlatTorus2, ManifoldModel, Sphere2, ambient_derivative
from .problem import ControlProblem


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------


class ManifoldMesh:
    """Node set plus interpolation on one of the catalog manifolds."""

    manifold: ManifoldModel
    nodes: np.ndarray  # (n_nodes, ambient_dim)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Interpolate nodal values at arbitrary on-manifold points."""
        raise NotImplementedError

    def neighbor_pairs(self) -> List[Tuple[int, int]]:
        """Pairs of adjacent node indices (each pair once)."""
        raise NotImplementedError

    def spacing(self) -> float:
        """Representative node spacing (geodesic)."""
        raise NotImplementedError

    def refine(self) -> "ManifoldMesh":
        """Mesh with roughly half the spacing."""
        raise NotImplementedError


class CircleMesh(ManifoldMesh):
    def __init__(self, n_theta: int = 128):
        if n_theta < 3:
            raise ValueError("n_theta must be >= 3")
        self.manifold = Circle()
        self.n_theta = n_theta
        th = 2.0 * np.pi * np.arange(n_theta) / n_theta
        self.nodes = np.stack([np.cos(th), np.sin(th)], axis=-1)

    def interpolate(self, values, points):
        values = np.asarray(values, dtype=float)
        th = self.manifold.chart(points)[..., 0]
        pos = (th % (2.0 * np.pi)) / (2.0 * np.pi) * self.n_theta
        i0 = np.floor(pos).astype(int) % self.n_theta
        w = pos - np.floor(pos)
        i1 = (i0 + 1) % self.n_theta
        return (1.0 - w) * values[i0] + w * values[i1]

    def neighbor_pairs(self):
        return [(k, (k + 1) % self.n_theta) for k in range(self.n_theta)]

    def spacing(self):
        return 2.0 * np.pi / self.n_theta

    def refine(self):
        return CircleMesh(2 * self.n_theta)


class SphereMesh(ManifoldMesh):
    """Latitude-longitude mesh with each pole stored once."""

    def __init__(self, n_lat: int = 32, n_lon: int = 64):
        if n_lat < 3 or n_lon < 3:
            raise ValueError("need n_lat >= 3 and n_lon >= 3")
        self.manifold = Sphere2()
        self.n_lat = n_lat
        self.n_lon = n_lon
        self.lats = -0.5 * np.pi + np.pi * np.arange(n_lat) / (n_lat - 1)
        self.lons = -np.pi + 2.0 * np.pi * np.arange(n_lon) / n_lon
        nodes = [np.array([0.0, 0.0, -1.0])]  # south pole, index 0
        for lat in self.lats[1:-1]:
            for lon in self.lons:
                nodes.append(
                    np.array(
                        [np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)]
                    )
                )
        nodes.append(np.array([0.0, 0.0, 1.0]))  # north pole, last index
        self.nodes = np.stack(nodes, axis=0)

    def _row_value(self, values, row, col):
        """Value at (lat row, lon column); poles ignore the column."""
        npole = self.n_nodes - 1
        out = np.where(
            row == 0,
            values[0],
            np.where(
                row == self.n_lat - 1,
                values[npole],
                values[np.clip(1 + (row - 1) * self.n_lon + col, 0, npole)],
            ),
        )
        return out

    def interpolate(self, values, points):
        values = np.asarray(values, dtype=float)
        ch = self.manifold.chart(points)
        lat, lon = ch[..., 0], ch[..., 1]
        posl = (lat + 0.5 * np.pi) / np.pi * (self.n_lat - 1)
        r0 = np.clip(np.floor(posl).astype(int), 0, self.n_lat - 2)
        wl = posl - r0
        posm = ((lon + np.pi) % (2.0 * np.pi)) / (2.0 * np.pi) * self.n_lon
        c0 = np.floor(posm).astype(int) % self.n_lon
        wm = posm - np.floor(posm)
        c1 = (c0 + 1) % self.n_lon
        v00 = self._row_value(values, r0, c0)
        v01 = self._row_value(values, r0, c1)
        v10 = self._row_value(values, r0 + 1, c0)
        v11 = self._row_value(values, r0 + 1, c1)
        return (1.0 - wl) * ((1.0 - wm) * v00 + wm * v01) + wl * (
            (1.0 - wm) * v10 + wm * v11
        )

    def neighbor_pairs(self):
        pairs = []
        npole = self.n_nodes - 1

        def idx(r, c):
            return 1 + (r - 1) * self.n_lon + (c % self.n_lon)

        for c in range(self.n_lon):
            pairs.append((0, idx(1, c)))
            pairs.append((npole, idx(self.n_lat - 2, c)))
        for r in range(1, self.n_lat - 1):
            for c in range(self.n_lon):
                pairs.append((idx(r, c), idx(r, c + 1)))
                if r + 1 <= self.n_lat - 2:
                    pairs.append((idx(r, c), idx(r + 1, c)))
        return pairs

    def spacing(self):
        return np.pi / (self.n_lat - 1)

    def refine(self):
        return SphereMesh(2 * self.n_lat - 1, 2 * self.n_lon)


class TorusMesh(ManifoldMesh):
    def __init__(self, n1: int = 64, n2: int = 64):
        if n1 < 3 or n2 < 3:
            raise ValueError("need n1, n2 >= 3")
        self.manifold = FlatTorus2()
        self.n1 = n1
        self.n2 = n2
        t1 = 2.0 * np.pi * np.arange(n1) / n1
        t2 = 2.0 * np.pi * np.arange(n2) / n2
        G1, G2 = np.meshgrid(t1, t2, indexing="ij")
        self.nodes = np.stack(
            [np.cos(G1), np.sin(G1), np.cos(G2), np.sin(G2)], axis=-1
        ).reshape(-1, 4)

    def interpolate(self, values, points):
        values = np.asarray(values, dtype=float).reshape(self.n1, self.n2)
        ch = self.manifold.chart(points)
        p1 = (ch[..., 0] % (2.0 * np.pi)) / (2.0 * np.pi) * self.n1
        p2 = (ch[..., 1] % (2.0 * np.pi)) / (2.0 * np.pi) * self.n2
        i0 = np.floor(p1).astype(int) % self.n1
        j0 = np.floor(p2).astype(int) % self.n2
        w1 = p1 - np.floor(p1)
        w2 = p2 - np.floor(p2)
        i1 = (i0 + 1) % self.n1
        j1 = (j0 + 1) % self.n2
        return (1.0 - w1) * ((1.0 - w2) * values[i0, j0] + w2 * values[i0, j1]) + w1 * (
            (1.0 - w2) * values[i1, j0] + w2 * values[i1, j1]
        )

    def neighbor_pairs(self):
        pairs = []
        for i in range(self.n1):
            for j in range(self.n2):
                k = i * self.n2 + j
                pairs.append((k, ((i + 1) % self.n1) * self.n2 + j))
                pairs.append((k, i * self.n2 + (j + 1) % self.n2))
        return pairs

    def spacing(self):
        return 2.0 * np.pi / max(self.n1, self.n2)

    def refine(self):
        return TorusMesh(2 * self.n1, 2 * self.n2)


def make_mesh(m: ManifoldModel, sizes: Optional[dict] = None) -> ManifoldMesh:
    sizes = sizes or {}
    if isinstance(m, Circle):
        return CircleMesh(int(sizes.get("n_theta", 128)))
    if isinstance(m, Sphere2):
        return SphereMesh(int(sizes.get("n_lat", 32)), int(sizes.get("n_lon", 64)))
    if isinstance(m, FlatTorus2):
        return TorusMesh(int(sizes.get("n1", 64)), int(sizes.get("n2", 64)))
    raise KeyError(f"no mesh rule for manifold '{m.name}'")


# ---------------------------------------------------------------------------
# Value field
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValueField:
    grid: TimeGrid
    mesh: ManifoldMesh
    u: np.ndarray  # (n_steps+1, n_nodes)
    argmin_control: np.ndarray  # (n_steps, n_nodes, d+1)


@dataclass(frozen=True)
class DppReport:
    residuals: np.ndarray  # per probe
    probes: List[Tuple[int, int]]
    max_residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tolerance


def cost_functional(
    prob: ControlProblem,
    t: float,
    x: np.ndarray,
    policy: ControlPolicy,
    T: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    basis: Optional[RegressionBasis] = None,
    picard_iters: int = 3,
    antithetic: bool = True,
    workers: int = 1,
) -> float:
    """Recursive cost of one policy: simulate forward, solve the BSDE backward."""
    grid = TimeGrid(t0=t, T=T, n_steps=n_steps)
    noise = BrownianGrid(
        grid=grid, d=prob.d, n_paths=n_paths, seed=seed, antithetic=antithetic
    )
    ens = simulate(prob.manifold, prob.fields, x, policy, noise, workers=workers)
    sol = solve_backward(
        ens, prob.driver, prob.terminal, basis or RegressionBasis(), picard_iters
    )
    return sol.y_at_t0


def _one_step_states(prob, nodes, t, dt, v, dW):
    """One projected Euler step from every node under a constant control.

    nodes: (n_nodes, n); dW: (n_sub, d).  Returns (n_nodes, n_sub, n).
    """
    m = prob.manifold
    fields = prob.fields
    d = prob.d
    drift = v[0] * fields[0](t, nodes)
    for a in range(1, d + 1):
        drift = drift + 0.5 * v[a] ** 2 * ambient_derivative(
            m, fields[a], fields[a], t, nodes
        )
    X = nodes[:, None, :] + dt * drift[:, None, :]
    for a in range(1, d + 1):
        X = X + v[a] * fields[a](t, nodes)[:, None, :] * dW[None, :, a - 1 : a]
    return m.project(X)


def value_function(
    prob: ControlProblem,
    grid: TimeGrid,
    mesh: ManifoldMesh,
    n_sub: int = 512,
    seed: int = 0,
    picard_iters: int = 3,
    workers: int = 1,
) -> ValueField:
    """Backward induction over the control grid on the mesh."""
    if grid.dt > 0.1:
        raise ValueError(f"dt = {grid.dt:.3g} exceeds the 0.1 sanity bound")
    controls = prob.controls.grid()
    if controls.shape[0] == 0:
        raise ValueError("empty control grid")
    n_nodes = mesh.n_nodes
    nodes = mesh.nodes
    d = prob.d
    dt = grid.dt
    times = grid.times
    f = prob.driver

    u = np.empty((grid.n_steps + 1, n_nodes))
    u[grid.n_steps] = prob.terminal(nodes)
    argmin = np.empty((grid.n_steps, n_nodes, controls.shape[1]))

    for i in range(grid.n_steps - 1, -1, -1):
        dW = rng.normal_increments(
            rng.derive_seed(seed, i), 1, n_sub, d, dt, antithetic=True
        )[0]
        best = np.full(n_nodes, np.inf)
        best_v = np.empty((n_nodes, controls.shape[1]))
        for v in controls:  # lexicographic order; first strict min wins ties
            X1 = _one_step_states(prob, nodes, times[i], dt, v, dW)
            u_next = mesh.interpolate(u[i + 1], X1)  # (n_nodes, n_sub)
            y_bar = np.mean(u_next, axis=1)
            Z = np.mean(u_next[:, :, None] * dW[None, :, :], axis=1) / dt
            vv = np.broadcast_to(v, (n_nodes, v.shape[0]))
            y = y_bar
            for _ in range(picard_iters):
                y = y_bar + dt * f(times[i], nodes, y, Z, vv)
            better = y < best
            best = np.where(better, y, best)
            best_v[better] = v
        u[i] = best
        argmin[i] = best_v

    return ValueField(grid=grid, mesh=mesh, u=u, argmin_control=argmin)


def dpp_residual_check(
    prob: ControlProblem,
    vf: ValueField,
    delta_steps: int,
    probes: Sequence[Tuple[int, int]],
    fresh_seed: int,
    n_paths: int = 4096,
    basis: Optional[RegressionBasis] = None,
    picard_iters: int = 3,
    tolerance: float = 2e-2,
    workers: int = 1,
) -> DppReport:
    """Recompute u at probe (time, node) pairs through a delta-step window.

    The window minimization searches constant-per-window controls on the
    finite control grid, with fresh noise, and compares against the stored
    value layer.
    """
    if not 1 <= delta_steps <= vf.grid.n_steps:
        raise ValueError("delta_steps out of range")
    basis = basis or RegressionBasis()
    controls = prob.controls.grid()
    residuals = []
    for k, (i, j) in enumerate(probes):
        i_end = min(i + delta_steps, vf.grid.n_steps)
        window = vf.grid.window(i, i_end)
        x0 = vf.mesh.nodes[j]
        best = np.inf
        noise = BrownianGrid(
            grid=window,
            d=prob.d,
            n_paths=n_paths,
            seed=rng.derive_seed(fresh_seed, i, j),
            antithetic=True,
        )
        for v in controls:
            ens = simulate(
                prob.manifold, prob.fields, x0, ControlPolicy.constant(v), noise,
                workers=workers,
            )
            eta = vf.mesh.interpolate(vf.u[i_end], ens.states[-1])
            val = semigroup(ens, prob.driver, basis, eta, picard_iters)
            best = min(best, val)
        residuals.append(abs(vf.u[i, j] - best))
    residuals = np.asarray(residuals)
    return DppReport(
        residuals=residuals,
        probes=list(probes),
        max_residual=float(np.max(residuals)) if len(residuals) else 0.0,
        tolerance=tolerance,
    )


@dataclass(frozen=True)
class ContinuityModuli:
    space_modulus: Dict[float, float]  # neighbor distance -> max |du|
    time_modulus: Dict[float, float]  # layer spacing -> max |du|


def continuity_moduli(vf: ValueField, n_space_bins: int = 4) -> ContinuityModuli:
    """Empirical moduli of continuity of the value table.

    Space: neighbor-pair |du| maxima bucketed by pair distance.  Time: max |du|
    between adjacent layers.
    """
    mesh = vf.mesh
    pairs = mesh.neighbor_pairs()
    ii = np.array([p[0] for p in pairs])
    jj = np.array([p[1] for p in pairs])
    dists = mesh.manifold.distance(mesh.nodes[ii], mesh.nodes[jj])
    du = np.max(np.abs(vf.u[:, ii] - vf.u[:, jj]), axis=0)
    space: Dict[float, float] = {}
    rounded = np.round(dists, 10)
    for dist in np.unique(rounded):
        sel = rounded == dist
        space[float(dist)] = float(np.max(du[sel]))
    dt = vf.grid.dt
    time_mod = {float(dt): float(np.max(np.abs(np.diff(vf.u, axis=0))))}
    return ContinuityModuli(space_modulus=space, time_modulus=time_mod)


def export_value_field(vf: ValueField, path: str) -> None:
    """CSV dump: time index, node index, node coordinates, u, argmin control."""
    n = vf.mesh.nodes.shape[1]
    dctrl = vf.argmin_control.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["time_index", "node_index"]
            + [f"x{k}" for k in range(n)]
            + ["u"]
            + [f"v{k}" for k in range(dctrl)]
        )
        for i in range(vf.u.shape[0]):
            for j in range(vf.u.shape[1]):
                ctrl = (
                    [repr(float(c)) for c in vf.argmin_control[i, j]]
                    if i < vf.argmin_control.shape[0]
                    else [""] * dctrl
                )
                w.writerow(
                    [i, j]
                    + [repr(float(c)) for c in vf.mesh.nodes[j]]
                    + [repr(float(vf.u[i, j]))]
                    + ctrl
                )

"""Driver and terminal-cost catalogs addressable by string id."""

from __future__ import annotations

import numpy as np

from .bsde import Driver, TerminalCost


def get_driver(did: str, params: dict | None = None) -> Driver:
    """Driver catalog.

    ids:
      zero                     f = 0
      constant   {c}           f = c
      linear_y   {beta, c}     f = -beta*y + c
      smooth     {c, b, beta}  f = c*cos(y + x_0) + b*tanh(z_0) - beta*y
    """
    params = params or {}
    did = did.strip()
    if did == "zero":
        return Driver(f=lambda t, x, y, z, v: np.zeros_like(y), lipschitz_K=0.0, bound_K0=0.0)
    if did == "constant":
        c = float(params.get("c", 1.0))
        return Driver(
            f=lambda t, x, y, z, v: np.full_like(np.asarray(y, dtype=float), c),
            lipschitz_K=0.0,
            bound_K0=abs(c),
        )
    if did == "linear_y":
        beta = float(params.get("beta", 1.0))
        c = float(params.get("c", 0.0))
        return Driver(
            f=lambda t, x, y, z, v: -beta * np.asarray(y, dtype=float) + c,
            lipschitz_K=abs(beta),
            bound_K0=abs(c),
        )
    if did == "smooth":
        c = float(params.get("c", 0.5))
        b = float(params.get("b", 0.25))
        beta = float(params.get("beta", 0.5))

        def f(t, x, y, z, v):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            z = np.asarray(z, dtype=float)
            return c * np.cos(y + x[..., 0]) + b * np.tanh(z[..., 0]) - beta * y

        # |d/dy| <= c + beta, |d/dz| <= b, x-dependence via cos(y + x_0).
        return Driver(f=f, lipschitz_K=2.0 * abs(c) + abs(b) + abs(beta), bound_K0=abs(c))
    raise KeyError(f"unknown driver '{did}'")


def get_terminal(tid: str, params: dict | None = None) -> TerminalCost:
    """Terminal-cost catalog.

    ids:
      constant {c}        Phi = c
      coord    {index, scale}  Phi = scale * x_index  (x_0 is cos(theta) on the circle)
    """
    params = params or {}
    tid = tid.strip()
    if tid == "constant":
        c = float(params.get("c", 1.0))
        return TerminalCost(
            phi=lambda x: np.full(np.asarray(x).shape[:-1], c), lipschitz_K=0.0
        )
    if tid == "coord":
        idx = int(params.get("index", 0))
        scale = float(params.get("scale", 1.0))
        return TerminalCost(
            phi=lambda x: scale * np.asarray(x, dtype=float)[..., idx],
            lipschitz_K=abs(scale),
        )
    raise KeyError(f"unknown terminal '{tid}'")

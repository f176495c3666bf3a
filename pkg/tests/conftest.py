import numpy as np
import pytest

from geodp.catalog import get_driver, get_terminal
from geodp.dynamics import ControlSet, TimeGrid
from geodp.geometry import get_field, get_manifold
from geodp.problem import ControlProblem


def circle_problem(
    driver_id="smooth",
    driver_params=None,
    terminal_id="coord",
    terminal_params=None,
    sigma_low=0.5,
    sigma_high=1.0,
    grid_points=2,
):
    """The standard circle setup used across the heavier tests: zero drift,
    rotational diffusion with controllable intensity, a smooth nonlinear
    driver, and the first-coordinate terminal cost."""
    m = get_manifold("circle")
    fields = [get_field(m, "zero"), get_field(m, "rot")]
    return ControlProblem(
        manifold=m,
        fields=fields,
        driver=get_driver(driver_id, driver_params),
        terminal=get_terminal(terminal_id, terminal_params),
        controls=ControlSet(
            lower=np.array([0.0, sigma_low]),
            upper=np.array([0.0, sigma_high]),
            grid_points_per_axis=grid_points,
        ),
    )


def unit_diffusion_circle(driver_id="zero", driver_params=None, terminal_id="coord"):
    """Circle with a single sigma = 1 control (the closed-form oracle setup)."""
    return circle_problem(
        driver_id=driver_id, driver_params=driver_params, terminal_id=terminal_id,
        sigma_low=1.0, sigma_high=1.0, grid_points=1,
    )


@pytest.fixture
def grid64():
    return TimeGrid(t0=0.0, T=1.0, n_steps=64)

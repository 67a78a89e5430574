"""Closed-form objectives and gradients used as ground truth.

Two analytic families: the two-parameter fit of the sign function by
``c*tanh(a*x)`` on (-1, 1) in L2, and the single-parameter log-cosh
architecture for the point-load diffusion problem on (0, 1).  Both give
exact values and partials against which the stochastic machinery
(quadrature, autodiff, memory accumulation) is checked.

Small arguments are evaluated by series expansion to avoid the 0/0
forms; the expansions below keep absolute errors under 1e-13 for
|a| < 1e-4.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "sgn_tanh_objective",
    "sgn_tanh_partials",
    "sgn_tanh_discrete_loss",
    "sgn_tanh_discrete_partials",
    "dirac_singleparam",
    "dirac_singleparam_value",
    "dirac_singleparam_partial",
    "u_theta",
    "u_theta_prime",
    "u_theta_dtheta",
    "u_theta_dtheta_prime",
]

_SMALL = 1e-4


def _log_cosh(x):
    # overflow-safe log(cosh(x))
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)


def sgn_tanh_objective(a: float, c: float) -> float:
    """L2(-1,1) distance squared between c*tanh(a x) and sign(x).

    Closed form ``2(1+c^2) - (4c log(cosh a) + 2c^2 tanh a)/a`` with the
    continuous limit 2 at a = 0.
    """
    if abs(a) < _SMALL:
        # series: 2 - 2ca + (2/3) c^2 a^2 + (c/3) a^3 + O(a^4)
        return 2.0 - 2.0 * c * a + (2.0 / 3.0) * c * c * a * a + (c / 3.0) * a ** 3
    return 2.0 * (1.0 + c * c) - (4.0 * c * _log_cosh(a) + 2.0 * c * c * np.tanh(a)) / a


def sgn_tanh_partials(a: float, c: float) -> tuple[float, float]:
    """(d/da, d/dc) of the closed-form objective.

    The a -> 0 limits are (-2c, 0): the objective behaves like
    ``2 - 2ca`` near a = 0, so the whole line (0, c) is flat in c but
    not critical in a (except at c = 0).
    """
    if abs(a) < _SMALL:
        da = -2.0 * c + (4.0 / 3.0) * c * c * a + c * a * a
        dc = -2.0 * a + (4.0 / 3.0) * c * a * a
        return da, dc
    ta = np.tanh(a)
    sech2 = 1.0 - ta * ta
    lc = _log_cosh(a)
    da = 2.0 * c * (2.0 * lc + (c - 2.0 * a) * ta - a * c * sech2) / (a * a)
    dc = 4.0 * (a * c - lc - c * ta) / a
    return float(da), float(dc)


def sgn_tanh_discrete_loss(a: float, c: float, batch) -> float:
    """Quadrature loss sum w_i (c tanh(a x_i) - sign(x_i))^2 on (-1, 1)."""
    x = batch.x
    r = c * np.tanh(a * x) - np.sign(x)
    return batch.integrate(r * r)


def sgn_tanh_discrete_partials(a: float, c: float, batch) -> tuple[float, float]:
    """Analytic parameter partials of the discrete loss (autodiff oracle)."""
    x = batch.x
    t = np.tanh(a * x)
    r = c * t - np.sign(x)
    sech2 = 1.0 - t * t
    da = batch.integrate(2.0 * r * c * x * sech2)
    dc = batch.integrate(2.0 * r * t)
    return float(da), float(dc)


# ---------------------------------------------------------------------------
# single-parameter architecture for -u'' = 4*delta_{1/2}
# ---------------------------------------------------------------------------

def u_theta(theta: float, x) -> np.ndarray:
    """(2/theta) { log cosh(theta/2) - log cosh(theta (1/2 - x)) }."""
    if theta == 0.0:
        raise ValueError("theta must be nonzero")
    x = np.asarray(x, dtype=float)
    return (2.0 / theta) * (_log_cosh(theta / 2.0) - _log_cosh(theta * (0.5 - x)))


def u_theta_prime(theta: float, x) -> np.ndarray:
    """Spatial derivative 2 tanh(theta (1/2 - x))."""
    if theta == 0.0:
        raise ValueError("theta must be nonzero")
    x = np.asarray(x, dtype=float)
    return 2.0 * np.tanh(theta * (0.5 - x))


def u_theta_dtheta(theta: float, x) -> np.ndarray:
    """Parameter derivative of u_theta (for analytic loss gradients)."""
    if theta == 0.0:
        raise ValueError("theta must be nonzero")
    x = np.asarray(x, dtype=float)
    lc = _log_cosh(theta / 2.0) - _log_cosh(theta * (0.5 - x))
    dlc = 0.5 * np.tanh(theta / 2.0) - (0.5 - x) * np.tanh(theta * (0.5 - x))
    return (-2.0 / theta ** 2) * lc + (2.0 / theta) * dlc


def u_theta_dtheta_prime(theta: float, x) -> np.ndarray:
    """Parameter derivative of the spatial derivative of u_theta."""
    if theta == 0.0:
        raise ValueError("theta must be nonzero")
    x = np.asarray(x, dtype=float)
    t = np.tanh(theta * (0.5 - x))
    return 2.0 * (0.5 - x) * (1.0 - t * t)


def dirac_singleparam_value(theta: float) -> float:
    """Ritz objective of u_theta: 2 - (4/theta) tanh(theta/2) - (8/theta) log cosh(theta/2).

    Tends to -2 (the optimum) as theta grows.
    """
    if theta == 0.0:
        raise ValueError("theta must be nonzero")
    return float(
        2.0
        - (4.0 / theta) * np.tanh(theta / 2.0)
        - (8.0 / theta) * _log_cosh(theta / 2.0)
    )


def dirac_singleparam_partial(theta: float) -> float:
    """Closed-form derivative of the single-parameter objective; -> 0 as theta -> inf."""
    if theta == 0.0:
        raise ValueError("theta must be nonzero")
    th = np.tanh(theta / 2.0)
    sech2 = 1.0 - th * th
    return float(
        (-4.0 * (theta - 1.0) * th - 2.0 * theta * sech2 + 8.0 * _log_cosh(theta / 2.0))
        / theta ** 2
    )


def dirac_singleparam(theta: float):
    """(u_theta as callable, objective value, objective derivative)."""
    return (lambda x: u_theta(theta, x),
            dirac_singleparam_value(theta),
            dirac_singleparam_partial(theta))

"""Closed-form shrinking round spheres under mean curvature flow (unit weight)."""

from __future__ import annotations

import math
from typing import NamedTuple


class OutOfDomain(ValueError):
    pass


class SphereAt(NamedTuple):
    r: float
    H: float
    lam: float
    T_sing: float


def singular_time(R: float, n: int) -> float:
    return R * R / (2.0 * n)


def _check(R: float, n: int, t: float) -> None:
    if R <= 0 or n < 1:
        raise OutOfDomain(f"need R > 0 and n >= 1, got R={R}, n={n}")
    if not 0.0 <= t < singular_time(R, n):
        raise OutOfDomain(f"t={t} outside [0, {singular_time(R, n)})")


def sphere_at(R: float, n: int, t: float) -> SphereAt:
    """Radius, mean curvature, first nonzero eigenvalue and singular time.

    ``r = sqrt(R^2 - 2 n t)``, ``H = n / r``, ``lambda = n / r^2``.
    """
    _check(R, n, t)
    r2 = R * R - 2.0 * n * t
    r = math.sqrt(r2)
    return SphereAt(r=r, H=n / r, lam=n / r2, T_sing=singular_time(R, n))


def example_rate(R: float, n: int, t: float) -> float:
    """``d lambda / dt = 2 H^2 lambda / n`` along the shrinking sphere."""
    s = sphere_at(R, n, t)
    return 2.0 * s.H**2 * s.lam / n


def lambda_derivative(R: float, n: int, t: float) -> float:
    """Direct derivative of ``n / (R^2 - 2 n t)``."""
    _check(R, n, t)
    return 2.0 * n * n / (R * R - 2.0 * n * t) ** 2

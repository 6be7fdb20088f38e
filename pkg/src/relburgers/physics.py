"""Closed-form objects for the relativistic Burgers equation outside a
Schwarzschild black hole.

The equation, in geometric units (c = 1) and spherical symmetry, is

    d/dt [ v / (1 - 2M/r)^2 ] + d/dr [ (v^2 - 1) / (2 (1 - 2M/r)) ] = 0,

posed on r > 2M with velocity v in [-1, 1].  This module provides the
metric factor, the flux, the Rankine-Hugoniot shock speed, and the
one-parameter steady-state and steady-shock families, all as plain
functions of floats or numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """Evaluation requested at or inside the event horizon, or outside
    the validity interval of a steady-state branch."""


class ParameterError(ValueError):
    """Invalid physical parameter (e.g. nonpositive K)."""


@dataclass(frozen=True)
class BlackHole:
    """Schwarzschild black hole of mass ``mass`` (geometric units).

    mass = 0 recovers the classical Burgers flux up to the additive
    constant -1/2.
    """

    mass: float = 1.0

    def __post_init__(self):
        if self.mass < 0:
            raise ParameterError(f"black hole mass must be >= 0, got {self.mass}")

    @property
    def horizon(self) -> float:
        return 2.0 * self.mass


@dataclass(frozen=True)
class RadialDomain:
    """Truncated radial domain [r_min, r_max] with r_min = 2M + epsilon."""

    r_min: float
    r_max: float
    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ParameterError(f"horizon offset must be positive, got {self.epsilon}")
        if self.r_max <= self.r_min:
            raise ParameterError(
                f"need r_max > r_min, got [{self.r_min}, {self.r_max}]"
            )

    @classmethod
    def outside(cls, bh: BlackHole, epsilon: float, r_max: float) -> "RadialDomain":
        """Domain [2M + epsilon, r_max] hugging the horizon from outside."""
        return cls(r_min=bh.horizon + epsilon, r_max=r_max, epsilon=epsilon)

    @property
    def span(self) -> float:
        return self.r_max - self.r_min


@dataclass(frozen=True)
class SteadyStateParams:
    """Branch of the steady family v = sign * sqrt(1 - K (1 - 2M/r)).

    The flux along the branch is constant and equals -K/2, so K labels
    the flux level.  K in (0, 1] gives a branch on all of (2M, inf);
    K > 1 restricts it to a bounded interval near the horizon.
    """

    K: float
    sign: int = +1

    def __post_init__(self):
        if self.K <= 0:
            raise ParameterError(f"K must be positive, got {self.K}")
        if self.sign not in (+1, -1):
            raise ParameterError(f"sign must be +1 or -1, got {self.sign}")


@dataclass(frozen=True)
class SteadyShockParams:
    """Stationary shock joining the + branch (r < r0) to the - branch
    (r > r0) of the steady family with the same K.  The jump is
    antisymmetric, so the Rankine-Hugoniot speed is exactly zero."""

    K: float
    r0: float

    def __post_init__(self):
        if not (0 < self.K <= 1):
            raise ParameterError(f"steady shocks need K in (0, 1], got {self.K}")


def metric(r, bh: BlackHole):
    """Metric factor 1 - 2M/r, strictly in (0, 1) for finite r > 2M > 0."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= bh.horizon):
        raise DomainError(
            f"metric undefined at or inside the horizon r = {bh.horizon}"
        )
    out = 1.0 - bh.horizon / r
    return out if out.ndim else float(out)


def flux(v, r, bh: BlackHole):
    """Flux f(v, r) = (v^2 - 1) / (2 metric(r)); nonpositive for |v| <= 1."""
    v = np.asarray(v, dtype=float)
    out = (v * v - 1.0) / (2.0 * metric(r, bh))
    return out if out.ndim else float(out)


def shock_speed(v_left, v_right, r, bh: BlackHole):
    """Rankine-Hugoniot speed s = metric(r) (v_left + v_right) / 2."""
    v_left = np.asarray(v_left, dtype=float)
    out = metric(r, bh) * (v_left + np.asarray(v_right, dtype=float)) / 2.0
    return out if out.ndim else float(out)


def steady_state(r, p: SteadyStateParams, bh: BlackHole):
    """Steady solution v = sign * sqrt(1 - K metric(r)).

    Raises DomainError outside the validity interval (the square-root
    argument must be nonnegative); see steady_state_domain.
    """
    arg = 1.0 - p.K * np.asarray(metric(r, bh), dtype=float)
    if np.any(arg < 0.0):
        lo, hi = steady_state_domain(p, bh)
        raise DomainError(
            f"steady state with K={p.K} only defined on ({lo}, {hi})"
        )
    out = p.sign * np.sqrt(arg)
    return out if out.ndim else float(out)


def steady_state_domain(p: SteadyStateParams, bh: BlackHole) -> tuple[float, float]:
    """Validity interval of the steady branch.

    K in (0, 1]: all of (2M, inf).  K > 1: the square-root argument
    1 - K (1 - 2M/r) stays nonnegative only for r < 2MK/(K - 1), so the
    branch lives on (2M, 2MK/(K - 1)).
    """
    if p.K <= 0:
        raise ParameterError(f"K must be positive, got {p.K}")
    if p.K <= 1.0:
        return (bh.horizon, np.inf)
    return (bh.horizon, bh.horizon * p.K / (p.K - 1.0))


def steady_shock(r, p: SteadyShockParams, bh: BlackHole):
    """Steady shock: + branch of the K family for r < r0, - branch for
    r > r0 (the point r = r0 itself reports the left state)."""
    r = np.asarray(r, dtype=float)
    plus = steady_state(r, SteadyStateParams(K=p.K, sign=+1), bh)
    out = np.where(r <= p.r0, plus, -np.asarray(plus))
    return out if out.ndim else float(out)

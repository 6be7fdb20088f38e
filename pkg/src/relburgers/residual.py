"""Godunov-inspired PDE residual and the three-term physics loss.

The residual at an interior point (t, r) is

    dv/dt / metric(r)^2  +  [F(v_c, v_r; r + d/2) - F(v_l, v_c; r - d/2)] / d

with v_l, v_c, v_r the model sampled at r - d, r, r + d and F the Godunov
interface flux.  Everything here is written against the small generic op
set in ``autodiff`` (where / maximum / minimum / arithmetic), so the same
formulas run on plain numbers for diagnostics and on tape nodes inside
the training objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import network as net
from .autodiff import Dual, Tape, Var, value_of
from .physics import BlackHole, metric

VARIANTS = ("paper", "exact")

# diagnostic only: how many stencils had to be clamped at a domain edge
degenerate_stencil_count = 0


@dataclass(frozen=True)
class LossWeights:
    """Weights of the residual, initial and boundary terms."""

    lambda_eqn: float = 1.0
    lambda_ini: float = 1.0
    lambda_bnd: float = 1.0

    def __post_init__(self):
        for name in ("lambda_eqn", "lambda_ini", "lambda_bnd"):
            x = getattr(self, name)
            if not np.isfinite(x) or x < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {x}")


@dataclass
class CollocationSet:
    """Sampled spacetime points feeding the three loss terms.

    Boundary points carry their radius directly (r_min or r_max per
    point) together with the pinned target value.
    """

    eqn_t: np.ndarray
    eqn_r: np.ndarray
    ini_r: np.ndarray
    ini_v: np.ndarray
    bnd_t: np.ndarray
    bnd_r: np.ndarray
    bnd_v: np.ndarray

    def validate(self, domain, t_final: float):
        for r in (self.eqn_r, self.ini_r, self.bnd_r):
            if r.size and (r.min() < domain.r_min - 1e-12 or r.max() > domain.r_max + 1e-12):
                raise ValueError("collocation radius outside the truncated domain")
        for t in (self.eqn_t, self.bnd_t):
            if t.size and (t.min() < 0 or t.max() > t_final + 1e-12):
                raise ValueError("collocation time outside [0, t_final]")
        for v in (self.ini_v, self.bnd_v):
            if v.size and (not np.all(np.isfinite(v)) or np.abs(v).max() > 1.0 + 1e-12):
                raise ValueError("target velocities must be finite and within [-1, 1]")
        if self.ini_r.size == 0 or self.bnd_r.size == 0:
            raise ValueError("initial and boundary sets must be nonempty")


def godunov_flux(v_left, v_right, r, bh: BlackHole, variant: str = "exact"):
    """Godunov interface flux for f(v) = (v^2 - 1) / (2 metric(r)).

    variant="paper" follows the five-case table verbatim: for a shock
    (v_left > v_right) it picks max or min of the endpoint fluxes by the
    sign of the jump speed, and it returns 0 for a transonic rarefaction
    (v_left < 0 < v_right).

    variant="exact" is the entropy-consistent flux of the convex f: the
    shock case always takes max(f(v_left), f(v_right)) (the speed sign
    is then implicit), and the transonic case returns the flux minimum
    f(0, r) = -1/(2 metric(r)).  Only this variant is monotone.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown Godunov variant {variant!r}")
    m = metric(r, bh)
    inv2m = 0.5 / np.asarray(m, dtype=float)
    f_l = (v_left * v_left - 1.0) * inv2m
    f_r = (v_right * v_right - 1.0) * inv2m

    vl = np.asarray(value_of(v_left), dtype=float)
    vr = np.asarray(value_of(v_right), dtype=float)
    shock = vl > vr

    if variant == "paper":
        s_nonneg = (vl + vr) >= 0.0  # sign of metric * (vl + vr) / 2
        shock_flux = ad.where(s_nonneg, ad.maximum(f_l, f_r), ad.minimum(f_l, f_r))
    else:
        shock_flux = ad.maximum(f_l, f_r)

    sonic = 0.0 if variant == "paper" else -inv2m
    fan_flux = ad.where(vl >= 0.0, f_l, ad.where(vr <= 0.0, f_r, sonic))
    out = ad.where(shock, shock_flux, fan_flux)
    if not isinstance(out, Var) and np.ndim(vl) == 0:
        return float(out)
    return out


def interface_values(params, spec: net.ModelSpec, t, r, delta: float = 1e-5):
    """Model values at r - delta, r, r + delta (stencils clamped at the
    domain edges; clamps are tallied in ``degenerate_stencil_count``)."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    r_lo, r_hi = _stencil_radii(r, spec.domain, delta)
    v_lo, _, _ = net.predict(params, spec, t, r_lo)
    v_c, _, _ = net.predict(params, spec, t, r)
    v_hi, _, _ = net.predict(params, spec, t, r_hi)
    if t.ndim == 0:
        return float(v_lo), float(v_c), float(v_hi)
    return v_lo, v_c, v_hi


def _stencil_radii(r, domain, delta):
    global degenerate_stencil_count
    r_lo = np.maximum(r - delta, domain.r_min)
    r_hi = np.minimum(r + delta, domain.r_max)
    clamped = int(np.count_nonzero(r_lo != r - delta) + np.count_nonzero(r_hi != r + delta))
    if clamped:
        degenerate_stencil_count += clamped
    return r_lo, r_hi


def residual_core(dvdt, v_lo, v_c, v_hi, r, bh: BlackHole, delta: float, variant: str):
    """The residual formula itself, generic over numbers and tape nodes.

    The two interface fluxes sit at r -/+ delta/2 so the difference
    quotient also captures the radial variation of the metric; the
    steady family then nulls the residual to O(delta).
    """
    m = np.asarray(metric(r, bh), dtype=float)
    f_plus = godunov_flux(v_c, v_hi, r + 0.5 * delta, bh, variant)
    f_minus = godunov_flux(v_lo, v_c, r - 0.5 * delta, bh, variant)
    return dvdt / (m * m) + (f_plus - f_minus) * (1.0 / delta)


def pde_residual(params, spec: net.ModelSpec, t, r, bh: BlackHole,
                 delta: float = 1e-5, variant: str = "paper"):
    """Residual of the trained model at interior points (values only)."""
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    d = ad.eval_with_time_tangent(net.model_time_fn(spec), params, t, r)
    r_lo, r_hi = _stencil_radii(r, spec.domain, delta)
    v_lo, _, _ = net.predict(params, spec, t, r_lo)
    v_hi, _, _ = net.predict(params, spec, t, r_hi)
    out = residual_core(d.tangent, v_lo, d.value, v_hi, r, bh, delta, variant)
    return float(out[0]) if scalar else out


# -- training objective -------------------------------------------------------

def loss_graph(theta: Var, spec: net.ModelSpec, colloc: CollocationSet,
               w: LossWeights, bh: BlackHole, delta: float = 1e-5,
               variant: str = "paper") -> Var:
    """Differentiable total loss on the tape owning ``theta``."""
    views = net.graph_views(theta, spec)
    tape = theta.tape
    total = tape.node(0.0, None, "zero")

    if w.lambda_eqn > 0.0 and colloc.eqn_t.size:
        t, r = colloc.eqn_t, colloc.eqn_r
        td = Dual(t, np.ones_like(t))
        r_s = net.graph_locator(views, spec, td, t.size)
        r_s_still = Dual(r_s.val, None)
        v_c, _, _ = net.graph_forward(views, spec, td, r, r_s=r_s)
        t_still = Dual(t, None)
        r_lo, r_hi = _stencil_radii(r, spec.domain, delta)
        v_lo, _, _ = net.graph_forward(views, spec, t_still, r_lo, r_s=r_s_still)
        v_hi, _, _ = net.graph_forward(views, spec, t_still, r_hi, r_s=r_s_still)
        res = residual_core(v_c.tan, v_lo.val, v_c.val, v_hi.val, r, bh, delta, variant)
        total = total + w.lambda_eqn * ad.mean(res ** 2)

    if w.lambda_ini > 0.0 and colloc.ini_r.size:
        v0, _, _ = net.graph_forward(
            views, spec, np.zeros_like(colloc.ini_r), colloc.ini_r)
        total = total + w.lambda_ini * ad.mean((v0.val - colloc.ini_v) ** 2)

    if w.lambda_bnd > 0.0 and colloc.bnd_t.size:
        vb, _, _ = net.graph_forward(views, spec, colloc.bnd_t, colloc.bnd_r)
        total = total + w.lambda_bnd * ad.mean((vb.val - colloc.bnd_v) ** 2)

    return total


def total_loss(params, spec: net.ModelSpec, colloc: CollocationSet, w: LossWeights,
               bh: BlackHole, delta: float = 1e-5, variant: str = "paper") -> float:
    """Loss value only (same graph as the training objective)."""
    tape = Tape()
    theta = tape.leaf(np.asarray(params, dtype=float), op="params")
    return float(loss_graph(theta, spec, colloc, w, bh, delta, variant).value)


def loss_and_grad(params, spec: net.ModelSpec, colloc: CollocationSet, w: LossWeights,
                  bh: BlackHole, delta: float = 1e-5, variant: str = "paper"):
    """(loss, gradient) pair, the objective handed to the optimizer."""
    res = ad.gradient(
        lambda theta: loss_graph(theta, spec, colloc, w, bh, delta, variant),
        params)
    return res.value, res.grad

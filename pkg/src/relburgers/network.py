"""Shock-aware velocity model.

The prediction is the sum of two parts,

    v(t, r) = N_smooth(t, r) + N_shock(t, r),

where N_smooth is a plain dense network and N_shock is a jump block: a
locator network mapping t to a shock position r_s(t) inside the domain,
a smoothed Heaviside h = sigmoid(k (r - r_s(t))) with trainable
sharpness k, and a small feature network fed with h (and optionally the
coordinates) whose output supplies the discontinuous component.

All trainable scalars live in one flat float64 vector; ``layout`` fixes
the order (smooth, locator, feature, raw sharpness) so the vector, the
optimizer, and the persistence format agree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Dual, Var
from .physics import RadialDomain

ACTIVATIONS = {"tanh": ad.tanh}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor plus input-normalization constants.

    Inputs are affinely mapped to [-1, 1] (time from [t_min, t_max], radius
    from the domain) before entering the networks; the constants are part
    of the persisted model.
    """

    domain: RadialDomain
    smooth_hidden: tuple = (16, 32, 32, 32, 16)
    locator_hidden: tuple = (32, 32)
    shock_feature_hidden: tuple = (16, 16)
    shock_feature_inputs: tuple = ("t", "r", "h")
    activation: str = "tanh"
    t_min: float = 0.0
    t_max: float = 5.0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        bad = set(self.shock_feature_inputs) - {"t", "r", "h"}
        if bad or not self.shock_feature_inputs:
            raise ValueError(f"shock feature inputs must be drawn from t/r/h, got {self.shock_feature_inputs}")


def paper_design(domain: RadialDomain, **kw) -> ModelSpec:
    """Variant whose feature network sees only the indicator h.

    With the default hidden sizes this stack has exactly 4724 trainable
    scalars (3249 + 1153 + 321 + 1).
    """
    return ModelSpec(domain=domain, shock_feature_inputs=("h",), **kw)


@dataclass
class ModelOutput:
    """Point evaluation: velocity, shock location, indicator value."""

    v: float
    r_s: float
    h: float


# -- flat parameter layout -------------------------------------------------

def _stack_sizes(spec: ModelSpec) -> dict[str, list[int]]:
    return {
        "smooth": [2, *spec.smooth_hidden, 1],
        "locator": [1, *spec.locator_hidden, 1],
        "feature": [len(spec.shock_feature_inputs), *spec.shock_feature_hidden, 1],
    }


def dense_param_count(sizes) -> int:
    """Weights + biases of a dense stack with the given layer sizes."""
    return sum(n_in * n_out + n_out for n_in, n_out in zip(sizes[:-1], sizes[1:]))


def param_count(spec: ModelSpec) -> int:
    """Length of the flat vector: three dense stacks plus the sharpness."""
    return sum(dense_param_count(s) for s in _stack_sizes(spec).values()) + 1


def layout(spec: ModelSpec) -> list[tuple[str, int, int, tuple]]:
    """(name, start, stop, shape) for every segment of the flat vector."""
    entries = []
    pos = 0
    for stack, sizes in _stack_sizes(spec).items():
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            for kind, shape in (("W", (n_out, n_in)), ("b", (n_out,))):
                n = int(np.prod(shape))
                entries.append((f"{stack}{i}.{kind}", pos, pos + n, shape))
                pos += n
    entries.append(("kappa_raw", pos, pos + 1, (1,)))
    return entries


@dataclass
class ModelViews:
    """Per-layer views into the flat vector (numpy arrays or tape nodes)."""

    smooth: list
    locator: list
    feature: list
    kappa_raw: object


def _views(spec: ModelSpec, slicer) -> ModelViews:
    parts = {"smooth": [], "locator": [], "feature": []}
    kappa = None
    pending_w = None
    for name, start, stop, shape in layout(spec):
        if name == "kappa_raw":
            kappa = slicer(start, stop, shape)
        elif name.endswith(".W"):
            pending_w = slicer(start, stop, shape)
        else:  # ".b" always directly follows its ".W"
            stack = name.split(".")[0].rstrip("0123456789")
            parts[stack].append((pending_w, slicer(start, stop, shape)))
    return ModelViews(parts["smooth"], parts["locator"], parts["feature"], kappa)


def unflatten(params: np.ndarray, spec: ModelSpec) -> ModelViews:
    """Numpy views (no copies) of the flat vector."""
    params = np.asarray(params, dtype=float)
    if params.shape != (param_count(spec),):
        raise ValueError(
            f"parameter vector has length {params.shape}, spec wants {param_count(spec)}"
        )
    return _views(spec, lambda a, b, shape: params[a:b].reshape(shape))


def flatten(views: ModelViews, spec: ModelSpec) -> np.ndarray:
    """Inverse of ``unflatten``; concatenates in layout order."""
    chunks = []
    for stack in (views.smooth, views.locator, views.feature):
        for W, b in stack:
            chunks.append(np.ravel(W))
            chunks.append(np.ravel(b))
    chunks.append(np.ravel(views.kappa_raw))
    return np.concatenate(chunks)


def graph_views(theta: Var, spec: ModelSpec) -> ModelViews:
    """Tape-node views of a flat parameter variable."""
    return _views(spec, lambda a, b, shape: ad.segment(theta, a, b, shape))


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases, sharpness set so the
    indicator transition width is about a tenth of the domain."""
    rng = np.random.default_rng(seed)
    out = np.zeros(param_count(spec))
    for name, start, stop, shape in layout(spec):
        if name.endswith(".W"):
            n_out, n_in = shape
            lim = np.sqrt(6.0 / (n_in + n_out))
            out[start:stop] = rng.uniform(-lim, lim, size=stop - start)
    k0 = 10.0 / spec.domain.span
    out[-1] = np.log(np.expm1(k0))  # softplus inverse
    return out


# -- forward evaluation ------------------------------------------------------


def _norm_t(t, spec: ModelSpec):
    return (t - spec.t_min) * (2.0 / (spec.t_max - spec.t_min)) - 1.0


def _norm_r(r, spec: ModelSpec):
    return (r - spec.domain.r_min) * (2.0 / spec.domain.span) - 1.0


def _row0(x):
    """(1, N) -> (N,) for Var, Dual or ndarray."""
    if isinstance(x, Dual):
        return Dual(_row0(x.val), None if x.tan is None else _row0(x.tan))
    if isinstance(x, Var):
        return ad.reshape(x, (np.shape(x.value)[1],))
    return np.reshape(x, (x.shape[1],))


def _stack_inputs(rows, n):
    """Rows (Dual/Var/ndarray of shape (N,) or scalar) -> (k, N) Dual."""
    duals = [Dual.lift(r) for r in rows]
    vals = [d.val for d in duals]
    if any(isinstance(v, Var) for v in vals):
        val = ad.stack_rows(vals)
    else:
        val = np.stack([np.broadcast_to(np.asarray(v, dtype=float), (n,)) for v in vals])
    tans = [d.tan for d in duals]
    if all(t is None for t in tans):
        return Dual(val, None)
    filled = [np.zeros(n) if t is None else t for t in tans]
    if any(isinstance(t, Var) for t in filled):
        tan = ad.stack_rows(filled)
    else:
        tan = np.stack(filled)
    return Dual(val, tan)


def _mlp(stack, x, act):
    for W, b in stack[:-1]:
        x = act(ad.affine(W, b, x))
    W, b = stack[-1]
    return ad.affine(W, b, x)


def graph_locator(views: ModelViews, spec: ModelSpec, t, n: int):
    """Shock-location curve r_s(t) = r_min + span * sigmoid(net(t))."""
    act = ACTIVATIONS[spec.activation]
    th = _norm_t(Dual.lift(t), spec)
    out = _row0(_mlp(views.locator, _stack_inputs([th], n), act))
    return spec.domain.r_min + spec.domain.span * ad.sigmoid(out)


def graph_forward(views: ModelViews, spec: ModelSpec, t, r, r_s=None):
    """Full model on a batch.

    t is a Dual (or plain array) of shape (N,); r is a constant array of
    shape (N,).  ``r_s`` lets callers that evaluate several radial
    stencils at the same times reuse one locator pass.  Returns
    (v, r_s, h) as Duals.
    """
    n = int(np.shape(r)[-1]) if np.ndim(r) else 1
    r = np.broadcast_to(np.asarray(r, dtype=float), (n,))
    act = ACTIVATIONS[spec.activation]
    t = Dual.lift(t)

    if r_s is None:
        r_s = graph_locator(views, spec, t, n)
    r_s = Dual.lift(r_s)

    k = ad.softplus(Dual.lift(views.kappa_raw))
    k = Dual(_row0_scalar(k.val), None if k.tan is None else _row0_scalar(k.tan))
    h = ad.sigmoid(k * (-(r_s - r)))

    th = _norm_t(t, spec)
    rh = _norm_r(r, spec)
    v_smooth = _row0(_mlp(views.smooth, _stack_inputs([th, rh], n), act))

    feat_rows = {"t": th, "r": rh, "h": h}
    feat_in = _stack_inputs([feat_rows[k_] for k_ in spec.shock_feature_inputs], n)
    v_shock = _row0(_mlp(views.feature, feat_in, act))

    return Dual.lift(v_smooth) + v_shock, r_s, h


def _row0_scalar(x):
    """(1,) -> scalar-shaped, so products broadcast as plain scalars."""
    if isinstance(x, Var):
        return ad.reshape(x, ())
    return np.reshape(np.asarray(x), ())


def model_time_fn(spec: ModelSpec):
    """Adapter with the (theta, t, r) -> Dual shape that
    ``autodiff.eval_with_time_tangent`` expects."""

    def fn(theta, t, r):
        t = Dual.lift(t)
        if np.ndim(ad.value_of(t.val)) == 0:
            t = Dual(_as_vec1(t.val), None if t.tan is None else _as_vec1(t.tan))
        views = graph_views(theta, spec)
        v, _, _ = graph_forward(views, spec, t, np.atleast_1d(np.asarray(r, dtype=float)))
        return v

    return fn


def _as_vec1(x):
    return ad.reshape(x, (1,)) if isinstance(x, Var) else np.reshape(x, (1,))


# -- plain-numpy forward (prediction grids, oracles) -------------------------

def predict(params: np.ndarray, spec: ModelSpec, t, r):
    """Vectorized forward pass without a tape.

    Returns (v, r_s, h) arrays broadcast over the common shape of t, r.
    """
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    views = unflatten(params, spec)
    act = np.tanh

    def mlp(stack, x):
        for W, b in stack[:-1]:
            x = act(W @ x + b[:, None])
        W, b = stack[-1]
        return (W @ x + b[:, None])[0]

    th = _norm_t(t.ravel(), spec)
    rh = _norm_r(r.ravel(), spec)
    a = mlp(views.locator, th[None, :])
    r_s = spec.domain.r_min + spec.domain.span * ad.sigmoid(a)
    k = float(ad.softplus(views.kappa_raw[0]))
    h = ad.sigmoid(k * (r.ravel() - r_s))
    v = mlp(views.smooth, np.stack([th, rh]))
    rows = {"t": th, "r": rh, "h": h}
    v = v + mlp(views.feature, np.stack([rows[key] for key in spec.shock_feature_inputs]))
    return v.reshape(t.shape), r_s.reshape(t.shape), h.reshape(t.shape)


def forward(params: np.ndarray, spec: ModelSpec, t: float, r: float) -> ModelOutput:
    """Single-point evaluation of the composite model."""
    v, r_s, h = predict(params, spec, [t], [r])
    return ModelOutput(v=float(v[0]), r_s=float(r_s[0]), h=float(h[0]))


def shock_location(params: np.ndarray, spec: ModelSpec, t):
    """r_s(t), strictly inside [r_min, r_max]."""
    t = np.asarray(t, dtype=float)
    _, r_s, _ = predict(params, spec, np.atleast_1d(t), np.full(max(t.size, 1), spec.domain.r_min))
    return r_s if t.ndim else float(r_s[0])


def heaviside_smooth(params: np.ndarray, spec: ModelSpec, t: float, r: float) -> float:
    """Smoothed indicator sigmoid(k (r - r_s(t)))."""
    return forward(params, spec, t, r).h


# -- persistence --------------------------------------------------------------

FORMAT_VERSION = 1


def save_model(path, spec: ModelSpec, params: np.ndarray, seed=None):
    """Structured-text snapshot with exact decimal round-trip."""
    doc = {
        "format": FORMAT_VERSION,
        "spec": {
            "domain": {
                "r_min": spec.domain.r_min,
                "r_max": spec.domain.r_max,
                "epsilon": spec.domain.epsilon,
            },
            "smooth_hidden": list(spec.smooth_hidden),
            "locator_hidden": list(spec.locator_hidden),
            "shock_feature_hidden": list(spec.shock_feature_hidden),
            "shock_feature_inputs": list(spec.shock_feature_inputs),
            "activation": spec.activation,
            "t_min": spec.t_min,
            "t_max": spec.t_max,
        },
        "seed": seed,
        "params": [float(x) for x in np.asarray(params, dtype=float)],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def load_model(path) -> tuple[ModelSpec, np.ndarray, object]:
    with open(path) as f:
        doc = json.load(f)
    s = doc["spec"]
    spec = ModelSpec(
        domain=RadialDomain(**s["domain"]),
        smooth_hidden=tuple(s["smooth_hidden"]),
        locator_hidden=tuple(s["locator_hidden"]),
        shock_feature_hidden=tuple(s["shock_feature_hidden"]),
        shock_feature_inputs=tuple(s["shock_feature_inputs"]),
        activation=s["activation"],
        t_min=s["t_min"],
        t_max=s["t_max"],
    )
    params = np.asarray(doc["params"], dtype=float)
    if params.shape != (param_count(spec),):
        raise ValueError("model file parameter count does not match its spec")
    return spec, params, doc.get("seed")

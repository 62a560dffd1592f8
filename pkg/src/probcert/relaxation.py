"""Linear relaxations of activations and backward bound propagation.

Every neuron's activation is sandwiched between two lines on its
pre-activation interval ``[l, u]``; composing those lines from the output
back to the input yields affine lower/upper bounds on each class margin
that hold over the whole input ball.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .network import Activation, InputSpec, Network, activate, activate_derivative, dual_norm

DEGENERATE_WIDTH = 1e-12
TANGENT_TOL = 1e-9
TANGENT_MAX_ITER = 100


class Mode(str, Enum):
    FASTLIN = "fastlin"
    ADAPTIVE = "adaptive"


class BoundError(ArithmeticError):
    """Non-finite intermediate bound."""


@dataclass(frozen=True)
class NeuronRelaxation:
    """``alpha_l*s + beta_l <= act(s) <= alpha_u*s + beta_u`` for ``s`` in ``[l, u]``."""

    alpha_u: float
    beta_u: float
    alpha_l: float
    beta_l: float

    def lower(self, s):
        return self.alpha_l * np.asarray(s) + self.beta_l

    def upper(self, s):
        return self.alpha_u * np.asarray(s) + self.beta_u


@dataclass(frozen=True)
class LayerRelaxation:
    alpha_u: np.ndarray
    beta_u: np.ndarray
    alpha_l: np.ndarray
    beta_l: np.ndarray


@dataclass(frozen=True)
class PreactivationBounds:
    lower: tuple[np.ndarray, ...]
    upper: tuple[np.ndarray, ...]
    relaxations: tuple[LayerRelaxation | None, ...]

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"lower": lo.tolist(), "upper": hi.tolist()}
                for lo, hi in zip(self.lower, self.upper)
            ]
        }


@dataclass(frozen=True)
class MarginLinearBounds:
    """``A_L x + d_L <= f_c(x) - f_t(x) <= A_U x + d_U`` on the input ball."""

    t: int
    A_L: np.ndarray
    A_U: np.ndarray
    d_L: float
    d_U: float

    def lower_at(self, x):
        return np.asarray(x) @ self.A_L + self.d_L

    def upper_at(self, x):
        return np.asarray(x) @ self.A_U + self.d_U


# ------------------------------------------------------------ single neuron


def _relu_layer(l, u, mode):
    n = l.shape
    a_u, b_u = np.zeros(n), np.zeros(n)
    a_l, b_l = np.zeros(n), np.zeros(n)
    active = l >= 0
    a_u[active] = 1.0
    a_l[active] = 1.0
    cross = (l < 0) & (u > 0)
    narrow = cross & (u - l < DEGENERATE_WIDTH)
    cross &= ~narrow
    # narrow straddling interval: constant bounds relu(l)=0 and relu(u)
    b_u[narrow] = u[narrow]
    lc, uc = l[cross], u[cross]
    slope = uc / (uc - lc)
    a_u[cross] = slope
    b_u[cross] = -slope * lc
    if Mode(mode) is Mode.FASTLIN:
        a_l[cross] = slope
    else:
        a_l[cross] = (uc >= -lc).astype(float)
    return LayerRelaxation(a_u, b_u, a_l, b_l)


def _tangent(kind, d):
    slope = activate_derivative(kind, d)
    return slope, activate(kind, d) - slope * d


def _bisect(fn, lo, hi, keep_hi):
    """Vectorized bisection for a sign change of ``fn`` (>=0 at lo side, <0 at hi side
    when ``keep_hi``; mirrored otherwise). Returns the endpoint on the negative side."""
    lo, hi = lo.copy(), hi.copy()
    for _ in range(TANGENT_MAX_ITER):
        if np.all(hi - lo < TANGENT_TOL):
            break
        mid = 0.5 * (lo + hi)
        neg = fn(mid) < 0
        if keep_hi:
            hi = np.where(neg, mid, hi)
            lo = np.where(neg, lo, mid)
        else:
            lo = np.where(neg, mid, lo)
            hi = np.where(neg, hi, mid)
    return hi if keep_hi else lo


def _sshape_layer(kind, l, u):
    n = l.shape
    a_u, b_u = np.zeros(n), np.zeros(n)
    a_l, b_l = np.zeros(n), np.zeros(n)
    sl, su = activate(kind, l), activate(kind, u)

    narrow = (u - l) < DEGENERATE_WIDTH
    b_l[narrow] = sl[narrow]
    b_u[narrow] = su[narrow]

    width = np.where(narrow, 1.0, u - l)
    k = (su - sl) / width
    sec_b = sl - k * l
    mid = 0.5 * (l + u)
    tan_a, tan_b = _tangent(kind, mid)

    convex = ~narrow & (u <= 0)
    a_u[convex], b_u[convex] = k[convex], sec_b[convex]
    a_l[convex], b_l[convex] = tan_a[convex], tan_b[convex]

    concave = ~narrow & (l >= 0)
    a_l[concave], b_l[concave] = k[concave], sec_b[concave]
    a_u[concave], b_u[concave] = tan_a[concave], tan_b[concave]

    cross = ~narrow & (l < 0) & (u > 0)
    if np.any(cross):
        lc, uc = l[cross], u[cross]
        slc, suc = sl[cross], su[cross]
        kc, secc = k[cross], sec_b[cross]

        # upper: line through (l, act(l)) tangent at d in [0, u]
        def gap_u(d):
            return activate_derivative(kind, d) * (d - lc) - (activate(kind, d) - slc)

        use_sec = gap_u(uc) >= 0
        d = _bisect(gap_u, np.zeros_like(uc), uc.copy(), keep_hi=True)
        ta, tb = _tangent(kind, d)
        a_u[cross] = np.where(use_sec, kc, ta)
        b_u[cross] = np.where(use_sec, secc, tb)

        # lower: line through (u, act(u)) tangent at d in [l, 0]
        def gap_l(d):
            return activate_derivative(kind, d) * (uc - d) - (suc - activate(kind, d))

        use_sec = gap_l(lc) >= 0
        d = _bisect(gap_l, lc.copy(), np.zeros_like(lc), keep_hi=False)
        ta, tb = _tangent(kind, d)
        a_l[cross] = np.where(use_sec, kc, ta)
        b_l[cross] = np.where(use_sec, secc, tb)
    return LayerRelaxation(a_u, b_u, a_l, b_l)


def relax_layer(kind: Activation, lower, upper, mode=Mode.ADAPTIVE) -> LayerRelaxation:
    """Vectorized relaxation of one layer's activations on ``[lower, upper]``."""
    l = np.atleast_1d(np.asarray(lower, dtype=np.float64))
    u = np.atleast_1d(np.asarray(upper, dtype=np.float64))
    if np.any(np.isnan(l)) or np.any(np.isnan(u)):
        raise BoundError("NaN pre-activation bound")
    if np.any(l > u):
        j = int(np.argmax(l > u))
        raise ValueError(f"lower bound exceeds upper bound at neuron {j}: {l[j]} > {u[j]}")
    kind = Activation(kind)
    if kind is Activation.IDENTITY:
        one, zero = np.ones_like(l), np.zeros_like(l)
        return LayerRelaxation(one, zero, one.copy(), zero.copy())
    if kind is Activation.RELU:
        return _relu_layer(l, u, mode)
    return _sshape_layer(kind, l, u)


def relax_activation(kind: Activation, l: float, u: float, mode=Mode.ADAPTIVE) -> NeuronRelaxation:
    r = relax_layer(kind, [l], [u], mode)
    return NeuronRelaxation(
        float(r.alpha_u[0]), float(r.beta_u[0]), float(r.alpha_l[0]), float(r.beta_l[0])
    )


# ------------------------------------------------------- backward propagation


def _through_activation(lam, rel: LayerRelaxation, lower: bool):
    # strict sign dispatch; zero coefficients take the lower relaxation
    if lower:
        pick = lam >= 0
        slope = np.where(pick, rel.alpha_l, rel.alpha_u)
        inter = np.where(pick, rel.beta_l, rel.beta_u)
    else:
        pick = lam > 0
        slope = np.where(pick, rel.alpha_u, rel.alpha_l)
        inter = np.where(pick, rel.beta_u, rel.beta_l)
    return lam * slope, (lam * inter).sum(axis=-1)


def _propagate(net: Network, relax, top: int, lam, const, lower: bool):
    """Push ``lam @ z^(top) + const`` back to the input through layers ``top..0``.

    ``relax[k]`` relaxes layer k's activation (None means exact identity).
    Returns input coefficients and constant.
    """
    lam = np.array(lam, dtype=np.float64)
    const = np.array(const, dtype=np.float64)
    for k in range(top, -1, -1):
        layer = net.layers[k]
        const = const + lam @ layer.bias
        lam = lam @ layer.weights
        if k > 0 and relax[k - 1] is not None:
            lam, extra = _through_activation(lam, relax[k - 1], lower)
            const = const + extra
    return lam, const


def _close_over_ball(lam, const, x0, epsilon, p):
    centre = lam @ x0 + const
    radius = epsilon * np.linalg.norm(lam, ord=dual_norm(p), axis=-1)
    return centre - radius, centre + radius


def _check_finite(arr, layer, what):
    bad = ~np.isfinite(arr)
    if np.any(bad):
        j = int(np.argmax(bad))
        raise BoundError(f"non-finite {what} bound at layer {layer}, neuron {j}")


def compute_preactivation_bounds(net: Network, spec: InputSpec, mode=Mode.ADAPTIVE) -> PreactivationBounds:
    mode = Mode(mode)
    lows, highs, relax = [], [], []
    for k, layer in enumerate(net.layers):
        eye = np.eye(layer.out_dim)
        lam_l, c_l = _propagate(net, relax, k, eye, np.zeros(layer.out_dim), lower=True)
        lam_u, c_u = _propagate(net, relax, k, eye, np.zeros(layer.out_dim), lower=False)
        lo, _ = _close_over_ball(lam_l, c_l, spec.x0, spec.epsilon, spec.p)
        _, hi = _close_over_ball(lam_u, c_u, spec.x0, spec.epsilon, spec.p)
        _check_finite(lo, k, "lower")
        _check_finite(hi, k, "upper")
        # rounding can cross the bounds of an exactly determined neuron
        lo = np.minimum(lo, hi)
        lows.append(lo)
        highs.append(hi)
        if layer.activation is Activation.IDENTITY:
            relax.append(None)
        else:
            relax.append(relax_layer(layer.activation, lo, hi, mode))
    return PreactivationBounds(tuple(lows), tuple(highs), tuple(relax))


def margin_bounds_all(net: Network, spec: InputSpec, mode=Mode.ADAPTIVE, pre=None) -> dict[int, MarginLinearBounds]:
    """Affine margin bounds for every target in ``spec.targets``."""
    if pre is None:
        pre = compute_preactivation_bounds(net, spec, mode)
    targets = list(spec.targets)
    rows = np.zeros((len(targets), net.output_dim))
    rows[:, spec.c] = 1.0
    rows[np.arange(len(targets)), targets] -= 1.0
    relax = list(pre.relaxations)
    top = net.depth - 1
    out = {}
    result = []
    for lower in (True, False):
        lam, const = rows, np.zeros(len(targets))
        if relax[top] is not None:
            lam, const = _through_activation(lam, relax[top], lower)
        lam, const = _propagate(net, relax, top, lam, const, lower)
        _check_finite(lam, 0, "margin coefficient")
        result.append((lam, const))
    (al, dl), (au, du) = result
    for i, t in enumerate(targets):
        a_l, a_u = al[i].copy(), au[i].copy()
        a_l.flags.writeable = False
        a_u.flags.writeable = False
        out[t] = MarginLinearBounds(t, a_l, a_u, float(dl[i]), float(du[i]))
    return out


def compute_margin_bounds(net: Network, spec: InputSpec, t: int, mode=Mode.ADAPTIVE, pre=None) -> MarginLinearBounds:
    if t == spec.c:
        raise ValueError("target class must differ from the predicted class")
    if not 0 <= t < net.output_dim:
        raise ValueError(f"target {t} outside 0..{net.output_dim - 1}")
    sub = InputSpec(spec.x0, spec.epsilon, spec.p, spec.c, (int(t),))
    return margin_bounds_all(net, sub, mode, pre)[int(t)]

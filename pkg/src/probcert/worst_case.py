"""Worst-case certification: closed-form affine minimization and radius bisection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import InputSpec, Network, dual_norm
from .relaxation import Mode, margin_bounds_all

DEFAULT_EPS_MAX = 1.0
DEFAULT_TOL = 1e-4
MAX_BISECTION_STEPS = 200


class NotCertifiableError(ValueError):
    """Raised when the prediction cannot be certified even at radius zero."""


def minimize_affine_over_ball(A, d: float, x0, epsilon: float, p) -> float:
    """Exact minimum of ``A @ x + d`` over ``||x - x0||_p <= epsilon`` (Hölder)."""
    A = np.asarray(A, dtype=np.float64)
    return float(A @ np.asarray(x0, dtype=np.float64) + d - epsilon * np.linalg.norm(A, ord=dual_norm(p)))


def maximize_affine_over_ball(A, d: float, x0, epsilon: float, p) -> float:
    A = np.asarray(A, dtype=np.float64)
    return float(A @ np.asarray(x0, dtype=np.float64) + d + epsilon * np.linalg.norm(A, ord=dual_norm(p)))


def certified_targets(net: Network, spec: InputSpec, epsilon: float, mode=Mode.ADAPTIVE) -> dict[int, bool]:
    s = spec.with_epsilon(epsilon)
    bounds = margin_bounds_all(net, s, mode)
    return {
        t: minimize_affine_over_ball(b.A_L, b.d_L, s.x0, epsilon, s.p) > 0
        for t, b in bounds.items()
    }


def is_certified(net: Network, spec: InputSpec, epsilon: float, mode=Mode.ADAPTIVE) -> bool:
    """True when every target's lower margin bound stays positive on the ball."""
    return all(certified_targets(net, spec, epsilon, mode).values())


def bisect_radius(predicate, eps_max: float, tol: float) -> float:
    """Largest ``eps`` in ``[0, eps_max]`` with ``predicate(eps)`` true, assuming monotonicity.

    Stops when the bracket width is below ``tol`` relative to its upper end and
    returns the certified (lower) end.
    """
    if eps_max <= 0 or tol <= 0:
        raise ValueError("eps_max and tol must be positive")
    if predicate(eps_max):
        return float(eps_max)
    lo, hi = 0.0, float(eps_max)
    for _ in range(MAX_BISECTION_STEPS):
        if hi - lo <= tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class WorstCaseCertificate:
    epsilon_certified: float
    per_target_epsilon: dict[int, float]
    p: float
    mode: Mode
    bisection_tolerance: float
    eps_max: float = DEFAULT_EPS_MAX
    notes: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "epsilon_certified": self.epsilon_certified,
            "per_target_epsilon": {str(t): e for t, e in sorted(self.per_target_epsilon.items())},
            "norm": "inf" if math.isinf(self.p) else int(self.p),
            "mode": self.mode.value,
            "bisection_tolerance": self.bisection_tolerance,
            "eps_max": self.eps_max,
        }


def certify_worst_case(
    net: Network,
    spec: InputSpec,
    mode=Mode.ADAPTIVE,
    eps_max: float = DEFAULT_EPS_MAX,
    tol: float = DEFAULT_TOL,
) -> WorstCaseCertificate:
    """Per-target bisection for the largest certifiable radius; ``spec.epsilon`` is ignored."""
    mode = Mode(mode)
    per_target = {}
    for t in spec.targets:
        single = InputSpec(spec.x0, 0.0, spec.p, spec.c, (t,))
        if not is_certified(net, single, 0.0, mode):
            raise NotCertifiableError(f"target {t}: margin bound is not positive at radius 0")
        per_target[t] = bisect_radius(lambda e, s=single: is_certified(net, s, e, mode), eps_max, tol)
    return WorstCaseCertificate(
        epsilon_certified=min(per_target.values()),
        per_target_epsilon=per_target,
        p=spec.p,
        mode=mode,
        bisection_tolerance=tol,
        eps_max=eps_max,
    )

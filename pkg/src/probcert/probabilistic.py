"""Probabilistic certificates from affine margin bounds.

Given ``g_L(x) <= g(x) <= g_U(x)`` on the input ball and a random input ``X``
supported there, ``P[g_L(X) > a] <= P[g(X) > a] <= P[g_U(X) > a]``. The two
outer probabilities only involve a weighted sum of the coordinates of ``X``
and are evaluated here three ways:

* ``hoeffding_bounds`` - a concentration bound, needing only bounded,
  symmetric, independent coordinates;
* ``gaussian_bounds`` - exact normal CDF for a Gaussian input;
* ``convolution_bounds`` - numerical CDF of a weighted sum of independent
  uniforms, built by convolving discretized densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy import signal, special

from .network import parse_norm
from .relaxation import MarginLinearBounds

PSD_FLOOR = -1e-10
DEFAULT_GRID_POINTS = 2**14
SANDWICH_TOL = 1e-12
BELOW_ONE = math.nextafter(1.0, 0.0)


class Method(str, Enum):
    HOEFFDING = "hoeffding"
    GAUSSIAN = "gaussian"
    CONVOLUTION = "convolution"


class NoiseKind(str, Enum):
    BOUNDED = "bounded"
    GAUSSIAN = "gaussian"


class ThreeSigmaError(ValueError):
    """Gaussian covariance puts too much mass outside the certified ball."""


class GridResolutionError(ValueError):
    """Convolution grid too coarse for the smallest weight."""


def _as_covariance(cov, n0: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 1:
        cov = np.diag(cov)
    if cov.shape != (n0, n0):
        raise ValueError(f"covariance has shape {cov.shape}, expected ({n0}, {n0})")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise ValueError("covariance is not symmetric")
    cov = 0.5 * (cov + cov.T)
    if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        if np.any(np.diag(cov) < PSD_FLOOR):
            raise ValueError("covariance has a negative variance")
        return np.diag(np.maximum(np.diag(cov), 0.0))
    lam, vec = np.linalg.eigh(cov)
    if lam.min() < PSD_FLOOR:
        raise ValueError(f"covariance is not positive semidefinite (min eigenvalue {lam.min():.3e})")
    if lam.min() < 0:
        cov = (vec * np.maximum(lam, 0.0)) @ vec.T
    return cov


def check_three_sigma(cov, epsilon: float) -> None:
    """Require every marginal standard deviation to be at most ``epsilon / 3``."""
    std = np.sqrt(np.maximum(np.diag(np.atleast_2d(cov)), 0.0))
    limit = epsilon / 3.0
    if np.any(std > limit * (1 + 1e-12)):
        i = int(np.argmax(std))
        raise ThreeSigmaError(
            f"3-sigma rule violated: std of coordinate {i} is {std[i]:.6g} > epsilon/3 = {limit:.6g}; "
            "at least 99.7% of each marginal must stay inside the ball"
        )


@dataclass(frozen=True)
class NoiseModel:
    """Distribution of the perturbed input, centred at ``x0``.

    ``bounded``: independent coordinates uniform on ``[x0_i - eps, x0_i + eps]``
    (the concentration path only uses boundedness and symmetry).
    ``gaussian``: ``N(x0, covariance)``, with ``epsilon`` the ball radius used
    for the 3-sigma check.
    """

    kind: NoiseKind
    x0: np.ndarray
    epsilon: float
    covariance: np.ndarray | None = None

    @classmethod
    def bounded(cls, x0, epsilon: float) -> "NoiseModel":
        if epsilon < 0:
            raise ValueError("half-width must be nonnegative")
        return cls(NoiseKind.BOUNDED, np.asarray(x0, dtype=np.float64), float(epsilon))

    @classmethod
    def gaussian(cls, x0, covariance, epsilon: float, check: bool = True) -> "NoiseModel":
        x0 = np.asarray(x0, dtype=np.float64)
        cov = _as_covariance(covariance, x0.size)
        if check:
            check_three_sigma(cov, epsilon)
        return cls(NoiseKind.GAUSSIAN, x0, float(epsilon), cov)

    @classmethod
    def isotropic_gaussian(cls, x0, epsilon: float) -> "NoiseModel":
        """``sigma = epsilon / 3`` on every coordinate."""
        x0 = np.asarray(x0, dtype=np.float64)
        return cls.gaussian(x0, np.full(x0.size, (epsilon / 3.0) ** 2), epsilon)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        d = self.x0.size
        if self.kind is NoiseKind.BOUNDED:
            return self.x0 + rng.uniform(-self.epsilon, self.epsilon, size=(n, d))
        diag = np.diag(self.covariance)
        if np.count_nonzero(self.covariance - np.diag(diag)) == 0:
            return self.x0 + rng.standard_normal((n, d)) * np.sqrt(diag)
        lam, vec = np.linalg.eigh(self.covariance)
        factor = vec * np.sqrt(np.maximum(lam, 0.0))
        return self.x0 + rng.standard_normal((n, d)) @ factor.T


@dataclass(frozen=True)
class ProbCertificate:
    """``gamma_L <= P[g_t(X) > a] <= gamma_U``."""

    gamma_L: float
    gamma_U: float
    a: float
    mu_L: float
    mu_U: float
    method: str
    sigma_L: float | None = None
    sigma_U: float | None = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("gamma_L", "gamma_U", "a", "mu_L", "mu_U", "sigma_L", "sigma_U", "method")}


def _centres(mlb: MarginLinearBounds, x0):
    x0 = np.asarray(x0, dtype=np.float64)
    return float(mlb.A_L @ x0 + mlb.d_L), float(mlb.A_U @ x0 + mlb.d_U)


def _clip01(v: float) -> float:
    return min(1.0, max(0.0, float(v)))


# ------------------------------------------------------------------ Hoeffding


def hoeffding_lower(mu: float, a: float, epsilon: float, norm2: float) -> float:
    """Lower bound on ``P[S > a]`` for ``S`` symmetric about ``mu``, summing terms
    bounded by ``|A_i| * epsilon``."""
    if epsilon == 0 or norm2 == 0:
        return 1.0 if mu > a else 0.0
    if mu - a < 0:
        return 0.0
    # the bound is below 1 for any spread; keep it so after rounding
    return min(-math.expm1(-((mu - a) ** 2) / (2 * epsilon**2 * norm2**2)), BELOW_ONE)


def hoeffding_upper(mu: float, a: float, epsilon: float, norm2: float) -> float:
    if epsilon == 0 or norm2 == 0:
        return 1.0 if mu > a else 0.0
    if a - mu < 0:
        return 1.0
    return math.exp(-((mu - a) ** 2) / (2 * epsilon**2 * norm2**2))


def hoeffding_bounds(mlb: MarginLinearBounds, x0, epsilon: float, a: float = 0.0) -> ProbCertificate:
    """Concentration-inequality certificate for bounded, symmetric, independent noise."""
    mu_l, mu_u = _centres(mlb, x0)
    gl = hoeffding_lower(mu_l, a, epsilon, float(np.linalg.norm(mlb.A_L)))
    gu = hoeffding_upper(mu_u, a, epsilon, float(np.linalg.norm(mlb.A_U)))
    return ProbCertificate(gl, gu, float(a), mu_l, mu_u, Method.HOEFFDING.value)


def clip_to_support(cert: ProbCertificate, mlb: MarginLinearBounds, epsilon: float) -> ProbCertificate:
    """Tighten a bounded-noise certificate where the answer is known exactly.

    If the lower affine bound exceeds ``a`` everywhere on the box of half-width
    ``epsilon`` then ``P[g_L(X) > a] = 1``; symmetrically for the upper bound.
    """
    gl, gu = cert.gamma_L, cert.gamma_U
    if cert.mu_L - epsilon * np.abs(mlb.A_L).sum() > cert.a:
        gl = 1.0
    if cert.mu_U + epsilon * np.abs(mlb.A_U).sum() <= cert.a:
        gu = 0.0
    return replace(cert, gamma_L=gl, gamma_U=gu)


# ------------------------------------------------------------------- Gaussian


def _normal_survival(mu: float, sigma: float, a: float) -> float:
    if sigma == 0:
        return 1.0 if mu > a else 0.0
    # 1/2 - 1/2 erf(x) == 1/2 erfc(x), better conditioned in the upper tail
    return float(0.5 * special.erfc((a - mu) / (sigma * math.sqrt(2.0))))


def gaussian_bounds(mlb: MarginLinearBounds, x0, covariance, a: float = 0.0,
                    epsilon: float | None = None) -> ProbCertificate:
    """Closed-form certificate for ``X ~ N(x0, covariance)``.

    When ``epsilon`` is given the covariance must satisfy the 3-sigma rule for
    that ball radius.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    cov = _as_covariance(covariance, x0.size)
    if epsilon is not None:
        check_three_sigma(cov, epsilon)
    mu_l, mu_u = _centres(mlb, x0)
    sl = math.sqrt(max(float(mlb.A_L @ cov @ mlb.A_L), 0.0))
    su = math.sqrt(max(float(mlb.A_U @ cov @ mlb.A_U), 0.0))
    return ProbCertificate(
        _normal_survival(mu_l, sl, a), _normal_survival(mu_u, su, a), float(a),
        mu_l, mu_u, Method.GAUSSIAN.value, sl, su,
    )


# ---------------------------------------------------------------- convolution


@dataclass(frozen=True)
class DistributionCDF:
    """Piecewise-linear CDF on a uniform grid of cell boundaries.

    ``slack`` bounds the magnitude of any component dropped from the
    convolution; survival bounds widen by it.
    """

    grid: np.ndarray
    cdf: np.ndarray
    cell: float
    slack: float = 0.0

    @property
    def support(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    def __call__(self, z):
        return np.interp(z, self.grid, self.cdf, left=0.0, right=1.0)

    def survival_lower(self, z: float) -> float:
        """Lower bound on ``P[S > z]``, rounded down one grid cell."""
        return _clip01(1.0 - float(self(z + self.cell + self.slack)))

    def survival_upper(self, z: float) -> float:
        return _clip01(1.0 - float(self(z - self.cell - self.slack)))


def _uniform_cell_masses(w: float, h: float) -> np.ndarray:
    """Masses of U[-w, w] on cells of width h centred at multiples of h."""
    k = math.ceil(w / h - 0.5)
    centres = np.arange(-k, k + 1) * h
    lo = np.clip(centres - h / 2, -w, w)
    hi = np.clip(centres + h / 2, -w, w)
    m = (hi - lo) / (2 * w)
    return m / m.sum()


def _tree_convolve(pmfs: list[np.ndarray]) -> np.ndarray:
    while len(pmfs) > 1:
        nxt = []
        for i in range(0, len(pmfs) - 1, 2):
            r = signal.convolve(pmfs[i], pmfs[i + 1], method="auto")
            np.clip(r, 0.0, None, out=r)
            nxt.append(r / r.sum())
        if len(pmfs) % 2:
            nxt.append(pmfs[-1])
        pmfs = nxt
    return pmfs[0]


def weighted_uniform_sum_cdf(half_widths, grid_points: int = DEFAULT_GRID_POINTS,
                             truncate: bool = False) -> DistributionCDF:
    """CDF of ``sum_i U_i`` with independent ``U_i ~ U[-w_i, w_i]``.

    The grid spacing is ``2 * sum(w) / grid_points``. Each nonzero component
    must span at least two cells; with ``truncate`` the narrower ones are
    dropped and their total half-width is carried as ``slack``.
    """
    w = np.abs(np.asarray(half_widths, dtype=np.float64).ravel())
    w = w[w > 0]
    if w.size == 0:
        return DistributionCDF(np.array([0.0, 0.0]), np.array([0.0, 1.0]), 0.0)
    h = 2.0 * w.sum() / grid_points
    narrow = w < h
    slack = 0.0
    if np.any(narrow):
        if not truncate:
            raise GridResolutionError(
                f"grid cell {h:.3g} is wider than half the support of {int(narrow.sum())} "
                f"component(s) (smallest half-width {w.min():.3g}); raise grid_points"
            )
        slack = float(w[narrow].sum())
        w = w[~narrow]
        if w.size == 0:
            return DistributionCDF(np.array([0.0, 0.0]), np.array([0.0, 1.0]), 0.0, slack)
    # sorted order keeps similar widths together in the pairwise tree
    pmf = _tree_convolve([_uniform_cell_masses(wi, h) for wi in np.sort(w)])
    k = (pmf.size - 1) // 2
    grid = (np.arange(-k, k + 2) - 0.5) * h
    cdf = np.concatenate([[0.0], np.cumsum(pmf)])
    cdf = np.minimum(np.maximum.accumulate(cdf), 1.0)
    cdf[-1] = 1.0
    return DistributionCDF(grid, cdf, h, slack)


def convolution_bounds(mlb: MarginLinearBounds, x0, epsilon: float, a: float = 0.0,
                       grid_points: int = DEFAULT_GRID_POINTS,
                       truncate: bool = False) -> ProbCertificate:
    """Certificate from the numerically convolved CDF, uniform noise of half-width ``epsilon``.

    ``g_L(X) = mu_L + sum_i A_L,i (X_i - x0_i)``, so ``gamma_L = P[S_L > a - mu_L]``.
    """
    mu_l, mu_u = _centres(mlb, x0)
    cdf_l = weighted_uniform_sum_cdf(mlb.A_L * epsilon, grid_points, truncate)
    cdf_u = weighted_uniform_sum_cdf(mlb.A_U * epsilon, grid_points, truncate)
    return ProbCertificate(
        cdf_l.survival_lower(a - mu_l), cdf_u.survival_upper(a - mu_u), float(a),
        mu_l, mu_u, Method.CONVOLUTION.value,
    )


# ------------------------------------------------------------------ combining


def theorem_sandwich(lower_cert: ProbCertificate, upper_cert: ProbCertificate) -> ProbCertificate:
    """Take ``gamma_L`` from one certificate and ``gamma_U`` from another.

    Both bound the same probability, so for support-exact methods
    ``gamma_L <= gamma_U`` is checked. Gaussian certificates integrate the
    affine bounds beyond the ball, where they need not be ordered, so the
    check is skipped for them.
    """
    if lower_cert.a != upper_cert.a:
        raise ValueError(f"thresholds differ: {lower_cert.a} vs {upper_cert.a}")
    gaussian = Method.GAUSSIAN.value in (lower_cert.method, upper_cert.method)
    if not gaussian and lower_cert.gamma_L > upper_cert.gamma_U + SANDWICH_TOL:
        raise ValueError(
            f"inconsistent sandwich: gamma_L={lower_cert.gamma_L} > gamma_U={upper_cert.gamma_U}"
        )
    method = (lower_cert.method if lower_cert.method == upper_cert.method
              else f"{lower_cert.method}+{upper_cert.method}")
    return ProbCertificate(
        lower_cert.gamma_L, upper_cert.gamma_U, lower_cert.a, lower_cert.mu_L, upper_cert.mu_U,
        method, lower_cert.sigma_L, upper_cert.sigma_U,
    )


def probabilistic_bounds(mlb: MarginLinearBounds, noise: NoiseModel, method, a: float = 0.0,
                         grid_points: int = DEFAULT_GRID_POINTS, support_clip: bool = False,
                         truncate: bool = False) -> ProbCertificate:
    """Dispatch to one certificate method; ``support_clip`` applies :func:`clip_to_support`
    to the bounded-noise methods."""
    method = Method(method)
    if method is Method.GAUSSIAN:
        if noise.kind is not NoiseKind.GAUSSIAN:
            raise ValueError("gaussian certificate needs a gaussian noise model")
        return gaussian_bounds(mlb, noise.x0, noise.covariance, a)
    if noise.kind is not NoiseKind.BOUNDED:
        raise ValueError(f"{method.value} certificate needs bounded noise")
    if method is Method.HOEFFDING:
        cert = hoeffding_bounds(mlb, noise.x0, noise.epsilon, a)
    else:
        cert = convolution_bounds(mlb, noise.x0, noise.epsilon, a, grid_points, truncate)
    return clip_to_support(cert, mlb, noise.epsilon) if support_clip else cert


def convert_norm_certificate(eps_inf: float, target_p, n0: int) -> float:
    """Radius of an l1/l2 ball contained in the certified l-infinity ball.

    ``||v||_inf <= ||v||_2 <= ||v||_1``, so the same radius is contained; no
    dimension-dependent inflation is applied.
    """
    if eps_inf < 0:
        raise ValueError("radius must be nonnegative")
    if n0 < 1:
        raise ValueError("input dimension must be positive")
    p = parse_norm(target_p)
    if p not in (1.0, 2.0):
        raise ValueError(f"unsupported norm {target_p}")
    return float(eps_inf)

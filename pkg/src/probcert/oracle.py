"""Ground-truth machinery for validation: Monte Carlo, attack search, grid integration.

None of this is used to produce certificates; it only judges them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .network import InputSpec, Network, forward
from .probabilistic import NoiseModel

MC_BATCH = 100_000
FD_STEP = 1e-4
MAX_GRID_POINTS = 2**22


def stream_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator for sub-stream ``stream`` of ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def _min_margin(net: Network, x, c: int, targets: Sequence[int]):
    logits = forward(net, x)
    return logits[..., [c]] - logits[..., list(targets)]


@dataclass(frozen=True)
class McEstimate:
    p_hat: float
    n_samples: int
    seed: int

    @property
    def std_error(self) -> float:
        return math.sqrt(self.p_hat * (1.0 - self.p_hat) / self.n_samples)

    def to_dict(self) -> dict:
        return {"p_hat": self.p_hat, "n_samples": self.n_samples,
                "std_error": self.std_error, "seed": self.seed}


def mc_probability(net: Network, x0, noise: NoiseModel, c: int, t, a: float = 0.0,
                   n_samples: int = 1_000_000, seed: int = 0) -> McEstimate:
    """Fraction of noisy inputs with ``f_c - f_t > a``.

    ``t`` may be a single class or a sequence, in which case every margin
    must exceed ``a``. Batches come from independent sub-streams of ``seed``
    and only their counts are merged.
    """
    if n_samples < 1000:
        raise ValueError("use at least 1000 samples")
    targets = [int(t)] if np.isscalar(t) else [int(s) for s in t]
    if c in targets:
        raise ValueError("target equals the reference class")
    hits = 0
    done = 0
    stream = 0
    while done < n_samples:
        n = min(MC_BATCH, n_samples - done)
        x = noise.sample(stream_rng(seed, stream), n)
        m = _min_margin(net, x, c, targets)
        hits += int(np.count_nonzero(np.all(m > a, axis=-1)))
        done += n
        stream += 1
    return McEstimate(hits / n_samples, n_samples, int(seed))


# -------------------------------------------------------------- attack search


def _ball_samples(rng, x0, epsilon, p, n):
    d = x0.size
    half = n // 2
    if math.isinf(p):
        inner = rng.uniform(-1.0, 1.0, size=(n - half, d))
        corners = rng.choice([-1.0, 1.0], size=(half, d))
        delta = np.vstack([inner, corners])
    else:
        if p == 2:
            g = rng.standard_normal((n, d))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
        else:
            g = rng.exponential(size=(n, d)) * rng.choice([-1.0, 1.0], size=(n, d))
            g /= np.abs(g).sum(axis=1, keepdims=True)
        r = rng.uniform(size=(n, 1)) ** (1.0 / d)
        r[:half] = 1.0
        delta = g * r
    return x0 + epsilon * delta


def _project(delta, epsilon, p):
    if math.isinf(p):
        return np.clip(delta, -epsilon, epsilon)
    norm = np.linalg.norm(delta, ord=p)
    return delta if norm <= epsilon else delta * (epsilon / norm)


def _fd_gradient(fn, x, step):
    d = x.size
    pts = np.vstack([x + step * np.eye(d), x - step * np.eye(d)])
    vals = fn(pts)
    return (vals[:d] - vals[d:]) / (2 * step)


def _steepest_step(grad, epsilon, p):
    if not np.any(grad):
        return np.zeros_like(grad)
    if math.isinf(p):
        return -epsilon * np.sign(grad)
    if p == 2:
        return -epsilon * grad / np.linalg.norm(grad)
    out = np.zeros_like(grad)
    j = int(np.argmax(np.abs(grad)))
    out[j] = -epsilon * np.sign(grad[j])
    return out


def attack_search(net: Network, spec: InputSpec, epsilon: float, n_random: int = 1000,
                  seed: int = 0, n_steps: int = 10) -> np.ndarray | None:
    """Look for ``x`` in the ball where some target logit reaches the predicted one.

    Random sampling (half of it on the ball's boundary or corners) plus
    projected descent on finite-difference gradients of each margin. Finding
    nothing proves nothing.
    """
    x0 = np.asarray(spec.x0, dtype=np.float64)
    if epsilon <= 0:
        return None
    c, targets = spec.c, list(spec.targets)
    rng = stream_rng(seed)

    def worst(x):
        return _min_margin(net, x, c, targets).min(axis=-1)

    x = _ball_samples(rng, x0, epsilon, spec.p, n_random)
    x = x0 + np.array([_project(dx, epsilon, spec.p) for dx in x - x0])
    m = worst(x)
    if np.any(m <= 0):
        return x[int(np.argmax(m <= 0))]

    step = FD_STEP * epsilon
    for t in targets:
        def fn(z, t=t):
            return _min_margin(net, z, c, [t])[..., 0]

        # one corner jump from x0, then a few shrinking projected steps
        delta = _steepest_step(_fd_gradient(fn, x0, step), epsilon, spec.p)
        for k in range(n_steps):
            cand = x0 + delta
            if worst(cand) <= 0:
                return cand
            g = _fd_gradient(fn, cand, step)
            delta = _project(delta + _steepest_step(g, epsilon / (k + 2), spec.p), epsilon, spec.p)
    return None


# --------------------------------------------------------- grid integration


def exact_probability_grid(net: Network, x0, half_width: float, c: int, t: int, a: float = 0.0,
                           cells_per_dim: int = 16, tol: float = 1e-3) -> float:
    """Midpoint-rule ``P[f_c - f_t > a]`` under uniform noise on a box, refined until stable."""
    x0 = np.asarray(x0, dtype=np.float64)
    d = x0.size
    if d > 4:
        raise ValueError(f"grid integration supports at most 4 input dimensions, got {d}")
    if half_width == 0:
        return float(forward(net, x0)[c] - forward(net, x0)[t] > a)

    def integrate(n):
        centres = (np.arange(n) + 0.5) / n * 2.0 - 1.0
        mesh = np.stack(np.meshgrid(*([centres] * d), indexing="ij"), axis=-1).reshape(-1, d)
        vals = []
        for chunk in np.array_split(mesh, max(1, mesh.shape[0] // MC_BATCH)):
            logits = forward(net, x0 + half_width * chunk)
            vals.append(logits[:, c] - logits[:, t] > a)
        return float(np.concatenate(vals).mean())

    n = cells_per_dim
    prev = integrate(n)
    while (2 * n) ** d <= MAX_GRID_POINTS:
        n *= 2
        cur = integrate(n)
        if abs(cur - prev) < tol:
            return cur
        prev = cur
    return prev

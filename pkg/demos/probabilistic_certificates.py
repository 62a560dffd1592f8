"""Probabilistic certificates on the synthetic classifier.

Run ``demos/train_synthetic_classifier.py`` first (or use the copy under
tests/data).
"""

import sys

import numpy as np

from probcert.driver import certify_proven_radius, target_confidences
from probcert.network import InputSpec, load_input, load_network
from probcert.oracle import mc_probability
from probcert.probabilistic import NoiseModel, convolution_bounds, gaussian_bounds, hoeffding_bounds
from probcert.relaxation import margin_bounds_all
from probcert.worst_case import certify_worst_case

data = sys.argv[1] if len(sys.argv) > 1 else "tests/data"
net = load_network(f"{data}/synthetic_50x20x20x5.json")
x0, label = load_input(f"{data}/inputs/input_000.json")
spec = InputSpec.build(net, x0)
print("label", label, "predicted", spec.c)

eps_w = certify_worst_case(net, spec).epsilon_certified
print("worst-case radius:", round(eps_w, 5))

# a little past that radius the worst case gives up, but most noise is harmless
eps = 1.2 * eps_w
bounds = margin_bounds_all(net, spec.with_epsilon(eps))
cov = np.full(x0.size, (eps / 3) ** 2)
print(f"\nat eps = {eps:.4f}")
print("target  hoeffding  convolution  gaussian   MC(uniform)")
for t, mlb in bounds.items():
    h = hoeffding_bounds(mlb, x0, eps).gamma_L
    c = convolution_bounds(mlb, x0, eps, truncate=True).gamma_L
    g = gaussian_bounds(mlb, x0, cov).gamma_L
    mc = mc_probability(net, x0, NoiseModel.bounded(x0, eps), spec.c, t, n_samples=200_000).p_hat
    print(f"{t:>6}  {h:9.5f}  {c:11.5f}  {g:8.5f}  {mc:11.5f}")

# the driver's view: one confidence per target, support clipping included
print("\nper-target confidence:", {t: round(g, 5) for t, g in target_confidences(net, spec, eps).items()})

# radius as a function of confidence
print("\nconfidence  hoeffding  convolution  gaussian")
for gamma in (0.9999, 0.99, 0.9, 0.75, 0.5):
    row = [certify_proven_radius(net, spec, "bounded", m, gamma) for m in ("hoeffding", "convolution")]
    row.append(certify_proven_radius(net, spec, "gaussian", "gaussian", gamma))
    print(f"{gamma:10}  " + "  ".join(f"{r:9.5f}" for r in row))

"""Linear relaxations, margin bounds and the worst-case radius on a toy network."""

import numpy as np

from probcert.network import InputSpec, Network, forward
from probcert.oracle import attack_search
from probcert.relaxation import Mode, compute_margin_bounds, compute_preactivation_bounds, relax_activation
from probcert.worst_case import certify_worst_case, minimize_affine_over_ball

# a straddling ReLU gets a triangle-shaped relaxation
for mode in Mode:
    r = relax_activation("relu", -1.0, 2.0, mode)
    print(mode.value, "upper", (r.alpha_u, r.beta_u), "lower", (r.alpha_l, r.beta_l))

# S-shaped activations use secants and tangents
r = relax_activation("tanh", -0.8, 0.9)
s = np.linspace(-0.8, 0.9, 7)
print(np.c_[s, r.lower(s), np.tanh(s), r.upper(s)].round(4))

# 2 -> 2 -> 2 ReLU network
w1 = np.array([[1.0, 1.0], [1.0, -1.0]])
net = Network.from_arrays([w1, np.eye(2)], [np.zeros(2), np.zeros(2)], ["relu", "identity"])
x0 = np.array([0.5, 0.1])
print("logits at x0:", forward(net, x0))

spec = InputSpec.build(net, x0, epsilon=0.5)
pre = compute_preactivation_bounds(net, spec)
print("hidden pre-activation bounds:", pre.lower[0], pre.upper[0])

mlb = compute_margin_bounds(net, spec, t=1)
print("A_L =", mlb.A_L, "d_L =", mlb.d_L)
print("A_U =", mlb.A_U, "d_U =", mlb.d_U)
print("min of the lower bound on the ball:", minimize_affine_over_ball(mlb.A_L, mlb.d_L, x0, 0.5, np.inf))

# largest certified l_inf radius, per target
cert = certify_worst_case(net, InputSpec.build(net, x0))
print("certified radius:", cert.epsilon_certified, cert.per_target_epsilon)

# nothing to find inside, something just outside
eps = cert.epsilon_certified
print("attack at eps:", attack_search(net, spec, eps))
print("attack at 3 eps:", attack_search(net, spec, 3 * eps))

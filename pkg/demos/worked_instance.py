"""Two actions, Q = (0, 1), uniform behavior, target V = 0.7.

The hard extraction has to move the behavior mean from 0.5 up to 0.7 while
staying as close to uniform as possible under the KL cost. Three unrelated
computations land on the same answer: bisection on the tilt, gradient
ascent on the dual, and a brute-force simplex search that never sees a
multiplier.
"""

import numpy as np

from align_extract import LOG, SimplexInstance, oracle_ipf, oracle_ipf_soft, solve_beta_log, solve_multipliers_gradient
from align_extract.multipliers import alpha_from_beta_log

q = np.array([0.0, 1.0])
mu = np.array([0.5, 0.5])
v = 0.7

beta = solve_beta_log(q, mu, v)
alpha = alpha_from_beta_log(beta, q, mu)
print(f"bisection:  beta = {beta:.12f}   (-ln(7/3) = {-np.log(7 / 3):.12f})")
print(f"            alpha = {alpha:.12f}")
print("            policy =", mu * np.exp(-alpha - beta * q - 1.0))

fit = solve_multipliers_gradient(q, mu, v, LOG)
print(f"gradient:   beta = {fit.beta:.12f} after {fit.iterations} iterations ({fit.status})")

row = oracle_ipf(SimplexInstance(mu, q, v))
print("oracle:     policy =", row)

# the soft relaxation only penalizes each action's distance from V, so E_pi[Q] is free to
# fall short of 0.7 at small eta and to overshoot it at large eta
print("\nsoft relaxation with V fixed at 0.7:")
for eta in (0.5, 1.0, 3.0, 10.0):
    soft, _ = oracle_ipf_soft(SimplexInstance(mu, q, v, LOG, eta))
    print(f"  eta={eta:<4}  pi={np.round(soft, 6)}  E_pi[Q]={soft @ q:.4f}")

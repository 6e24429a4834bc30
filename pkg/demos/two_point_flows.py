"""
Two-point flows against the scalar recursion
=============================================

On two unit-mass points joined by a unit edge, a mean-zero datum ``(s, -s)``
stays of that form and each implicit Euler step solves the scalar equation
``s + tau (2 s)^(p-1) = g``. For p = 1 the flow moves at unit speed and dies
at ``t = 1``; for 1 < p < 2 the continuum flow dies at a finite time while
the discrete one only decays geometrically in its last steps; for p >= 2
it never dies.
"""

import numpy as np
from scipy.optimize import brentq

from cheegerflow import FlowConfig, evolve, extinction_time, lambda1, two_point_space, verify_decay_bounds

space = two_point_space()
u0 = np.array([1.0, -1.0])
tau = 1e-3


def scalar_recursion(p, n):
    s = [1.0]
    for _ in range(n):
        g = s[-1]
        if g <= 0:
            s.append(0.0)
        elif p == 1:
            s.append(max(g - tau, 0.0))
        else:
            s.append(brentq(lambda x: x + tau * (2 * x) ** (p - 1) - g, 0.0, g, xtol=1e-300))
    return np.array(s)


print(f"{'p':>4} {'lambda1':>9} {'T_ex':>8} {'max |u - oracle|':>18} {'decay bound ok':>15}")
for p in (1.0, 1.5, 2.0, 3.0):
    traj = evolve(space, u0, FlowConfig(p=p, tau=tau, t_final=2.0))
    s = scalar_recursion(p, len(traj) - 1)
    err = np.abs(traj.states[:, 0] - s).max()
    lam = lambda1(space, p).lambda1
    T = extinction_time(traj)
    rep = verify_decay_bounds(traj, lam)
    print(f"{p:4.1f} {lam:9.6f} {('-' if T is None else f'{T:.4f}'):>8} {err:18.2e} {str(rep.passed):>15}")

# continuum extinction time for p = 1.5 is sqrt(2); the discrete one lags by O(tau log 1/tau)
for tau_ in (1e-2, 1e-3, 1e-4):
    traj = evolve(space, u0, FlowConfig(p=1.5, tau=tau_, t_final=2.0), keep_certificates=False)
    print(f"p=1.5 tau={tau_:.0e}: T_ex = {extinction_time(traj):.5f}  (sqrt 2 = {np.sqrt(2):.5f})")

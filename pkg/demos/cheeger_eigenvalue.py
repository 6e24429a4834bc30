"""
First nonlinear eigenvalue on a few graph families
==================================================

``lambda1`` minimises the Rayleigh quotient ``p E_p(u) / ||u - mean||_p^p``.
At p = 2 it must agree with the second generalised eigenvalue of the weighted
Laplacian; at p = 1 it is a Cheeger-type constant and the minimiser is close
to a two-valued cut indicator.
"""

import numpy as np
from scipy import linalg

from cheegerflow import generate, lambda1, path_graph

spaces = {
    "path(8)": path_graph(8),
    "star(6)": generate({"kind": "star", "size": 6}),
    "random-geometric(32)": generate({"kind": "random-geometric", "size": 32, "weight_law": "uniform"}, seed=7),
}


def laplacian_eigenvalue(space):
    n = space.n_nodes
    L = np.zeros((n, n))
    for (i, j), w in zip(space.edges, space.weights):
        L[[i, j, i, j], [i, j, j, i]] += [w, w, -w, -w]
    return linalg.eigh(L, np.diag(space.nu), eigvals_only=True)[1]


for name, sp in spaces.items():
    row = {p: lambda1(sp, p, restarts=8) for p in (1.0, 1.5, 2.0, 3.0)}
    print(name)
    for p, est in row.items():
        print(f"  p={p:3.1f}  lambda1 = {est.lambda1:.8f}")
    print(f"  Laplacian eigenvalue       {laplacian_eigenvalue(sp):.8f}")
    u = row[1.0].minimizer
    print(f"  p=1 minimiser takes {len(np.unique(np.round(u, 6)))} distinct values")

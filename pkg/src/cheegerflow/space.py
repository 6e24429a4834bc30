"""
Finite metric measure spaces with a first-order calculus.

Two backends are provided:

* :class:`WeightedGraphSpace` -- nodes carry a measure ``nu``, undirected
  edges carry a weight ``w``. Edge fields are 1-D arrays aligned with
  ``space.edges`` and store the value on the oriented edge ``(i, j)``,
  ``i < j``; the value on ``(j, i)`` is its negative.
* :class:`FinslerGridSpace` -- a regular 1-D or 2-D grid with spacing ``h``,
  node measure ``omega * h**dim`` and a weighted l^alpha Minkowski norm.
  Edge fields are arrays of shape ``(n_nodes, dim)`` built from forward
  differences, zero on the outflow boundary.

Node functions are plain float arrays of length ``n_nodes`` and node measures
are arrays of node masses. Spaces are immutable after construction.
"""

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph


def conjugate_exponent(p):
    """Hoelder conjugate ``q`` with ``1/p + 1/q = 1`` (``1 <-> inf``)."""
    p = float(p)
    if p == 1.0:
        return np.inf
    if np.isinf(p):
        return 1.0
    return p / (p - 1.0)


class Space:
    """Common helpers shared by both backends."""

    nu: np.ndarray

    @property
    def n_nodes(self):
        return self.nu.shape[0]

    @property
    def total_measure(self):
        return float(self.nu.sum())

    def integrate(self, f):
        """``sum_x nu(x) f(x)``."""
        return float(np.dot(self.nu, f))

    def inner(self, f, g):
        return float(np.dot(self.nu * f, g))

    def norm(self, f, r=2):
        """L^r(nu) norm of a node function, ``r`` in ``[1, inf]``."""
        f = np.abs(np.asarray(f, dtype=float))
        if np.isinf(r):
            return float(f.max()) if f.size else 0.0
        if r == 2:
            return float(np.sqrt(np.dot(self.nu, f * f)))
        if r == 1:
            return float(np.dot(self.nu, f))
        return float(np.dot(self.nu, f**r) ** (1.0 / r))

    def check_function(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_nodes,):
            raise ValueError(
                f"node function has shape {u.shape}, expected ({self.n_nodes},)"
            )
        if not np.all(np.isfinite(u)):
            raise ValueError("node function has non-finite values")
        return u

    def check_field(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape != self.field_shape:
            raise ValueError(f"edge field has shape {X.shape}, expected {self.field_shape}")
        return X

    def zero_field(self):
        return np.zeros(self.field_shape)

    # -- components and the energy kernel ------------------------------------

    def components(self):
        """Connected component label per node (labels ``0..k-1``)."""
        _, labels = csgraph.connected_components(self._adjacency(), directed=False)
        return labels

    def component_mean(self, u):
        """Node function equal to the nu-mean of ``u`` on each component."""
        u = np.asarray(u, dtype=float)
        labels = self.components()
        mass = np.bincount(labels, weights=self.nu)
        avg = np.bincount(labels, weights=self.nu * u) / mass
        return avg[labels]

    def project_mean_zero(self, u):
        """Remove the componentwise mean (the kernel of every Cheeger energy)."""
        return np.asarray(u, dtype=float) - self.component_mean(u)

    # -- level sets -----------------------------------------------------------

    @staticmethod
    def superlevel_set(u, t):
        """Boolean mask of ``{x : u(x) > t}``."""
        return np.asarray(u, dtype=float) > t

    def indicator(self, S):
        """Indicator function of a node subset given as a mask or index list."""
        S = np.asarray(S)
        chi = np.zeros(self.n_nodes)
        if S.dtype == bool:
            chi[S] = 1.0
        elif S.size:
            chi[S.astype(int)] = 1.0
        return chi

    def total_variation(self, u):
        return float(np.dot(self.nu, self.norm_cotangent(self.differential(u), 1.0)))

    def variation_measure(self, u):
        """Node masses ``nu(x) |du|_*(x)`` of the variation measure ``|Du|``."""
        return self.nu * self.norm_cotangent(self.differential(u), 1.0)

    def perimeter(self, S):
        return self.total_variation(self.indicator(S))

    def integration_by_parts_residual(self, g, X):
        """``sum nu g div X + sum nu dg(X)``; zero up to rounding."""
        lhs = self.integrate(np.asarray(g) * self.divergence(X))
        rhs = self.integrate(self.duality(self.differential(g), X))
        return lhs + rhs


class WeightedGraphSpace(Space):
    """Finite weighted graph with node measure.

    Parameters
    ----------
    nu : array_like, shape (n,)
        Strictly positive node measure.
    edges : array_like, shape (m, 2)
        Node index pairs. Orientation is normalised to ``i < j`` and the list
        is sorted; self-loops and duplicates are rejected.
    weights : array_like, shape (m,)
        Nonnegative symmetric edge weights. Zero-weight pairs are dropped.
    node_ids : sequence, optional
        External node labels used for serialisation.
    """

    kind = "graph"

    def __init__(self, nu, edges, weights, node_ids=None):
        nu = np.asarray(nu, dtype=float).ravel()
        if nu.size == 0:
            raise ValueError("space needs at least one node")
        if not np.all(np.isfinite(nu)) or np.any(nu <= 0):
            raise ValueError("node measure must be finite and strictly positive")
        edges = np.asarray(edges, dtype=int).reshape(-1, 2)
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape[0] != edges.shape[0]:
            raise ValueError("one weight per edge required")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("edge weights must be finite and nonnegative")
        if edges.size and (edges.min() < 0 or edges.max() >= nu.size):
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed (w(x,x) = 0)")

        keep = weights > 0
        edges, weights = np.sort(edges[keep], axis=1), weights[keep]
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges, weights = edges[order], weights[order]
        if edges.shape[0] > 1 and np.any(np.all(np.diff(edges, axis=0) == 0, axis=1)):
            raise ValueError("duplicate edge")

        self.nu = nu
        self.edges = edges
        self.weights = weights
        self.node_ids = list(range(nu.size)) if node_ids is None else list(node_ids)
        if len(self.node_ids) != nu.size:
            raise ValueError("one id per node required")
        for arr in (self.nu, self.edges, self.weights):
            arr.setflags(write=False)
        self._tail = edges[:, 0]
        self._head = edges[:, 1]

    @classmethod
    def from_weight_matrix(cls, W, nu=None):
        W = np.asarray(W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("weight matrix must be square")
        if not np.allclose(W, W.T, rtol=0, atol=0):
            raise ValueError("weight matrix must be symmetric")
        if np.any(np.diag(W) != 0):
            raise ValueError("weight matrix must vanish on the diagonal")
        i, j = np.nonzero(np.triu(W, 1))
        nu = np.ones(W.shape[0]) if nu is None else nu
        return cls(nu, np.column_stack([i, j]), W[i, j])

    @property
    def n_edges(self):
        return self.edges.shape[0]

    @property
    def field_shape(self):
        return (self.n_edges,)

    def weight_matrix(self):
        W = np.zeros((self.n_nodes, self.n_nodes))
        W[self._tail, self._head] = self.weights
        W[self._head, self._tail] = self.weights
        return W

    def _adjacency(self):
        n = self.n_nodes
        return sparse.coo_matrix(
            (np.ones(self.n_edges), (self._tail, self._head)), shape=(n, n)
        ).tocsr()

    def _node_sum(self, edge_values):
        # sum of a symmetric edge quantity over the edges incident to each node
        n = self.n_nodes
        return np.bincount(self._tail, edge_values, n) + np.bincount(self._head, edge_values, n)

    def differential(self, u):
        u = np.asarray(u, dtype=float)
        return u[self._head] - u[self._tail]

    def norm_cotangent(self, omega, p):
        """``( (1/(2 nu(x))) sum_y w(x,y) |omega(x,y)|^p )^(1/p)``."""
        if p < 1 or np.isinf(p):
            raise ValueError("cotangent exponent must lie in [1, inf)")
        a = np.abs(np.asarray(omega, dtype=float))
        s = self._node_sum(self.weights * a**p) / (2.0 * self.nu)
        return s if p == 1 else s ** (1.0 / p)

    def norm_tangent(self, X, q):
        """Pointwise norm of a vector field; ``q = inf`` is the max modulus."""
        a = np.abs(np.asarray(X, dtype=float))
        if np.isinf(q):
            out = np.zeros(self.n_nodes)
            np.maximum.at(out, self._tail, a)
            np.maximum.at(out, self._head, a)
            return out
        if q <= 1:
            raise ValueError("tangent exponent must lie in (1, inf]")
        return (self._node_sum(self.weights * a**q) / (2.0 * self.nu)) ** (1.0 / q)

    def duality(self, omega, X):
        """``(1/(2 nu(x))) sum_y w(x,y) omega(x,y) X(x,y)``."""
        prod = self.weights * np.asarray(omega, dtype=float) * np.asarray(X, dtype=float)
        return self._node_sum(prod) / (2.0 * self.nu)

    def divergence(self, X):
        """``(1/nu(x)) sum_y w(x,y) X(x,y)``, the negative adjoint of ``differential``."""
        wx = self.weights * np.asarray(X, dtype=float)
        n = self.n_nodes
        return (np.bincount(self._tail, wx, n) - np.bincount(self._head, wx, n)) / self.nu

    def total_variation(self, u):
        # closed form (1/2) sum_{x,y} w |u(y) - u(x)|
        return float(np.dot(self.weights, np.abs(self.differential(u))))

    def perimeter(self, S):
        chi = self.indicator(S)
        return float(np.dot(self.weights, np.abs(self.differential(chi))))

    def incidence_matrix(self):
        """Sparse ``(m, n)`` matrix of ``differential``."""
        m, n = self.n_edges, self.n_nodes
        rows = np.repeat(np.arange(m), 2)
        cols = np.column_stack([self._head, self._tail]).ravel()
        vals = np.tile([1.0, -1.0], m)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(m, n))

    # -- solver geometry: dual variable is the field itself, metric is w -------

    def _dual_metric(self):
        return self.weights

    def _K(self, u):
        return self.differential(u)

    def _Kmatrix(self):
        return self.incidence_matrix()

    def _field_from_dual(self, Y):
        return Y

    def _dual_from_field(self, X):
        return np.asarray(X, dtype=float)

    def __eq__(self, other):
        return (
            isinstance(other, WeightedGraphSpace)
            and np.array_equal(self.nu, other.nu)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.weights, other.weights)
            and self.node_ids == other.node_ids
        )

    __hash__ = None

    def __repr__(self):
        return f"WeightedGraphSpace(n_nodes={self.n_nodes}, n_edges={self.n_edges})"


class FinslerGridSpace(Space):
    """Regular grid with a reversible Finsler structure.

    The Minkowski norm at node ``x`` is ``F(x, v) = || scales(x) * v ||_alpha``
    and its dual is ``F*(x, a) = || a / scales(x) ||_alpha'``. ``alpha = 2`` with
    unit scales is the weighted Euclidean case.

    Parameters
    ----------
    shape : tuple of int
        Nodes per axis (1 or 2 axes). Nodes are stored in C order.
    h : float
        Grid spacing.
    omega : float or array_like
        Positive measure density; node measure is ``omega * h**dim``.
    alpha : float
        Exponent of the tangent norm, in ``[1, inf]``.
    scales : array_like
        Positive per-axis scales, shape ``(dim,)`` or ``(n_nodes, dim)``.
    """

    kind = "grid"

    def __init__(self, shape, h=1.0, omega=1.0, alpha=2.0, scales=None):
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if len(shape) not in (1, 2) or min(shape) < 1:
            raise ValueError("grid must be 1-D or 2-D with positive extent")
        if not h > 0:
            raise ValueError("grid spacing must be positive")
        self.shape = shape
        self.dim = len(shape)
        self.h = float(h)
        n = int(np.prod(shape))
        omega = np.asarray(omega, dtype=float)
        omega = np.broadcast_to(omega.ravel() if omega.size == n else omega, (n,)).copy()
        if not np.all(np.isfinite(omega)) or np.any(omega <= 0):
            raise ValueError("measure density must be finite and strictly positive")
        self.omega = omega
        self.nu = omega * self.h**self.dim
        alpha = float(alpha)
        if alpha < 1:
            raise ValueError("norm exponent must be >= 1")
        self.alpha = alpha
        self.alpha_dual = conjugate_exponent(alpha)
        scales = np.ones(self.dim) if scales is None else np.asarray(scales, dtype=float)
        if scales.ndim == 1 and scales.shape != (self.dim,) or scales.ndim == 2 and scales.shape != (n, self.dim):
            raise ValueError("scales must have shape (dim,) or (n_nodes, dim)")
        if np.any(scales <= 0) or not np.all(np.isfinite(scales)):
            raise ValueError("norm scales must be positive")
        self.scales = scales
        self._D = self._forward_difference()
        for arr in (self.omega, self.nu, self.scales):
            arr.setflags(write=False)

    @property
    def field_shape(self):
        return (self.n_nodes, self.dim)

    def _forward_difference(self):
        # stacked (dim * n, n) matrix; row a*n + x holds (u[x + e_a] - u[x]) / h
        n = self.n_nodes
        idx = np.arange(n).reshape(self.shape)
        blocks = []
        for a in range(self.dim):
            src = np.take(idx, np.arange(self.shape[a] - 1), axis=a).ravel()
            dst = np.take(idx, np.arange(1, self.shape[a]), axis=a).ravel()
            rows = np.concatenate([src, src])
            cols = np.concatenate([dst, src])
            vals = np.concatenate([np.ones(src.size), -np.ones(src.size)]) / self.h
            blocks.append(sparse.csr_matrix((vals, (rows, cols)), shape=(n, n)))
        return sparse.vstack(blocks).tocsr()

    def _adjacency(self):
        n = self.n_nodes
        # node x is linked to x + e_a through the +1 entry of its difference row
        rows, cols = [], []
        for a in range(self.dim):
            blk = self._D[a * n:(a + 1) * n].tocoo()
            pos = blk.data > 0
            rows.append(blk.row[pos])
            cols.append(blk.col[pos])
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        return sparse.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()

    def _stack(self, X):
        return np.asarray(X, dtype=float).T.reshape(-1)

    def _unstack(self, y):
        return y.reshape(self.dim, self.n_nodes).T

    def differential(self, u):
        """Forward differences divided by ``h``; zero on the outflow boundary."""
        return self._unstack(self._D @ np.asarray(u, dtype=float))

    def divergence(self, X):
        """Exact negative nu-adjoint of :meth:`differential`."""
        weighted = np.asarray(X, dtype=float) * self.nu[:, None]
        return -(self._D.T @ self._stack(weighted)) / self.nu

    def _scale_rows(self):
        return np.broadcast_to(self.scales, self.field_shape)

    def norm_cotangent(self, omega, p=1.0):
        """``F*(x, omega(x))``; the exponent only enters through integration."""
        a = np.asarray(omega, dtype=float) / self._scale_rows()
        return np.linalg.norm(a, ord=self.alpha_dual, axis=1)

    def norm_tangent(self, X, q=np.inf):
        """``F(x, X(x))``."""
        a = np.asarray(X, dtype=float) * self._scale_rows()
        return np.linalg.norm(a, ord=self.alpha, axis=1)

    def duality(self, omega, X):
        return np.einsum("ij,ij->i", np.asarray(omega, dtype=float), np.asarray(X, dtype=float))

    def minkowski_norm(self, v):
        """``F(x, v(x))`` for a tangent vector per node."""
        return self.norm_tangent(v)

    def dual_minkowski_norm(self, a):
        return self.norm_cotangent(a)

    def as_image(self, u):
        return np.asarray(u, dtype=float).reshape(self.shape)

    # -- solver geometry: dual variable Y = scales * X, metric nu per node ----

    def _dual_metric(self):
        return self.nu

    def _K(self, u):
        return self.differential(u) / self._scale_rows()

    def _Kmatrix(self):
        inv = 1.0 / self._scale_rows()
        return sparse.diags(self._stack(inv)) @ self._D

    def _field_from_dual(self, Y):
        return Y / self._scale_rows()

    def _dual_from_field(self, X):
        return np.asarray(X, dtype=float) * self._scale_rows()

    def __eq__(self, other):
        return (
            isinstance(other, FinslerGridSpace)
            and self.shape == other.shape
            and self.h == other.h
            and np.array_equal(self.omega, other.omega)
            and self.alpha == other.alpha
            and np.array_equal(self.scales, other.scales)
        )

    __hash__ = None

    def __repr__(self):
        return f"FinslerGridSpace(shape={self.shape}, h={self.h}, alpha={self.alpha})"


def path_graph(n, weight=1.0, nu=1.0):
    edges = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    return WeightedGraphSpace(np.full(n, float(nu)), edges, np.full(n - 1, float(weight)))


def two_point_space(nu=1.0, weight=1.0):
    """The two-node space ``{a, b}`` used by the analytic checks."""
    return WeightedGraphSpace([nu, nu], [[0, 1]], [weight])

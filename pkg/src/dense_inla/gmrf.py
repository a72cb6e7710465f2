"""Intrinsic GMRF structure matrices and their constraint bookkeeping.

Structures are kept unscaled until :func:`scale_structure` is applied, so
they can be compared directly with textbook displays. Kronecker products
remember their factors: pseudo-inverses, null spaces and generalized
determinants of an ``nm x nm`` interaction are then assembled from the
``n x n`` and ``m x m`` factors.
"""
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from dense_inla.errors import InvalidGraph, InvalidSize
from dense_inla.linalg import (
    RankInfo,
    generalized_log_det,
    null_space_basis,
    pseudo_inverse,
    range_basis,
)


@dataclass(frozen=True)
class GraphSpec:
    """Undirected neighbourhood graph with 0-based node indices.

    The graph file format is 1-based; conversion happens in :mod:`dense_inla.io`.
    """

    n_nodes: int
    adjacency: tuple

    def __post_init__(self):
        if self.n_nodes < 1:
            raise InvalidGraph("graph needs at least one node")
        if len(self.adjacency) != self.n_nodes:
            raise InvalidGraph(
                f"adjacency has {len(self.adjacency)} entries for {self.n_nodes} nodes"
            )
        adj = tuple(tuple(sorted(int(j) for j in nb)) for nb in self.adjacency)
        for i, nb in enumerate(adj):
            if len(set(nb)) != len(nb):
                raise InvalidGraph(f"node {i + 1} lists a neighbour twice")
            for j in nb:
                if not 0 <= j < self.n_nodes:
                    raise InvalidGraph(f"node {i + 1} has out-of-range neighbour {j + 1}")
                if j == i:
                    raise InvalidGraph(f"node {i + 1} is its own neighbour")
        for i, nb in enumerate(adj):
            for j in nb:
                if i not in adj[j]:
                    raise InvalidGraph(
                        f"asymmetric adjacency: {j + 1} is a neighbour of {i + 1} but not vice versa"
                    )
        object.__setattr__(self, "adjacency", adj)

    @classmethod
    def from_edges(cls, n_nodes, edges):
        adj = [set() for _ in range(n_nodes)]
        for i, j in edges:
            if not (0 <= i < n_nodes and 0 <= j < n_nodes):
                raise InvalidGraph(f"edge ({i}, {j}) out of range for {n_nodes} nodes")
            adj[i].add(j)
            adj[j].add(i)
        return cls(n_nodes, tuple(tuple(sorted(a)) for a in adj))

    @property
    def edges(self):
        return [(i, j) for i, nb in enumerate(self.adjacency) for j in nb if i < j]

    def components(self):
        """Connected components as a list of sorted index arrays."""
        rows = [i for i, nb in enumerate(self.adjacency) for _ in nb]
        cols = [j for nb in self.adjacency for j in nb]
        mat = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_nodes,) * 2)
        n_comp, labels = connected_components(mat, directed=False)
        return [np.flatnonzero(labels == c) for c in range(n_comp)]

    @property
    def n_components(self):
        return len(self.components())


@dataclass(frozen=True, eq=False)
class StructureMatrix:
    """Structure ``R`` of a GMRF prior ``Q = tau * R`` with known nullity.

    ``components`` lists index sets of disconnected sub-structures (each
    with nullity one) for Besag models; ``factors`` holds the two inputs
    of a Kronecker product.
    """

    matrix: np.ndarray
    nullity: int
    scaled: bool = False
    kind: str = "generic"
    components: tuple = None
    factors: tuple = None
    tolerance: float = field(default=1e-9, repr=False)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def rank(self):
        return self.dim - self.nullity

    @property
    def rank_info(self):
        return RankInfo(self.nullity, self.tolerance)

    @cached_property
    def pinv(self):
        """Pseudo-inverse; for Kronecker products ``pinv(a) kron pinv(b)``."""
        if self.factors is not None:
            a, b = self.factors
            return np.kron(a.pinv, b.pinv)
        if self.nullity == 0 and self.kind == "iid":
            return np.linalg.inv(self.matrix)
        return pseudo_inverse(self.matrix, self.rank_info)

    @cached_property
    def range_basis(self):
        """Orthonormal columns spanning the range of the structure."""
        if self.nullity == 0:
            return np.eye(self.dim)
        if self.factors is not None:
            a, b = self.factors
            return np.kron(a.range_basis, b.range_basis)
        return range_basis(self.matrix, self.rank_info)[1]

    @cached_property
    def null_basis(self):
        """Orthonormal rows spanning the null space, shape (nullity, dim)."""
        if self.nullity == 0:
            return np.zeros((0, self.dim))
        if self.factors is not None:
            a, b = self.factors
            # null(a (x) b) = null(a) (x) R^m  +  range(a) (x) null(b)
            top = np.kron(a.null_basis, np.eye(b.dim))
            bottom = np.kron(a.range_basis.T, b.null_basis)
            return np.vstack([top, bottom])
        if self.components is not None:
            C = np.zeros((len(self.components), self.dim))
            for r, idx in enumerate(self.components):
                C[r, idx] = 1.0 / np.sqrt(len(idx))
            return C
        return null_space_basis(self.matrix, self.rank_info)

    @cached_property
    def log_pdet(self):
        """Generalized log-determinant (sum of logs of nonzero eigenvalues)."""
        if self.factors is not None:
            a, b = self.factors
            return b.rank * a.log_pdet + a.rank * b.log_pdet
        return generalized_log_det(self.matrix, self.rank_info)


def build_rw(n, order=1) -> StructureMatrix:
    """Random-walk structure ``D^T D`` with ``D`` the order-th differences."""
    if order not in (1, 2):
        raise InvalidSize(f"random-walk order must be 1 or 2, got {order}")
    if n <= order:
        raise InvalidSize(f"RW{order} needs more than {order} nodes, got {n}")
    D = np.diff(np.eye(n), n=order, axis=0)
    return StructureMatrix(D.T @ D, nullity=order, kind=f"rw{order}")


def build_besag(g: GraphSpec) -> StructureMatrix:
    """Besag (ICAR) structure: neighbour counts on the diagonal, -1 per edge."""
    if not isinstance(g, GraphSpec):
        raise InvalidGraph("expected a GraphSpec")
    R = np.zeros((g.n_nodes, g.n_nodes))
    for i, nb in enumerate(g.adjacency):
        R[i, i] = len(nb)
        R[i, list(nb)] = -1.0
    comps = g.components()
    lonely = [int(c[0]) + 1 for c in comps if len(c) == 1]
    if lonely:
        raise InvalidGraph(f"nodes without neighbours are not supported: {lonely}")
    return StructureMatrix(R, nullity=len(comps), kind="besag", components=tuple(comps))


def build_iid(n) -> StructureMatrix:
    if n < 1:
        raise InvalidSize("iid block needs at least one element")
    return StructureMatrix(np.eye(n), nullity=0, scaled=True, kind="iid")


def kronecker_structure(a: StructureMatrix, b: StructureMatrix) -> StructureMatrix:
    """Kronecker product ``a (x) b``; the nullity follows from the ranks."""
    nullity = a.dim * b.dim - a.rank * b.rank
    return StructureMatrix(
        np.kron(a.matrix, b.matrix),
        nullity=nullity,
        scaled=a.scaled and b.scaled,
        kind=f"kron({a.kind},{b.kind})",
        factors=(a, b),
        tolerance=min(a.tolerance, b.tolerance),
    )


def _scale_factor(R, nullity, tolerance):
    if nullity == 0:
        diag = np.diag(np.linalg.inv(R))
    else:
        diag = np.diag(pseudo_inverse(R, RankInfo(nullity, tolerance)))
    return float(np.exp(np.mean(np.log(diag))))


def scale_structure(r: StructureMatrix) -> StructureMatrix:
    """Scale so that the generalized variances have unit geometric mean.

    Disconnected Besag structures are scaled one component at a time;
    Kronecker products are scaled through their factors.
    """
    if r.scaled:
        return r
    if r.factors is not None:
        a, b = r.factors
        return kronecker_structure(scale_structure(a), scale_structure(b))
    if r.dim == 0:
        raise InvalidGraph("cannot scale an empty structure")
    R = r.matrix.copy()
    if r.components is not None:
        for idx in r.components:
            if len(idx) < 2:
                raise InvalidGraph("cannot scale a single-node component")
            block = np.ix_(idx, idx)
            R[block] = R[block] * _scale_factor(R[block], 1, r.tolerance)
    else:
        R = R * _scale_factor(R, r.nullity, r.tolerance)
    return replace(r, matrix=R, scaled=True)


@dataclass(frozen=True)
class InteractionType:
    """Knorr-Held interaction type (1..4) and temporal random-walk order."""

    kind: int
    order: int = 1

    def __post_init__(self):
        if self.kind not in (1, 2, 3, 4):
            raise ValueError(f"interaction type must be 1..4, got {self.kind}")
        if self.order not in (1, 2):
            raise ValueError(f"temporal order must be 1 or 2, got {self.order}")


def interaction_structure(t: InteractionType, r_time: StructureMatrix, r_space: StructureMatrix):
    """Interaction structure on ``eps`` ordered time-major (space varies fastest)."""
    n, m = r_time.dim, r_space.dim
    if t.kind == 1:
        return kronecker_structure(build_iid(n), build_iid(m))
    if t.kind == 2:
        return kronecker_structure(r_time, build_iid(m))
    if t.kind == 3:
        return kronecker_structure(build_iid(n), r_space)
    return kronecker_structure(r_time, r_space)


def constraint_count(t: InteractionType, n, m, n_components=1) -> int:
    """Constraint count per interaction type as tabulated in the literature.

    Each spatial "1" becomes ``n_components`` for a disconnected graph. For
    type IV this is ``n + l*m - 1``, which differs from the total nullity
    of the latent prior (``n + l*m + 1`` for a connected graph); the
    number of rows of :func:`constraint_basis` is the operative count.
    """
    l, c = t.order, n_components
    if n <= l or m < 1:
        raise InvalidSize(f"need n > {l} and m >= 1, got n={n}, m={m}")
    if t.kind == 1:
        return l + c
    if t.kind == 2:
        return l * m + l + c
    if t.kind == 3:
        return n * c + l + c
    return n * c + l * m - c


def constraint_basis(model) -> np.ndarray:
    """Stack per-block null-space bases at their offsets in the latent vector.

    ``model`` needs ``blocks`` (each with ``structure``) and ``layout``
    with ``offsets`` aligned to the blocks and a total size ``s``.
    """
    rows = []
    s = model.layout.s
    for block, off in zip(model.blocks, model.layout.offsets):
        N = block.structure.null_basis
        if N.shape[0] == 0:
            continue
        C = np.zeros((N.shape[0], s))
        C[:, off : off + N.shape[1]] = N
        rows.append(C)
    if not rows:
        return np.zeros((0, s))
    return np.vstack(rows)

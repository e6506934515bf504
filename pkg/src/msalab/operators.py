"""Finite-volume Hamiltonians on n-particle rectangles.

The continuum operator -Laplacian + V + U restricted to a rectangle
with Dirichlet boundary condition is discretized by second-order
central differences on a uniform mesh of width h.  Grid nodes are the
Dirichlet interior points, ordered lexicographically axis by axis
(particle-major), which fixes the matrix layout and makes digests
reproducible.

A partially interactive box carries no interaction across its split, so
its matrix is exactly the Kronecker sum of the two factor-box matrices;
:func:`kronecker_factors` recovers the factors and verifies the
identity entrywise.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .disorder import (
    DisorderField,
    ModelParams,
    face_sites,
    particle_sites,
    single_particle_potential,
)
from .geometry import InteractionClass, NRectangle, as_config, interaction_class

__all__ = [
    "FiniteVolumeOperator",
    "assemble",
    "kronecker_factors",
    "dump_matrix",
]

_EDGE_TOL = 1e-9


@dataclass
class FiniteVolumeOperator:
    """Sparse symmetric matrix of a discretized finite-volume Hamiltonian.

    ``axis_nodes`` lists the interior node coordinates along each of the
    nd flat axes (particle-major); the matrix rows follow the
    lexicographic order of the node multi-indices.  Treat instances as
    immutable; caches for spectra and factorizations are attached lazily
    by the spectral layer.
    """

    rect: NRectangle
    h: float
    axis_nodes: tuple
    matrix: sparse.csr_matrix
    params: ModelParams
    field: DisorderField
    provenance: str

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(nodes) for nodes in self.axis_nodes)

    @property
    def dim(self) -> int:
        return int(np.prod(self.shape))

    @property
    def nd(self) -> int:
        return self.rect.n * self.rect.d

    def axis_of(self, particle: int, dim: int) -> int:
        return particle * self.rect.d + dim

    def nodes_in_unit_box(self, a) -> np.ndarray:
        """Flat indices of grid nodes inside the open unit box around ``a``."""
        a = as_config(a, self.rect.d)
        if a.shape[0] != self.rect.n:
            raise ValueError("configuration has wrong particle count")
        flat = a.ravel()
        per_axis = []
        for ax, nodes in enumerate(self.axis_nodes):
            sel = np.nonzero(np.abs(nodes - flat[ax]) < 0.5)[0]
            if sel.size == 0:
                raise ValueError(f"unit box around axis value {flat[ax]} contains no grid node")
            per_axis.append(sel)
        mesh = np.meshgrid(*per_axis, indexing="ij")
        return np.ravel_multi_index([m.ravel() for m in mesh], self.shape)

    def node_coordinates(self) -> np.ndarray:
        """All node positions, shape (dim, nd), in matrix row order."""
        mesh = np.meshgrid(*self.axis_nodes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def norm_bound(self) -> float:
        """Cheap upper bound on the operator norm (Gershgorin rows)."""
        cached = getattr(self, "_norm_bound", None)
        if cached is None:
            cached = float(np.abs(self.matrix).sum(axis=1).max())
            self._norm_bound = cached
        return cached


def _axis_node_array(center: float, side: float, h: float) -> np.ndarray:
    m_total = math.floor(side / h + _EDGE_TOL)
    interior = m_total - 1
    if interior < 2:
        raise ValueError(f"mesh h={h} too coarse for side {side}: needs >= 2 interior nodes")
    lo = center - side / 2.0
    return lo + h * np.arange(1, interior + 1)


def _laplacian(shape: tuple[int, ...], h: float) -> sparse.csr_matrix:
    total = sparse.csr_matrix((int(np.prod(shape)),) * 2)
    inv_h2 = 1.0 / (h * h)
    for ax, m in enumerate(shape):
        t = sparse.diags(
            [2.0 * inv_h2 * np.ones(m), -inv_h2 * np.ones(m - 1), -inv_h2 * np.ones(m - 1)],
            [0, 1, -1],
            format="csr",
        )
        before = int(np.prod(shape[:ax])) if ax else 1
        after = int(np.prod(shape[ax + 1 :])) if ax + 1 < len(shape) else 1
        block = sparse.kron(sparse.identity(before, format="csr"), t, format="csr")
        block = sparse.kron(block, sparse.identity(after, format="csr"), format="csr")
        total = total + block
    return total


def _particle_grid(op_axes: list[np.ndarray]) -> np.ndarray:
    """Positions (m_1, ..., m_d, d) of one particle's sub-grid."""
    mesh = np.meshgrid(*op_axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def _particle_block(
    axes: list[np.ndarray],
    sites: np.ndarray,
    values: np.ndarray,
    params: ModelParams,
) -> sparse.csr_matrix:
    """One particle's operator block: d-dimensional Laplacian plus its face potential."""
    shape = tuple(len(a) for a in axes)
    block = _laplacian(shape, params.h)
    if sites.shape[0]:
        pts = _particle_grid(axes)
        v = single_particle_potential(pts, sites, values, params.profile)
        block = block + sparse.diags(v.ravel(), format="csr")
    return block.tocsr()


def _pair_interaction(
    axes_i: list[np.ndarray], axes_j: list[np.ndarray], spec
) -> np.ndarray:
    """Pair term on the product grid of particles i and j."""
    d = len(axes_i)
    shape_i = tuple(len(a) for a in axes_i)
    shape_j = tuple(len(a) for a in axes_j)
    diffs = []
    for k in range(d):
        a = axes_i[k].reshape((1,) * k + (-1,) + (1,) * (d - 1 - k) + (1,) * d)
        b = axes_j[k].reshape((1,) * d + (1,) * k + (-1,) + (1,) * (d - 1 - k))
        diffs.append(np.broadcast_to(a - b, shape_i + shape_j))
    if d == 1:
        disp = diffs[0][..., None]
    else:
        disp = np.stack(diffs, axis=-1)
    return spec.pair_potential(disp)


def assemble(
    rect: NRectangle,
    fld: DisorderField,
    params: ModelParams,
    max_dim: int | None = None,
) -> FiniteVolumeOperator:
    """Build the finite-volume Hamiltonian matrix for one realization.

    The potential is sampled at the grid nodes: particle i sees the
    amplitudes of its own face box, and every particle pair adds the
    finite-range interaction.  Raises when the mesh leaves fewer than
    two interior nodes on some axis, when the field misses a required
    site, or when the matrix dimension exceeds ``max_dim``.
    """
    if rect.n != params.n or rect.d != params.d:
        raise ValueError("rectangle and model disagree on (n, d)")
    h = params.h
    axis_nodes = []
    for i in range(rect.n):
        c, s = rect.particle_box(i)
        for ax in range(rect.d):
            axis_nodes.append(_axis_node_array(float(c[ax]), s, h))
    shape = tuple(len(a) for a in axis_nodes)
    dim = int(np.prod(shape))
    if max_dim is not None and dim > max_dim:
        raise ValueError(f"matrix dimension {dim} exceeds the configured budget {max_dim}")

    needed = face_sites(rect)
    if needed.shape[0] and not fld.covers(needed):
        raise ValueError("disorder field does not cover the rectangle's face sites")

    # One block per particle, embedded by Kronecker products: for an
    # interaction-free split the matrix is then the exact Kronecker sum
    # of its factor operators, because the same block floats are reused.
    matrix = sparse.csr_matrix((dim, dim))
    for i in range(rect.n):
        axes_i = axis_nodes[i * rect.d : (i + 1) * rect.d]
        sites = particle_sites(rect, i)
        vals = fld.values_at(sites) if sites.shape[0] else np.empty(0)
        block = _particle_block(axes_i, sites, vals, params)
        before = int(np.prod(shape[: i * rect.d])) if i else 1
        after = int(np.prod(shape[(i + 1) * rect.d :])) if (i + 1) * rect.d < len(shape) else 1
        embedded = sparse.kron(sparse.identity(before, format="csr"), block, format="csr")
        embedded = sparse.kron(embedded, sparse.identity(after, format="csr"), format="csr")
        matrix = matrix + embedded

    if not params.interaction.is_zero and rect.n > 1:
        diag = np.zeros(shape)
        for i in range(rect.n):
            for j in range(i + 1, rect.n):
                axes_i = axis_nodes[i * rect.d : (i + 1) * rect.d]
                axes_j = axis_nodes[j * rect.d : (j + 1) * rect.d]
                uij = _pair_interaction(axes_i, axes_j, params.interaction)
                reshape = [1] * len(shape)
                for k in range(rect.d):
                    reshape[i * rect.d + k] = shape[i * rect.d + k]
                    reshape[j * rect.d + k] = shape[j * rect.d + k]
                diag = diag + uij.reshape(reshape)
        matrix = matrix + sparse.diags(diag.ravel(), format="csr")

    matrix = matrix.tocsr()
    matrix.sort_indices()

    payload = repr((rect.key(), params.digest(), fld.digest(), h)).encode()
    provenance = hashlib.sha256(payload).hexdigest()[:16]
    return FiniteVolumeOperator(rect, h, tuple(axis_nodes), matrix, params, fld, provenance)


def _min_node_gap(axes_i: list[np.ndarray], axes_j: list[np.ndarray]) -> float:
    """Smallest sup-norm distance between the two particles' node grids."""
    per_axis = []
    for a, b in zip(axes_i, axes_j):
        d = np.abs(a[:, None] - b[None, :])
        per_axis.append(float(d.min()))
    return max(per_axis)


def kronecker_factors(
    op: FiniteVolumeOperator,
    iclass: InteractionClass | None = None,
    check_tol: float = 1e-12,
) -> tuple[FiniteVolumeOperator, FiniteVolumeOperator]:
    """Split a partially interactive box into its factor operators.

    For a PI box the matrix equals ``H_J (x) I + I (x) H_Jc`` in the
    particle order (J, Jc); this identity is validated entrywise before
    returning (exactly when J is a particle prefix, else up to rounding
    of the regrouped potential sums).  Raises for one-particle boxes,
    fully interactive boxes, and splits whose cross interaction does not
    actually vanish on the grid.
    """
    rect = op.rect
    if rect.n == 1:
        raise ValueError("one-particle operators have no interactive split")
    if iclass is None:
        iclass = interaction_class(rect, op.params.interaction.r0)
    if not iclass.partially_interactive:
        raise ValueError("operator's box is fully interactive; no factorization")
    J = list(iclass.split)
    Jc = list(iclass.complement(rect.n))

    if not op.params.interaction.is_zero:
        r0 = op.params.interaction.r0
        for i in J:
            for j in Jc:
                axes_i = list(op.axis_nodes[i * rect.d : (i + 1) * rect.d])
                axes_j = list(op.axis_nodes[j * rect.d : (j + 1) * rect.d])
                if _min_node_gap(axes_i, axes_j) <= r0:
                    raise ValueError(
                        f"interaction of range {r0} does not vanish across the split "
                        f"({i} | {j}); inconsistent classification"
                    )

    def factor(particles: list[int]) -> FiniteVolumeOperator:
        sub_params = dataclasses.replace(op.params, n=len(particles))
        return assemble(rect.sub_rectangle(particles), op.field, sub_params)

    op_j = factor(J)
    op_jc = factor(Jc)

    kron_sum = sparse.kron(op_j.matrix, sparse.identity(op_jc.dim, format="csr")) + sparse.kron(
        sparse.identity(op_j.dim, format="csr"), op_jc.matrix
    )
    order = J + Jc
    if order == list(range(rect.n)):
        reference = op.matrix
    else:
        axis_perm = []
        for p in order:
            axis_perm.extend(range(p * rect.d, (p + 1) * rect.d))
        flat_perm = np.arange(op.dim).reshape(op.shape).transpose(axis_perm).ravel()
        reference = op.matrix[flat_perm][:, flat_perm]
    diff = (kron_sum - reference).tocoo()
    worst = float(np.abs(diff.data).max()) if diff.nnz else 0.0
    if worst > check_tol * max(1.0, op.norm_bound()):
        raise ValueError(f"Kronecker-sum reconstruction failed (max deviation {worst:.3e})")
    return op_j, op_jc


def dump_matrix(op: FiniteVolumeOperator, path) -> None:
    """Write the matrix as sorted "i j value" triplets, one per line."""
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# dim {op.dim} nnz {coo.nnz} provenance {op.provenance}\n")
        for k in order:
            fh.write(f"{coo.row[k]} {coo.col[k]} {float(coo.data[k])!r}\n")

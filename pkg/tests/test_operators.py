"""Finite-volume operator assembly and Kronecker factorization."""

import numpy as np
import pytest
from scipy import sparse

from msalab import disorder as dis
from msalab import operators as ops
from msalab.geometry import InteractionClass, NRectangle


def uniform_params(**kw):
    defaults = dict(d=1, n=1, h=0.25)
    defaults.update(kw)
    return dis.ModelParams(**defaults)


def field_for(rect, seed=0, zero=False, m_plus=1.0):
    law = dis.AmplitudeDistribution(m_plus=m_plus)
    fld = dis.sample_disorder(dis.region_for(rect), law, seed)
    if zero:
        fld = dis.DisorderField(fld.sites, np.zeros_like(fld.values), seed, law)
    return fld


def test_free_two_point_eigenvalues():
    # closed-form oracle: 2 - 2 cos(k pi / (m+1)) over h^2 for the free chain
    rect = NRectangle.box([[0.5]], 3.0)
    op = ops.assemble(rect, field_for(rect, zero=True), uniform_params(h=1.0))
    assert op.dim == 2
    dense = op.matrix.toarray()
    assert np.allclose(dense, [[2.0, -1.0], [-1.0, 2.0]])
    oracle = sorted(2.0 - 2.0 * np.cos(k * np.pi / 3.0) for k in (1, 2))
    assert np.allclose(np.linalg.eigvalsh(dense), oracle)


def test_matrix_symmetric_and_nonnegative_diag():
    rect = NRectangle.box([[0.0], [7.0]], 5.0)
    params = uniform_params(n=2, interaction=dis.InteractionSpec(bound=0.5, r0=1.0))
    op = ops.assemble(rect, field_for(rect, seed=3), params)
    m = op.matrix
    assert (m - m.T).nnz == 0
    assert np.all(m.diagonal() >= 0)
    evals = np.linalg.eigvalsh(m.toarray())
    assert evals[0] >= -1e-10  # inf spectrum >= 0 for V, U >= 0


def test_dirichlet_interior_dimension():
    rect = NRectangle.box([[0.0]], 6.0)
    op = ops.assemble(rect, field_for(rect), uniform_params(h=0.25))
    assert op.dim == 6 * 4 - 1
    with pytest.raises(ValueError):
        ops.assemble(rect, field_for(rect), uniform_params(h=3.0))


def test_max_dim_guard():
    rect = NRectangle.box([[0.0]], 6.0)
    with pytest.raises(ValueError):
        ops.assemble(rect, field_for(rect), uniform_params(), max_dim=10)


def test_pi_box_is_kronecker_sum():
    rect = NRectangle.box([[0.0], [30.0]], 5.0)
    params = uniform_params(n=2, interaction=dis.InteractionSpec(bound=0.7, r0=2.0))
    fld = field_for(rect, seed=5)
    op = ops.assemble(rect, fld, params)
    f1 = ops.assemble(rect.sub_rectangle([0]), fld, uniform_params(n=1))
    f2 = ops.assemble(rect.sub_rectangle([1]), fld, uniform_params(n=1))
    explicit = sparse.kron(f1.matrix, sparse.identity(f2.dim)) + sparse.kron(
        sparse.identity(f1.dim), f2.matrix
    )
    assert (explicit - op.matrix).nnz == 0  # entrywise exact


def test_kronecker_factors_roundtrip():
    rect = NRectangle.box([[0.0], [30.0]], 5.0)
    params = uniform_params(n=2)
    op = ops.assemble(rect, field_for(rect, seed=9, zero=True), params)
    fj, fjc = ops.kronecker_factors(op)
    free = ops.assemble(NRectangle.box([[0.0]], 5.0), field_for(rect, zero=True), uniform_params())
    assert np.allclose(fj.matrix.toarray(), free.matrix.toarray())
    assert fj.dim == fjc.dim == free.dim


def test_kronecker_factors_errors():
    rect1 = NRectangle.box([[0.0]], 5.0)
    op1 = ops.assemble(rect1, field_for(rect1), uniform_params())
    with pytest.raises(ValueError):
        ops.kronecker_factors(op1)

    close = NRectangle.box([[0.0], [3.0]], 4.0)
    params = uniform_params(n=2, interaction=dis.InteractionSpec(bound=1.0, r0=1.0))
    op_fi = ops.assemble(close, field_for(close, seed=2), params)
    with pytest.raises(ValueError):
        ops.kronecker_factors(op_fi)  # fully interactive
    with pytest.raises(ValueError):
        # force a bogus split: the cross interaction does not vanish
        ops.kronecker_factors(op_fi, InteractionClass(True, (0,), 1.0))


def test_spectrum_sumset_identity():
    # zero interaction: n-particle spectrum = sumset of the face spectra
    rect = NRectangle.box([[0.0], [11.0]], 4.0)
    params = uniform_params(n=2)
    fld = field_for(rect, seed=11)
    op = ops.assemble(rect, fld, params)
    full = np.linalg.eigvalsh(op.matrix.toarray())
    f1, f2 = ops.kronecker_factors(op)
    e1 = np.linalg.eigvalsh(f1.matrix.toarray())
    e2 = np.linalg.eigvalsh(f2.matrix.toarray())
    sumset = np.sort((e1[:, None] + e2[None, :]).ravel())
    assert np.max(np.abs(full - sumset)) < 1e-8


def test_translation_covariance():
    rect = NRectangle.box([[0.5]], 6.0)
    fld = field_for(rect, seed=21)
    op = ops.assemble(rect, fld, uniform_params())

    shift = 3
    moved = rect.translate([float(shift)])
    shifted_field = dis.DisorderField(
        fld.sites + shift, fld.values.copy(), fld.master_seed, fld.distribution
    )
    op2 = ops.assemble(moved, shifted_field, uniform_params())
    assert np.array_equal(op.matrix.data, op2.matrix.data)
    assert np.array_equal(op.matrix.indices, op2.matrix.indices)
    assert np.array_equal(op.matrix.indptr, op2.matrix.indptr)


def test_nodes_in_unit_box():
    rect = NRectangle.box([[0.0]], 6.0)
    op = ops.assemble(rect, field_for(rect), uniform_params())
    idx = op.nodes_in_unit_box([[0.0]])
    coords = op.node_coordinates()[idx]
    assert np.all(np.abs(coords) < 0.5)
    outside = np.setdiff1d(np.arange(op.dim), idx)
    assert np.all(np.abs(op.node_coordinates()[outside]) >= 0.5)


def test_two_dimensional_diagonal_matches_direct_evaluation():
    # d = 2 exercises the broadcast assembly; every diagonal entry must
    # equal the Laplacian diagonal plus the potentials at that node
    model = dis.ModelParams(d=2, n=2, h=0.5, interaction=dis.InteractionSpec(bound=0.7, r0=2.0))
    rect = NRectangle([[0.0, 0.0], [1.0, 1.0]], [4.0, 4.0])
    fld = dis.sample_disorder(dis.region_for(rect), dis.AmplitudeDistribution(), 5)
    op = ops.assemble(rect, fld, model)
    nodes = op.node_coordinates()
    diag = op.matrix.diagonal()
    lap_diag = 2 * 4 / 0.5**2
    for idx in range(0, op.dim, 97):
        x = nodes[idx].reshape(2, 2)
        v = dis.finite_volume_potential(rect, fld, model.profile, x)
        u = dis.interaction_potential(model.interaction, x)
        # association order differs between assembly and direct sums
        assert diag[idx] == pytest.approx(lap_diag + v + u, rel=1e-14)


def test_dump_matrix_roundtrip(tmp_path):
    rect = NRectangle.box([[0.0]], 4.0)
    op = ops.assemble(rect, field_for(rect, seed=1), uniform_params())
    path = tmp_path / "m.txt"
    ops.dump_matrix(op, path)
    rows, cols, vals = [], [], []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            continue
        i, j, v = line.split()
        rows.append(int(i)), cols.append(int(j)), vals.append(float(v))
    rebuilt = sparse.coo_matrix((vals, (rows, cols)), shape=(op.dim, op.dim)).tocsr()
    assert (rebuilt != op.matrix).nnz == 0


def test_independence_after_complement_resample():
    r1 = NRectangle.box([[0.0], [1.0]], 4.0)
    r2 = NRectangle.box([[30.0], [31.0]], 4.0)
    region = dis.region_for(r1, r2)
    fld = dis.sample_disorder(region, dis.AmplitudeDistribution(), 77)
    params = uniform_params(n=2)
    op_before = ops.assemble(r1, fld, params)
    fld2 = fld.resample(dis.face_sites(r2), 4242)
    op_after = ops.assemble(r1, fld2, params)
    assert np.array_equal(op_before.matrix.data, op_after.matrix.data)

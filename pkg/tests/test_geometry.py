"""Geometry: Hausdorff distance, separation, interaction, covers.

Derived expectations are recomputed here by independent brute-force
oracles (max-min loops, interval endpoint logic, Cartesian-power
enumeration, containment scans) rather than trusting the library path.
"""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msalab import geometry as geo


# ----------------------------------------------------------------- oracles


def hausdorff_oracle(a, b):
    """Literal max-min evaluation over the two finite point sets."""
    a = geo.as_config(a)
    b = geo.as_config(b)

    def directed(s1, s2):
        return max(min(np.max(np.abs(x - y)) for y in s2) for x in s1)

    return max(directed(a, b), directed(b, a))


def axis_min_abs(lo, hi):
    """min |t| over the closed interval [lo, hi]."""
    if lo <= 0.0 <= hi:
        return 0.0
    return min(abs(lo), abs(hi))


def pair_gap_oracle(rect, i, j):
    """inf |x_i - x_j| over the closed rectangle, one axis at a time."""
    gaps = []
    for ax in range(rect.d):
        delta = rect.center[i][ax] - rect.center[j][ax]
        w = (rect.sides[i] + rect.sides[j]) / 2.0
        gaps.append(axis_min_abs(delta - w, delta + w))
    return max(gaps)


def l_distant_oracle(a, b, L):
    """Brute force over the n-fold Cartesian powers of the particle sets."""
    a = geo.as_config(a)
    b = geo.as_config(b)
    n = a.shape[0]

    def dist_to_power(point, base):
        best = math.inf
        for combo in itertools.product(range(base.shape[0]), repeat=n):
            cand = base[list(combo)]
            best = min(best, float(np.max(np.abs(point - cand))))
        return best

    return max(dist_to_power(b, a), dist_to_power(a, b)) >= 3.0 * n * L


def configs(max_n=3, max_d=2):
    return st.integers(1, max_n).flatmap(
        lambda n: st.integers(1, max_d).flatmap(
            lambda d: st.lists(
                st.lists(
                    st.floats(-20, 20, allow_nan=False, width=32),
                    min_size=d,
                    max_size=d,
                ),
                min_size=n,
                max_size=n,
            )
        )
    )


# ------------------------------------------------------- hausdorff / diam


def test_hausdorff_spec_values():
    assert geo.hausdorff_distance([0.0], [1.0]) == 1.0
    assert geo.hausdorff_distance([0.0, 3.0], [3.0, 0.0]) == 0.0
    assert hausdorff_oracle([0.0, 1.0], [5.0, 9.0]) == 8.0
    assert geo.hausdorff_distance([0.0, 1.0], [5.0, 9.0]) == 8.0


def test_hausdorff_dimension_mismatch():
    with pytest.raises(ValueError):
        geo.hausdorff_distance([[0.0, 1.0]], [[0.0]])


def test_diam_spec_values():
    assert geo.diam([0.0, 0.0]) == 0.0
    assert geo.diam([0.0, 1.0, 5.0]) == 5.0
    assert geo.diam([[0.0, 0.0], [3.0, 4.0]]) == 4.0


@settings(max_examples=150, deadline=None)
@given(configs(), configs())
def test_hausdorff_matches_oracle_and_is_symmetric(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[1] != b.shape[1]:
        return
    dh = geo.hausdorff_distance(a, b)
    assert dh == pytest.approx(hausdorff_oracle(a, b), abs=1e-12)
    assert dh == geo.hausdorff_distance(b, a)
    assert dh >= 0.0


@settings(max_examples=150, deadline=None)
@given(configs())
def test_hausdorff_zero_iff_same_set(a):
    a = np.asarray(a)
    perm = np.random.default_rng(0).permutation(a.shape[0])
    assert geo.hausdorff_distance(a, a[perm]) == 0.0


@settings(max_examples=100, deadline=None)
@given(configs(max_n=2, max_d=2))
def test_double_inequality_against_sup_norm(a):
    # d_H(a, b) <= |a - b| <= d_H(a, b) + diam(a) for same-shape b.
    a = np.asarray(a, dtype=float)
    rng = np.random.default_rng(7)
    for _ in range(5):
        b = a + rng.normal(scale=3.0, size=a.shape)
        dh = geo.hausdorff_distance(a, b)
        sup = geo.sup_distance(a, b)
        assert dh <= sup + 1e-12
        assert sup <= dh + geo.diam(a) + 1e-12


@settings(max_examples=60, deadline=None)
@given(configs(max_n=3, max_d=1), configs(max_n=3, max_d=1), configs(max_n=3, max_d=1))
def test_hausdorff_triangle(a, b, c):
    dab = geo.hausdorff_distance(a, b)
    dbc = geo.hausdorff_distance(b, c)
    dac = geo.hausdorff_distance(a, c)
    assert dac <= dab + dbc + 1e-12


def test_hausdorff_permutation_invariance():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = rng.normal(size=(3, 2))
        b = rng.normal(size=(3, 2))
        pa, pb = rng.permutation(3), rng.permutation(3)
        assert geo.hausdorff_distance(a, b) == geo.hausdorff_distance(a[pa], b[pb])


# ----------------------------------------------------------- separation


def test_separation_spec_values():
    r1 = geo.NRectangle.box([[0.0], [0.0]], 4.0)
    far = geo.NRectangle.box([[10.0], [10.0]], 4.0)
    assert geo.separation_class(r1, far).kind is geo.Separation.FULLY_SEPARATED

    mixed = geo.NRectangle.box([[0.0], [10.0]], 4.0)
    sc = geo.separation_class(r1, mixed)
    assert sc.kind is geo.Separation.PARTIALLY_SEPARATED
    assert (sc.witness_rect, sc.witness_particle) == (2, 1)

    assert geo.separation_class(r1, r1).kind is geo.Separation.ENTANGLED


def test_full_separation_implies_partial_criteria():
    rng = np.random.default_rng(11)
    seen_full = 0
    for _ in range(300):
        n, d = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        c1 = rng.uniform(-15, 15, size=(n, d))
        c2 = rng.uniform(-15, 15, size=(n, d))
        s1 = rng.uniform(0.5, 4.0, size=n)
        s2 = rng.uniform(0.5, 4.0, size=n)
        sc = geo.separation_class(geo.NRectangle(c1, s1), geo.NRectangle(c2, s2))
        if sc.fully_separated:
            seen_full += 1
            assert sc.partially_separated
    assert seen_full > 10


# ----------------------------------------------------------- interaction


def test_interaction_spec_values():
    pi_box = geo.NRectangle.box([[0.0], [10.0]], 4.0)
    ic = geo.interaction_class(pi_box, r0=1.0)
    assert ic.partially_interactive and ic.split == (0,)

    fi_box = geo.NRectangle.box([[0.0], [3.0]], 4.0)
    assert geo.interaction_class(fi_box, r0=1.0).fully_interactive

    coincident = geo.NRectangle.box([[0.0], [0.0]], 4.0)
    assert geo.interaction_class(coincident, r0=1.0).fully_interactive


def test_interaction_gap_matches_oracle():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n, d = int(rng.integers(2, 4)), int(rng.integers(1, 3))
        box = geo.NRectangle.box(rng.uniform(-10, 10, size=(n, d)), float(rng.uniform(1, 5)))
        for i in range(n):
            for j in range(i + 1, n):
                assert geo._particle_gap(box, i, j) == pytest.approx(
                    pair_gap_oracle(box, i, j), abs=1e-12
                )


def test_interaction_translation_invariance():
    rng = np.random.default_rng(9)
    for _ in range(50):
        box = geo.NRectangle.box(rng.uniform(-5, 5, size=(3, 1)), 2.0)
        shift = rng.uniform(-20, 20, size=(1,))
        assert geo.interaction_class(box, 1.0) == geo.interaction_class(
            box.translate(shift), 1.0
        )


def test_interaction_requires_box():
    rect = geo.NRectangle([[0.0], [9.0]], [2.0, 3.0])
    with pytest.raises(ValueError):
        geo.interaction_class(rect, 1.0)


# ------------------------------------------------------------ L-distance


def test_l_distant_spec_values():
    assert geo.is_l_distant([0.0, 0.0], [13.0, 13.0], L=2.0) is True
    assert geo.is_l_distant([0.0, 0.0], [10.0, 10.0], L=2.0) is False
    assert geo.is_l_distant([1.0, 2.0], [1.0, 2.0], L=2.0) is False


def test_l_distant_matches_power_oracle():
    rng = np.random.default_rng(13)
    for _ in range(200):
        n, d = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        a = rng.uniform(-30, 30, size=(n, d))
        b = rng.uniform(-30, 30, size=(n, d))
        L = float(rng.uniform(0.5, 5.0))
        assert geo.is_l_distant(a, b, L) == l_distant_oracle(a, b, L)


def test_fi_separation_spec_values():
    assert geo.fi_separation_criterion([0.0, 1.0], [20.0, 21.0], L=2.0) is True
    assert geo.fi_separation_criterion([0.0, 1.0], [0.0, 1.0], L=2.0) is False
    assert geo.fi_separation_criterion([0.0, 1.0], [5.0, 6.0], L=2.0) is False


def test_fi_criterion_implies_full_separation():
    # On fully interactive boxes the distance criterion forces disjoint
    # projections; checked as an implication over random FI pairs.
    rng = np.random.default_rng(17)
    checked = 0
    for _ in range(500):
        n, d = 2, 1
        L = float(rng.uniform(1.0, 4.0))
        r0 = 0.5 * L
        a = rng.uniform(-8, 8, size=(n, d))
        a[1] = a[0] + rng.uniform(-1, 1, size=d) * (L + r0) * 0.9
        b = a + rng.uniform(5, 40) * rng.choice([-1.0, 1.0])
        ba = geo.NRectangle.box(a, L)
        bb = geo.NRectangle.box(b, L)
        if not (
            geo.interaction_class(ba, r0).fully_interactive
            and geo.interaction_class(bb, r0).fully_interactive
        ):
            continue
        if geo.fi_separation_criterion(a, b, L):
            checked += 1
            assert geo.separation_class(ba, bb).fully_separated
    assert checked > 20


def test_l_distant_fi_boxes_fully_separated():
    rng = np.random.default_rng(19)
    checked = 0
    for _ in range(300):
        L = float(rng.uniform(1.0, 3.0))
        a = rng.uniform(-5, 5, size=(2, 1))
        a[1] = a[0] + rng.uniform(-0.8, 0.8) * L
        b = a + rng.uniform(6 * L + 2, 40)
        ba, bb = geo.NRectangle.box(a, L), geo.NRectangle.box(b, L)
        if geo.is_l_distant(a, b, L):
            checked += 1
            assert geo.separation_class(ba, bb).fully_separated
    assert checked > 20


# ---------------------------------------------------------------- covers


def test_cover_spec_values():
    box = geo.NRectangle.box([[0.0]], 30.0)
    cov = geo.suitable_cover(box, 5.0)
    assert cov.alpha == pytest.approx(0.625)
    assert cov.cell_count == 9
    assert (30.0 / 5.0) ** 1 <= cov.cell_count <= (60.0 / 5.0) ** 1

    cov36 = geo.suitable_cover(geo.NRectangle.box([[0.0]], 36.0), 6.0)
    assert cov36.alpha == pytest.approx(0.625)
    assert cov36.cell_count == 9

    with pytest.raises(ValueError):
        geo.suitable_cover(geo.NRectangle.box([[0.0]], 12.0), 5.0)


def test_cover_alpha_is_admissible():
    rng = np.random.default_rng(23)
    for _ in range(100):
        ell = float(rng.uniform(0.5, 5.0))
        L = ell * float(rng.uniform(6.0, 20.0))
        cov = geo.suitable_cover(geo.NRectangle.box([[0.0]], L), ell)
        assert 0.6 - 1e-9 <= cov.alpha <= 0.8 + 1e-9
        assert cov.alpha == pytest.approx((L - ell) / (2 * ell * cov.pitch_index))


def test_cover_laws_random_sweep():
    rng = np.random.default_rng(29)
    for _ in range(40):
        n = int(rng.integers(1, 3))
        d = 1 if n == 2 else int(rng.integers(1, 3))
        ell = float(rng.uniform(0.5, 3.0))
        L = ell * float(rng.uniform(6.0, 10.0))
        box = geo.NRectangle.box(rng.uniform(-4, 4, size=(n, d)), L)
        laws = geo.verify_cover_laws(geo.suitable_cover(box, ell), probe_points=8, rng=rng)
        assert all(laws.values()), laws


def test_cover_union_equals_parent_dense_oracle():
    # 1D dense-point check that closed cells exactly tile the closed parent.
    cov = geo.suitable_cover(geo.NRectangle.box([[0.0]], 30.0), 5.0)
    pos = cov.axis_positions(0.0)
    ts = np.linspace(-15.0, 15.0, 4001)
    covered = np.zeros_like(ts, dtype=bool)
    for r in pos:
        covered |= (ts >= r - 2.5 - 1e-12) & (ts <= r + 2.5 + 1e-12)
    assert covered.all()
    outside = np.array([-15.001, 15.001])
    for r in pos:
        assert not np.any((outside >= r - 2.5) & (outside <= r + 2.5))


def test_cover_cell_for_center_and_probe():
    cov = geo.suitable_cover(geo.NRectangle.box([[0.0]], 30.0), 5.0)
    centers = cov.centers()
    for c in centers[:5]:
        assert np.array_equal(geo.cover_cell_for(cov, c), c)

    r = geo.cover_cell_for(cov, [[0.4]])
    # containment oracle: scan every cell for one swallowing (-0.1, 0.9)
    valid = [
        float(c[0, 0])
        for c in centers
        if c[0, 0] - 2.5 <= 0.4 - 0.5 and 0.4 + 0.5 <= c[0, 0] + 2.5
    ]
    assert float(r[0, 0]) == min(valid)


def test_cover_cell_for_lattice_points_outside_parent():
    cov = geo.suitable_cover(geo.NRectangle.box([[0.0]], 30.0), 5.0)
    for y in [-40.0, -17.0, 22.0, 55.0]:
        r = geo.cover_cell_for(cov, [[y]], restrict_to_parent=False)
        rv = float(r[0, 0])
        # member of the infinite grid
        k = rv / (cov.alpha * cov.cell_side)
        assert abs(k - round(k)) < 1e-9
        assert abs(y - rv) <= 0.4 * cov.cell_side + 1e-9


def test_k_constants_growth():
    cov = geo.suitable_cover(geo.NRectangle.box([[0.0], [0.0]], 24.0), 4.0, k_count=4)
    ks = cov.k_constants
    assert len(ks) == 4
    assert 2 * ks[0] * cov.alpha + 1 > 3 * 2
    side1 = 2 * ks[0] * cov.alpha + 1
    for m, km in enumerate(ks[1:], start=2):
        assert 2 * km * cov.alpha + 1 >= m * side1 + cov.alpha - 1e-9
    assert all(b >= a for a, b in zip(ks, ks[1:]))

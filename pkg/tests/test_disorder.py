"""Disorder sampling and potential evaluation."""

import numpy as np
import pytest

from msalab import disorder as dis
from msalab.geometry import NRectangle


def make_field(sites, values, m_plus=1.0):
    return dis.DisorderField(
        np.atleast_2d(np.asarray(sites, dtype=int)),
        np.asarray(values, dtype=float),
        master_seed=0,
        distribution=dis.AmplitudeDistribution(m_plus=m_plus),
    )


def test_sampling_is_deterministic():
    region = np.arange(-5, 6).reshape(-1, 1)
    d1 = dis.sample_disorder(region, dis.AmplitudeDistribution(), 42)
    d2 = dis.sample_disorder(region, dis.AmplitudeDistribution(), 42)
    assert np.array_equal(d1.values, d2.values)
    d3 = dis.sample_disorder(region, dis.AmplitudeDistribution(), 43)
    assert not np.array_equal(d1.values, d3.values)


def test_sampling_enumeration_order_irrelevant():
    region = np.arange(-20, 21).reshape(-1, 1)
    shuffled = region[np.random.default_rng(0).permutation(len(region))]
    a = dis.sample_disorder(region, dis.AmplitudeDistribution(), 7)
    b = dis.sample_disorder(shuffled, dis.AmplitudeDistribution(), 7)
    for site in region:
        assert a.value_at(site) == b.value_at(site)


def test_uniform_law_of_large_numbers():
    region = np.arange(10_000).reshape(-1, 1)
    fld = dis.sample_disorder(region, dis.AmplitudeDistribution(m_plus=1.0), 123)
    assert abs(fld.values.mean() - 0.5) < 0.02
    assert fld.values.min() >= 0.0 and fld.values.max() <= 1.0


def test_site_outside_region_errors():
    fld = dis.sample_disorder(np.arange(3).reshape(-1, 1), dis.AmplitudeDistribution(), 1)
    with pytest.raises(KeyError):
        fld.value_at([99])
    with pytest.raises(ValueError):
        dis.sample_disorder(np.empty((0, 1)), dis.AmplitudeDistribution(), 1)


def test_tilted_distribution_ppf():
    law = dis.AmplitudeDistribution(kind="tilted", m_plus=2.0, tilt=0.5)
    qs = np.linspace(0, 1, 101)
    vals = law.ppf(qs)
    assert vals[0] == pytest.approx(0.0) and vals[-1] == pytest.approx(2.0)
    assert np.all(np.diff(vals) > 0)
    assert law.density_bound == pytest.approx(0.75)
    # quantile-density consistency at the median
    eps = 1e-6
    q = 0.3
    dens = 2 * eps / (law.ppf(q + eps) - law.ppf(q - eps))
    v = law.ppf(q)
    assert dens == pytest.approx((1 + 0.5 * (2 * v / 2.0 - 1)) / 2.0, rel=1e-3)


def test_face_sites_open_boxes():
    rect = NRectangle.box([[0.0]], 4.0)  # (-2, 2) open: sites -1, 0, 1
    assert dis.face_sites(rect).ravel().tolist() == [-1, 0, 1]
    rect2 = NRectangle.box([[0.5]], 3.0)  # (-1, 2): sites 0, 1 ... and -0? ceil(-1)= -1 excl
    assert dis.face_sites(rect2).ravel().tolist() == [0, 1]


def test_potential_spec_values():
    profile = dis.SingleSiteProfile(u_minus=1.0, delta_minus=1.0, delta_plus=1.0)
    rect = NRectangle.box([[0.0]], 4.0)
    zero = make_field([[-1], [0], [1]], [0.0, 0.0, 0.0])
    assert dis.finite_volume_potential(rect, zero, profile, [[0.0]]) == 0.0

    fld = make_field([[-1], [0], [1]], [0.3, 0.7, 0.9])
    v1 = dis.finite_volume_potential(rect, fld, profile, [[0.0]])
    assert v1 == pytest.approx(0.7)

    pair = NRectangle.box([[0.0], [0.0]], 4.0)
    v2 = dis.finite_volume_potential(pair, fld, profile, [[0.0], [0.0]])
    assert v2 == pytest.approx(2 * v1)


def test_potential_outside_rect_errors():
    profile = dis.SingleSiteProfile()
    rect = NRectangle.box([[0.0]], 4.0)
    fld = make_field([[-1], [0], [1]], [0.5, 0.5, 0.5])
    with pytest.raises(ValueError):
        dis.finite_volume_potential(rect, fld, profile, [[5.0]])


def test_per_face_locality():
    # changing amplitudes outside every face box leaves the potential alone
    profile = dis.SingleSiteProfile()
    rect = NRectangle.box([[0.0]], 4.0)
    region = np.arange(-10, 11).reshape(-1, 1)
    fld = dis.sample_disorder(region, dis.AmplitudeDistribution(), 5)
    x = [[0.3]]
    v_before = dis.finite_volume_potential(rect, fld, profile, x)
    outside = np.asarray([[k] for k in range(-10, 11) if abs(k) >= 2])
    v_after = dis.finite_volume_potential(rect, fld.resample(outside, 999), profile, x)
    assert v_before == v_after


def test_potential_bounds():
    profile = dis.SingleSiteProfile(u_minus=1.0, delta_minus=1.0, delta_plus=1.0)
    rng = np.random.default_rng(2)
    rect = NRectangle.box([[0.0], [3.0]], 6.0)
    region = dis.region_for(rect)
    for seed in range(20):
        fld = dis.sample_disorder(region, dis.AmplitudeDistribution(m_plus=1.0), seed)
        x = rect.center + (rng.random((2, 1)) - 0.5) * 5.9
        v = dis.finite_volume_potential(rect, fld, profile, x)
        # delta_plus = 1: at most one translate covers a point per particle
        assert 0.0 <= v <= 2 * 1.0 * 1.0 + 1e-12


def test_fully_separated_independence():
    profile = dis.SingleSiteProfile()
    r1 = NRectangle.box([[0.0], [1.0]], 4.0)
    r2 = NRectangle.box([[20.0], [21.0]], 4.0)
    region = dis.region_for(r1, r2)
    fld = dis.sample_disorder(region, dis.AmplitudeDistribution(), 31)
    x = [[0.4], [1.2]]
    v = dis.finite_volume_potential(r1, fld, profile, x)
    resampled = fld.resample(dis.face_sites(r2), 777)
    assert dis.finite_volume_potential(r1, resampled, profile, x) == v


def test_interaction_spec_values():
    spec = dis.InteractionSpec(bound=0.8, r0=1.5)
    assert dis.interaction_potential(spec, [[0.0]]) == 0.0
    assert dis.interaction_potential(spec, [[0.0], [10.0]]) == 0.0
    tight = [[0.0], [0.5], [1.0]]
    assert dis.interaction_potential(spec, tight) == pytest.approx(3 * 0.8)


def test_interaction_symmetry_and_range():
    spec = dis.InteractionSpec(bound=1.0, r0=2.0)
    y = np.array([1.3])
    assert spec.pair_potential(y) == spec.pair_potential(-y)
    assert spec.pair_potential(np.array([2.0])) == 1.0  # closed at r0
    assert spec.pair_potential(np.array([2.0 + 1e-9])) == 0.0


def test_profile_validation():
    with pytest.raises(ValueError):
        dis.SingleSiteProfile(u_minus=0.0)
    with pytest.raises(ValueError):
        dis.SingleSiteProfile(delta_minus=2.0, delta_plus=1.0)
    with pytest.raises(ValueError):
        dis.AmplitudeDistribution(kind="tilted", tilt=1.5)

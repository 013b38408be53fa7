"""Reference pattern construction: centre values, symmetry, hue layout."""

import numpy as np
import pytest

from telltale.imagecore import rgb_to_hls
from telltale.patterns import (PatternConfig, make_geometric, make_photometric,
                               make_reference_patterns, make_semantic,
                               polar_coords, reference_bundle)


def test_semantic_is_all_zero():
    sem = make_semantic(PatternConfig(height=32, width=48))
    assert sem.shape == (32, 48)
    assert not sem.any()


def test_geometric_centre_row_and_column_are_half():
    # odd size -> the centre row/column sit exactly on xbar=0 / ybar=0,
    # where sin(omega*0)=0 and the pattern value is (1+0)/2
    geo = make_geometric(PatternConfig(height=65, width=65))
    np.testing.assert_array_equal(geo[32, :], 0.5)
    np.testing.assert_array_equal(geo[:, 32], 0.5)


def test_geometric_point_symmetry_is_exact():
    for h, w in [(64, 64), (65, 65), (48, 96), (33, 47)]:
        geo = make_geometric(PatternConfig(height=h, width=w))
        np.testing.assert_array_equal(geo, geo[::-1, ::-1])


def test_geometric_range():
    geo = make_geometric(PatternConfig(height=128, width=128))
    assert geo.min() >= 0.0 and geo.max() <= 1.0
    assert geo.std() > 0.1  # strongly textured by construction


def test_photometric_centre_is_white():
    pho = make_photometric(PatternConfig(height=65, width=65))
    np.testing.assert_allclose(pho[32, 32], [1.0, 1.0, 1.0], atol=1e-12)


def test_photometric_lightness_falls_radially():
    cfg = PatternConfig(height=65, width=65)
    pho = make_photometric(cfg)
    field = polar_coords(cfg)
    lightness = rgb_to_hls(pho)[..., 1]
    np.testing.assert_allclose(lightness, 1.0 - field.rho / np.sqrt(2.0), atol=1e-9)


def test_photometric_hue_equals_angle():
    cfg = PatternConfig(height=129, width=129)
    pho = make_photometric(cfg)
    field = polar_coords(cfg)
    hls = rgb_to_hls(pho)
    want = (field.phi / (2.0 * np.pi)) % 1.0
    # hue is undefined where saturation collapses near the white centre and
    # the dark rim; compare on the well-conditioned annulus
    ring = (field.rho > 0.1) & (field.rho < 1.0)
    got, expect = hls[..., 0][ring], want[ring]
    diff = np.abs(got - expect)
    diff = np.minimum(diff, 1.0 - diff)  # hue wraps
    assert diff.max() < 1e-9


def test_delta_phi_rotates_hue():
    base = PatternConfig(height=129, width=129)
    quarter = PatternConfig(height=129, width=129, delta_phi=np.pi / 2)
    h0 = rgb_to_hls(make_photometric(base))[..., 0]
    h1 = rgb_to_hls(make_photometric(quarter))[..., 0]
    field = polar_coords(base)
    ring = (field.rho > 0.1) & (field.rho < 1.0)
    diff = (h1 - h0)[ring] % 1.0
    np.testing.assert_allclose(diff, 0.25, atol=1e-9)


def test_geometric_frequency_bounds_show_in_spectrum():
    # the outermost ring oscillates near xi_max, the centre near xi_min:
    # adjacent-pixel differences must be much larger at the rim
    cfg = PatternConfig(height=256, width=256, xi_min=2.0, xi_max=10.0)
    geo = make_geometric(cfg)
    centre = geo[128, 118:138]
    rim = geo[128, 2:22]
    assert np.abs(np.diff(rim)).mean() > 2.0 * np.abs(np.diff(centre)).mean()


def test_reference_bundle_shapes_and_provenance():
    refs = reference_bundle(PatternConfig(height=40, width=56))
    assert refs.sem.shape == (40, 56)
    assert refs.pho.shape == (40, 56, 3)
    assert refs.geo.shape == (40, 56)
    assert refs.provenance == "reference"
    sem, pho, geo = make_reference_patterns(PatternConfig(height=40, width=56))
    np.testing.assert_array_equal(refs.geo, geo)


def test_pattern_config_validation():
    with pytest.raises(ValueError):
        PatternConfig(height=1, width=10)
    with pytest.raises(ValueError):
        PatternConfig(xi_min=5.0, xi_max=2.0)
    with pytest.raises(ValueError):
        PatternConfig(xi_min=-1.0)

"""Geometric warps against a brute-force oracle, photometric identities,
masks, and chain (de)serialization."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from telltale.imagecore import luminance, write_ttwm
from telltale.transforms import (GEO_BOXES, GEO_MEMBERS, PHO_MEMBERS, ChainSpec,
                                 GeoParams, MaskSpec, ParameterError, PhoParams,
                                 SemanticEdit, adjust, apply_chain,
                                 apply_geometric, apply_photometric,
                                 apply_semantic, binarize_mask, chain_from_json,
                                 chain_to_json, compose_geometric_matrix,
                                 ground_truth_watermarks, inverse_affine,
                                 load_chain, make_mask, recenter,
                                 recentred_matrix, save_chain, surrogate_fill,
                                 validate_order, warp_bilinear,
                                 warp_mask_nearest)


def brute_force_warp(img, m):
    """Reference bilinear sampler: per-pixel Python loops, out-of-bounds
    corners contribute zero. Deliberately independent of the kernels."""
    h, w = img.shape[:2]
    out = np.zeros(img.shape, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            u = m[0, 0] * x + m[0, 1] * y + m[0, 2]
            v = m[1, 0] * x + m[1, 1] * y + m[1, 2]
            u0, v0 = math.floor(u), math.floor(v)
            fu, fv = u - u0, v - v0
            acc = 0.0
            for dy, dx, wt in ((0, 0, (1 - fu) * (1 - fv)), (0, 1, fu * (1 - fv)),
                               (1, 0, (1 - fu) * fv), (1, 1, fu * fv)):
                yy, xx = v0 + dy, u0 + dx
                if 0 <= yy < h and 0 <= xx < w:
                    acc = acc + wt * img[yy, xx]
            out[y, x] = acc
    return out


def random_affine(rng):
    m = np.eye(3)
    m[:2, :2] = rng.uniform(-1.5, 1.5, size=(2, 2))
    m[:2, 2] = rng.uniform(-4.0, 4.0, size=2)
    return m


# --- warp against the oracle -------------------------------------------------

def test_warp_matches_brute_force_single_channel(rng):
    for _ in range(10):
        img = rng.random((8, 8))
        m = random_affine(rng)
        got = warp_bilinear(img, m)
        want = brute_force_warp(img, m)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_warp_matches_brute_force_three_channel(rng):
    for _ in range(5):
        img = rng.random((7, 9, 3))
        m = random_affine(rng)
        got = warp_bilinear(img, m)
        want = brute_force_warp(img, m)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_warp_identity_is_bitwise_copy(rng):
    img = rng.random((16, 16))
    np.testing.assert_array_equal(warp_bilinear(img, np.eye(3)), img)


def test_warp_is_linear_in_the_image(rng):
    a, b = rng.random((12, 12)), rng.random((12, 12))
    m = random_affine(rng)
    lhs = warp_bilinear(a + 0.5 * b, m)
    rhs = warp_bilinear(a, m) + 0.5 * warp_bilinear(b, m)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_warp_pure_translation_shifts_pixels(rng):
    img = rng.random((10, 10))
    m = np.eye(3)
    m[0, 2] = 2.0  # sample from x+2: content moves left by 2
    out = warp_bilinear(img, m)
    np.testing.assert_allclose(out[:, :8], img[:, 2:], atol=1e-12)
    np.testing.assert_array_equal(out[:, 8:], 0.0)


# --- matrices ----------------------------------------------------------------

def test_recenter_identity_is_identity():
    np.testing.assert_array_equal(recenter(np.eye(3), 64, 48), np.eye(3))


def test_rotation_inverse_composes_to_identity(rng):
    for theta in rng.uniform(-np.pi, np.pi, size=100):
        fwd = inverse_affine("ro", GeoParams(ro=theta), 32, 32)
        bwd = inverse_affine("ro", GeoParams(ro=-theta), 32, 32)
        np.testing.assert_allclose(fwd @ bwd, np.eye(3), atol=1e-9)


def test_scale_matrix_entries_are_exact_reciprocal():
    for sc in (0.8, 1.0, 1.25, 2.0):
        m = inverse_affine("sc", GeoParams(sc=sc), 16, 16)
        assert m[0, 0] == 1.0 / sc and m[1, 1] == 1.0 / sc
        assert m[0, 1] == 0.0 and m[1, 0] == 0.0


def test_translation_matrix_in_pixel_units():
    m = inverse_affine("tr", GeoParams(tr_x=0.1, tr_y=-0.25), 200, 100)
    assert m[0, 2] == -0.1 * 200
    assert m[1, 2] == 0.25 * 100


def test_shear_matrix_uses_tangent():
    m = inverse_affine("sh", GeoParams(sh_x=0.2, sh_y=-0.1), 16, 16)
    assert m[0, 1] == pytest.approx(math.tan(0.2), abs=1e-15)
    assert m[1, 0] == pytest.approx(math.tan(-0.1), abs=1e-15)


def test_singular_scale_rejected():
    with pytest.raises(ParameterError):
        GeoParams(sc=0.0).validate()


def test_recentred_rotation_fixes_the_centre():
    m = recentred_matrix("ro", GeoParams(ro=0.7), 33, 33)
    centre = np.array([16.0, 16.0, 1.0])
    np.testing.assert_allclose(m @ centre, centre, atol=1e-12)


def test_apply_geometric_identity_params_is_bitwise(rng):
    img = rng.random((20, 20))
    out = apply_geometric(img, GEO_MEMBERS, GeoParams())
    np.testing.assert_array_equal(out, img)


def test_geometric_steps_do_not_commute(rng):
    img = rng.random((32, 32))
    params = GeoParams(ro=0.4, tr_x=0.15)
    a = apply_geometric(img, ("ro", "tr", "sc", "sh"), params)
    b = apply_geometric(img, ("tr", "ro", "sc", "sh"), params)
    assert np.abs(a - b).mean() > 1e-3


def test_sequential_warps_differ_from_composed_at_boundaries():
    # the composed matrix is the exact coordinate map, but sequential
    # resampling zero-fills and re-interpolates at each step; on a smooth
    # image the interiors agree closely while borders do not
    ys, xs = np.meshgrid(np.arange(32.0), np.arange(32.0), indexing="ij")
    img = 0.5 + 0.4 * np.sin(2 * np.pi * xs / 32) * np.cos(2 * np.pi * ys / 32)
    params = GeoParams(ro=0.3, sc=1.1)
    order = ("ro", "tr", "sc", "sh")
    seq = apply_geometric(img, order, params)
    one = warp_bilinear(img, compose_geometric_matrix(order, params, 32, 32))
    inner = (slice(10, 22), slice(10, 22))
    np.testing.assert_allclose(seq[inner], one[inner], atol=0.02)
    assert np.abs(seq - one).max() > 1e-4


def test_validate_order_rejects_bad_sets():
    with pytest.raises(ParameterError):
        validate_order(("ro", "ro", "sc", "sh"), GEO_MEMBERS)
    with pytest.raises(ParameterError):
        validate_order(("ro", "tr", "sc"), GEO_MEMBERS)
    assert validate_order(["b", "s", "c", "h"], PHO_MEMBERS) == ("b", "s", "c", "h")


# --- photometric operators ----------------------------------------------------

def test_adjust_identity_values(rng):
    img = rng.random((9, 9, 3))
    np.testing.assert_allclose(adjust(img, "b", 1.0), img, atol=1e-6)
    np.testing.assert_allclose(adjust(img, "c", 1.0), img, atol=1e-6)
    np.testing.assert_allclose(adjust(img, "s", 1.0), img, atol=1e-6)
    np.testing.assert_allclose(adjust(img, "h", 0.0), img, atol=1e-6)


def test_brightness_scales_and_clamps(rng):
    img = rng.random((6, 6, 3))
    np.testing.assert_allclose(adjust(img, "b", 0.5), 0.5 * img, atol=1e-12)
    assert np.all(adjust(img, "b", 3.0) <= 1.0)


def test_zero_saturation_replicates_luminance(rng):
    img = rng.random((7, 7, 3))
    got = adjust(img, "s", 0.0)
    lum = luminance(img)
    for k in range(3):
        np.testing.assert_allclose(got[..., k], lum, atol=1e-12)


def test_zero_contrast_is_constant_mean_luminance(rng):
    img = rng.random((7, 7, 3))
    got = adjust(img, "c", 0.0)
    np.testing.assert_allclose(got, luminance(img).mean(), atol=1e-12)


def test_half_cycle_hue_shift_maps_red_to_cyan():
    img = np.zeros((2, 2, 3))
    img[..., 0] = 1.0
    got = adjust(img, "h", 0.5)
    want = np.zeros((2, 2, 3))
    want[..., 1] = 1.0
    want[..., 2] = 1.0
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_hue_shift_full_cycle_is_identity(rng):
    img = rng.random((8, 8, 3))
    np.testing.assert_allclose(adjust(img, "h", 1.0), img, atol=1e-6)
    np.testing.assert_allclose(adjust(img, "h", -1.0), img, atol=1e-6)


def test_hue_shifts_compose_additively(rng):
    img = rng.random((8, 8, 3))
    a = adjust(adjust(img, "h", 0.2), "h", 0.1)
    b = adjust(img, "h", 0.3)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_contrast_anchor_recomputed_per_step(rng):
    # applying brightness first changes the luminance mean that contrast
    # anchors to, so the two orders differ
    img = rng.random((8, 8, 3))
    a = apply_photometric(img, ("b", "c", "h", "s"), PhoParams(b=0.8, c=1.2))
    b = apply_photometric(img, ("c", "b", "h", "s"), PhoParams(b=0.8, c=1.2))
    assert np.abs(a - b).max() > 1e-6


def test_adjust_rejects_negative_factors(rng):
    img = rng.random((4, 4, 3))
    for kind in ("b", "c", "s"):
        with pytest.raises(ParameterError):
            adjust(img, kind, -0.1)


@settings(max_examples=25, deadline=None)
@given(value=st.floats(min_value=0.0, max_value=3.0),
       kind=st.sampled_from(["b", "c", "s"]))
def test_adjust_output_always_in_unit_range(value, kind):
    img = np.random.default_rng(7).random((6, 6, 3))
    out = adjust(img, kind, value)
    assert out.min() >= 0.0 and out.max() <= 1.0


# --- masks and semantic edits --------------------------------------------------

def test_make_mask_is_binary_and_seed_deterministic():
    a = make_mask(64, 64, seed=5)
    b = make_mask(64, 64, seed=5)
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 1.0}
    assert a.sum() > 0


def test_make_mask_respects_shape_and_fraction():
    rect = make_mask(128, 128, seed=9, shape="rect", frac=0.2)
    area = rect.mean()
    assert 0.15 <= area <= 0.25
    ellipse = make_mask(128, 128, seed=9, shape="ellipse", frac=0.2)
    assert 0.14 <= ellipse.mean() <= 0.26


def test_make_mask_validation():
    with pytest.raises(ParameterError):
        make_mask(32, 32, seed=0, shape="triangle")
    with pytest.raises(ParameterError):
        make_mask(32, 32, seed=0, frac=0.9)


def test_binarize_mask():
    m = np.array([[0.2, 0.5], [0.7, 0.49]])
    np.testing.assert_array_equal(binarize_mask(m), [[0.0, 1.0], [1.0, 0.0]])


def test_apply_semantic_composites_under_mask(rng):
    img = rng.random((16, 16, 3))
    fill = rng.random((16, 16, 3))
    mask = make_mask(16, 16, seed=3, shape="rect", frac=0.25)
    edit = SemanticEdit(mask=mask, fill=fill)
    out = apply_semantic(img, edit)
    sel = mask.astype(bool)
    np.testing.assert_array_equal(out[~sel], img[~sel])
    np.testing.assert_array_equal(out[sel], fill[sel])


def test_surrogate_fill_is_deterministic_and_differs_from_carrier(rng):
    img = rng.random((32, 32, 3))
    a = surrogate_fill(img, seed=11)
    b = surrogate_fill(img, seed=11)
    np.testing.assert_array_equal(a, b)
    assert np.abs(a - img).mean() > 0.01


def test_mask_spec_resolution_matches_make_mask():
    edit = SemanticEdit(mask_spec=MaskSpec(seed=21, shape="rect", frac=0.1))
    np.testing.assert_array_equal(edit.resolve_mask(48, 48),
                                  make_mask(48, 48, 21, shape="rect", frac=0.1))


def test_warp_mask_nearest_translation():
    mask = np.zeros((16, 16))
    mask[4:8, 4:8] = 1.0
    m = np.eye(3)
    m[0, 2] = 4.0  # inverse map: content moves 4 px left
    out = warp_mask_nearest(mask, m)
    want = np.zeros((16, 16))
    want[4:8, 0:4] = 1.0
    np.testing.assert_array_equal(out, want)
    assert set(np.unique(out)) <= {0.0, 1.0}


# --- chains and ground truth ---------------------------------------------------

def _sample_chain():
    return ChainSpec(
        semantic=SemanticEdit(mask_spec=MaskSpec(seed=4, shape="ellipse", frac=0.15),
                              fill_seed=7),
        photometric=(("s", "b", "h", "c"), PhoParams(b=1.1, c=0.9, h=0.2, s=1.05)),
        geometric=(("tr", "ro", "sh", "sc"), GeoParams(ro=0.2, tr_x=0.05, sc=1.1)))


def test_apply_chain_identity_blocks_bitwise(rng):
    img = rng.random((24, 24, 3))
    np.testing.assert_array_equal(apply_chain(img, ChainSpec()), img)


def test_apply_chain_runs_blocks_in_fixed_class_order(rng):
    img = rng.random((32, 32, 3))
    chain = _sample_chain()
    manual = apply_semantic(img, chain.semantic)
    manual = apply_photometric(manual, *chain.photometric)
    manual = apply_geometric(manual, *chain.geometric)
    np.testing.assert_array_equal(apply_chain(img, chain), manual)


def test_ground_truth_identity_chain_returns_references(refs64):
    gt = ground_truth_watermarks(refs64, ChainSpec())
    np.testing.assert_array_equal(gt.sem, refs64.sem)
    np.testing.assert_array_equal(gt.pho, refs64.pho)
    np.testing.assert_array_equal(gt.geo, refs64.geo)
    assert gt.provenance == "ground_truth"


def test_ground_truth_photometric_only_keeps_geometric_mark(refs64):
    chain = ChainSpec(photometric=(("b", "c", "h", "s"), PhoParams(b=1.2)))
    gt = ground_truth_watermarks(refs64, chain)
    np.testing.assert_array_equal(gt.geo, refs64.geo)
    np.testing.assert_allclose(gt.pho, np.clip(1.2 * refs64.pho, 0, 1), atol=1e-12)


def test_ground_truth_semantic_mask_is_warped_by_geometry(refs64):
    mask = make_mask(64, 64, seed=2, shape="rect", frac=0.2)
    chain = ChainSpec(semantic=SemanticEdit(mask=mask),
                      geometric=(GEO_MEMBERS, GeoParams(tr_x=0.1)))
    gt = ground_truth_watermarks(refs64, chain)
    want = apply_geometric(mask, GEO_MEMBERS, GeoParams(tr_x=0.1))
    np.testing.assert_array_equal(gt.sem, want)


def test_chain_json_round_trip(tmp_path):
    chain = _sample_chain()
    obj = chain_to_json(chain)
    assert obj["photometric"]["order"] == ["s", "b", "h", "c"]
    assert obj["semantic"]["fill"] == "surrogate"
    back = chain_from_json(json.loads(json.dumps(obj)))
    assert back.photometric[0] == chain.photometric[0]
    assert back.photometric[1] == chain.photometric[1]
    assert back.geometric[0] == chain.geometric[0]
    assert back.geometric[1] == chain.geometric[1]
    assert back.semantic.mask_spec == chain.semantic.mask_spec
    assert back.semantic.fill_seed == chain.semantic.fill_seed

    path = tmp_path / "chain.json"
    save_chain(chain, path)
    again = load_chain(path)
    assert again.geometric[1] == chain.geometric[1]


def test_chain_json_accepts_mask_file(tmp_path, rng):
    mask = binarize_mask(rng.random((16, 16)))
    write_ttwm(mask, tmp_path / "mask.ttwm")
    obj = {"semantic": {"mask": "mask.ttwm", "fill": "surrogate"},
           "geometric": {"order": ["ro", "tr", "sc", "sh"],
                         "params": {"ro": 0.1}}}
    chain = chain_from_json(obj, base_dir=tmp_path)
    np.testing.assert_array_equal(chain.semantic.mask,
                                  mask.astype(np.float32).astype(np.float64))
    assert chain.geometric[1].ro == 0.1


def test_chain_from_json_rejects_unknown_keys():
    from telltale.imagecore import FormatError
    with pytest.raises(FormatError):
        chain_from_json({"photometric": {"order": ["b", "c", "h", "s"],
                                         "params": {"brightness": 1.0}}})

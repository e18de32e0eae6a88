"""Luminance, masking, albedo proxy/inversion, and the forward renderer."""

import colorsys

import numpy as np
import pytest

from ppsdepth import (
    CameraIntrinsics,
    LightSpec,
    RenderModel,
    SceneSpec,
    albedo_proxy,
    albedo_variance_loss,
    generate_scene,
    invert_albedo,
    luminance,
    pps_from_depth,
    render,
    specular_mask,
)


def rgb(*pixels):
    """Stack pixel triples into a 1xN RGB image."""
    return np.array([pixels], dtype=np.float64)


# ---------------------------------------------------------------------------
# luminance and masking


def test_luminance_white_and_black():
    img = rgb((1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    np.testing.assert_allclose(luminance(img), [[1.0, 0.0]])


def test_luminance_weighted_sum():
    np.testing.assert_allclose(
        luminance(rgb((0.5, 0.25, 0.0))), [[0.29625]], atol=1e-12
    )


def test_luminance_rejects_out_of_range():
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        luminance(rgb((1.5, 0.0, 0.0)))


def test_specular_mask_threshold_is_strict():
    gray = np.array([[0.99, 0.50, 0.98]])
    np.testing.assert_array_equal(specular_mask(gray), [[False, True, False]])


def test_specular_mask_monotone_in_threshold():
    gray = np.random.default_rng(0).random((16, 16))
    lo = specular_mask(gray, threshold=0.3)
    hi = specular_mask(gray, threshold=0.7)
    assert not np.any(lo & ~hi)  # raising the threshold never invalidates a pixel


def test_specular_mask_threshold_range():
    gray = np.zeros((2, 2))
    with pytest.raises(ValueError, match="threshold"):
        specular_mask(gray, threshold=0.0)
    with pytest.raises(ValueError, match="threshold"):
        specular_mask(gray, threshold=1.2)


# ---------------------------------------------------------------------------
# albedo proxy


def test_albedo_proxy_gray_maps_to_white():
    np.testing.assert_allclose(albedo_proxy(rgb((0.3, 0.3, 0.3))), rgb((1, 1, 1)))


def test_albedo_proxy_saturated_red():
    np.testing.assert_allclose(albedo_proxy(rgb((0.5, 0.0, 0.0))), rgb((1, 0, 0)), atol=1e-12)


def test_albedo_proxy_cyan_half_saturation():
    np.testing.assert_allclose(
        albedo_proxy(rgb((0.2, 0.4, 0.4))), rgb((0.5, 1.0, 1.0)), atol=1e-12
    )


def test_albedo_proxy_matches_colorsys():
    rng = np.random.default_rng(21)
    img = rng.random((5, 7, 3))
    proxy = albedo_proxy(img)
    for v in range(5):
        for u in range(7):
            h, s, _ = colorsys.rgb_to_hsv(*img[v, u])
            expected = colorsys.hsv_to_rgb(h, s, 1.0)
            np.testing.assert_allclose(proxy[v, u], expected, atol=1e-12)


def test_albedo_proxy_black_maps_to_white():
    # zero-value pixels are achromatic; the proxy discards brightness entirely
    np.testing.assert_allclose(albedo_proxy(rgb((0.0, 0.0, 0.0))), rgb((1, 1, 1)))


# ---------------------------------------------------------------------------
# renderer


def flat_cam() -> CameraIntrinsics:
    return CameraIntrinsics(fx=1.0, fy=1.0, cx=2.0, cy=2.0, width=5, height=5)


def test_render_degenerates_to_pps_at_unit_params():
    depth = np.full((5, 5), 2.0)
    ones = np.ones((5, 5, 3))
    res = render(depth, flat_cam(), LightSpec.colocated(), ones)
    np.testing.assert_allclose(res.image[2, 2], 0.25)
    assert not res.clamped[2, 2]


def test_render_gamma_takes_root():
    depth = np.full((5, 5), 2.0)
    ones = np.ones((5, 5, 3))
    res = render(depth, flat_cam(), LightSpec.colocated(), ones, RenderModel(gamma=2.0))
    np.testing.assert_allclose(res.image[2, 2], 0.5)


def test_render_matches_per_pixel_oracle(tube_spec, cam32):
    """Scalar per-pixel recomputation of the full image formation model."""
    spec = SceneSpec(
        kind="tube", radius=1.0, length=6.0, offset_x=0.05, offset_y=-0.03,
        albedo_mode="procedural", albedo_seed=4,
    )
    model = RenderModel(sigma0=1.2, gain=0.9, gamma=2.2, mu_r=0.4)
    light = LightSpec.colocated()
    depth, albedo = generate_scene(spec, cam32)
    res = render(depth, cam32, light, albedo, model)

    # reuse the chain's normals (their own oracle lives in the geometry tests)
    from ppsdepth import backproject, normals_from_points

    points = backproject(depth, cam32)
    normals = normals_from_points(points).normals
    expected = np.empty((32, 32, 3))
    for v in range(32):
        for u in range(32):
            x = points[v, u]
            dist = float(np.linalg.norm(x - light.position))
            l = (x - light.position) / dist
            r_psi = max(0.0, float(l @ light.direction)) ** model.mu_r
            cos = max(0.0, float(l @ normals[v, u]))
            for ch in range(3):
                raw = model.sigma0 / dist**2 * r_psi * cos * albedo[v, u, ch] * model.gain
                expected[v, u, ch] = min(1.0, raw ** (1.0 / model.gamma))

    assert np.abs(res.image - expected).max() < 1e-9


def test_render_reports_clamped_pixels():
    depth = np.full((5, 5), 0.4)  # close surface saturates at unit exposure
    ones = np.ones((5, 5, 3))
    res = render(depth, flat_cam(), LightSpec.colocated(), ones)
    assert res.clamped[2, 2]
    assert res.image.max() <= 1.0


def test_render_rejects_mismatched_albedo(cam16):
    with pytest.raises(ValueError, match="albedo"):
        render(np.full(cam16.shape, 2.0), cam16, LightSpec.colocated(), np.ones((4, 4, 3)))


# ---------------------------------------------------------------------------
# albedo inversion


def test_invert_albedo_round_trip_linear(tube_spec, cam32):
    depth, _ = generate_scene(tube_spec, cam32)
    albedo = np.broadcast_to([0.8, 0.4, 0.4], depth.shape + (3,)).copy()
    light = LightSpec.colocated()
    res = render(depth, cam32, light, albedo, RenderModel())
    assert not res.clamped.any()
    rho, valid = invert_albedo(res.image, depth, cam32, light, RenderModel())
    assert valid.all()
    assert np.abs(rho - albedo).max() < 1e-9


def test_invert_albedo_round_trip_gamma(cam32):
    spec = SceneSpec(kind="tube", radius=1.0, length=6.0, offset_x=0.05,
                     offset_y=-0.03, albedo_mode="procedural", albedo_seed=9)
    model = RenderModel(gamma=2.2)
    light = LightSpec.colocated()
    depth, albedo = generate_scene(spec, cam32)
    res = render(depth, cam32, light, albedo, model)
    assert not res.clamped.any()
    rho, valid = invert_albedo(res.image, depth, cam32, light, model)
    assert np.abs(rho[valid] - albedo[valid]).max() < 1e-5


def test_invert_albedo_zero_intensity_gives_zero(cam16):
    depth = np.full(cam16.shape, 2.0)
    rho, valid = invert_albedo(np.zeros(cam16.shape + (3,)), depth, cam16, LightSpec.colocated())
    assert valid.any()
    np.testing.assert_array_equal(rho[valid], 0.0)


def test_invert_albedo_flags_unlit_pixels(cam16):
    # a light far off-axis leaves grazing pixels below the denominator floor
    depth = np.full(cam16.shape, 2.0)
    light = LightSpec(position=(0.0, 0.0, 2.0 - 1e-6), direction=(0.0, 0.0, 1.0))
    image = np.full(cam16.shape + (3,), 0.5)
    rho, valid = invert_albedo(image, depth, cam16, light)
    # surface points at the light's own depth see it edge-on: cos ~ 0
    assert not valid.all()
    np.testing.assert_array_equal(rho[~valid], 0.0)


# ---------------------------------------------------------------------------
# albedo variance


def test_albedo_variance_zero_for_constant():
    albedo = np.full((3, 3, 3), 0.6)
    assert albedo_variance_loss(albedo, np.ones((3, 3), dtype=bool)) == 0.0


def test_albedo_variance_two_pixel_example():
    albedo = np.zeros((1, 2, 3))
    albedo[0, 0] = (0.0, 0.5, 0.5)
    albedo[0, 1] = (1.0, 0.5, 0.5)
    loss = albedo_variance_loss(albedo, np.ones((1, 2), dtype=bool))
    np.testing.assert_allclose(loss, 0.25 / 3.0)


def test_albedo_variance_permutation_invariant():
    rng = np.random.default_rng(2)
    albedo = rng.random((4, 4, 3))
    mask = np.ones((4, 4), dtype=bool)
    base = albedo_variance_loss(albedo, mask)
    perm = rng.permutation(16)
    shuffled = albedo.reshape(16, 3)[perm].reshape(4, 4, 3)
    np.testing.assert_allclose(albedo_variance_loss(shuffled, mask), base, rtol=1e-12)


def test_albedo_variance_needs_two_pixels():
    mask = np.zeros((2, 2), dtype=bool)
    mask[0, 0] = True
    with pytest.raises(ValueError, match="at least 2"):
        albedo_variance_loss(np.ones((2, 2, 3)), mask)


def test_albedo_variance_mask_shape():
    with pytest.raises(ValueError, match="mask shape"):
        albedo_variance_loss(np.ones((2, 2, 3)), np.ones((3, 3), dtype=bool))


# ---------------------------------------------------------------------------
# render/PPS affinity


def test_constant_albedo_image_is_affine_in_pps(tube32, cam32, light):
    depth, _ = tube32
    albedo = np.full(depth.shape + (3,), 0.7)
    res = render(depth, cam32, light, albedo, RenderModel(sigma0=1.3, gain=0.8))
    pps = pps_from_depth(depth, cam32, light).pps
    keep = ~res.clamped
    gray = luminance(res.image)
    r = np.corrcoef(gray[keep], pps[keep])[0, 1]
    assert r > 1.0 - 1e-9

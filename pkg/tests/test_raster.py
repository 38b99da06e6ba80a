import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatshard import _kernels, raster
from splatshard.raster import NonFiniteGradientError, render_backward, render_ray, render_view
from splatshard.sh import C0
from splatshard.splat import Camera, Ray, SplatSet, logit

from conftest import look, make_scene
from fd import GROUPS, fd_group, objective, rel_error
from oracles import composite_pixel, splat_terms


def axis_splats(depths, alphas, colors, scale=0.05):
    """Splats on the +z axis of an identity camera, one SH dc per color."""
    n = len(depths)
    mu = np.zeros((n, 3))
    mu[:, 2] = depths
    sh = ((np.asarray(colors, float) - 0.5) / C0)[:, None, :]
    return SplatSet(np.arange(n), mu, np.log(np.full((n, 3), scale)), np.tile([1.0, 0, 0, 0], (n, 1)),
                    logit(np.asarray(alphas, float)), sh)


def center_camera(size=11):
    # pixel (5, 5) is centered on the optical axis
    return Camera(size, size, 100.0, 100.0, size / 2, size / 2)


def test_empty_scene_is_background():
    img = render_view(SplatSet.empty(), center_camera(), background=(0.2, 0.4, 0.6))
    assert np.all(img.color == np.array([0.2, 0.4, 0.6]))
    assert np.all(img.transmittance == 1.0)


def test_opaque_splat_hits_clamp():
    # sigma saturates at 0.99 rather than 1, so the background leaks by 1%
    s = axis_splats([2.0], [1.0 - 1e-12], [[0.9, 0.2, 0.4]])
    bg = np.array([0.1, 0.1, 0.1])
    img = render_view(s, center_camera(), bg, stop_T=0.0)
    assert np.allclose(img.color[5, 5], 0.99 * np.array([0.9, 0.2, 0.4]) + 0.01 * bg, atol=1e-12)
    assert img.transmittance[5, 5] == pytest.approx(0.01)


def test_two_half_opaque_splats():
    c1, c2 = np.array([0.8, 0.1, 0.3]), np.array([0.2, 0.7, 0.5])
    s = axis_splats([2.0, 3.0], [0.5, 0.5], [c1, c2])
    img = render_view(s, center_camera(), stop_T=0.0)
    assert np.allclose(img.color[5, 5], 0.5 * c1 + 0.25 * c2, atol=1e-12)
    assert img.transmittance[5, 5] == pytest.approx(0.25)


def test_order_is_by_depth_not_input():
    c1, c2 = np.array([0.8, 0.1, 0.3]), np.array([0.2, 0.7, 0.5])
    s = axis_splats([3.0, 2.0], [0.5, 0.5], [c2, c1])
    img = render_view(s, center_camera(), stop_T=0.0)
    assert np.allclose(img.color[5, 5], 0.5 * c1 + 0.25 * c2, atol=1e-12)


def test_matches_independent_oracle(scene, camera):
    img = render_view(scene, camera, background=(0.1, 0.2, 0.3), stop_T=0.0)
    rng = np.random.default_rng(0)
    for px, py in rng.integers(0, camera.width, (40, 2)):
        C, T = composite_pixel(splat_terms(scene, camera, px, py), (0.1, 0.2, 0.3))
        assert np.allclose(img.color[py, px], C, atol=1e-9)
        assert abs(img.transmittance[py, px] - T) < 1e-9


def test_render_ray_three_random_splats():
    rng = np.random.default_rng(11)
    for trial in range(10):
        s = make_scene(3, seed=trial, extent=0.1, scale=(0.1, 0.3))
        o = rng.normal(size=3) * 0.05 + [0, 0, -3]
        d = s.mu.mean(axis=0) - o + rng.normal(size=3) * 0.02
        ray = Ray(o, d)
        C, T = render_ray(s, ray, stop_T=0.0)
        cam = Camera.for_ray(ray)
        Cr, Tr = composite_pixel(splat_terms(s, cam, 0, 0))
        assert np.allclose(C, Cr, atol=1e-9) and abs(T - Tr) < 1e-9


def test_render_ray_no_hits():
    C, T = render_ray(make_scene(5), Ray([0, 0, 10], [0, 0, 1]), background=(0.3, 0.3, 0.3))
    assert np.array_equal(C, [0.3, 0.3, 0.3]) and T == 1.0


def test_render_ray_matches_view_bitwise(scene, camera):
    img = render_view(scene, camera)
    for px, py in [(3, 4), (16, 16), (20, 9), (31, 31)]:
        C, T = render_ray(scene, camera.pixel_ray(px, py))
        assert np.array_equal(C, img.color[py, px]) and T == img.transmittance[py, px]


def test_early_termination_changes_little(scene, camera):
    exact = render_view(scene, camera, stop_T=0.0).color
    fast = render_view(scene, camera, stop_T=1e-4).color
    assert np.max(np.abs(exact - fast)) < 1e-3


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_order_stability_under_permutation(seed):
    s = make_scene(80, seed=seed % 1000)
    cam = look([0.3, 0.5, 3.0], size=24)
    perm = np.random.default_rng(seed).permutation(len(s))
    a = render_view(s, cam)
    b = render_view(s.take(perm), cam)
    assert np.array_equal(a.color, b.color) and np.array_equal(a.transmittance, b.transmittance)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_energy_bound_and_transmittance_range(seed, bg):
    s = make_scene(60, seed=seed, opacity_shift=2.0)
    s.sh[:, 1:] = 0
    s.sh[:, 0] = np.clip(s.sh[:, 0], -0.5 / C0, 0.5 / C0)
    img = render_view(s, look([0.1, 0.2, 3.0], size=20), bg)
    assert img.color.min() >= 0 and img.color.max() <= 1 + 1e-12
    assert img.transmittance.min() >= 0 and img.transmittance.max() <= 1


def test_transmittance_monotone_along_ray(scene, camera):
    terms = splat_terms(scene, camera, 16, 16)
    T = np.cumprod([1 - s for _, _, s, _, _ in terms])
    assert np.all(np.diff(T) <= 0)
    img = render_view(scene, camera, stop_T=0.0)
    assert img.transmittance[16, 16] == pytest.approx(T[-1] if len(T) else 1.0, abs=1e-12)


# --- backends --------------------------------------------------------------

@pytest.mark.skipif(len(_kernels.available_backends()) < 2, reason="compiled extension not built")
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
@pytest.mark.parametrize("stop_T", [0.0, 1e-4])
def test_backends_agree(scene, camera, dtype, stop_T):
    gc = np.random.default_rng(0).normal(size=(camera.height, camera.width, 3))
    out = {}
    prev = _kernels.backend_name()
    try:
        for name in ("compiled", "python"):
            _kernels.use_backend(name)
            img = render_view(scene, camera, (0.1, 0.1, 0.1), stop_T=stop_T, dtype=dtype)
            g = render_backward(scene, camera, gc, background=(0.1, 0.1, 0.1), stop_T=stop_T, dtype=dtype)
            out[name] = (img, g)
    finally:
        _kernels.use_backend(prev)
    (a, ga), (b, gb) = out["compiled"], out["python"]
    tol = 1e-12 if dtype == np.float64 else 1e-5
    assert np.allclose(a.color, b.color, atol=tol) and np.allclose(a.transmittance, b.transmittance, atol=tol)
    for grp in GROUPS:
        x, y = getattr(ga, grp), getattr(gb, grp)
        assert np.allclose(x, y, atol=tol * max(1.0, np.abs(y).max()))


# --- backward --------------------------------------------------------------

def test_zero_upstream_gives_zero_grads(scene, camera):
    g = render_backward(scene, camera, np.zeros((camera.height, camera.width, 3)))
    for grp in GROUPS:
        assert not np.any(getattr(g, grp))


def _fd_check(splats, cam, seed=0, max_entries=None, bg=(0.2, 0.1, 0.3)):
    rng = np.random.default_rng(seed)
    gc = rng.normal(size=(cam.height, cam.width, 3))
    gT = rng.normal(size=(cam.height, cam.width))
    f = objective(lambda s: (lambda r: (r.color, r.transmittance))(render_view(s, cam, bg, stop_T=0.0)), gc, gT)
    g = render_backward(splats, cam, gc, gT, background=bg, stop_T=0.0)
    errs = {}
    for grp in GROUPS:
        idx, num = fd_group(f, splats, grp, max_entries=max_entries, rng=rng)
        errs[grp] = rel_error(getattr(g, grp).reshape(-1)[idx], num)
    return errs


def test_single_splat_opacity_gradient():
    s = axis_splats([2.0], [0.4], [[0.6, 0.3, 0.2]], scale=0.02)
    cam = center_camera()
    gc = np.zeros((11, 11, 3))
    gc[5, 5] = [1.0, 0.0, 0.0]
    f = objective(lambda x: (render_view(x, cam, stop_T=0.0).color, 0.0), gc, 0.0)
    g = render_backward(s, cam, gc, stop_T=0.0)
    _, num = fd_group(f, s, "opacity_logit", eps=1e-5)
    assert abs(g.opacity_logit[0] - num[0]) <= 1e-4 * abs(num[0])


def test_fifty_splat_gradients():
    s = make_scene(50, seed=5, deg=2, extent=0.5, scale=(0.05, 0.15))
    errs = _fd_check(s, look([0.3, 0.4, 2.5], size=20))
    assert max(errs.values()) <= 1e-3, errs


def test_non_finite_gradient_names_splat(scene, camera):
    gc = np.zeros((camera.height, camera.width, 3))
    gc[16, 16] = np.nan
    with pytest.raises(NonFiniteGradientError, match="splat id"):
        render_backward(scene, camera, gc)


def test_backward_deterministic(scene, camera):
    gc = np.random.default_rng(2).normal(size=(camera.height, camera.width, 3))
    a = render_backward(scene, camera, gc)
    b = render_backward(scene, camera, gc)
    for grp in GROUPS:
        assert np.array_equal(getattr(a, grp), getattr(b, grp))


def test_isotropic_splats_have_exactly_zero_rotation_gradient():
    s = make_scene(60, seed=8, extent=0.5, scale=(0.05, 0.15))
    s.log_scale[:] = s.log_scale[:, :1]
    cam = look([0.3, 0.4, 2.5], size=20)
    gc = np.random.default_rng(3).normal(size=(20, 20, 3))
    g = render_backward(s, cam, gc, stop_T=0.0)
    assert np.any(g.mu) and not np.any(g.rotation)


def test_near_isotropic_rotation_gradient():
    s = make_scene(30, seed=9, extent=0.5, scale=(0.08, 0.12))
    s.log_scale[:] = s.log_scale[:, :1] + np.array([0.0, 1e-3, -1e-3])
    cam = look([0.3, 0.4, 2.5], size=20)
    rng = np.random.default_rng(4)
    gc = rng.normal(size=(20, 20, 3))
    f = objective(lambda x: (render_view(x, cam, stop_T=0.0).color, 0.0), gc, 0.0)
    g = render_backward(s, cam, gc, stop_T=0.0)
    idx, num = fd_group(f, s, "rotation", eps=1e-6)
    assert rel_error(g.rotation.reshape(-1)[idx], num) <= 1e-3

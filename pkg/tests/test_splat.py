import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatshard.sh import C0, eval_sh, sh_basis, sh_basis_grad
from splatshard.splat import (
    CULLED, Camera, DegenerateCovarianceError, Splat, SplatSet, Splat2D, effective_opacity, eval_2d,
    gaussian_weight, normalize_quat, project, project_splat, quat_to_rotmat, rotmat_to_quat,
)

from oracles import quat_matrix, sh_color


def unit_splat(mu=(0, 0, 0), scale=1.0, q=(1, 0, 0, 0), opacity=0.0, sh=None):
    return Splat(0, mu, np.log(np.full(3, scale)), q, opacity, sh if sh is not None else np.zeros((1, 3)))


def axis_camera(W=100, H=100, f=100.0, cx=50.0, cy=50.0):
    return Camera(W, H, f, f, cx, cy)


# --- gaussian_weight --------------------------------------------------------

def test_weight_at_center_is_one():
    assert gaussian_weight(unit_splat(mu=(1, 2, 3)), (1, 2, 3)) == 1.0


def test_weight_one_sigma():
    assert gaussian_weight(unit_splat(), (1, 0, 0)) == pytest.approx(np.exp(-0.5), abs=1e-12)
    assert gaussian_weight(unit_splat(), (1, 0, 0)) == pytest.approx(0.606531, abs=1e-6)


def test_weight_truncated_beyond_three_sigma():
    assert gaussian_weight(unit_splat(), (4, 0, 0)) == 0.0


def test_weight_degenerate_covariance():
    s = Splat(0, (0, 0, 0), np.log([1.0, 1.0, 1e-7]), (1, 0, 0, 0), 0.0, np.zeros((1, 3)))
    with pytest.raises(DegenerateCovarianceError, match="degenerate covariance"):
        gaussian_weight(s, (0, 0, 0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.lists(st.floats(-1, 1), min_size=4, max_size=4),
       st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_weight_rotation_invariance(q, r, off):
    q = np.array(q) + np.array([1.5, 0, 0, 0])
    r = np.array(r) + np.array([1.5, 0, 0, 0])
    scales = np.log([0.5, 1.0, 2.0])
    base = Splat(0, (0.3, -0.2, 0.1), scales, q, 0.0, np.zeros((1, 3)))
    x = base.mu + np.array(off)
    Rr = quat_matrix(r)
    rotated = Splat(0, Rr @ base.mu, scales, rotmat_to_quat(Rr @ quat_matrix(q)), 0.0, np.zeros((1, 3)))
    assert gaussian_weight(rotated, Rr @ x) == pytest.approx(gaussian_weight(base, x), abs=1e-10)


def test_quaternion_renormalized():
    q = normalize_quat(np.array([[2.0, 0, 0, 0], [1, 1, 1, 1]]))
    assert np.allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-12)
    assert np.allclose(quat_to_rotmat(np.array([3.0, 0, 0, 0])), np.eye(3))


def test_rotmat_quat_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = normalize_quat(rng.normal(size=4))
        R = quat_to_rotmat(q)
        assert np.allclose(quat_to_rotmat(rotmat_to_quat(R)), R, atol=1e-12)


# --- eval_sh ----------------------------------------------------------------

def test_sh_deg0_zero_dc():
    assert np.allclose(eval_sh(np.zeros((1, 3)), [0, 0, 1], 0), 0.5)


def test_sh_deg0_unit_dc():
    c = eval_sh(np.ones((1, 3)), [0, 1, 0], 0)
    assert np.allclose(c, 0.5 + 0.2820948, atol=1e-7)
    assert np.allclose(c, 0.7821, atol=1e-4)


def test_sh_deg0_view_independent_exact():
    rng = np.random.default_rng(3)
    sh = rng.normal(size=(1, 3))
    dirs = rng.normal(size=(100, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    ref = eval_sh(sh, dirs[0], 0)
    for d in dirs:
        assert np.array_equal(eval_sh(sh, d, 0), ref)


def test_sh_higher_bands_zero_view_independent():
    sh = np.zeros((16, 3))
    sh[0] = [0.3, -0.2, 0.1]
    a = eval_sh(sh, [0, 0, 1], 3)
    b = eval_sh(sh, [0.6, 0.8, 0], 3)
    assert np.allclose(a, b, atol=1e-15)


def test_sh_matches_reference_all_degrees():
    rng = np.random.default_rng(4)
    for deg in range(4):
        sh = rng.normal(size=((deg + 1) ** 2, 3))
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        assert np.allclose(eval_sh(sh, d, deg), sh_color(sh, d), atol=1e-12)


def test_sh_clamped_nonnegative():
    assert np.all(eval_sh(np.full((1, 3), -10.0), [0, 0, 1], 0) == 0)


def test_sh_degree_exceeding_storage_raises():
    with pytest.raises(ValueError):
        eval_sh(np.zeros((1, 3)), [0, 0, 1], 2)


def test_sh_basis_gradient_finite_difference():
    rng = np.random.default_rng(5)
    d = rng.normal(size=(4, 3))
    g = sh_basis_grad(d, 3)
    eps = 1e-6
    for a in range(3):
        dp, dm = d.copy(), d.copy()
        dp[:, a] += eps
        dm[:, a] -= eps
        fd = (sh_basis(dp, 3) - sh_basis(dm, 3)) / (2 * eps)
        assert np.allclose(g[:, :, a], fd, atol=1e-6)


# --- project_splat ----------------------------------------------------------

def test_projection_on_axis_hits_principal_point():
    s2d = project_splat(unit_splat(mu=(0, 0, 2), scale=0.1), axis_camera())
    assert np.allclose(s2d.mean2d, [50, 50])


def test_projection_behind_camera_culled():
    assert project_splat(unit_splat(mu=(0, 0, -1), scale=0.1), axis_camera()) is CULLED


def test_projection_outside_image_culled():
    assert project_splat(unit_splat(mu=(50, 0, 2), scale=0.01), axis_camera()) is CULLED


def test_projection_isotropic_cov2d():
    s, z, f = 0.05, 2.0, 100.0
    s2d = project_splat(unit_splat(mu=(0, 0, z), scale=s), axis_camera(f=f))
    expected = (f * s / z) ** 2 + 0.3
    assert np.allclose(s2d.cov2d, np.diag([expected, expected]), rtol=1e-12, atol=1e-12)


def test_projection_depth_key_and_color():
    sh = np.zeros((4, 3))
    sh[0] = 1.0
    s2d = project_splat(unit_splat(mu=(0, 0, 3), scale=0.1, sh=sh), axis_camera())
    assert s2d.depth_key == pytest.approx(3.0)
    assert np.allclose(s2d.color, 0.5 + C0)


def test_projection_mean_matches_pinhole(scene, camera):
    proj = project(scene, camera)
    uv, _ = camera.project_points(scene.mu[proj.rows])
    assert np.allclose(proj.means2d, uv, atol=1e-9)


def test_projection_cov_matches_reference(scene, camera):
    proj = project(scene, camera)
    Rw = quat_matrix(camera.q_wc)
    for j in range(0, len(proj), 17):
        i = proj.rows[j]
        pc = Rw @ scene.mu[i] + camera.t_wc
        Rs = quat_matrix(scene.rotation[i])
        S = np.diag(np.exp(scene.log_scale[i]))
        J = np.array([[camera.fx / pc[2], 0, -camera.fx * pc[0] / pc[2] ** 2],
                      [0, camera.fy / pc[2], -camera.fy * pc[1] / pc[2] ** 2]])
        cov = J @ Rw @ Rs @ S @ S @ Rs.T @ Rw.T @ J.T + 0.3 * np.eye(2)
        assert np.allclose(proj.cov2d[j], [cov[0, 0], cov[0, 1], cov[1, 1]], rtol=1e-10)


def test_cov2d_eigenvalue_floor(scene, camera):
    proj = project(scene, camera)
    for cxx, cxy, cyy in proj.cov2d:
        assert np.linalg.eigvalsh([[cxx, cxy], [cxy, cyy]]).min() >= 0.3 - 1e-9


def test_subset_projection_bitwise_identical(scene, camera):
    full = project(scene, camera)
    sub = scene.take(np.arange(0, len(scene), 3))
    part = project(sub, camera)
    rows = np.searchsorted(full.ids, part.ids)
    assert np.array_equal(full.ids[rows], part.ids)
    for name in ("means2d", "conic", "colors", "alphas", "rel", "reach2"):
        assert np.array_equal(getattr(full, name)[rows], getattr(part, name))


# --- eval_2d ----------------------------------------------------------------

def _s2d(cov=np.eye(2), alpha=0.5):
    return Splat2D(0, np.array([10.0, 10.0]), cov, 1.0, np.zeros(3), alpha)


def test_eval2d_center():
    assert eval_2d(_s2d(), [10, 10]) == 1.0


def test_eval2d_unit_offset():
    assert eval_2d(_s2d(), [11, 10]) == pytest.approx(np.exp(-0.5), abs=1e-15)


def test_eval2d_truncated():
    assert eval_2d(_s2d(), [13.5, 10]) == 0.0


def test_effective_opacity_clamped():
    assert effective_opacity(_s2d(alpha=0.999), [10, 10]) == 0.99


# --- containers -------------------------------------------------------------

def test_splatset_round_trip(scene):
    back = SplatSet.from_splats(scene.to_splats())
    for name in SplatSet.PARAM_NAMES + ("ids",):
        assert np.array_equal(getattr(back, name), getattr(scene, name))


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(10, 10, -1, 1, 5, 5)
    with pytest.raises(ValueError):
        Camera(10, 10, 1, 1, 10, 5)


def test_ray_direction_normalized():
    from splatshard.splat import Ray

    r = Ray([0, 0, 0], [0, 3, 4])
    assert abs(np.linalg.norm(r.d) - 1) < 1e-12

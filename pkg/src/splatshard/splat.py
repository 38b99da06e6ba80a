"""Gaussian primitives, pinhole cameras and EWA projection to screen space.

A scene is held as a :class:`SplatSet` (struct of arrays); :class:`Splat` is
the single-primitive view used at API edges.  All per-splat arithmetic is
written elementwise with a fixed summation order so that projecting a subset
of a scene yields bit-identical values to projecting the whole scene.  The
distributed renderer depends on that.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sh as shmod

TRUNCATION = 3.0
NEAR_PLANE = 0.01
SIGMA_MAX = 0.99
COV2D_BLUR = 0.3
MAX_CONDITION = 1e12


class DegenerateCovarianceError(ValueError):
    pass


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    return np.log(p / (1.0 - p))


def normalize_quat(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.sqrt(np.sum(q * q, axis=-1, keepdims=True))


def quat_to_rotmat(q):
    """Rotation matrices ``(..., 3, 3)`` from (w, x, y, z) quaternions (normalized here)."""
    q = normalize_quat(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


def rotmat_to_quat(R):
    """(w, x, y, z) with w >= 0 for a single proper rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q if q[0] >= 0 else -q


def quat_backward(q, d_R):
    """Gradient w.r.t. the raw (unnormalized) quaternion given dL/dR."""
    norm = np.sqrt(np.sum(q * q, axis=-1, keepdims=True))
    qn = q / norm
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    G = d_R
    dw = 2 * (-z * G[:, 0, 1] + y * G[:, 0, 2] + z * G[:, 1, 0] - x * G[:, 1, 2] - y * G[:, 2, 0] + x * G[:, 2, 1])
    dx = 2 * (y * G[:, 0, 1] + z * G[:, 0, 2] + y * G[:, 1, 0] - 2 * x * G[:, 1, 1] - w * G[:, 1, 2]
              + z * G[:, 2, 0] + w * G[:, 2, 1] - 2 * x * G[:, 2, 2])
    dy = 2 * (-2 * y * G[:, 0, 0] + x * G[:, 0, 1] + w * G[:, 0, 2] + x * G[:, 1, 0] + z * G[:, 1, 2]
              - w * G[:, 2, 0] + z * G[:, 2, 1] - 2 * y * G[:, 2, 2])
    dz = 2 * (-2 * z * G[:, 0, 0] - w * G[:, 0, 1] + x * G[:, 0, 2] + w * G[:, 1, 0] - 2 * z * G[:, 1, 1]
              + y * G[:, 1, 2] + x * G[:, 2, 0] + y * G[:, 2, 1])
    d_qn = np.stack([dw, dx, dy, dz], axis=1)
    return (d_qn - qn * np.sum(qn * d_qn, axis=1, keepdims=True)) / norm


def _mm(A, B):
    """Batched matmul ``(n, a, k) @ (n, k, b)`` with a fixed summation order."""
    out = A[..., :, 0, None] * B[..., None, 0, :]
    for k in range(1, A.shape[-1]):
        out = out + A[..., :, k, None] * B[..., None, k, :]
    return out


def _tr(A):
    return np.swapaxes(A, -1, -2)


@dataclass
class Splat:
    id: int
    mu: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    sh: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(3)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(-1, 3)
        self.opacity_logit = float(self.opacity_logit)

    @property
    def alpha(self):
        return float(sigmoid(self.opacity_logit))

    @property
    def sh_degree(self):
        return shmod.degree_from_coeffs(self.sh.shape[0])

    def covariance(self):
        R = quat_to_rotmat(self.rotation)
        S = np.diag(np.exp(self.log_scale))
        return R @ S @ S.T @ R.T


class SplatSet:
    """Struct-of-arrays container; row order is storage order, ``ids`` are stable."""

    def __init__(self, ids, mu, log_scale, rotation, opacity_logit, sh):
        self.ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        n = self.ids.shape[0]
        self.mu = np.asarray(mu, dtype=np.float64).reshape(n, 3)
        self.log_scale = np.asarray(log_scale, dtype=np.float64).reshape(n, 3)
        self.rotation = np.asarray(rotation, dtype=np.float64).reshape(n, 4)
        self.opacity_logit = np.asarray(opacity_logit, dtype=np.float64).reshape(n)
        sh = np.asarray(sh, dtype=np.float64)
        self.sh = sh.reshape(n, -1, 3) if n else sh.reshape(0, sh.shape[1] if sh.ndim == 3 else 1, 3)
        shmod.degree_from_coeffs(self.sh.shape[1])

    PARAM_NAMES = ("mu", "log_scale", "rotation", "opacity_logit", "sh")

    def __len__(self):
        return self.ids.shape[0]

    @property
    def sh_degree(self):
        return shmod.degree_from_coeffs(self.sh.shape[1])

    @classmethod
    def empty(cls, sh_degree=0):
        n = shmod.num_coeffs(sh_degree)
        return cls(np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)),
                   np.zeros(0), np.zeros((0, n, 3)))

    @classmethod
    def from_splats(cls, splats, sh_degree=None):
        splats = list(splats)
        if not splats:
            return cls.empty(sh_degree or 0)
        return cls(
            [s.id for s in splats],
            np.stack([s.mu for s in splats]),
            np.stack([s.log_scale for s in splats]),
            np.stack([s.rotation for s in splats]),
            np.array([s.opacity_logit for s in splats]),
            np.stack([s.sh for s in splats]),
        )

    def to_splats(self):
        return [
            Splat(int(self.ids[i]), self.mu[i], self.log_scale[i], self.rotation[i],
                  self.opacity_logit[i], self.sh[i])
            for i in range(len(self))
        ]

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return SplatSet(self.ids[rows], self.mu[rows], self.log_scale[rows], self.rotation[rows],
                        self.opacity_logit[rows], self.sh[rows])

    def select_ids(self, ids):
        return self.take(self.rows_for(ids))

    def rows_for(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        order = np.argsort(self.ids, kind="stable")
        pos = np.searchsorted(self.ids, ids, sorter=order)
        pos = np.clip(pos, 0, max(len(self) - 1, 0))
        rows = order[pos] if len(self) else pos
        if len(ids) and (len(self) == 0 or np.any(self.ids[rows] != ids)):
            raise KeyError("splat ids not present in set")
        return rows

    def copy(self):
        return self.take(np.arange(len(self)))

    @staticmethod
    def concat(sets):
        sets = [s for s in sets if len(s)] or sets[:1]
        return SplatSet(
            np.concatenate([s.ids for s in sets]),
            np.concatenate([s.mu for s in sets]),
            np.concatenate([s.log_scale for s in sets]),
            np.concatenate([s.rotation for s in sets]),
            np.concatenate([s.opacity_logit for s in sets]),
            np.concatenate([s.sh for s in sets]),
        )

    def params(self):
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    def scales(self):
        return np.exp(self.log_scale)

    def alphas(self):
        return sigmoid(self.opacity_logit)

    def reach(self, multiplier=TRUNCATION):
        """Truncation distance D_i = multiplier x largest semi-axis."""
        return multiplier * np.max(np.exp(self.log_scale), axis=1)

    def covariances(self):
        R = quat_to_rotmat(self.rotation)
        RS = R * np.exp(self.log_scale)[:, None, :]
        return _mm(RS, _tr(RS))


def as_splat_set(splats):
    if isinstance(splats, SplatSet):
        return splats
    return SplatSet.from_splats(splats)


@dataclass
class Ray:
    o: np.ndarray
    d: np.ndarray
    # optional pixel context: ties the ray to a camera sample for screen-space evaluation
    camera: "Camera | None" = field(default=None, repr=False)
    pixel: tuple | None = None

    def __post_init__(self):
        self.o = np.asarray(self.o, dtype=np.float64).reshape(3)
        self.d = np.asarray(self.d, dtype=np.float64).reshape(3)
        n = np.linalg.norm(self.d)
        if abs(n - 1.0) > 1e-9:
            self.d = self.d / n

    def at(self, t):
        return self.o + t * self.d


@dataclass
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    q_wc: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t_wc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name: str = ""

    def __post_init__(self):
        self.width, self.height = int(self.width), int(self.height)
        self.q_wc = np.asarray(self.q_wc, dtype=np.float64).reshape(4)
        self.t_wc = np.asarray(self.t_wc, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        self._dirs = None

    @property
    def R(self):
        """World-to-camera rotation."""
        return quat_to_rotmat(self.q_wc)

    @property
    def center(self):
        return -self.R.T @ self.t_wc

    @classmethod
    def look_at(cls, eye, target, up, width, height, fx, fy=None, cx=None, cy=None, name=""):
        eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
        fwd = target - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-12:
            right = np.cross(fwd, [1.0, 0.0, 0.0] if abs(fwd[0]) < 0.9 else [0.0, 1.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        q = rotmat_to_quat(R)
        t = -quat_to_rotmat(q) @ eye
        return cls(width, height, fx, fy if fy is not None else fx,
                   width / 2.0 if cx is None else cx, height / 2.0 if cy is None else cy, q, t, name)

    @classmethod
    def for_ray(cls, ray, focal=1000.0):
        """1x1 virtual camera whose single pixel samples along ``ray``."""
        d = ray.d / np.linalg.norm(ray.d)
        helper = np.array([0.0, 1.0, 0.0]) if abs(d[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = np.cross(helper, d)
        right /= np.linalg.norm(right)
        down = np.cross(d, right)
        q = rotmat_to_quat(np.stack([right, down, d]))
        t = -quat_to_rotmat(q) @ ray.o
        return cls(1, 1, focal, focal, 0.5, 0.5, q, t)

    def pixel_dirs(self):
        """Unit world-space ray directions for every pixel center, ``(H, W, 3)``."""
        if self._dirs is None:
            xs = (np.arange(self.width) + 0.5 - self.cx) / self.fx
            ys = (np.arange(self.height) + 0.5 - self.cy) / self.fy
            X, Y = np.meshgrid(xs, ys)
            Rt = self.R.T
            d = np.stack([Rt[i, 0] * X + Rt[i, 1] * Y + Rt[i, 2] for i in range(3)], axis=-1)
            self._dirs = d / np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2 + d[..., 2] ** 2)[..., None]
        return self._dirs

    def pixel_ray(self, px, py):
        return Ray(self.center, self.pixel_dirs()[py, px], camera=self, pixel=(int(px), int(py)))

    def project_points(self, pts):
        pc = np.asarray(pts, dtype=np.float64) @ self.R.T + self.t_wc
        return np.stack([self.fx * pc[:, 0] / pc[:, 2] + self.cx,
                         self.fy * pc[:, 1] / pc[:, 2] + self.cy], axis=1), pc[:, 2]


@dataclass
class Splat2D:
    source_id: int
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth_key: float
    color: np.ndarray
    alpha: float


class Culled:
    """Marker returned by :func:`project_splat` for invisible splats."""

    def __repr__(self):
        return "Culled"


CULLED = Culled()


@dataclass
class Projection:
    """Screen-space data for the splats of one set that survive culling in one view."""

    rows: np.ndarray
    ids: np.ndarray
    means2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    colors: np.ndarray
    alphas: np.ndarray
    depth: np.ndarray
    rel: np.ndarray
    reach2: np.ndarray
    bbox: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return self.rows.shape[0]


def project(splats: SplatSet, camera: Camera, sh_degree=None, reach_multiplier=TRUNCATION,
            keep_cache=False):
    """EWA-project every splat of ``splats`` into ``camera``; culled splats are dropped."""
    deg = splats.sh_degree if sh_degree is None else min(sh_degree, splats.sh_degree)
    W = camera.R
    o = camera.center
    mu = splats.mu
    p = np.stack([W[i, 0] * mu[:, 0] + W[i, 1] * mu[:, 1] + W[i, 2] * mu[:, 2] + camera.t_wc[i]
                  for i in range(3)], axis=1)
    z = p[:, 2]
    front = z > NEAR_PLANE

    R = quat_to_rotmat(splats.rotation)
    scales = np.exp(splats.log_scale)
    RS = R * scales[:, None, :]
    sigma = _mm(RS, _tr(RS))
    Wb = np.broadcast_to(W, sigma.shape)
    M = _mm(_mm(Wb, sigma), _tr(Wb))

    zs = np.where(front, z, 1.0)
    J = np.zeros((len(splats), 2, 3))
    J[:, 0, 0] = camera.fx / zs
    J[:, 0, 2] = -camera.fx * p[:, 0] / (zs * zs)
    J[:, 1, 1] = camera.fy / zs
    J[:, 1, 2] = -camera.fy * p[:, 1] / (zs * zs)
    cov = _mm(_mm(J, M), _tr(J))
    cxx = cov[:, 0, 0] + COV2D_BLUR
    cxy = cov[:, 0, 1]
    cyy = cov[:, 1, 1] + COV2D_BLUR
    det = cxx * cyy - cxy * cxy
    means2d = np.stack([camera.fx * p[:, 0] / zs + camera.cx, camera.fy * p[:, 1] / zs + camera.cy], 1)

    mid = 0.5 * (cxx + cyy)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    # conservative pixel-index bounding box of the truncated footprint
    r = TRUNCATION * np.sqrt(lam) * (1.0 + 1e-6) + 1e-6
    x0 = np.ceil(means2d[:, 0] - r - 0.5)
    x1 = np.floor(means2d[:, 0] + r - 0.5) + 1
    y0 = np.ceil(means2d[:, 1] - r - 0.5)
    y1 = np.floor(means2d[:, 1] + r - 0.5) + 1
    x0 = np.clip(x0, 0, camera.width)
    x1 = np.clip(x1, 0, camera.width)
    y0 = np.clip(y0, 0, camera.height)
    y1 = np.clip(y1, 0, camera.height)
    keep = front & (x1 > x0) & (y1 > y0) & np.isfinite(x0) & np.isfinite(y0)
    rows = np.nonzero(keep)[0]

    rel = mu[rows] - o
    dist = np.sqrt(rel[:, 0] ** 2 + rel[:, 1] ** 2 + rel[:, 2] ** 2)
    view_dirs = rel / dist[:, None]
    colors, raw = shmod.eval_sh_batch(splats.sh[rows], view_dirs, deg)
    reach = reach_multiplier * np.max(scales[rows], axis=1)

    det_k = det[rows]
    conic = np.stack([cyy[rows] / det_k, -cxy[rows] / det_k, cxx[rows] / det_k], axis=1)
    proj = Projection(
        rows=rows,
        ids=splats.ids[rows],
        means2d=means2d[rows],
        cov2d=np.stack([cxx[rows], cxy[rows], cyy[rows]], axis=1),
        conic=conic,
        colors=colors,
        alphas=sigmoid(splats.opacity_logit[rows]),
        depth=z[rows],
        rel=rel,
        reach2=reach * reach,
        bbox=np.stack([x0[rows], y0[rows], x1[rows], y1[rows]], axis=1).astype(np.int32),
    )
    if keep_cache:
        proj.cache.update(p=p[rows], R=R[rows], scales=scales[rows], RS=RS[rows], M=M[rows],
                          J=J[rows], W=W, view_dirs=view_dirs, dist=dist, sh_raw=raw, deg=deg)
    return proj


def project_backward(splats: SplatSet, camera: Camera, proj: Projection, d_means2d, d_conic,
                     d_colors, d_alphas):
    """Chain screen-space gradients back to the splat parameters.

    ``d_conic`` holds dL/d(a, b, c) for the quadratic form
    ``a dx^2 + 2 b dx dy + c dy^2``.  Returns a dict of arrays sized like
    ``splats`` (rows that were culled get zeros).
    """
    c = proj.cache
    n = len(splats)
    out = {
        "mu": np.zeros((n, 3)),
        "log_scale": np.zeros((n, 3)),
        "rotation": np.zeros((n, 4)),
        "opacity_logit": np.zeros(n),
        "sh": np.zeros_like(splats.sh),
    }
    if len(proj) == 0:
        return out
    rows = proj.rows
    p, J, M, W = c["p"], c["J"], c["M"], c["W"]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    fx, fy = camera.fx, camera.fy

    a, b, cc = proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 2]
    A = np.stack([np.stack([a, b], 1), np.stack([b, cc], 1)], 1)
    dA = np.stack([np.stack([d_conic[:, 0], 0.5 * d_conic[:, 1]], 1),
                   np.stack([0.5 * d_conic[:, 1], d_conic[:, 2]], 1)], 1)
    d_cov = -_mm(_mm(A, dA), A)

    d_M = _mm(_mm(_tr(J), d_cov), J)
    d_J = 2.0 * _mm(_mm(d_cov, J), M)
    Wb = np.broadcast_to(W, d_M.shape)
    d_sigma = _mm(_mm(_tr(Wb), d_M), Wb)

    dp = np.zeros_like(p)
    iz2 = 1.0 / (z * z)
    dp[:, 0] = d_J[:, 0, 2] * (-fx * iz2) + d_means2d[:, 0] * fx / z
    dp[:, 1] = d_J[:, 1, 2] * (-fy * iz2) + d_means2d[:, 1] * fy / z
    dp[:, 2] = (d_J[:, 0, 0] * (-fx * iz2) + d_J[:, 0, 2] * (2 * fx * x * iz2 / z)
                + d_J[:, 1, 1] * (-fy * iz2) + d_J[:, 1, 2] * (2 * fy * y * iz2 / z)
                - d_means2d[:, 0] * fx * x * iz2 - d_means2d[:, 1] * fy * y * iz2)
    d_mu = dp @ W

    RS, R, s = c["RS"], c["R"], c["scales"]
    d_RS = 2.0 * _mm(d_sigma, RS)
    d_s = np.sum(d_RS * R, axis=1)
    # R stays orthogonal, so the isotropic part of S^2 carries no rotation gradient;
    # removing it keeps d_R exactly zero for round splats instead of roundoff
    s2 = s * s
    aniso = s2 - np.sort(s2, axis=1)[:, 1:2]
    d_R = 2.0 * _mm(d_sigma, R * aniso[:, None, :])
    out["log_scale"][rows] = d_s * s
    out["rotation"][rows] = quat_backward(splats.rotation[rows], d_R)

    deg = c["deg"]
    ncoef = shmod.num_coeffs(deg)
    d_raw = d_colors * (c["sh_raw"] > 0)
    basis = shmod.sh_basis(c["view_dirs"], deg)
    d_sh = np.zeros((len(rows), splats.sh.shape[1], 3))
    d_sh[:, :ncoef, :] = basis[:, :, None] * d_raw[:, None, :]
    out["sh"][rows] = d_sh
    if deg > 0:
        dbasis = shmod.sh_basis_grad(c["view_dirs"], deg)
        w = np.einsum("nkc,nc->nk", splats.sh[rows, :ncoef, :], d_raw)
        d_dir = np.einsum("nk,nkj->nj", w, dbasis)
        vd = c["view_dirs"]
        d_mu = d_mu + (d_dir - vd * np.sum(vd * d_dir, 1, keepdims=True)) / c["dist"][:, None]
    out["mu"][rows] = d_mu

    alpha = proj.alphas
    out["opacity_logit"][rows] = d_alphas * alpha * (1.0 - alpha)
    return out


def gaussian_weight(splat: Splat, x, truncation=TRUNCATION):
    """Unnormalized 3D Gaussian falloff of ``splat`` at world point ``x``."""
    sigma = splat.covariance()
    if np.linalg.cond(sigma) > MAX_CONDITION:
        raise DegenerateCovarianceError("degenerate covariance")
    delta = np.asarray(x, dtype=np.float64) - splat.mu
    m2 = float(delta @ np.linalg.solve(sigma, delta))
    if m2 > truncation * truncation:
        return 0.0
    return float(np.exp(-0.5 * m2))


def project_splat(splat: Splat, camera: Camera, sh_degree=None):
    proj = project(SplatSet.from_splats([splat]), camera, sh_degree)
    if len(proj) == 0:
        return CULLED
    cxx, cxy, cyy = proj.cov2d[0]
    return Splat2D(
        source_id=int(proj.ids[0]),
        mean2d=proj.means2d[0].copy(),
        cov2d=np.array([[cxx, cxy], [cxy, cyy]]),
        depth_key=float(proj.depth[0]),
        color=proj.colors[0].copy(),
        alpha=float(proj.alphas[0]),
    )


def eval_2d(splat2d: Splat2D, pixel, truncation=TRUNCATION):
    """Peak-1 screen-space falloff at ``pixel``; 0 past the truncation radius."""
    delta = np.asarray(pixel, dtype=np.float64) - splat2d.mean2d
    m2 = float(delta @ np.linalg.solve(splat2d.cov2d, delta))
    if m2 > truncation * truncation:
        return 0.0
    return float(np.exp(-0.5 * m2))


def effective_opacity(splat2d: Splat2D, pixel):
    return min(SIGMA_MAX, splat2d.alpha * eval_2d(splat2d, pixel))

"""Single-worker renderer and its analytic adjoint.

This is the ground truth the distributed engine is checked against.  Oracle
mode means ``stop_T=0`` and double precision.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .splat import Camera, Ray, SplatSet, as_splat_set, project, project_backward

DEFAULT_STOP_T = 1e-4


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class RenderedImage:
    color: np.ndarray
    transmittance: np.ndarray
    background: np.ndarray
    count: np.ndarray | None = None

    @property
    def shape(self):
        return self.transmittance.shape


@dataclass
class GradBuffers:
    ids: np.ndarray
    mu: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: np.ndarray
    sh: np.ndarray

    GROUPS = ("mu", "log_scale", "rotation", "opacity_logit", "sh")

    @classmethod
    def zeros_like(cls, splats: SplatSet):
        n = len(splats)
        return cls(splats.ids.copy(), np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)),
                   np.zeros(n), np.zeros_like(splats.sh))

    @classmethod
    def from_dict(cls, ids, d):
        return cls(np.asarray(ids).copy(), d["mu"], d["log_scale"], d["rotation"],
                   d["opacity_logit"], d["sh"])

    def as_dict(self):
        return {g: getattr(self, g) for g in self.GROUPS}

    def add_(self, other):
        for g in self.GROUPS:
            getattr(self, g).__iadd__(getattr(other, g))
        return self

    def check_finite(self):
        for g in self.GROUPS:
            arr = getattr(self, g).reshape(len(self.ids), -1)
            bad = ~np.all(np.isfinite(arr), axis=1)
            if bad.any():
                raise NonFiniteGradientError(
                    f"non-finite gradient in {g} for splat id {int(self.ids[np.argmax(bad)])}")


def render_view(splats, camera: Camera, background=(0.0, 0.0, 0.0), stop_T=DEFAULT_STOP_T,
                dtype=np.float64, sh_degree=None, window=None):
    """Render ``splats`` from ``camera`` with exact per-ray depth ordering."""
    splats = as_splat_set(splats)
    bg = np.asarray(background, dtype=np.float64)
    proj = project(splats, camera, sh_degree)
    color, T, count = _kernels.composite(proj, camera, None, bg, stop_T, dtype, window)
    return RenderedImage(color, T, bg, count)


def render_backward(splats, camera: Camera, grad_color, grad_T=None, background=(0.0, 0.0, 0.0),
                    stop_T=DEFAULT_STOP_T, dtype=np.float64, sh_degree=None, planes=None):
    """Gradients of ``sum(grad_color * color) + sum(grad_T * T)`` w.r.t. every parameter."""
    splats = as_splat_set(splats)
    grad_color = np.asarray(grad_color, dtype=np.float64)
    if grad_T is None:
        grad_T = np.zeros(grad_color.shape[:2])
    proj = project(splats, camera, sh_degree, keep_cache=True)
    d_m, d_k, d_c, d_a = _kernels.composite_backward(
        proj, camera, grad_color, grad_T, planes, np.asarray(background, dtype=np.float64),
        stop_T, dtype)
    grads = GradBuffers.from_dict(splats.ids, project_backward(splats, camera, proj, d_m, d_k, d_c, d_a))
    grads.check_finite()
    return grads


def render_ray(splats, ray: Ray, background=(0.0, 0.0, 0.0), stop_T=DEFAULT_STOP_T,
               dtype=np.float64, sh_degree=None, focal=1000.0):
    """Composite a single ray.

    A ray carrying pixel context reuses that camera and pixel (and therefore
    matches :func:`render_view` exactly); a bare ray is sampled through a 1x1
    virtual camera whose optical axis is the ray.
    """
    if ray.camera is not None and ray.pixel is not None:
        camera = ray.camera
        px, py = ray.pixel
    else:
        camera = Camera.for_ray(ray, focal)
        px = py = 0
    img = render_view(splats, camera, background, stop_T, dtype, sh_degree,
                      window=(px, py, px + 1, py + 1))
    return img.color[py, px].copy(), float(img.transmittance[py, px])

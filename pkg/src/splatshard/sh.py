"""Real spherical-harmonic color basis (degrees 0-3) and its derivative.

Coefficient layout is ``(..., (deg + 1) ** 2, 3)``: band-major, RGB last.
The sign convention follows the common splatting code base so checkpoints
interoperate.
"""
import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_DEGREE = 3


def num_coeffs(deg):
    return (deg + 1) ** 2


def degree_from_coeffs(n):
    deg = int(round(np.sqrt(n))) - 1
    if num_coeffs(deg) != n or deg < 0:
        raise ValueError(f"{n} is not a square SH coefficient count")
    return deg


def sh_basis(dirs, deg):
    """Basis values ``(N, (deg+1)^2)`` for unit directions ``(N, 3)``."""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    cols = [np.full_like(x, C0)]
    if deg >= 1:
        cols += [-C1 * y, C1 * z, -C1 * x]
    if deg >= 2:
        xx, yy, zz = x * x, y * y, z * z
        cols += [
            C2[0] * x * y,
            C2[1] * y * z,
            C2[2] * (2.0 * zz - xx - yy),
            C2[3] * x * z,
            C2[4] * (xx - yy),
        ]
    if deg >= 3:
        cols += [
            C3[0] * y * (3.0 * xx - yy),
            C3[1] * x * y * z,
            C3[2] * y * (4.0 * zz - xx - yy),
            C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            C3[4] * x * (4.0 * zz - xx - yy),
            C3[5] * z * (xx - yy),
            C3[6] * x * (xx - 3.0 * yy),
        ]
    return np.stack(cols, axis=1)


def sh_basis_grad(dirs, deg):
    """Partial derivatives of each basis polynomial, shape ``(N, (deg+1)^2, 3)``.

    The polynomials are differentiated as functions of free ``(x, y, z)``;
    callers project out the radial component for normalized inputs.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    zero = np.zeros_like(x)
    rows = [(zero, zero, zero)]
    if deg >= 1:
        c = np.full_like(x, C1)
        rows += [(zero, -c, zero), (zero, zero, c), (-c, zero, zero)]
    if deg >= 2:
        xx, yy, zz = x * x, y * y, z * z
        rows += [
            (C2[0] * y, C2[0] * x, zero),
            (zero, C2[1] * z, C2[1] * y),
            (-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z),
            (C2[3] * z, zero, C2[3] * x),
            (2.0 * C2[4] * x, -2.0 * C2[4] * y, zero),
        ]
    if deg >= 3:
        rows += [
            (C3[0] * 6.0 * x * y, C3[0] * (3.0 * xx - 3.0 * yy), zero),
            (C3[1] * y * z, C3[1] * x * z, C3[1] * x * y),
            (C3[2] * -2.0 * x * y, C3[2] * (4.0 * zz - xx - 3.0 * yy), C3[2] * 8.0 * y * z),
            (C3[3] * -6.0 * x * z, C3[3] * -6.0 * y * z, C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)),
            (C3[4] * (4.0 * zz - 3.0 * xx - yy), C3[4] * -2.0 * x * y, C3[4] * 8.0 * x * z),
            (C3[5] * 2.0 * x * z, C3[5] * -2.0 * y * z, C3[5] * (xx - yy)),
            (C3[6] * (3.0 * xx - 3.0 * yy), C3[6] * -6.0 * x * y, zero),
        ]
    return np.stack([np.stack(r, axis=1) for r in rows], axis=1)


def eval_sh_batch(sh, dirs, deg):
    """Colors ``(N, 3)`` and the pre-clamp values for a batch of splats."""
    n = num_coeffs(deg)
    basis = sh_basis(dirs, deg)
    # explicit fixed-order sum: results must not depend on batch size or layout
    acc = basis[:, 0, None] * sh[:, 0, :]
    for k in range(1, n):
        acc = acc + basis[:, k, None] * sh[:, k, :]
    raw = 0.5 + acc
    return np.maximum(raw, 0.0), raw


def eval_sh(sh, view_dir, deg):
    """Color of one splat seen along ``view_dir`` (unit 3-vector)."""
    sh = np.asarray(sh, dtype=np.float64)
    if num_coeffs(deg) > sh.shape[0]:
        raise ValueError(f"degree {deg} exceeds stored coefficients ({sh.shape[0]})")
    color, _ = eval_sh_batch(sh[None], np.asarray(view_dir, dtype=np.float64)[None], deg)
    return color[0]

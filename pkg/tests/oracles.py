"""Independent reference implementations used only by the tests.

Written from the formulas directly (np.linalg, per-splat loops) and sharing
no code with the package beyond the data containers.
"""
import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = [1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396]
SH_C3 = [-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
         -0.4570457994644658, 1.445305721320277, -0.5900435899266435]


def quat_matrix(q):
    w, x, y, z = np.asarray(q, float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def sh_color(coeffs, d):
    """Real SH color for one splat, coeffs (n, 3), unit direction d."""
    x, y, z = d
    n = len(coeffs)
    basis = [SH_C0]
    if n > 1:
        basis += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if n > 4:
        basis += [SH_C2[0] * x * y, SH_C2[1] * y * z, SH_C2[2] * (2 * z * z - x * x - y * y),
                  SH_C2[3] * x * z, SH_C2[4] * (x * x - y * y)]
    if n > 9:
        basis += [SH_C3[0] * y * (3 * x * x - y * y), SH_C3[1] * x * y * z,
                  SH_C3[2] * y * (4 * z * z - x * x - y * y),
                  SH_C3[3] * z * (2 * z * z - 3 * x * x - 3 * y * y),
                  SH_C3[4] * x * (4 * z * z - x * x - y * y), SH_C3[5] * z * (x * x - y * y),
                  SH_C3[6] * x * (x * x - 3 * y * y)]
    c = 0.5 + np.asarray(basis) @ np.asarray(coeffs)
    return np.maximum(c, 0.0)


def splat_terms(splats, camera, px, py, reach_mult=3.0):
    """For one pixel: list of (t, id, sigma, color) of every contributing splat."""
    Rw = quat_matrix(camera.q_wc)
    o = -Rw.T @ camera.t_wc
    dcam = np.array([(px + 0.5 - camera.cx) / camera.fx, (py + 0.5 - camera.cy) / camera.fy, 1.0])
    d = Rw.T @ dcam
    d /= np.linalg.norm(d)
    out = []
    for i in range(len(splats)):
        u = splats.mu[i]
        pc = Rw @ u + camera.t_wc
        if pc[2] <= 0.01:
            continue
        Rs = quat_matrix(splats.rotation[i])
        S = np.diag(np.exp(splats.log_scale[i]))
        cov3 = Rs @ S @ S @ Rs.T
        J = np.array([[camera.fx / pc[2], 0, -camera.fx * pc[0] / pc[2] ** 2],
                      [0, camera.fy / pc[2], -camera.fy * pc[1] / pc[2] ** 2]])
        cov2 = J @ Rw @ cov3 @ Rw.T @ J.T + 0.3 * np.eye(2)
        mean = np.array([camera.fx * pc[0] / pc[2] + camera.cx, camera.fy * pc[1] / pc[2] + camera.cy])
        delta = np.array([px + 0.5, py + 0.5]) - mean
        m2 = delta @ np.linalg.solve(cov2, delta)
        if m2 > 9.0:
            continue
        t = d @ (u - o)
        if t <= 0:
            continue
        reach = reach_mult * np.exp(splats.log_scale[i]).max()
        if np.sum((u - o - t * d) ** 2) > reach ** 2:
            continue
        alpha = 1.0 / (1.0 + np.exp(-splats.opacity_logit[i]))
        sigma = min(0.99, alpha * np.exp(-0.5 * m2))
        view = (u - o) / np.linalg.norm(u - o)
        out.append((t, int(splats.ids[i]), sigma, sh_color(splats.sh[i], view), o + t * d))
    out.sort(key=lambda e: (e[0], e[1]))
    return out


def composite_pixel(terms, background=(0, 0, 0)):
    C = np.zeros(3)
    T = 1.0
    for _, _, s, c, _ in terms:
        C += c * s * T
        T *= 1 - s
    return C + T * np.asarray(background, float), T


def merge_pixel(parts, order, background=(0, 0, 0)):
    """Front-to-back merge of per-subset (C, T) in the given order."""
    C = np.zeros(3)
    P = 1.0
    for k in order:
        C += parts[k][0] * P
        P *= parts[k][1]
    return C + P * np.asarray(background, float), P

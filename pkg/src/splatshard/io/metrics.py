"""PSNR and SSIM on [0, 1] images; SSIM also provides its analytic gradient."""
import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _check(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"resolution mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """10 log10(1 / MSE); ``inf`` for identical images."""
    a, b = _check(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _blur(x, w):
    # separable, zero padded; the window is symmetric so this is its own adjoint
    return correlate1d(correlate1d(x, w, axis=0, mode="constant"), w, axis=1, mode="constant")


def ssim(a, b, return_grad=False):
    """Mean SSIM over pixels and channels; with ``return_grad`` also d ssim / d a."""
    a, b = _check(a, b)
    w = gaussian_window()
    mu_a, mu_b = _blur(a, w), _blur(b, w)
    e_aa, e_bb, e_ab = _blur(a * a, w), _blur(b * b, w), _blur(a * b, w)
    var_a = e_aa - mu_a ** 2
    var_b = e_bb - mu_b ** 2
    cov = e_ab - mu_a * mu_b
    A1 = 2 * mu_a * mu_b + SSIM_C1
    A2 = 2 * cov + SSIM_C2
    B1 = mu_a ** 2 + mu_b ** 2 + SSIM_C1
    B2 = var_a + var_b + SSIM_C2
    S = (A1 * A2) / (B1 * B2)
    value = float(S.mean())
    if not return_grad:
        return value
    n = S.size
    d_mu = S * (2 * mu_b / A1 - 2 * mu_a / B1 - 2 * mu_b / A2 + 2 * mu_a / B2) / n
    d_eaa = -S / B2 / n
    d_eab = 2 * S / A2 / n
    grad = _blur(d_mu, w) + 2 * a * _blur(d_eaa, w) + b * _blur(d_eab, w)
    return value, grad


def metrics(render, target):
    return {"psnr": psnr(render, target), "ssim": ssim(render, target)}

"""Image quality metrics: PSNR and windowed SSIM.

SSIM uses an 11x11 Gaussian window (sigma 1.5, truncated at 3.5 sigma),
C1=(0.01 dr)^2, C2=(0.03 dr)^2, population covariance, and reports the mean
over the interior region not touched by the window, matching the scikit-image
convention.  The per-pixel map is exposed for the training loss and error
backtracking, and `ssim_backward` provides the analytic gradient of the
interior mean w.r.t. the first image.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d, gaussian_filter

from .errors import ShapeError, TooSmallError

SIGMA = 1.5
TRUNCATE = 3.5
RADIUS = int(TRUNCATE * SIGMA + 0.5)  # 5 -> 11x11 window
PSNR_CAP = 100.0


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """10 log10(dr^2 / MSE), capped at 100 dB for (near-)identical images."""
    if a.shape != b.shape:
        raise ShapeError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(data_range * data_range / mse), PSNR_CAP)


def _kernel1d() -> np.ndarray:
    x = np.arange(-RADIUS, RADIUS + 1, dtype=np.float64)
    k = np.exp(-0.5 * x * x / (SIGMA * SIGMA))
    return k / k.sum()


_K1 = _kernel1d()


def _blur(im: np.ndarray) -> np.ndarray:
    return gaussian_filter(im, SIGMA, truncate=TRUNCATE, mode="reflect")


def _blur_adjoint(g: np.ndarray) -> np.ndarray:
    """Adjoint of _blur: zero-pad, correlate, fold the symmetric pads back."""
    r = RADIUS
    h, w = g.shape
    gp = np.pad(g, r)
    gp = correlate1d(gp, _K1, axis=0, mode="constant")
    gp = correlate1d(gp, _K1, axis=1, mode="constant")
    gp[r:2 * r, :] += gp[r - 1::-1, :]
    gp[h:h + r, :] += gp[:h + r - 1:-1, :]
    core = gp[r:r + h, :]
    core[:, r:2 * r] += core[:, r - 1::-1]
    core[:, w:w + r] += core[:, :w + r - 1:-1]
    return core[:, r:r + w]


def _check_2d_pair(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < 2 * RADIUS + 1:
        raise TooSmallError(f"image min dim {min(a.shape[:2])} < window {2 * RADIUS + 1}")


def _ssim_channel(x, y, data_range):
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    ux, uy = _blur(x), _blur(y)
    vx = _blur(x * x) - ux * ux
    vy = _blur(y * y) - uy * uy
    vxy = _blur(x * y) - ux * uy
    a1 = 2 * ux * uy + c1
    a2 = 2 * vxy + c2
    b1 = ux * ux + uy * uy + c1
    b2 = vx + vy + c2
    return (a1 * a2) / (b1 * b2)


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0):
    """Mean SSIM over the interior plus the full per-pixel map.

    Color images are handled per channel and averaged.  Returns
    (mean, map) where map has the spatial shape of the inputs.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    _check_2d_pair(a, b)
    if a.ndim == 2:
        smap = _ssim_channel(a, b, data_range)
    elif a.ndim == 3:
        smap = np.mean(
            [_ssim_channel(a[..., c], b[..., c], data_range) for c in range(a.shape[2])],
            axis=0,
        )
    else:
        raise ShapeError(f"expected 2D or 3D image, got shape {a.shape}")
    r = RADIUS
    return float(smap[r:-r, r:-r].mean()), smap


def ssim_backward(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> np.ndarray:
    """d mean-interior-SSIM / d a, same shape as a.

    Channels contribute 1/C of the per-channel gradient, matching the
    channel-averaged map in :func:`ssim`.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    _check_2d_pair(a, b)
    if a.ndim == 2:
        return _ssim_channel_backward(a, b, data_range)
    n_ch = a.shape[2]
    out = np.empty_like(a)
    for c in range(n_ch):
        out[..., c] = _ssim_channel_backward(a[..., c], b[..., c], data_range) / n_ch
    return out


def _ssim_channel_backward(x, y, data_range):
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    ux, uy = _blur(x), _blur(y)
    vx = _blur(x * x) - ux * ux
    vy = _blur(y * y) - uy * uy
    vxy = _blur(x * y) - ux * uy
    a1 = 2 * ux * uy + c1
    a2 = 2 * vxy + c2
    b1 = ux * ux + uy * uy + c1
    b2 = vx + vy + c2
    s = (a1 * a2) / (b1 * b2)

    r = RADIUS
    h, w = x.shape
    n = (h - 2 * r) * (w - 2 * r)
    mask = np.zeros_like(x)
    mask[r:-r, r:-r] = 1.0 / n

    inv = 1.0 / (b1 * b2)
    # partials of the per-pixel SSIM w.r.t. the blurred fields
    f_mu = (2 * uy * a2 - 2 * uy * a1) * inv - (s / b1) * 2 * ux + (s / b2) * 2 * ux
    f_xx = -s / b2                      # via blur(x^2) in vx
    f_xy = 2 * a1 * inv                 # via blur(x*y) in vxy
    return (
        _blur_adjoint(f_mu * mask)
        + 2 * x * _blur_adjoint(f_xx * mask)
        + y * _blur_adjoint(f_xy * mask)
    )

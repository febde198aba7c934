"""Real spherical harmonics color evaluation, degrees 0..3.

Colors are basis . coeffs + 0.5, clamped to [0, 1].  The basis follows the
standard real-SH convention used by splatting renderers; sign choices only
matter for consistency between eval and its derivatives, which the tests
check by finite differences.
"""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis values, shape (N, (degree+1)^2), for unit directions (N, 3)."""
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    n = dirs.shape[0]
    out = np.empty((n, (degree + 1) ** 2))
    out[:, 0] = C0
    if degree >= 1:
        out[:, 1] = -C1 * y
        out[:, 2] = C1 * z
        out[:, 3] = -C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 4] = C2[0] * x * y
        out[:, 5] = C2[1] * y * z
        out[:, 6] = C2[2] * (2 * zz - xx - yy)
        out[:, 7] = C2[3] * x * z
        out[:, 8] = C2[4] * (xx - yy)
    if degree >= 3:
        out[:, 9] = C3[0] * y * (3 * xx - yy)
        out[:, 10] = C3[1] * x * y * z
        out[:, 11] = C3[2] * y * (4 * zz - xx - yy)
        out[:, 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        out[:, 13] = C3[4] * x * (4 * zz - xx - yy)
        out[:, 14] = C3[5] * z * (xx - yy)
        out[:, 15] = C3[6] * x * (xx - 3 * yy)
    return out


def sh_basis_ddir(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d basis / d direction, shape (N, (degree+1)^2, 3)."""
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    n = dirs.shape[0]
    k = (degree + 1) ** 2
    d = np.zeros((n, k, 3))
    if degree >= 1:
        d[:, 1, 1] = -C1
        d[:, 2, 2] = C1
        d[:, 3, 0] = -C1
    if degree >= 2:
        d[:, 4, 0] = C2[0] * y
        d[:, 4, 1] = C2[0] * x
        d[:, 5, 1] = C2[1] * z
        d[:, 5, 2] = C2[1] * y
        d[:, 6, 0] = C2[2] * (-2 * x)
        d[:, 6, 1] = C2[2] * (-2 * y)
        d[:, 6, 2] = C2[2] * (4 * z)
        d[:, 7, 0] = C2[3] * z
        d[:, 7, 2] = C2[3] * x
        d[:, 8, 0] = C2[4] * (2 * x)
        d[:, 8, 1] = C2[4] * (-2 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        d[:, 9, 0] = C3[0] * (6 * x * y)
        d[:, 9, 1] = C3[0] * (3 * xx - 3 * yy)
        d[:, 10, 0] = C3[1] * y * z
        d[:, 10, 1] = C3[1] * x * z
        d[:, 10, 2] = C3[1] * x * y
        d[:, 11, 0] = C3[2] * (-2 * x * y)
        d[:, 11, 1] = C3[2] * (4 * zz - xx - 3 * yy)
        d[:, 11, 2] = C3[2] * (8 * y * z)
        d[:, 12, 0] = C3[3] * (-6 * x * z)
        d[:, 12, 1] = C3[3] * (-6 * y * z)
        d[:, 12, 2] = C3[3] * (6 * zz - 3 * xx - 3 * yy)
        d[:, 13, 0] = C3[4] * (4 * zz - 3 * xx - yy)
        d[:, 13, 1] = C3[4] * (-2 * x * y)
        d[:, 13, 2] = C3[4] * (8 * x * z)
        d[:, 14, 0] = C3[5] * (2 * x * z)
        d[:, 14, 1] = C3[5] * (-2 * y * z)
        d[:, 14, 2] = C3[5] * (xx - yy)
        d[:, 15, 0] = C3[6] * (3 * xx - 3 * yy)
        d[:, 15, 1] = C3[6] * (-6 * x * y)
    return d


def eval_sh(coeffs: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    """RGB for one Gaussian: coeffs ((D+1)^2, 3), view_dir unit (3,)."""
    rgb, _ = eval_sh_batch(coeffs[None], view_dir[None])
    return rgb[0]


def eval_sh_batch(coeffs: np.ndarray, dirs: np.ndarray):
    """Vectorized SH color: coeffs (N, K, 3), dirs (N, 3) unit.

    Returns (colors (N, 3) clamped to [0, 1], active mask (N, 3) where the
    clamp is inactive and gradients flow).
    """
    k = coeffs.shape[1]
    degree = int(np.sqrt(k)) - 1
    basis = sh_basis(dirs, degree)
    raw = np.einsum("nk,nkc->nc", basis, coeffs) + 0.5
    active = (raw > 0.0) & (raw < 1.0)
    return np.clip(raw, 0.0, 1.0), active


def eval_sh_backward(coeffs, dirs, active, d_color):
    """Gradients of the clamped SH color.

    Returns (d_coeffs (N, K, 3), d_dirs (N, 3)); `active` masks entries
    where the [0,1] clamp saturated.
    """
    k = coeffs.shape[1]
    degree = int(np.sqrt(k)) - 1
    g = d_color * active
    basis = sh_basis(dirs, degree)
    d_coeffs = basis[:, :, None] * g[:, None, :]
    dbasis = sh_basis_ddir(dirs, degree)          # (N, K, 3)
    # d raw_c / d dir = sum_k coeffs[k, c] * dbasis[k]
    d_dirs = np.einsum("nkc,nkd,nc->nd", coeffs, dbasis, g)
    return d_coeffs, d_dirs

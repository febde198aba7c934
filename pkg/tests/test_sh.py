import numpy as np

from splat4d.sh import C0, C1, eval_sh, eval_sh_backward, eval_sh_batch, sh_basis
from conftest import rel_err


def test_degree0_constant_color(rng):
    coeffs = rng.normal(0, 0.3, (1, 3))
    for _ in range(10):
        d = rng.normal(0, 1, 3)
        d /= np.linalg.norm(d)
        c = eval_sh(coeffs, d)
        assert np.allclose(c, np.clip(C0 * coeffs[0] + 0.5, 0, 1))


def test_degree1_z_band_asymmetry():
    # only the z-linear band set: colors at +z and -z differ by twice the
    # band amplitude before the clamp (basis value C1 * z)
    amp = 0.2
    coeffs = np.zeros((4, 3))
    coeffs[2, :] = amp
    up = eval_sh(coeffs, np.array([0.0, 0.0, 1.0]))
    down = eval_sh(coeffs, np.array([0.0, 0.0, -1.0]))
    assert np.allclose(up - down, 2 * C1 * amp)


def test_odd_bands_mirror(rng):
    # odd-degree-only coefficients: opposite directions mirror around DC
    coeffs = np.zeros((4, 3))
    coeffs[1:4, :] = rng.normal(0, 0.1, (3, 3))
    d = rng.normal(0, 1, 3)
    d /= np.linalg.norm(d)
    a = eval_sh(coeffs, d)
    b = eval_sh(coeffs, -d)
    assert np.allclose(a - 0.5, -(b - 0.5), atol=1e-12)


def test_clamp_bounds(rng):
    coeffs = rng.normal(0, 3.0, (9, 3))  # big coefficients force clamping
    for _ in range(20):
        d = rng.normal(0, 1, 3)
        d /= np.linalg.norm(d)
        c = eval_sh(coeffs, d)
        assert np.all(c >= 0) and np.all(c <= 1)


def test_basis_derivative_vs_fd(rng):
    h = 1e-6
    for degree in (1, 2, 3):
        k = (degree + 1) ** 2
        for _ in range(20):
            coeffs = rng.normal(0, 0.1, (1, k, 3))
            d = rng.normal(0, 1, 3)
            d /= np.linalg.norm(d)
            w = rng.normal(0, 1, (1, 3))
            colors, active = eval_sh_batch(coeffs, d[None])
            assert np.all(active)  # small coeffs keep the clamp inactive
            d_coeffs, d_dirs = eval_sh_backward(coeffs, d[None], active, w)
            # coefficient gradient: contraction of basis with upstream
            basis = sh_basis(d[None], degree)
            assert np.allclose(d_coeffs, basis[0][None, :, None] * w[:, None, :])
            # direction gradient by FD on the *unnormalized* basis chain
            for i in range(3):
                dp = d.copy(); dp[i] += h
                dm = d.copy(); dm[i] -= h
                fp = float(np.sum((np.einsum("nk,nkc->nc", sh_basis(dp[None], degree), coeffs) + 0.5) * w))
                fm = float(np.sum((np.einsum("nk,nkc->nc", sh_basis(dm[None], degree), coeffs) + 0.5) * w))
                assert rel_err((fp - fm) / (2 * h), d_dirs[0, i], floor=1e-7) < 1e-5

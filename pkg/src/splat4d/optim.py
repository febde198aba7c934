"""Rectified adaptive-moment optimizer.

Implements the variance-rectified update: exponential moments m and v as in
Adam, bias-corrected first moment, and a rectification term r_t applied
whenever the approximated SMA length rho_t exceeds 4; below that the step
falls back to plain bias-corrected momentum.  Moment buffers are keyed per
parameter array and can be remapped when Gaussians are added or removed so
they always parallel the live parameter set.
"""

from __future__ import annotations

import math

import numpy as np


class RAdam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.rho_inf = 2.0 / (1.0 - beta2) - 1.0

    def ensure(self, key: str, param: np.ndarray):
        if key not in self.m or self.m[key].shape != param.shape:
            self.m[key] = np.zeros_like(param)
            self.v[key] = np.zeros_like(param)

    def begin_step(self):
        """Advance the shared step counter; call once per training iteration."""
        self.t += 1

    def update(self, key: str, param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        """One rectified update of `param` in place; returns the parameter."""
        self.ensure(key, param)
        b1, b2, t = self.beta1, self.beta2, self.t
        m = self.m[key]
        v = self.v[key]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / (1.0 - b1 ** t)
        rho_t = self.rho_inf - 2.0 * t * b2 ** t / (1.0 - b2 ** t)
        if rho_t > 4.0:
            r_t = math.sqrt(
                ((rho_t - 4.0) * (rho_t - 2.0) * self.rho_inf)
                / ((self.rho_inf - 4.0) * (self.rho_inf - 2.0) * rho_t)
            )
            v_hat = np.sqrt(v / (1.0 - b2 ** t))
            param -= lr * r_t * m_hat / (v_hat + self.eps)
        else:
            param -= lr * m_hat
        return param

    # ------------------------------------------------------------------
    # structural bookkeeping
    # ------------------------------------------------------------------

    def remap_rows(self, key: str, keep_idx: np.ndarray, n_new: int):
        """Keep the given rows, then append zero-initialized rows."""
        if key not in self.m:
            return
        for buf in (self.m, self.v):
            kept = buf[key][keep_idx]
            if n_new:
                pad = np.zeros((n_new,) + kept.shape[1:], dtype=kept.dtype)
                kept = np.concatenate([kept, pad], axis=0)
            buf[key] = kept

    def append_rows(self, key: str, rows_m: np.ndarray, rows_v: np.ndarray):
        """Append carried-over moment rows (used when rows migrate between
        populations with their moments)."""
        if key not in self.m:
            return
        self.m[key] = np.concatenate([self.m[key], rows_m], axis=0)
        self.v[key] = np.concatenate([self.v[key], rows_v], axis=0)

    def expand_columns(self, key: str, n_new: int):
        """Grow axis 1 (keyframe axis) with zero-initialized columns."""
        if key not in self.m or n_new == 0:
            return
        for buf in (self.m, self.v):
            arr = buf[key]
            pad = np.zeros((arr.shape[0], n_new) + arr.shape[2:], dtype=arr.dtype)
            buf[key] = np.concatenate([arr, pad], axis=1)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k, v in self.m.items():
            out[f"m/{k}"] = v
        for k, v in self.v.items():
            out[f"v/{k}"] = v
        return out

"""Minimal real-valued layer substrate: same-padding convolution, ReLU,
linear combinations, MSE loss, reverse-mode gradients and Adam.

Tensors are plain float64 numpy arrays in (batch, height, width, channels)
layout; single samples may be passed as 3-D arrays. Each layer instance caches
its last forward pass, so within one model a layer is applied exactly once
per forward.
"""

from __future__ import annotations

import math

import numpy as np


class Parameter:
    """A trainable array with a gradient slot and Adam moment state."""

    def __init__(self, value):
        self.value = np.array(value, dtype=float)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.step = 0

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0.0


def zero_grads(params):
    for p in params:
        p.zero_grad()


def adam_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place."""
    for p in params:
        p.step += 1
        p.m = beta1 * p.m + (1 - beta1) * p.grad
        p.v = beta2 * p.v + (1 - beta2) * p.grad ** 2
        m_hat = p.m / (1 - beta1 ** p.step)
        v_hat = p.v / (1 - beta2 ** p.step)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected 3-D or 4-D tensor, got shape {x.shape}")


def _pad_same(x, kh, kw):
    ph, pw = kh // 2, kw // 2
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))


def _corr_same(x, kernel):
    """Same-padding cross-correlation as a sum of shifted channel matmuls.

    kernel: (kh, kw, c_in, c_out). One strided matmul per tap beats building
    the full im2col patch matrix at the small channel counts used here, and
    the per-output-element summation order is fixed (tap-major), so results
    do not depend on any worker partitioning.
    """
    kh, kw = kernel.shape[:2]
    b, h, w, _ = x.shape
    xp = _pad_same(x, kh, kw)
    y = np.zeros((b, h, w, kernel.shape[3]))
    for i in range(kh):
        for j in range(kw):
            y += xp[:, i:i + h, j:j + w, :] @ kernel[i, j]
    return y


class ConvLayer:
    """Same-padding stride-1 cross-correlation with bias; odd kernel dims."""

    def __init__(self, kh: int, kw: int, c_in: int, c_out: int, rng=None):
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("kernel dims must be odd for symmetric same-padding")
        if rng is None:
            kernels = np.zeros((kh, kw, c_in, c_out))
        else:
            bound = math.sqrt(6.0 / (kh * kw * c_in + kh * kw * c_out))
            kernels = rng.uniform(-bound, bound, size=(kh, kw, c_in, c_out))
        self.kernels = Parameter(kernels)
        self.bias = Parameter(np.zeros(c_out))
        self.kh, self.kw, self.c_in, self.c_out = kh, kw, c_in, c_out
        self._xp = None
        self._shape = None

    def params(self):
        return [self.kernels, self.bias]

    def forward(self, x):
        x, squeeze = _as_batch(x)
        if x.shape[-1] != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {x.shape[-1]}")
        y = _corr_same(x, self.kernels.value) + self.bias.value
        self._xp, self._shape = _pad_same(x, self.kh, self.kw), x.shape
        return y[0] if squeeze else y

    def backward(self, grad):
        if self._xp is None:
            raise RuntimeError("backward called before forward")
        grad, squeeze = _as_batch(grad)
        b, h, w, _ = self._shape
        for i in range(self.kh):
            for j in range(self.kw):
                self.kernels.grad[i, j] += np.einsum(
                    "bhwc,bhwo->co", self._xp[:, i:i + h, j:j + w, :], grad,
                    optimize=True)
        self.bias.grad += grad.sum(axis=(0, 1, 2))
        # input gradient: correlate upstream with the spatially flipped kernel,
        # in/out channels swapped
        kf = self.kernels.value[::-1, ::-1].transpose(0, 1, 3, 2)
        dx = _corr_same(grad, kf)
        return dx[0] if squeeze else dx


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(grad, x):
    """Subgradient 0 at exactly 0."""
    return grad * (x > 0)


def lincomb(coeffs, tensors):
    """sum(c * t); backward routes the upstream gradient as c * grad per term."""
    out = coeffs[0] * tensors[0]
    for c, t in zip(coeffs[1:], tensors[1:]):
        out = out + c * t
    return out


def lincomb_backward(coeffs, grad):
    return [c * grad for c in coeffs]


def mse_loss(outputs, targets, m: int, l: int, k: int, batch: int):
    """Mean squared error with normalizer batch*M*L*K (real/imag planes not
    counted in the denominator); returns (loss, gradient wrt outputs).
    """
    outputs = np.asarray(outputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if outputs.shape != targets.shape:
        raise ValueError(f"shape mismatch {outputs.shape} vs {targets.shape}")
    denom = batch * m * l * k
    diff = outputs - targets
    loss = float(np.sum(diff * diff)) / denom
    return loss, 2.0 * diff / denom


def grad_check(op, x, eps: float = 1e-5, probe_seed: int = 0,
               probe=None) -> float:
    """Worst relative error between analytic and central-difference gradients.

    `op` exposes forward(x), backward(grad) and params(); the scalar objective
    is a fixed linear functional of the output — random by default, or the
    given `probe` array (e.g. a positive one to avoid near-cancelling input
    gradients in deep stacks).
    """
    x = np.array(x, dtype=float)
    y = op.forward(x)
    if probe is None:
        probe = np.random.default_rng(probe_seed).standard_normal(y.shape)
    elif probe.shape != y.shape:
        raise ValueError(f"probe shape {probe.shape} != output {y.shape}")

    zero_grads(op.params())
    dx = op.backward(probe)

    def objective(xv):
        return float(np.sum(op.forward(xv) * probe))

    worst = 0.0

    def compare(analytic, numeric):
        nonlocal worst
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)

    flat_x = x.reshape(-1)
    dx_flat = np.asarray(dx).reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        hi = objective(x)
        flat_x[i] = orig - eps
        lo = objective(x)
        flat_x[i] = orig
        compare(dx_flat[i], (hi - lo) / (2 * eps))

    for p in op.params():
        val = p.value.reshape(-1)
        an = p.grad.reshape(-1)
        for i in range(val.size):
            orig = val[i]
            val[i] = orig + eps
            hi = objective(x)
            val[i] = orig - eps
            lo = objective(x)
            val[i] = orig
            compare(an[i], (hi - lo) / (2 * eps))
    return worst

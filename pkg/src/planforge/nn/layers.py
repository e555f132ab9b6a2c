"""Minimal differentiable layers in numpy with hand-written backward passes.

Tensors are plain ndarrays, activations batch-first [N, C, H, W].  Every layer
caches what its backward pass needs; backward returns the input gradient and
accumulates parameter gradients into ``layer.grads``.  float32 is the training
default; pass dtype=np.float64 for gradient-check precision.
"""

from __future__ import annotations

import numpy as np

from .rng import stream


class ShapeError(ValueError):
    pass


class Layer:
    """Base: parameter/grad dicts plus train/eval mode."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, gy):
        raise NotImplementedError

    def zero_grad(self):
        for k in self.grads:
            self.grads[k][...] = 0.0

    def named_params(self, prefix=""):
        for k, v in self.params.items():
            yield (f"{prefix}{k}", v)

    def named_grads(self, prefix=""):
        for k, v in self.grads.items():
            yield (f"{prefix}{k}", v)

    def state_arrays(self):
        """Arrays persisted in checkpoints (params plus any running stats)."""
        return dict(self.params)

    def __call__(self, x, train=False):
        return self.forward(x, train=train)


def _kaiming(rng, shape, fan_in, dtype):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        i_end = i + stride * oh
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i_end:stride, j:j + stride * ow:stride]
    return cols.reshape(n, c * kh * kw, oh * ow), oh, ow


def _col2im(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        i_end = i + stride * oh
        for j in range(kw):
            xp[:, :, i:i_end:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    return xp[:, :, pad:pad + h, pad:pad + w]


class Conv2d(Layer):
    def __init__(self, c_in, c_out, kernel=3, stride=1, pad=1, bias=True,
                 rng=None, dtype=np.float32):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.pad = kernel, stride, pad
        rng = rng or stream(0, "init/conv")
        fan_in = c_in * kernel * kernel
        self.params["w"] = _kaiming(rng, (c_out, c_in, kernel, kernel), fan_in, dtype)
        if bias:
            self.params["b"] = _kaiming(rng, (c_out,), fan_in, dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._cache = None

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"conv2d expected [N,{self.c_in},H,W], got {x.shape}")
        cols, oh, ow = _im2col(x, self.kernel, self.kernel, self.stride, self.pad)
        w2 = self.params["w"].reshape(self.c_out, -1)
        y = np.matmul(w2, cols)
        if "b" in self.params:
            y += self.params["b"][:, None]
        self._cache = (cols, x.shape)
        return y.reshape(x.shape[0], self.c_out, oh, ow)

    def backward(self, gy):
        cols, x_shape = self._cache
        n = gy.shape[0]
        gy2 = gy.reshape(n, self.c_out, -1)
        # transposed view feeds BLAS directly (GEMM 'T' operand, no copy)
        self.grads["w"] += np.matmul(gy2, cols.transpose(0, 2, 1)).sum(axis=0) \
            .reshape(self.params["w"].shape)
        if "b" in self.params:
            self.grads["b"] += gy2.sum(axis=(0, 2))
        w2 = self.params["w"].reshape(self.c_out, -1)
        gcols = np.matmul(w2.T, gy2)
        return _col2im(gcols, x_shape, self.kernel, self.kernel, self.stride, self.pad)


def bilinear_kernel(size: int, dtype=np.float32) -> np.ndarray:
    """Separable bilinear upsampling stencil (the FCN deconv initializer)."""
    factor = (size + 1) // 2
    center = factor - 1.0 if size % 2 == 1 else factor - 0.5
    og = np.arange(size, dtype=np.float64)
    filt = (1 - np.abs(og - center) / factor)
    return (filt[:, None] * filt[None, :]).astype(dtype)


class ConvTranspose2d(Layer):
    """Transposed convolution; the 4x4/stride-2/pad-1 configuration doubles H and W."""

    def __init__(self, c_in, c_out, kernel=4, stride=2, pad=1, bias=True,
                 rng=None, dtype=np.float32, init="kaiming"):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.pad = kernel, stride, pad
        rng = rng or stream(0, "init/convT")
        fan_in = c_in * kernel * kernel
        self.params["w"] = _kaiming(rng, (c_in, c_out, kernel, kernel), fan_in, dtype)
        if init == "bilinear":
            # bilinear pass-through (channels cycled) plus noise to break symmetry
            self.params["w"] *= 0.1
            stencil = bilinear_kernel(kernel, dtype)
            for j in range(c_out):
                self.params["w"][j % c_in, j] += stencil
        if bias:
            self.params["b"] = _kaiming(rng, (c_out,), fan_in, dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._cache = None

    def out_size(self, h):
        return (h - 1) * self.stride - 2 * self.pad + self.kernel

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"conv_transpose2d expected [N,{self.c_in},H,W], got {x.shape}")
        n, _, h, w = x.shape
        oh, ow = self.out_size(h), self.out_size(w)
        w2 = self.params["w"].reshape(self.c_in, -1)  # [C_in, C_out*k*k]
        cols = np.matmul(w2.T, x.reshape(n, self.c_in, h * w))
        y = _col2im(cols, (n, self.c_out, oh, ow), self.kernel, self.kernel,
                    self.stride, self.pad)
        if "b" in self.params:
            y += self.params["b"][None, :, None, None]
        self._cache = (x, (n, self.c_out, oh, ow))
        return y

    def backward(self, gy):
        x, _ = self._cache
        n, _, h, w = x.shape
        gcols, _, _ = _im2col(gy, self.kernel, self.kernel, self.stride, self.pad)
        w2 = self.params["w"].reshape(self.c_in, -1)
        x2 = x.reshape(n, self.c_in, h * w)
        self.grads["w"] += np.matmul(x2, gcols.transpose(0, 2, 1)).sum(axis=0) \
            .reshape(self.params["w"].shape)
        if "b" in self.params:
            self.grads["b"] += gy.sum(axis=(0, 2, 3))
        return np.matmul(w2, gcols).reshape(x.shape)


class BatchNorm2d(Layer):
    """Per-channel normalization with running statistics.

    Single-sample train batches fall back to the running statistics (and leave
    them untouched); the variance floor keeps constant channels finite.
    """

    EPS = 1e-5

    def __init__(self, channels, momentum=0.1, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def state_arrays(self):
        d = dict(self.params)
        d["running_mean"] = self.running_mean
        d["running_var"] = self.running_var
        return d

    def forward(self, x, train=False):
        if x.shape[1] != self.channels:
            raise ShapeError("batchnorm channel mismatch")
        use_batch = train and x.shape[0] >= 2
        if use_batch:
            mean = x.mean(axis=(0, 2, 3))
            xm = x - mean[None, :, None, None]
            var = np.mean(xm * xm, axis=(0, 2, 3))
            self.running_mean = ((1 - self.momentum) * self.running_mean
                                 + self.momentum * mean).astype(self.running_mean.dtype)
            self.running_var = ((1 - self.momentum) * self.running_var
                                + self.momentum * var).astype(self.running_var.dtype)
        else:
            mean, var = self.running_mean, self.running_var
            xm = x - mean[None, :, None, None]
        inv_std = (1.0 / np.sqrt(var + self.EPS)).astype(x.dtype)
        xhat = xm
        xhat *= inv_std[None, :, None, None]
        y = self.params["gamma"][None, :, None, None] * xhat + self.params["beta"][None, :, None, None]
        self._cache = (xhat, inv_std, use_batch)
        return y

    def backward(self, gy):
        xhat, inv_std, use_batch = self._cache
        self.grads["gamma"] += (gy * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += gy.sum(axis=(0, 2, 3))
        g = self.params["gamma"][None, :, None, None]
        if not use_batch:
            return gy * g * inv_std[None, :, None, None]
        m = gy.shape[0] * gy.shape[2] * gy.shape[3]
        gxhat = gy * g
        gx = (gxhat - gxhat.mean(axis=(0, 2, 3), keepdims=True)
              - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
        return gx * inv_std[None, :, None, None]


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, gy):
        return gy * self._mask


class Sigmoid(Layer):
    def forward(self, x, train=False):
        self._y = 1.0 / (1.0 + np.exp(-x))
        return self._y

    def backward(self, gy):
        return gy * self._y * (1.0 - self._y)


class Dropout(Layer):
    """Inverted dropout driven by an explicit named stream; identity in eval."""

    def __init__(self, p, rng=None):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout p must be in [0, 1)")
        self.p = p
        self.rng = rng or stream(0, "dropout")
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.p == 0.0:
            self._mask = None
            return x
        keep = self.rng.random(x.shape) >= self.p
        self._mask = keep.astype(x.dtype) / (1.0 - self.p)
        return x * self._mask

    def backward(self, gy):
        return gy if self._mask is None else gy * self._mask


class ConcatCoords(Layer):
    """Appends constant normalized x/y position planes to the channel axis.

    Gives convolution stacks direct absolute-position access, which localized
    regression targets need; gradients for the constant planes are dropped.
    """

    def forward(self, x, train=False):
        n, _, h, w = x.shape
        ys = np.linspace(0.0, 1.0, h, dtype=x.dtype)
        xs = np.linspace(0.0, 1.0, w, dtype=x.dtype)
        gy = np.broadcast_to(ys[:, None], (h, w))
        gx = np.broadcast_to(xs[None, :], (h, w))
        planes = np.broadcast_to(np.stack([gx, gy])[None], (n, 2, h, w))
        return np.concatenate([x, planes.astype(x.dtype)], axis=1)

    def backward(self, gy):
        return gy[:, :-2]


class Linear(Layer):
    def __init__(self, d_in, d_out, bias=True, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or stream(0, "init/linear")
        self.params["w"] = _kaiming(rng, (d_in, d_out), d_in, dtype)
        if bias:
            self.params["b"] = _kaiming(rng, (d_out,), d_in, dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x, train=False):
        self._x = x
        y = x @ self.params["w"]
        if "b" in self.params:
            y = y + self.params["b"]
        return y

    def backward(self, gy):
        self.grads["w"] += self._x.T @ gy
        if "b" in self.params:
            self.grads["b"] += gy.sum(axis=0)
        return gy @ self.params["w"].T


class Sequential(Layer):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, gy):
        for layer in reversed(self.layers):
            gy = layer.backward(gy)
        return gy

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def named_params(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_params(prefix=f"{prefix}{i}.")

    def state_arrays(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.state_arrays().items():
                out[f"{i}.{k}"] = v
        return out

    def named_grads(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_grads(prefix=f"{prefix}{i}.")


def mse_loss(pred, target):
    """Mean squared error over all elements; returns (loss, dloss/dpred)."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, (2.0 / diff.size) * diff

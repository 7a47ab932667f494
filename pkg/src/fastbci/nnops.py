"""Neural-network operations on :class:`~fastbci.autograd.Tensor`.

Conventions:
  * spatial ops take (C, H, W) for a single sample or (B, C, H, W) batched;
    a 3-d input comes back 3-d.
  * convolution is cross-correlation (no kernel flip), stride 1.
  * "same" padding splits the surplus as left = (k-1)//2, right = k//2.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, as_tensor, _make
from .errors import ShapeError


def _as_batched(x: Tensor) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"expected (C,H,W) or (B,C,H,W) input, got shape {x.shape}")


def _pad_amounts(k: int, padding: str) -> tuple[int, int]:
    if padding == "same":
        return (k - 1) // 2, k // 2
    if padding == "valid":
        return 0, 0
    raise ValueError(f"unknown padding {padding!r}")


def _check_nonzero(shape) -> None:
    if any(d == 0 for d in shape):
        raise ShapeError(f"zero-size dimension in shape {tuple(shape)}")


# ----------------------------------------------------------------------
# convolutions

def conv2d(x, kernels, mode: str = "standard", padding: str = "same",
           depth_multiplier: int = 1, point_kernels=None) -> Tensor:
    """2-d convolution in one of three modes.

    standard:  kernels (F, C_in, kh, kw) -> F output channels
    depthwise: kernels (C_in, M, kh, kw) -> C_in*M output channels
    separable: depthwise (same padding, M=1) followed by a 1x1 pointwise
               convolution given by ``point_kernels`` (F, C_in, 1, 1)
    """
    x = as_tensor(x)
    if mode == "standard":
        return _conv_standard(x, as_tensor(kernels), padding)
    if mode == "depthwise":
        k = as_tensor(kernels)
        if k.ndim != 4:
            raise ShapeError(f"depthwise kernels must be 4-d, got {k.shape}")
        if k.shape[1] != depth_multiplier:
            raise ShapeError(
                f"depth_multiplier={depth_multiplier} but kernels carry {k.shape[1]}")
        return _conv_depthwise(x, k, padding)
    if mode == "separable":
        if point_kernels is None:
            raise ValueError("separable mode requires point_kernels")
        mid = _conv_depthwise(x, as_tensor(kernels), "same")
        return _conv_standard(mid, as_tensor(point_kernels), padding)
    raise ValueError(f"unknown conv mode {mode!r}")


def _conv_geometry(H, W, kh, kw, padding):
    pt, pb = _pad_amounts(kh, padding)
    pl, pr = _pad_amounts(kw, padding)
    Ho = H + pt + pb - kh + 1
    Wo = W + pl + pr - kw + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"kernel ({kh},{kw}) larger than padded input ({H},{W})")
    return pt, pb, pl, pr, Ho, Wo


# column-matrix convolution is faster but materializes B*Ho*Wo*C*kh*kw
# floats; above this cap fall back to the streaming tap loop
_IM2COL_CAP = 16_000_000


def _conv_standard(x: Tensor, k: Tensor, padding: str) -> Tensor:
    xd, squeezed = _as_batched(x)
    _check_nonzero(xd.shape)
    if k.ndim != 4:
        raise ShapeError(f"standard kernels must be (F,C,kh,kw), got {k.shape}")
    _check_nonzero(k.shape)
    B, C, H, W = xd.shape
    F, Ck, kh, kw = k.shape
    if Ck != C:
        raise ShapeError(f"kernel expects {Ck} input channels, input has {C}")
    pt, pb, pl, pr, Ho, Wo = _conv_geometry(H, W, kh, kw, padding)

    xp = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    kd = k.data
    if B * Ho * Wo * C * kh * kw <= _IM2COL_CAP:
        return _conv_standard_cols(x, k, xp, squeezed,
                                   (B, C, H, W, F, kh, kw, pt, pl, Ho, Wo))

    out = np.zeros((B, F, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i:i + Ho, j:j + Wo]
            out += np.einsum("fc,bchw->bfhw", kd[:, :, i, j], xs, optimize=True)

    def vjp_x(g):
        g = g.reshape(B, F, Ho, Wo)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + Ho, j:j + Wo] += np.einsum(
                    "bfhw,fc->bchw", g, kd[:, :, i, j], optimize=True)
        dx = dxp[:, :, pt:pt + H, pl:pl + W]
        return dx[0] if squeezed else dx

    def vjp_k(g):
        g = g.reshape(B, F, Ho, Wo)
        dk = np.zeros_like(kd)
        for i in range(kh):
            for j in range(kw):
                xs = xp[:, :, i:i + Ho, j:j + Wo]
                dk[:, :, i, j] = np.einsum("bfhw,bchw->fc", g, xs, optimize=True)
        return dk

    out = out[0] if squeezed else out
    return _make(out, [(x, vjp_x), (k, vjp_k)])


def _conv_standard_cols(x: Tensor, k: Tensor, xp, squeezed, geom) -> Tensor:
    B, C, H, W, F, kh, kw, pt, pl, Ho, Wo = geom
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    kflat = k.data.reshape(F, C * kh * kw)
    out = (cols @ kflat.T).reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2)

    def vjp_x(g):
        g2d = g.reshape(B, F, Ho, Wo).transpose(0, 2, 3, 1).reshape(B * Ho * Wo, F)
        dcols = (g2d @ kflat).reshape(B, Ho, Wo, C, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + Ho, j:j + Wo] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, pt:pt + H, pl:pl + W]
        return dx[0] if squeezed else dx

    def vjp_k(g):
        g2d = g.reshape(B, F, Ho, Wo).transpose(0, 2, 3, 1).reshape(B * Ho * Wo, F)
        return (g2d.T @ cols).reshape(F, C, kh, kw)

    res = out[0] if squeezed else out
    return _make(res, [(x, vjp_x), (k, vjp_k)])


def _conv_depthwise(x: Tensor, k: Tensor, padding: str) -> Tensor:
    xd, squeezed = _as_batched(x)
    _check_nonzero(xd.shape)
    _check_nonzero(k.shape)
    B, C, H, W = xd.shape
    Ck, M, kh, kw = k.shape
    if Ck != C:
        raise ShapeError(f"depthwise kernel expects {Ck} channels, input has {C}")
    pt, pb, pl, pr, Ho, Wo = _conv_geometry(H, W, kh, kw, padding)

    xp = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    kd = k.data
    out = np.zeros((B, C, M, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i:i + Ho, j:j + Wo]
            out += xs[:, :, None] * kd[:, :, i, j][None, :, :, None, None]
    out = out.reshape(B, C * M, Ho, Wo)

    def vjp_x(g):
        g5 = g.reshape(B, C, M, Ho, Wo)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + Ho, j:j + Wo] += np.einsum(
                    "bcmhw,cm->bchw", g5, kd[:, :, i, j], optimize=True)
        dx = dxp[:, :, pt:pt + H, pl:pl + W]
        return dx[0] if squeezed else dx

    def vjp_k(g):
        g5 = g.reshape(B, C, M, Ho, Wo)
        dk = np.zeros_like(kd)
        for i in range(kh):
            for j in range(kw):
                xs = xp[:, :, i:i + Ho, j:j + Wo]
                dk[:, :, i, j] = np.einsum("bcmhw,bchw->cm", g5, xs, optimize=True)
        return dk

    out = out[0] if squeezed else out
    return _make(out, [(x, vjp_x), (k, vjp_k)])


# ----------------------------------------------------------------------
# pooling

def avg_pool2d(x, window: tuple[int, int], stride: tuple[int, int] | None = None) -> Tensor:
    """Average pooling; trailing remainder rows/columns are dropped."""
    x = as_tensor(x)
    xd, squeezed = _as_batched(x)
    wh, ww = window
    sh, sw = stride if stride is not None else window
    B, C, H, W = xd.shape
    if wh > H or ww > W:
        raise ShapeError(f"pool window {window} larger than input ({H},{W})")
    if wh < 1 or ww < 1 or sh < 1 or sw < 1:
        raise ValueError("pool window and stride must be positive")
    Ho = (H - wh) // sh + 1
    Wo = (W - ww) // sw + 1

    out = np.zeros((B, C, Ho, Wo))
    for i in range(wh):
        for j in range(ww):
            out += xd[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw]
    out /= wh * ww

    def vjp_x(g):
        g = g.reshape(B, C, Ho, Wo) / (wh * ww)
        dx = np.zeros_like(xd)
        for i in range(wh):
            for j in range(ww):
                dx[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] += g
        return dx[0] if squeezed else dx

    out = out[0] if squeezed else out
    return _make(out, [(x, vjp_x)])


# ----------------------------------------------------------------------
# normalization

def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize each sample over the trailing ``gain.ndim`` axes.

    ``gain``/``bias`` must match those trailing axes exactly; any leading
    axes of ``x`` are treated as batch.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.shape != bias.shape:
        raise ShapeError(f"gain {gain.shape} and bias {bias.shape} differ")
    nd = gain.ndim
    if nd == 0 or x.ndim < nd or x.shape[x.ndim - nd:] != gain.shape:
        raise ShapeError(
            f"gain shape {gain.shape} does not match trailing axes of input {x.shape}")
    axes = tuple(range(x.ndim - nd, x.ndim))
    n = int(np.prod(gain.shape))
    if n < 2:
        raise ShapeError("layer_norm needs at least 2 elements per sample")

    xd = x.data
    mu = xd.mean(axis=axes, keepdims=True)
    var = xd.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = gain.data * xhat + bias.data
    batch_axes = tuple(range(x.ndim - nd))

    def vjp_x(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=axes, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
        return inv * (dxhat - m1 - xhat * m2)

    def vjp_gain(g):
        gx = g * xhat
        return gx.sum(axis=batch_axes) if batch_axes else gx

    def vjp_bias(g):
        return g.sum(axis=batch_axes) if batch_axes else g.copy()

    return _make(out, [(x, vjp_x), (gain, vjp_gain), (bias, vjp_bias)])


def batch_norm(x, gain, bias, running_mean: np.ndarray, running_var: np.ndarray,
               momentum: float = 0.1, training: bool = False) -> Tensor:
    """Per-channel batch normalization with running-statistic tracking.

    ``x`` is (B, C, ...) with channel axis 1.  In training mode the batch
    statistics normalize the input and the running buffers are updated in
    place as (1-momentum)*old + momentum*batch.  Eval mode uses the buffers.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.ndim < 2:
        raise ShapeError(f"batch_norm input must be at least 2-d, got {x.shape}")
    C = x.shape[1]
    if gain.shape != (C,) or bias.shape != (C,):
        raise ShapeError(f"gain/bias must have shape ({C},)")
    if running_mean.shape != (C,) or running_var.shape != (C,):
        raise ShapeError(f"running stats must have shape ({C},)")
    xd = x.data
    axes = (0,) + tuple(range(2, x.ndim))
    stat_shape = (1, C) + (1,) * (x.ndim - 2)

    if training:
        if x.shape[0] < 2:
            raise ShapeError("batch_norm training requires batch size >= 2")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var

    inv = (1.0 / np.sqrt(var + 1e-5)).reshape(stat_shape)
    xhat = (xd - mu.reshape(stat_shape)) * inv
    out = gain.data.reshape(stat_shape) * xhat + bias.data.reshape(stat_shape)

    if training:
        def vjp_x(g):
            dxhat = g * gain.data.reshape(stat_shape)
            m1 = dxhat.mean(axis=axes, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
            return inv * (dxhat - m1 - xhat * m2)
    else:
        def vjp_x(g):
            return g * gain.data.reshape(stat_shape) * inv

    def vjp_gain(g):
        return (g * xhat).sum(axis=axes)

    def vjp_bias(g):
        return g.sum(axis=axes)

    return _make(out, [(x, vjp_x), (gain, vjp_gain), (bias, vjp_bias)])


# ----------------------------------------------------------------------
# activations / regularization

def elu(x, alpha: float = 1.0) -> Tensor:
    if alpha <= 0:
        raise ValueError("elu alpha must be positive")
    x = as_tensor(x)
    xd = x.data
    out = np.where(xd > 0, xd, alpha * np.expm1(xd))

    def vjp_x(g):
        # d/dx alpha*(e^x - 1) = alpha*e^x = out + alpha for x <= 0
        return g * np.where(xd > 0, 1.0, out + alpha)

    return _make(out, [(x, vjp_x)])


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0,1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    scale = 1.0 / (1.0 - p)
    mask = (rng.random(x.shape) >= p) * scale
    return _make(x.data * mask, [(x, lambda g: g * mask)])


# ----------------------------------------------------------------------
# head

def dense(x, weight, bias) -> Tensor:
    """Affine map: weight (k, d) applied to x (d,) or (B, d), plus bias (k,)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2:
        raise ShapeError(f"dense weight must be 2-d, got {weight.shape}")
    k, d = weight.shape
    if bias.shape != (k,):
        raise ShapeError(f"dense bias must have shape ({k},)")
    single = x.ndim == 1
    xd = x.data[None] if single else x.data
    if xd.ndim != 2 or xd.shape[1] != d:
        raise ShapeError(f"dense input {x.shape} incompatible with weight {weight.shape}")

    out = xd @ weight.data.T + bias.data

    def vjp_x(g):
        g2 = g.reshape(out.shape)
        dx = g2 @ weight.data
        return dx[0] if single else dx

    def vjp_w(g):
        g2 = g.reshape(out.shape)
        return g2.T @ xd

    def vjp_b(g):
        return g.reshape(out.shape).sum(axis=0)

    res = out[0] if single else out
    return _make(res, [(x, vjp_x), (weight, vjp_w), (bias, vjp_b)])


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-softmax of the true class, stabilized by max-subtraction.

    ``logits`` is (k,) with an int label, or (B, k) with an int vector;
    the batched form averages over the batch.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    ld = logits.data[None] if single else logits.data
    if ld.ndim != 2:
        raise ShapeError(f"logits must be 1-d or 2-d, got shape {logits.shape}")
    B, k = ld.shape
    y = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if y.shape != (B,):
        raise ShapeError(f"labels shape {y.shape} does not match batch {B}")
    if y.min() < 0 or y.max() >= k:
        raise ValueError(f"label out of range [0,{k})")

    z = ld - ld.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    losses = lse - z[np.arange(B), y]
    out = np.asarray(losses.mean())

    def vjp_logits(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(B), y] -= 1.0
        dl = (float(g) / B) * p
        return dl[0] if single else dl

    return _make(out, [(logits, vjp_logits)])

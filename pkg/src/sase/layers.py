"""Differentiable layer primitives over the autodiff tape.

Frame-major convention throughout: feature maps are (channels, F, K) and
sequence features are (dim, K); a "column" is one time frame.
"""

import numpy as np

from .autodiff import (
    Tensor,
    _primitive,
    _record,
    as_tensor,
    broadcast_to,
    concat,
    exp,
    leaky_relu,
    matmul,
    reduce_mean,
    reduce_sum,
    reshape,
    sqrt,
    transpose,
)
from .errors import ShapeError

LEAKY_SLOPE = 0.01


def linear(x, w, b=None):
    """W x + b column-wise: (M,N) @ (N,K) -> (M,K)."""
    y = matmul(w, x)
    if b is not None:
        b = as_tensor(b)
        col = reshape(b, (b.shape[0], 1))
        y = y + broadcast_to(col, y.shape)
    return y


# ---------------------------------------------------------------------------
# convolution

def _conv_geometry(shape_in, kernel, padding, stride):
    c_in, f_in, k_in = shape_in
    kh, kw = kernel
    ph, pw = padding
    sh, sw = stride
    f_out = (f_in + 2 * ph - kh) // sh + 1
    k_out = (k_in + 2 * pw - kw) // sw + 1
    return f_out, k_out


def _patch_matrix(xp, kh, kw, sh, sw, f_out, k_out):
    """(C*kh*kw, f_out*k_out) patch matrix from the padded map."""
    c = xp.shape[0]
    r = (np.arange(f_out) * sh)[:, None] + np.arange(kh)[None, :]
    q = (np.arange(k_out) * sw)[:, None] + np.arange(kw)[None, :]
    # index arrays broadcast to (f_out, k_out, kh, kw)
    patches = xp[:, r[:, None, :, None], q[None, :, None, :]]
    patches = patches.transpose(0, 3, 4, 1, 2)  # (C, kh, kw, f_out, k_out)
    return patches.reshape(c * kh * kw, f_out * k_out)


@_primitive("conv2d")
def conv2d(x, w, b, padding=(2, 2), stride=(1, 1)):
    """Zero-padded 2-D cross-correlation.

    x: (C_in, F, K), w: (C_out, C_in, kh, kw), b: (C_out,).
    The patch matrix is rebuilt inside the backward closure instead of
    being captured, keeping tape memory at one padded copy per call.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 3 or w.data.ndim != 4 or x.shape[0] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    if b.shape != (w.shape[0],):
        raise ShapeError("conv2d", w.shape, b.shape, detail="bias per out-channel")
    c_out, c_in, kh, kw = w.shape
    ph, pw = padding
    sh, sw = stride
    f_out, k_out = _conv_geometry(x.shape, (kh, kw), padding, stride)
    if f_out < 1 or k_out < 1:
        raise ShapeError("conv2d", x.shape, w.shape, detail="kernel exceeds input")

    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    patches = _patch_matrix(xp, kh, kw, sh, sw, f_out, k_out)
    w2 = w.data.reshape(c_out, c_in * kh * kw)
    out = (w2 @ patches + b.data[:, None]).reshape(c_out, f_out, k_out)

    def vjp(g):
        g2 = g.reshape(c_out, f_out * k_out)
        p = _patch_matrix(xp, kh, kw, sh, sw, f_out, k_out)
        g_w = (g2 @ p.T).reshape(w.shape)
        g_b = g2.sum(axis=1)
        col = (w2.T @ g2).reshape(c_in, kh, kw, f_out, k_out)
        g_xp = np.zeros_like(xp)
        r = (np.arange(f_out) * sh)[:, None] + np.arange(kh)[None, :]
        q = (np.arange(k_out) * sw)[:, None] + np.arange(kw)[None, :]
        np.add.at(g_xp,
                  (np.arange(c_in)[:, None, None, None, None],
                   r[None, :, None, :, None],
                   q[None, None, :, None, :]),
                  col.transpose(0, 3, 4, 1, 2))
        f_in, k_in = x.shape[1], x.shape[2]
        g_x = g_xp[:, ph:ph + f_in, pw:pw + k_in]
        return g_x, g_w, g_b

    return _record(out, (x, w, b), vjp, "conv2d")


# ---------------------------------------------------------------------------
# normalization

def instance_norm(x, scale, shift, eps=1e-5):
    """Per-channel normalization over the (F,K) plane, then affine."""
    x = as_tensor(x)
    c = x.shape[0]
    mu = reduce_mean(x, axis=(1, 2))
    mu_b = broadcast_to(reshape(mu, (c, 1, 1)), x.shape)
    centered = x - mu_b
    var = reduce_mean(centered * centered, axis=(1, 2))
    sd = sqrt(var + eps)
    sd_b = broadcast_to(reshape(sd, (c, 1, 1)), x.shape)
    normed = centered / sd_b
    scale_b = broadcast_to(reshape(as_tensor(scale), (c, 1, 1)), x.shape)
    shift_b = broadcast_to(reshape(as_tensor(shift), (c, 1, 1)), x.shape)
    return normed * scale_b + shift_b


def layer_norm(x, gamma, beta, eps=1e-5):
    """Per-frame normalization over the feature axis of (N,K)."""
    x = as_tensor(x)
    n, k = x.shape
    mu = reduce_mean(x, axis=0)
    mu_b = broadcast_to(reshape(mu, (1, k)), x.shape)
    centered = x - mu_b
    var = reduce_mean(centered * centered, axis=0)
    sd = sqrt(var + eps)
    sd_b = broadcast_to(reshape(sd, (1, k)), x.shape)
    normed = centered / sd_b
    gamma_b = broadcast_to(reshape(as_tensor(gamma), (n, 1)), x.shape)
    beta_b = broadcast_to(reshape(as_tensor(beta), (n, 1)), x.shape)
    return normed * gamma_b + beta_b


# ---------------------------------------------------------------------------
# softmax

def softmax_vec(x):
    """Stable softmax of a 1-D tensor."""
    x = as_tensor(x)
    # max subtraction is a constant shift: gradient-transparent by design
    shifted = x - float(x.data.max())
    e = exp(shifted)
    total = reduce_sum(e)
    return e / broadcast_to(reshape(total, (1,) * e.data.ndim), e.shape)


def softmax_rows(x):
    """Row-wise stable softmax of a 2-D tensor."""
    x = as_tensor(x)
    k1, k2 = x.shape
    shift = Tensor(np.broadcast_to(x.data.max(axis=1, keepdims=True), x.shape).copy())
    e = exp(x - shift)
    total = reduce_sum(e, axis=1)
    return e / broadcast_to(reshape(total, (k1, 1)), x.shape)


# ---------------------------------------------------------------------------
# initialization

def kaiming_uniform(rng, shape, fan_in):
    """Uniform Kaiming init with the leaky-ReLU gain."""
    gain = np.sqrt(2.0 / (1.0 + LEAKY_SLOPE ** 2))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_linear(rng, params, prefix, out_dim, in_dim, bias=True):
    params[f"{prefix}.w"] = Tensor(kaiming_uniform(rng, (out_dim, in_dim), in_dim),
                                   requires_grad=True, name=f"{prefix}.w")
    if bias:
        params[f"{prefix}.b"] = Tensor(np.zeros(out_dim), requires_grad=True,
                                       name=f"{prefix}.b")


def init_conv(rng, params, prefix, c_out, c_in, kernel):
    kh, kw = kernel
    fan_in = c_in * kh * kw
    params[f"{prefix}.w"] = Tensor(
        kaiming_uniform(rng, (c_out, c_in, kh, kw), fan_in),
        requires_grad=True, name=f"{prefix}.w")
    params[f"{prefix}.b"] = Tensor(np.zeros(c_out), requires_grad=True,
                                   name=f"{prefix}.b")


def init_norm(rng, params, prefix, dim):
    params[f"{prefix}.scale"] = Tensor(np.ones(dim), requires_grad=True,
                                       name=f"{prefix}.scale")
    params[f"{prefix}.shift"] = Tensor(np.zeros(dim), requires_grad=True,
                                       name=f"{prefix}.shift")

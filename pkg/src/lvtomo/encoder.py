"""The per-ray weight encoder: a small 1-D conv stack with hand-written
forward and reverse-mode backward passes.

Pipeline per ray (feature block 6 x N from the padded input):

    conv(3-tap, same length) -> [batch norm] -> leaky ReLU   (hidden layers)
    conv(3-tap, same length) -> square                        (output head)

The square keeps every weight non-negative. Three variants control how the
zero-padded columns stay inert:

    no_bias    -- biases off everywhere; zero columns map to zero weights
                  because every op is zero-preserving
    bias_mask  -- biases on; weights at positions >= n are zeroed by an
                  explicit mask after the square
    no_bias_bn -- biases off, batch normalization after each hidden conv

Internally activations are kept channels-last, (B, N, C), and each conv runs
as a single GEMM: over 3-tap input windows when C_in <= C_out, or as a
tap-grouped GEMM plus shift-adds when the output is narrower. Compute dtype
follows the input features; parameter-gradient reductions are float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError, ShapeError

VARIANTS = ("no_bias", "bias_mask", "no_bias_bn")

_WEN_MAGIC = b"WEN1"


@dataclass
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass
class EncoderParams:
    """All trainable and running state of the weight encoder."""

    variant: str
    channels: list[int]  # e.g. [6, 32, 1]
    conv_w: list[np.ndarray]  # (C_out, C_in, 3) per layer
    conv_b: list[np.ndarray | None]
    bn: list[BnParams | None]  # per hidden layer; None unless variant has BN
    leaky_slope: float = 0.01
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown encoder variant {self.variant!r}")
        if self.bn_eps <= 0:
            raise ParameterError("bn epsilon must be > 0")

    @property
    def has_bias(self) -> bool:
        return self.variant == "bias_mask"

    @property
    def has_bn(self) -> bool:
        return self.variant == "no_bias_bn"

    @property
    def n_layers(self) -> int:
        return len(self.conv_w)

    def trainable_arrays(self) -> list[np.ndarray]:
        """Flat list of trainable parameter arrays, in a fixed order."""
        out = []
        for i in range(self.n_layers):
            out.append(self.conv_w[i])
            if self.conv_b[i] is not None:
                out.append(self.conv_b[i])
            if i < self.n_layers - 1 and self.bn[i] is not None:
                out.append(self.bn[i].gamma)
                out.append(self.bn[i].beta)
        return out

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.variant,
            list(self.channels),
            [w.copy() for w in self.conv_w],
            [None if b is None else b.copy() for b in self.conv_b],
            [
                None
                if b is None
                else BnParams(
                    b.gamma.copy(), b.beta.copy(),
                    b.running_mean.copy(), b.running_var.copy(),
                )
                for b in self.bn
            ],
            self.leaky_slope,
            self.bn_momentum,
            self.bn_eps,
        )


def conv_weight_bound(c_in: int, kernel_width: int = 3) -> float:
    """Uniform init bound 1/sqrt(fan_in * kernel_width)."""
    return 1.0 / np.sqrt(c_in * kernel_width)


def init_encoder(
    rng: np.random.Generator,
    variant: str,
    channels: list[int] | None = None,
    leaky_slope: float = 0.01,
    bn_momentum: float = 0.1,
    bn_eps: float = 1e-5,
) -> EncoderParams:
    """Fresh encoder: conv weights i.i.d. uniform within the fan-in bound,
    biases zero (where active), gamma 1 / beta 0, running stats (0, 1)."""
    if channels is None:
        channels = [6, 32, 1]
    if len(channels) < 2 or channels[0] != 6 or channels[-1] != 1:
        raise ParameterError(f"channels must run 6 -> ... -> 1, got {channels}")
    params = EncoderParams(variant, list(channels), [], [], [],
                           leaky_slope, bn_momentum, bn_eps)
    n_layers = len(channels) - 1
    for i in range(n_layers):
        c_in, c_out = channels[i], channels[i + 1]
        bound = conv_weight_bound(c_in)
        params.conv_w.append(rng.uniform(-bound, bound, size=(c_out, c_in, 3)))
        params.conv_b.append(np.zeros(c_out) if params.has_bias else None)
        if i < n_layers - 1 and params.has_bn:
            params.bn.append(
                BnParams(np.ones(c_out), np.zeros(c_out), np.zeros(c_out), np.ones(c_out))
            )
        else:
            params.bn.append(None)
    return params


# ---------------------------------------------------------------------------
# Channels-last conv kernels. x is (B, N, C_in), y is (B, N, C_out); the
# convolution is same-length (3 taps, zero padding 1, stride 1):
#   y[b, n, o] = sum_{t, c} w[o, c, t] * x_pad[b, n + t, c].
# ---------------------------------------------------------------------------


def _unfold3_cl(x: np.ndarray) -> np.ndarray:
    """(B, N, C) -> (B, N, 3C) zero-padded 3-tap windows, tap-major columns."""
    b, n, c = x.shape
    out = np.zeros((b, n, 3 * c), dtype=x.dtype)
    out[:, 1:, 0:c] = x[:, :-1, :]
    out[:, :, c : 2 * c] = x
    out[:, :-1, 2 * c : 3 * c] = x[:, 1:, :]
    return out


def _wmat_unfold(w: np.ndarray, dtype) -> np.ndarray:
    """Kernel as a (3*C_in, C_out) operand matching _unfold3_cl columns."""
    return np.ascontiguousarray(w.transpose(2, 1, 0).reshape(-1, w.shape[0]), dtype=dtype)


def _wmat_taps(w: np.ndarray, dtype) -> np.ndarray:
    """Kernel as a (C_in, 3*C_out) operand, columns grouped by tap."""
    return np.ascontiguousarray(w.transpose(1, 2, 0).reshape(w.shape[1], -1), dtype=dtype)


def _conv_cl_forward(w: np.ndarray, x: np.ndarray, b: np.ndarray | None):
    """Returns (y, cache) with cache reused by _conv_cl_backward."""
    bsz, n, c_in = x.shape
    c_out = w.shape[0]
    if c_in <= c_out:
        x3 = _unfold3_cl(x)
        y = x3.reshape(bsz * n, -1) @ _wmat_unfold(w, x.dtype)
        y = y.reshape(bsz, n, c_out)
        cache = ("unfold", x3)
    else:
        # z[b, n, t, o] = sum_c x[b, n, c] w[o, c, t]; then overlap-add taps.
        z = (x.reshape(bsz * n, c_in) @ _wmat_taps(w, x.dtype)).reshape(bsz, n, 3, c_out)
        y = z[:, :, 1, :].copy()
        y[:, 1:, :] += z[:, :-1, 0, :]
        y[:, :-1, :] += z[:, 1:, 2, :]
        cache = ("taps", x)
    if b is not None:
        y += b.astype(x.dtype, copy=False)[None, None, :]
    return y, cache


def _conv_cl_backward(w: np.ndarray, cache, dy: np.ndarray):
    """Returns (dx, dw, db); dw and db are float64 reductions."""
    kind, saved = cache
    bsz, n, c_out = dy.shape
    c_in = w.shape[1]
    dy2 = dy.reshape(bsz * n, c_out)
    if kind == "unfold":
        x3 = saved
        dwm = x3.reshape(bsz * n, -1).T @ dy2  # (3C_in, C_out)
        dw = dwm.reshape(3, c_in, c_out).transpose(2, 1, 0).astype(np.float64)
        dx3 = (dy2 @ _wmat_unfold(w, dy.dtype).T).reshape(bsz, n, 3 * c_in)
        dx = dx3[:, :, c_in : 2 * c_in].copy()
        dx[:, :-1, :] += dx3[:, 1:, 0:c_in]
        dx[:, 1:, :] += dx3[:, :-1, 2 * c_in : 3 * c_in]
    else:
        x = saved
        # dy seen from each tap: dy3[b, n, t, o] = dy[b, n - t + 1, o].
        dy3 = np.zeros((bsz, n, 3, c_out), dtype=dy.dtype)
        dy3[:, :-1, 0, :] = dy[:, 1:, :]
        dy3[:, :, 1, :] = dy
        dy3[:, 1:, 2, :] = dy[:, :-1, :]
        dy3_2 = dy3.reshape(bsz * n, 3 * c_out)
        dwm = x.reshape(bsz * n, c_in).T @ dy3_2  # (C_in, 3C_out)
        dw = dwm.reshape(c_in, 3, c_out).transpose(2, 0, 1).astype(np.float64)
        dx = (dy3_2 @ _wmat_taps(w, dy.dtype).T).reshape(bsz, n, c_in)
    db = dy2.sum(axis=0).astype(np.float64)
    return dx, dw, db


def _bn_cl_forward(bn: BnParams, x: np.ndarray, eps: float, momentum: float,
                   training: bool):
    """Per-channel normalization of (B, N, C) over the (B, N) axes."""
    if x.shape[0] == 0:
        raise ParameterError("batch of size 0")
    dt = x.dtype
    if training:
        m = x.shape[0] * x.shape[1]
        x2 = x.reshape(m, x.shape[2])
        # Reductions run in the compute dtype (float32 sums are pairwise);
        # the float64 oracle path passes float64 activations throughout.
        mean = x2.mean(axis=0).astype(np.float64)
        var = np.square(x2).mean(axis=0).astype(np.float64) - mean * mean
        np.maximum(var, 0.0, out=var)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = x - mean.astype(dt)
        xhat *= inv_std.astype(dt)
        y = xhat * bn.gamma.astype(dt)
        y += bn.beta.astype(dt)
        unbiased = var * (m / (m - 1)) if m > 1 else var
        bn.running_mean *= 1.0 - momentum
        bn.running_mean += momentum * mean
        bn.running_var *= 1.0 - momentum
        bn.running_var += momentum * unbiased
        return y, (xhat, inv_std)
    inv_std = 1.0 / np.sqrt(bn.running_var + eps)
    xhat = (x - bn.running_mean.astype(dt)) * inv_std.astype(dt)
    return bn.gamma.astype(dt) * xhat + bn.beta.astype(dt), None


def _bn_cl_backward(bn: BnParams, cache, dy: np.ndarray):
    """Training-mode gradients through the batch statistics."""
    xhat, inv_std = cache
    dt = dy.dtype
    m = dy.shape[0] * dy.shape[1]
    c = dy.shape[2]
    dbeta = dy.reshape(m, c).sum(axis=0).astype(np.float64)
    dgamma = (dy * xhat).reshape(m, c).sum(axis=0).astype(np.float64)
    coeff = (bn.gamma * inv_std / m).astype(dt)
    dx = m * dy
    dx -= dbeta.astype(dt)
    dx -= xhat * dgamma.astype(dt)
    dx *= coeff
    return dx, dgamma, dbeta


def leaky_relu(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    x = np.asarray(x)
    return np.where(x >= 0, x, x.dtype.type(slope) * x)


def leaky_relu_backward(x: np.ndarray, dy: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, dy, dy.dtype.type(slope) * dy)


# ---------------------------------------------------------------------------
# Public single-op surfaces (channel-middle layout, as consumed by tests and
# oracles). The encoder itself uses the channels-last kernels directly.
# ---------------------------------------------------------------------------


def conv1d_forward(w: np.ndarray, x: np.ndarray, b: np.ndarray | None = None):
    """Same-length 3-tap convolution (stride 1, zero padding 1).

    x: (B, C_in, N) -> (B, C_out, N). Returns (y, cache); pass the cache to
    conv1d_backward.
    """
    if x.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"input {x.shape} incompatible with kernel {w.shape} (need (B, {w.shape[1]}, N))"
        )
    if x.shape[2] < 1:
        raise ShapeError("sequence length must be >= 1")
    x_cl = np.ascontiguousarray(x.transpose(0, 2, 1))
    y, cache = _conv_cl_forward(w, x_cl, b)
    return y.transpose(0, 2, 1), cache


def conv1d_backward(w: np.ndarray, cache, dy: np.ndarray):
    """Gradients of conv1d_forward: (dx, dw, db) with dy shaped (B, C_out, N)."""
    dy_cl = np.ascontiguousarray(dy.transpose(0, 2, 1))
    dx, dw, db = _conv_cl_backward(w, cache, dy_cl)
    return dx.transpose(0, 2, 1), dw, db


def batchnorm_forward(bn: BnParams, x: np.ndarray, eps: float = 1e-5,
                      momentum: float = 0.1, training: bool = True):
    """Per-channel normalization of (B, C, N) over the (B, N) axes.

    Training mode normalizes with batch statistics and updates the running
    stats in place (unbiased variance); eval mode uses the running stats.
    Returns (y, cache) with cache None in eval mode.
    """
    x_cl = np.ascontiguousarray(np.asarray(x).transpose(0, 2, 1))
    y, cache = _bn_cl_forward(bn, x_cl, eps, momentum, training)
    return y.transpose(0, 2, 1), cache


def batchnorm_backward(bn: BnParams, cache, dy: np.ndarray):
    """Training-mode gradients: (dx, dgamma, dbeta), dy shaped (B, C, N)."""
    dy_cl = np.ascontiguousarray(np.asarray(dy).transpose(0, 2, 1))
    dx, dgamma, dbeta = _bn_cl_backward(bn, cache, dy_cl)
    return dx.transpose(0, 2, 1), dgamma, dbeta


# ---------------------------------------------------------------------------
# Full encoder
# ---------------------------------------------------------------------------


@dataclass
class EncoderCache:
    """Forward activations needed by encoder_backward (one batch)."""

    conv: list  # per-layer conv caches (channels-last)
    act_factor: list[np.ndarray]  # leaky-ReLU slope factor per hidden layer
    bn_cache: list[tuple | None]
    head: np.ndarray  # output conv result, pre-square (B, N)
    mask: np.ndarray | None  # (B, N) valid-position mask for bias_mask


@dataclass
class EncoderGrads:
    conv_w: list[np.ndarray]
    conv_b: list[np.ndarray | None]
    bn_gamma: list[np.ndarray | None]
    bn_beta: list[np.ndarray | None]

    def trainable_arrays(self) -> list[np.ndarray]:
        out = []
        for i in range(len(self.conv_w)):
            out.append(self.conv_w[i])
            if self.conv_b[i] is not None:
                out.append(self.conv_b[i])
            if i < len(self.conv_w) - 1 and self.bn_gamma[i] is not None:
                out.append(self.bn_gamma[i])
                out.append(self.bn_beta[i])
        return out


def encoder_forward(
    params: EncoderParams,
    features: np.ndarray,
    n: np.ndarray | None = None,
    training: bool = True,
    want_cache: bool = False,
):
    """Per-ray weight vectors for a batch of padded inputs.

    features: (B, 6, N); n: (B,) true lengths (required for bias_mask).
    Returns (weights (B, N), cache or None). Weights are the squared output of
    the conv stack, so they are always >= 0. Compute dtype follows the
    features (float32 or float64).
    """
    f = np.asarray(features)
    if f.dtype not in (np.float32, np.float64):
        f = f.astype(np.float64)
    if f.ndim != 3 or f.shape[1] != params.channels[0]:
        raise ShapeError(f"features must be (B, {params.channels[0]}, N), got {f.shape}")
    x = np.ascontiguousarray(f.transpose(0, 2, 1))  # (B, N, C)
    if params.variant == "bias_mask":
        if n is None:
            raise ParameterError("bias_mask variant requires the true lengths n")
        # Enforce the zero extension on the inputs as well: the conv window
        # would otherwise leak padding values into the last valid positions.
        valid = np.arange(x.shape[1])[None, :] < np.asarray(n).reshape(-1, 1)
        x = x * valid[:, :, None].astype(x.dtype)
    conv_caches, factors, bn_caches = [], [], []
    one = x.dtype.type(1.0)
    slope = x.dtype.type(params.leaky_slope)
    for i in range(params.n_layers - 1):
        z, cc = _conv_cl_forward(params.conv_w[i], x, params.conv_b[i])
        conv_caches.append(cc)
        if params.bn[i] is not None:
            z, bc = _bn_cl_forward(
                params.bn[i], z, params.bn_eps, params.bn_momentum, training
            )
            bn_caches.append(bc)
        else:
            bn_caches.append(None)
        factor = np.where(z >= 0, one, slope)
        factors.append(factor)
        x = z
        x *= factor
    head, cc = _conv_cl_forward(params.conv_w[-1], x, params.conv_b[-1])
    conv_caches.append(cc)
    head = head[:, :, 0]  # (B, N)
    w = head * head
    mask = None
    if params.variant == "bias_mask":
        mask = np.arange(w.shape[1])[None, :] < np.asarray(n).reshape(-1, 1)
        w = w * mask
    cache = EncoderCache(conv_caches, factors, bn_caches, head, mask) if want_cache else None
    return w, cache


def encoder_backward(params: EncoderParams, cache: EncoderCache | None,
                     g_w: np.ndarray) -> EncoderGrads:
    """Exact reverse-mode gradients of the encoder parameters.

    g_w is the loss gradient at the weight vectors, (B, N). Raises if the
    forward cache is missing.
    """
    if cache is None:
        raise ParameterError("encoder_backward requires the forward cache")
    g = np.asarray(g_w, dtype=cache.head.dtype)
    if cache.mask is not None:
        g = g * cache.mask
    dy = (2.0 * cache.head * g)[:, :, None]  # through the square, (B, N, 1)
    grads = EncoderGrads(
        [None] * params.n_layers,
        [None] * params.n_layers,
        [None] * params.n_layers,
        [None] * params.n_layers,
    )
    dx, dw, db = _conv_cl_backward(params.conv_w[-1], cache.conv[-1], dy)
    grads.conv_w[-1] = dw
    grads.conv_b[-1] = db if params.conv_b[-1] is not None else None
    for i in range(params.n_layers - 2, -1, -1):
        dz = dx
        dz *= cache.act_factor[i]
        if params.bn[i] is not None:
            dz, dgamma, dbeta = _bn_cl_backward(params.bn[i], cache.bn_cache[i], dz)
            grads.bn_gamma[i] = dgamma
            grads.bn_beta[i] = dbeta
        dx, dw, db = _conv_cl_backward(params.conv_w[i], cache.conv[i], dz)
        grads.conv_w[i] = dw
        grads.conv_b[i] = db if params.conv_b[i] is not None else None
    return grads


# ---------------------------------------------------------------------------
# WEN1 checkpoint: magic "WEN1", u32-LE header length, JSON header
# {variant, channels, leaky_slope, bn {momentum, epsilon} | null, provenance},
# then float32-LE arrays, layer-major in declared order:
# conv_w, [conv_b], and for hidden layers with BN: gamma, beta, running_mean,
# running_var.
# ---------------------------------------------------------------------------


def _checkpoint_arrays(params: EncoderParams) -> list[np.ndarray]:
    out = []
    for i in range(params.n_layers):
        out.append(params.conv_w[i])
        if params.conv_b[i] is not None:
            out.append(params.conv_b[i])
        if i < params.n_layers - 1 and params.bn[i] is not None:
            b = params.bn[i]
            out.extend([b.gamma, b.beta, b.running_mean, b.running_var])
    return out


def save_encoder(params: EncoderParams, path, provenance: dict | None = None) -> None:
    header = json.dumps(
        {
            "variant": params.variant,
            "channels": params.channels,
            "leaky_slope": params.leaky_slope,
            "bn": (
                {"momentum": params.bn_momentum, "epsilon": params.bn_eps}
                if params.has_bn
                else None
            ),
            "provenance": provenance or {},
        }
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_WEN_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for a in _checkpoint_arrays(params):
            f.write(a.astype("<f4").tobytes())


def load_encoder(path) -> EncoderParams:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _WEN_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {_WEN_MAGIC!r}", 0)
    if len(data) < 8:
        raise FormatError("truncated header length field", 4)
    (hlen,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + hlen:
        raise FormatError("truncated JSON header", 8)
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
        variant = header["variant"]
        channels = [int(c) for c in header["channels"]]
        leaky = float(header["leaky_slope"])
        bn_info = header.get("bn")
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"invalid JSON header: {exc}", 8) from exc
    params = EncoderParams(
        variant,
        channels,
        [],
        [],
        [],
        leaky,
        float(bn_info["momentum"]) if bn_info else 0.1,
        float(bn_info["epsilon"]) if bn_info else 1e-5,
    )
    off = 8 + hlen

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        if len(data) - off < 4 * count:
            raise FormatError("truncated parameter payload", off)
        a = np.frombuffer(data, "<f4", count, off).astype(np.float64).reshape(shape)
        off += 4 * count
        return a

    n_layers = len(channels) - 1
    for i in range(n_layers):
        c_in, c_out = channels[i], channels[i + 1]
        params.conv_w.append(take((c_out, c_in, 3)))
        params.conv_b.append(take((c_out,)) if params.has_bias else None)
        if i < n_layers - 1 and params.has_bn:
            params.bn.append(
                BnParams(take((c_out,)), take((c_out,)), take((c_out,)), take((c_out,)))
            )
        else:
            params.bn.append(None)
    if off != len(data):
        raise FormatError(f"{len(data) - off} unexpected trailing bytes", off)
    return params

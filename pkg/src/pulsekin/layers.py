"""Forward and backward passes for every layer the network needs.

All kernels are pure functions over float64 numpy arrays. Shapes follow the
convention (..., C, W) for convolutional features and (..., n) for vectors;
leading batch dimensions are optional everywhere. Backward functions take
the tensors saved from the forward call (input, or mask for dropout, or
output for sigmoid) and the upstream gradient, and return exact gradients.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ConfigError, ShapeError


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def conv1d_out_len(width: int, kernel: int, stride: int = 1) -> int:
    """Valid (unpadded) convolution output length."""
    if width < kernel:
        raise ShapeError(f"input width {width} shorter than kernel {kernel}")
    return (width - kernel) // stride + 1


class Conv1dGrads(NamedTuple):
    d_input: np.ndarray
    d_weight: np.ndarray
    d_bias: np.ndarray


class LinearGrads(NamedTuple):
    d_input: np.ndarray
    d_weight: np.ndarray
    d_bias: np.ndarray


def _conv_windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    # (..., C_in, W) -> (..., C_in, W_out, kernel)
    wins = sliding_window_view(x, kernel, axis=-1)
    return wins[..., ::stride, :]


def conv1d_forward(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int = 1
) -> np.ndarray:
    """Valid cross-correlation: (..., C_in, W) -> (..., C_out, W_out)."""
    x, weight, bias = _f64(x), _f64(weight), _f64(bias)
    c_out, c_in, kernel = weight.shape
    if x.shape[-2] != c_in:
        raise ShapeError(f"input has {x.shape[-2]} channels, weight expects {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} != ({c_out},)")
    conv1d_out_len(x.shape[-1], kernel, stride)
    wins = _conv_windows(x, kernel, stride)
    y = np.einsum("oik,...iwk->...ow", weight, wins, optimize=True)
    return y + bias[:, None]


def conv1d_backward(
    upstream: np.ndarray, x: np.ndarray, weight: np.ndarray, stride: int = 1
) -> Conv1dGrads:
    upstream, x, weight = _f64(upstream), _f64(x), _f64(weight)
    c_out, c_in, kernel = weight.shape
    w_out = conv1d_out_len(x.shape[-1], kernel, stride)
    if upstream.shape[-2:] != (c_out, w_out):
        raise ShapeError(
            f"upstream shape {upstream.shape[-2:]} != ({c_out}, {w_out})"
        )
    wins = _conv_windows(x, kernel, stride)
    d_weight = np.einsum("...ow,...iwk->oik", upstream, wins, optimize=True)
    batch_axes = tuple(range(upstream.ndim - 2))
    d_bias = upstream.sum(axis=(-1,) + batch_axes)
    d_input = np.zeros_like(x)
    for j in range(kernel):
        # output position t consumes input position t*stride + j
        d_input[..., j : j + stride * (w_out - 1) + 1 : stride] += np.einsum(
            "oi,...ow->...iw", weight[:, :, j], upstream, optimize=True
        )
    return Conv1dGrads(d_input, d_weight, d_bias)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(_f64(x), 0.0)


def relu_backward(upstream: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return _f64(upstream) * (_f64(x) > 0.0)


def gap1d(x: np.ndarray) -> np.ndarray:
    """Global average pooling over the spatial axis: (..., C, W) -> (..., C)."""
    return _f64(x).mean(axis=-1)


def gap1d_backward(upstream: np.ndarray, width: int) -> np.ndarray:
    up = _f64(upstream)
    return np.repeat(up[..., None], width, axis=-1) / width


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map: (..., n) @ weight.T + bias with weight (m, n)."""
    x, weight, bias = _f64(x), _f64(weight), _f64(bias)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"input dim {x.shape[-1]} != weight in-dim {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    return x @ weight.T + bias


def linear_backward(
    upstream: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> LinearGrads:
    upstream, x, weight = _f64(upstream), _f64(x), _f64(weight)
    if upstream.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"upstream dim {upstream.shape[-1]} != weight out-dim {weight.shape[0]}"
        )
    d_input = upstream @ weight
    d_weight = np.einsum("...m,...n->mn", upstream, x, optimize=True)
    batch_axes = tuple(range(upstream.ndim - 1))
    d_bias = upstream.sum(axis=batch_axes) if batch_axes else upstream.copy()
    return LinearGrads(d_input, d_weight, d_bias)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic; never overflows for finite input."""
    return expit(_f64(x))


def sigmoid_backward(upstream: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Backward given the saved forward output y = sigmoid(x)."""
    y = _f64(y)
    return _f64(upstream) * y * (1.0 - y)


def dropout(
    x: np.ndarray,
    rate: float,
    training: bool,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout: scales survivors by 1/(1-rate) at train time.

    Returns (output, keep_mask); the mask is None in eval mode or at rate 0
    and is what backward needs.
    """
    x = _f64(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ConfigError("training-mode dropout needs an rng")
    mask = rng.random(x.shape) >= rate
    return x * mask / (1.0 - rate), mask


def dropout_backward(
    upstream: np.ndarray, mask: np.ndarray | None, rate: float
) -> np.ndarray:
    up = _f64(upstream)
    if mask is None:
        return up
    return up * mask / (1.0 - rate)

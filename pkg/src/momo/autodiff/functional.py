"""Temporal convolution primitives over ``(batch, channels, time)`` tensors."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, Tensor, _make, as_tensor


def conv_output_length(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation along time with zero padding.

    ``x`` is ``(C_in, T)`` or ``(B, C_in, T)``; ``weight`` is ``(C_out, C_in, k)``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    unbatched = x.ndim == 2
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"conv1d expects (B, C, T) input and (O, C, k) kernel, got {x.shape} and {weight.shape}")
    B, C, T = xd.shape
    O, C_w, k = weight.shape
    if C_w != C:
        raise ValueError(f"conv1d channel mismatch: input has {C}, kernel expects {C_w}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    T_out = conv_output_length(T, k, stride, padding)
    if T_out < 1:
        raise ValueError(f"conv1d output length {T_out} < 1 (T={T}, k={k}, stride={stride}, padding={padding})")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (O,):
            raise ValueError(f"bias shape {bias.shape} != ({O},)")

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    windows = sliding_window_view(xp, k, axis=2)[:, :, : stride * (T_out - 1) + 1 : stride, :]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(B * T_out, C * k)
    w2 = weight.data.reshape(O, C * k)
    out = (cols @ w2.T).reshape(B, T_out, O).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        g = g[None] if unbatched else g
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(B * T_out, O)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(O, C, k)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if x.requires_grad:
            # col2im one kernel tap at a time: each tap is a (C, O) @ (B, O, T_out) product
            taps = np.ascontiguousarray(weight.data.transpose(2, 1, 0))
            gxp = np.zeros((B, C, T + 2 * padding), dtype=DTYPE)
            stop = stride * (T_out - 1) + 1
            for j in range(k):
                gxp[:, :, j : j + stop : stride] += np.matmul(taps[j], g)
            gx = gxp[:, :, padding : padding + T] if padding else gxp
            if unbatched:
                gx = gx[0]
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out[0] if unbatched else out, parents, backward, "conv1d")


def _reflect_index(length: int, pad: int) -> np.ndarray:
    if length == 1:
        return np.zeros(length + 2 * pad, dtype=np.intp)
    return np.pad(np.arange(length), pad, mode="reflect")


def pad_reflect(x: Tensor, pad: int) -> Tensor:
    """Reflection padding of the last (time) axis, edge sample not repeated."""
    if pad == 0:
        return x
    T = x.shape[-1]
    idx = _reflect_index(T, pad)
    # one-hot gather matrix so the backward pass is a single matmul
    gather = np.zeros((len(idx), T), dtype=DTYPE)
    gather[np.arange(len(idx)), idx] = 1.0
    return _make(x.data[..., idx], (x,), lambda g: (g @ gather,), "pad_reflect")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    shape = x.shape

    def backward(g):
        return (g.reshape(*shape, factor).sum(axis=-1),)

    return _make(np.repeat(x.data, factor, axis=-1), (x,), backward, "upsample_nearest")


def project_joints(X: Tensor, rotation: np.ndarray) -> Tensor:
    """Apply a constant 2x3 linear map to every joint of a channel-major 3D sequence.

    ``X`` has shape ``(B, 3N, T)`` with channels ordered ``x0, y0, z0, x1, ...``;
    ``rotation`` is ``(B, 2, 3)`` (or ``(2, 3)``). Returns ``(B, 2N, T)``.
    """
    X = as_tensor(X)
    B, C3, T = X.shape
    N = C3 // 3
    R = np.broadcast_to(np.asarray(rotation, dtype=DTYPE), (B, 2, 3))
    Xj = X.data.reshape(B, N, 3, T)
    out = np.einsum("bij,bnjt->bnit", R, Xj).reshape(B, 2 * N, T)

    def backward(g):
        gj = g.reshape(B, N, 2, T)
        return (np.einsum("bij,bnit->bnjt", R, gj).reshape(B, 3 * N, T),)

    return _make(out, (X,), backward, "project_joints")

"""Hot loops of the layer stack: im2col and max pooling.

Each kernel has a numba implementation and a pure-numpy one producing
bit-identical results. numba is used when importable unless the environment
variable ``OSCIFIT_DISABLE_NUMBA`` is set to a truthy value; call
:func:`set_backend` to switch at runtime (tests and the benchmark do).
"""

import os

import numpy as np
from numpy.lib.stride_tricks import as_strided

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

__all__ = ["backend", "set_backend", "im2col", "maxpool_forward", "maxpool_backward"]


# ---------------------------------------------------------------- numpy path


def im2col_numpy(xpad, K, L):
    """(B, L+K-1, C) -> (B, L, K, C) with ``out[b,l,k] = xpad[b,l+k]``.

    Row ``(b, l)`` is the contiguous block ``xpad[b, l:l+K]``, so a strided view
    over the padded buffer gives every window without gathering.
    """
    xpad = np.ascontiguousarray(xpad)
    B, _, C = xpad.shape
    sb, sl, sc = xpad.strides
    win = as_strided(xpad, shape=(B, L, K * C), strides=(sb, sl, sc), writeable=False)
    return win.reshape(B, L, K, C).copy()


def maxpool_forward_numpy(x, width):
    B, L, C = x.shape
    Lo = -(-L // width)
    if Lo * width != L:
        padded = np.full((B, Lo * width, C), -np.inf, dtype=x.dtype)
        padded[:, :L] = x
    else:
        padded = x
    win = padded.reshape(B, Lo, width, C)
    idx = win.argmax(axis=2).astype(np.int32)
    y = np.take_along_axis(win, idx[:, :, None, :], axis=2)[:, :, 0, :]
    return np.ascontiguousarray(y), idx


def maxpool_backward_numpy(dy, idx, width, L):
    B, Lo, C = dy.shape
    dx = np.zeros((B, Lo, width, C), dtype=dy.dtype)
    np.put_along_axis(dx, idx[:, :, None, :], dy[:, :, None, :], axis=2)
    return np.ascontiguousarray(dx.reshape(B, Lo * width, C)[:, :L])


# ---------------------------------------------------------------- numba path

if numba is not None:

    @numba.njit(cache=True, nogil=True)
    def _im2col_nb(xpad, K, L):
        B = xpad.shape[0]
        C = xpad.shape[2]
        out = np.empty((B, L, K, C), dtype=xpad.dtype)
        for b in range(B):
            for l in range(L):
                out[b, l] = xpad[b, l:l + K]
        return out

    @numba.njit(cache=True, nogil=True)
    def _maxpool_forward_nb(x, width):
        B, L, C = x.shape
        Lo = (L + width - 1) // width
        y = np.empty((B, Lo, C), dtype=x.dtype)
        idx = np.empty((B, Lo, C), dtype=np.int32)
        for b in range(B):
            for o in range(Lo):
                start = o * width
                stop = min(start + width, L)
                for c in range(C):
                    best = x[b, start, c]
                    arg = 0
                    for j in range(start + 1, stop):
                        v = x[b, j, c]
                        if v > best:
                            best = v
                            arg = j - start
                    y[b, o, c] = best
                    idx[b, o, c] = arg
        return y, idx

    @numba.njit(cache=True, nogil=True)
    def _maxpool_backward_nb(dy, idx, width, L):
        B, Lo, C = dy.shape
        dx = np.zeros((B, L, C), dtype=dy.dtype)
        for b in range(B):
            for o in range(Lo):
                for c in range(C):
                    dx[b, o * width + idx[b, o, c], c] = dy[b, o, c]
        return dx


def im2col_numba(xpad, K, L):
    return _im2col_nb(np.ascontiguousarray(xpad), K, L)


def maxpool_forward_numba(x, width):
    return _maxpool_forward_nb(np.ascontiguousarray(x), width)


def maxpool_backward_numba(dy, idx, width, L):
    return _maxpool_backward_nb(np.ascontiguousarray(dy), idx, width, L)


# ---------------------------------------------------------------- dispatch

_BACKENDS = {
    "numpy": (im2col_numpy, maxpool_forward_numpy, maxpool_backward_numpy),
}
if numba is not None:
    _BACKENDS["numba"] = (im2col_numba, maxpool_forward_numba, maxpool_backward_numba)

_active = None
im2col = maxpool_forward = maxpool_backward = None


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels for all layers."""
    global _active, im2col, maxpool_forward, maxpool_backward
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(_BACKENDS)}")
    im2col, maxpool_forward, maxpool_backward = _BACKENDS[name]
    _active = name


def backend():
    return _active


def _default_backend():
    flag = os.environ.get("OSCIFIT_DISABLE_NUMBA", "").strip().lower()
    if flag in ("1", "true", "yes", "on") or "numba" not in _BACKENDS:
        return "numpy"
    return "numba"


set_backend(_default_backend())

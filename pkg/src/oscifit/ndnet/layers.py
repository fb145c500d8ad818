"""Layers operating on batched arrays.

Sequence tensors are ``(batch, length, channels)``, flat ones ``(batch, features)``.
Each layer caches what its backward pass needs during ``forward`` and returns
the input gradient from ``backward``; parameter gradients land in ``grads``
(same order as ``params``) and are overwritten on every backward call.
"""

import math

import numpy as np

from . import _kernels

__all__ = [
    "Layer",
    "Conv1D",
    "MaxPool1D",
    "UpSample1D",
    "Dense",
    "ReLU",
    "Sigmoid",
    "Linear",
    "Flatten",
    "Reshape",
    "Concat",
    "Sequential",
    "he_uniform",
    "NonFiniteError",
]


class NonFiniteError(FloatingPointError):
    pass


def he_uniform(fan_in, shape, rng, dtype=np.float32):
    """Uniform on ±sqrt(6 / fan_in)."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind = None
    params = ()
    grads = ()

    def hyper(self):
        return ()

    def output_shape(self, shape):
        return shape

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(str(h) for h in self.hyper())
        return f"{type(self).__name__}({args})"


class Conv1D(Layer):
    """Stride-1 convolution with "same" zero padding.

    ``y[l, o] = b[o] + sum_{k,i} x[l + k - (K-1)//2, i] * w[k, i, o]``; for even
    ``K`` the extra padding goes on the right. Set ``input_grad=False`` on a
    network's first layer to skip the unused input gradient.
    """

    kind = "conv1d"

    def __init__(self, cin, cout, kernel, rng=None, dtype=np.float32, input_grad=True):
        self.cin, self.cout, self.K = int(cin), int(cout), int(kernel)
        self.input_grad = bool(input_grad)
        if rng is None:
            w = np.zeros((self.K, self.cin, self.cout), dtype=dtype)
        else:
            w = he_uniform(self.K * self.cin, (self.K, self.cin, self.cout), rng, dtype)
        self.w = w
        self.b = np.zeros(self.cout, dtype=dtype)
        self.params = [self.w, self.b]
        self.grads = [np.zeros_like(self.w), np.zeros_like(self.b)]
        self.pad_left = (self.K - 1) // 2
        self.pad_right = self.K - 1 - self.pad_left

    def hyper(self):
        return (self.cin, self.cout, self.K, int(self.input_grad))

    def output_shape(self, shape):
        return (shape[0], self.cout)

    def forward(self, x):
        B, L, C = x.shape
        if C != self.cin:
            raise ValueError(f"Conv1D expects {self.cin} channels, got {C}")
        xpad = np.pad(x, ((0, 0), (self.pad_left, self.pad_right), (0, 0)))
        cols = _kernels.im2col(xpad, self.K, L).reshape(B * L, self.K * C)
        self._cols = cols
        self._shape = (B, L)
        y = cols @ self.w.reshape(self.K * C, self.cout)
        y += self.b
        return y.reshape(B, L, self.cout)

    def backward(self, dy):
        B, L = self._shape
        dy2 = dy.reshape(B * L, self.cout)
        self.grads[0][...] = (self._cols.T @ dy2).reshape(self.w.shape)
        self.grads[1][...] = dy2.sum(axis=0)
        self._cols = None
        if not self.input_grad:
            return None
        dypad = np.pad(dy, ((0, 0), (self.pad_right, self.pad_left), (0, 0)))
        cols = _kernels.im2col(dypad, self.K, L).reshape(B * L, self.K * self.cout)
        wflip = self.w[::-1].transpose(0, 2, 1).reshape(self.K * self.cout, self.cin)
        return (cols @ wflip).reshape(B, L, self.cin)


class MaxPool1D(Layer):
    """Non-overlapping max pooling; output length ceil(L / width).

    The trailing window may be partial. Ties send the gradient to the first
    maximal element.
    """

    kind = "maxpool1d"

    def __init__(self, width):
        if int(width) < 1:
            raise ValueError("pool width must be >= 1")
        self.width = int(width)

    def hyper(self):
        return (self.width,)

    def output_shape(self, shape):
        return (-(-shape[0] // self.width), shape[1])

    def forward(self, x):
        self._L = x.shape[1]
        y, self._idx = _kernels.maxpool_forward(x, self.width)
        return y

    def backward(self, dy):
        dx = _kernels.maxpool_backward(dy, self._idx, self.width, self._L)
        self._idx = None
        return dx


class UpSample1D(Layer):
    """Nearest-neighbour repetition along the length axis."""

    kind = "upsample1d"

    def __init__(self, factor):
        if int(factor) < 1:
            raise ValueError("upsample factor must be >= 1")
        self.factor = int(factor)

    def hyper(self):
        return (self.factor,)

    def output_shape(self, shape):
        return (shape[0] * self.factor, shape[1])

    def forward(self, x):
        return np.repeat(x, self.factor, axis=1)

    def backward(self, dy):
        B, L, C = dy.shape
        return dy.reshape(B, L // self.factor, self.factor, C).sum(axis=2)


class Dense(Layer):
    kind = "dense"

    def __init__(self, nin, nout, rng=None, dtype=np.float32):
        self.nin, self.nout = int(nin), int(nout)
        if rng is None:
            w = np.zeros((self.nin, self.nout), dtype=dtype)
        else:
            w = he_uniform(self.nin, (self.nin, self.nout), rng, dtype)
        self.w = w
        self.b = np.zeros(self.nout, dtype=dtype)
        self.params = [self.w, self.b]
        self.grads = [np.zeros_like(self.w), np.zeros_like(self.b)]

    def hyper(self):
        return (self.nin, self.nout)

    def output_shape(self, shape):
        return (self.nout,)

    def forward(self, x):
        if x.shape[-1] != self.nin:
            raise ValueError(f"Dense expects {self.nin} features, got {x.shape[-1]}")
        self._x = x
        return x @ self.w + self.b

    def backward(self, dy):
        self.grads[0][...] = self._x.T @ dy
        self.grads[1][...] = dy.sum(axis=0)
        self._x = None
        return dy @ self.w.T


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        # tanh form never overflows
        y = 0.5 * (1.0 + np.tanh(0.5 * x))
        self._y = y.astype(x.dtype, copy=False)
        return self._y

    def backward(self, dy):
        return dy * self._y * (1.0 - self._y)


class Linear(Layer):
    kind = "linear"

    def forward(self, x):
        return x

    def backward(self, dy):
        return dy


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (math.prod(shape),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, *shape):
        self.shape = tuple(int(s) for s in shape)

    def hyper(self):
        return self.shape

    def output_shape(self, shape):
        if math.prod(shape) != math.prod(self.shape):
            raise ValueError(f"cannot reshape {shape} to {self.shape}")
        return self.shape

    def forward(self, x):
        self._shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Concat(Layer):
    """Join flat inputs along the feature axis; backward splits the gradient."""

    kind = "concat"

    def forward(self, xs):
        self._sizes = [x.shape[-1] for x in xs]
        return np.concatenate(xs, axis=-1)

    def backward(self, dy):
        cuts = np.cumsum(self._sizes)[:-1]
        return np.split(dy, cuts, axis=-1)


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self):
        return [g for layer in self.layers for g in layer.grads]

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
            if dy is None:
                break
        return dy

    def n_params(self):
        return sum(p.size for p in self.params)

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

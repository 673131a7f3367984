"""Cross-layer-connected network blocks: forward-Euler, LeapFrog and 3-stage
Runge-Kutta wirings over substitutable sub-operations, plus the plain cascaded
stack used as the baseline.

Sub-operations follow the layer protocol (forward / backward / params), so the
integrator oracles in the tests can inject constant or linear maps in place of
the convolutional ones.
"""

from __future__ import annotations

import numpy as np

from .engine import ConvLayer, Parameter, relu_backward, relu_forward


class GOp:
    """ReLU -> 3x3 conv -> learnable scalar multiplier (channel-preserving)."""

    def __init__(self, channels: int, rng=None):
        self.conv = ConvLayer(3, 3, channels, channels, rng)
        self.multiplier = Parameter(1.0)
        self._x = None
        self._y = None

    def params(self):
        return self.conv.params() + [self.multiplier]

    def forward(self, x):
        self._x = x
        y = self.conv.forward(relu_forward(x))
        self._y = y
        return float(self.multiplier.value) * y

    def backward(self, grad):
        self.multiplier.grad += np.sum(grad * self._y)
        ga = self.conv.backward(float(self.multiplier.value) * grad)
        return relu_backward(ga, self._x)


class GPrimeOp:
    """Two (ReLU -> 3x3 conv) stages in sequence (channel-preserving)."""

    def __init__(self, channels: int, rng=None):
        self.conv1 = ConvLayer(3, 3, channels, channels, rng)
        self.conv2 = ConvLayer(3, 3, channels, channels, rng)
        self._x = None
        self._mid = None

    def params(self):
        return self.conv1.params() + self.conv2.params()

    def forward(self, x):
        self._x = x
        mid = self.conv1.forward(relu_forward(x))
        self._mid = mid
        return self.conv2.forward(relu_forward(mid))

    def backward(self, grad):
        g = relu_backward(self.conv2.backward(grad), self._mid)
        return relu_backward(self.conv1.backward(g), self._x)


def _tied_gprime(src: GPrimeOp) -> GPrimeOp:
    """A stage with its own forward caches but the same Parameter objects,
    so gradients from every stage accumulate into one weight set.
    """
    clone = GPrimeOp.__new__(GPrimeOp)
    for name in ("conv1", "conv2"):
        conv = getattr(src, name)
        tied = ConvLayer(conv.kh, conv.kw, conv.c_in, conv.c_out)
        tied.kernels = conv.kernels
        tied.bias = conv.bias
        setattr(clone, name, tied)
    clone._x = None
    clone._mid = None
    return clone


class RK3Block:
    """Three-stage Runge-Kutta wiring over three sub-operations.

    D1 = D0 + 1/2 k1;  D2 = D0 - k1 + 2 k2;  out = D0 + (k1 + 4 k2 + k3) / 6,
    with k_i the i-th sub-operation applied to D_{i-1}; k1 is evaluated once
    and reused.
    """

    conv_layers = 6

    def __init__(self, channels: int, rng=None, ops=None, shared: bool = False):
        if ops is None:
            if shared:
                first = GPrimeOp(channels, rng)
                ops = [first, _tied_gprime(first), _tied_gprime(first)]
            else:
                ops = [GPrimeOp(channels, rng) for _ in range(3)]
        if len(ops) != 3:
            raise ValueError("RK3 block needs exactly 3 sub-operations")
        self.ops = ops
        self.shared = shared

    def params(self):
        seen, out = set(), []
        for op in self.ops:
            for p in op.params():
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out

    def forward(self, d0):
        k1 = self.ops[0].forward(d0)
        d1 = d0 + 0.5 * k1
        k2 = self.ops[1].forward(d1)
        d2 = d0 - k1 + 2.0 * k2
        k3 = self.ops[2].forward(d2)
        return d0 + (k1 + 4.0 * k2 + k3) / 6.0

    def backward(self, grad):
        gd2 = self.ops[2].backward(grad / 6.0)
        gk2 = (4.0 / 6.0) * grad + 2.0 * gd2
        gk1 = grad / 6.0 - gd2
        gd0 = grad + gd2
        gd1 = self.ops[1].backward(gk2)
        gk1 = gk1 + 0.5 * gd1
        gd0 = gd0 + gd1
        return gd0 + self.ops[0].backward(gk1)


class LFBlock:
    """Six applications of the two-lag recurrence D_n = D_{n-2} + G_n(D_{n-1}),
    seeded with D1 = D2 = input.
    """

    conv_layers = 6

    def __init__(self, channels: int, rng=None, ops=None):
        if ops is None:
            ops = [GOp(channels, rng) for _ in range(6)]
        if len(ops) != 6:
            raise ValueError("LF block needs exactly 6 sub-operations")
        self.ops = ops

    def params(self):
        return [p for op in self.ops for p in op.params()]

    def forward(self, x):
        prev2, prev1 = x, x
        for op in self.ops:
            prev2, prev1 = prev1, prev2 + op.forward(prev1)
        return prev1

    def backward(self, grad):
        # states a1..a8, a1 = a2 = x, a_n = a_{n-2} + G(a_{n-1}); output a8
        g = [None] * 9
        g[8] = grad
        for n in range(8, 2, -1):
            gn = g[n]
            if g[n - 2] is None:
                g[n - 2] = gn
            else:
                g[n - 2] = g[n - 2] + gn
            gprev = self.ops[n - 3].backward(gn)
            if g[n - 1] is None:
                g[n - 1] = gprev
            else:
                g[n - 1] = g[n - 1] + gprev
        return g[1] + g[2]


class EulerBlock:
    """Six residual steps D_{n+1} = D_n + G_n(D_n) (ResNet-style baseline)."""

    conv_layers = 6

    def __init__(self, channels: int, rng=None, ops=None):
        if ops is None:
            ops = [GOp(channels, rng) for _ in range(6)]
        if len(ops) != 6:
            raise ValueError("Euler block needs exactly 6 sub-operations")
        self.ops = ops

    def params(self):
        return [p for op in self.ops for p in op.params()]

    def forward(self, x):
        for op in self.ops:
            x = x + op.forward(x)
        return x

    def backward(self, grad):
        for op in reversed(self.ops):
            grad = grad + op.backward(grad)
        return grad


class CascadedBlock:
    """Six (ReLU -> 3x3 conv) stages in sequence, no skip connections."""

    conv_layers = 6

    def __init__(self, channels: int, rng=None):
        self.convs = [ConvLayer(3, 3, channels, channels, rng) for _ in range(6)]
        self._inputs = None

    def params(self):
        return [p for c in self.convs for p in c.params()]

    def forward(self, x):
        inputs = []
        for conv in self.convs:
            inputs.append(x)
            x = conv.forward(relu_forward(x))
        self._inputs = inputs
        return x

    def backward(self, grad):
        for conv, x in zip(reversed(self.convs), reversed(self._inputs)):
            grad = relu_backward(conv.backward(grad), x)
        return grad


BLOCK_KINDS = {
    "rk3": RK3Block,
    "lf": LFBlock,
    "euler": EulerBlock,
    "cascaded": CascadedBlock,
}


def make_block(kind: str, channels: int, rng=None, **kwargs):
    if kind not in BLOCK_KINDS:
        raise ValueError(f"unknown block kind {kind!r}")
    return BLOCK_KINDS[kind](channels, rng, **kwargs)

"""Parameter containers and the few layer types the network is built from."""

import math

import numpy as np

from . import functional as F
from .tensor import Tensor, layer_norm


class Parameter(Tensor):
    """A leaf tensor that always records gradients."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{prefix}{name}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)


def kaiming_uniform(rng, shape, fan_in, dtype):
    # the a=sqrt(5) leaky-relu gain; bound reduces to 1/sqrt(fan_in)
    gain = math.sqrt(2.0 / (1.0 + 5.0))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel_size=1, stride=1, padding=None, groups=1, bias=True,
                 rng=None, dtype=np.float32, zero_init=False):
        if padding is None:
            padding = kernel_size // 2
        self.stride = stride
        self.padding = padding
        self.groups = groups
        shape = (cout, cin // groups, kernel_size, kernel_size)
        if zero_init:
            w = np.zeros(shape, dtype=dtype)
        else:
            fan_in = (cin // groups) * kernel_size * kernel_size
            w = kaiming_uniform(rng, shape, fan_in, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(cout, dtype=dtype)) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


def depthwise(channels, rng, dtype, kernel_size=3):
    return Conv2d(channels, channels, kernel_size, groups=channels, rng=rng, dtype=dtype)


class LayerNorm2d(Module):
    """Channel-wise layer norm applied at every spatial position."""

    def __init__(self, channels, eps=1e-5, dtype=np.float32):
        self.eps = eps
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x):
        return layer_norm(x, self.weight, self.bias, self.eps)

"""Layer building blocks on top of :mod:`tpt_aqa.autodiff`."""

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter


class Module:
    """Base class that discovers parameters and submodules from attributes."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def rename(self, prefix=""):
        """Set every parameter's ``name`` to its attribute path."""
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = Parameter("weight", rng.uniform(-bound, bound, (n_in, n_out)))
        self.bias = Parameter("bias", rng.uniform(-bound, bound, n_out)) if bias else None

    def __call__(self, x):
        y = ad.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim):
        self.gain = Parameter("gain", np.ones(dim))
        self.shift = Parameter("shift", np.zeros(dim))

    def __call__(self, x):
        return ad.layer_norm(x) * self.gain + self.shift


class MLP(Module):
    """Two linear layers with a ReLU between them."""

    def __init__(self, n_in, n_hidden, n_out, rng):
        self.fc1 = Linear(n_in, n_hidden, rng)
        self.fc2 = Linear(n_hidden, n_out, rng)

    def __call__(self, x):
        return self.fc2(ad.relu(self.fc1(x)))

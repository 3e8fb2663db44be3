"""Seeded parameter initialization helpers.

All trainable weights are drawn uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)]
from an explicit torch.Generator so runs are reproducible; biases start at
zero.
"""

import math

import torch
from torch import nn


def uniform_param(shape, fan_in: int, generator: torch.Generator | None = None,
                  dtype: torch.dtype = torch.float32) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    tensor = torch.empty(shape, dtype=dtype)
    tensor.uniform_(-bound, bound, generator=generator)
    return tensor


def seeded_linear(in_dim: int, out_dim: int, generator: torch.Generator | None = None,
                  dtype: torch.dtype = torch.float32, bias: bool = True) -> nn.Linear:
    layer = nn.Linear(in_dim, out_dim, bias=bias, dtype=dtype)
    with torch.no_grad():
        layer.weight.copy_(uniform_param((out_dim, in_dim), in_dim, generator, dtype))
        if bias:
            layer.bias.zero_()
    return layer

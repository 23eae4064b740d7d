"""
Module system: parameter registration, deterministic naming, state dicts and the
building-block layers used by the codec and the estimators.

Weights of linear and convolutional layers are drawn uniformly in
``±1/sqrt(fan_in)``; embedding tables from ``N(0, 0.02)``. All draws come from an
explicitly passed generator.
"""

import hashlib
from typing import Dict, Iterator, List, Tuple

import numpy as np

from src.autodiff import functional as F
from src.autodiff.tensor import Tensor, get_dtype, matmul
from src.models.base import ShapeError, ValidationError


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data: np.ndarray, name: str = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """
    Base class for layers and models.

    Parameters and sub-modules are discovered from attributes in assignment order,
    which makes ``named_parameters`` (and therefore checkpoints) deterministic.
    """

    training: bool = True

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + '.')
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item
            elif isinstance(value, dict):
                for key in value:
                    item = value[key]
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{key}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator['Module']:
        yield self
        for value in vars(self).values():
            children = value if isinstance(value, (list, tuple)) else \
                list(value.values()) if isinstance(value, dict) else [value]
            for child in children:
                if isinstance(child, Module):
                    yield from child.modules()

    def train(self, mode: bool = True) -> 'Module':
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if strict and (missing or unexpected):
            raise ValidationError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}", "state")
        for name, p in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError('load_state_dict', p.shape, value.shape, detail=name)
            p.data = value.astype(p.data.dtype, copy=True)

    def to_dtype(self, dtype) -> 'Module':
        """Cast every parameter (used to switch a model into double precision)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def checksum(self, prefix: str = '') -> str:
        """sha256 over the parameters whose names start with ``prefix``."""
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            if name.startswith(prefix):
                h.update(name.encode())
                h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(get_dtype())


class Linear(Module):
    """``y = x @ W + b`` with W laid out [in, out]."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(_uniform(rng, (in_features, out_features), in_features))
        self.bias = Parameter(_uniform(rng, (out_features,), in_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError('linear', x.shape, self.weight.shape)
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding=0):
        fan_in = in_channels * kernel_size
        self.weight = Parameter(_uniform(rng, (out_channels, in_channels, kernel_size), fan_in))
        self.bias = Parameter(_uniform(rng, (out_channels,), fan_in))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, crop=0):
        fan_in = in_channels * kernel_size // max(stride, 1)
        self.weight = Parameter(_uniform(rng, (in_channels, out_channels, kernel_size), fan_in))
        self.bias = Parameter(_uniform(rng, (out_channels,), fan_in))
        self.stride = stride
        self.crop = crop

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose1d(x, self.weight, self.bias, self.stride, self.crop)


class Embedding(Module):
    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator):
        self.weight = Parameter(rng.normal(0.0, 0.02, size=(num_embeddings, dim)).astype(get_dtype()))

    def forward(self, indices: np.ndarray) -> Tensor:
        return F.embedding(self.weight, indices)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim, dtype=get_dtype()))
        self.beta = Parameter(np.zeros(dim, dtype=get_dtype()))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


def parameter_groups(module: Module, prefixes: List[str]) -> List[Parameter]:
    """Parameters whose names start with any of ``prefixes`` (in registration order)."""
    return [p for name, p in module.named_parameters() if any(name.startswith(x) for x in prefixes)]

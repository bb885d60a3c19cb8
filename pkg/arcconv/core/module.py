"""Module base class: named parameters, child modules and state dicts."""

import zlib
from collections import OrderedDict
from typing import Dict, Iterator, List, Sequence, Tuple, Union

import numpy as np

from arcconv.core.errors import DimensionError, MissingEntryError
from arcconv.core.tensor import Parameter, Tensor

Seed = Union[int, Sequence[int]]


def layer_rng(seed: int, name: str, stream: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for one named layer.

    Two layers with the same (seed, name, stream) draw identical values, which
    is what lets an ARC layer's expert 0 start from the weights of the static
    convolution it replaces.
    """
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8")), stream])


def he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def truncated_normal(rng: np.random.Generator, shape: Tuple[int, ...], std: float = 0.2,
                     bound: float = 2.0) -> np.ndarray:
    """Zero-mean normal samples redrawn until they fall within +-bound*std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > bound * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound * std
    return out


class Module:
    """Container of Parameters and child Modules, registered by attribute assignment."""

    def __init__(self):
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())

    def __setattr__(self, name, value):
        params = self.__dict__.get("_parameters")
        if params is None:
            raise AttributeError("Module.__init__() must run before attributes are assigned")
        if isinstance(value, Parameter):
            params[name] = value
            self._modules.pop(name, None)
        elif isinstance(value, Module):
            self._modules[name] = value
            params.pop(name, None)
        object.__setattr__(self, name, value)

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._parameters.items():
            yield prefix + name, param
        for name, module in self._modules.items():
            yield from module.named_parameters(prefix + name + ".")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for module in self._modules.values():
            yield from module.modules()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def param_groups(self, head_prefix: str = "head.") -> Dict[str, List[Parameter]]:
        """Split parameters into the classifier head and everything else (the backbone)."""
        groups: Dict[str, List[Parameter]] = {"backbone": [], "head": []}
        for name, param in self.named_parameters():
            groups["head" if name.startswith(head_prefix) else "backbone"].append(param)
        return groups

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, param.data.copy()) for name, param in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        """Copy arrays into the matching parameters; shapes and dtypes must agree exactly."""
        own = dict(self.named_parameters())
        for name, param in own.items():
            if name not in state:
                if strict:
                    raise MissingEntryError(name)
                continue
            value = np.asarray(state[name])
            if value.shape != param.shape or value.dtype != param.dtype:
                raise DimensionError(f"entry '{name}' is {value.dtype}{list(value.shape)}, "
                                     f"parameter is {param.dtype}{list(param.shape)}")
            param.data[...] = value
        if strict:
            extra = sorted(set(state) - set(own))
            if extra:
                raise DimensionError(f"unexpected entries: {', '.join(extra)}")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(params={self.num_parameters()})"


class Sequential(Module):
    """Children applied in order, named "0", "1", ..."""

    def __init__(self, *modules: Module):
        super().__init__()
        for index, module in enumerate(modules):
            setattr(self, str(index), module)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._modules.values())

    def __len__(self) -> int:
        return len(self._modules)

    def __getitem__(self, index: int) -> Module:
        return list(self._modules.values())[index]

    def forward(self, x: Tensor) -> Tensor:
        for module in self:
            x = module(x)
        return x

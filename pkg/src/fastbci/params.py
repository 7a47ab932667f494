"""Named parameter collections for the classifier and its optimizers."""

from __future__ import annotations

import copy

import numpy as np

from .autograd import Tensor


class ParamSet:
    """Ordered map name -> learnable Tensor, plus non-learnable buffers.

    Parameters always carry ``requires_grad=True``.  Buffers (plain ndarrays,
    e.g. batch-norm running statistics) are cloned and serialized with the
    set but never touched by optimizers.  ``meta`` carries serializable
    provenance (model spec, pretraining strategy, seed).
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.meta: dict = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params or name in self.buffers:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def add_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        if name in self._params or name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        arr = np.asarray(array, dtype=np.float64)
        self.buffers[name] = arr
        return arr

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def clone(self) -> "ParamSet":
        """Deep copy; the clone's tensors and buffers share no storage."""
        out = ParamSet()
        for name, t in self._params.items():
            out.add(name, Tensor(t.data.copy(), requires_grad=True))
        for name, b in self.buffers.items():
            out.buffers[name] = b.copy()
        out.meta = copy.deepcopy(self.meta)
        return out

    def param_count(self) -> int:
        return sum(t.size for t in self._params.values())


def params_equal(a: ParamSet, b: ParamSet) -> bool:
    """Bit-exact equality of parameter values and buffers."""
    if a.names() != b.names() or sorted(a.buffers) != sorted(b.buffers):
        return False
    for name, t in a.items():
        if not np.array_equal(t.data, b[name].data):
            return False
    for name, buf in a.buffers.items():
        if not np.array_equal(buf, b.buffers[name]):
            return False
    return True

"""Named parameter store shared by the model and the optimizer."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ShapeError, TrainingError


class ParamStore:
    """Ordered mapping of name -> trainable Tensor with gradient buffers."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ShapeError(f"duplicate parameter name {name!r}")
        t = Tensor(np.ascontiguousarray(array, dtype=self.dtype),
                   requires_grad=True, name=name)
        self._params[name] = t
        return t

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
            t.grad = None

    def fill_missing_grads(self) -> None:
        """Parameters unreachable from the loss get an explicit zero gradient."""
        for t in self._params.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)

    def check_finite_grads(self) -> None:
        for name, t in self._params.items():
            if t.grad is not None and not np.isfinite(t.grad).all():
                raise TrainingError(f"non-finite gradient in parameter {name!r}")

    def check_finite_params(self) -> None:
        for name, t in self._params.items():
            if not np.isfinite(t.data).all():
                raise TrainingError(f"non-finite value in parameter {name!r}")

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = [n for n in self._params if n not in state]
        extra = [n for n in state if n not in self._params]
        if missing or extra:
            raise ShapeError(
                f"parameter names mismatch; missing={missing[:3]} extra={extra[:3]}"
            )
        for name, t in self._params.items():
            arr = np.asarray(state[name], dtype=self.dtype)
            if arr.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name!r}: shape {arr.shape} != expected {t.data.shape}"
                )
            t.data = np.ascontiguousarray(arr)

"""Named parameter registry with gradient buffers."""

from __future__ import annotations

import numpy as np

__all__ = ["ParameterStore"]


class ParameterStore:
    """Maps unique names to (value, gradient, trainable) triples.

    Values and gradients are float64 arrays of identical shape. Gradients
    accumulate additively; call :meth:`zero_grads` between steps. Iteration
    order is registration order, so traversals are deterministic.
    """

    def __init__(self) -> None:
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self._trainable: dict[str, bool] = {}

    def register(self, name: str, value, trainable: bool = True) -> np.ndarray:
        if name in self._values:
            raise ValueError(f"parameter {name!r} already registered")
        arr = np.array(value, dtype=np.float64)
        self._values[name] = arr
        self._grads[name] = np.zeros_like(arr)
        self._trainable[name] = bool(trainable)
        return arr

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, flag: bool) -> None:
        if name not in self._values:
            raise KeyError(name)
        self._trainable[name] = bool(flag)

    def set_value(self, name: str, value) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._values[name].shape:
            raise ValueError(
                f"shape mismatch for {name!r}: {arr.shape} vs {self._values[name].shape}"
            )
        # Write in place so views held by callers stay valid.
        self._values[name][...] = arr

    def add_grad(self, name: str, g) -> None:
        grad = self._grads[name]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != grad.shape:
            raise ValueError(
                f"gradient shape mismatch for {name!r}: {g.shape} vs {grad.shape}"
            )
        grad += g

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g[...] = 0.0

    def names(self) -> list[str]:
        return list(self._values)

    def trainable_names(self) -> list[str]:
        return [n for n in self._values if self._trainable[n]]

    def quantize_float32(self) -> None:
        """Snap every value to the nearest float32-representable number.

        Keeps in-memory values exactly reproducible through float32
        serialization round-trips.
        """
        for v in self._values.values():
            v[...] = v.astype(np.float32).astype(np.float64)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: v.copy() for n, v in self._values.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for n, v in state.items():
            self.set_value(n, v)

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

"""Named parameter tensors with a flat vector view."""

from __future__ import annotations

import numpy as np


class ParamSet:
    """Ordered mapping of name -> float64 array.

    ``flat()`` concatenates in insertion order; ``load_flat`` writes a flat
    vector back in place. Optimizers and gradient checks work on the flat view.
    """

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        for name, arr in (arrays or {}).items():
            self[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value) -> None:
        self._arrays[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self) -> list[str]:
        return list(self._arrays)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._arrays.items()}

    @property
    def size(self) -> int:
        return sum(v.size for v in self._arrays.values())

    def flat(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._arrays.values()])

    def load_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ValueError(f"flat vector has shape {vec.shape}, expected ({self.size},)")
        pos = 0
        for name, arr in self._arrays.items():
            self._arrays[name] = vec[pos : pos + arr.size].reshape(arr.shape).copy()
            pos += arr.size

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self._arrays.items()})

    def zeros_like(self) -> "ParamSet":
        return ParamSet({k: np.zeros_like(v) for k, v in self._arrays.items()})

    def update(self, other: "ParamSet") -> None:
        for k, v in other.items():
            self[k] = v

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self._arrays.values())

    def norm(self) -> float:
        return float(np.sqrt(sum(float((v * v).sum()) for v in self._arrays.values())))

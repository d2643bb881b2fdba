"""Named parameter arrays backed by one contiguous float64 buffer."""

from __future__ import annotations

import json
from typing import Iterator, Mapping

import numpy as np

from .tensor import DTYPE

PARAM_FORMAT_VERSION = 1


class ParamStore:
    """Mapping name -> ndarray view into ``self.flat``.

    Names iterate in sorted order, so the flat layout (and every update that
    walks it) is deterministic.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        names = sorted(arrays)
        shapes = [tuple(np.shape(arrays[n])) for n in names]
        sizes = [int(np.prod(s)) for s in shapes]
        self.flat = np.zeros(sum(sizes), dtype=DTYPE)
        self._views: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape, size in zip(names, shapes, sizes):
            view = self.flat[offset:offset + size].reshape(shape)
            view[...] = arrays[name]
            self._views[name] = view
            offset += size

    @classmethod
    def _from_layout(cls, layout: "ParamStore", flat: np.ndarray) -> "ParamStore":
        new = cls.__new__(cls)
        new.flat = flat
        new._views = {}
        offset = 0
        for name, view in layout._views.items():
            new._views[name] = flat[offset:offset + view.size].reshape(view.shape)
            offset += view.size
        return new

    def zeros_like(self) -> "ParamStore":
        return ParamStore._from_layout(self, np.zeros_like(self.flat))

    def copy(self) -> "ParamStore":
        return ParamStore._from_layout(self, self.flat.copy())

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def __contains__(self, name) -> bool:
        return name in self._views

    def __iter__(self) -> Iterator[str]:
        return iter(self._views)

    def __len__(self) -> int:
        return len(self._views)

    def keys(self):
        return self._views.keys()

    def items(self):
        return self._views.items()

    def shapes(self) -> dict[str, tuple]:
        return {name: view.shape for name, view in self._views.items()}

    @property
    def size(self) -> int:
        return int(self.flat.size)

    def same_layout(self, other: "ParamStore") -> bool:
        return self.shapes() == other.shapes()

    def equal(self, other: "ParamStore") -> bool:
        return self.same_layout(other) and np.array_equal(self.flat, other.flat)

    def to_json(self) -> dict:
        return {
            "version": PARAM_FORMAT_VERSION,
            "tensors": {
                name: {"shape": list(view.shape), "values": view.ravel().tolist()}
                for name, view in self._views.items()
            },
        }

    @classmethod
    def from_json(cls, obj: dict, expected_shapes: Mapping[str, tuple] | None = None) -> "ParamStore":
        if obj.get("version") != PARAM_FORMAT_VERSION:
            raise ValueError(f"unsupported parameter format version {obj.get('version')!r}")
        arrays = {}
        for name, entry in obj["tensors"].items():
            shape = tuple(entry["shape"])
            values = np.asarray(entry["values"], dtype=DTYPE)
            if values.size != int(np.prod(shape)):
                raise ValueError(f"{name}: {values.size} values for shape {shape}")
            if not np.isfinite(values).all():
                raise ValueError(f"{name}: non-finite values")
            arrays[name] = values.reshape(shape)
        store = cls(arrays)
        if expected_shapes is not None and store.shapes() != {k: tuple(v) for k, v in expected_shapes.items()}:
            raise ValueError("parameter shapes do not match the model configuration")
        return store

    def dumps(self) -> str:
        return json.dumps(self.to_json())

"""Named parameter storage and the checkpoint file format."""

from __future__ import annotations

import io
import json
from typing import Iterator, Mapping

import numpy as np

from .autodiff import Parameter

CHECKPOINT_VERSION = 1
_HEADER_KEY = "__header__"


class ParamStore:
    """Ordered map from persistent parameter id to :class:`Parameter`.

    Creating a name twice is an error; sharing (weight tying) is done by
    handing the same Parameter to several components.
    """

    def __init__(self, seed: int = 0, dtype=np.float64):
        self.rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Parameter] = {}

    def create(self, name: str, shape, init: str = "glorot", scale: float | None = None) -> Parameter:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "normal":
            data = self.rng.normal(0.0, 1.0 if scale is None else scale, size=shape)
        elif init == "glorot":
            fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (shape[0], shape[0])
            limit = np.sqrt(6.0 / (fan_in + fan_out)) if scale is None else scale
            data = self.rng.uniform(-limit, limit, size=shape)
        elif init == "constant":
            data = np.full(shape, 0.0 if scale is None else scale)
        else:
            raise ValueError(f"unknown initialiser {init!r}")
        p = Parameter(data.astype(self.dtype), name)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def n_weights(self) -> int:
        return int(sum(p.data.size for p in self))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self._params.items()}

    def load_state_dict(self, arrays: Mapping[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for name, p in self._params.items():
            arr = np.asarray(arrays[name])
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.astype(self.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self:
            p.grad = None


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], header: dict) -> None:
    """Write ``arrays`` plus a JSON header as an uncompressed ``.npz`` archive.

    Values round-trip bit-exactly.
    """
    header = dict(header, version=CHECKPOINT_VERSION)
    payload = {name: np.asarray(a) for name, a in arrays.items()}
    if _HEADER_KEY in payload:
        raise KeyError(f"{_HEADER_KEY} is reserved")
    payload[_HEADER_KEY] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        if _HEADER_KEY not in z.files:
            raise ValueError(f"{path} is not a checkpoint (no header)")
        header = json.loads(bytes(z[_HEADER_KEY]).decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
        arrays = {k: z[k] for k in z.files if k != _HEADER_KEY}
    return arrays, header

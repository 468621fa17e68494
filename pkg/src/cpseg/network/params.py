"""Named parameter registry and the checkpoint file format.

Checkpoint layout (all integers little-endian)::

    b"CPSEGCK1"                magic + format version
    uint64                     manifest length in bytes
    manifest                   UTF-8 JSON: config, seed, entry table
    payload                    concatenated little-endian float32 arrays

Each manifest entry holds ``path``, ``shape``, ``kind`` (param or buffer)
and ``offset`` into the payload.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..tensor import Tensor

MAGIC = b"CPSEGCK1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ParameterStore:
    """Learnable tensors and non-learnable buffers keyed by dotted paths."""

    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def add(self, path: str, value: np.ndarray) -> Tensor:
        if path in self.params or path in self.buffers:
            raise KeyError(f"duplicate parameter path {path!r}")
        t = Tensor(np.asarray(value, dtype=np.float32), requires_grad=True, name=path, dtype=np.float32)
        self.params[path] = t
        return t

    def set_buffer(self, path: str, value: np.ndarray | None) -> None:
        if path in self.params:
            raise KeyError(f"{path!r} is a learnable parameter")
        if value is None:
            self.buffers.pop(path, None)
        else:
            self.buffers[path] = np.asarray(value, dtype=np.float32)

    def get_buffer(self, path: str) -> np.ndarray | None:
        return self.buffers.get(path)

    def __getitem__(self, path: str) -> Tensor:
        return self.params[path]

    def __contains__(self, path: str) -> bool:
        return path in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def count(self, prefix: str = "") -> int:
        """Number of learnable scalars (running statistics excluded)."""
        return sum(t.data.size for k, t in self.params.items() if k.startswith(prefix))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def cast(self, dtype) -> None:
        """Change the storage precision of every learnable tensor in place."""
        for t in self.params.values():
            t.data = t.data.astype(dtype)
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        out = {k: t.data.copy() for k, t in self.params.items()}
        out.update({k: v.copy() for k, v in self.buffers.items()})
        return out


def save_checkpoint(store: ParameterStore, path, config: dict, seed: int, extra: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for kind, items in (("param", ((k, t.data) for k, t in store.params.items())),
                        ("buffer", store.buffers.items())):
        for key, arr in items:
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            entries.append({"path": key, "shape": list(arr.shape), "kind": kind, "offset": offset})
            chunks.append(raw)
            offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "seed": int(seed),
        "config": config,
        "entries": entries,
    }
    if extra:
        manifest["extra"] = extra
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Return (manifest, params, buffers) with arrays as float32."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    (n,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16:16 + n].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {manifest.get('format_version')}")
    payload = memoryview(raw)[16 + n:]
    params, buffers = {}, {}
    for e in manifest["entries"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        start = e["offset"]
        if start + 4 * count > len(payload):
            raise CheckpointError(f"{path}: payload truncated at {e['path']}")
        arr = np.frombuffer(payload[start:start + 4 * count], dtype="<f4").astype(np.float32)
        arr = arr.reshape(e["shape"])
        (params if e["kind"] == "param" else buffers)[e["path"]] = arr
    return manifest, params, buffers


def load_into(store: ParameterStore, params: dict, buffers: dict) -> None:
    missing = set(store.params) - set(params)
    unknown = set(params) - set(store.params)
    if missing or unknown:
        raise CheckpointError(f"parameter mismatch: missing={sorted(missing)[:5]} unknown={sorted(unknown)[:5]}")
    for k, arr in params.items():
        t = store.params[k]
        if t.shape != arr.shape:
            raise CheckpointError(f"{k}: shape {arr.shape} != model {t.shape}")
        t.data = arr.astype(t.dtype)
        t.grad = None
    store.buffers.clear()
    for k, arr in buffers.items():
        store.buffers[k] = arr.astype(np.float32)

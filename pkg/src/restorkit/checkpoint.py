"""Directory checkpoints: params.bin + meta.json.

Tensors are stored name-sorted as raw little-endian bytes so the same state
always serializes to the same bytes (archive formats stamp timestamps, which
breaks that). meta.json carries the tensor index, a sha256 of params.bin,
and caller metadata (config snapshot, stage, epoch, seeds, loss digest).
"""

import hashlib
import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError

FORMAT_VERSION = 1
_ALLOWED_DTYPES = {"float32", "float64", "int64", "int32", "uint8"}


def _as_array(value) -> np.ndarray:
    if hasattr(value, "detach"):  # torch tensor, without importing torch here
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    if arr.dtype.name not in _ALLOWED_DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {arr.dtype.name!r}")
    return np.ascontiguousarray(arr)


def save_checkpoint(path: str | Path, tensors: Mapping[str, object], meta: Mapping | None = None) -> Path:
    """Write a checkpoint directory; returns its path."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index = {}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = _as_array(tensors[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        index[name] = {
            "dtype": arr.dtype.name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        blobs.append(raw)
        offset += len(raw)
    payload = b"".join(blobs)
    (path / "params.bin").write_bytes(payload)
    meta_out = {
        "format_version": FORMAT_VERSION,
        "params_sha256": hashlib.sha256(payload).hexdigest(),
        "tensors": index,
        "meta": dict(meta or {}),
    }
    (path / "meta.json").write_text(
        json.dumps(meta_out, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint directory back into numpy tensors plus caller meta."""
    path = Path(path)
    meta_path = path / "meta.json"
    bin_path = path / "params.bin"
    if not meta_path.is_file() or not bin_path.is_file():
        raise CheckpointError(f"checkpoint at {path} is missing meta.json or params.bin")
    try:
        meta_out = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint meta at {meta_path} is not valid JSON: {exc}") from exc
    version = meta_out.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version!r} unsupported (expected {FORMAT_VERSION})"
        )
    payload = bin_path.read_bytes()
    digest = hashlib.sha256(payload).hexdigest()
    if digest != meta_out.get("params_sha256"):
        raise CheckpointError(
            f"checkpoint payload corrupt: sha256 {digest} != recorded {meta_out.get('params_sha256')}"
        )
    tensors = {}
    for name, entry in meta_out["tensors"].items():
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        start, nbytes = entry["offset"], entry["nbytes"]
        raw = payload[start : start + nbytes]
        if len(raw) != nbytes:
            raise CheckpointError(f"checkpoint tensor {name!r} truncated")
        arr = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"])
        tensors[name] = arr.astype(np.dtype(entry["dtype"]), copy=True)
    return tensors, meta_out.get("meta", {})


def module_tensors(module, prefix: str = "") -> dict[str, np.ndarray]:
    """Flatten a torch module's state dict into checkpointable arrays."""
    out = {}
    for name, tensor in module.state_dict().items():
        out[prefix + name] = tensor.detach().cpu().numpy()
    return out


def load_module_tensors(module, tensors: Mapping[str, np.ndarray], prefix: str = "") -> None:
    """Load arrays saved by module_tensors back into a torch module."""
    import torch

    state = module.state_dict()
    stripped = {}
    for name in state:
        key = prefix + name
        if key not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {key!r}")
        arr = tensors[key]
        if list(arr.shape) != list(state[name].shape):
            raise CheckpointError(
                f"checkpoint tensor {key!r} has shape {list(arr.shape)}, "
                f"module expects {list(state[name].shape)}"
            )
        stripped[name] = torch.from_numpy(np.ascontiguousarray(arr)).to(state[name].dtype)
    module.load_state_dict(stripped)

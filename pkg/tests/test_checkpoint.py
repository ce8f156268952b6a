"""Checkpoint byte-determinism, integrity checks, and torch bridging."""

import json

import numpy as np
import pytest
import torch

from restorkit.checkpoint import (
    load_checkpoint,
    load_module_tensors,
    module_tensors,
    save_checkpoint,
)
from restorkit.errors import CheckpointError


def toy_tensors(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "layer.weight": rng.normal(size=(4, 3)).astype(np.float32),
        "layer.bias": rng.normal(size=(4,)).astype(np.float32),
        "steps": np.array([1000], dtype=np.int64),
    }


class TestRoundTrip:
    def test_values_preserved_exactly(self, tmp_path):
        tensors = toy_tensors()
        save_checkpoint(tmp_path / "ck", tensors, {"stage": "demo"})
        back, meta = load_checkpoint(tmp_path / "ck")
        assert set(back) == set(tensors)
        for name in tensors:
            assert back[name].dtype == tensors[name].dtype
            assert np.array_equal(back[name], tensors[name])
        assert meta == {"stage": "demo"}

    def test_same_state_same_bytes(self, tmp_path):
        tensors = toy_tensors()
        save_checkpoint(tmp_path / "a", tensors, {"k": 1})
        save_checkpoint(tmp_path / "b", tensors, {"k": 1})
        assert (tmp_path / "a/params.bin").read_bytes() == (tmp_path / "b/params.bin").read_bytes()
        assert (tmp_path / "a/meta.json").read_bytes() == (tmp_path / "b/meta.json").read_bytes()

    def test_insertion_order_does_not_matter(self, tmp_path):
        tensors = toy_tensors()
        reordered = dict(reversed(list(tensors.items())))
        save_checkpoint(tmp_path / "a", tensors)
        save_checkpoint(tmp_path / "b", reordered)
        assert (tmp_path / "a/params.bin").read_bytes() == (tmp_path / "b/params.bin").read_bytes()

    def test_accepts_torch_tensors(self, tmp_path):
        save_checkpoint(tmp_path / "ck", {"w": torch.ones(2, 2)})
        back, _ = load_checkpoint(tmp_path / "ck")
        assert np.array_equal(back["w"], np.ones((2, 2), dtype=np.float32))


class TestIntegrity:
    def test_missing_dir(self, tmp_path):
        with pytest.raises(CheckpointError, match="missing"):
            load_checkpoint(tmp_path / "nope")

    def test_corrupt_payload_detected(self, tmp_path):
        ck = save_checkpoint(tmp_path / "ck", toy_tensors())
        blob = bytearray((ck / "params.bin").read_bytes())
        blob[3] ^= 0xFF
        (ck / "params.bin").write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="corrupt"):
            load_checkpoint(ck)

    def test_wrong_format_version(self, tmp_path):
        ck = save_checkpoint(tmp_path / "ck", toy_tensors())
        meta = json.loads((ck / "meta.json").read_text())
        meta["format_version"] = 99
        (ck / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(ck)

    def test_invalid_meta_json(self, tmp_path):
        ck = save_checkpoint(tmp_path / "ck", toy_tensors())
        (ck / "meta.json").write_text("{nope")
        with pytest.raises(CheckpointError, match="JSON"):
            load_checkpoint(ck)

    def test_unsupported_dtype_rejected(self, tmp_path):
        with pytest.raises(CheckpointError, match="dtype"):
            save_checkpoint(tmp_path / "ck", {"c": np.zeros(2, dtype=np.complex64)})


class TestModuleBridge:
    def make_module(self):
        torch.manual_seed(0)
        return torch.nn.Sequential(torch.nn.Linear(3, 4), torch.nn.Linear(4, 2))

    def test_module_roundtrip_exact(self, tmp_path):
        mod = self.make_module()
        save_checkpoint(tmp_path / "ck", module_tensors(mod, "m."))
        tensors, _ = load_checkpoint(tmp_path / "ck")
        other = self.make_module()
        with torch.no_grad():
            for p in other.parameters():
                p.add_(1.0)
        load_module_tensors(other, tensors, "m.")
        for a, b in zip(mod.state_dict().values(), other.state_dict().values()):
            assert torch.equal(a, b)

    def test_missing_tensor_rejected(self, tmp_path):
        mod = self.make_module()
        tensors = module_tensors(mod, "m.")
        tensors.pop("m.0.bias")
        save_checkpoint(tmp_path / "ck", tensors)
        loaded, _ = load_checkpoint(tmp_path / "ck")
        with pytest.raises(CheckpointError, match="missing tensor"):
            load_module_tensors(self.make_module(), loaded, "m.")

    def test_shape_mismatch_rejected(self):
        mod = self.make_module()
        tensors = module_tensors(mod, "m.")
        tensors["m.0.weight"] = tensors["m.0.weight"][:, :2]
        with pytest.raises(CheckpointError, match="shape"):
            load_module_tensors(self.make_module(), tensors, "m.")

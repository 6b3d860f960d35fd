import struct

import numpy as np
import pytest
import torch

from hfdenoise.backbone import DESK_PRESET, Backbone
from hfdenoise.checkpoint import MAGIC, load_checkpoint, module_tensors, restore_module, save_checkpoint
from hfdenoise.errors import FormatError


class TestContainer:
    def test_round_trip(self, tmp_path, rng):
        tensors = {"a": rng.normal(size=(3, 4)).astype(np.float32), "b": torch.arange(5.0), "c": np.float32(2.5)}
        path = save_checkpoint(tmp_path / "x.ckpt", tensors, {"k": [1, 2]})
        got, meta = load_checkpoint(path)
        assert meta == {"k": [1, 2]}
        np.testing.assert_array_equal(got["a"], tensors["a"])
        np.testing.assert_array_equal(got["b"], np.arange(5, dtype=np.float32))
        assert got["c"].shape == () and got["c"] == 2.5

    def test_layout(self, tmp_path):
        path = save_checkpoint(tmp_path / "x.ckpt", {"w": np.array([1.0, -2.0], np.float32)})
        blob = path.read_bytes()
        assert blob.startswith(MAGIC)
        (hlen,) = struct.unpack_from("<Q", blob, len(MAGIC))
        payload = blob[len(MAGIC) + 8 + hlen:]
        assert payload == np.array([1.0, -2.0], "<f4").tobytes()

    def test_no_temp_file_left(self, tmp_path):
        save_checkpoint(tmp_path / "x.ckpt", {"w": np.zeros(2)})
        assert [p.name for p in tmp_path.iterdir()] == ["x.ckpt"]

    @pytest.mark.parametrize("blob", [b"", b"NOTACKPT\n" + b"\0" * 8, MAGIC + struct.pack("<Q", 3) + b"{{{"])
    def test_corrupt(self, tmp_path, blob):
        (tmp_path / "bad.ckpt").write_bytes(blob)
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "bad.ckpt")

    def test_truncated_payload(self, tmp_path):
        path = save_checkpoint(tmp_path / "x.ckpt", {"w": np.zeros(16, np.float32)})
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            load_checkpoint(path)


class TestModules:
    def test_backbone_round_trip_bit_exact(self, tmp_path):
        torch.manual_seed(0)
        a, b = Backbone(DESK_PRESET), Backbone(DESK_PRESET)
        path = save_checkpoint(tmp_path / "m.ckpt", module_tensors(a, "backbone"))
        restore_module(b, load_checkpoint(path)[0], "backbone")
        x = torch.randn(1, 1, 16, 16)
        assert torch.equal(a(x), b(x))

    def test_missing_entries(self):
        with pytest.raises(FormatError):
            restore_module(Backbone(DESK_PRESET), {}, "backbone")

import csv
import json
import struct

import numpy as np
import pytest

from mcno import io
from mcno.mc_bound import TrialConfig, run_trials
from mcno.model import MCNOConfig, forward, init_model
from mcno.rng import Rng
from mcno.spectral import Dataset
from mcno.training import EpochRow, TrainConfig, TrainReport


def sample_dataset(n=3, s=16):
    r = Rng(1)
    return Dataset("kdv", s, r.normal((n, s)), r.normal((n, s)),
                   {"seed": 7, "solver": {"dt": 1e-4}, "hi_res": 64})


# --- datasets ----------------------------------------------------------------------


class TestDataset:
    def test_round_trip_bitwise(self, tmp_path):
        ds = sample_dataset()
        p = tmp_path / "d.mcnd"
        io.save_dataset(p, ds)
        back = io.load_dataset(p)
        assert back.pde == "kdv" and back.resolution == 16
        assert np.array_equal(back.a, ds.a) and np.array_equal(back.u, ds.u)
        assert back.meta["seed"] == 7 and back.meta["solver"] == {"dt": 1e-4}

    def test_layout(self, tmp_path):
        ds = sample_dataset(2, 4)
        blob = io.dataset_bytes(ds)
        assert blob[:4] == b"MCND" and blob[4] == 1
        (n,) = struct.unpack("<I", blob[5:9])
        header = json.loads(blob[9:9 + n])
        assert header["dtype"] == "f64" and header["n_samples"] == 2 and header["resolution"] == 4
        payload = blob[9 + n:]
        assert len(payload) == 2 * 2 * 4 * 8
        np.testing.assert_array_equal(np.frombuffer(payload[:64], "<f8").reshape(2, 4), ds.a)

    def test_deterministic_bytes(self):
        assert io.dataset_bytes(sample_dataset()) == io.dataset_bytes(sample_dataset())

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "d.mcnd"
        p.write_bytes(b"XXXX" + io.dataset_bytes(sample_dataset())[4:])
        with pytest.raises(io.BadMagicError):
            io.load_dataset(p)

    def test_checkpoint_is_not_a_dataset(self, tmp_path):
        p = tmp_path / "m.mcnc"
        io.save_checkpoint(p, init_model(MCNOConfig(d_v=4, n_samples=4), 16, Rng(0)))
        with pytest.raises(io.BadMagicError):
            io.load_dataset(p)

    def test_version_mismatch(self, tmp_path):
        blob = bytearray(io.dataset_bytes(sample_dataset()))
        blob[4] = 2
        p = tmp_path / "d.mcnd"
        p.write_bytes(bytes(blob))
        with pytest.raises(io.VersionMismatchError):
            io.load_dataset(p)

    @pytest.mark.parametrize("cut", [3, 20, 8])
    def test_truncated(self, tmp_path, cut):
        blob = io.dataset_bytes(sample_dataset())
        p = tmp_path / "d.mcnd"
        p.write_bytes(blob[:-cut] if cut != 3 else blob[:cut])
        with pytest.raises(io.TruncatedPayloadError):
            io.load_dataset(p)

    def test_schema_missing_field(self, tmp_path):
        header = {"pde": "kdv", "resolution": 4, "dtype": "f64"}
        p = tmp_path / "d.mcnd"
        p.write_bytes(io._pack(b"MCND", header, b""))
        with pytest.raises(io.SchemaError) as e:
            io.load_dataset(p)
        assert e.value.field == "n_samples"

    def test_schema_bad_dtype(self, tmp_path):
        header = {"pde": "kdv", "n_samples": 1, "resolution": 1, "dtype": "f32"}
        p = tmp_path / "d.mcnd"
        p.write_bytes(io._pack(b"MCND", header, b"\0" * 16))
        with pytest.raises(io.SchemaError) as e:
            io.load_dataset(p)
        assert e.value.field == "dtype"

    def test_errors_are_distinct(self):
        kinds = {io.BadMagicError, io.VersionMismatchError, io.TruncatedPayloadError,
                 io.SchemaError}
        assert len(kinds) == 4 and all(issubclass(k, io.FormatError) for k in kinds)

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        io.save_dataset(tmp_path / "d.mcnd", sample_dataset())
        assert [p.name for p in tmp_path.iterdir()] == ["d.mcnd"]


# --- checkpoints ----------------------------------------------------------------------


class TestCheckpoint:
    @pytest.mark.parametrize("variant", ["global", "interp"])
    def test_round_trip_forward_bitwise(self, tmp_path, variant):
        m = init_model(MCNOConfig(kernel_variant=variant), 256, Rng(0))
        p = tmp_path / "m.mcnc"
        io.save_checkpoint(p, m)
        back = io.load_checkpoint(p)
        assert back.config == m.config and back.grid_size == 256
        assert np.array_equal(back.samples.indices, m.samples.indices)
        for k in m.params:
            assert np.array_equal(back.params[k].data, m.params[k].data)
        a = Rng(1).normal((2, 256))
        assert np.array_equal(forward(back, a).data, forward(m, a).data)

    def test_scales_round_trip(self, tmp_path):
        m = init_model(MCNOConfig(d_v=4, n_samples=4, d_proj=8), 16, Rng(0))
        m.scales = (0.6115876647652732, 0.009877564745365124)
        io.save_checkpoint(tmp_path / "m.mcnc", m)
        back = io.load_checkpoint(tmp_path / "m.mcnc")
        assert back.scales == m.scales
        a = Rng(1).normal((2, 16))
        assert np.array_equal(forward(back, a).data, forward(m, a).data)

    def test_bad_scales(self, tmp_path):
        blob = io.checkpoint_bytes(init_model(MCNOConfig(d_v=4, n_samples=4), 16, Rng(2)))
        (n,) = struct.unpack("<I", blob[5:9])
        header = json.loads(blob[9:9 + n])
        header["scales"] = [1.0, -1.0]
        p = tmp_path / "m.mcnc"
        p.write_bytes(io._pack(b"MCNC", header, blob[9 + n:]))
        with pytest.raises(io.SchemaError) as e:
            io.load_checkpoint(p)
        assert e.value.field == "scales"

    def test_deterministic_bytes(self):
        cfg = MCNOConfig(d_v=4, n_samples=4)
        assert io.checkpoint_bytes(init_model(cfg, 16, Rng(2))) == \
               io.checkpoint_bytes(init_model(cfg, 16, Rng(2)))

    def test_table_spans(self):
        m = init_model(MCNOConfig(d_v=4, n_samples=4), 16, Rng(2))
        blob = io.checkpoint_bytes(m)
        (n,) = struct.unpack("<I", blob[5:9])
        header = json.loads(blob[9:9 + n])
        offsets = [t["offset"] for t in header["tensors"]]
        sizes = [int(np.prod(t["shape"])) * 8 for t in header["tensors"]]
        assert offsets == list(np.cumsum([0] + sizes[:-1]))
        assert len(blob) - 9 - n == sum(sizes)

    def test_truncated(self, tmp_path):
        blob = io.checkpoint_bytes(init_model(MCNOConfig(d_v=4, n_samples=4), 16, Rng(2)))
        p = tmp_path / "m.mcnc"
        p.write_bytes(blob[:-8])
        with pytest.raises(io.TruncatedPayloadError):
            io.load_checkpoint(p)

    def test_bad_config(self, tmp_path):
        header = {"config": {"d_v": 4, "colour": 1}, "grid_size": 16, "sample_indices": [1, 2],
                  "tensors": []}
        p = tmp_path / "m.mcnc"
        p.write_bytes(io._pack(b"MCNC", header, b""))
        with pytest.raises(io.SchemaError) as e:
            io.load_checkpoint(p)
        assert e.value.field == "config"


# --- metrics and reports ----------------------------------------------------------------


def test_metrics_csv(tmp_path):
    rows = [EpochRow(e, 1 / (e + 3), 1 / (e + 7), 1e-3 / (e + 1), 0.123456789012345 * e)
            for e in range(4)]
    p = tmp_path / "metrics.csv"
    io.export_metrics(p, TrainReport(rows, {}))
    with open(p, newline="") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["epoch", "train_rel_l2", "test_rel_l2", "lr", "seconds"]
    assert [int(r[0]) for r in table[1:]] == [0, 1, 2, 3]
    for r, row in zip(rows, table[1:]):
        assert abs(float(row[1]) - r.train_rel_l2) <= 1e-11 * r.train_rel_l2
        for cell in row[1:]:
            assert "e" not in cell.lower()
            if float(cell) != 0.0:
                assert len(cell.replace(".", "").lstrip("0")) >= 10


def test_bound_report_export(tmp_path):
    rep = run_trials(TrialConfig(kernel="linear", n_grid=(8,), n=(2, 4), trials=5, probes=4))
    io.export_bound_report(str(tmp_path / "rep"), rep)
    data = json.loads((tmp_path / "rep.json").read_text())
    assert len(data["cells"]) == 2
    with open(tmp_path / "rep.csv", newline="") as fh:
        table = list(csv.DictReader(fh))
    assert {"bound_theorem", "bound_appendix", "coverage"} <= set(table[0])


# --- configs ----------------------------------------------------------------------------


class TestConfig:
    def test_valid(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"model": {"d_v": 32, "kernel_variant": "global"},
                                 "train": {"epochs": 5, "base_lr": 0.01}}))
        out = io.load_config(str(p))
        assert out["model"] == MCNOConfig(d_v=32, kernel_variant="global")
        assert out["train"] == TrainConfig(epochs=5, base_lr=0.01)

    @pytest.mark.parametrize("raw,field", [
        ({"model": {"width": 3}}, "model.width"),
        ({"optim": {}}, "optim"),
        ({"model": {"d_v": "64"}}, "model.d_v"),
        ({"model": {"d_v": 6.5}}, "model.d_v"),
        ({"model": {"include_coordinate": 1}}, "model.include_coordinate"),
        ({"train": {"batch_size": 0}}, "train"),
        ({"model": {"n_samples": 1}}, "model"),
        ([1, 2], "config"),
    ])
    def test_rejections_name_field(self, raw, field):
        with pytest.raises(io.SchemaError) as e:
            io.load_config(raw if isinstance(raw, dict) else json.dumps(raw))
        assert e.value.field == field

    def test_invalid_json(self):
        with pytest.raises(io.SchemaError):
            io.load_config("{not json")

import json
import struct
from collections import OrderedDict

import numpy as np
import pytest

import leakmem.gradcheck as gradcheck_mod
from leakmem import autodiff as ad
from leakmem.autodiff import Tensor
from leakmem.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from leakmem.cli import main
from leakmem.config import parse_run_config
from leakmem.errors import CheckpointError, ConfigError
from leakmem.model import AnimationModel

from conftest import TINY_MODEL


TINY_RUN = {
    "world": {"seed": 3, "identity_count": 6, "motions_per_identity": 8},
    "model": {"channels": [2, 2, 4, 8, 2], "spatial": [6, 5, 4, 3, 2], "d_top": 8,
              "d_z": 6, "d_model": 8, "num_queries": 3, "num_blocks": 2, "ffn_hidden": 12,
              "slots": 10, "d_c": 4, "heads": 2, "gen_hidden": 16, "disc_hidden": 8},
    "train": {"seed": 0, "steps": 6, "batch_size": 4, "eval_every": 3, "eval_pairs": 8},
}


def write_config(tmp_path, data=None):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data if data is not None else TINY_RUN))
    return str(path)


class TestCheckpointFormat:
    def params(self):
        rng = np.random.default_rng(0)
        return OrderedDict([
            ("a.w", Tensor(rng.normal(size=(3, 4)).astype(np.float32))),
            ("b.bias", Tensor(rng.normal(size=5).astype(np.float32))),
        ])

    def test_round_trip_byte_identical(self, tmp_path):
        path = str(tmp_path / "ckpt.bin")
        save_checkpoint(path, self.params(), {"train": {"seed": 1}})
        blob1 = open(path, "rb").read()
        params, config, _ = load_checkpoint(path)
        save_checkpoint(path, params, config)
        blob2 = open(path, "rb").read()
        assert blob1 == blob2

    def test_truncated_payload_reports_byte_counts(self, tmp_path):
        path = str(tmp_path / "ckpt.bin")
        save_checkpoint(path, self.params(), {})
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:-8])
        with pytest.raises(CheckpointError, match=r"\d+ bytes"):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = str(tmp_path / "ckpt.bin")
        open(path, "wb").write(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path):
        path = str(tmp_path / "ckpt.bin")
        header = json.dumps({"format_version": 99, "config": {}, "manifest": [],
                             "payload_bytes": 0}).encode()
        open(path, "wb").write(MAGIC + struct.pack("<Q", len(header)) + header)
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_independent_reader_recovers_values(self, tmp_path):
        # parse the file with plain struct/json, proving the format is
        # loadable without this library
        path = str(tmp_path / "ckpt.bin")
        params = self.params()
        save_checkpoint(path, params, {"note": 1})
        blob = open(path, "rb").read()
        assert blob[:8] == b"LEAKMEM\x00"
        (header_len,) = struct.unpack("<Q", blob[8:16])
        header = json.loads(blob[16:16 + header_len])
        payload = blob[16 + header_len:]
        assert header["format_version"] == 1
        for entry in header["manifest"]:
            count = int(np.prod(entry["shape"]))
            raw = payload[entry["offset"]: entry["offset"] + 4 * count]
            values = struct.unpack("<" + "f" * count, raw)
            expected = params[entry["name"]].data.reshape(-1)
            np.testing.assert_allclose(values, expected, rtol=0, atol=0)

    def test_every_parameter_once_in_manifest(self, tmp_path):
        model = AnimationModel(64, TINY_MODEL, seed=0)
        path = str(tmp_path / "ckpt.bin")
        save_checkpoint(path, model.parameters(), {})
        _, _, header = load_checkpoint(path)
        names = [e["name"] for e in header["manifest"]]
        assert len(names) == len(set(names))
        assert set(names) == set(model.parameters().keys())


class TestRunConfigParsing:
    def test_missing_required_field_named(self):
        data = {"world": {"seed": 0}, "train": {"seed": 0}}
        with pytest.raises(ConfigError, match="train.steps"):
            parse_run_config(data)

    def test_unknown_field_named(self):
        data = {"world": {"seed": 0, "bogus": 1}, "train": {"seed": 0, "steps": 1}}
        with pytest.raises(ConfigError, match="world.bogus"):
            parse_run_config(data)

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="section"):
            parse_run_config({"world": {"seed": 0}, "train": {"seed": 0, "steps": 1},
                              "extra": {}})

    def test_defaults_fill_optional_fields(self):
        cfg = parse_run_config({"world": {"seed": 0}, "train": {"seed": 0, "steps": 5}})
        assert cfg.model.slots == 64
        assert cfg.train.batch_size == 8

    def test_round_trip_through_dict(self):
        cfg = parse_run_config(TINY_RUN)
        again = parse_run_config(cfg.to_dict())
        assert again == cfg


class TestCliTrain:
    def test_missing_field_exits_2(self, tmp_path, capsys):
        bad = {"world": {"seed": 0}, "train": {"seed": 0}}
        code = main(["train", "--config", write_config(tmp_path, bad),
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "train.steps" in capsys.readouterr().err

    def test_writes_three_artifacts(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["train", "--config", write_config(tmp_path), "--out", str(out)])
        assert code == 0
        assert (out / "checkpoint.bin").exists()
        assert (out / "config.json").exists()
        assert (out / "metrics.jsonl").exists()
        lines = (out / "metrics.jsonl").read_text().strip().splitlines()
        assert len(lines) == TINY_RUN["train"]["steps"]
        record = json.loads(lines[0])
        for key in ("step", "L_rec", "L_adv", "L_dis", "L_dmem", "L_align", "total"):
            assert key in record

    def test_rerun_identical_outputs(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["train", "--config", cfg, "--out", str(out1)]) == 0
        assert main(["train", "--config", cfg, "--out", str(out2)]) == 0
        assert (out1 / "metrics.jsonl").read_bytes() == (out2 / "metrics.jsonl").read_bytes()
        assert (out1 / "checkpoint.bin").read_bytes() == (out2 / "checkpoint.bin").read_bytes()

    def test_env_seed_override(self, tmp_path, capsys, monkeypatch):
        cfg = write_config(tmp_path)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["train", "--config", cfg, "--out", str(out1)]) == 0
        monkeypatch.setenv("LEAKMEM_SEED", "9")
        assert main(["train", "--config", cfg, "--out", str(out2)]) == 0
        assert (out1 / "metrics.jsonl").read_bytes() != (out2 / "metrics.jsonl").read_bytes()
        snap = json.loads((out2 / "config.json").read_text())
        assert snap["train"]["seed"] == 9


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli-run")
    cfg_path = tmp / "config.json"
    run = json.loads(json.dumps(TINY_RUN))
    run["train"]["steps"] = 12
    cfg_path.write_text(json.dumps(run))
    out = tmp / "out"
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    return out


class TestCliProbeAndInspect:
    def test_probe_writes_five_row_csv_both_settings(self, trained_dir, capsys):
        ckpt = str(trained_dir / "checkpoint.bin")
        for setting in ("self", "cross"):
            assert main(["probe", "--ckpt", ckpt, "--setting", setting,
                         "--pairs", "16"]) == 0
            csv_path = trained_dir / f"probe_{setting}.csv"
            rows = csv_path.read_text().strip().splitlines()
            assert len(rows) == 6  # header + scales 1..5
            report = json.loads((trained_dir / f"probe_{setting}.json").read_text())
            assert sorted(report["scales"]) == ["1", "2", "3", "4", "5"]

    def test_probe_idempotent(self, trained_dir, capsys):
        ckpt = str(trained_dir / "checkpoint.bin")
        assert main(["probe", "--ckpt", ckpt, "--setting", "self", "--pairs", "16"]) == 0
        first = (trained_dir / "probe_self.json").read_bytes()
        assert main(["probe", "--ckpt", ckpt, "--setting", "self", "--pairs", "16"]) == 0
        assert (trained_dir / "probe_self.json").read_bytes() == first

    def test_probe_truncated_checkpoint_exits_4(self, trained_dir, tmp_path, capsys):
        blob = (trained_dir / "checkpoint.bin").read_bytes()
        broken = tmp_path / "broken.bin"
        broken.write_bytes(blob[:-16])
        code = main(["probe", "--ckpt", str(broken), "--setting", "self"])
        assert code == 4
        assert "bytes" in capsys.readouterr().err

    def test_memory_inspect_fresh_banks_near_uniform(self, trained_dir, capsys):
        ckpt = str(trained_dir / "checkpoint.bin")
        assert main(["memory-inspect", "--ckpt", ckpt, "--batch", "128"]) == 0
        stats = json.loads(capsys.readouterr().out)
        ln_s = stats["max_usage_entropy"]
        assert abs(stats["usage_entropy_driven"] - ln_s) < 0.2
        assert stats["min_slot_norm"] >= 1e-6
        assert len(stats["slot_norms"]) == stats["slots"]

    def test_memory_inspect_without_banks_exits_5(self, trained_dir, tmp_path, capsys):
        params, config, _ = load_checkpoint(str(trained_dir / "checkpoint.bin"))
        reduced = OrderedDict((n, v) for n, v in params.items()
                              if not n.startswith("edi."))
        stripped = tmp_path / "stripped.bin"
        save_checkpoint(str(stripped), reduced, config)
        code = main(["memory-inspect", "--ckpt", str(stripped)])
        assert code == 5
        assert "edi.M_d" in capsys.readouterr().err

    def test_eval_reports_metric_suite(self, trained_dir, capsys):
        ckpt = str(trained_dir / "checkpoint.bin")
        assert main(["eval", "--ckpt", ckpt]) == 0
        suite = json.loads(capsys.readouterr().out)
        for key in ("motion_leakage_r2", "heldout_align_kl", "retrieval_fidelity",
                    "rec_error_self", "rec_error_cross", "cross_minus_self_gap"):
            assert key in suite


class TestCliGradcheck:
    def test_report_is_machine_readable(self, capsys):
        assert main(["gradcheck", "--probes", "2"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["all_passed"] is True
        assert "matmul" in report["checks"]

    def test_corrupted_adjoint_fails_with_name(self, capsys, monkeypatch):
        # negative control: break one adjoint and the harness must name it
        true_tanh = ad.tanh

        def corrupt_tanh(a):
            out = true_tanh(a)
            if getattr(out, "requires_grad", False):
                node = ad._state.stack[-1].nodes[-1]
                node.bwd = lambda g: (g * 0.5,)
            return out

        monkeypatch.setattr(gradcheck_mod.ad, "tanh", corrupt_tanh)
        code = main(["gradcheck", "--probes", "2"])
        report = json.loads(capsys.readouterr().out)
        assert code == 1
        assert report["checks"]["tanh"]["passed"] is False
        assert report["all_passed"] is False

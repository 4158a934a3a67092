"""Config resolution: defaults, file merge, overrides, validation."""

import json

import pytest

from ticdiff.config import (
    DEFAULTS,
    arch_for,
    canonical_json,
    layout_for,
    resolve_config,
    train_config_for,
)
from ticdiff.errors import DataFormatError, InvalidArgumentError
from ticdiff.layout import preset_layout


class TestResolution:
    def test_no_inputs_yields_defaults(self):
        cfg = resolve_config()
        assert cfg == DEFAULTS
        assert cfg is not DEFAULTS
        cfg["seed"] = 123
        assert DEFAULTS["seed"] == 0

    def test_file_values_merge(self, tmp_path):
        f = tmp_path / "run.json"
        f.write_text(json.dumps({"seed": 7, "training": {"lr": 0.01}}))
        cfg = resolve_config(str(f))
        assert cfg["seed"] == 7
        assert cfg["training"]["lr"] == 0.01
        assert cfg["training"]["batch"] == DEFAULTS["training"]["batch"]

    def test_overrides_win_over_file(self, tmp_path):
        f = tmp_path / "run.json"
        f.write_text(json.dumps({"seed": 7}))
        cfg = resolve_config(str(f), ["seed=9"])
        assert cfg["seed"] == 9

    def test_dotted_override_reaches_nested_key(self):
        cfg = resolve_config(None, ["sampling.mode=ddpm", "training.batch=4"])
        assert cfg["sampling"]["mode"] == "ddpm"
        assert cfg["training"]["batch"] == 4

    def test_bare_word_override_is_a_string(self):
        cfg = resolve_config(None, ["schedule.kind=cosine"])
        assert cfg["schedule"]["kind"] == "cosine"

    def test_unknown_key_rejected(self):
        with pytest.raises(InvalidArgumentError):
            resolve_config(None, ["sede=1"])
        with pytest.raises(InvalidArgumentError):
            resolve_config(None, ["training.typo=1"])

    def test_unknown_file_key_rejected(self, tmp_path):
        f = tmp_path / "run.json"
        f.write_text(json.dumps({"trainnig": {"lr": 0.1}}))
        with pytest.raises(InvalidArgumentError):
            resolve_config(str(f))

    def test_wrong_type_rejected(self):
        with pytest.raises(InvalidArgumentError):
            resolve_config(None, ["seed=oops"])
        with pytest.raises(InvalidArgumentError):
            resolve_config(None, ["threads=true"])
        with pytest.raises(InvalidArgumentError):
            resolve_config(None, ["task=3"])

    def test_int_accepted_for_float_slot(self):
        cfg = resolve_config(None, ["training.lr=1"])
        assert cfg["training"]["lr"] == 1.0
        assert isinstance(cfg["training"]["lr"], float)

    def test_malformed_override_rejected(self):
        with pytest.raises(InvalidArgumentError):
            resolve_config(None, ["justakey"])
        with pytest.raises(InvalidArgumentError):
            resolve_config(None, ["=5"])

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(DataFormatError):
            resolve_config(str(tmp_path / "absent.json"))

    def test_invalid_json_rejected(self, tmp_path):
        f = tmp_path / "run.json"
        f.write_text("{not json")
        with pytest.raises(InvalidArgumentError):
            resolve_config(str(f))

    def test_non_object_file_rejected(self, tmp_path):
        f = tmp_path / "run.json"
        f.write_text("[1, 2]")
        with pytest.raises(InvalidArgumentError):
            resolve_config(str(f))

    def test_canonical_json_reparses_identically(self):
        cfg = resolve_config(None, ["task=style-transfer", "training.lr=0.002"])
        assert json.loads(canonical_json(cfg)) == cfg


class TestValidation:
    @pytest.mark.parametrize("override", [
        "task=v2v",
        "seed=-1",
        "threads=0",
        "schedule.steps=0",
        "schedule.kind=sigmoid",
        "buffer.policy=steep",
        "buffer.constant_pct=0",
        "buffer.constant_pct=100",
        "sampling.mode=euler",
        "sampling.variant=magic",
        "sampling.grid=0",
        "frame.height=7",
        "layout.buffer=-1",
        "training.batch=0",
        "training.lr=-0.1",
        "training.lr_decay=linear",
        "training.lr_floor=1.5",
        "data.train_samples=0",
    ])
    def test_bad_value_rejected(self, override):
        with pytest.raises(InvalidArgumentError):
            resolve_config(None, [override])


class TestDerivedObjects:
    def test_layout_defaults_to_preset(self):
        cfg = resolve_config(None, ["task=keyframe-interp"])
        assert layout_for(cfg) == preset_layout("keyframe-interp")

    def test_layout_overrides_apply(self):
        cfg = resolve_config(None, ["layout.buffer=5"])
        spec = layout_for(cfg)
        preset = preset_layout("i2v")
        assert spec.B == 5
        assert spec.L == preset.L and spec.K == preset.K

    def test_arch_for_maps_fields(self):
        cfg = resolve_config(None, ["arch.d_model=32", "arch.layers=1"])
        arch = arch_for(cfg)
        assert arch.d_model == 32
        assert arch.n_layers == 1
        assert arch.dim == cfg["arch"]["dim"]

    def test_train_config_for_maps_fields(self):
        cfg = resolve_config(None, ["training.lr=0.005", "training.lr_decay=none"])
        tc = train_config_for(cfg)
        assert tc.lr == 0.005
        assert tc.lr_decay == "none"
        assert tc.batch_size == cfg["training"]["batch"]

"""Run configuration: nested key/value schema, file loading, flag overrides.

A run config is a nested dict validated against a fixed schema. Unknown keys
are rejected so typos fail loudly instead of silently running defaults.
Resolution order: defaults, then config file, then command-line overrides.
"""

from __future__ import annotations

import copy
import json

from .errors import DataFormatError, InvalidArgumentError
from .layout import TASK_NAMES
from .pipeline import VARIANTS

# Leaf values double as type witnesses: overrides must json-decode to the
# same type (int accepted where the default is float).
DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "task": "i2v",
    "layout": {
        # None means "use the task preset"
        "condition": None,
        "buffer": None,
        "target": None,
    },
    "schedule": {
        "steps": 1000,
        "kind": "linear-beta",
    },
    "buffer": {
        "policy": "uniform",  # uniform | constant | concave | convex
        "constant_pct": 50.0,
    },
    "sampling": {
        "grid": 50,
        "mode": "ddim",  # ddim | ddpm
        "variant": "ticft",
    },
    "arch": {
        "dim": 64,
        "d_model": 96,
        "heads": 4,
        "layers": 3,
        "labels": 8,
        "max_frames": 16,
    },
    "frame": {
        "height": 8,
        "width": 8,
    },
    "training": {
        "lr": 1e-3,
        "lr_decay": "cosine",
        "lr_floor": 0.1,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "batch": 2,
        "pretrain_steps": 2000,
        "finetune_steps": 2000,
        "fixed_buffer_levels": False,
    },
    "data": {
        "pretrain_clips": 64,
        "clip_frames": 13,
        "train_samples": 20,
        "eval_samples": 100,
    },
    "paths": {
        "out": "runs/out",
    },
}

_POLICIES = ("uniform", "constant", "concave", "convex")
_MODES = ("ddim", "ddpm")
_KINDS = ("linear-beta", "cosine")

# Leaves where None is a legal value.
_OPTIONAL = {("layout", "condition"), ("layout", "buffer"), ("layout", "target")}


def _type_ok(default, value, path):
    if value is None:
        return path in _OPTIONAL
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if default is None:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, type(default)) and not (
        isinstance(value, bool) and not isinstance(default, bool))


def _merge(base: dict, override: dict, schema: dict, prefix=()):
    for key, val in override.items():
        path = prefix + (key,)
        dotted = ".".join(path)
        if key not in schema:
            raise InvalidArgumentError(f"unknown config key '{dotted}'")
        slot = schema[key]
        if isinstance(slot, dict):
            if not isinstance(val, dict):
                raise InvalidArgumentError(f"config key '{dotted}' expects a section")
            _merge(base[key], val, slot, path)
        else:
            if not _type_ok(slot, val, path):
                raise InvalidArgumentError(
                    f"config key '{dotted}' has wrong type: {val!r}")
            if isinstance(slot, float) and val is not None:
                val = float(val)
            base[key] = val


def _parse_override(text: str):
    """Parse one `dotted.path=value` flag; values are JSON with a string fallback."""
    if "=" not in text:
        raise InvalidArgumentError(f"override '{text}' is not of the form key=value")
    key, _, raw = text.partition("=")
    key = key.strip()
    if not key:
        raise InvalidArgumentError(f"override '{text}' has an empty key")
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    node = val
    for part in reversed(key.split(".")):
        node = {part: node}
    return node


def resolve_config(file_path=None, overrides=()) -> dict:
    """Build the fully resolved config dict.

    Raises InvalidArgumentError on unknown keys, type mismatches, or values
    that violate module preconditions, before any work starts.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if file_path is not None:
        try:
            with open(file_path, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise DataFormatError(f"cannot read config file {file_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"config file {file_path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise InvalidArgumentError(f"config file {file_path} must hold an object")
        _merge(cfg, loaded, DEFAULTS)
    for text in overrides:
        _merge(cfg, _parse_override(text), DEFAULTS)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if cfg["task"] not in TASK_NAMES:
        raise InvalidArgumentError(f"unknown task '{cfg['task']}'")
    if cfg["seed"] < 0:
        raise InvalidArgumentError("seed must be non-negative")
    if cfg["threads"] < 1:
        raise InvalidArgumentError("threads must be >= 1")
    sch = cfg["schedule"]
    if sch["steps"] < 1:
        raise InvalidArgumentError("schedule.steps must be >= 1")
    if sch["kind"] not in _KINDS:
        raise InvalidArgumentError(f"unknown schedule kind '{sch['kind']}'")
    buf = cfg["buffer"]
    if buf["policy"] not in _POLICIES:
        raise InvalidArgumentError(f"unknown buffer policy '{buf['policy']}'")
    if not 0.0 < buf["constant_pct"] < 100.0:
        raise InvalidArgumentError("buffer.constant_pct must be in (0, 100)")
    smp = cfg["sampling"]
    if smp["mode"] not in _MODES:
        raise InvalidArgumentError(f"unknown sampling mode '{smp['mode']}'")
    if smp["variant"] not in VARIANTS:
        raise InvalidArgumentError(f"unknown variant '{smp['variant']}'")
    if smp["grid"] < 1:
        raise InvalidArgumentError("sampling.grid must be >= 1")
    fr = cfg["frame"]
    if fr["height"] * fr["width"] != cfg["arch"]["dim"]:
        raise InvalidArgumentError(
            f"frame {fr['height']}x{fr['width']} does not match arch.dim {cfg['arch']['dim']}")
    lay = cfg["layout"]
    for name in ("condition", "buffer", "target"):
        v = lay[name]
        if v is not None and v < 0:
            raise InvalidArgumentError(f"layout.{name} must be >= 0")
    tr = cfg["training"]
    for name in ("batch", "pretrain_steps", "finetune_steps"):
        if tr[name] < (1 if name == "batch" else 0):
            raise InvalidArgumentError(f"training.{name} out of range")
    if tr["lr"] <= 0 and tr["lr"] != 0.0:
        raise InvalidArgumentError("training.lr must be >= 0")
    if tr["lr_decay"] not in ("none", "cosine"):
        raise InvalidArgumentError("training.lr_decay must be 'none' or 'cosine'")
    if not 0.0 <= tr["lr_floor"] <= 1.0:
        raise InvalidArgumentError("training.lr_floor must lie in [0, 1]")
    dat = cfg["data"]
    for name in ("pretrain_clips", "clip_frames", "train_samples", "eval_samples"):
        if dat[name] < 1:
            raise InvalidArgumentError(f"data.{name} must be >= 1")


def canonical_json(cfg: dict) -> str:
    """Stable text form; reparsing it yields an identical dict."""
    return json.dumps(cfg, indent=2, sort_keys=True)


def layout_for(cfg: dict):
    """Task preset with any layout overrides applied."""
    from .layout import LayoutSpec, preset_layout

    spec = preset_layout(cfg["task"])
    lay = cfg["layout"]
    L = lay["condition"] if lay["condition"] is not None else spec.L
    B = lay["buffer"] if lay["buffer"] is not None else spec.B
    K = lay["target"] if lay["target"] is not None else spec.K
    if (L, B, K) == (spec.L, spec.B, spec.K):
        return spec
    # Custom sizes drop preset query pinning; query positions only make
    # sense at the preset geometry. Buffer content mode carries over.
    return LayoutSpec(task=spec.task, L=L, B=B, K=K, buffer_mode=spec.buffer_mode)


def arch_for(cfg: dict):
    from .denoiser import ArchConfig

    a = cfg["arch"]
    return ArchConfig(dim=a["dim"], d_model=a["d_model"], n_heads=a["heads"],
                      n_layers=a["layers"], n_labels=a["labels"],
                      max_frames=a["max_frames"])


def train_config_for(cfg: dict):
    from .training import TrainConfig

    t = cfg["training"]
    return TrainConfig(lr=t["lr"], lr_decay=t["lr_decay"], lr_floor=t["lr_floor"],
                       beta1=t["beta1"], beta2=t["beta2"],
                       adam_eps=t["adam_eps"], batch_size=t["batch"],
                       fixed_buffer_levels=t["fixed_buffer_levels"])

"""Synthetic blob videos with analytic ground truth.

Every clip shows one Gaussian intensity bump moving at constant velocity
over an H x W grid, reflecting at the borders, pixel values in [-1, 1].
Because the generator is closed-form, each task's correct target is an
exact deterministic function of the condition and the stored generator
parameters, so metrics compare against ground truth rather than against
another model.

Task pairs:
    i2v             one static frame -> 9-frame motion clip of that blob
                    (velocity is a fixed function of the start position)
    style-transfer  4 source frames (+3 buffer source rows) -> the
                    source continuation with intensity inverted
    action-transfer 6 reference frames + 1 query frame of a different
                    blob -> the query blob moving with the reference
                    velocity (frame 0 is the query frame itself)
    keyframe-interp 4 keyframes subsampled from a 10-frame clip -> the
                    6 in-between frames
    multi-cond      3 frames of a shape image + 1 style image -> the
                    shape blob moving with the style image's sign
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, InvalidArgumentError, ShapeError
from .layout import TASK_NAMES, preset_layout
from .rng import Rng
from .training import TrainSample

__all__ = [
    "ToyVideo",
    "EvalReport",
    "gen_smooth_clip",
    "make_pair",
    "build_sample",
    "condition_fidelity",
    "smoothness",
    "target_mse",
    "task_label",
    "save_dataset",
    "load_dataset",
    "save_clips",
    "load_clips",
]

DATASET_MAGIC = b"TICD"
DATASET_VERSION = 1

# Label vocabulary: 0 is the generic pretraining label, tasks follow.
PRETRAIN_LABEL = 0
_TASK_IDS = {name: i + 1 for i, name in enumerate(TASK_NAMES)}
_ID_TASKS = {i: n for n, i in _TASK_IDS.items()}
_ID_TASKS[0] = "pretrain"

# Ordered generator-parameter keys per task; this fixes the binary
# layout of the per-sample parameter block.
_PARAM_KEYS = {
    "pretrain": ("row", "col", "vrow", "vcol", "radius", "amp"),
    "i2v": ("row", "col", "radius", "amp"),
    "style-transfer": ("row", "col", "vrow", "vcol", "radius", "amp"),
    "action-transfer": ("row", "col", "vrow", "vcol", "radius", "amp",
                        "qrow", "qcol", "qradius", "qamp"),
    "keyframe-interp": ("row", "col", "vrow", "vcol", "radius", "amp"),
    "multi-cond": ("row", "col", "radius", "amp", "srow", "scol",
                   "sradius", "samp", "sign"),
}


def task_label(task: str) -> int:
    if task == "pretrain":
        return PRETRAIN_LABEL
    if task not in _TASK_IDS:
        raise InvalidArgumentError(f"unknown task {task!r}")
    return _TASK_IDS[task]


@dataclass(frozen=True)
class ToyVideo:
    """A rendered clip plus the parameters that generated it."""

    frames: np.ndarray  # (F, H * W) float64 in [-1, 1]
    height: int
    width: int
    gen_params: dict
    label: int = PRETRAIN_LABEL


def _reflect(x: np.ndarray, n: int) -> np.ndarray:
    """Fold a coordinate into [0, n - 1] by reflection at both borders."""
    period = 2.0 * (n - 1)
    m = np.mod(x, period)
    return np.where(m > n - 1, period - m, m)


def _render(h: int, w: int, row: float, col: float, radius: float, amp: float) -> np.ndarray:
    rr = np.arange(h, dtype=np.float64)[:, None]
    cc = np.arange(w, dtype=np.float64)[None, :]
    img = amp * np.exp(-((rr - row) ** 2 + (cc - col) ** 2) / (2.0 * radius**2))
    return np.clip(img, -1.0, 1.0).ravel()


def _motion_frames(h, w, row, col, vrow, vcol, radius, amp, n_frames, start=0):
    steps = np.arange(start, start + n_frames, dtype=np.float64)
    rows = _reflect(row + vrow * steps, h)
    cols = _reflect(col + vcol * steps, w)
    return np.stack([_render(h, w, r, c, radius, amp) for r, c in zip(rows, cols)])


def gen_smooth_clip(rng: Rng, n_frames: int, h: int = 8, w: int = 8) -> ToyVideo:
    """Random blob clip: uniform start, direction, speed, size; signed
    amplitude (both styles appear in the pretraining corpus)."""
    if n_frames < 2 or h < 4 or w < 4:
        raise InvalidArgumentError("need n_frames >= 2 and at least a 4x4 grid")
    row = float(rng.uniform(1.0, h - 2.0))
    col = float(rng.uniform(1.0, w - 2.0))
    speed = float(rng.uniform(0.35, 0.7))
    angle = float(rng.uniform(0.0, 2.0 * np.pi))
    radius = float(rng.uniform(1.1, 1.9))
    amp = float(rng.uniform(0.6, 1.0))
    sign = 1.0 if float(rng.uniform()) < 0.5 else -1.0
    params = {
        "row": row, "col": col,
        "vrow": speed * np.sin(angle), "vcol": speed * np.cos(angle),
        "radius": radius, "amp": sign * amp,
    }
    frames = _motion_frames(h, w, params["row"], params["col"], params["vrow"],
                            params["vcol"], radius, params["amp"], n_frames)
    return ToyVideo(frames=frames, height=h, width=w, gen_params=params)


DRIFT_RATE = 0.15


def _drift_path(row: float, col: float, h: int, w: int, n_frames: int):
    """Deterministic trajectory for tasks whose condition is a single pose:
    geometric contraction toward the grid center.  Per-frame velocity is
    proportional to the remaining displacement, so the rule stays well
    conditioned (and learnable from rendered pixels) for every start."""
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    shrink = (1.0 - DRIFT_RATE) ** np.arange(n_frames, dtype=np.float64)
    return cr + (row - cr) * shrink, cc + (col - cc) * shrink


def _drift_frames(row, col, radius, amp, h, w, n_frames):
    rows, cols = _drift_path(row, col, h, w, n_frames)
    return np.stack([_render(h, w, r, c, radius, amp) for r, c in zip(rows, cols)])


def _draw_params(task: str, rng: Rng, h: int, w: int) -> dict:
    row = float(rng.uniform(1.0, h - 2.0))
    col = float(rng.uniform(1.0, w - 2.0))
    radius = float(rng.uniform(1.0, 1.6))
    amp = float(rng.uniform(0.5, 1.0))
    if task == "i2v":
        return {"row": row, "col": col, "radius": radius, "amp": amp}
    speed = float(rng.uniform(0.25, 0.6))
    angle = float(rng.uniform(0.0, 2.0 * np.pi))
    vrow, vcol = speed * np.sin(angle), speed * np.cos(angle)
    if task in ("style-transfer", "keyframe-interp"):
        return {"row": row, "col": col, "vrow": vrow, "vcol": vcol,
                "radius": radius, "amp": amp}
    if task == "action-transfer":
        return {"row": row, "col": col, "vrow": vrow, "vcol": vcol,
                "radius": radius, "amp": amp,
                "qrow": float(rng.uniform(1.0, h - 2.0)),
                "qcol": float(rng.uniform(1.0, w - 2.0)),
                "qradius": float(rng.uniform(1.0, 1.6)),
                "qamp": float(rng.uniform(0.5, 1.0))}
    if task == "multi-cond":
        return {"row": row, "col": col, "radius": radius, "amp": amp,
                "srow": float(rng.uniform(1.0, h - 2.0)),
                "scol": float(rng.uniform(1.0, w - 2.0)),
                "sradius": float(rng.uniform(1.0, 1.6)),
                "samp": float(rng.uniform(0.5, 1.0)),
                "sign": 1.0 if float(rng.uniform()) < 0.5 else -1.0}
    raise InvalidArgumentError(f"unknown task {task!r}")


def build_sample(task: str, params: dict, h: int = 8, w: int = 8) -> TrainSample:
    """Deterministically render one (condition, target) pair from its
    generator parameters; `make_pair` draws the parameters, this builds
    the frames, and dataset regeneration re-enters here."""
    spec = preset_layout(task)
    p = params
    if task == "i2v":
        clip = _drift_frames(p["row"], p["col"], p["radius"], p["amp"], h, w, spec.K)
        condition, target = clip[:1].copy(), clip
    elif task == "style-transfer":
        clip = _motion_frames(h, w, p["row"], p["col"], p["vrow"], p["vcol"],
                              p["radius"], p["amp"], spec.total)
        condition, target = clip[: spec.L + spec.B].copy(), -clip[spec.L + spec.B :]
    elif task == "action-transfer":
        ref = _motion_frames(h, w, p["row"], p["col"], p["vrow"], p["vcol"],
                             p["radius"], p["amp"], spec.L)
        target = _motion_frames(h, w, p["qrow"], p["qcol"], p["vrow"], p["vcol"],
                                p["qradius"], p["qamp"], spec.K)
        condition = np.concatenate([ref, target[:1]], axis=0)
    elif task == "keyframe-interp":
        clip = _motion_frames(h, w, p["row"], p["col"], p["vrow"], p["vcol"],
                              p["radius"], p["amp"], 10)
        key_idx, mid_idx = [0, 3, 6, 9], [1, 2, 4, 5, 7, 8]
        condition, target = clip[key_idx].copy(), clip[mid_idx].copy()
    elif task == "multi-cond":
        shape_frame = _render(h, w, p["row"], p["col"], p["radius"], p["amp"])
        style_frame = _render(h, w, p["srow"], p["scol"], p["sradius"],
                              p["sign"] * p["samp"])
        condition = np.stack([shape_frame, shape_frame, shape_frame, style_frame])
        target = _drift_frames(p["row"], p["col"], p["radius"],
                               p["sign"] * p["amp"], h, w, spec.K)
    else:
        raise InvalidArgumentError(f"unknown task {task!r}")
    return TrainSample(condition=condition, target=target,
                       label=task_label(task), task=task, gen_params=dict(p))


def make_pair(task: str, rng: Rng, h: int = 8, w: int = 8) -> TrainSample:
    """Draw one supervised pair for the given task."""
    return build_sample(task, _draw_params(task, rng, h, w), h, w)


# -- metrics ----------------------------------------------------------


def condition_fidelity(generated: np.ndarray, ground_truth: np.ndarray) -> float:
    """Mean per-frame squared L2 error against the known correct target."""
    generated = np.asarray(generated, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if generated.shape != ground_truth.shape or generated.ndim != 2:
        raise ShapeError(f"shape mismatch {generated.shape} vs {ground_truth.shape}")
    diff = generated - ground_truth
    return float((diff * diff).sum(axis=1).mean())


def target_mse(generated: np.ndarray, ground_truth: np.ndarray) -> float:
    """Plain element-wise mean squared error."""
    generated = np.asarray(generated, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if generated.shape != ground_truth.shape:
        raise ShapeError(f"shape mismatch {generated.shape} vs {ground_truth.shape}")
    return float(np.mean((generated - ground_truth) ** 2))


def smoothness(seq: np.ndarray) -> float:
    """Mean L2 distance between adjacent frames; lower is smoother."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] < 2:
        raise ShapeError("need at least two frames")
    diff = seq[1:] - seq[:-1]
    return float(np.sqrt((diff * diff).sum(axis=1)).mean())


@dataclass
class EvalReport:
    """Per-sample metrics plus aggregate mean and standard deviation."""

    task: str
    variant: str
    per_sample: list = field(default_factory=list)  # dicts with the three metrics

    METRICS = ("target_mse", "condition_fidelity", "smoothness")

    def aggregate(self) -> dict:
        out = {}
        for m in self.METRICS:
            vals = np.asarray([row[m] for row in self.per_sample], dtype=np.float64)
            out[f"{m}_mean"] = float(vals.mean())
            out[f"{m}_std"] = float(vals.std())
        return out

    def write_csv(self, path) -> None:
        import csv

        agg = self.aggregate()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample"] + list(self.METRICS))
            for i, row in enumerate(self.per_sample):
                w.writerow([i] + [f"{row[m]:.17g}" for m in self.METRICS])
            w.writerow(["mean"] + [f"{agg[m + '_mean']:.17g}" for m in self.METRICS])
            w.writerow(["std"] + [f"{agg[m + '_std']:.17g}" for m in self.METRICS])


# -- binary dataset format ---------------------------------------------


def _params_vector(task: str, params: dict) -> np.ndarray:
    keys = _PARAM_KEYS[task]
    if set(params) != set(keys):
        raise InvalidArgumentError(f"{task} parameters must be {keys}, got {sorted(params)}")
    return np.asarray([params[k] for k in keys], dtype=np.float64)


def save_dataset(samples: list, task: str, path, master_seed: int | None = None) -> None:
    """Write samples to the binary dataset format plus a JSON manifest.

    Layout: magic, u32 version, u32 task id, u32 sample count, u32
    condition rows, u32 target rows, u32 height, u32 width, u32 params
    per sample; then per sample the float64 parameter block followed by
    all frames (condition rows then target rows) as little-endian
    float32.
    """
    if not samples:
        raise InvalidArgumentError("refusing to write an empty dataset")
    h = w = None
    first = samples[0]
    cond_len, tgt_len = first.condition.shape[0], first.target.shape[0]
    d = first.condition.shape[1]
    hw = int(np.sqrt(d))
    h, w = hw, d // hw
    keys = _PARAM_KEYS[task]
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<8I", DATASET_VERSION, task_label(task), len(samples),
                             cond_len, tgt_len, h, w, len(keys)))
        for s in samples:
            if s.condition.shape != (cond_len, d) or s.target.shape != (tgt_len, d):
                raise ShapeError("all samples in a dataset must share one shape")
            fh.write(_params_vector(task, s.gen_params).astype("<f8").tobytes())
            frames = np.concatenate([s.condition, s.target], axis=0)
            fh.write(frames.astype("<f4").tobytes())
    manifest = {
        "file": str(path).rsplit("/", 1)[-1],
        "task": task,
        "n_samples": len(samples),
        "master_seed": master_seed,
        "sha256": _file_digest(path),
    }
    with open(str(path) + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _file_digest(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        digest.update(fh.read())
    return digest.hexdigest()


def load_dataset(path):
    """Read a dataset file back into TrainSamples; returns (samples, meta)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != DATASET_MAGIC:
        raise DataFormatError(f"{path}: not a dataset (bad magic)")
    version, task_id, count, cond_len, tgt_len, h, w, n_params = struct.unpack_from("<8I", raw, 4)
    if version != DATASET_VERSION:
        raise DataFormatError(f"{path}: unsupported dataset version {version}")
    task = _ID_TASKS.get(task_id)
    if task is None:
        raise DataFormatError(f"{path}: unknown task id {task_id}")
    keys = _PARAM_KEYS[task]
    if n_params != len(keys):
        raise DataFormatError(f"{path}: expected {len(keys)} parameters, header says {n_params}")
    d = h * w
    rec = 8 * n_params + 4 * (cond_len + tgt_len) * d
    off = 36
    if len(raw) != off + count * rec:
        raise DataFormatError(f"{path}: size {len(raw)} != header arithmetic {off + count * rec}")
    samples = []
    for _ in range(count):
        vec = np.frombuffer(raw, dtype="<f8", count=n_params, offset=off)
        off += 8 * n_params
        frames = np.frombuffer(raw, dtype="<f4", count=(cond_len + tgt_len) * d, offset=off)
        off += 4 * (cond_len + tgt_len) * d
        frames = frames.astype(np.float64).reshape(cond_len + tgt_len, d)
        samples.append(TrainSample(
            condition=frames[:cond_len].copy(),
            target=frames[cond_len:].copy(),
            label=task_label(task) if task != "pretrain" else PRETRAIN_LABEL,
            task=task,
            gen_params=dict(zip(keys, vec.tolist())),
        ))
    meta = {"task": task, "n_samples": count, "cond_len": cond_len,
            "target_len": tgt_len, "height": h, "width": w}
    return samples, meta


def save_clips(clips: list, path, master_seed: int | None = None) -> None:
    """Store a pretraining corpus in the same container (task 'pretrain',
    whole clip in the condition block, zero target rows)."""
    samples = [
        TrainSample(condition=c.frames, target=c.frames[:0],
                    label=c.label, task="pretrain", gen_params=c.gen_params)
        for c in clips
    ]
    save_dataset(samples, "pretrain", path, master_seed)


def load_clips(path):
    samples, meta = load_dataset(path)
    if meta["task"] != "pretrain":
        raise DataFormatError(f"{path}: not a pretraining corpus")
    h, w = meta["height"], meta["width"]
    clips = [
        ToyVideo(frames=s.condition, height=h, width=w,
                 gen_params=s.gen_params, label=s.label)
        for s in samples
    ]
    return clips, meta

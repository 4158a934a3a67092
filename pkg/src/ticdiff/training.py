"""Masked-loss training over heterogeneous-level sequences.

Fine-tuning draws one global level t per sample, noises the target
frames to t and the buffer frames to min(initial level, t), leaves the
condition clean, and regresses the model's noise prediction against the
actual draws on the target frames only.  Condition, buffer, and pinned
query frames contribute exactly zero loss and zero gradient.

Pretraining is the degenerate case: every frame of a clip at the same
level, loss over all frames.  Both loops share the Adam step and the
checkpoint format.
"""

import csv
import dataclasses
import hashlib
import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .denoiser import ArchConfig, DenoiserParams, build_graph, init_params, param_shapes
from .diffusion import NoiseSchedule, build_schedule, forward_diffuse
from .errors import DataFormatError, InvalidArgumentError, ShapeError
from .layout import LayoutSpec, buffer_content, loss_frame_indices, noise_level_vector
from .rng import Rng

__all__ = [
    "TrainConfig",
    "decayed_lr",
    "TrainSample",
    "AdamState",
    "Checkpoint",
    "masked_loss",
    "masked_loss_grad",
    "build_train_input",
    "train_step",
    "pretrain",
    "finetune",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"TICF"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 2
    # Cosine decay of the step size over a run; "none" keeps lr constant.
    # The floor is a fraction of lr, reached at the final step.
    lr_decay: str = "cosine"
    lr_floor: float = 0.1
    # When set, buffer frames train at their initial levels even for
    # global levels below them, instead of following min(level, t).
    fixed_buffer_levels: bool = False

    def __post_init__(self):
        if self.lr < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise InvalidArgumentError("bad optimizer hyperparameters")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.lr_decay not in ("none", "cosine"):
            raise InvalidArgumentError(f"unknown lr decay {self.lr_decay!r}")
        if not 0.0 <= self.lr_floor <= 1.0:
            raise InvalidArgumentError("lr_floor must lie in [0, 1]")


def decayed_lr(cfg: TrainConfig, step_in_run: int, total_steps: int) -> float:
    """Step size for one update of a total_steps-long run."""
    if cfg.lr_decay == "none" or total_steps <= 1:
        return cfg.lr
    frac = min(max(step_in_run / (total_steps - 1), 0.0), 1.0)
    lo = cfg.lr * cfg.lr_floor
    return lo + 0.5 * (cfg.lr - lo) * (1.0 + np.cos(np.pi * frac))


@dataclass
class TrainSample:
    """One supervised pair: condition rows, target rows, a label.

    `condition` carries at least L rows; tasks that continue a source
    clip or pin query frames append the extra rows after the prefix.
    """

    condition: np.ndarray
    target: np.ndarray
    label: int
    task: str = "custom"
    gen_params: dict = field(default_factory=dict)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0


def adam_init(params: DenoiserParams) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(t) for k, t in params.tensors.items()},
        v={k: np.zeros_like(t) for k, t in params.tensors.items()},
    )


def adam_update(params: DenoiserParams, grads: dict, opt: AdamState, cfg: TrainConfig,
                lr: float | None = None) -> None:
    opt.step += 1
    step_size = cfg.lr if lr is None else lr
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** opt.step
    bc2 = 1.0 - b2 ** opt.step
    for name, t in params.tensors.items():
        g = grads[name]
        opt.m[name] = b1 * opt.m[name] + (1 - b1) * g
        opt.v[name] = b2 * opt.v[name] + (1 - b2) * g * g
        t -= step_size * (opt.m[name] / bc1) / (np.sqrt(opt.v[name] / bc2) + cfg.adam_eps)


def masked_loss(eps_true: np.ndarray, eps_pred: np.ndarray, spec: LayoutSpec) -> float:
    """Mean squared frame error over the K target positions.

    Query positions inside the target region are excluded from the sum;
    the divisor stays K.
    """
    eps_true = np.asarray(eps_true, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    if eps_true.shape != eps_pred.shape or eps_true.shape[0] != spec.total:
        raise ShapeError(
            f"expected matching ({spec.total}, d) arrays, got {eps_true.shape} and {eps_pred.shape}"
        )
    idx = loss_frame_indices(spec)
    diff = eps_pred[idx] - eps_true[idx]
    return float((diff * diff).sum() / spec.K)


def masked_loss_grad(eps_true: np.ndarray, eps_pred: np.ndarray, spec: LayoutSpec) -> np.ndarray:
    """d masked_loss / d eps_pred; exactly zero outside loss-carrying rows."""
    eps_true = np.asarray(eps_true, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    if eps_true.shape != eps_pred.shape or eps_true.shape[0] != spec.total:
        raise ShapeError("prediction and reference shapes must match the layout")
    out = np.zeros_like(eps_pred)
    idx = loss_frame_indices(spec)
    out[idx] = (2.0 / spec.K) * (eps_pred[idx] - eps_true[idx])
    return out


def build_train_input(
    sample: TrainSample,
    spec: LayoutSpec,
    levels,
    t: int,
    sched: NoiseSchedule,
    rng: Rng,
    fixed_buffer_levels: bool = False,
):
    """Noise one sample into a training sequence.

    Returns (seq, eps_true, frame_levels) where frame_levels is the
    realized per-frame level vector and, for every row i,

        seq[i] == forward_diffuse(clean[i], frame_levels[i], eps_true[i])

    with clean meaning condition/buffer/target content (queries clean).
    Noise draws: one (B, d) block for buffers, then one (K, d) block for
    targets, so the stream layout depends only on the layout spec.
    """
    t = int(t)
    if not 1 <= t <= sched.T:
        raise InvalidArgumentError(f"global level {t} outside 1..{sched.T}")
    cond = np.asarray(sample.condition, dtype=np.float64)
    target = np.asarray(sample.target, dtype=np.float64)
    if target.shape != (spec.K, cond.shape[1]):
        raise ShapeError(f"target must be ({spec.K}, {cond.shape[1]}), got {target.shape}")

    frame_levels = noise_level_vector(spec, levels, t)
    if fixed_buffer_levels:
        frame_levels[spec.L : spec.L + spec.B] = np.asarray(levels, dtype=np.int64)

    buf_clean = buffer_content(cond, cond, spec)
    seq = np.empty((spec.total, cond.shape[1]), dtype=np.float64)
    eps_true = np.zeros_like(seq)
    seq[: spec.L] = cond[: spec.L]

    buf_eps = rng.normal((spec.B, cond.shape[1]))
    for b in range(spec.B):
        lv = int(frame_levels[spec.L + b])
        eps_true[spec.L + b] = buf_eps[b]
        seq[spec.L + b] = forward_diffuse(buf_clean[b], lv, buf_eps[b], sched)

    tgt_eps = rng.normal((spec.K, cond.shape[1]))
    lo = spec.L + spec.B
    for k in range(spec.K):
        eps_true[lo + k] = tgt_eps[k]
        seq[lo + k] = forward_diffuse(target[k], t, tgt_eps[k], sched)
    for pos, src in spec.query_frames:
        seq[pos] = cond[src]
        eps_true[pos] = 0.0
    return seq, eps_true, frame_levels


def train_step(
    params: DenoiserParams,
    opt: AdamState,
    batch: list,
    spec: LayoutSpec,
    levels,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    rng: Rng,
    lr: float | None = None,
):
    """One fine-tuning step: per-sample level draw, masked loss, Adam.

    Mutates params and opt in place and returns (params, opt, loss)
    where loss is the pre-update batch mean.  `lr` overrides cfg.lr for
    this update (the loops pass the decayed value).
    """
    if not batch:
        raise InvalidArgumentError("empty batch")
    total_loss = 0.0
    acc = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    for sample in batch:
        t = int(rng.integers(1, sched.T))
        seq, eps_true, frame_levels = build_train_input(
            sample, spec, levels, t, sched, rng, cfg.fixed_buffer_levels
        )
        out, pvars = build_graph(params, seq, frame_levels, sample.label)
        total_loss += masked_loss(eps_true, out.data, spec)
        ad.backward(out, masked_loss_grad(eps_true, out.data, spec) / len(batch))
        for name, var in pvars.items():
            if var.grad is not None:
                acc[name] += var.grad
    adam_update(params, acc, opt, cfg, lr=lr)
    return params, opt, total_loss / len(batch)


def _homogeneous_step(params, opt, clips, labels, sched, cfg, rng, lr=None):
    """Pretraining step: whole clips at one level, loss over all frames."""
    total_loss = 0.0
    acc = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    n = len(clips)
    for _ in range(cfg.batch_size):
        i = int(rng.integers(0, n - 1))
        clip = clips[i]
        t = int(rng.integers(1, sched.T))
        eps = rng.normal(clip.shape)
        seq = forward_diffuse(clip, t, eps, sched)
        frame_levels = np.full(clip.shape[0], t, dtype=np.int64)
        out, pvars = build_graph(params, seq, frame_levels, labels[i])
        diff = out.data - eps
        total_loss += float((diff * diff).sum() / clip.shape[0])
        ad.backward(out, (2.0 / clip.shape[0]) * diff / cfg.batch_size)
        for name, var in pvars.items():
            if var.grad is not None:
                acc[name] += var.grad
    adam_update(params, acc, opt, cfg, lr=lr)
    return total_loss / cfg.batch_size


class _LossLog:
    def __init__(self, path):
        self.path = path
        if path is not None and not path.exists():
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(["step", "loss", "wall_time"])

    def append(self, step, loss):
        if self.path is None:
            return
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([step, f"{loss:.17g}", f"{time.time():.3f}"])


def pretrain(
    clips: list,
    steps: int,
    arch: ArchConfig,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    rng: Rng,
    labels: list | None = None,
    log_path=None,
    config_hash: str = "",
) -> "Checkpoint":
    """Train a fresh model on homogeneous-level clips.

    Args:
        clips: list of (F, dim) float arrays, F <= arch.max_frames.
        labels: per-clip label ids; defaults to all zeros.
    """
    if not clips:
        raise InvalidArgumentError("empty pretraining dataset")
    clips = [np.asarray(c, dtype=np.float64) for c in clips]
    labels = [0] * len(clips) if labels is None else list(labels)
    if len(labels) != len(clips):
        raise ShapeError("labels and clips disagree in length")
    params = init_params(arch, rng.derive("init"))
    opt = adam_init(params)
    noise_rng = rng.derive("noise")
    log = _LossLog(log_path)
    for step in range(1, steps + 1):
        lr = decayed_lr(cfg, step - 1, steps)
        loss = _homogeneous_step(params, opt, clips, labels, sched, cfg, noise_rng, lr=lr)
        log.append(step, loss)
    return Checkpoint(
        params=params,
        opt=opt,
        step=steps,
        layout=None,
        schedule_T=sched.T,
        schedule_kind=sched.kind,
        config_hash=config_hash,
        rng_state=noise_rng.state(),
    )


def finetune(
    ckpt: "Checkpoint",
    dataset: list,
    spec: LayoutSpec,
    levels,
    steps: int,
    cfg: TrainConfig,
    rng: Rng,
    log_path=None,
    eval_every: int = 0,
    eval_fn=None,
) -> "Checkpoint":
    """Adapt a checkpoint to one layout with the masked objective.

    The step counter continues from the checkpoint, so resuming appends
    to the same loss curve.  Zero steps returns an equal checkpoint.
    """
    if ckpt.layout is not None and ckpt.layout != spec:
        raise InvalidArgumentError(
            f"checkpoint was fine-tuned for layout {ckpt.layout}, asked for {spec}"
        )
    if spec.total > ckpt.params.arch.max_frames:
        raise InvalidArgumentError(
            f"layout needs {spec.total} frames, model covers {ckpt.params.arch.max_frames}"
        )
    if not dataset and steps > 0:
        raise InvalidArgumentError("empty fine-tuning dataset")
    sched = build_schedule(ckpt.schedule_T, ckpt.schedule_kind)
    params = ckpt.params.copy()
    opt = AdamState(
        m={k: v.copy() for k, v in ckpt.opt.m.items()},
        v={k: v.copy() for k, v in ckpt.opt.v.items()},
        step=ckpt.opt.step,
    )
    log = _LossLog(log_path)
    n = len(dataset)
    for local in range(1, steps + 1):
        batch = [dataset[int(rng.integers(0, n - 1))] for _ in range(cfg.batch_size)]
        lr = decayed_lr(cfg, local - 1, steps)
        _, _, loss = train_step(params, opt, batch, spec, levels, sched, cfg, rng, lr=lr)
        step = ckpt.step + local
        log.append(step, loss)
        if eval_fn is not None and eval_every > 0 and local % eval_every == 0:
            eval_fn(params, step)
    return Checkpoint(
        params=params,
        opt=opt,
        step=ckpt.step + steps,
        layout=spec,
        schedule_T=ckpt.schedule_T,
        schedule_kind=ckpt.schedule_kind,
        config_hash=ckpt.config_hash,
        rng_state=rng.state(),
    )


@dataclass
class Checkpoint:
    """Everything needed to resume or sample: weights, Adam moments,
    step counter, layout, schedule descriptor, config hash, rng state."""

    params: DenoiserParams
    opt: AdamState
    step: int
    layout: LayoutSpec | None
    schedule_T: int
    schedule_kind: str
    config_hash: str
    rng_state: dict


def _layout_to_dict(spec: LayoutSpec | None):
    if spec is None:
        return None
    d = dataclasses.asdict(spec)
    d["query_frames"] = [list(q) for q in spec.query_frames]
    return d


def _layout_from_dict(d) -> LayoutSpec | None:
    if d is None:
        return None
    d = dict(d)
    d["query_frames"] = tuple(tuple(q) for q in d["query_frames"])
    return LayoutSpec(**d)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Binary layout: magic, u32 version, 32-byte config digest, u32
    header length, canonical JSON header, then float64 payload (tensors
    in declaration order, then Adam m, then Adam v)."""
    header = {
        "arch": dataclasses.asdict(ckpt.params.arch),
        "layout": _layout_to_dict(ckpt.layout),
        "schedule": {"T": ckpt.schedule_T, "kind": ckpt.schedule_kind},
        "step": ckpt.step,
        "opt_step": ckpt.opt.step,
        "rng_state": ckpt.rng_state,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    digest = bytes.fromhex(ckpt.config_hash) if ckpt.config_hash else b"\x00" * 32
    if len(digest) != 32:
        raise InvalidArgumentError("config hash must be 32 bytes of hex")
    order = list(param_shapes(ckpt.params.arch))
    blobs = [ckpt.params.tensors[k] for k in order]
    blobs += [ckpt.opt.m[k] for k in order] + [ckpt.opt.v[k] for k in order]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(digest)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for arr in blobs:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint (bad magic)")
    version = struct.unpack_from("<I", raw, 4)[0]
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    digest = raw[8:40]
    head_len = struct.unpack_from("<I", raw, 40)[0]
    header = json.loads(raw[44 : 44 + head_len])
    arch = ArchConfig(**header["arch"])
    shapes = param_shapes(arch)
    off = 44 + head_len
    sections = []
    for _ in range(3):
        tensors = {}
        for name, shape in shapes.items():
            n = int(np.prod(shape))
            tensors[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).copy()
            off += 8 * n
        sections.append(tensors)
    if off != len(raw):
        raise DataFormatError(f"{path}: trailing bytes ({len(raw) - off})")
    params = DenoiserParams(arch=arch, tensors=sections[0])
    opt = AdamState(m=sections[1], v=sections[2], step=header["opt_step"])
    return Checkpoint(
        params=params,
        opt=opt,
        step=header["step"],
        layout=_layout_from_dict(header["layout"]),
        schedule_T=header["schedule"]["T"],
        schedule_kind=header["schedule"]["kind"],
        config_hash=digest.hex() if digest != b"\x00" * 32 else "",
        rng_state=header["rng_state"],
    )


def config_digest(config: dict) -> str:
    """Stable hex digest of a resolved configuration mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()

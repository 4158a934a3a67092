"""Noise-prediction model over short frame sequences.

A deliberately small temporal transformer: frames are flat vectors, each
projected to d_model and tagged with a learned absolute position plus an
embedding of its own integer noise level.  Per-frame levels matter
because sequences here are heterogeneous: clean condition frames, buffer
frames at intermediate levels, and noisy targets all coexist.  A label
embedding rides along as an extra token that every frame can attend to.

Two small level-conditioned paths bypass the normalized trunk, because
noise prediction is nearly scale-degenerate at the extremes: at high
levels the optimal output is almost the input itself (a map layer norm
cannot represent), and at low levels it is a tiny residual amplified by
1/sigma.  A learned per-frame gate adds the raw input frame directly to
the output, and a per-frame modulation of the final norm restores output
scale.  Both are zero-initialized, as is the output head, so an
untrained model predicts zero noise exactly.

Everything is float64 and the backward pass is exact, which keeps the
finite-difference gradient gate tight.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import InvalidArgumentError, NumericError, ShapeError
from .rng import Rng

__all__ = [
    "ArchConfig",
    "DenoiserParams",
    "param_shapes",
    "init_params",
    "count_params",
    "forward",
    "backward",
    "as_eps_fn",
]

_LN_EPS = 1e-5
_MAX_LABELS = 32


@dataclass(frozen=True)
class ArchConfig:
    """Model dimensions.

    Attributes:
        dim: flat frame width D.
        d_model: token width; must be even and divisible by n_heads.
        n_heads: attention heads per layer.
        n_layers: transformer blocks; 0 leaves only projections.
        n_labels: size of the label vocabulary (at most 32).
        max_frames: longest frame sequence the positional table covers.
    """

    dim: int = 64
    d_model: int = 96
    n_heads: int = 4
    n_layers: int = 3
    n_labels: int = 8
    max_frames: int = 16

    def __post_init__(self):
        if min(self.dim, self.d_model, self.n_heads, self.n_labels, self.max_frames) < 1:
            raise InvalidArgumentError("all architecture dimensions must be >= 1")
        if self.n_layers < 0:
            raise InvalidArgumentError("n_layers must be >= 0")
        if self.d_model % self.n_heads != 0:
            raise InvalidArgumentError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.d_model % 2 != 0:
            raise InvalidArgumentError("d_model must be even for the sinusoidal table")
        if self.n_labels > _MAX_LABELS:
            raise InvalidArgumentError(f"n_labels capped at {_MAX_LABELS}")


@dataclass
class DenoiserParams:
    """Named parameter tensors plus the architecture they belong to."""

    arch: ArchConfig
    tensors: dict = field(default_factory=dict)

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})


def param_shapes(arch: ArchConfig) -> dict:
    """Declaration-ordered mapping of tensor name to shape.

    This order is the serialization order: checkpoints write the raw
    float64 payload by walking it.
    """
    d, dd = arch.d_model, arch.dim
    shapes = {
        "in_w": (dd, d),
        "in_b": (d,),
        "time_w1": (d, d),
        "time_b1": (d,),
        "time_w2": (d, d),
        "time_b2": (d,),
        "label_emb": (arch.n_labels, d),
        "pos_emb": (arch.max_frames, d),
    }
    for i in range(arch.n_layers):
        shapes.update({
            f"blk{i}.ln1_g": (d,),
            f"blk{i}.ln1_b": (d,),
            f"blk{i}.attn_wq": (d, d),
            f"blk{i}.attn_bq": (d,),
            f"blk{i}.attn_wk": (d, d),
            f"blk{i}.attn_bk": (d,),
            f"blk{i}.attn_wv": (d, d),
            f"blk{i}.attn_bv": (d,),
            f"blk{i}.attn_wo": (d, d),
            f"blk{i}.attn_bo": (d,),
            f"blk{i}.ln2_g": (d,),
            f"blk{i}.ln2_b": (d,),
            f"blk{i}.ff_w1": (d, 4 * d),
            f"blk{i}.ff_b1": (4 * d,),
            f"blk{i}.ff_w2": (4 * d, d),
            f"blk{i}.ff_b2": (d,),
        })
    shapes.update({
        "ln_f_g": (d,),
        "ln_f_b": (d,),
        "mod_s_w": (d, d),
        "mod_b_w": (d, d),
        "skip_w": (d, 1),
        "skip_b": (1,),
        "out_w": (d, dd),
        "out_b": (dd,),
    })
    return shapes


def init_params(arch: ArchConfig, rng: Rng) -> DenoiserParams:
    """Scaled-normal init, std 1 / sqrt(fan_in); head, gate, modulation,
    and biases zero."""
    tensors = {}
    for name, shape in param_shapes(arch).items():
        leaf = name.split(".")[-1]
        if leaf.startswith(("out_", "mod_", "skip_")) or leaf.endswith(("_b", "_b1", "_b2")) \
                or leaf in ("in_b", "ln1_b", "ln2_b", "ln_f_b") or leaf.startswith("attn_b"):
            tensors[name] = np.zeros(shape)
        elif leaf in ("ln1_g", "ln2_g") or name == "ln_f_g":
            tensors[name] = np.ones(shape)
        elif name in ("label_emb", "pos_emb"):
            tensors[name] = rng.normal(shape) / np.sqrt(arch.d_model)
        else:
            fan_in = shape[0]
            tensors[name] = rng.normal(shape) / np.sqrt(fan_in)
    return DenoiserParams(arch=arch, tensors=tensors)


def count_params(params: DenoiserParams) -> int:
    return int(sum(t.size for t in params.tensors.values()))


def _sinusoid_table(levels: np.ndarray, d: int) -> np.ndarray:
    half = d // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = levels[:, None].astype(np.float64) * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _gelu(v: Var) -> Var:
    return v * 0.5 * (ad.erf(v * (1.0 / np.sqrt(2.0))) + 1.0)


def _layernorm(x: Var, gain: Var, bias: Var, width: int) -> Var:
    mean = x.sum(axis=-1, keepdims=True) * (1.0 / width)
    centered = x - mean
    var = (centered * centered).sum(axis=-1, keepdims=True) * (1.0 / width)
    return centered / ad.sqrt(var + _LN_EPS) * gain + bias


def _check_inputs(arch: ArchConfig, seq: np.ndarray, levels: np.ndarray, label: int):
    if seq.ndim != 2 or seq.shape[1] != arch.dim:
        raise ShapeError(f"sequence must be (F, {arch.dim}), got {seq.shape}")
    n = seq.shape[0]
    if not 1 <= n <= arch.max_frames:
        raise ShapeError(f"sequence length {n} outside 1..{arch.max_frames}")
    if levels.shape != (n,):
        raise ShapeError(f"levels must be ({n},), got {levels.shape}")
    if not 0 <= label < arch.n_labels:
        raise InvalidArgumentError(f"label {label} outside 0..{arch.n_labels - 1}")


def build_graph(params: DenoiserParams, seq: np.ndarray, levels, label: int):
    """Run the model on the tape; returns (prediction Var, param Vars).

    Most callers want `forward` or `backward`; the training loop uses
    this directly so one graph serves both the prediction and its
    vector-Jacobian product.
    """
    arch = params.arch
    seq = np.asarray(seq, dtype=np.float64)
    levels = np.asarray(levels, dtype=np.int64)
    _check_inputs(arch, seq, levels, int(label))
    n, d = seq.shape[0], arch.d_model

    p = {name: Var(t) for name, t in params.tensors.items()}
    vseq = Var(seq)
    tok = vseq @ p["in_w"] + p["in_b"]
    tok = tok + p["pos_emb"].rows(0, n)
    temb = Var(_sinusoid_table(levels, d))
    temb = _gelu(temb @ p["time_w1"] + p["time_b1"]) @ p["time_w2"] + p["time_b2"]
    tok = tok + temb
    x = ad.concat_rows(p["label_emb"].take_rows([int(label)]), tok)

    heads, dh = arch.n_heads, d // arch.n_heads
    s = n + 1
    for i in range(arch.n_layers):
        b = f"blk{i}"
        h = _layernorm(x, p[f"{b}.ln1_g"], p[f"{b}.ln1_b"], d)
        q = (h @ p[f"{b}.attn_wq"] + p[f"{b}.attn_bq"]).reshape(s, heads, dh).swapaxes(0, 1)
        k = (h @ p[f"{b}.attn_wk"] + p[f"{b}.attn_bk"]).reshape(s, heads, dh).swapaxes(0, 1)
        v = (h @ p[f"{b}.attn_wv"] + p[f"{b}.attn_bv"]).reshape(s, heads, dh).swapaxes(0, 1)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
        ctx = ad.softmax_rows(scores) @ v
        ctx = ctx.swapaxes(0, 1).reshape(s, d)
        x = x + ctx @ p[f"{b}.attn_wo"] + p[f"{b}.attn_bo"]
        h2 = _layernorm(x, p[f"{b}.ln2_g"], p[f"{b}.ln2_b"], d)
        x = x + _gelu(h2 @ p[f"{b}.ff_w1"] + p[f"{b}.ff_b1"]) @ p[f"{b}.ff_w2"] + p[f"{b}.ff_b2"]

    y = _layernorm(x.rows(1, s), p["ln_f_g"], p["ln_f_b"], d)
    y = y * (temb @ p["mod_s_w"] + 1.0) + temb @ p["mod_b_w"]
    gate = temb @ p["skip_w"] + p["skip_b"]
    eps = y @ p["out_w"] + p["out_b"] + vseq * gate
    return eps, p


def forward(params: DenoiserParams, seq: np.ndarray, levels, label: int) -> np.ndarray:
    """Predict the noise in each frame, given per-frame levels and a label."""
    eps, _ = build_graph(params, seq, levels, label)
    if not np.isfinite(eps.data).all():
        raise NumericError("denoiser produced non-finite values")
    return eps.data


def backward(params: DenoiserParams, seq: np.ndarray, levels, label: int, upstream: np.ndarray) -> dict:
    """Gradient of <forward(params, ...), upstream> w.r.t. every tensor.

    Returns a dict with exactly the tensors of `params`; tensors the
    input never touched (unused label rows, tail of the positional
    table) come back as zeros.
    """
    eps, p = build_graph(params, seq, levels, label)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != eps.data.shape:
        raise ShapeError(f"upstream shape {upstream.shape} != output {eps.data.shape}")
    ad.backward(eps, upstream)
    grads = {}
    for name, var in p.items():
        grads[name] = var.grad if var.grad is not None else np.zeros_like(var.data)
    if any(not np.isfinite(g).all() for g in grads.values()):
        raise NumericError("backward produced non-finite gradients")
    return grads


def as_eps_fn(params: DenoiserParams):
    """Adapt trained parameters to the sampler's denoise-callable shape."""
    def eps_fn(seq, levels, label):
        return forward(params, seq, levels, label)
    return eps_fn

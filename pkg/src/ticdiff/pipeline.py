"""Plumbing that connects data generation, variants, and evaluation.

The CLI resolves a config and calls down into these helpers; tests and
demo scripts call them directly.  A "variant" names how inference treats
the condition:

    ticft       buffered heterogeneous-level inference (uniform levels)
    no-buffer   same pipeline with B forced to 0
    replace     homogeneous denoising with per-step condition overwrite
    constant-t  buffers all at one level (a percentage of T)
    concave     quadratic level profile bent toward 0
    convex      quadratic level profile bent toward T
"""

import numpy as np

from .diffusion import NoiseSchedule
from .errors import InvalidArgumentError
from .layout import LayoutSpec, buffer_levels
from .rng import Rng
from .sampling import SamplerGrid, baseline_no_buffer, baseline_replace, tic_inference
from .tasks import (
    EvalReport,
    condition_fidelity,
    gen_smooth_clip,
    make_pair,
    smoothness,
    target_mse,
)

__all__ = [
    "VARIANTS",
    "make_pretrain_corpus",
    "make_task_dataset",
    "with_buffer_count",
    "variant_levels",
    "run_variant",
    "evaluate",
]

VARIANTS = ("ticft", "no-buffer", "replace", "constant-t", "concave", "convex")

_POLICY_BY_VARIANT = {
    "ticft": "uniform",
    "no-buffer": "uniform",
    "replace": "uniform",
    "constant-t": "constant",
    "concave": "concave",
    "convex": "convex",
}


def make_pretrain_corpus(rng: Rng, n_clips: int, clip_len: int, h: int = 8, w: int = 8):
    return [gen_smooth_clip(rng, clip_len, h, w) for _ in range(n_clips)]


def make_task_dataset(rng: Rng, task: str, n: int, h: int = 8, w: int = 8):
    return [make_pair(task, rng, h, w) for _ in range(n)]


def with_buffer_count(spec: LayoutSpec, B: int) -> LayoutSpec:
    """The same layout with a different buffer size; query positions shift."""
    if B == spec.B:
        return spec
    return LayoutSpec(
        L=spec.L,
        B=B,
        K=spec.K,
        buffer_mode=spec.buffer_mode,
        query_frames=tuple((pos + B - spec.B, src) for pos, src in spec.query_frames),
        task=spec.task,
    )


def variant_levels(variant: str, B: int, T: int, constant_pct: float = 50.0) -> np.ndarray:
    """Initial buffer levels used by a variant.

    Constant levels are given as a percentage of the schedule horizon so
    the same config works at any T.
    """
    if variant not in VARIANTS:
        raise InvalidArgumentError(f"unknown variant {variant!r}; pick from {VARIANTS}")
    if B == 0 or variant in ("no-buffer", "replace"):
        return np.zeros(0, dtype=np.int64)
    policy = _POLICY_BY_VARIANT[variant]
    if policy == "constant":
        if not 0.0 < constant_pct < 100.0:
            raise InvalidArgumentError(f"constant level {constant_pct}% outside (0, 100)")
        import math
        level = int(math.ceil(constant_pct / 100.0 * T - 0.5))
        return buffer_levels(B, T, "constant", constant=max(level, 1))
    return buffer_levels(B, T, policy)


def run_variant(model, condition, spec: LayoutSpec, variant: str, levels, label: int,
                grid: SamplerGrid, mode: str, sched: NoiseSchedule, rng: Rng):
    """Generate K target frames with the chosen variant; returns (frames, trace)."""
    if variant == "replace":
        return baseline_replace(model, condition, spec, label, grid, rng, sched, mode=mode)
    if variant == "no-buffer":
        return baseline_no_buffer(model, condition, spec, label, grid, mode, rng, sched)
    return tic_inference(model, condition, spec, levels, label, grid, mode, rng, sched)


def evaluate(model, samples, spec: LayoutSpec, variant: str, levels, label: int,
             grid: SamplerGrid, mode: str, sched: NoiseSchedule, rng: Rng,
             task: str = "") -> EvalReport:
    """Run a variant over a dataset and score it against ground truth.

    Each sample gets its own derived stream, so reports do not depend on
    evaluation order or dataset slicing.
    """
    report = EvalReport(task=task or spec.task, variant=variant)
    for i, sample in enumerate(samples):
        srng = rng.derive(f"sample/{i}")
        out, _trace = run_variant(model, sample.condition, spec, variant, levels,
                                  label, grid, mode, sched, srng)
        report.per_sample.append({
            "target_mse": target_mse(out, sample.target),
            "condition_fidelity": condition_fidelity(out, sample.target),
            "smoothness": smoothness(out) if out.shape[0] >= 2 else 0.0,
        })
    return report

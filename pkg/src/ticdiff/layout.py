"""Frame layouts: condition prefix, noise buffer, generation target.

A sequence of F = L + B + K frames is split into three regions: L clean
condition frames, B buffer frames held at intermediate noise levels, and
K target frames that start as pure noise.  Buffer levels interpolate
between clean and fully noised, which is what lets a model trained on
homogeneous noise cope with a clean prefix.

Some tasks pin extra clean frames inside the target region ("query"
frames, e.g. the first frame of a novel scene whose continuation is
wanted).  A query is a (position, source_row) pair: `position` indexes
the full F-frame sequence and must land in the target region,
`source_row` indexes the condition array handed to composition.
"""

from dataclasses import dataclass, field

import numpy as np

from .diffusion import NoiseSchedule, forward_diffuse
from .errors import InvalidArgumentError, ShapeError
from .rng import Rng

__all__ = [
    "LayoutSpec",
    "buffer_levels",
    "noise_level_vector",
    "buffer_content",
    "compose_initial",
    "preset_layout",
    "loss_frame_indices",
    "required_condition_len",
    "TASK_NAMES",
]

BUFFER_MODES = ("replicate-last", "continue-source")
BUFFER_POLICIES = ("uniform", "constant", "concave", "convex")
TASK_NAMES = ("i2v", "style-transfer", "action-transfer", "keyframe-interp", "multi-cond")


@dataclass(frozen=True)
class LayoutSpec:
    """Immutable description of one condition/buffer/target layout.

    Attributes:
        L: number of clean condition frames at the head, >= 1.
        B: number of buffer frames, >= 0.
        K: number of target frames, >= 1.
        buffer_mode: where buffer content comes from before noising.
            "replicate-last" copies condition frame L; "continue-source"
            takes source frames L+1..L+B.
        query_frames: (position, source_row) pairs for clean frames
            pinned inside the target region.
        task: informal tag, carried into checkpoints for compatibility
            checks.
    """

    L: int
    B: int
    K: int
    buffer_mode: str = "replicate-last"
    query_frames: tuple = ()
    task: str = "custom"

    def __post_init__(self):
        if self.L < 1 or self.B < 0 or self.K < 1:
            raise InvalidArgumentError(
                f"need L >= 1, B >= 0, K >= 1, got L={self.L} B={self.B} K={self.K}"
            )
        if self.buffer_mode not in BUFFER_MODES:
            raise InvalidArgumentError(f"unknown buffer mode {self.buffer_mode!r}")
        seen = set()
        for pos, src in self.query_frames:
            if not self.L + self.B <= pos < self.total:
                raise InvalidArgumentError(
                    f"query position {pos} outside target region "
                    f"[{self.L + self.B}, {self.total})"
                )
            if pos in seen:
                raise InvalidArgumentError(f"duplicate query position {pos}")
            if src < 0:
                raise InvalidArgumentError(f"negative query source row {src}")
            seen.add(pos)

    @property
    def total(self) -> int:
        return self.L + self.B + self.K


def _round_half_down(x: float) -> int:
    # Quantization rule used everywhere levels are rounded: ties go to
    # the smaller level so a buffer never starts noisier than intended.
    import math
    return int(math.ceil(x - 0.5))


def buffer_levels(B: int, T: int, policy: str = "uniform", constant: int | None = None) -> np.ndarray:
    """Initial buffer noise levels for B buffer frames on a T-step schedule.

    Policies:
        uniform:  level_b = round(b / (B + 1) * T), evenly spaced.
        constant: every buffer at the given level.
        concave:  quadratic profile bent toward 0, round((b/(B+1))^2 * T).
        convex:   quadratic profile bent toward T, round((1-(1-b/(B+1))^2) * T).

    Rounding is half-down.  Levels must land strictly inside (0, T) and,
    except for the constant policy, be strictly increasing; a (B, T)
    combination too tight for that is rejected.
    """
    if B < 0:
        raise InvalidArgumentError(f"B must be >= 0, got {B}")
    if T < 2:
        raise InvalidArgumentError(f"T must be >= 2, got {T}")
    if B == 0:
        return np.zeros(0, dtype=np.int64)
    if policy == "constant":
        if constant is None:
            raise InvalidArgumentError("constant policy needs a level")
        if not 0 < constant < T:
            raise InvalidArgumentError(f"constant level {constant} outside (0, {T})")
        return np.full(B, int(constant), dtype=np.int64)
    if policy == "uniform":
        fracs = [b / (B + 1) for b in range(1, B + 1)]
    elif policy == "concave":
        fracs = [(b / (B + 1)) ** 2 for b in range(1, B + 1)]
    elif policy == "convex":
        fracs = [1.0 - (1.0 - b / (B + 1)) ** 2 for b in range(1, B + 1)]
    else:
        raise InvalidArgumentError(f"unknown buffer policy {policy!r}")
    out = [_round_half_down(f * T) for f in fracs]
    if out[0] <= 0 or out[-1] >= T or any(b >= a for b, a in zip(out, out[1:])):
        raise InvalidArgumentError(
            f"policy {policy!r} cannot place {B} strictly increasing levels in (0, {T})"
        )
    return np.asarray(out, dtype=np.int64)


def noise_level_vector(spec: LayoutSpec, levels, t: int) -> np.ndarray:
    """Per-frame levels of the whole sequence when the global level is t.

    Condition frames sit at 0, buffer b at min(levels[b], t), targets at
    t; query positions are forced to 0.  Returns an int64 vector of
    length L + B + K.
    """
    t = int(t)
    if t < 0:
        raise InvalidArgumentError(f"global level must be >= 0, got {t}")
    if len(levels) != spec.B:
        raise ShapeError(f"expected {spec.B} buffer levels, got {len(levels)}")
    out = [0] * spec.L
    for lv in levels:
        out.append(lv if lv < t else t)
    out.extend([t] * spec.K)
    for pos, _ in spec.query_frames:
        out[pos] = 0
    return np.asarray(out, dtype=np.int64)


def buffer_content(condition: np.ndarray, source: np.ndarray, spec: LayoutSpec) -> np.ndarray:
    """Clean (pre-noise) content for the B buffer frames.

    Args:
        condition: (>= L, d) array; replicate-last copies its row L - 1.
        source: array the continuation is read from; continue-source
            takes rows L..L+B-1, so it needs at least L + B rows.
    """
    condition = np.asarray(condition, dtype=np.float64)
    if condition.ndim != 2 or condition.shape[0] < spec.L:
        raise ShapeError(f"condition needs >= {spec.L} frames, got shape {condition.shape}")
    if spec.B == 0:
        return np.zeros((0, condition.shape[1]), dtype=np.float64)
    if spec.buffer_mode == "replicate-last":
        return np.repeat(condition[spec.L - 1 : spec.L], spec.B, axis=0)
    source = np.asarray(source, dtype=np.float64)
    if source.ndim != 2:
        raise ShapeError(f"source must be a frame stack, got shape {source.shape}")
    if source.shape[0] < spec.L + spec.B:
        raise InvalidArgumentError(
            f"continue-source needs >= {spec.L + spec.B} source frames, got {source.shape[0]}"
        )
    return source[spec.L : spec.L + spec.B].copy()


def required_condition_len(spec: LayoutSpec) -> int:
    """Rows the condition array must have for composition and inference."""
    need = spec.L
    for _, src in spec.query_frames:
        need = max(need, src + 1)
    if spec.buffer_mode == "continue-source":
        need = max(need, spec.L + spec.B)
    return need


def loss_frame_indices(spec: LayoutSpec) -> np.ndarray:
    """Target-region indices that carry training loss (queries excluded)."""
    pinned = {pos for pos, _ in spec.query_frames}
    lo = spec.L + spec.B
    return np.asarray([i for i in range(lo, spec.total) if i not in pinned], dtype=np.int64)


def compose_initial(
    condition: np.ndarray,
    buffer_clean: np.ndarray,
    spec: LayoutSpec,
    levels,
    sched: NoiseSchedule,
    rng: Rng,
) -> np.ndarray:
    """Assemble the initial latent sequence for inference.

    Condition rows are copied clean, buffer rows are noised once to
    their initial levels, target rows start as pure N(0, I), and query
    positions are overwritten with their clean source rows.  Noise is
    drawn buffer-first then target, one (rows, d) block each, so the
    draw count is fixed by the layout alone.
    """
    condition = np.asarray(condition, dtype=np.float64)
    need = required_condition_len(spec)
    if condition.ndim != 2 or condition.shape[0] < need:
        raise ShapeError(f"condition needs >= {need} frames, got shape {condition.shape}")
    d = condition.shape[1]
    buffer_clean = np.asarray(buffer_clean, dtype=np.float64)
    if buffer_clean.shape != (spec.B, d):
        raise ShapeError(f"buffer content must be ({spec.B}, {d}), got {buffer_clean.shape}")
    if len(levels) != spec.B:
        raise ShapeError(f"expected {spec.B} buffer levels, got {len(levels)}")

    seq = np.empty((spec.total, d), dtype=np.float64)
    seq[: spec.L] = condition[: spec.L]
    buf_eps = rng.normal((spec.B, d))
    for b in range(spec.B):
        seq[spec.L + b] = forward_diffuse(buffer_clean[b], int(levels[b]), buf_eps[b], sched)
    seq[spec.L + spec.B :] = rng.normal((spec.K, d))
    for pos, src in spec.query_frames:
        seq[pos] = condition[src]
    return seq


def preset_layout(task: str) -> LayoutSpec:
    """Frame layout used by each built-in toy task.

    Every preset keeps the same three-region structure; they differ in
    how many frames each region gets, where buffer content comes from,
    and whether a clean query frame is pinned at the target start.
    """
    if task == "i2v":
        return LayoutSpec(L=1, B=3, K=9, buffer_mode="replicate-last", task=task)
    if task == "style-transfer":
        return LayoutSpec(L=4, B=3, K=6, buffer_mode="continue-source", task=task)
    if task == "action-transfer":
        # One clean query frame (the novel scene) pinned at the start of
        # the target region; its content is condition row 6, right after
        # the six reference frames.
        return LayoutSpec(
            L=6, B=0, K=6, buffer_mode="replicate-last",
            query_frames=((6, 6),), task=task,
        )
    if task == "keyframe-interp":
        return LayoutSpec(L=4, B=3, K=6, buffer_mode="replicate-last", task=task)
    if task == "multi-cond":
        return LayoutSpec(L=4, B=3, K=6, buffer_mode="replicate-last", task=task)
    raise InvalidArgumentError(f"unknown task {task!r}")

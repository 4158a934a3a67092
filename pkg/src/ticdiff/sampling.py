"""Reverse-process sampling with per-frame noise levels.

Inference walks a strided grid of global levels t_N > ... > t_1.  At
each grid point only the *active* frames, those whose current level
equals the global level, are denoised one step; clean condition frames
and buffers that have not yet been reached are left untouched.  A buffer
initialized at level 250 simply waits until the global level drops to
250 and is then carried along with the targets, which reproduces the
min(level, t) rule without ever re-noising anything.

Buffer levels are snapped to the nearest grid element (ties toward the
smaller level) so "buffer joins" always land exactly on a grid step.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .denoiser import DenoiserParams, as_eps_fn
from .diffusion import NoiseSchedule, forward_diffuse
from .errors import InvalidArgumentError, ShapeError
from .layout import (
    LayoutSpec,
    buffer_content,
    compose_initial,
    noise_level_vector,
)
from .rng import Rng

__all__ = [
    "SamplerGrid",
    "build_grid",
    "snap_to_grid",
    "active_set",
    "sampler_step",
    "tic_inference",
    "baseline_replace",
    "baseline_no_buffer",
    "sample_homogeneous",
    "SampleTrace",
]

SAMPLER_MODES = ("ddim", "ddpm")


@dataclass(frozen=True)
class SamplerGrid:
    """Strictly decreasing global levels, first element T, last >= 1."""

    steps: np.ndarray

    def __post_init__(self):
        s = self.steps
        if s.ndim != 1 or len(s) < 1:
            raise ShapeError("grid must be a non-empty 1-d integer array")
        if s[-1] < 1 or np.any(np.diff(s) >= 0):
            raise InvalidArgumentError("grid must be strictly decreasing and end at >= 1")

    def __len__(self):
        return len(self.steps)


def build_grid(T: int, n: int = 50) -> SamplerGrid:
    """Evenly strided grid of n levels from T down to 1 (fewer if n > T)."""
    if T < 2:
        raise InvalidArgumentError(f"T must be >= 2, got {T}")
    if n < 1:
        raise InvalidArgumentError(f"grid size must be >= 1, got {n}")
    n = min(n, T)
    pts = np.rint(np.linspace(T, 1, n)).astype(np.int64)
    keep = [pts[0]]
    for p in pts[1:]:
        if p < keep[-1]:
            keep.append(p)
    return SamplerGrid(steps=np.asarray(keep, dtype=np.int64))


def snap_to_grid(levels, grid: SamplerGrid) -> np.ndarray:
    """Move each level to the nearest grid element, ties downward."""
    out = []
    steps = grid.steps
    for lv in np.asarray(levels, dtype=np.int64):
        dist = np.abs(steps - lv)
        best = np.min(dist)
        # grid is descending, so the last index among ties is the smaller level
        out.append(int(steps[np.where(dist == best)[0][-1]]))
    return np.asarray(out, dtype=np.int64)


def active_set(levels, t: int) -> np.ndarray:
    """Indices of frames currently sitting at global level t."""
    levels = np.asarray(levels)
    return np.flatnonzero(levels == int(t))


def _as_fn(model):
    if isinstance(model, DenoiserParams):
        return as_eps_fn(model)
    if callable(model):
        return model
    raise InvalidArgumentError("model must be DenoiserParams or a callable")


# Latents are pixel-valued in [-1, 1]; projecting the implied clean
# frame onto that range keeps early steps (tiny alpha) from amplifying
# model error.  Exact for any content already inside the range.
X0_RANGE = 1.0


def _step_rows(seq, rows, eps_rows, t_cur, t_next, mode, sched, rng):
    """Move the given rows from level t_cur to t_next, one reverse step."""
    a_c, s_c = sched.alpha[t_cur], sched.sigma[t_cur]
    a_n, s_n = sched.alpha[t_next], sched.sigma[t_next]
    x0 = np.clip((seq[rows] - s_c * eps_rows) / a_c, -X0_RANGE, X0_RANGE)
    if mode == "ddim":
        return a_n * x0 + s_n * eps_rows
    abar_c, abar_n = a_c**2, a_n**2
    var = (1.0 - abar_n) / (1.0 - abar_c) * (1.0 - abar_c / abar_n)
    var = max(float(var), 0.0)
    direction = np.sqrt(max(1.0 - abar_n - var, 0.0))
    noise = rng.normal(eps_rows.shape)
    return a_n * x0 + direction * eps_rows + np.sqrt(var) * noise


def sampler_step(model, seq, levels, t_cur: int, t_next: int, label: int, mode: str,
                 sched: NoiseSchedule, rng: Rng | None = None) -> np.ndarray:
    """One reverse step applied to the frames at level t_cur.

    The model sees the whole sequence with its per-frame levels; only
    active rows change, all others are returned bit-identical.  "ddim"
    is deterministic; "ddpm" adds posterior noise drawn from rng.
    """
    t_cur, t_next = int(t_cur), int(t_next)
    if not t_cur > t_next >= 0:
        raise InvalidArgumentError(f"need t_cur > t_next >= 0, got {t_cur} -> {t_next}")
    if t_cur > sched.T:
        raise InvalidArgumentError(f"t_cur {t_cur} above schedule horizon {sched.T}")
    if mode not in SAMPLER_MODES:
        raise InvalidArgumentError(f"unknown sampler mode {mode!r}")
    if mode == "ddpm" and rng is None:
        raise InvalidArgumentError("ddpm mode needs an rng")
    levels = np.asarray(levels, dtype=np.int64)
    rows = active_set(levels, t_cur)
    if len(rows) == 0:
        raise InvalidArgumentError(f"no frame at level {t_cur}")
    eps = _as_fn(model)(seq, levels, label)
    out = np.array(seq, dtype=np.float64, copy=True)
    out[rows] = _step_rows(out, rows, eps[rows], t_cur, t_next, mode, sched, rng)
    return out


@dataclass
class SampleTrace:
    """Per-grid-step records of what the sampler did.

    Each row is (step index, global level, active row indices, per-frame
    L2 norm after the step).  `frames` optionally holds full sequence
    snapshots when collecting was requested.
    """

    n_frames: int
    rows: list = field(default_factory=list)
    frames: list = field(default_factory=list)

    def record(self, step, t, active, seq, keep_frames=False):
        self.rows.append((int(step), int(t), np.asarray(active, dtype=np.int64),
                          np.sqrt((seq * seq).sum(axis=1))))
        if keep_frames:
            self.frames.append(seq.copy())

    def active_mask(self, row: int) -> int:
        return int(sum(1 << int(i) for i in self.rows[row][2]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "t", "active_mask"] + [f"norm_{i}" for i in range(self.n_frames)])
            for i, (step, t, _active, norms) in enumerate(self.rows):
                w.writerow([step, t, self.active_mask(i)] + [f"{x:.17g}" for x in norms])


def _grid_pairs(grid: SamplerGrid):
    steps = grid.steps
    for j, t_cur in enumerate(steps):
        t_next = int(steps[j + 1]) if j + 1 < len(steps) else 0
        yield j, int(t_cur), t_next


def tic_inference(model, condition, spec: LayoutSpec, levels, label: int,
                  grid: SamplerGrid, mode: str, rng: Rng, sched: NoiseSchedule,
                  collect_frames: bool = False):
    """Generate the K target frames given a clean condition.

    Composes [condition | noised buffers | pure noise], then walks the
    grid denoising the active set at every step.  Buffer levels are
    snapped to the grid first.  Returns (targets, trace).
    """
    if grid.steps[0] != sched.T:
        raise InvalidArgumentError("grid must start at the schedule horizon")
    snapped = snap_to_grid(levels, grid)
    buf_clean = buffer_content(condition, condition, spec)
    seq = compose_initial(condition, buf_clean, spec, snapped, sched, rng)
    trace = SampleTrace(n_frames=spec.total)
    for j, t_cur, t_next in _grid_pairs(grid):
        frame_levels = noise_level_vector(spec, snapped, t_cur)
        seq = sampler_step(model, seq, frame_levels, t_cur, t_next, label, mode, sched, rng)
        trace.record(j, t_cur, active_set(frame_levels, t_cur), seq, collect_frames)
    return seq[spec.L + spec.B :], trace


def baseline_no_buffer(model, condition, spec: LayoutSpec, label: int,
                       grid: SamplerGrid, mode: str, rng: Rng, sched: NoiseSchedule):
    """The same pipeline with the buffer removed (condition abuts targets)."""
    stripped = LayoutSpec(
        L=spec.L,
        B=0,
        K=spec.K,
        buffer_mode=spec.buffer_mode,
        query_frames=tuple((pos - spec.B, src) for pos, src in spec.query_frames),
        task=spec.task,
    )
    return tic_inference(model, condition, stripped, np.zeros(0, dtype=np.int64),
                         label, grid, mode, rng, sched)


def baseline_replace(model, condition, spec: LayoutSpec, label: int,
                     grid: SamplerGrid, rng: Rng, sched: NoiseSchedule, mode: str = "ddim"):
    """Homogeneous denoising with the condition re-injected every step.

    All L+B+K frames start as noise and step together at the global
    level; after each step the condition rows (and query positions) are
    overwritten with the clean content noised to the new level.  The
    final overwrite at level 0 restores the condition exactly.
    """
    condition = np.asarray(condition, dtype=np.float64)
    fn = _as_fn(model)
    d = condition.shape[1]
    pinned = [(i, i) for i in range(spec.L)] + list(spec.query_frames)
    seq = rng.normal((spec.total, d))
    trace = SampleTrace(n_frames=spec.total)
    for j, t_cur, t_next in _grid_pairs(grid):
        frame_levels = np.full(spec.total, t_cur, dtype=np.int64)
        eps = fn(seq, frame_levels, label)
        rows = np.arange(spec.total)
        seq = seq.copy()
        seq[rows] = _step_rows(seq, rows, eps, t_cur, t_next, mode, sched, rng)
        for pos, src in pinned:
            seq[pos] = forward_diffuse(condition[src], t_next, rng.normal((d,)), sched)
        trace.record(j, t_cur, rows, seq)
    return seq[spec.L + spec.B :], trace


def sample_homogeneous(model, n_frames: int, d: int, label: int,
                       grid: SamplerGrid, mode: str, rng: Rng, sched: NoiseSchedule) -> np.ndarray:
    """Unconditional clip: every frame from noise, all frames stepped together."""
    seq = rng.normal((n_frames, d))
    for _j, t_cur, t_next in _grid_pairs(grid):
        frame_levels = np.full(n_frames, t_cur, dtype=np.int64)
        eps = _as_fn(model)(seq, frame_levels, label)
        rows = np.arange(n_frames)
        out = seq.copy()
        out[rows] = _step_rows(seq, rows, eps, t_cur, t_next, mode, sched, rng)
        seq = out
    return seq

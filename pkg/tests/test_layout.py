import math
from fractions import Fraction

import numpy as np
import pytest

from ticdiff.diffusion import build_schedule, forward_diffuse
from ticdiff.errors import InvalidArgumentError, ShapeError
from ticdiff.layout import (LayoutSpec, buffer_content, buffer_levels,
                            compose_initial, loss_frame_indices,
                            noise_level_vector, preset_layout,
                            required_condition_len)
from ticdiff.rng import Rng


def ref_uniform_levels(B, T):
    # Exact rational arithmetic, rounding halves toward the smaller level.
    return [int(math.ceil(Fraction(b * T, B + 1) - Fraction(1, 2))) for b in range(1, B + 1)]


def ref_level_vector(L, B, K, levels, t, query_positions=()):
    out = [0] * L + [min(lv, t) for lv in levels] + [t] * K
    for pos in query_positions:
        out[pos] = 0
    return out


# ---------------------------------------------------------------- levels

def test_uniform_levels_canonical():
    assert buffer_levels(3, 1000).tolist() == [250, 500, 750]


def test_uniform_levels_empty():
    assert buffer_levels(0, 1000).tolist() == []


def test_constant_levels():
    assert buffer_levels(3, 100, "constant", constant=25).tolist() == [25, 25, 25]


def test_constant_level_range_checked():
    with pytest.raises(InvalidArgumentError):
        buffer_levels(2, 100, "constant", constant=0)
    with pytest.raises(InvalidArgumentError):
        buffer_levels(2, 100, "constant", constant=100)


def test_uniform_levels_match_rational_rounding():
    for T in range(2, 51):
        for B in range(0, 6):
            got = buffer_levels(B, T).tolist() if B * 2 < T or B == 0 else None
            if got is None:
                continue
            assert got == ref_uniform_levels(B, T), (T, B)


def test_uniform_gap_balance():
    for B, T in [(3, 1000), (5, 997), (4, 50), (2, 13)]:
        lv = buffer_levels(B, T).tolist()
        gaps = np.diff([0] + lv + [T])
        assert gaps.max() - gaps.min() <= 1


def test_degenerate_uniform_levels_rejected():
    # T too small to hold B strictly increasing interior levels.
    with pytest.raises(InvalidArgumentError):
        buffer_levels(5, 4)


def test_concave_convex_levels():
    for policy in ("concave", "convex"):
        lv = buffer_levels(4, 1000, policy).tolist()
        assert all(0 < v < 1000 for v in lv)
        assert all(a < b for a, b in zip(lv, lv[1:]))
    uni = buffer_levels(4, 1000).tolist()
    assert buffer_levels(4, 1000, "concave").tolist() != uni
    assert buffer_levels(4, 1000, "convex").tolist() != uni
    # Concave bends toward 0, convex toward T.
    assert buffer_levels(4, 1000, "concave")[0] < uni[0]
    assert buffer_levels(4, 1000, "convex")[0] > uni[0]


# ------------------------------------------------------- level vectors

def test_level_vector_at_T():
    spec = LayoutSpec(task="i2v", L=1, B=3, K=2)
    lv = buffer_levels(3, 1000)
    assert noise_level_vector(spec, lv, 1000).tolist() == [0, 250, 500, 750, 1000, 1000]


def test_level_vector_min_rule():
    spec = LayoutSpec(task="i2v", L=1, B=3, K=2)
    lv = buffer_levels(3, 1000)
    assert noise_level_vector(spec, lv, 600).tolist() == [0, 250, 500, 600, 600, 600]


def test_level_vector_at_zero():
    spec = LayoutSpec(task="i2v", L=2, B=3, K=3)
    lv = buffer_levels(3, 1000)
    assert noise_level_vector(spec, lv, 0).tolist() == [0] * 8


def test_level_vector_query_positions_clean():
    spec = LayoutSpec(task="action-transfer", L=2, B=0, K=3, query_frames=((2, 2),))
    vec = noise_level_vector(spec, np.zeros(0, dtype=np.int64), 700)
    assert vec.tolist() == [0, 0, 0, 700, 700]


def test_level_vector_brute_force_small():
    for T in (7, 20, 50):
        for B in range(0, 4):
            if B >= T:
                continue
            try:
                lv = buffer_levels(B, T)
            except InvalidArgumentError:
                continue
            spec = LayoutSpec(task="i2v", L=2, B=B, K=2)
            for t in range(T + 1):
                got = noise_level_vector(spec, lv, t).tolist()
                assert got == ref_level_vector(2, B, 2, lv.tolist(), t), (T, B, t)


def test_level_vector_monotone_in_t():
    spec = LayoutSpec(task="i2v", L=1, B=3, K=2)
    lv = buffer_levels(3, 50)
    prev = noise_level_vector(spec, lv, 50)
    for t in range(49, -1, -1):
        cur = noise_level_vector(spec, lv, t)
        assert np.all(cur <= prev)
        prev = cur


# ------------------------------------------------------ buffer content

def test_replicate_last_content():
    spec = LayoutSpec(task="i2v", L=1, B=3, K=9)
    cond = np.arange(8.0).reshape(1, 8)
    buf = buffer_content(cond, None, spec)
    assert buf.shape == (3, 8)
    for i in range(3):
        assert np.array_equal(buf[i], cond[0])


def test_continue_source_content():
    spec = LayoutSpec(task="style-transfer", L=4, B=3, K=6,
                      buffer_mode="continue-source")
    source = Rng(0).normal((13, 8))
    buf = buffer_content(source[:4], source, spec)
    assert np.array_equal(buf, source[4:7])


def test_empty_buffer_content():
    spec = LayoutSpec(task="action-transfer", L=6, B=0, K=6)
    cond = Rng(1).normal((6, 8))
    assert buffer_content(cond, None, spec).shape == (0, 8)


def test_continue_source_needs_enough_frames():
    spec = LayoutSpec(task="style-transfer", L=4, B=3, K=6,
                      buffer_mode="continue-source")
    short = Rng(2).normal((5, 8))
    with pytest.raises(InvalidArgumentError):
        buffer_content(short[:4], short, spec)


# ----------------------------------------------------- compose_initial

def test_compose_keeps_condition_bits():
    sched = build_schedule(1000)
    spec = preset_layout("i2v")
    lv = buffer_levels(spec.B, 1000)
    cond = Rng(3).normal((1, 64))
    buf = buffer_content(cond, None, spec)
    seq = compose_initial(cond, buf, spec, lv, sched, Rng(4))
    assert np.array_equal(seq[:1], cond)
    assert seq.shape == (13, 64)


def test_compose_deterministic():
    sched = build_schedule(1000)
    spec = preset_layout("i2v")
    lv = buffer_levels(spec.B, 1000)
    cond = Rng(5).normal((1, 64))
    buf = buffer_content(cond, None, spec)
    a = compose_initial(cond, buf, spec, lv, sched, Rng(6))
    b = compose_initial(cond, buf, spec, lv, sched, Rng(6))
    assert np.array_equal(a, b)


def test_compose_buffer_moments():
    # Buffer frame b should carry std close to sqrt(alpha^2 var(c) + sigma^2).
    sched = build_schedule(1000)
    spec = LayoutSpec(task="i2v", L=1, B=3, K=1)
    lv = buffer_levels(3, 1000)
    cond = Rng(7).normal((1, 4096))
    buf = buffer_content(cond, None, spec)
    seq = compose_initial(cond, buf, spec, lv, sched, Rng(8))
    var_c = float(cond.var())
    for b, tau in enumerate(lv):
        want = math.sqrt(sched.alpha[tau] ** 2 * var_c + sched.sigma[tau] ** 2)
        got = float(seq[1 + b].std())
        assert abs(got - want) / want < 0.10, (b, got, want)


def test_compose_query_frames_clean():
    sched = build_schedule(1000)
    spec = preset_layout("action-transfer")
    cond = Rng(9).normal((7, 64))
    buf = buffer_content(cond, None, spec)
    seq = compose_initial(cond, buf, spec, np.zeros(0, dtype=np.int64), sched, Rng(10))
    # Query frame: target position 6 pinned to condition row 6.
    assert np.array_equal(seq[6], cond[6])


def test_compose_shape_checks():
    sched = build_schedule(100)
    spec = LayoutSpec(task="i2v", L=1, B=2, K=1)
    lv = buffer_levels(2, 100)
    with pytest.raises(ShapeError):
        # Buffer block must be exactly (B, d).
        compose_initial(Rng(0).normal((1, 8)), Rng(0).normal((3, 8)), spec, lv, sched, Rng(1))
    with pytest.raises(ShapeError):
        # Too few condition rows.
        compose_initial(Rng(0).normal((0, 8)), Rng(0).normal((2, 8)), spec, lv, sched, Rng(1))


# ----------------------------------------------------------- presets

def test_preset_totals():
    assert preset_layout("i2v").total == 13
    assert preset_layout("style-transfer").total == 13
    assert preset_layout("keyframe-interp").total == 13
    assert preset_layout("multi-cond").total == 13


def test_preset_fields():
    s = preset_layout("i2v")
    assert (s.L, s.B, s.K, s.buffer_mode) == (1, 3, 9, "replicate-last")
    s = preset_layout("style-transfer")
    assert (s.L, s.B, s.K, s.buffer_mode) == (4, 3, 6, "continue-source")
    s = preset_layout("action-transfer")
    assert (s.L, s.B, s.K) == (6, 0, 6)
    assert s.query_frames == ((6, 6),)
    s = preset_layout("keyframe-interp")
    assert (s.L, s.B, s.K, s.buffer_mode) == (4, 3, 6, "replicate-last")
    s = preset_layout("multi-cond")
    assert (s.L, s.B, s.K, s.buffer_mode) == (4, 3, 6, "replicate-last")


def test_unknown_preset():
    with pytest.raises(InvalidArgumentError):
        preset_layout("video-outpainting")


def test_spec_validation():
    with pytest.raises(InvalidArgumentError):
        LayoutSpec(task="x", L=0, B=1, K=1)
    with pytest.raises(InvalidArgumentError):
        LayoutSpec(task="x", L=1, B=1, K=0)
    with pytest.raises(InvalidArgumentError):
        LayoutSpec(task="x", L=1, B=1, K=2, query_frames=((1, 0),))  # inside buffer
    with pytest.raises(InvalidArgumentError):
        LayoutSpec(task="x", L=1, B=0, K=2, query_frames=((1, 0), (1, 0)))


def test_loss_frames_exclude_queries():
    spec = preset_layout("action-transfer")
    idx = loss_frame_indices(spec)
    assert 6 not in idx
    assert idx.tolist() == [7, 8, 9, 10, 11]
    plain = preset_layout("i2v")
    assert loss_frame_indices(plain).tolist() == list(range(4, 13))


def test_required_condition_len():
    assert required_condition_len(preset_layout("i2v")) == 1
    assert required_condition_len(preset_layout("action-transfer")) == 7

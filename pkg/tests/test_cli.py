"""End-to-end command tests on a miniature configuration.

Everything here runs through main(argv) exactly as a shell user would,
against a module-scoped scratch run so the expensive steps (pretrain,
finetune) happen once.
"""

import json

import numpy as np
import pytest

from ticdiff.cli import main, read_pgm
from ticdiff.config import resolve_config
from ticdiff.errors import DataFormatError
from ticdiff.tasks import load_dataset
from ticdiff.training import load_checkpoint, save_checkpoint

TINY = [
    "--set", "arch.d_model=16",
    "--set", "arch.heads=2",
    "--set", "arch.layers=1",
    "--set", "schedule.steps=60",
    "--set", "sampling.grid=8",
    "--set", "data.pretrain_clips=3",
    "--set", "data.clip_frames=6",
    "--set", "data.train_samples=3",
    "--set", "data.eval_samples=2",
    "--set", "training.pretrain_steps=6",
    "--set", "training.finetune_steps=4",
]


def run(out_dir, *argv):
    return main(TINY + ["--out", str(out_dir)] + list(argv))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One finished gen-data + pretrain + finetune pipeline."""
    d = tmp_path_factory.mktemp("run")
    assert run(d, "gen-data") == 0
    assert run(d, "pretrain") == 0
    assert run(d, "finetune") == 0
    return d


class TestEcho:
    def test_dry_run_echo_reparses_identically(self, tmp_path, capsys):
        rc = main(["--dry-run", "--task", "style-transfer",
                   "--set", "training.lr=0.002", "--out", str(tmp_path), "gen-data"])
        assert rc == 0
        echoed = json.loads(capsys.readouterr().out)
        expect = resolve_config(None, ["task=style-transfer", "training.lr=0.002",
                                       f"paths.out={tmp_path}"])
        assert echoed == expect

    def test_flags_win_over_config_file(self, tmp_path, capsys):
        f = tmp_path / "cfg.json"
        f.write_text(json.dumps({"seed": 3, "task": "multi-cond"}))
        rc = main(["--config", str(f), "--seed", "5", "--dry-run", "gen-data"])
        assert rc == 0
        echoed = json.loads(capsys.readouterr().out)
        assert echoed["seed"] == 5
        assert echoed["task"] == "multi-cond"

    def test_unknown_key_exits_2(self, tmp_path):
        assert main(["--set", "sede=1", "--out", str(tmp_path), "gen-data"]) == 2

    def test_bad_value_exits_2(self, tmp_path):
        assert main(["--set", "schedule.kind=sigmoid", "--out", str(tmp_path),
                     "gen-data"]) == 2


class TestGenData:
    def test_writes_all_datasets(self, workdir):
        for name in ("pretrain.ticd", "i2v-train.ticd", "i2v-eval.ticd"):
            assert (workdir / name).exists()
            assert (workdir / (name + ".manifest.json")).exists()
        manifest = json.loads((workdir / "manifest.json").read_text())
        assert set(manifest["files"]) == {"pretrain.ticd", "i2v-train.ticd", "i2v-eval.ticd"}

    def test_sample_counts_match_config(self, workdir):
        train, meta = load_dataset(workdir / "i2v-train.ticd")
        assert meta["n_samples"] == len(train) == 3
        _, emeta = load_dataset(workdir / "i2v-eval.ticd")
        assert emeta["n_samples"] == 2

    def test_file_size_matches_header_arithmetic(self, workdir):
        # i2v: 4 generator parameters, 1 condition + 9 target rows of 64 px.
        assert (workdir / "i2v-train.ticd").stat().st_size == 36 + 3 * (8 * 4 + 4 * 10 * 64)

    def test_rerun_is_byte_identical(self, workdir, tmp_path):
        assert run(tmp_path, "gen-data") == 0
        for name in ("pretrain.ticd", "i2v-train.ticd", "i2v-eval.ticd"):
            assert (tmp_path / name).read_bytes() == (workdir / name).read_bytes()


class TestTrainingCommands:
    def test_pretrain_checkpoint_and_log(self, workdir):
        ckpt = load_checkpoint(workdir / "pretrained.ticf")
        assert ckpt.step == 6
        lines = (workdir / "pretrain-loss.csv").read_text().strip().split("\n")
        assert lines[0] == "step,loss,wall_time"
        assert len(lines) == 7

    def test_finetune_continues_step_counter(self, workdir):
        tuned = load_checkpoint(workdir / "i2v-tuned.ticf")
        assert tuned.step == 10
        rc = run(workdir, "finetune", "--checkpoint", str(workdir / "i2v-tuned.ticf"),
                 "--out-checkpoint", str(workdir / "again.ticf"))
        assert rc == 0
        assert load_checkpoint(workdir / "again.ticf").step == 14

    def test_task_dataset_mismatch_exits_2(self, workdir):
        rc = run(workdir, "--task", "style-transfer", "finetune",
                 "--data", str(workdir / "i2v-train.ticd"))
        assert rc == 2

    def test_missing_data_exits_3(self, tmp_path):
        assert run(tmp_path, "pretrain") == 3

    def test_poisoned_checkpoint_exits_4(self, workdir, tmp_path):
        ckpt = load_checkpoint(workdir / "i2v-tuned.ticf")
        ckpt.params.tensors["in_w"][0, 0] = np.nan
        bad = tmp_path / "bad.ticf"
        save_checkpoint(ckpt, bad)
        rc = run(workdir, "sample", "--checkpoint", str(bad))
        assert rc == 4


class TestSample:
    def test_writes_frames_trace_and_stack(self, workdir):
        assert run(workdir, "sample", "--variant", "ticft") == 0
        d = workdir / "samples-ticft" / "sample-0000"
        frames = sorted(d.glob("frame-*.pgm"))
        assert len(frames) == 9  # i2v target length
        assert (d / "trace.csv").exists()
        stack = np.load(workdir / "samples-ticft" / "outputs.npy")
        assert stack.shape == (1, 9, 64)

    def test_pgm_round_trip_error_bound(self, workdir):
        d = workdir / "samples-ticft" / "sample-0000"
        stack = np.load(workdir / "samples-ticft" / "outputs.npy")
        for j, p in enumerate(sorted(d.glob("frame-*.pgm"))):
            back = read_pgm(p)
            truth = np.clip(stack[0, j], -1.0, 1.0)
            assert np.abs(back - truth).max() <= 1.0 / 255.0 + 1e-12

    def test_ticft_without_buffers_equals_no_buffer_variant(self, workdir):
        assert run(workdir, "sample", "--variant", "ticft", "--buffer-len", "0") == 0
        a = np.load(workdir / "samples-ticft" / "outputs.npy")
        assert run(workdir, "sample", "--variant", "no-buffer") == 0
        b = np.load(workdir / "samples-no-buffer" / "outputs.npy")
        np.testing.assert_array_equal(a, b)
        # restore the buffered outputs for later tests
        assert run(workdir, "sample", "--variant", "ticft") == 0


class TestEval:
    def test_ground_truth_scores_zero(self, workdir, tmp_path):
        samples, _ = load_dataset(workdir / "i2v-eval.ticd")
        d = tmp_path / "perfect"
        d.mkdir()
        np.save(d / "outputs.npy", np.stack([s.target for s in samples]))
        (d / "outputs.json").write_text(json.dumps(
            {"task": "i2v", "variant": "oracle", "indices": [0, 1],
             "frames_per_sample": 9}))
        rc = run(workdir, "eval", "--outputs", str(d))
        assert rc == 0
        agg = json.loads((d / "report.json").read_text())
        assert agg["target_mse_mean"] == 0.0
        assert agg["condition_fidelity_mean"] == 0.0
        assert agg["smoothness_mean"] > 0.0

    def test_report_rows_match_sample_count(self, workdir):
        assert run(workdir, "sample", "--variant", "ticft", "--all") == 0
        assert run(workdir, "eval", "--outputs", str(workdir / "samples-ticft")) == 0
        lines = (workdir / "samples-ticft" / "report.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 2 + 2  # header, one row per sample, mean, std

    def test_eval_from_pgm_matches_quantization(self, workdir):
        assert run(workdir, "eval", "--outputs", str(workdir / "samples-ticft"),
                   "--from-pgm") == 0

    def test_missing_outputs_exits_3(self, workdir, tmp_path):
        assert run(workdir, "eval", "--outputs", str(tmp_path / "nothing")) == 3


class TestAblate:
    def test_table_covers_variants_and_buffer_sizes(self, workdir):
        rc = run(workdir, "ablate", "--buffer-range", "1", "2")
        assert rc == 0
        lines = (workdir / "ablation.csv").read_text().strip().split("\n")
        header = lines[0].split(",")
        assert header[:2] == ["variant", "B"]
        for metric in ("target_mse_mean", "condition_fidelity_mean", "smoothness_mean"):
            assert metric in header
        got = {tuple(line.split(",")[:2]) for line in lines[1:]}
        expect = {("no-buffer", "0")}
        for v in ("ticft", "replace", "constant-t", "concave", "convex"):
            expect |= {(v, "1"), (v, "2")}
        assert got == expect

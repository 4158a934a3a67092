"""Command-line front end: reproducible data generation, training, sampling, eval.

Every command echoes its fully resolved config as canonical JSON before doing
any work; the echo reparses to an identical dict. All randomness flows from
config["seed"] through purpose-string key derivation, so reruns are
byte-identical. Exit codes: 0 ok, 2 config error, 3 IO error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import (arch_for, canonical_json, layout_for, resolve_config,
                     train_config_for)
from .diffusion import build_schedule
from .errors import DataFormatError, InvalidArgumentError, NumericError, TicdiffError
from .layout import buffer_levels
from .pipeline import (VARIANTS, make_pretrain_corpus, make_task_dataset,
                       run_variant, variant_levels, with_buffer_count)
from .rng import Rng, derive_key
from .sampling import build_grid
from .tasks import (EvalReport, PRETRAIN_LABEL, condition_fidelity, load_clips,
                    load_dataset, save_clips, save_dataset, smoothness,
                    target_mse, task_label)
from .training import (config_digest, finetune, load_checkpoint, pretrain,
                       save_checkpoint)


def _echo(cfg: dict) -> None:
    sys.stdout.write(canonical_json(cfg) + "\n")
    sys.stdout.flush()


def _levels_for(cfg: dict, B: int):
    """Buffer level ladder from the config's policy section."""
    T = cfg["schedule"]["steps"]
    pol = cfg["buffer"]["policy"]
    if B == 0:
        return np.zeros(0, dtype=np.int64)
    if pol == "constant":
        import math
        level = max(int(math.ceil(cfg["buffer"]["constant_pct"] / 100.0 * T - 0.5)), 1)
        return buffer_levels(B, T, "constant", constant=level)
    return buffer_levels(B, T, pol)


def _write_pgm(path: Path, frame: np.ndarray, h: int, w: int) -> None:
    """8-bit grayscale dump; [-1, 1] maps linearly onto 0..255."""
    px = np.clip((np.asarray(frame, dtype=np.float64).reshape(h, w) + 1.0) * 0.5 * 255.0,
                 0.0, 255.0)
    data = np.rint(px).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Inverse of the frame dump, back onto [-1, 1]; flat layout."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise DataFormatError(f"{path}: not a P5 PGM")
        dims = fh.readline().split()
        maxval = int(fh.readline())
        if maxval != 255:
            raise DataFormatError(f"{path}: expected maxval 255, got {maxval}")
        w, h = int(dims[0]), int(dims[1])
        raw = fh.read(h * w)
    if len(raw) != h * w:
        raise DataFormatError(f"{path}: truncated pixel data")
    px = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
    return px / 255.0 * 2.0 - 1.0


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands

def cmd_gen_data(cfg: dict, args) -> int:
    out = _out_dir(cfg)
    seed = cfg["seed"]
    h, w = cfg["frame"]["height"], cfg["frame"]["width"]
    dat = cfg["data"]
    task = cfg["task"]

    clips_path = out / "pretrain.ticd"
    corpus = make_pretrain_corpus(Rng(derive_key(seed, "pretrain-data")),
                                  dat["pretrain_clips"], dat["clip_frames"], h, w)
    save_clips(corpus, clips_path, master_seed=seed)

    train_path = out / f"{task}-train.ticd"
    eval_path = out / f"{task}-eval.ticd"
    train = make_task_dataset(Rng(derive_key(seed, f"task-data/{task}/train")),
                              task, dat["train_samples"], h, w)
    evals = make_task_dataset(Rng(derive_key(seed, f"task-data/{task}/eval")),
                              task, dat["eval_samples"], h, w)
    save_dataset(train, task, train_path, master_seed=seed)
    save_dataset(evals, task, eval_path, master_seed=seed)

    manifest = {
        "seed": seed,
        "task": task,
        "config_sha256": config_digest(cfg),
        "files": {p.name: {"sha256": _sha256(p), "bytes": p.stat().st_size}
                  for p in (clips_path, train_path, eval_path)},
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {clips_path} {train_path} {eval_path}")
    return 0


def cmd_pretrain(cfg: dict, args) -> int:
    out = _out_dir(cfg)
    clips_file = Path(args.data) if args.data else out / "pretrain.ticd"
    corpus, _meta = load_clips(clips_file)
    clips = [c.frames for c in corpus]
    sched = build_schedule(cfg["schedule"]["steps"], cfg["schedule"]["kind"])
    ckpt = pretrain(clips, cfg["training"]["pretrain_steps"], arch_for(cfg), sched,
                    train_config_for(cfg), Rng(derive_key(cfg["seed"], "pretrain")),
                    log_path=out / "pretrain-loss.csv",
                    config_hash=config_digest(cfg))
    path = Path(args.checkpoint) if args.checkpoint else out / "pretrained.ticf"
    save_checkpoint(ckpt, path)
    print(f"wrote {path} (step {ckpt.step})")
    return 0


def cmd_finetune(cfg: dict, args) -> int:
    out = _out_dir(cfg)
    src = Path(args.checkpoint) if args.checkpoint else out / "pretrained.ticf"
    ckpt = load_checkpoint(src)
    data_file = Path(args.data) if args.data else out / f"{cfg['task']}-train.ticd"
    samples, meta = load_dataset(data_file)
    if meta["task"] != cfg["task"]:
        raise InvalidArgumentError(
            f"dataset {data_file} holds task '{meta['task']}', config says '{cfg['task']}'")
    spec = layout_for(cfg)
    levels = _levels_for(cfg, spec.B)
    sched = build_schedule(cfg["schedule"]["steps"], cfg["schedule"]["kind"])
    if sched.T != ckpt.schedule_T or sched.kind != ckpt.schedule_kind:
        raise InvalidArgumentError(
            f"checkpoint schedule ({ckpt.schedule_kind}, T={ckpt.schedule_T}) "
            f"does not match config ({sched.kind}, T={sched.T})")
    tuned = finetune(ckpt, samples, spec, levels, cfg["training"]["finetune_steps"],
                     train_config_for(cfg), Rng(derive_key(cfg["seed"], "finetune")),
                     log_path=out / f"{cfg['task']}-finetune-loss.csv")
    path = Path(args.out_checkpoint) if args.out_checkpoint else out / f"{cfg['task']}-tuned.ticf"
    save_checkpoint(tuned, path)
    print(f"wrote {path} (step {tuned.step})")
    return 0


def _sample_one(model, sample, spec, variant, levels, label, grid, mode, sched, rng):
    frames, trace = run_variant(model, sample.condition, spec, variant, levels,
                                label, grid, mode, sched, rng)
    return frames, trace


def cmd_sample(cfg: dict, args) -> int:
    out = _out_dir(cfg)
    ckpt = load_checkpoint(Path(args.checkpoint) if args.checkpoint
                           else out / f"{cfg['task']}-tuned.ticf")
    data_file = Path(args.data) if args.data else out / f"{cfg['task']}-eval.ticd"
    samples, meta = load_dataset(data_file)
    task = meta["task"]
    variant = args.variant or cfg["sampling"]["variant"]
    if variant not in VARIANTS:
        raise InvalidArgumentError(f"unknown variant '{variant}'")
    spec = layout_for(cfg)
    if args.buffer_len is not None:
        spec = with_buffer_count(spec, args.buffer_len)
    if variant == "no-buffer":
        spec = with_buffer_count(spec, 0)
    levels = variant_levels(variant, spec.B, cfg["schedule"]["steps"],
                            cfg["buffer"]["constant_pct"])
    sched = build_schedule(cfg["schedule"]["steps"], cfg["schedule"]["kind"])
    grid = build_grid(sched.T, cfg["sampling"]["grid"])
    mode = cfg["sampling"]["mode"]
    label = args.label if args.label is not None else task_label(task)
    h, w = cfg["frame"]["height"], cfg["frame"]["width"]
    idx = range(len(samples)) if args.all else [args.sample_index]
    # One noise stream for all variants (common random numbers): paired
    # comparisons then differ only in the inference procedure, and ticft
    # with B=0 reproduces the no-buffer variant bit for bit.
    rng = Rng(derive_key(cfg["seed"], "sample"))

    def job(i):
        return _sample_one(ckpt.params, samples[i], spec, variant, levels, label,
                           grid, mode, sched, rng.derive(f"sample/{i}"))

    if cfg["threads"] > 1:
        with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
            results = list(pool.map(job, idx))
    else:
        results = [job(i) for i in idx]

    sample_dir = out / f"samples-{variant}"
    sample_dir.mkdir(parents=True, exist_ok=True)
    stacked = []
    for i, (frames, trace) in zip(idx, results):
        d = sample_dir / f"sample-{i:04d}"
        d.mkdir(parents=True, exist_ok=True)
        for j in range(frames.shape[0]):
            _write_pgm(d / f"frame-{j:02d}.pgm", frames[j], h, w)
        trace.write_csv(d / "trace.csv")
        stacked.append(frames)
    np.save(sample_dir / "outputs.npy", np.stack(stacked))
    with open(sample_dir / "outputs.json", "w", encoding="utf-8") as fh:
        json.dump({"task": task, "variant": variant, "indices": list(idx),
                   "frames_per_sample": int(stacked[0].shape[0])},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(stacked)} sample(s) under {sample_dir}")
    return 0


def cmd_eval(cfg: dict, args) -> int:
    out = _out_dir(cfg)
    outputs_dir = Path(args.outputs) if args.outputs else out / "samples-ticft"
    data_file = Path(args.data) if args.data else out / f"{cfg['task']}-eval.ticd"
    samples, _dmeta = load_dataset(data_file)
    meta_path = outputs_dir / "outputs.json"
    if not meta_path.exists():
        raise DataFormatError(f"missing {meta_path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    npy = outputs_dir / "outputs.npy"
    if npy.exists() and not args.from_pgm:
        outputs = np.load(npy)
    else:
        h, w = cfg["frame"]["height"], cfg["frame"]["width"]
        rows = []
        for i in meta["indices"]:
            d = outputs_dir / f"sample-{i:04d}"
            frames = sorted(d.glob("frame-*.pgm"))
            if not frames:
                raise DataFormatError(f"no frames under {d}")
            rows.append(np.stack([read_pgm(p) for p in frames]))
        outputs = np.stack(rows)
    report = EvalReport(task=meta.get("task", cfg["task"]), variant=meta.get("variant", ""))
    for row, i in zip(outputs, meta["indices"]):
        gt = samples[i].target
        report.per_sample.append({
            "target_mse": target_mse(row, gt),
            "condition_fidelity": condition_fidelity(row, gt),
            "smoothness": smoothness(row) if row.shape[0] >= 2 else 0.0,
        })
    report.write_csv(outputs_dir / "report.csv")
    agg = report.aggregate()
    with open(outputs_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(agg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(agg, sort_keys=True))
    return 0


def cmd_ablate(cfg: dict, args) -> int:
    out = _out_dir(cfg)
    ckpt = load_checkpoint(Path(args.checkpoint) if args.checkpoint
                           else out / f"{cfg['task']}-tuned.ticf")
    data_file = Path(args.data) if args.data else out / f"{cfg['task']}-eval.ticd"
    samples, meta = load_dataset(data_file)
    task = meta["task"]
    sched = build_schedule(cfg["schedule"]["steps"], cfg["schedule"]["kind"])
    grid = build_grid(sched.T, cfg["sampling"]["grid"])
    mode = cfg["sampling"]["mode"]
    label = task_label(task)
    base = layout_for(cfg)
    lo, hi = args.buffer_range
    if lo < 1 or hi < lo:
        raise InvalidArgumentError(f"bad buffer range {lo}..{hi}")
    from .pipeline import evaluate

    rows = []
    for variant in VARIANTS:
        b_values = [0] if variant == "no-buffer" else list(range(lo, hi + 1))
        for b in b_values:
            spec = with_buffer_count(base, b)
            levels = variant_levels(variant, b, sched.T, cfg["buffer"]["constant_pct"])
            rng = Rng(derive_key(cfg["seed"], f"ablate/{variant}/B={b}"))
            rep = evaluate(ckpt.params, samples, spec, variant, levels, label,
                           grid, mode, sched, rng, task=task)
            agg = rep.aggregate()
            rows.append({"variant": variant, "B": b, **agg})
            print(f"{variant:10s} B={b} target_mse {agg['target_mse_mean']:.5f}")
    path = out / "ablation.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------- plumbing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ticdiff",
                                description="temporal in-context diffusion experiments")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                   help="override a config key (dotted path); wins over the file")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    p.add_argument("--task", help="shorthand for --set task=NAME")
    p.add_argument("--out", help="shorthand for --set paths.out=DIR")
    p.add_argument("--threads", type=int, help="shorthand for --set threads=N")
    p.add_argument("--dry-run", action="store_true",
                   help="echo the resolved config and exit")
    sub = p.add_subparsers(dest="cmd", required=True)

    sub.add_parser("gen-data", help="write pretraining clips and task datasets")

    q = sub.add_parser("pretrain", help="train the base model on smooth clips")
    q.add_argument("--data", help="clips file (default <out>/pretrain.ticd)")
    q.add_argument("--checkpoint", help="output checkpoint path")

    q = sub.add_parser("finetune", help="adapt a checkpoint to the configured task")
    q.add_argument("--checkpoint", help="input checkpoint (default <out>/pretrained.ticf)")
    q.add_argument("--data", help="task dataset (default <out>/<task>-train.ticd)")
    q.add_argument("--out-checkpoint", help="output checkpoint path")

    q = sub.add_parser("sample", help="generate target frames for dataset conditions")
    q.add_argument("--checkpoint", help="checkpoint (default <out>/<task>-tuned.ticf)")
    q.add_argument("--data", help="dataset with conditions (default <out>/<task>-eval.ticd)")
    q.add_argument("--variant", choices=VARIANTS, help="inference variant")
    q.add_argument("--buffer-len", type=int, metavar="B", help="override buffer frame count")
    q.add_argument("--label", type=int, help="conditioning label (default: task label)")
    q.add_argument("--sample-index", type=int, default=0, help="dataset index to sample")
    q.add_argument("--all", action="store_true", help="sample every dataset entry")

    q = sub.add_parser("eval", help="score generated outputs against ground truth")
    q.add_argument("--outputs", help="outputs dir from the sample command")
    q.add_argument("--data", help="ground-truth dataset")
    q.add_argument("--from-pgm", action="store_true",
                   help="rebuild frames from the PGM dumps instead of outputs.npy")

    q = sub.add_parser("ablate", help="sweep variants and buffer sizes, emit a table")
    q.add_argument("--checkpoint", help="checkpoint (default <out>/<task>-tuned.ticf)")
    q.add_argument("--data", help="dataset (default <out>/<task>-eval.ticd)")
    q.add_argument("--buffer-range", type=int, nargs=2, default=(1, 5),
                   metavar=("LO", "HI"), help="buffer sizes to sweep")

    return p


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.task is not None:
        overrides.append(f"task={args.task}")
    if args.out is not None:
        overrides.append(f"paths.out={args.out}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    try:
        cfg = resolve_config(args.config, overrides)
        _echo(cfg)
        if args.dry_run:
            return 0
        return _COMMANDS[args.cmd](cfg, args)
    except (DataFormatError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, ArithmeticError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except (InvalidArgumentError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TicdiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points: edit, sweep, trace, train-denoiser, gen-data.

Configuration comes from an optional JSON file merged with flag overrides;
the STAGEDIFF_SEED environment variable overrides the seed from either.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import blobs
from .denoiser import train_toy_denoiser
from .pipeline import (
    EditConfig,
    RunTrace,
    _build_encoders,
    quantile_sweep,
    run_edit,
    trace_embedding_distances,
    write_distances_csv,
    write_sweep_csv,
)
from .schedule import build_schedule


def _load_config(args) -> EditConfig:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    overrides = {
        "source": args.source,
        "target_ref": args.target_ref,
        "src_text": args.src_text,
        "tgt_text": args.tgt_text,
        "src_emb": args.src_emb,
        "tgt_emb": args.tgt_emb,
        "backend": args.backend,
        "weights": args.weights,
        "seed": args.seed,
        "out_dir": args.out_dir,
        "optimize_lambda": args.optimize_lambda or None,
        "opt_iters": args.opt_iters,
        "opt_step": args.opt_step,
        "gamma_perc": args.gamma_perc,
        "dump_frames": args.dump_frames or None,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    env_seed = os.environ.get("STAGEDIFF_SEED")
    if env_seed is not None:
        data["seed"] = int(env_seed)
    return EditConfig.from_dict(data)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--source", help="source image (.npy/.pgm) or blob:<label>:<index>")
    p.add_argument("--target-ref", dest="target_ref", help="target reference image, or 'alt'")
    p.add_argument("--src-text", dest="src_text", help="source prompt for the built-in tokenizer")
    p.add_argument("--tgt-text", dest="tgt_text", help="target prompt for the built-in tokenizer")
    p.add_argument("--src-emb", dest="src_emb", help="source embedding file")
    p.add_argument("--tgt-emb", dest="tgt_emb", help="target embedding file")
    p.add_argument("--backend", choices=["analytic", "toy"])
    p.add_argument("--weights", help="toy-denoiser weight blob")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--optimize-lambda", dest="optimize_lambda", action="store_true")
    p.add_argument("--opt-iters", dest="opt_iters", type=int)
    p.add_argument("--opt-step", dest="opt_step", type=float)
    p.add_argument("--gamma-perc", dest="gamma_perc", type=float)
    p.add_argument("--dump-frames", dest="dump_frames", action="store_true")


def _cmd_edit(args) -> int:
    cfg = _load_config(args)
    trace = run_edit(cfg)
    summary = {
        "t_edit": trace.stage_plan["t_edit"],
        "t_boost": trace.stage_plan["t_boost"],
        "loss": trace.loss,
        "metrics": {k: v for k, v in trace.metrics.items() if not isinstance(v, dict)},
        "out_dir": cfg.out_dir,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    freq_qs = [float(v) for v in args.freq_qs.split(",")]
    grad_qs = [float(v) for v in args.grad_qs.split(",")]
    report = quantile_sweep(cfg, freq_qs, grad_qs)
    out_dir = Path(cfg.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_sweep_csv(report, out_dir / "sweep.csv")
    print(f"wrote {out_dir / 'sweep.json'} ({len(report['rows'])} cells)")
    return 0


def _cmd_trace(args) -> int:
    run = RunTrace.from_file(args.run)
    cfg = EditConfig.from_dict(run.config)
    src = np.asarray(run.images["src"], dtype=np.float64)
    enc, _ = _build_encoders(cfg, src.shape, cfg.embed_dim)
    rows = trace_embedding_distances(run, enc)
    out = args.out or str(Path(args.run).with_name("distances.csv"))
    write_distances_csv(rows, out)
    print(f"wrote {out} ({len(rows)} steps)")
    return 0


def _cmd_train(args) -> int:
    sched = build_schedule(args.T, args.profile, 0.0)
    samples = blobs.make_dataset(args.n_per_class, args.size, args.seed)
    table = blobs.condition_table(args.embed_dim, args.embed_seed)
    net = train_toy_denoiser(
        blobs.training_pairs(samples),
        table,
        epochs=args.epochs,
        seed=args.seed,
        schedule=sched,
        hidden=args.hidden,
        lr=args.lr,
    )
    net.save(args.out)
    print(json.dumps({"out": args.out, "loss": net.final_loss, "n_train": len(samples)}))
    return 0


def _cmd_gen_data(args) -> int:
    samples = blobs.make_dataset(args.n_per_class, args.size, args.seed)
    blobs.save_dataset(samples, args.out)
    print(f"wrote {args.out} ({len(samples)} samples, {len(blobs.LABELS)} classes)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stagediff",
        description="Staged, noise-guided diffusion editing engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_edit = sub.add_parser("edit", help="run one full edit")
    _add_config_flags(p_edit)
    p_edit.set_defaults(fn=_cmd_edit)

    p_sweep = sub.add_parser("sweep", help="stage-quantile sweep")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--freq-qs", dest="freq_qs", required=True, help="comma list, e.g. 0.6,0.75,0.9")
    p_sweep.add_argument("--grad-qs", dest="grad_qs", required=True, help="comma list")
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_trace = sub.add_parser("trace", help="embedding-distance CSV from a saved run")
    p_trace.add_argument("--run", required=True, help="trace.json of a finished edit")
    p_trace.add_argument("--out", help="output CSV (default: distances.csv next to the trace)")
    p_trace.set_defaults(fn=_cmd_trace)

    p_train = sub.add_parser("train-denoiser", help="train the toy denoiser on the blob benchmark")
    p_train.add_argument("--out", required=True, help="weight blob path (sidecar written next to it)")
    p_train.add_argument("--epochs", type=int, default=200)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--size", type=int, default=16)
    p_train.add_argument("--n-per-class", dest="n_per_class", type=int, default=32)
    p_train.add_argument("--embed-dim", dest="embed_dim", type=int, default=16)
    p_train.add_argument("--embed-seed", dest="embed_seed", type=int, default=0)
    p_train.add_argument("--T", type=int, default=50)
    p_train.add_argument("--profile", default="linear-beta", choices=["linear-beta", "cosine"])
    p_train.add_argument("--hidden", type=int, default=128)
    p_train.add_argument("--lr", type=float, default=3e-3)
    p_train.set_defaults(fn=_cmd_train)

    p_gen = sub.add_parser("gen-data", help="write the blob benchmark to an npz archive")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--n-per-class", dest="n_per_class", type=int, default=32)
    p_gen.add_argument("--size", type=int, default=16)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.set_defaults(fn=_cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""``gnstode`` command line: generate / train / evaluate / rollout."""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .evaluation import evaluate, rollout
from .model import ModelConfig
from .ode import OdeConfig
from .physics import SPLITS, System, SystemSpec, downsample, generate_dataset
from .training import TrainingConfig, train

log = logging.getLogger("gnstode")


class UsageError(Exception):
    pass


def worker_count() -> int:
    raw = os.environ.get("GNSTODE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"GNSTODE_THREADS must be an integer, got {raw!r}") from None


def _counts(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three integers a,b,c, got {text!r}") from None
    if len(parts) != 3 or min(parts) < 0:
        raise argparse.ArgumentTypeError(f"expected three non-negative integers a,b,c, got {text!r}")
    return parts


def cmd_generate(args) -> int:
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    if args.timesteps < 2:
        raise UsageError("--timesteps must be at least 2")
    if args.stride < 1:
        raise UsageError("--stride must be at least 1")
    if (args.timesteps - 1) // args.stride < 1:
        raise UsageError("--stride leaves fewer than 2 stamps")
    try:
        spec = SystemSpec(
            system=System.parse(args.system),
            constant=args.constant,
            dt=args.dt,
            softening=args.softening,
            intensity=args.intensity,
            substeps=args.substeps,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = generate_dataset(args.n, spec, args.timesteps, args.counts, args.seed, workers=worker_count())
    for split in SPLITS:
        trajs = [downsample(t, args.stride) for t in data[split]]
        path = out / f"{split}.gnst"
        if not trajs:
            log.warning("no %s trajectories requested; skipping %s", split, path)
            continue
        io.write_dataset(path, trajs, spec)
        print(f"wrote {path} ({len(trajs)} trajectories x {len(trajs[0])} stamps)")
    return 0


def _model_config(args, system: System) -> ModelConfig:
    return ModelConfig(
        system=system,
        spatial_ode=OdeConfig(args.method, args.spatial_steps),
        temporal_ode=OdeConfig(args.method, args.temporal_steps),
        ablate_spatial=args.ablate_spatial,
        ablate_temporal=args.ablate_temporal,
        hidden_width=args.hidden_width,
        k=args.k,
    )


def cmd_train(args) -> int:
    h_train, train_set = io.read_dataset(args.train)
    h_val, val_set = io.read_dataset(args.val)
    if (h_train.system, h_train.d) != (h_val.system, h_val.d):
        raise UsageError(
            f"train set is {h_train.system.name.lower()} d={h_train.d}, "
            f"val set is {h_val.system.name.lower()} d={h_val.d}"
        )
    try:
        cfg = TrainingConfig(
            epochs=args.epochs,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            seed=args.seed,
            clip_norm=args.clip_norm,
            model=_model_config(args, h_train.system),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".csv")
    rows = ["epoch,train_loss,val_loss\n"]

    def on_epoch(epoch, tr, va):
        rows.append(f"{epoch},{tr!r},{va!r}\n")
        io.atomic_write(log_path, "".join(rows).encode())
        print(f"epoch {epoch:4d}  train {tr:.6g}  val {va:.6g}", flush=True)

    params, record = train(train_set, val_set, cfg, on_epoch=on_epoch)
    io.save_checkpoint(out, params, cfg)
    print(f"best epoch {record.best_epoch} (val {record.val_loss[record.best_epoch - 1]:.6g}); wrote {out}")
    return 0


def _report_config(header: io.DatasetHeader, cfg: TrainingConfig, base_dt: float) -> dict:
    return {
        "system": header.system.name.lower(),
        "scale": header.n,
        "intensity": header.intensity,
        "dt_effective": header.dt_effective,
        "stride": int(round(header.dt_effective / base_dt)),
        "constant": header.constant,
        "softening": header.softening,
        "ablate_spatial": cfg.model.ablate_spatial,
        "ablate_temporal": cfg.model.ablate_temporal,
        "spatial_ode": vars(cfg.model.spatial_ode),
        "temporal_ode": vars(cfg.model.temporal_ode),
        "seed": cfg.seed,
    }


def _check_compatible(header: io.DatasetHeader, cfg: TrainingConfig, where: str) -> None:
    if header.system is not cfg.model.system or header.d != cfg.model.d:
        raise UsageError(
            f"{where}: checkpoint is for {cfg.model.system.name.lower()} (d={cfg.model.d}), "
            f"dataset is {header.system.name.lower()} (d={header.d})"
        )


def cmd_evaluate(args) -> int:
    header, test = io.read_dataset(args.test)
    if args.repeat is not None and args.repeat != len(args.ckpt):
        raise UsageError(f"--repeat {args.repeat} needs {args.repeat} checkpoints, got {len(args.ckpt)}")
    spec = header.spec()
    runs = []
    for path in args.ckpt:
        params, cfg = io.load_checkpoint(path)
        _check_compatible(header, cfg, str(path))
        report = evaluate(test, params, cfg.model, spec, _report_config(header, cfg, args.base_dt), worker_count())
        runs.append((str(path), report))
    doc = {
        "rmse": float(np.mean([r.rmse for _, r in runs])),
        "energy_error": float(np.mean([r.energy_error for _, r in runs])),
        "repeat": len(runs),
        "config": runs[0][1].config,
        "runs": [dict(checkpoint=p, **r.to_dict()) for p, r in runs],
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        io.atomic_write(args.out, text.encode())
        print(f"RMSE {doc['rmse']:.6g}  Energy Error {doc['energy_error']:.6g}; wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def rollout_csv(truth, predicted, index: int) -> str:
    """Ground truth and prediction rows, one per particle per stamp."""
    names = feature_names(truth.system)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", "traj", "t", "particle", *names])
    for source, traj in (("truth", truth), ("predicted", predicted)):
        for t in range(len(truth)):
            for p in range(truth.n):
                row = traj.states[t, p] if t < len(traj) else np.full(len(names), math.nan)
                w.writerow([source, index, t, p, *(repr(float(x)) for x in row)])
    return buf.getvalue()


def feature_names(system: System) -> list[str]:
    if system is System.GRAVITY:
        return ["m", "x", "y", "vx", "vy"]
    return ["m", "c", "x", "y", "vx", "vy"]


def cmd_rollout(args) -> int:
    header, trajs = io.read_dataset(args.data)
    if not 0 <= args.traj_index < len(trajs):
        raise UsageError(f"--traj-index {args.traj_index} out of range (dataset has {len(trajs)})")
    params, cfg = io.load_checkpoint(args.ckpt)
    _check_compatible(header, cfg, args.ckpt)
    truth = trajs[args.traj_index]
    pred = rollout(truth[0], params, cfg.model, len(truth), truth.dt_effective)
    if pred.diverged_at is not None:
        log.warning("rollout diverged at stamp %d; remaining rows are NaN", pred.diverged_at)
    io.atomic_write(args.out, rollout_csv(truth, pred, args.traj_index).encode())
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gnstode", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate train/val/test datasets")
    g.add_argument("--system", choices=["gravity", "coulomb"], default="gravity")
    g.add_argument("--n", type=int, default=20, help="particles per system")
    g.add_argument("--intensity", type=float, default=0.42, help="particles per unit square")
    g.add_argument("--timesteps", type=int, default=200, help="stamps per trajectory before downsampling")
    g.add_argument("--dt", type=float, default=0.01, help="time between stamps")
    g.add_argument("--constant", type=float, default=2.0, help="G or k")
    g.add_argument("--softening", type=float, default=0.01)
    g.add_argument("--substeps", type=int, default=100, help="leapfrog steps per stamp")
    g.add_argument("--counts", type=_counts, default=(100, 20, 20), help="train,val,test trajectory counts")
    g.add_argument("--stride", type=int, default=1, help="keep every stride-th stamp")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model, keep the best validation epoch")
    t.add_argument("--train", required=True)
    t.add_argument("--val", required=True)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--batch-size", type=int, default=50)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--clip-norm", type=float, default=10.0)
    t.add_argument("--spatial-steps", type=int, default=2)
    t.add_argument("--temporal-steps", type=int, default=4)
    t.add_argument("--method", choices=["euler", "rk4"], default="rk4")
    t.add_argument("--hidden-width", type=int, default=64)
    t.add_argument("--k", type=int, default=15, help="neighbours per particle")
    t.add_argument("--ablate-spatial", action="store_true")
    t.add_argument("--ablate-temporal", action="store_true")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="CSV log path (default: checkpoint path with .csv suffix)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="roll out test trajectories and score them")
    e.add_argument("--test", required=True)
    e.add_argument("--ckpt", required=True, nargs="+", help="one checkpoint per repeat")
    e.add_argument("--repeat", type=int, help="expected number of checkpoints to average")
    e.add_argument("--base-dt", type=float, default=0.01, help="undownsampled stamp spacing, for the stride echo")
    e.add_argument("--out", help="JSON report path (default: stdout)")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("rollout", help="export a predicted and true trajectory as CSV")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--traj-index", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rollout)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (OSError, io.FormatError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"gnstode: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

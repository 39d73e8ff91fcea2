"""Desk-scale training run: Gravity n=20, 10 training trajectories of 50 stamps.

Trains the full model (or an ablation) for each seed and compares the
50-step rollout RMSE against the constant-velocity baseline.

    python3 scripts/desk_scale.py --seeds 0 1 2 --epochs 50
    python3 scripts/desk_scale.py --ablate-temporal --out results/no_temporal.json
"""
import argparse
import json
import time

from gnstode.evaluation import constant_velocity_baseline, energy_error, rmse, rollout_all
from gnstode.model import ModelConfig
from gnstode.physics import SystemSpec, generate_dataset, simulate, trajectory_rng
from gnstode.training import TrainingConfig, train


def run(seed, epochs, ablate_spatial, ablate_temporal, softening):
    spec = SystemSpec(softening=softening)
    data = generate_dataset(20, spec, T=50, counts=(10, 5, 0), seed=seed)
    test = [simulate(20, spec, 51, trajectory_rng(seed, "test", i)) for i in range(5)]
    model = ModelConfig(ablate_spatial=ablate_spatial, ablate_temporal=ablate_temporal)
    cfg = TrainingConfig(epochs=epochs, batch_size=50, learning_rate=1e-3, seed=seed, model=model)
    start = time.perf_counter()
    params, record = train(
        data["train"], data["val"], cfg,
        on_epoch=lambda e, tr, va: print(f"  seed {seed} epoch {e:3d} train {tr:.4f} val {va:.4f}", flush=True),
    )
    preds = rollout_all(test, params, model)
    base = [constant_velocity_baseline(t[0], len(t), t.dt_effective) for t in test]
    return {
        "seed": seed,
        "minutes": (time.perf_counter() - start) / 60,
        "train_loss": record.train_loss,
        "val_loss": record.val_loss,
        "best_epoch": record.best_epoch,
        "rmse": rmse(preds, test),
        "baseline_rmse": rmse(base, test),
        "energy_error": energy_error(preds, test, spec),
        "baseline_energy_error": energy_error(base, test, spec),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--softening", type=float, default=0.01)
    p.add_argument("--ablate-spatial", action="store_true")
    p.add_argument("--ablate-temporal", action="store_true")
    p.add_argument("--out", help="write all results as JSON")
    args = p.parse_args()

    results = []
    for seed in args.seeds:
        r = run(seed, args.epochs, args.ablate_spatial, args.ablate_temporal, args.softening)
        results.append(r)
        print(f"seed {seed}: rmse {r['rmse']:.3f} (baseline {r['baseline_rmse']:.3f}), "
              f"energy error {r['energy_error']:.3f} (baseline {r['baseline_energy_error']:.3f}), "
              f"best epoch {r['best_epoch']}, {r['minutes']:.1f} min", flush=True)
    wins = sum(r["rmse"] < r["baseline_rmse"] for r in results)
    print(f"model beats constant velocity in {wins}/{len(results)} seeds")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()

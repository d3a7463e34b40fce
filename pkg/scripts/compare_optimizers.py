"""Backprop vs Levenberg-Marquardt on the same synthetic samples.

    python scripts/compare_optimizers.py --seed 0 --size 96

Reports wall time, epochs, final train/held-out MSE and held-out AUC for each.
"""

import argparse
import time

from deforest.dataset import build_samples, normalize, split
from deforest.change import deforestation_labels
from deforest.features import stack_features, forest_cover_index, distance_to_class
from deforest.mlp import TrainConfig, evaluate_binary, init_model, loss_and_gradient, train
from deforest.synth import ScenarioConfig, make_scenario


def samples(seed, size):
    sc = make_scenario(ScenarioConfig(nrows=size, ncols=size, seed=seed))
    stack = stack_features(forest_cover_index(sc.forest_t0, 3), distance_to_class(sc.urban, 1), sc.dem)
    labels = deforestation_labels(sc.forest_t0, sc.forest_t1)
    tr, te = split(build_samples(stack, labels), 0.3, seed=seed)
    tr, (te,), _ = normalize(tr, [te])
    return tr, te


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--hidden", type=int, default=8)
    ap.add_argument("--bp-epochs", type=int, default=5000)
    ap.add_argument("--bp-rate", type=float, default=5.0)
    args = ap.parse_args()

    tr, te = samples(args.seed, args.size)
    print(f"{len(tr)} train / {len(te)} held-out samples, {int(tr.y.sum())} cleared in train")
    configs = {
        "backprop": TrainConfig(algorithm="backprop", max_epochs=args.bp_epochs, learning_rate=args.bp_rate, patience=100),
        "lm": TrainConfig(algorithm="lm", max_epochs=200, patience=20),
    }
    for name, cfg in configs.items():
        t0 = time.perf_counter()
        model, report = train(init_model(3, args.hidden, args.seed), tr, te, cfg)
        dt = time.perf_counter() - t0
        m = evaluate_binary(model, te)
        print(
            f"{name:>9}: {dt:6.2f}s  epochs {report.epochs_run:5d} (best {report.best_epoch}, {report.stop_reason})  "
            f"train mse {loss_and_gradient(model, tr)[0]:.5f}  held-out mse {report.best_val_mse:.5f}  "
            f"auc {m['auc']:.4f}  acc {m['accuracy']:.4f}"
        )


if __name__ == "__main__":
    main()

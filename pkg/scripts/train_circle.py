"""Train a 4-chart model on the unit circle and print the evaluation metrics."""

import numpy as np

from chartae.manifolds import ManifoldSpec, sample
from chartae.metrics import consecutive_latent_distances, evaluate
from chartae.model import ChartAutoencoder, ChartConfig
from chartae.training import TrainConfig, pretrain, split_holdout, train


def main():
    data = sample(ManifoldSpec("circle"), 2000, rng_seed=7)
    train_set, holdout = split_holdout(data)
    cfg = ChartConfig(ambient_dim=2, chart_dim=1, num_charts=4)
    tc = TrainConfig(seed=0)
    model = ChartAutoencoder(cfg, seed=tc.seed)
    model, warnings = pretrain(model, train_set, tc)
    for w in warnings:
        print("pretrain warning:", w)
    model, report = train(model, train_set, tc)
    last = report.epochs[-1]
    print(f"epochs: {len(report.epochs)}  final mean min-recon: {last.mean_min_recon:.6f}")
    print(f"live charts: {last.live_charts}  usage: {last.usage}")
    print(evaluate(model, train_set, holdout, ell=100, seed=0).to_json())

    angles = np.linspace(0.0, 2.0 * np.pi, 257)
    sweep = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    dd = consecutive_latent_distances(model, sweep)
    print(f"latent sweep max/median step: {dd.max() / np.median(dd):.2f}")


if __name__ == "__main__":
    main()

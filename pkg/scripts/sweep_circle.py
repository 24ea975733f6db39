"""Sweep circle trainings across chart counts, penalties, and seeds.

Prints one line per run: balance of chart usage, latent-sweep spike ratio,
coverage, and whether any chart was pruned. Used to pick robust settings for
the acceptance runs.
"""

import sys
import time

import numpy as np

from chartae.manifolds import ManifoldSpec, sample
from chartae.metrics import consecutive_latent_distances, coverage, reconstruction_error
from chartae.model import ChartAutoencoder, ChartConfig
from chartae.training import TrainConfig, pretrain, train


def run(num_charts, lip, seed, epochs=100, l2=1e-4):
    data = sample(ManifoldSpec("circle"), 2000, 7)
    cfg = ChartConfig(ambient_dim=2, chart_dim=1, num_charts=num_charts)
    tc = TrainConfig(seed=seed, lipschitz_weight=lip, epochs=epochs,
                     chart_decoder_l2=l2)
    model = ChartAutoencoder(cfg, seed=tc.seed)
    t0 = time.perf_counter()
    model, warns = pretrain(model, data, tc)
    model, rep = train(model, data, tc)
    angles = np.linspace(0, 2 * np.pi, 257)
    sweep = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    dd = consecutive_latent_distances(model, sweep)
    ratio = dd.max() / np.median(dd)
    cov = coverage(model, data, 100, 1)
    usage = rep.epochs[-1].usage
    print(f"N={num_charts} lip={lip} seed={seed} l2={l2}: "
          f"min_recon={rep.epochs[-1].mean_min_recon:.5f} "
          f"charts={model.num_charts} usage={usage} ratio={ratio:.2f} cov={cov:.2f} "
          f"pruned={rep.prune_events} t={time.perf_counter()-t0:.0f}s "
          f"warn={len(warns)}", flush=True)


if __name__ == "__main__":
    which = sys.argv[1] if len(sys.argv) > 1 else "all"
    if which in ("all", "n2"):
        for seed in (0, 1, 2):
            run(2, 1e-2, seed)
    if which in ("all", "n4"):
        run(4, 5e-2, 0)
        run(4, 1e-1, 0)
    if which in ("all", "prune"):
        for seed in (0, 1, 2, 3, 4):
            run(4, 1e-1, seed)

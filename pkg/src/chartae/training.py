"""Training orchestration: per-chart warm-up, joint training, pruning, reports.

Warm-up picks well-spread seed points by farthest point sampling and teaches
each chart to reconstruct its seed at the center of the chart box. Joint
training then minimizes the best-chart loss plus the spectral-norm penalty
by mini-batch Adam. A small L2 penalty on chart-decoder weights acts as the
chart-removal mechanism: decoders that stop winning the reconstruction min
receive only the penalty gradient, which Adam turns into a steady pull to
zero, so abandoned charts cross the pruning threshold within a few epochs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .manifolds import PointCloud, farthest_point_sampling
from .model import (ChartAutoencoder, lipschitz_penalty, orientation_penalty,
                    pca_frame, pretrain_loss, prune_charts, save_model,
                    load_model, training_loss)
from .tensor import Adam


@dataclass
class TrainConfig:
    lr: float = 3e-4
    batch_size: int = 64
    epochs: int = 100
    lipschitz_weight: float = 1e-2
    pretrain_steps: int = 2000
    prune_rel_threshold: float = 1e-2
    prune_start_epoch: int = 20
    prune_every: int = 10
    prune_enabled: bool = True
    chart_decoder_l2: float = 1e-3
    weight_decay: float = 1e-5
    orientation_reg: str = "off"        # off | as_written | neg_alignment
    orientation_weight: float = 1.0
    seed: int = 0
    checkpoint_every: int = 25
    checkpoint_dir: str | None = None
    power_iters: int = 5

    def __post_init__(self):
        for name in ("lr", "batch_size", "epochs", "lipschitz_weight",
                     "pretrain_steps", "prune_rel_threshold", "prune_start_epoch",
                     "prune_every", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.orientation_reg not in ("off", "as_written", "neg_alignment"):
            raise ValueError("orientation_reg must be off, as_written, or neg_alignment")


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    mean_min_recon: float
    reg_value: float
    live_charts: int
    usage: list[int]     # winner counts per original chart id; sums to n


@dataclass
class TrainReport:
    initial_charts: int
    epochs: list[EpochStats] = field(default_factory=list)
    prune_events: list[tuple[int, list[int]]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    wall_time_s: float = 0.0

    def to_csv(self, path) -> None:
        cols = ["epoch", "mean_loss", "mean_min_recon", "reg_value", "live_charts"]
        cols += [f"usage_{i}" for i in range(self.initial_charts)]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.epochs:
                vals = [row.epoch, repr(row.mean_loss), repr(row.mean_min_recon),
                        repr(row.reg_value), row.live_charts, *row.usage]
                fh.write(",".join(str(v) for v in vals) + "\n")

    def summary(self) -> dict:
        last = self.epochs[-1] if self.epochs else None
        return {
            "epochs_run": len(self.epochs),
            "initial_charts": self.initial_charts,
            "final_charts": last.live_charts if last else self.initial_charts,
            "final_mean_loss": last.mean_loss if last else None,
            "final_mean_min_recon": last.mean_min_recon if last else None,
            "prune_events": [[e, r] for e, r in self.prune_events],
            "warnings": self.warnings,
            "wall_time_s": self.wall_time_s,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the last good checkpoint path, if any."""

    def __init__(self, message: str, checkpoint_path: str | None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


def dataset_diameter(points: np.ndarray, cap: int = 3000) -> float:
    pts = points
    if pts.shape[0] > cap:
        idx = np.linspace(0, pts.shape[0] - 1, cap).astype(int)
        pts = pts[idx]
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(d2.max()))


def pretrain(model: ChartAutoencoder, data: PointCloud, cfg: TrainConfig
             ) -> tuple[ChartAutoencoder, list[str]]:
    """Warm up each chart on its FPS seed; returns the model and any warnings.

    Charts are advanced round-robin, one Adam step per chart per round, so
    the shared initial/final networks serve all seeds instead of chasing the
    most recent one.
    """
    n_charts = model.num_charts
    if n_charts > data.n:
        raise ValueError(f"{n_charts} charts but only {data.n} samples")
    rng = np.random.default_rng(cfg.seed)
    start = int(rng.integers(data.n))
    fps = farthest_point_sampling(data, n_charts, start=start)
    seeds = data.points[fps.indices]
    warnings: list[str] = []

    neighborhoods: list[np.ndarray] = []
    frames: list = []
    orient_ok = cfg.orientation_reg != "off"
    if orient_ok:
        d = model.config.chart_dim
        # a chart's share of the data, so the PCA frame spans the region the
        # chart should own and the alignment spreads codes over the box
        k = min(data.n, max(3 * (d + 1), int(np.ceil(data.n / n_charts))))
        for alpha in range(n_charts):
            dist = np.linalg.norm(data.points - seeds[alpha], axis=1)
            nb = data.points[np.argsort(dist)[:k]]
            neighborhoods.append(nb)
            try:
                frames.append(pca_frame(nb, d))
            except ValueError as exc:
                warnings.append(f"chart {alpha}: orientation disabled ({exc})")
                orient_ok = False

    opt = Adam(model.params(), lr=cfg.lr)
    for _ in range(cfg.pretrain_steps):
        for alpha in range(n_charts):
            loss = pretrain_loss(model, seeds[alpha], alpha)
            if orient_ok:
                term = orientation_penalty(model, [neighborhoods[alpha]], [frames[alpha]],
                                           sign=cfg.orientation_reg, charts=[alpha])
                loss = loss + term * cfg.orientation_weight
            loss.backward()
            for p in opt.params:
                if p.grad is None:  # other charts' parameters: zero gradient this step
                    p.grad = np.zeros_like(p.data)
            opt.step()

    diam = dataset_diameter(data.points)
    for alpha in range(n_charts):
        y, _ = model.reconstruct(seeds[alpha][None, :])
        err = float(np.linalg.norm(seeds[alpha] - y[0]))
        za = model.chart_coords(seeds[alpha][None, :])[alpha, 0]
        off_center = float(np.abs(za - 0.5).max())
        recon_ok = err <= max(0.1 * diam, 1e-9)  # floor for degenerate datasets
        center_ok = off_center <= 0.2
        if not recon_ok:
            warnings.append(
                f"chart {alpha}: seed reconstruction {err:.4g} exceeds 10% of diameter {diam:.4g}")
        if not center_ok:
            warnings.append(
                f"chart {alpha}: seed chart coords off-center by {off_center:.3f} (> 0.2)")
    return model, warnings


def train(model: ChartAutoencoder, data: PointCloud, cfg: TrainConfig
          ) -> tuple[ChartAutoencoder, TrainReport]:
    """Mini-batch Adam on loss + lipschitz_weight * penalty, with pruning.

    Identical seeds and data give bit-identical reports. Raises
    :class:`TrainingDiverged` if the loss goes non-finite.
    """
    n = data.n
    if cfg.batch_size > n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params(), lr=cfg.lr)
    report = TrainReport(initial_charts=len(model.chart_ids))
    n0 = report.initial_charts
    last_checkpoint: str | None = None
    t0 = time.perf_counter()

    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        loss_sum = 0.0
        min_recon_sum = 0.0
        reg_sum = 0.0
        batches = 0
        usage = np.zeros(n0, dtype=np.int64)
        for lo in range(0, n, cfg.batch_size):
            batch = data.points[perm[lo:lo + cfg.batch_size]]
            fr = model.forward(batch)
            loss = training_loss(fr)
            reg = lipschitz_penalty(model, iters=cfg.power_iters)
            total = loss + reg * cfg.lipschitz_weight
            if not np.isfinite(total.data):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}", last_checkpoint)
            total.backward()
            if cfg.weight_decay > 0.0:
                scale = 2.0 * cfg.weight_decay
                for p in model.params():
                    if p.data.ndim == 2:  # weight matrices only
                        g = scale * p.data
                        p.grad = g if p.grad is None else p.grad + g
            if cfg.chart_decoder_l2 > 0.0:
                scale = 2.0 * cfg.chart_decoder_l2
                for p in model.chart_decoder_params():
                    g = scale * p.data
                    p.grad = g if p.grad is None else p.grad + g
            else:
                # a decoder whose chart won no argmin this batch has zero grad
                for p in model.chart_decoder_params():
                    if p.grad is None:
                        p.grad = np.zeros_like(p.data)
            opt.step()
            loss_sum += float(loss.data) * batch.shape[0]
            min_recon_sum += float(fr.e.data.min(axis=1).sum())
            reg_sum += float(reg.data)
            batches += 1
            for w, count in zip(*np.unique(fr.winner, return_counts=True)):
                usage[model.chart_ids[w]] += count
        report.epochs.append(EpochStats(
            epoch=epoch,
            mean_loss=loss_sum / n,
            mean_min_recon=min_recon_sum / n,
            reg_value=reg_sum / batches,
            live_charts=model.num_charts,
            usage=usage.tolist(),
        ))
        if (cfg.prune_enabled and epoch >= cfg.prune_start_epoch
                and (epoch - cfg.prune_start_epoch) % cfg.prune_every == 0):
            old_ids = list(model.chart_ids)
            model, removed = prune_charts(model, cfg.prune_rel_threshold)
            if removed:
                report.prune_events.append((epoch, [old_ids[i] for i in removed]))
                opt.set_params(model.params())
        if cfg.checkpoint_dir and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            last_checkpoint = f"{cfg.checkpoint_dir}/epoch{epoch:04d}.ckpt"
            save_model(model, last_checkpoint)
    report.wall_time_s = time.perf_counter() - t0
    return model, report


def evaluate_checkpoint(path, data: PointCloud) -> dict:
    """Reload a checkpoint and summarize winner-chart reconstruction on data."""
    model = load_model(path)
    y, winner = model.reconstruct(data.points)
    err2 = ((data.points - y) ** 2).sum(axis=1)
    counts = np.bincount(winner, minlength=model.num_charts)
    return {
        "n": data.n,
        "mean_squared_error": float(err2.mean()),
        "max_squared_error": float(err2.max()),
        "mean_error_per_coordinate": float(err2.mean() / data.ambient_dim),
        "chart_usage": counts.tolist(),
        "charts_live": model.num_charts,
    }


def split_holdout(data: PointCloud, frac: float = 0.1, seed: int = 1234
                  ) -> tuple[PointCloud, PointCloud]:
    """Deterministic train/holdout split (default 90/10)."""
    n = data.n
    k = max(1, int(round(frac * n)))
    perm = np.random.default_rng(seed).permutation(n)
    hold, keep = perm[:k], perm[k:]

    def take(idx):
        return PointCloud(
            points=data.points[idx],
            intrinsic_dim=data.intrinsic_dim,
            params=None if data.params is None else data.params[idx],
            labels=None if data.labels is None else data.labels[idx])

    return take(keep), take(hold)

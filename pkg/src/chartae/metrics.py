"""Quantitative evaluation of trained models.

Distances here are squared ambient distances normalized per coordinate
(divided by the ambient dimension), which puts image data and low-dimensional
synthetics on the same scale. Latent draws are a deterministic function of
the seed: chart indices first, then coordinates, in one generator stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .manifolds import PointCloud
from .model import ChartAutoencoder, transition

_COORD_EPS = 1e-12


@dataclass
class LatentSample:
    chart: int
    coords: np.ndarray   # strictly inside (0,1)^d


@dataclass
class EvalReport:
    recon_error: float
    unfaithfulness: float
    coverage: float
    n_test: int
    n_latent_samples: int
    chart_allocation: list[int]
    seed: int
    charts_live: int

    def to_json(self, path=None) -> str:
        payload = {
            "recon_error": self.recon_error,
            "unfaithfulness": self.unfaithfulness,
            "coverage": self.coverage,
            "ell": self.n_latent_samples,
            "seed": self.seed,
            "charts_live": self.charts_live,
        }
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def draw_latent_samples(model: ChartAutoencoder, ell: int, seed: int,
                        allocation: str = "uniform",
                        usage: np.ndarray | None = None) -> list[LatentSample]:
    """ell samples from the multi-chart latent space.

    Draw order (the determinism contract): ell chart indices first, then an
    (ell, d) block of coordinates, from one PCG64 stream seeded with ``seed``.
    ``allocation`` is "uniform" over live charts or "usage" (proportional to
    the provided winner counts).
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    n = model.num_charts
    if n < 1:
        raise ValueError("model has no live charts")
    rng = np.random.default_rng(seed)
    if allocation == "uniform":
        charts = rng.integers(0, n, size=ell)
    elif allocation == "usage":
        if usage is None:
            raise ValueError("usage allocation requires winner counts")
        w = np.asarray(usage, dtype=np.float64)
        charts = rng.choice(n, size=ell, p=w / w.sum())
    else:
        raise ValueError("allocation must be 'uniform' or 'usage'")
    coords = rng.random((ell, model.config.chart_dim))
    coords = np.clip(coords, _COORD_EPS, 1.0 - _COORD_EPS)
    return [LatentSample(int(c), coords[i]) for i, c in enumerate(charts)]


def decode_latent_samples(model: ChartAutoencoder, samples: list[LatentSample]) -> np.ndarray:
    out = np.empty((len(samples), model.config.ambient_dim))
    for i, s in enumerate(samples):
        out[i] = model.decode_chart(s.coords[None, :], s.chart)[0]
    return out


def reconstruction_error(model: ChartAutoencoder, test: PointCloud) -> float:
    """Mean squared winner-chart reconstruction error per coordinate."""
    if test.n < 1:
        raise ValueError("empty test set")
    y, _ = model.reconstruct(test.points)
    return float(((test.points - y) ** 2).sum(axis=1).mean() / test.ambient_dim)


def unfaithfulness(model: ChartAutoencoder, train: PointCloud, ell: int = 100,
                   seed: int = 0, allocation: str = "uniform",
                   usage: np.ndarray | None = None) -> float:
    """Mean squared distance from decoded latent samples to the training set."""
    samples = draw_latent_samples(model, ell, seed, allocation, usage)
    decoded = decode_latent_samples(model, samples)
    total = 0.0
    for i in range(decoded.shape[0]):
        d2 = ((train.points - decoded[i]) ** 2).sum(axis=1)
        total += float(d2.min())
    return total / (ell * train.ambient_dim)


def coverage(model: ChartAutoencoder, train: PointCloud, ell: int = 100,
             seed: int = 0, allocation: str = "uniform",
             usage: np.ndarray | None = None) -> float:
    """Fraction of distinct nearest training examples hit by latent samples."""
    samples = draw_latent_samples(model, ell, seed, allocation, usage)
    decoded = decode_latent_samples(model, samples)
    nearest = []
    for i in range(decoded.shape[0]):
        d2 = ((train.points - decoded[i]) ** 2).sum(axis=1)
        nearest.append(int(np.argmin(d2)))
    return len(set(nearest)) / ell


def evaluate(model: ChartAutoencoder, train: PointCloud, test: PointCloud,
             ell: int = 100, seed: int = 0, allocation: str = "uniform") -> EvalReport:
    samples = draw_latent_samples(model, ell, seed, allocation)
    alloc = np.zeros(model.num_charts, dtype=np.int64)
    for s in samples:
        alloc[s.chart] += 1
    return EvalReport(
        recon_error=reconstruction_error(model, test),
        unfaithfulness=unfaithfulness(model, train, ell, seed, allocation),
        coverage=coverage(model, train, ell, seed, allocation),
        n_test=test.n,
        n_latent_samples=ell,
        chart_allocation=alloc.tolist(),
        seed=seed,
        charts_live=model.num_charts,
    )


# -- path-based diagnostics ---------------------------------------------------------


def _winner_and_coords(model: ChartAutoencoder, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(x)
    p = model.predict_proba(x)
    winner = np.argmax(p, axis=1)
    coords = model.chart_coords(x)
    return winner, coords


def geodesic_polyline(model: ChartAutoencoder, a: np.ndarray, b: np.ndarray,
                      k: int) -> np.ndarray:
    """Decoded polyline through k latent points between the endpoints' chart coords."""
    if k < 2:
        raise ValueError("k must be >= 2")
    winner, coords = _winner_and_coords(model, np.stack([a, b]))
    if winner[0] != winner[1]:
        raise ValueError(
            f"endpoints fall on different charts ({winner[0]} vs {winner[1]}); "
            "construct a multi-chart path instead")
    alpha = int(winner[0])
    z0, z1 = coords[alpha, 0], coords[alpha, 1]
    ts = np.linspace(0.0, 1.0, k)
    zs = z0[None, :] + ts[:, None] * (z1 - z0)[None, :]
    return model.decode_chart(zs, alpha)


def geodesic_length(model: ChartAutoencoder, a: np.ndarray, b: np.ndarray, k: int) -> float:
    """Polyline estimate of geodesic distance between two ambient points."""
    poly = geodesic_polyline(model, a, b, k)
    return float(np.linalg.norm(np.diff(poly, axis=0), axis=1).sum())


def consecutive_latent_distances(model: ChartAutoencoder, sequence) -> np.ndarray:
    """Latent-space distance between consecutive points of an ordered sequence.

    Pairs whose winner charts differ are compared after mapping the first
    point through the chart transition into the second point's chart.
    """
    pts = sequence.points if isinstance(sequence, PointCloud) else np.asarray(sequence, dtype=np.float64)
    if pts.shape[0] < 2:
        raise ValueError("sequence must contain at least 2 points")
    winner, coords = _winner_and_coords(model, pts)
    out = np.empty(pts.shape[0] - 1)
    for t in range(pts.shape[0] - 1):
        a, b = int(winner[t]), int(winner[t + 1])
        if a == b:
            out[t] = np.linalg.norm(coords[a, t] - coords[a, t + 1])
        else:
            moved = transition(model, coords[a, t][None, :], a, b)[0]
            out[t] = np.linalg.norm(moved - coords[b, t + 1])
    return out


def cae_roundtrip(model: ChartAutoencoder):
    """(encoder, decoder) pair for faithfulness checks of a trained model.

    The encoder emits (chart index, chart coords) rows; the decoder maps them
    back through the winning chart.
    """

    def enc(x: np.ndarray) -> np.ndarray:
        winner, coords = _winner_and_coords(model, x)
        z = np.stack([coords[w, i] for i, w in enumerate(winner)], axis=0)
        return np.hstack([winner[:, None].astype(np.float64), z])

    def dec(zz: np.ndarray) -> np.ndarray:
        zz = np.atleast_2d(zz)
        out = np.empty((zz.shape[0], model.config.ambient_dim))
        for alpha in range(model.num_charts):
            rows = zz[:, 0].astype(int) == alpha
            if np.any(rows):
                out[rows] = model.decode_chart(zz[rows, 1:], alpha)
        return out

    return enc, dec

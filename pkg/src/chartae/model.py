"""Chart auto-encoder: component networks, forward pipeline, losses, pruning.

The model is a five-part bundle: an initial encoder into an embedding space,
per-chart encoders squashed into the open box (0,1)^d, per-chart decoders
back to the embedding, a softmax chart predictor, and a shared final decoder
to ambient space. Training couples the best-chart reconstruction error with
a cross-entropy that teaches the predictor which chart owns each point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import json
import numpy as np

from .tensor import (Adam, CheckpointError, PowerIterState, Tensor, concat,
                     load_tensors, save_tensors, spectral_norm, stack_scalars)

PRESET_HIDDEN = {
    "small_cae": [100, 100],
    "large_cae": [100, 100, 100, 100],
}

PREDICTOR_INPUTS = ("x", "z", "z_alpha_distances")


@dataclass
class MlpSpec:
    """Layer widths input -> hidden... -> output; ReLU on hidden layers."""

    widths: list[int]
    output_activation: str = "identity"  # identity | sigmoid | softmax

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise ValueError("layer widths must be >= 1")


class Mlp:
    """Fully connected stack over the autodiff tensors."""

    def __init__(self, spec: MlpSpec, rng: np.random.Generator):
        self.spec = spec
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
            limit = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    def params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = h.relu()
        if self.spec.output_activation == "sigmoid":
            h = h.sigmoid()
        elif self.spec.output_activation == "softmax":
            h = h.softmax(axis=-1)
        return h

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Graph-free forward; arithmetic mirrors the tensor path exactly."""
        h = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i < last:
                h = np.where(h > 0, h, 0.0)
        if self.spec.output_activation == "sigmoid":
            h = 1.0 / (1.0 + np.exp(-h))
        elif self.spec.output_activation == "softmax":
            shifted = h - h.max(axis=-1, keepdims=True)
            e = np.exp(shifted)
            h = e / e.sum(axis=-1, keepdims=True)
        return h


@dataclass
class ChartConfig:
    """Architecture of the chart auto-encoder.

    ``embed_dim`` defaults to twice the chart dimension (the smallest
    embedding the dimension heuristic suggests for a d-manifold).
    """

    ambient_dim: int
    chart_dim: int
    num_charts: int
    embed_dim: int | None = None
    preset: str = "small_cae"
    hidden: list[int] | None = None
    predictor_input: str = "x"

    def __post_init__(self):
        if self.embed_dim is None:
            self.embed_dim = 2 * self.chart_dim
        if not (1 <= self.chart_dim <= self.embed_dim <= self.ambient_dim):
            raise ValueError(
                f"need chart_dim <= embed_dim <= ambient_dim, got "
                f"{self.chart_dim}/{self.embed_dim}/{self.ambient_dim}")
        if self.num_charts < 1:
            raise ValueError("num_charts must be >= 1")
        if self.preset == "custom":
            if not self.hidden:
                raise ValueError("custom preset requires hidden widths")
        elif self.preset in PRESET_HIDDEN:
            self.hidden = list(PRESET_HIDDEN[self.preset])
        else:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.predictor_input not in PREDICTOR_INPUTS:
            raise ValueError(f"predictor_input must be one of {PREDICTOR_INPUTS}")


@dataclass
class ForwardResult:
    """Everything one forward pass produces, kept in the autodiff graph."""

    x: np.ndarray
    z: Tensor
    z_charts: list[Tensor]
    w_charts: list[Tensor]
    y_charts: list[Tensor]
    e: Tensor          # (batch, N) squared reconstruction errors
    ell: Tensor        # softmax(-e), rows sum to 1
    p: Tensor          # predictor probabilities, rows sum to 1
    winner: np.ndarray
    y: np.ndarray


class ChartAutoencoder:
    """The five-component network bundle."""

    def __init__(self, config: ChartConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        m, l, d, N = (config.ambient_dim, config.embed_dim,
                      config.chart_dim, config.num_charts)
        h = config.hidden
        self.E = Mlp(MlpSpec([m, *h, l]), rng)
        self.chart_encoders = [Mlp(MlpSpec([l, *h, d], "sigmoid"), rng) for _ in range(N)]
        self.chart_decoders = [Mlp(MlpSpec([d, *h, l]), rng) for _ in range(N)]
        pin = {"x": m, "z": l, "z_alpha_distances": N}[config.predictor_input]
        self.P = Mlp(MlpSpec([pin, *h, N], "softmax"), rng)
        self.D = Mlp(MlpSpec([l, *h, m]), rng)
        self.chart_ids = list(range(N))
        self.initial_decoder_norms = [self.decoder_norm(a) for a in range(N)]
        self._power_states: dict[int, PowerIterState] = {}

    # -- parameter bookkeeping ------------------------------------------------

    @property
    def num_charts(self) -> int:
        return len(self.chart_encoders)

    def params(self) -> list[Tensor]:
        out = self.E.params()
        for enc in self.chart_encoders:
            out += enc.params()
        for dec in self.chart_decoders:
            out += dec.params()
        out += self.P.params()
        out += self.D.params()
        return out

    def chart_decoder_params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for dec in self.chart_decoders:
            out += dec.params()
        return out

    def decoder_norm(self, alpha: int) -> float:
        total = 0.0
        for p in self.chart_decoders[alpha].params():
            total += float(np.sum(p.data * p.data))
        return float(np.sqrt(total))

    # -- forward -----------------------------------------------------------------

    def _predictor_input(self, x: Tensor, z: Tensor, z_charts: list[Tensor]) -> Tensor:
        mode = self.config.predictor_input
        if mode == "x":
            return x
        if mode == "z":
            return z
        dists = [(zc - 0.5).square().sum(axis=1, keepdims=True) for zc in z_charts]
        return concat(dists, axis=1)

    def forward(self, x: np.ndarray) -> ForwardResult:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.config.ambient_dim:
            raise ValueError(
                f"input dimension {x.shape[1]} does not match ambient_dim {self.config.ambient_dim}")
        xs = Tensor(x)
        z = self.E(xs)
        z_charts = [enc(z) for enc in self.chart_encoders]
        w_charts = [dec(zc) for dec, zc in zip(self.chart_decoders, z_charts)]
        y_charts = [self.D(w) for w in w_charts]
        e_cols = [(xs - y).square().sum(axis=1, keepdims=True) for y in y_charts]
        e = concat(e_cols, axis=1)
        ell = (-e).softmax(axis=-1)
        p = self.P(self._predictor_input(xs, z, z_charts))
        winner = np.argmax(p.data, axis=1)
        y = np.stack([y_charts[w].data[i] for i, w in enumerate(winner)], axis=0)
        return ForwardResult(x=x, z=z, z_charts=z_charts, w_charts=w_charts,
                             y_charts=y_charts, e=e, ell=ell, p=p,
                             winner=winner, y=y)

    # -- graph-free helpers for evaluation ------------------------------------------

    def embed(self, x: np.ndarray) -> np.ndarray:
        return self.E.apply(x)

    def chart_coords(self, x: np.ndarray) -> np.ndarray:
        """(N, batch, d) chart coordinates of ambient points."""
        z = self.embed(np.atleast_2d(x))
        return np.stack([enc.apply(z) for enc in self.chart_encoders], axis=0)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mode = self.config.predictor_input
        if mode == "x":
            pin = x
        elif mode == "z":
            pin = self.embed(x)
        else:
            zc = self.chart_coords(x)
            pin = ((zc - 0.5) ** 2).sum(axis=2).T
        return self.P.apply(pin)

    def decode_chart(self, z_alpha: np.ndarray, alpha: int) -> np.ndarray:
        if not (0 <= alpha < self.num_charts):
            raise IndexError(f"chart index {alpha} out of range")
        return self.D.apply(self.chart_decoders[alpha].apply(z_alpha))

    def reconstruct(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Winner-chart reconstruction: (y, winner)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z = self.embed(x)
        p = self.predict_proba(x)
        winner = np.argmax(p, axis=1)
        y = np.empty_like(x)
        for alpha in range(self.num_charts):
            rows = winner == alpha
            if np.any(rows):
                za = self.chart_encoders[alpha].apply(z[rows])
                y[rows] = self.D.apply(self.chart_decoders[alpha].apply(za))
        return y, winner


# -- losses and regularizers ----------------------------------------------------------


def training_loss(fr: ForwardResult) -> Tensor:
    """Best-chart reconstruction plus predictor cross-entropy, batch-averaged.

    The min term backpropagates through the argmin chart only; the softmax
    targets are detached so the predictor term cannot degrade reconstructions.
    """
    recon = fr.e.min(axis=1).mean()
    logp = fr.p.clip_min(1e-12).log()
    ce = -(fr.ell.detach() * logp).sum(axis=1).mean()
    return recon + ce


def lipschitz_penalty(model: ChartAutoencoder, iters: int = 5) -> Tensor:
    """Spectral-norm products of the chart-encoder weights: max + mean.

    Power iterations warm-start from a persistent vector per weight matrix.
    """
    products = []
    for enc in model.chart_encoders:
        prod: Tensor | None = None
        for w in enc.weights:
            state = model._power_states.setdefault(id(w), PowerIterState())
            s = spectral_norm(w, iters=iters, state=state)
            prod = s if prod is None else prod * s
        products.append(prod)
    vec = stack_scalars(products)
    return vec.max() + vec.mean()


def pretrain_loss(model: ChartAutoencoder, seed_point: np.ndarray, alpha: int,
                  literal_sign: bool = False) -> Tensor:
    """Per-chart warm-up: reconstruct the seed, center it, claim it.

    The chart-prediction term is -log p_alpha; the literal positive-sign
    variant is kept behind ``literal_sign`` for comparison.
    """
    if not (0 <= alpha < model.num_charts):
        raise IndexError(f"chart index {alpha} out of range")
    x = np.atleast_2d(np.asarray(seed_point, dtype=np.float64))
    xs = Tensor(x)
    z = model.E(xs)
    z_alpha = model.chart_encoders[alpha](z)
    y = model.D(model.chart_decoders[alpha](z_alpha))
    recon = (xs - y).square().sum()
    center = (z_alpha - 0.5).square().sum()
    z_charts = None
    if model.config.predictor_input == "z_alpha_distances":
        z_charts = [enc(z) for enc in model.chart_encoders]
    p = model.P(model._predictor_input(xs, z, z_charts))
    log_pa = p[:, alpha:alpha + 1].clip_min(1e-12).log().sum()
    claim = log_pa if literal_sign else -log_pa
    return recon + center + claim


def pca_frame(neighborhood: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Local PCA coordinates scaled into the chart box.

    Returns (W, b, C) with hat_x(x) = (1/C) W x + b mapping the neighborhood
    centroid to [0.5]^d and its radius to about half the box.
    """
    pts = np.asarray(neighborhood, dtype=np.float64)
    if pts.shape[0] < d + 1:
        raise ValueError(f"neighborhood of {pts.shape[0]} points cannot fix {d} directions")
    center = pts.mean(axis=0)
    centered = pts - center
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s.shape[0] < d or s[d - 1] <= 1e-12:
        raise ValueError("rank-deficient neighborhood: singular value gap below 1e-12")
    W = vt[:d]
    C = float(s[0] / 0.5)
    b = 0.5 - (W @ center) / C
    return W, b, C


def orientation_penalty(model: ChartAutoencoder, neighborhoods: list[np.ndarray],
                        frames: list[tuple[np.ndarray, np.ndarray, float]],
                        sign: str = "as_written",
                        charts: list[int] | None = None) -> Tensor:
    """Alignment term between chart coordinates and local PCA coordinates.

    ``as_written`` minimizes the inner-product sum; ``neg_alignment`` flips
    the sign so minimization aligns the coordinates instead. ``charts``
    restricts the sum to a subset (default: all charts, one entry each).
    """
    if charts is None:
        charts = list(range(model.num_charts))
    if len(neighborhoods) != len(frames) or len(neighborhoods) != len(charts):
        raise ValueError("need one neighborhood and one frame per listed chart")
    if sign not in ("as_written", "neg_alignment"):
        raise ValueError("sign must be 'as_written' or 'neg_alignment'")
    total: Tensor | None = None
    for alpha, pts, (W, b, C) in zip(charts, neighborhoods, frames):
        pts = np.atleast_2d(pts)
        target = pts @ (W.T / C) + b
        z_alpha = model.chart_encoders[alpha](model.E(Tensor(pts)))
        term = (z_alpha * Tensor(target)).sum()
        total = term if total is None else total + term
    return total if sign == "as_written" else -total


def transition(model: ChartAutoencoder, z_alpha: np.ndarray, alpha: int, beta: int) -> np.ndarray:
    """Map chart-alpha coordinates to chart-beta coordinates through ambient space."""
    n = model.num_charts
    if not (0 <= alpha < n and 0 <= beta < n):
        raise IndexError(f"chart indices ({alpha}, {beta}) out of range for {n} charts")
    w = model.chart_decoders[alpha].apply(z_alpha)
    x = model.D.apply(w)
    return model.chart_encoders[beta].apply(model.E.apply(x))


def cycle_residual(model: ChartAutoencoder, x: np.ndarray, alpha: int, beta: int) -> float:
    """Two-pass round-trip error through charts alpha->beta and beta->alpha."""
    x = np.asarray(x, dtype=np.float64)

    def roundtrip(first: int, second: int) -> np.ndarray:
        h = model.E.apply(x)
        h = model.chart_encoders[first].apply(h)
        h = model.D.apply(model.chart_decoders[first].apply(h))
        h = model.E.apply(h)
        h = model.chart_encoders[second].apply(h)
        return model.D.apply(model.chart_decoders[second].apply(h))

    return float(np.linalg.norm(x - roundtrip(alpha, beta))
                 + np.linalg.norm(x - roundtrip(beta, alpha)))


def prune_charts(model: ChartAutoencoder, rel_threshold: float = 1e-2
                 ) -> tuple[ChartAutoencoder, list[int]]:
    """Drop charts whose decoder weights decayed below the threshold.

    Surviving component networks are carried over by reference, so optimizer
    state keyed on the tensors remains valid. Predictor output columns of the
    removed charts are deleted; the softmax renormalizes the rest.
    """
    n = model.num_charts
    ratios = [model.decoder_norm(a) / model.initial_decoder_norms[a] for a in range(n)]
    removed = [a for a in range(n) if ratios[a] < rel_threshold]
    if not removed:
        return model, []
    survivors = [a for a in range(n) if a not in removed]
    if not survivors:
        raise ValueError("pruning would remove every chart; at least one must survive")
    if model.config.predictor_input == "z_alpha_distances":
        raise ValueError("cannot prune with z_alpha_distances predictor input (input width changes)")

    pruned = object.__new__(ChartAutoencoder)
    pruned.config = replace(model.config, num_charts=len(survivors),
                            hidden=list(model.config.hidden))
    pruned.E = model.E
    pruned.D = model.D
    pruned.chart_encoders = [model.chart_encoders[a] for a in survivors]
    pruned.chart_decoders = [model.chart_decoders[a] for a in survivors]
    pruned.chart_ids = [model.chart_ids[a] for a in survivors]
    pruned.initial_decoder_norms = [model.initial_decoder_norms[a] for a in survivors]
    pruned._power_states = model._power_states
    # New predictor head: shared trunk tensors, surviving output columns only.
    keep = np.asarray(survivors)
    new_p = object.__new__(Mlp)
    new_p.spec = MlpSpec(model.P.spec.widths[:-1] + [len(survivors)], "softmax")
    new_p.weights = model.P.weights[:-1] + [
        Tensor(np.array(model.P.weights[-1].data[:, keep]), requires_grad=True)]
    new_p.biases = model.P.biases[:-1] + [
        Tensor(np.array(model.P.biases[-1].data[keep]), requires_grad=True)]
    pruned.P = new_p
    return pruned, removed


# -- checkpointing --------------------------------------------------------------------


def _component_tensors(model: ChartAutoencoder) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}

    def put(prefix: str, mlp: Mlp):
        for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            out[f"{prefix}.{i}.W"] = w.data
            out[f"{prefix}.{i}.b"] = b.data

    put("E", model.E)
    for a, enc in enumerate(model.chart_encoders):
        put(f"enc{a}", enc)
    for a, dec in enumerate(model.chart_decoders):
        put(f"dec{a}", dec)
    put("P", model.P)
    put("D", model.D)
    return out


def save_model(model: ChartAutoencoder, path) -> None:
    """Binary parameter container plus a JSON sidecar describing the config."""
    save_tensors(path, _component_tensors(model))
    cfg = model.config
    sidecar = {
        "m": cfg.ambient_dim, "l": cfg.embed_dim, "d": cfg.chart_dim,
        "N": cfg.num_charts, "preset": cfg.preset,
        "predictor_input": cfg.predictor_input,
        "hidden": cfg.hidden,
        "chart_ids": model.chart_ids,
        "initial_decoder_norms": model.initial_decoder_norms,
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh)


def load_model(path) -> ChartAutoencoder:
    tensors = load_tensors(path)
    try:
        with open(str(path) + ".json") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError as exc:
        raise CheckpointError(f"{path}: missing sidecar JSON") from exc
    config = ChartConfig(
        ambient_dim=sidecar["m"], chart_dim=sidecar["d"], num_charts=sidecar["N"],
        embed_dim=sidecar["l"],
        preset="custom" if sidecar["preset"] == "custom" else sidecar["preset"],
        hidden=sidecar["hidden"] if sidecar["preset"] == "custom" else None,
        predictor_input=sidecar["predictor_input"])
    model = ChartAutoencoder(config, seed=0)
    model.chart_ids = list(sidecar["chart_ids"])
    model.initial_decoder_norms = list(sidecar["initial_decoder_norms"])

    def fill(prefix: str, mlp: Mlp):
        for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            for tgt, name in ((w, f"{prefix}.{i}.W"), (b, f"{prefix}.{i}.b")):
                if name not in tensors:
                    raise CheckpointError(f"{path}: missing tensor {name} (config mismatch)")
                if tensors[name].shape != tgt.data.shape:
                    raise CheckpointError(
                        f"{path}: tensor {name} has shape {tensors[name].shape}, "
                        f"expected {tgt.data.shape} (config mismatch)")
                tgt.data = tensors[name]

    fill("E", model.E)
    for a, enc in enumerate(model.chart_encoders):
        fill(f"enc{a}", enc)
    for a, dec in enumerate(model.chart_decoders):
        fill(f"dec{a}", dec)
    fill("P", model.P)
    fill("D", model.D)
    return model

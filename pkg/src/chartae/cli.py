"""Command-line entry point for reproducible experiments.

Subcommands: generate, train, eval, geodesic, compile-simplex, sample-bound,
prune-report. All randomness funnels through explicit seeds, so repeated
invocations with the same flags produce byte-identical outputs. Diagnostics
go to stderr; exit code 0 means every declared postcondition held.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

import numpy as np

from . import manifolds, metrics, simplicial, training
from .model import ChartAutoencoder, ChartConfig, load_model, save_model
from .training import TrainConfig, TrainingDiverged


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_generate(args) -> int:
    spec = manifolds.ManifoldSpec(kind=args.kind, ambient_dim=args.ambient,
                                  embed_seed=args.embed_seed, noise_sigma=args.noise)
    cloud = manifolds.sample(spec, args.n, args.seed)
    manifolds.save_pointcloud_csv(cloud, args.out)
    _err(f"wrote {cloud.n} x {cloud.ambient_dim} points to {args.out}")
    return 0


_REQUIRED_KEYS = [("model", "charts"), ("model", "chart_dim"), ("output", "dir")]


def _load_config(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise SystemExit(f"cannot read config file {path}")
    if not parser.has_section("dataset") or not (
            parser.has_option("dataset", "kind") or parser.has_option("dataset", "csv")
            or parser.has_option("dataset", "images")):
        raise SystemExit("missing config key: dataset.kind (or dataset.csv / dataset.images)")
    for section, key in _REQUIRED_KEYS:
        if not parser.has_option(section, key):
            raise SystemExit(f"missing config key: {section}.{key}")
    return parser


def _dataset_from_config(cfg: configparser.ConfigParser) -> manifolds.PointCloud:
    ds = cfg["dataset"]
    if "csv" in ds:
        return manifolds.load_pointcloud_csv(ds["csv"])
    if "images" in ds:
        if "labels" not in ds:
            raise SystemExit("missing config key: dataset.labels")
        cloud = manifolds.load_idx_images(ds["images"], ds["labels"],
                                          normalize=ds.getboolean("normalize", True))
        limit = ds.getint("limit", 0)
        if limit and limit < cloud.n:
            cloud = manifolds.PointCloud(points=cloud.points[:limit],
                                         labels=cloud.labels[:limit])
        return cloud
    spec = manifolds.ManifoldSpec(
        kind=ds["kind"],
        ambient_dim=ds.getint("ambient_dim", fallback=None),
        embed_seed=ds.getint("embed_seed", 0),
        noise_sigma=ds.getfloat("noise_sigma", 0.0))
    return manifolds.sample(spec, ds.getint("n", 2000), ds.getint("seed", 0))


def _train_config(cfg: configparser.ConfigParser, out_dir: str) -> TrainConfig:
    tr = cfg["train"] if cfg.has_section("train") else cfg["DEFAULT"]
    defaults = TrainConfig()
    return TrainConfig(
        lr=tr.getfloat("lr", defaults.lr),
        batch_size=tr.getint("batch_size", defaults.batch_size),
        epochs=tr.getint("epochs", defaults.epochs),
        lipschitz_weight=tr.getfloat("lipschitz_weight", defaults.lipschitz_weight),
        pretrain_steps=tr.getint("pretrain_steps", defaults.pretrain_steps),
        prune_rel_threshold=tr.getfloat("prune_rel_threshold", defaults.prune_rel_threshold),
        prune_start_epoch=tr.getint("prune_start_epoch", defaults.prune_start_epoch),
        prune_every=tr.getint("prune_every", defaults.prune_every),
        prune_enabled=tr.getboolean("prune_enabled", defaults.prune_enabled),
        chart_decoder_l2=tr.getfloat("chart_decoder_l2", defaults.chart_decoder_l2),
        weight_decay=tr.getfloat("weight_decay", defaults.weight_decay),
        orientation_reg=tr.get("orientation_reg", defaults.orientation_reg),
        orientation_weight=tr.getfloat("orientation_weight", defaults.orientation_weight),
        seed=tr.getint("seed", defaults.seed),
        checkpoint_every=tr.getint("checkpoint_every", defaults.checkpoint_every),
        checkpoint_dir=out_dir,
        power_iters=tr.getint("power_iters", defaults.power_iters),
    )


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    data = _dataset_from_config(cfg)
    md = cfg["model"]
    hidden = None
    if md.get("preset", "small_cae") == "custom":
        hidden = [int(w) for w in md["hidden"].split(",")]
    model_cfg = ChartConfig(
        ambient_dim=data.ambient_dim,
        chart_dim=md.getint("chart_dim"),
        num_charts=md.getint("charts"),
        embed_dim=md.getint("embed_dim", fallback=None),
        preset=md.get("preset", "small_cae"),
        hidden=hidden,
        predictor_input=md.get("predictor_input", "x"))
    out_dir = Path(cfg["output"]["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = _train_config(cfg, str(out_dir))
    if args.epochs is not None:
        tc.epochs = args.epochs

    model = ChartAutoencoder(model_cfg, seed=tc.seed)
    model, warnings = training.pretrain(model, data, tc)
    for w in warnings:
        _err(f"pretrain warning: {w}")
    try:
        model, report = training.train(model, data, tc)
    except TrainingDiverged as exc:
        _err(f"training diverged: {exc}; last good checkpoint: {exc.checkpoint_path}")
        return 1
    report.warnings = warnings + report.warnings
    save_model(model, out_dir / "model.ckpt")
    report.to_csv(out_dir / "report.csv")
    report.to_json(out_dir / "summary.json")
    _err(f"final charts: {model.num_charts}; "
         f"mean min-recon: {report.epochs[-1].mean_min_recon if report.epochs else float('nan')}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    data = manifolds.load_pointcloud_csv(args.data)
    report = metrics.evaluate(model, train=data, test=data,
                              ell=args.ell, seed=args.seed, allocation=args.allocation)
    text = report.to_json(args.out)
    print(text)
    return 0


def cmd_geodesic(args) -> int:
    model = load_model(args.checkpoint)
    a = np.array([float(v) for v in args.a.split(",")])
    b = np.array([float(v) for v in args.b.split(",")])
    poly = metrics.geodesic_polyline(model, a, b, args.k)
    length = float(np.linalg.norm(np.diff(poly, axis=0), axis=1).sum())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(",".join(f"x{i}" for i in range(poly.shape[1])) + "\n")
            for row in poly:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    print(repr(length))
    return 0


def cmd_compile_simplex(args) -> int:
    S = simplicial.load_complex_json(args.complex)
    with open(args.values) as fh:
        header = fh.readline()
        values = np.loadtxt(fh, delimiter=",", ndmin=2)
    del header
    net = simplicial.compile_pl(S, values)
    simplicial.save_relu_network(net, args.out)
    bounds = simplicial.compile_bounds(S, q=values.shape[1])
    rng = np.random.default_rng(args.seed)
    # probe random convex combinations inside random simplices
    max_err = 0.0
    for _ in range(args.probes):
        s = S.simplices[int(rng.integers(len(S.simplices)))]
        w = rng.random(len(s))
        w /= w.sum()
        x = w @ S.vertices[list(s)]
        exact = w @ values[list(s)]
        max_err = max(max_err, float(np.abs(net(x) - exact).max()))
    report = {
        "declared_param_count": net.declared_param_count,
        "param_bound": bounds["param_bound"],
        "declared_depth": net.declared_depth,
        "depth_bound_layers": bounds["depth_bound_layers"],
        "max_ring": bounds["max_ring"],
        "probe_max_error": max_err,
        "probes": args.probes,
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    ok = (net.declared_param_count <= bounds["param_bound"]
          and net.declared_depth <= bounds["depth_bound_layers"]
          and max_err <= 1e-9)
    return 0 if ok else 1


def cmd_sample_bound(args) -> int:
    try:
        sb = simplicial.sample_bound(args.d, args.tau, args.C, args.eps, args.nu)
    except ValueError as exc:
        _err(str(exc))
        return 1
    print(json.dumps({"beta1": sb.beta1, "beta2": sb.beta2,
                      "n_required": sb.n_required}, indent=2, sort_keys=True))
    return 0


def cmd_prune_report(args) -> int:
    model = load_model(args.checkpoint)
    rows = []
    for a in range(model.num_charts):
        ratio = model.decoder_norm(a) / model.initial_decoder_norms[a]
        rows.append({"chart": model.chart_ids[a],
                     "decoder_norm_ratio": ratio,
                     "would_prune": ratio < args.threshold})
    print(json.dumps({"threshold": args.threshold, "charts": rows}, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chartae",
                                     description="Multi-chart auto-encoder experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample a synthetic manifold to CSV")
    g.add_argument("--kind", required=True, choices=sorted(manifolds.NATIVE_DIM))
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--ambient", type=int, default=None)
    g.add_argument("--embed-seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model from a key=value config file")
    t.add_argument("config")
    t.add_argument("--epochs", type=int, default=None, help="override config epochs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluation metrics for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--ell", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--allocation", default="uniform", choices=["uniform", "usage"])
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    ge = sub.add_parser("geodesic", help="latent-path geodesic estimate")
    ge.add_argument("--checkpoint", required=True)
    ge.add_argument("--a", required=True, help="comma-separated ambient coords")
    ge.add_argument("--b", required=True)
    ge.add_argument("--k", type=int, default=64)
    ge.add_argument("--out", default=None, help="polyline CSV path")
    ge.set_defaults(func=cmd_geodesic)

    cs = sub.add_parser("compile-simplex", help="compile a PL function to a ReLU network")
    cs.add_argument("--complex", required=True, help="complex JSON path")
    cs.add_argument("--values", required=True, help="per-vertex values CSV")
    cs.add_argument("--out", required=True, help="network checkpoint path")
    cs.add_argument("--probes", type=int, default=1000)
    cs.add_argument("--seed", type=int, default=0)
    cs.set_defaults(func=cmd_compile_simplex)

    sb = sub.add_parser("sample-bound", help="training-set size bound")
    sb.add_argument("--d", type=int, required=True)
    sb.add_argument("--tau", type=float, required=True)
    sb.add_argument("--C", type=float, required=True)
    sb.add_argument("--eps", type=float, required=True)
    sb.add_argument("--nu", type=float, required=True)
    sb.set_defaults(func=cmd_sample_bound)

    pr = sub.add_parser("prune-report", help="per-chart decoder norm ratios")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--threshold", type=float, default=1e-2)
    pr.set_defaults(func=cmd_prune_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, simplicial.CheckpointError) as exc:
        _err(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())

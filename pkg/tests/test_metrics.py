import numpy as np
import pytest

from chartae.manifolds import ManifoldSpec, PointCloud, sample
from chartae.metrics import (EvalReport, cae_roundtrip, consecutive_latent_distances,
                             coverage, decode_latent_samples, draw_latent_samples,
                             evaluate, geodesic_length, geodesic_polyline,
                             reconstruction_error, unfaithfulness)
from chartae.model import ChartAutoencoder, ChartConfig
from oracles import brute_force_coverage, brute_force_unfaithfulness


@pytest.fixture(scope="module")
def circle_data():
    return sample(ManifoldSpec("circle"), 400, rng_seed=3)


@pytest.fixture(scope="module")
def small_model(circle_data):
    cfg = ChartConfig(ambient_dim=2, chart_dim=1, num_charts=2,
                      preset="custom", hidden=[16, 16])
    return ChartAutoencoder(cfg, seed=5)


def test_reconstruction_error_identity_like():
    # a model whose reconstruction equals the input exactly gives zero
    cloud = PointCloud(points=np.random.default_rng(0).random((20, 3)))
    cfg = ChartConfig(ambient_dim=3, chart_dim=1, num_charts=1,
                      preset="custom", hidden=[4])
    model = ChartAutoencoder(cfg, seed=0)
    y, _ = model.reconstruct(cloud.points)
    want = float(((cloud.points - y) ** 2).sum(axis=1).mean() / 3)
    assert abs(reconstruction_error(model, cloud) - want) < 1e-15


def test_reconstruction_error_constant_offset(circle_data, small_model):
    y, _ = small_model.reconstruct(circle_data.points)
    offset = circle_data.points - y
    # shifting the data by the model's own residual gives exactly zero error
    shifted = PointCloud(points=y)
    got = reconstruction_error(small_model, shifted)
    y2, _ = small_model.reconstruct(y)
    want = float(((y - y2) ** 2).sum(axis=1).mean() / 2)
    assert abs(got - want) < 1e-15


def test_reconstruction_error_empty_rejected(small_model):
    cloud = PointCloud(points=np.zeros((1, 2)))
    cloud.points = np.zeros((0, 2))
    with pytest.raises(ValueError, match="empty"):
        reconstruction_error(small_model, cloud)


def test_latent_samples_deterministic_and_in_box(small_model):
    a = draw_latent_samples(small_model, 50, seed=7)
    b = draw_latent_samples(small_model, 50, seed=7)
    for sa, sb in zip(a, b):
        assert sa.chart == sb.chart
        assert np.array_equal(sa.coords, sb.coords)
        assert np.all(sa.coords > 0) and np.all(sa.coords < 1)
    c = draw_latent_samples(small_model, 50, seed=8)
    assert any(not np.array_equal(sa.coords, sc.coords) for sa, sc in zip(a, c))


def test_unfaithfulness_and_coverage_match_double_loop(circle_data, small_model):
    ell, seed = 50, 11
    got_u = unfaithfulness(small_model, circle_data, ell, seed)
    got_c = coverage(small_model, circle_data, ell, seed)
    samples = draw_latent_samples(small_model, ell, seed)
    decoded = decode_latent_samples(small_model, samples)
    want_u = brute_force_unfaithfulness(decoded, circle_data.points, 2)
    want_c = brute_force_coverage(decoded, circle_data.points)
    assert got_u == want_u
    assert got_c == want_c


def test_coverage_single_sample_is_one(circle_data, small_model):
    assert coverage(small_model, circle_data, ell=1, seed=0) == 1.0


def test_coverage_constant_decoder(circle_data):
    cfg = ChartConfig(ambient_dim=2, chart_dim=1, num_charts=1,
                      preset="custom", hidden=[4])
    model = ChartAutoencoder(cfg, seed=2)
    for w in model.chart_decoders[0].weights:
        w.data[:] = 0.0
    ell = 25
    assert coverage(model, circle_data, ell=ell, seed=3) == 1.0 / ell
    # unfaithfulness equals the distance from the constant point to the data
    const = model.decode_chart(np.full((1, 1), 0.5), 0)[0]
    want = float(((circle_data.points - const) ** 2).sum(axis=1).min() / 2)
    got = unfaithfulness(model, circle_data, ell=ell, seed=3)
    assert abs(got - want) < 1e-12


def test_coverage_is_rational_with_denominator_ell(circle_data, small_model):
    for ell in (7, 20, 33):
        val = coverage(small_model, circle_data, ell=ell, seed=1)
        assert abs(val * ell - round(val * ell)) < 1e-12
        assert 1.0 / ell <= val <= 1.0


def test_unfaithfulness_training_grid_decoder(circle_data, small_model):
    # decoded samples from the model's own decoder grid: unfaithfulness is
    # bounded by the squared fill distance of the decoded set to the data
    got = unfaithfulness(small_model, circle_data, ell=100, seed=0)
    samples = draw_latent_samples(small_model, 100, seed=0)
    decoded = decode_latent_samples(small_model, samples)
    cloud = PointCloud(points=decoded)
    train_on_decoded = unfaithfulness(small_model, cloud, ell=100, seed=0)
    assert train_on_decoded == 0.0
    assert got >= 0.0


def test_evaluate_report_json(tmp_path, circle_data, small_model):
    report = evaluate(small_model, circle_data, circle_data, ell=20, seed=4)
    path = tmp_path / "report.json"
    text = report.to_json(path)
    import json

    payload = json.loads(path.read_text())
    assert payload == json.loads(text)
    assert set(payload) == {"recon_error", "unfaithfulness", "coverage", "ell",
                            "seed", "charts_live"}
    assert payload["ell"] == 20 and payload["charts_live"] == 2
    assert sum(report.chart_allocation) == 20


# -- geodesics ---------------------------------------------------------------------


def test_geodesic_same_point_zero(circle_data, small_model):
    a = circle_data.points[0]
    assert geodesic_length(small_model, a, a, k=16) == 0.0


def test_geodesic_two_points_is_chord(circle_data, small_model):
    pts = circle_data.points
    winner = np.argmax(small_model.predict_proba(pts), axis=1)
    same = np.flatnonzero(winner == winner[0])
    a, b = pts[same[0]], pts[same[1]]
    poly = geodesic_polyline(small_model, a, b, k=2)
    want = float(np.linalg.norm(poly[1] - poly[0]))
    assert abs(geodesic_length(small_model, a, b, k=2) - want) < 1e-15


def test_geodesic_requires_same_chart(circle_data, small_model):
    pts = circle_data.points
    winner = np.argmax(small_model.predict_proba(pts), axis=1)
    if winner.min() == winner.max():
        pytest.skip("untrained model put everything on one chart")
    a = pts[np.argmax(winner == 0)]
    b = pts[np.argmax(winner == 1)]
    with pytest.raises(ValueError, match="different charts"):
        geodesic_length(small_model, a, b, k=8)


def test_geodesic_k_validation(circle_data, small_model):
    a = circle_data.points[0]
    with pytest.raises(ValueError, match="k"):
        geodesic_length(small_model, a, a, k=1)


# -- consecutive latent distances ------------------------------------------------------


def test_consecutive_distances_constant_sequence(small_model):
    seq = np.tile(np.array([1.0, 0.0]), (5, 1))
    assert np.all(consecutive_latent_distances(small_model, seq) == 0.0)


def test_consecutive_distances_single_chart_formula(circle_data):
    cfg = ChartConfig(ambient_dim=2, chart_dim=1, num_charts=1,
                      preset="custom", hidden=[8])
    model = ChartAutoencoder(cfg, seed=1)
    seq = circle_data.points[:6]
    got = consecutive_latent_distances(model, seq)
    z = model.chart_coords(seq)[0]
    want = np.linalg.norm(np.diff(z, axis=0), axis=1)
    assert np.abs(got - want).max() < 1e-15


def test_consecutive_distances_cross_chart_finite(circle_data, small_model):
    pts = circle_data.points
    winner = np.argmax(small_model.predict_proba(pts), axis=1)
    if winner.min() == winner.max():
        pytest.skip("untrained model put everything on one chart")
    a = pts[np.argmax(winner == 0)]
    b = pts[np.argmax(winner == 1)]
    d = consecutive_latent_distances(small_model, np.stack([a, b]))
    assert d.shape == (1,) and np.isfinite(d[0])


def test_consecutive_distances_length_validation(small_model):
    with pytest.raises(ValueError, match="2"):
        consecutive_latent_distances(small_model, np.zeros((1, 2)))


def test_cae_roundtrip_functions(circle_data, small_model):
    enc, dec = cae_roundtrip(small_model)
    z = enc(circle_data.points[:10])
    y = dec(z)
    want, _ = small_model.reconstruct(circle_data.points[:10])
    assert np.abs(y - want).max() < 1e-12


def test_geodesic_length_constant_for_affine_decoder(circle_data):
    # positive weights keep every preactivation positive on (0,1) inputs,
    # so the decoder chain is affine there and decodes segments to segments:
    # the polyline length is the chord length for every k
    cfg = ChartConfig(ambient_dim=2, chart_dim=1, num_charts=1,
                      preset="custom", hidden=[3])
    model = ChartAutoencoder(cfg, seed=4)
    rng = np.random.default_rng(0)
    for mlp in (model.chart_decoders[0], model.D):
        for w, b in zip(mlp.weights, mlp.biases):
            w.data = np.abs(rng.normal(size=w.data.shape)) * 0.3
            b.data = np.abs(rng.normal(size=b.data.shape)) * 0.1
    a, b_pt = circle_data.points[0], circle_data.points[7]
    lengths = [geodesic_length(model, a, b_pt, k) for k in (2, 4, 8, 16, 32, 64)]
    assert np.abs(np.diff(lengths)).max() <= 1e-9

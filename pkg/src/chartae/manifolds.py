"""Synthetic manifold samplers, density utilities, and dataset ingestion.

Every sampler is a pure function of (spec, n, seed): identical inputs give
bit-identical point clouds. Points are drawn uniformly with respect to the
surface (or arc-length) measure, optionally rotated into a higher ambient
dimension by a fixed random orthogonal map, with Gaussian noise added last.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

NATIVE_DIM = {
    "circle": 2,
    "sphere": 3,
    "torus": 3,
    "double_torus": 3,
    "genus3": 3,
    "cat_curve": 2,
}

INTRINSIC_DIM = {
    "circle": 1,
    "sphere": 2,
    "torus": 2,
    "double_torus": 2,
    "genus3": 2,
    "cat_curve": 1,
}

TORUS_R, TORUS_r = 2.0, 1.0


@dataclass
class PointCloud:
    """n samples in ambient dimension m with optional ground-truth structure.

    ``params`` holds intrinsic coordinates (angles) when the sampler knows
    them; ``labels`` holds integer class labels for image data.
    """

    points: np.ndarray
    intrinsic_dim: int | None = None
    params: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ValueError(f"point cloud must be a nonempty n x m matrix, got shape {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite entries")
        if self.params is not None:
            self.params = np.asarray(self.params, dtype=np.float64)
            if self.params.shape[0] != self.points.shape[0]:
                raise ValueError("params row count does not match points")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]


@dataclass
class ManifoldSpec:
    """Which manifold to sample and how it sits in ambient space."""

    kind: str
    ambient_dim: int | None = None
    embed_seed: int = 0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in NATIVE_DIM:
            raise ValueError(f"unknown manifold kind {self.kind!r}; choose from {sorted(NATIVE_DIM)}")
        native = NATIVE_DIM[self.kind]
        if self.ambient_dim is None:
            self.ambient_dim = native
        if self.ambient_dim < native:
            raise ValueError(f"ambient_dim {self.ambient_dim} below native dimension {native} of {self.kind}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class FpsResult:
    """Greedy max-min sample: selected indices and final covering radius."""

    indices: list[int]
    min_dist: float


# -- per-kind samplers (native coordinates) -----------------------------------


def _sample_circle(n: int, rng: np.random.Generator):
    theta = rng.random(n) * 2.0 * np.pi
    pts = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return pts, theta[:, None]


def _sample_sphere(n: int, rng: np.random.Generator):
    phi = rng.random(n) * 2.0 * np.pi
    cos_theta = 2.0 * rng.random(n) - 1.0
    theta = np.arccos(cos_theta)
    sin_theta = np.sqrt(1.0 - cos_theta**2)
    pts = np.stack([sin_theta * np.cos(phi), sin_theta * np.sin(phi), cos_theta], axis=1)
    return pts, np.stack([theta, phi], axis=1)


def _sample_torus(n: int, rng: np.random.Generator):
    # Rejection on the tube angle with density (R + r cos v) / (R + r).
    us = np.empty(n)
    vs = np.empty(n)
    filled = 0
    while filled < n:
        m = max(2 * (n - filled), 128)
        u = rng.random(m) * 2.0 * np.pi
        v = rng.random(m) * 2.0 * np.pi
        accept = rng.random(m) < (TORUS_R + TORUS_r * np.cos(v)) / (TORUS_R + TORUS_r)
        k = min(int(accept.sum()), n - filled)
        us[filled:filled + k] = u[accept][:k]
        vs[filled:filled + k] = v[accept][:k]
        filled += k
    w = TORUS_R + TORUS_r * np.cos(vs)
    pts = np.stack([w * np.cos(us), w * np.sin(us), TORUS_r * np.sin(vs)], axis=1)
    return pts, np.stack([us, vs], axis=1)


def double_torus_implicit(p: np.ndarray) -> np.ndarray:
    """Level-set function whose zero set is a genus-2 surface."""
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    g = x * x * (1.0 - x * x) - y * y
    return g * g + z * z / 4.0 - 0.01


def _double_torus_grad(p: np.ndarray) -> np.ndarray:
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    g = x * x * (1.0 - x * x) - y * y
    gx = 2.0 * x - 4.0 * x**3
    out = np.empty_like(p)
    out[..., 0] = 2.0 * g * gx
    out[..., 1] = 2.0 * g * (-2.0 * y)
    out[..., 2] = z / 2.0
    return out

_GENUS3_CENTERS = (-1.1, 0.0, 1.1)
_GENUS3_R2 = 0.45**2
_GENUS3_LEVEL = 0.02


def genus3_implicit(p: np.ndarray) -> np.ndarray:
    """Level-set function with three holes in a row (genus 3)."""
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    g = np.ones_like(x)
    for c in _GENUS3_CENTERS:
        g = g * ((x - c) ** 2 + y * y - _GENUS3_R2)
    return g * g + z * z / 4.0 - _GENUS3_LEVEL


def _genus3_grad(p: np.ndarray) -> np.ndarray:
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    terms = [((x - c) ** 2 + y * y - _GENUS3_R2) for c in _GENUS3_CENTERS]
    g = terms[0] * terms[1] * terms[2]
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    for i, c in enumerate(_GENUS3_CENTERS):
        others = np.ones_like(x)
        for j, t in enumerate(terms):
            if j != i:
                others = others * t
        gx += others * 2.0 * (x - c)
        gy += others * 2.0 * y
    out = np.empty_like(p)
    out[..., 0] = 2.0 * g * gx
    out[..., 1] = 2.0 * g * gy
    out[..., 2] = z / 2.0
    return out


def _sample_implicit(n, rng, fn, grad, box, newton_iters=25):
    """Near-uniform sampling of an implicit surface by shell rejection.

    Box samples within a thin shell |f| < band are projected to the level set
    by Newton steps along the gradient; since the shell thickness scales like
    1/|grad f|, survivors are thinned with probability |grad f|/max|grad f|
    to equalize the surface density.
    """
    lo, hi = box
    band = 0.02
    # Estimate max gradient magnitude on the shell for the thinning step.
    probe = rng.random((20000, 3)) * (hi - lo) + lo
    mask = np.abs(fn(probe)) < band
    gmax = float(np.linalg.norm(grad(probe[mask]), axis=1).max()) * 1.05 if mask.any() else 1.0

    pts = np.empty((n, 3))
    filled = 0
    while filled < n:
        m = max(8 * (n - filled), 4096)
        cand = rng.random((m, 3)) * (hi - lo) + lo
        cand = cand[np.abs(fn(cand)) < band]
        if cand.shape[0] == 0:
            continue
        for _ in range(newton_iters):
            val = fn(cand)
            gd = grad(cand)
            gn2 = np.sum(gd * gd, axis=1)
            gn2 = np.where(gn2 < 1e-18, 1e-18, gn2)
            cand = cand - (val / gn2)[:, None] * gd
        ok = np.abs(fn(cand)) < 1e-10
        cand = cand[ok]
        if cand.shape[0] == 0:
            continue
        gnorm = np.linalg.norm(grad(cand), axis=1)
        keep = rng.random(cand.shape[0]) < gnorm / gmax
        cand = cand[keep]
        k = min(cand.shape[0], n - filled)
        pts[filled:filled + k] = cand[:k]
        filled += k
    return pts, None


# Closed control polygon tracing a cat-head silhouette (two ears on a round
# face); only its loop topology matters to the experiments that use it.
CAT_CONTROL_POINTS = np.array([
    [1.00, 0.00], [0.92, 0.45], [0.86, 0.78], [1.15, 1.35], [0.80, 1.05],
    [0.48, 0.95], [0.00, 1.00], [-0.48, 0.95], [-0.80, 1.05], [-1.15, 1.35],
    [-0.86, 0.78], [-0.92, 0.45], [-1.00, 0.00], [-0.90, -0.45], [-0.60, -0.80],
    [0.00, -0.95], [0.60, -0.80], [0.90, -0.45],
])


def _cat_spline() -> CubicSpline:
    pts = np.vstack([CAT_CONTROL_POINTS, CAT_CONTROL_POINTS[:1]])
    t = np.zeros(len(pts))
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    t[1:] = np.cumsum(seg)
    return CubicSpline(t, pts, bc_type="periodic")


def _sample_cat_curve(n: int, rng: np.random.Generator):
    spline = _cat_spline()
    tmax = spline.x[-1]
    # Arc-length reparameterization through a dense polyline inverse CDF.
    tt = np.linspace(0.0, tmax, 4001)
    poly = spline(tt)
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    s = rng.random(n) * arc[-1]
    t = np.interp(s, arc, tt)
    return spline(t), t[:, None] * (2.0 * np.pi / tmax)


def embedding_rotation(native_dim: int, ambient_dim: int, embed_seed: int) -> np.ndarray:
    """Fixed orthonormal-column matrix (ambient x native) from the seed."""
    rng = np.random.default_rng(embed_seed)
    g = rng.normal(size=(ambient_dim, ambient_dim))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))  # sign-normalize for reproducibility
    return q[:, :native_dim]


def sample(spec: ManifoldSpec, n: int, rng_seed: int) -> PointCloud:
    """Draw n points uniformly from the manifold described by ``spec``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    samplers = {
        "circle": _sample_circle,
        "sphere": _sample_sphere,
        "torus": _sample_torus,
        "double_torus": lambda n, rng: _sample_implicit(
            n, rng, double_torus_implicit, _double_torus_grad,
            (np.array([-1.15, -0.7, -0.25]), np.array([1.15, 0.7, 0.25]))),
        "genus3": lambda n, rng: _sample_implicit(
            n, rng, genus3_implicit, _genus3_grad,
            (np.array([-1.85, -0.85, -0.35]), np.array([1.85, 0.85, 0.35]))),
        "cat_curve": _sample_cat_curve,
    }
    pts, params = samplers[spec.kind](n, rng)
    native = NATIVE_DIM[spec.kind]
    if spec.ambient_dim > native:
        q = embedding_rotation(native, spec.ambient_dim, spec.embed_seed)
        pts = pts @ q.T
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(scale=spec.noise_sigma, size=pts.shape)
    return PointCloud(points=pts, intrinsic_dim=INTRINSIC_DIM[spec.kind], params=params)


# -- density and seed selection -------------------------------------------------


def _min_dists_to(X: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """Distance from each probe to its nearest point of X (chunked, exact)."""
    out = np.empty(probes.shape[0])
    step = max(1, 2_000_000 // max(X.shape[0], 1))
    for lo in range(0, probes.shape[0], step):
        block = probes[lo:lo + step]
        d2 = ((block[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
        out[lo:lo + step] = np.sqrt(d2.min(axis=1))
    return out


def delta_density(X: PointCloud, probes: PointCloud) -> float:
    """Empirical covering radius: max over probes of distance to nearest sample."""
    if X.n == 0:
        raise ValueError("delta_density: empty sample set")
    return float(_min_dists_to(X.points, probes.points).max())


def farthest_point_sampling(X: PointCloud, N: int, start: int = 0) -> FpsResult:
    """Greedy max-min selection of N well-spread points, deterministic in start."""
    n = X.n
    if N > n:
        raise ValueError(f"cannot select {N} points from {n} samples")
    if not (0 <= start < n):
        raise ValueError("start index out of range")
    pts = X.points
    chosen = [start]
    dist = np.linalg.norm(pts - pts[start], axis=1)
    for _ in range(N - 1):
        idx = int(np.argmax(dist))
        chosen.append(idx)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[idx], axis=1))
    return FpsResult(indices=chosen, min_dist=float(dist.max()))


# -- IDX image ingestion ----------------------------------------------------------

_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file (bad magic, truncation, or count mismatch)."""


def _open_maybe_gzip(path):
    import gzip

    fh = open(path, "rb")
    if fh.read(2) == b"\x1f\x8b":
        fh.seek(0)
        return gzip.open(fh)
    fh.seek(0)
    return fh


def load_idx_images(images_path, labels_path, normalize: bool = True) -> PointCloud:
    """Load a big-endian IDX image/label pair (optionally gzipped)."""
    with _open_maybe_gzip(images_path) as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise IdxFormatError(f"{images_path}: truncated header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != _IDX_IMAGE_MAGIC:
            raise IdxFormatError(f"{images_path}: bad magic 0x{magic:08x}, expected 0x{_IDX_IMAGE_MAGIC:08x}")
        payload = fh.read(count * rows * cols)
        if len(payload) < count * rows * cols:
            raise IdxFormatError(f"{images_path}: truncated payload, expected {count * rows * cols} bytes")
    with _open_maybe_gzip(labels_path) as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise IdxFormatError(f"{labels_path}: truncated header")
        magic, label_count = struct.unpack(">II", header)
        if magic != _IDX_LABEL_MAGIC:
            raise IdxFormatError(f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{_IDX_LABEL_MAGIC:08x}")
        labels = np.frombuffer(fh.read(label_count), dtype=np.uint8)
        if labels.size < label_count:
            raise IdxFormatError(f"{labels_path}: truncated payload")
    if label_count != count:
        raise IdxFormatError(f"image/label count mismatch: {count} images vs {label_count} labels")
    images = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols).astype(np.float64)
    if normalize:
        images /= 255.0
    return PointCloud(points=images, labels=labels.astype(np.int64))


# -- CSV interchange ----------------------------------------------------------------


def save_pointcloud_csv(cloud: PointCloud, path) -> None:
    """Write `x0..x{m-1}[,p0..p{d-1}][,label]` rows."""
    m = cloud.ambient_dim
    cols = [f"x{i}" for i in range(m)]
    blocks = [cloud.points]
    if cloud.params is not None:
        cols += [f"p{i}" for i in range(cloud.params.shape[1])]
        blocks.append(cloud.params)
    if cloud.labels is not None:
        cols += ["label"]
        blocks.append(cloud.labels[:, None].astype(np.float64))
    table = np.hstack(blocks)
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in table:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_pointcloud_csv(path, intrinsic_dim: int | None = None) -> PointCloud:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    m = sum(1 for c in header if c.startswith("x"))
    d = sum(1 for c in header if c.startswith("p"))
    has_label = header[-1] == "label"
    params = data[:, m:m + d] if d else None
    labels = data[:, -1].astype(np.int64) if has_label else None
    return PointCloud(points=data[:, :m], intrinsic_dim=intrinsic_dim or (d or None),
                      params=params, labels=labels)

"""Independent oracle implementations the tests check the library against.

Everything here deliberately avoids the library's own computation paths:
finite differences instead of autodiff, dense eigendecompositions instead of
power iteration, per-simplex barycentric evaluation instead of compiled
networks, and plain double loops instead of vectorized reductions.
"""

import numpy as np


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a flat array."""
    x = x.astype(np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def svd_spectral_norm(w: np.ndarray) -> float:
    """Largest singular value via eigendecomposition of W^T W."""
    eigvals = np.linalg.eigvalsh(w.T @ w)
    return float(np.sqrt(max(eigvals.max(), 0.0)))


def barycentric_pl_eval(vertices, simplices, values, x, tol=1e-9):
    """Evaluate the PL interpolant at x by locating a containing simplex."""
    values = np.atleast_2d(values.T).T
    for s in simplices:
        v0 = vertices[s[0]]
        V = (vertices[list(s[1:])] - v0).T
        beta = np.linalg.solve(V, x - v0)
        if beta.min() >= -tol and beta.sum() <= 1.0 + tol:
            xi = np.concatenate([[1.0 - beta.sum()], beta])
            return xi @ values[list(s)]
    raise ValueError(f"probe {x} lies outside the complex")


def circumcircle_contains_any(vertices, tri, points, tol=1e-9) -> bool:
    """Brute-force empty-circumcircle violation check for one triangle."""
    a, b, c = vertices[list(tri)]
    ccw = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    if ccw < 0:
        b, c = c, b
    for i, p in enumerate(points):
        if i in tri:
            continue
        m = np.array([
            [a[0] - p[0], a[1] - p[1], (a[0] - p[0]) ** 2 + (a[1] - p[1]) ** 2],
            [b[0] - p[0], b[1] - p[1], (b[0] - p[0]) ** 2 + (b[1] - p[1]) ** 2],
            [c[0] - p[0], c[1] - p[1], (c[0] - p[0]) ** 2 + (c[1] - p[1]) ** 2],
        ])
        if np.linalg.det(m) > tol:
            return True
    return False


def brute_force_unfaithfulness(decoded, train_points, ambient_dim) -> float:
    """Double-loop mean min squared distance (per coordinate)."""
    total = 0.0
    for i in range(decoded.shape[0]):
        best = None
        for j in range(train_points.shape[0]):
            d2 = float(np.sum((train_points[j] - decoded[i]) ** 2))
            if best is None or d2 < best:
                best = d2
        total += best
    return total / (decoded.shape[0] * ambient_dim)


def brute_force_coverage(decoded, train_points) -> float:
    """Double-loop distinct-nearest-neighbor fraction."""
    hits = set()
    for i in range(decoded.shape[0]):
        best = None
        best_j = -1
        for j in range(train_points.shape[0]):
            d2 = float(np.sum((train_points[j] - decoded[i]) ** 2))
            if best is None or d2 < best:
                best = d2
                best_j = j
        hits.add(best_j)
    return len(hits) / decoded.shape[0]


def greedy_fps_indices(points, count, start):
    """Reference farthest-point sampling with explicit loops."""
    chosen = [start]
    dist = [float(np.linalg.norm(points[i] - points[start])) for i in range(len(points))]
    while len(chosen) < count:
        idx = int(np.argmax(dist))
        chosen.append(idx)
        for i in range(len(points)):
            dist[i] = min(dist[i], float(np.linalg.norm(points[i] - points[idx])))
    return chosen


def grid_complex_arrays(nx: int, ny: int):
    """Structured triangulation of the unit square: vertices and triangles."""
    xs = np.linspace(0.0, 1.0, nx)
    ys = np.linspace(0.0, 1.0, ny)
    verts = np.array([[x, y] for y in ys for x in xs])
    tris = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b = a + 1
            c = a + nx
            d = c + 1
            tris.append((a, b, d))
            tris.append((a, d, c))
    return verts, tris


def sample_in_simplices(vertices, simplices, count, seed):
    """Random points strictly inside random simplices (barycentric draws)."""
    rng = np.random.default_rng(seed)
    which = rng.integers(0, len(simplices), size=count)
    out = np.empty((count, vertices.shape[1]))
    for i, s_idx in enumerate(which):
        s = simplices[s_idx]
        w = rng.dirichlet(np.ones(len(s)))
        out[i] = w @ vertices[list(s)]
    return out

"""Simplicial complexes and the exact compiler from PL functions to ReLU nets.

A piecewise-linear function on a simplicial complex decomposes as a sum of
per-vertex hat functions weighted by vertex values. Around a vertex v, each
incident simplex i carries the affine coordinate t_i(x) = 1 - 1^T beta_i(x)
(beta_i barycentric), and the hat is the max-min form

    hat_v = max_i  min { t_j : t_j >= t_i everywhere on simplex i }

clipped at zero. When the vertex star is convex every dominating set is the
whole ring and this collapses to the single min the hat is usually written
as; non-convex stars contribute a few extra groups. ReLU is monotone, so the
zero clip commutes inward: clamping first makes every intermediate value
nonnegative, and then ``min(a,b) = b - ReLU(b-a)`` and ``max(a,b) =
a + ReLU(b-a)`` assemble the whole hat from affine layers and one unit per
tree node. The compiled network reproduces the PL function exactly (to
float64 rounding) on the complex.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .manifolds import PointCloud
from .tensor import CheckpointError, load_tensors, save_tensors

_DET_TOL = 1e-12


@dataclass
class SimplicialComplex:
    """Vertices, top-dimensional simplices, and the vertex ring map."""

    vertices: np.ndarray         # (n, d)
    simplices: list[tuple[int, ...]]
    ring: dict[int, list[int]] = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.ndim != 2:
            raise ValueError("vertices must be an n x d matrix")
        d = self.vertices.shape[1]
        self.simplices = [tuple(int(i) for i in s) for s in self.simplices]
        for s in self.simplices:
            if len(s) != d + 1:
                raise ValueError(f"simplex {s} has {len(s)} vertices, expected {d + 1}")
            if len(set(s)) != d + 1:
                raise ValueError(f"simplex {s} repeats a vertex")
        self.ring = {}
        for idx, s in enumerate(self.simplices):
            for v in s:
                self.ring.setdefault(v, []).append(idx)
        self._validate()

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def edge_matrix(self, simplex_idx: int, base: int) -> np.ndarray:
        """Columns (v_j - v_base) for the simplex, base vertex excluded."""
        s = self.simplices[simplex_idx]
        others = [v for v in s if v != base]
        return (self.vertices[others] - self.vertices[base]).T

    def max_ring_size(self) -> int:
        return max((len(r) for r in self.ring.values()), default=0)

    def _validate(self):
        for idx, s in enumerate(self.simplices):
            V = self.edge_matrix(idx, s[0])
            if abs(np.linalg.det(V)) <= _DET_TOL:
                raise ValueError(f"simplex {s} is affinely dependent (|det| <= {_DET_TOL})")
        # Pairwise intersections must be shared faces: combinatorially, the
        # shared vertex set of two distinct simplices must be a proper subset
        # of each (identical vertex sets would be a duplicated simplex).
        seen = {}
        for idx, s in enumerate(self.simplices):
            key = tuple(sorted(s))
            if key in seen:
                raise ValueError(f"duplicate simplex {s}")
            seen[key] = idx

    def interior_vertices(self) -> set[int]:
        """Vertices whose first ring closes up (no boundary faces touch them)."""
        boundary_vertices: set[int] = set()
        face_count: dict[tuple[int, ...], int] = {}
        for s in self.simplices:
            for drop in range(len(s)):
                face = tuple(sorted(s[:drop] + s[drop + 1:]))
                face_count[face] = face_count.get(face, 0) + 1
        for face, count in face_count.items():
            if count == 1:
                boundary_vertices.update(face)
        return set(self.ring) - boundary_vertices


def save_complex_json(S: SimplicialComplex, path) -> None:
    with open(path, "w") as fh:
        json.dump({"vertices": S.vertices.tolist(),
                   "simplices": [list(s) for s in S.simplices]}, fh)


def load_complex_json(path) -> SimplicialComplex:
    with open(path) as fh:
        payload = json.load(fh)
    return SimplicialComplex(np.asarray(payload["vertices"], dtype=np.float64),
                             [tuple(s) for s in payload["simplices"]])


# -- explicit ReLU networks -----------------------------------------------------


@dataclass
class ReluLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str  # "relu" | "identity"


class ReluNetwork:
    """A frozen affine+ReLU stack produced by the compiler."""

    def __init__(self, layers: list[ReluLayer]):
        for a, b in zip(layers[:-1], layers[1:]):
            if b.weight.shape[1] != a.weight.shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")
        self.layers = layers
        self.declared_param_count = sum(
            int(np.count_nonzero(l.weight)) + int(np.count_nonzero(l.bias)) for l in layers)
        self.declared_depth = len(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        for layer in self.layers:
            h = h @ layer.weight.T + layer.bias
            if layer.activation == "relu":
                h = np.maximum(h, 0.0)
        return h[0] if single else h


def save_relu_network(net: ReluNetwork, path) -> None:
    """Store the layer stack in the checkpoint container plus a JSON sidecar."""
    tensors = {}
    for i, layer in enumerate(net.layers):
        tensors[f"layer{i:03d}.W"] = layer.weight
        tensors[f"layer{i:03d}.b"] = layer.bias
    save_tensors(path, tensors)
    meta = {
        "kind": "relu_network",
        "activations": [l.activation for l in net.layers],
        "declared_param_count": net.declared_param_count,
        "declared_depth": net.declared_depth,
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh)


def load_relu_network(path) -> ReluNetwork:
    tensors = load_tensors(path)
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    if meta.get("kind") != "relu_network":
        raise CheckpointError(f"{path}: sidecar does not describe a relu network")
    layers = []
    for i, act in enumerate(meta["activations"]):
        layers.append(ReluLayer(tensors[f"layer{i:03d}.W"], tensors[f"layer{i:03d}.b"], act))
    return ReluNetwork(layers)


# -- layer-by-layer construction ---------------------------------------------------


class _LayerBuilder:
    """Accumulates sparse rows for one layer; rows address previous-layer units."""

    def __init__(self, in_dim: int, activation: str):
        self.in_dim = in_dim
        self.activation = activation
        self.rows: list[dict[int, float]] = []
        self.biases: list[float] = []

    def add_row(self, coeffs: dict[int, float], bias: float = 0.0) -> int:
        self.rows.append(coeffs)
        self.biases.append(bias)
        return len(self.rows) - 1

    def finish(self) -> ReluLayer:
        W = np.zeros((len(self.rows), self.in_dim))
        for r, coeffs in enumerate(self.rows):
            for c, val in coeffs.items():
                W[r, c] = val
        return ReluLayer(W, np.asarray(self.biases, dtype=np.float64), self.activation)


def relu_min_tree(k: int) -> ReluNetwork:
    """Exact min over k real inputs as a balanced tree of 2-layer min blocks.

    Each stage computes ``min(a, b) = (ReLU(a+b) - ReLU(a-b) - ReLU(-a+b)
    - ReLU(-a-b)) / 2`` pairwise, carrying an odd element through as a
    ReLU(+)/ReLU(-) pair. Depth is 2 * ceil(log2 k).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return ReluNetwork([ReluLayer(np.eye(1), np.zeros(1), "identity")])
    layers: list[ReluLayer] = []
    pending = list(range(k))
    in_dim = k
    while len(pending) > 1:
        expand = _LayerBuilder(in_dim, "relu")
        combine_plan: list[tuple[str, tuple[int, ...]]] = []
        for i in range(0, len(pending) - 1, 2):
            a, b = pending[i], pending[i + 1]
            r1 = expand.add_row({a: 1.0, b: 1.0})
            r2 = expand.add_row({a: 1.0, b: -1.0})
            r3 = expand.add_row({a: -1.0, b: 1.0})
            r4 = expand.add_row({a: -1.0, b: -1.0})
            combine_plan.append(("min", (r1, r2, r3, r4)))
        if len(pending) % 2:
            p = pending[-1]
            rp = expand.add_row({p: 1.0})
            rm = expand.add_row({p: -1.0})
            combine_plan.append(("carry", (rp, rm)))
        layers.append(expand.finish())
        combine = _LayerBuilder(len(expand.rows), "identity")
        new_pending = []
        for kind, units in combine_plan:
            if kind == "min":
                r1, r2, r3, r4 = units
                new_pending.append(combine.add_row({r1: 0.5, r2: -0.5, r3: -0.5, r4: -0.5}))
            else:
                rp, rm = units
                new_pending.append(combine.add_row({rp: 1.0, rm: -1.0}))
        layers.append(combine.finish())
        pending = new_pending
        in_dim = len(pending)
    return ReluNetwork(layers)


def relu_min2() -> ReluNetwork:
    """min{a, b} as the canonical 2-layer ReLU block."""
    return relu_min_tree(2)


def _dominating_groups(S: SimplicialComplex, v: int) -> list[list[int]]:
    """Minimal dominating subsets of the ring coordinates around v.

    For ring simplex i let t_i be the affine function equal to the barycentric
    coordinate of v on that simplex. The hat equals max_i min_{j in D_i} t_j
    clipped at zero, where D_i = {j : t_j >= t_i on simplex i} (checked at the
    simplex's vertices, with a small tolerance for shared-face ties). Supersets
    are redundant under the max, so only minimal distinct sets are kept; a
    convex star collapses to the single min over the whole ring.
    """
    ring = S.ring[v]
    K = len(ring)
    d = S.dim
    # affine data of t_j: coefficient vector and bias
    coeffs = np.empty((K, d))
    biases = np.empty(K)
    for a, simplex_idx in enumerate(ring):
        V = S.edge_matrix(simplex_idx, v)
        if abs(np.linalg.det(V)) <= _DET_TOL:
            raise ValueError(f"singular edge matrix at vertex {v}, simplex {simplex_idx}")
        ones_w = np.linalg.inv(V).sum(axis=0)
        coeffs[a] = -ones_w
        biases[a] = 1.0 + float(ones_w @ S.vertices[v])
    scale = max(1.0, float(np.abs(S.vertices).max()))
    tol = 1e-11 * scale
    groups: list[frozenset[int]] = []
    for i, simplex_idx in enumerate(ring):
        verts = S.vertices[list(S.simplices[simplex_idx])]
        vals = verts @ coeffs.T + biases        # (d+1, K): t_j at simplex i's vertices
        dominated = np.all(vals >= vals[:, i][:, None] - tol, axis=0)
        groups.append(frozenset(np.flatnonzero(dominated).tolist()))
    minimal: list[frozenset[int]] = []
    for g in sorted(set(groups), key=lambda s: (len(s), sorted(s))):
        if not any(m < g for m in minimal):
            minimal.append(g)
    return [sorted(g) for g in minimal]


class _HatPlan:
    """Builds the shared layer stack computing every requested hat function.

    Layer 0 clamps the ring coordinate functions: u_j = ReLU(t_j). Each
    following stage is an expand(ReLU)/combine(identity) pair advancing, for
    every vertex in parallel, the min trees of its dominating groups and then
    a max tree over completed group minima. All intermediate values are
    nonnegative, so min(a,b) = b - ReLU(b-a) and max(a,b) = a + ReLU(b-a)
    cost one extra unit each, and values carry through layers unchanged.
    """

    def __init__(self, S: SimplicialComplex, vertex_ids: Sequence[int]):
        d = S.dim
        self.S = S
        self.vertex_ids = list(vertex_ids)
        for v in self.vertex_ids:
            if not S.ring.get(v):
                raise ValueError(f"vertex {v} has an empty ring")
        self.layers: list[ReluLayer] = []
        clamp = _LayerBuilder(d, "relu")
        # per-vertex state: list of pending min-groups (unit lists) and
        # completed group minima awaiting the max tree
        min_tasks: dict[int, list[list[int]]] = {}
        max_pool: dict[int, list[int]] = {}
        for v in self.vertex_ids:
            ring = S.ring[v]
            units = []
            for simplex_idx in ring:
                V = S.edge_matrix(simplex_idx, v)
                Wi = np.linalg.inv(V)
                ones_w = Wi.sum(axis=0)          # 1^T W_i
                coeffs = {j: -ones_w[j] for j in range(d)}
                bias = 1.0 + float(ones_w @ S.vertices[v])
                units.append(clamp.add_row(coeffs, bias))
            tasks = []
            pool = []
            for group in _dominating_groups(S, v):
                members = [units[a] for a in group]
                if len(members) == 1:
                    pool.append(members[0])
                else:
                    tasks.append(members)
            min_tasks[v] = tasks
            max_pool[v] = pool
        self.layers.append(clamp.finish())
        in_dim = len(clamp.rows)

        def unfinished(v: int) -> bool:
            return bool(min_tasks[v]) or len(max_pool[v]) > 1

        while any(unfinished(v) for v in self.vertex_ids):
            expand = _LayerBuilder(in_dim, "relu")
            plan: dict[int, dict] = {}
            for v in self.vertex_ids:
                steps_min = []
                for units in min_tasks[v]:
                    pairs = []
                    for i in range(0, len(units) - 1, 2):
                        a, b = units[i], units[i + 1]
                        gap = expand.add_row({b: 1.0, a: -1.0})
                        carry = expand.add_row({b: 1.0})
                        pairs.append((carry, gap))
                    odd = expand.add_row({units[-1]: 1.0}) if len(units) % 2 else None
                    steps_min.append((pairs, odd))
                pool = max_pool[v]
                steps_max = []
                for i in range(0, len(pool) - 1, 2):
                    a, b = pool[i], pool[i + 1]
                    gap = expand.add_row({b: 1.0, a: -1.0})
                    carry = expand.add_row({a: 1.0})
                    steps_max.append((carry, gap))
                max_odd = expand.add_row({pool[-1]: 1.0}) if len(pool) % 2 else None
                plan[v] = {"min": steps_min, "max": steps_max, "max_odd": max_odd}
            self.layers.append(expand.finish())
            combine = _LayerBuilder(len(expand.rows), "identity")
            for v in self.vertex_ids:
                new_tasks = []
                new_pool = []
                for pairs, odd in plan[v]["min"]:
                    units = [combine.add_row({carry: 1.0, gap: -1.0}) for carry, gap in pairs]
                    if odd is not None:
                        units.append(combine.add_row({odd: 1.0}))
                    if len(units) == 1:
                        new_pool.append(units[0])
                    else:
                        new_tasks.append(units)
                for carry, gap in plan[v]["max"]:
                    new_pool.append(combine.add_row({carry: 1.0, gap: 1.0}))
                if plan[v]["max_odd"] is not None:
                    new_pool.append(combine.add_row({plan[v]["max_odd"]: 1.0}))
                min_tasks[v] = new_tasks
                max_pool[v] = new_pool
            self.layers.append(combine.finish())
            in_dim = len(combine.rows)
        self.hat_units = {v: max_pool[v][0] for v in self.vertex_ids}
        self.out_dim = in_dim


def hat_function(S: SimplicialComplex, v: int) -> ReluNetwork:
    """Network for the PL bump equal to 1 at v, affine on its ring, 0 outside."""
    plan = _HatPlan(S, [v])
    final = _LayerBuilder(plan.out_dim, "identity")
    final.add_row({plan.hat_units[v]: 1.0})
    return ReluNetwork(plan.layers + [final.finish()])


def compile_pl(S: SimplicialComplex, values: np.ndarray) -> ReluNetwork:
    """Exact ReLU network for the PL interpolant of per-vertex values.

    ``values`` is (n_vertices, q) or (n_vertices,); the network computes
    sum_v values[v] * hat_v(x) and agrees with barycentric interpolation on
    every simplex of S.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != S.n_vertices:
        raise ValueError(
            f"values has {values.shape[0]} rows for {S.n_vertices} vertices")
    vertex_ids = sorted(S.ring)
    if len(vertex_ids) != S.n_vertices:
        raise ValueError("every vertex must belong to at least one simplex")
    plan = _HatPlan(S, vertex_ids)
    final = _LayerBuilder(plan.out_dim, "identity")
    for j in range(values.shape[1]):
        coeffs = {plan.hat_units[v]: values[v, j] for v in vertex_ids if values[v, j] != 0.0}
        final.add_row(coeffs)
    return ReluNetwork(plan.layers + [final.finish()])


def compile_bounds(S: SimplicialComplex, q: int = 1) -> dict:
    """Parameter/depth budgets the compiled network must stay within."""
    n = S.n_vertices
    d = S.dim
    K = S.max_ring_size()
    stages = math.ceil(math.log2(K)) if K > 1 else 0
    return {
        "max_ring": K,
        "param_bound": q * (n * (K * (d + 1) + 4 * (2 * K - 1)) + n),
        # one min-tree stage spans two layers (expand + combine)
        "depth_bound_layers": 2 * (stages + 2),
    }


# -- barycentric evaluation (used by the encoder) ------------------------------------


def barycentric_coords(S: SimplicialComplex, simplex_idx: int, x: np.ndarray) -> np.ndarray:
    """Coordinates beta with x = v0 + V beta (exact for d-dim x)."""
    s = S.simplices[simplex_idx]
    V = S.edge_matrix(simplex_idx, s[0])
    return np.linalg.solve(V, np.atleast_2d(x).T - S.vertices[s[0]][:, None]).T


# -- Delaunay triangulation -----------------------------------------------------------


def _incircle(tri: np.ndarray, p: np.ndarray, tol: float) -> bool:
    """Strict circumcircle containment for a CCW triangle (signed, tolerance)."""
    a, b, c = tri
    ax, ay = a[0] - p[0], a[1] - p[1]
    bx, by = b[0] - p[0], b[1] - p[1]
    cx, cy = c[0] - p[0], c[1] - p[1]
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    det = (ax * (by * c2 - b2 * cy)
           - ay * (bx * c2 - b2 * cx)
           + a2 * (bx * cy - by * cx))
    return det > tol


def _ccw(pts: np.ndarray, tri: tuple[int, int, int]) -> tuple[int, int, int]:
    a, b, c = pts[tri[0]], pts[tri[1]], pts[tri[2]]
    if (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]) < 0:
        return (tri[0], tri[2], tri[1])
    return tri


def delaunay_2d(points: np.ndarray) -> SimplicialComplex:
    """Bowyer-Watson triangulation of a planar point set."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("delaunay_2d expects an n x 2 array")
    n = pts.shape[0]
    if n < 3:
        raise ValueError("need at least 3 points")
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    if d2.min() < 1e-24:
        i, j = np.unravel_index(int(np.argmin(d2)), d2.shape)
        raise ValueError(f"duplicate points {i} and {j} (distance < 1e-12)")
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1.0):
        raise ValueError("points are collinear")

    scale = float(np.ptp(pts, axis=0).max())
    center = pts.mean(axis=0)
    big = 4000.0 * max(scale, 1.0)
    work = np.vstack([pts,
                      center + [-big, -big],
                      center + [big, -big],
                      center + [0.0, big]])
    tol = 1e-9 * max(scale, 1.0) ** 4
    triangles: list[tuple[int, int, int]] = [_ccw(work, (n, n + 1, n + 2))]
    for p_idx in range(n):
        p = work[p_idx]
        bad = [t for t in triangles if _incircle(work[list(t)], p, tol)]
        edge_count: dict[tuple[int, int], int] = {}
        for t in bad:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                key = (min(e), max(e))
                edge_count[key] = edge_count.get(key, 0) + 1
        boundary = [e for e, cnt in edge_count.items() if cnt == 1]
        bad_set = set(bad)
        triangles = [t for t in triangles if t not in bad_set]
        for e in boundary:
            triangles.append(_ccw(work, (e[0], e[1], p_idx)))
    triangles = [t for t in triangles if max(t) < n]
    used = set()
    for t in triangles:
        used.update(t)
    if used != set(range(n)):
        missing = sorted(set(range(n)) - used)
        raise ValueError(f"triangulation dropped points {missing}; input too degenerate")
    return SimplicialComplex(pts, triangles)


def path_complex_1d(coords: np.ndarray) -> SimplicialComplex:
    """1-d complex over scalar coordinates: edges between sort-adjacent points."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 1)
    if coords.shape[0] < 2:
        raise ValueError("need at least 2 points for a path complex")
    order = np.argsort(coords[:, 0], kind="stable")
    gaps = np.diff(coords[order, 0])
    if gaps.min() < 1e-12:
        raise ValueError("duplicate coordinates in path complex")
    simplices = [(int(order[i]), int(order[i + 1])) for i in range(len(order) - 1)]
    return SimplicialComplex(coords, simplices)


# -- local chart construction ----------------------------------------------------------


def log_map_circle(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    theta = np.arctan2(points[:, 1], points[:, 0])
    theta_c = np.arctan2(center[1], center[0])
    diff = np.mod(theta - theta_c + np.pi, 2.0 * np.pi) - np.pi
    return diff[:, None]


def log_map_sphere(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    c = center / np.linalg.norm(center)
    # deterministic tangent basis at c
    seed = np.array([1.0, 0.0, 0.0]) if abs(c[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = seed - (seed @ c) * c
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(c, e1)
    dots = np.clip(points @ c, -1.0, 1.0)
    theta = np.arccos(dots)
    residual = points - dots[:, None] * c
    rn = np.linalg.norm(residual, axis=1)
    safe = rn > 1e-15
    scale = np.where(safe, theta / np.where(safe, rn, 1.0), 0.0)
    tangent = residual * scale[:, None]
    return np.stack([tangent @ e1, tangent @ e2], axis=1)


def log_map_torus(points: np.ndarray, center: np.ndarray,
                  R: float = 2.0, r: float = 1.0) -> np.ndarray:
    def angles(p):
        u = np.arctan2(p[..., 1], p[..., 0])
        rho = np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2)
        v = np.arctan2(p[..., 2], rho - R)
        return u, v

    u, v = angles(points)
    uc, vc = angles(center)
    du = np.mod(u - uc + np.pi, 2.0 * np.pi) - np.pi
    dv = np.mod(v - vc + np.pi, 2.0 * np.pi) - np.pi
    return np.stack([R * du, r * dv], axis=1)


_LOG_MAPS = {"circle": log_map_circle, "sphere": log_map_sphere, "torus": log_map_torus}


class LocalChart:
    """Exact PL chart: projection encoder and compiled simplicial decoder."""

    def __init__(self, center_index: int, indices: np.ndarray, latent: np.ndarray,
                 data_points: np.ndarray, complex_: SimplicialComplex,
                 decoder: ReluNetwork):
        self.center_index = center_index
        self.indices = indices
        self.latent = latent
        self.data_points = data_points
        self.complex = complex_
        self.decoder = decoder
        # Per-simplex projection data: base point, edge matrix, pseudo-inverse.
        self._proj = []
        for s in complex_.simplices:
            base = data_points[s[0]]
            X = (data_points[list(s[1:])] - base).T          # (m, d)
            if np.linalg.matrix_rank(X, tol=1e-10) < X.shape[1]:
                raise ValueError(f"ambient simplex {s} is rank deficient")
            self._proj.append((base, X, np.linalg.pinv(X), s))

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        B = X.shape[0]
        best = np.full(B, np.inf)
        best_lat = np.zeros((B, self.latent.shape[1]))
        chosen = np.full(B, -1)
        for idx, (base, E, pinv, s) in enumerate(self._proj):
            beta = (X - base) @ pinv.T                       # (B, d)
            proj = base + beta @ E.T
            inside = (beta.min(axis=1) >= -1e-9) & (beta.sum(axis=1) <= 1.0 + 1e-9)
            dist = np.linalg.norm(X - proj, axis=1)
            take = inside & (dist < best - 1e-15)
            if np.any(take):
                z0 = self.latent[s[0]]
                Z = (self.latent[list(s[1:])] - z0).T        # (d, d)
                best[take] = dist[take]
                best_lat[take] = z0 + beta[take] @ Z.T
                chosen[take] = idx
        missing = chosen < 0
        if np.any(missing):
            # No simplex contains the projection: fall back to the closest
            # simplex by clamped barycentric coordinates.
            for b in np.flatnonzero(missing):
                dists = []
                lats = []
                for base, E, pinv, s in self._proj:
                    beta = pinv @ (X[b] - base)
                    beta = _clamp_to_simplex(beta)
                    proj = base + E @ beta
                    z0 = self.latent[s[0]]
                    Z = (self.latent[list(s[1:])] - z0).T
                    dists.append(np.linalg.norm(X[b] - proj))
                    lats.append(z0 + Z @ beta)
                j = int(np.argmin(dists))
                best_lat[b] = lats[j]
        return best_lat[0] if single else best_lat

    def decode(self, z: np.ndarray) -> np.ndarray:
        return self.decoder(z)


def _clamp_to_simplex(beta: np.ndarray) -> np.ndarray:
    """Euclidean-ish projection of barycentric coords onto the template simplex."""
    beta = np.maximum(beta, 0.0)
    s = beta.sum()
    if s > 1.0:
        beta = beta / s
    return beta


def build_local_chart(data: PointCloud, center: int, radius: float, epsilon: float,
                      kind: str | None = None, intrinsic_dim: int | None = None) -> LocalChart:
    """Construct an exact PL chart around a center sample.

    Latent coordinates come from the closed-form log map for known synthetic
    manifolds, otherwise from a PCA tangent-plane projection. The decoder is
    the compiled simplicial map with the data points as vertex values; the
    round trip reproduces every selected sample to 1e-9.
    """
    d = intrinsic_dim or data.intrinsic_dim
    if d not in (1, 2):
        raise ValueError("local charts triangulate intrinsic dimension 1 or 2 only")
    pts = data.points
    p = pts[center]
    dist = np.linalg.norm(pts - p, axis=1)
    sel = np.flatnonzero(dist <= radius)
    if sel.size < d + 2:
        raise ValueError(f"only {sel.size} samples within radius; need at least {d + 2}")
    local = pts[sel]
    if kind is not None:
        if kind not in _LOG_MAPS:
            raise ValueError(f"no analytic log map for kind {kind!r}")
        z = _LOG_MAPS[kind](local, p)
    else:
        centered = local - p
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        z = centered @ vt[:d].T
    if d == 1:
        complex_ = path_complex_1d(z)
    else:
        complex_ = delaunay_2d(z)
    decoder = compile_pl(complex_, local)
    chart = LocalChart(center_index=center, indices=sel, latent=z.reshape(len(sel), d),
                       data_points=local, complex_=complex_, decoder=decoder)
    rt = chart.decode(chart.latent)
    err = np.linalg.norm(rt - local, axis=1).max()
    if err > 1e-9:
        raise ValueError(f"chart round trip failed on its own vertices (max err {err:.3e})")
    _ = epsilon  # target accuracy is checked by verify_faithfulness
    return chart


def verify_faithfulness(encoder: Callable[[np.ndarray], np.ndarray],
                        decoder: Callable[[np.ndarray], np.ndarray],
                        probes: PointCloud, epsilon: float) -> tuple[float, bool]:
    """Sup round-trip error over probes and whether it stays within epsilon."""
    X = probes.points
    rt = decoder(encoder(X))
    sup_error = float(np.linalg.norm(X - rt, axis=1).max())
    return sup_error, sup_error <= epsilon


# -- indicator ramp and the sample-size bound --------------------------------------


def chi_indicator(t, epsilon: float, mu: float):
    """PL bump: 1 up to eps^2+mu, linear ramp to 0 at eps^2+2mu, 0 beyond.

    Also expressible with two ReLUs; both forms are evaluated and must agree
    to 1e-12.
    """
    if mu <= 0:
        raise ValueError("mu must be > 0")
    t = np.asarray(t, dtype=np.float64)
    e2 = epsilon * epsilon
    piecewise = np.where(t <= e2 + mu, 1.0,
                         np.where(t >= e2 + 2 * mu, 0.0, 1.0 + (e2 + mu - t) / mu))
    relu_form = (np.maximum(-t + e2 + 2 * mu, 0.0) - np.maximum(-t + e2 + mu, 0.0)) / mu
    if np.max(np.abs(piecewise - relu_form)) > 1e-12:
        raise AssertionError("indicator forms disagree beyond 1e-12")
    return piecewise if piecewise.ndim else float(piecewise)


@dataclass
class SampleBound:
    """Training-set size sufficient for an eps/2-dense draw with confidence 1-nu."""

    d: int
    tau: float
    C: float
    epsilon: float
    nu: float
    beta1: float
    beta2: float
    n_required: int


def sample_bound(d: int, tau: float, C: float, epsilon: float, nu: float) -> SampleBound:
    """Evaluate the covering-number bound n > beta1 (ln beta2 + ln(1/nu))."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if tau <= 0 or C <= 0:
        raise ValueError("tau and C must be positive")
    if not (0 < nu < 1):
        raise ValueError("nu must lie in (0, 1)")
    if not (0 < epsilon < tau / 2):
        raise ValueError(
            f"epsilon must satisfy 0 < epsilon < tau/2 (theorem hypothesis); got {epsilon} vs tau/2 = {tau / 2}")
    beta1 = C * (epsilon / 4.0) ** (-d) * (1.0 - (epsilon / (8.0 * tau)) ** 2) ** (-d / 2.0)
    beta2 = C * (epsilon / 8.0) ** (-d) * (1.0 - (epsilon / (16.0 * tau)) ** 2) ** (-d / 2.0)
    n_required = math.ceil(beta1 * (math.log(beta2) + math.log(1.0 / nu)))
    return SampleBound(d=d, tau=tau, C=C, epsilon=epsilon, nu=nu,
                       beta1=beta1, beta2=beta2, n_required=n_required)

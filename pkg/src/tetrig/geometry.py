"""Shared exact geometry queries: closest points on triangles, inside/outside
tests by ray parity, and area-weighted surface sampling.

Everything here is vectorized numpy over float64 arrays and is deterministic:
nearest-face ties resolve to the lowest face index, and the ray-parity test
retries with a fixed jitter sequence when a ray grazes an edge.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def closest_point_on_triangles(p, a, b, c):
    """Closest point on each triangle (a, b, c) to each query point p.

    All inputs are (N, 3) and are matched row-wise. Returns (points, bary)
    where bary rows are the clamped barycentric weights (u, v, w) of the
    closest point with respect to (a, b, c).
    """
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)

    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)

    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)

    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    n = p.shape[0]
    u = np.empty(n, dtype=np.float64)
    v = np.empty(n, dtype=np.float64)
    w = np.empty(n, dtype=np.float64)
    done = np.zeros(n, dtype=bool)

    def settle(mask, uu, vv, ww):
        m = mask & ~done
        u[m] = uu[m] if isinstance(uu, np.ndarray) else uu
        v[m] = vv[m] if isinstance(vv, np.ndarray) else vv
        w[m] = ww[m] if isinstance(ww, np.ndarray) else ww
        done[m] = True

    # vertex regions
    settle((d1 <= 0.0) & (d2 <= 0.0), 1.0, 0.0, 0.0)
    settle((d3 >= 0.0) & (d4 <= d3), 0.0, 1.0, 0.0)
    settle((d6 >= 0.0) & (d5 <= d6), 0.0, 0.0, 1.0)

    # edge ab
    vc = d1 * d4 - d3 * d2
    denom = d1 - d3
    t = np.divide(d1, denom, out=np.zeros(n), where=denom != 0.0)
    settle((vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0), 1.0 - t, t, np.zeros(n))

    # edge ac
    vb = d5 * d2 - d1 * d6
    denom = d2 - d6
    t = np.divide(d2, denom, out=np.zeros(n), where=denom != 0.0)
    settle((vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0), 1.0 - t, np.zeros(n), t)

    # edge bc
    va = d3 * d6 - d5 * d4
    denom = (d4 - d3) + (d5 - d6)
    t = np.divide(d4 - d3, denom, out=np.zeros(n), where=denom != 0.0)
    settle((va <= 0.0) & (d4 - d3 >= 0.0) & (d5 - d6 >= 0.0), np.zeros(n), 1.0 - t, t)

    # interior
    denom = va + vb + vc
    inv = np.divide(1.0, denom, out=np.zeros(n), where=denom != 0.0)
    vi = vb * inv
    wi = vc * inv
    settle(np.ones(n, dtype=bool), 1.0 - vi - wi, vi, wi)

    bary = np.stack([u, v, w], axis=1)
    points = bary[:, 0:1] * a + bary[:, 1:2] * b + bary[:, 2:3] * c
    return points, bary


class TriangleSet:
    """Exact nearest-triangle queries against a fixed triangle soup.

    Small sets fall back to brute force; larger ones prefilter with a KD-tree
    over face centroids plus a safe search radius, so the result is always the
    true argmin (lowest face index on exact ties).
    """

    BRUTE_FORCE_LIMIT = 64

    def __init__(self, vertices, faces):
        vertices = np.asarray(vertices, dtype=np.float64)
        faces = np.asarray(faces, dtype=np.int64)
        self.vertices = vertices
        self.faces = faces
        self.a = vertices[faces[:, 0]]
        self.b = vertices[faces[:, 1]]
        self.c = vertices[faces[:, 2]]
        self.centroids = (self.a + self.b + self.c) / 3.0
        r = np.maximum(
            np.linalg.norm(self.a - self.centroids, axis=1),
            np.maximum(
                np.linalg.norm(self.b - self.centroids, axis=1),
                np.linalg.norm(self.c - self.centroids, axis=1),
            ),
        )
        self.corner_radius = r
        self.max_corner_radius = float(r.max()) if len(r) else 0.0
        self.num_faces = len(faces)
        self._tree = None
        if self.num_faces > self.BRUTE_FORCE_LIMIT:
            self._tree = cKDTree(self.centroids)

    def nearest(self, points, chunk=8192):
        """Nearest face for each point.

        Returns (face_idx, bary, dist): indices (N,), barycentric weights
        (N, 3), and the exact unsigned distances (N,).
        """
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            f, by, d = self.nearest(points[None])
            return int(f[0]), by[0], float(d[0])
        out_f = np.empty(len(points), dtype=np.int64)
        out_b = np.empty((len(points), 3), dtype=np.float64)
        out_d = np.empty(len(points), dtype=np.float64)
        for lo in range(0, len(points), chunk):
            hi = min(lo + chunk, len(points))
            f, by, d = self._nearest_chunk(points[lo:hi])
            out_f[lo:hi] = f
            out_b[lo:hi] = by
            out_d[lo:hi] = d
        return out_f, out_b, out_d

    def _nearest_chunk(self, points):
        n = len(points)
        if self._tree is None:
            # brute force: (N, F) distances
            pf = np.repeat(points, self.num_faces, axis=0)
            af = np.tile(self.a, (n, 1))
            bf = np.tile(self.b, (n, 1))
            cf = np.tile(self.c, (n, 1))
            cp, bary = closest_point_on_triangles(pf, af, bf, cf)
            d2 = np.einsum("ij,ij->i", pf - cp, pf - cp).reshape(n, self.num_faces)
            fidx = np.argmin(d2, axis=1)
            rows = np.arange(n)
            best = bary.reshape(n, self.num_faces, 3)[rows, fidx]
            return fidx, best, np.sqrt(d2[rows, fidx])

        # stage 1: upper bound from k nearest centroids
        k = min(8, self.num_faces)
        _, knn = self._tree.query(points, k=k)
        knn = knn.reshape(n, k)
        pf = np.repeat(points, k, axis=0)
        fi = knn.reshape(-1)
        cp, _ = closest_point_on_triangles(pf, self.a[fi], self.b[fi], self.c[fi])
        d_ub = np.sqrt(np.einsum("ij,ij->i", pf - cp, pf - cp).reshape(n, k).min(axis=1))

        # stage 2: all faces whose centroid could beat the bound
        radius = d_ub + self.max_corner_radius + 1e-12
        balls = self._tree.query_ball_point(points, radius)
        counts = np.fromiter((len(bl) for bl in balls), dtype=np.int64, count=n)
        pair_face = np.fromiter(
            (f for bl in balls for f in bl), dtype=np.int64, count=int(counts.sum())
        )
        pair_point = np.repeat(np.arange(n), counts)
        # sort by (point, face) so ties resolve to the lowest face index
        order = np.lexsort((pair_face, pair_point))
        pair_face = pair_face[order]
        pair_point = pair_point[order]

        cp, bary = closest_point_on_triangles(
            points[pair_point], self.a[pair_face], self.b[pair_face], self.c[pair_face]
        )
        diff = points[pair_point] - cp
        d2 = np.einsum("ij,ij->i", diff, diff)

        seg_start = np.searchsorted(pair_point, np.arange(n))
        dmin = np.minimum.reduceat(d2, seg_start)
        is_min = d2 == dmin[pair_point]
        pos = np.where(is_min, np.arange(len(d2)), len(d2))
        first = np.minimum.reduceat(pos, seg_start)
        return pair_face[first], bary[first], np.sqrt(dmin)


def ray_triangle_hits(origins, direction, a, b, c, eps=1e-12):
    """Moller-Trumbore ray/triangle test of each origin against every triangle.

    Returns (hits, uncertain): hit counts per origin along `direction`, and a
    flag marking origins whose count is unreliable (grazing hit or ray in a
    triangle's plane).
    """
    origins = np.asarray(origins, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    n = len(origins)
    f = len(a)
    hits = np.zeros(n, dtype=np.int64)
    uncertain = np.zeros(n, dtype=bool)

    e1 = b - a
    e2 = c - a
    pvec = np.cross(np.broadcast_to(d, e2.shape), e2)
    det = np.einsum("ij,ij->i", e1, pvec)  # (F,)
    scale = np.maximum(np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1), eps)
    parallel = np.abs(det) < eps * scale
    inv_det = np.where(parallel, 0.0, 1.0 / np.where(parallel, 1.0, det))

    edge_tol = 1e-9
    # chunk over origins; faces handled densely
    max_cells = 4_000_000
    step = max(1, max_cells // max(f, 1))
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        tvec = origins[lo:hi, None, :] - a[None, :, :]  # (m, F, 3)
        u = np.einsum("mfj,fj->mf", tvec, pvec) * inv_det[None, :]
        qvec = np.cross(tvec, e1[None, :, :])
        v = np.einsum("mfj,j->mf", qvec, d) * inv_det[None, :]
        t = np.einsum("mfj,fj->mf", qvec, e2) * inv_det[None, :]
        inside = (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 0.0)
        inside &= ~parallel[None, :]
        hits[lo:hi] = inside.sum(axis=1)
        grazing = (
            (np.abs(u) < edge_tol)
            | (np.abs(v) < edge_tol)
            | (np.abs(1.0 - u - v) < edge_tol)
            | (np.abs(t) < edge_tol)
        ) & ~parallel[None, :] & (t > -edge_tol) & (u > -edge_tol) & (v > -edge_tol) & (
            u + v < 1.0 + edge_tol
        )
        uncertain[lo:hi] = grazing.any(axis=1)
    return hits, uncertain


def points_inside_mesh(points, vertices, faces, seed=0, max_tries=8):
    """Parity-based inside test for a closed mesh.

    Casts a ray per point (nominally +x); points whose ray grazes an edge are
    re-tested with deterministically jittered directions.
    """
    points = np.asarray(points, dtype=np.float64)
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]

    inside = np.zeros(len(points), dtype=bool)
    pending = np.arange(len(points))
    rng = np.random.default_rng(seed)
    direction = np.array([1.0, 0.0, 0.0])
    for attempt in range(max_tries):
        hits, uncertain = ray_triangle_hits(points[pending], direction, a, b, c)
        ok = ~uncertain
        inside[pending[ok]] = (hits[ok] % 2) == 1
        pending = pending[uncertain]
        if len(pending) == 0:
            return inside
        jitter = rng.normal(size=3) * (1e-5 * (attempt + 1))
        direction = np.array([1.0, 0.0, 0.0]) + jitter
        direction /= np.linalg.norm(direction)
    raise RuntimeError(
        f"inside/outside test failed to stabilize for {len(pending)} points"
    )


def mesh_edge_face_counts(faces):
    """Count how many faces use each undirected edge.

    Returns (edges, counts, oriented) where `oriented` is true when every
    directed edge appears exactly once (consistent winding on a closed mesh).
    """
    faces = np.asarray(faces, dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=0)
    und = np.sort(e, axis=1)
    edges, counts = np.unique(und, axis=0, return_counts=True)
    directed, dcounts = np.unique(e, axis=0, return_counts=True)
    oriented = bool((dcounts == 1).all()) and len(directed) == 2 * len(edges)
    return edges, counts, oriented


def is_closed_mesh(faces):
    """True when every undirected edge is shared by exactly two faces."""
    if len(faces) == 0:
        return False
    _, counts, _ = mesh_edge_face_counts(faces)
    return bool((counts == 2).all())


def sample_points_on_mesh(vertices, faces, n, rng):
    """Uniform-area point samples on a triangle mesh. Deterministic given rng."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("mesh has zero surface area")
    probs = areas / total
    fidx = rng.choice(len(faces), size=n, p=probs)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    u = 1.0 - r1
    v = r1 * (1.0 - r2)
    w = r1 * r2
    return u[:, None] * a[fidx] + v[:, None] * b[fidx] + w[:, None] * c[fidx]

"""Exact computational geometry for dimensions 2 and 3.

Convex hulls (including degenerate, lower-rank hulls with an affine
carrier), exact Tukey depth, depth-verified centerpoints, point-to-polytope
distances, Hausdorff distance between convex polytopes, Mahalanobis
distance, and the derived hulls used by the accuracy analysis (swept and
widened extrusions over noisy dimensions, axis-aligned bounding box).

All operations are pure functions with absolute tolerance 1e-9 by default.
Depth uses closed halfspaces, so ties count toward the depth.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull as _QhullHull

from ._kernels import (
    CP_DEGENERATE,
    CP_EXHAUSTED,
    _centerpoint_into,
    _depth2,
    _depth3,
)
from .errors import InsufficientPoints, SearchExhausted

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class DepthResult:
    """Exact Tukey depth with the minimizing halfspace normal."""

    depth: int
    witness_normal: np.ndarray


@dataclass(frozen=True)
class Polytope:
    """Convex polytope, possibly of lower affine rank than its ambient space.

    `vertices` are the extreme points in ambient coordinates (a
    counterclockwise ring for rank-2 polytopes). Facet inequalities live in
    carrier coordinates: a point p is inside iff p decomposes as
    carrier_origin + carrier_basis.T @ c with negligible residual and
    facet_normals @ c <= facet_offsets. For full-rank polytopes the carrier
    is the identity, so the facets act on ambient coordinates directly.
    """

    dim: int
    rank: int
    vertices: np.ndarray
    carrier_origin: np.ndarray
    carrier_basis: np.ndarray
    facet_normals: np.ndarray
    facet_offsets: np.ndarray
    tris: np.ndarray | None = field(default=None, repr=False)

    def _carrier_coords(self, pts: np.ndarray):
        q = pts - self.carrier_origin
        c = q @ self.carrier_basis.T
        resid = q - c @ self.carrier_basis
        return c, np.sqrt(np.sum(resid * resid, axis=-1))

    def contains(self, p, tol: float = DEFAULT_TOL) -> bool:
        """Membership within absolute tolerance `tol`."""
        return bool(self.contains_many(np.asarray(p, float)[None, :], tol)[0])

    def contains_many(self, pts: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
        """Vectorized membership test for an (N, dim) array of points."""
        pts = np.asarray(pts, float)
        if pts.shape[-1] != self.dim:
            raise ValueError(
                f"dimension mismatch: polytope dim {self.dim}, points {pts.shape[-1]}")
        c, resid = self._carrier_coords(pts)
        ok = resid <= tol
        if self.facet_normals.shape[0]:
            slack = c @ self.facet_normals.T - self.facet_offsets
            ok &= np.all(slack <= tol, axis=-1)
        return ok


def _as_points(points, dim=None) -> np.ndarray:
    pts = np.asarray(points, float)
    if pts.ndim != 2:
        pts = np.atleast_2d(pts)
    if pts.shape[0] == 0:
        raise InsufficientPoints("need at least one point")
    if dim is not None and pts.shape[1] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {pts.shape[1]}")
    if pts.shape[1] not in (2, 3):
        raise ValueError(f"only dimensions 2 and 3 are supported, got {pts.shape[1]}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


def _monotone_chain(pts2: np.ndarray) -> np.ndarray:
    """Indices of the convex hull of 2D points, counterclockwise ring."""
    order = np.lexsort((pts2[:, 1], pts2[:, 0]))
    scale = max(1.0, float(np.max(np.abs(pts2))))
    eps = 1e-12 * scale * scale

    def cross(o, a, b):
        return ((pts2[a, 0] - pts2[o, 0]) * (pts2[b, 1] - pts2[o, 1])
                - (pts2[a, 1] - pts2[o, 1]) * (pts2[b, 0] - pts2[o, 0]))

    lower: list[int] = []
    for i in order:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], i) <= eps:
            lower.pop()
        lower.append(int(i))
    upper: list[int] = []
    for i in order[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], i) <= eps:
            upper.pop()
        upper.append(int(i))
    return np.array(lower[:-1] + upper[:-1], dtype=int)


def _polygon_facets(ring: np.ndarray):
    """Outward edge normals/offsets for a counterclockwise 2D vertex ring."""
    nv = ring.shape[0]
    normals = np.empty((nv, 2))
    offsets = np.empty(nv)
    for i in range(nv):
        a = ring[i]
        b = ring[(i + 1) % nv]
        d = b - a
        nrm = np.array([d[1], -d[0]])
        ln = np.hypot(nrm[0], nrm[1])
        normals[i] = nrm / ln
        offsets[i] = normals[i] @ a
    return normals, offsets


def convex_hull(points, dim: int | None = None) -> Polytope:
    """Convex hull of a point set, handling degenerate (low-rank) inputs.

    The affine rank is detected first; collinear or coplanar sets come back
    as lower-rank polytopes with an orthonormal affine carrier instead of
    tripping the full-dimensional hull code.
    """
    pts = _as_points(points, dim)
    d = pts.shape[1]
    uniq = np.unique(pts, axis=0)
    origin = uniq.mean(axis=0)
    centered = uniq - origin
    if uniq.shape[0] == 1:
        rank = 0
    else:
        sv = np.linalg.svd(centered, compute_uv=False)
        scale = max(sv[0], 1.0)
        rank = int(np.sum(sv > 1e-9 * scale))

    if rank == 0:
        v = uniq[:1]
        return Polytope(dim=d, rank=0, vertices=v, carrier_origin=v[0].copy(),
                        carrier_basis=np.zeros((0, d)),
                        facet_normals=np.zeros((0, 0)), facet_offsets=np.zeros(0))

    if rank == 1:
        _, _, vt = np.linalg.svd(centered)
        u = vt[0]
        t = centered @ u
        lo = int(np.argmin(t))
        hi = int(np.argmax(t))
        a, b = uniq[lo], uniq[hi]
        length = float(np.linalg.norm(b - a))
        u = (b - a) / length
        verts = np.vstack([a, b])
        return Polytope(dim=d, rank=1, vertices=verts, carrier_origin=a.copy(),
                        carrier_basis=u[None, :],
                        facet_normals=np.array([[1.0], [-1.0]]),
                        facet_offsets=np.array([length, 0.0]))

    if rank == 2:
        if d == 2:
            basis = np.eye(2)
            corigin = np.zeros(2)
            flat = uniq
        else:
            _, _, vt = np.linalg.svd(centered)
            basis = vt[:2]
            corigin = origin
            flat = centered @ basis.T
        ring_idx = _monotone_chain(flat)
        ring2 = flat[ring_idx]
        normals, offsets = _polygon_facets(ring2)
        verts = uniq[ring_idx]
        return Polytope(dim=d, rank=2, vertices=verts, carrier_origin=corigin,
                        carrier_basis=basis, facet_normals=normals,
                        facet_offsets=offsets)

    hull = _QhullHull(uniq)
    verts = uniq[hull.vertices]
    normals = hull.equations[:, :3]
    offsets = -hull.equations[:, 3]
    tris = uniq[hull.simplices]
    return Polytope(dim=3, rank=3, vertices=verts, carrier_origin=np.zeros(3),
                    carrier_basis=np.eye(3), facet_normals=normals,
                    facet_offsets=offsets, tris=tris)


def contains(poly: Polytope, p, tol: float = DEFAULT_TOL) -> bool:
    """Module-level alias for Polytope.contains."""
    return poly.contains(p, tol)


def tukey_depth(p, cloud, tol: float = DEFAULT_TOL) -> DepthResult:
    """Exact Tukey depth of p with respect to a point multiset.

    depth = min over closed halfspaces containing p of the number of cloud
    points (counted with multiplicity) inside that halfspace.
    """
    cl = _as_points(cloud)
    pt = np.asarray(p, float).ravel()
    if pt.shape[0] != cl.shape[1]:
        raise ValueError(
            f"dimension mismatch: point {pt.shape[0]}, cloud {cl.shape[1]}")
    cl = np.ascontiguousarray(cl)
    if cl.shape[1] == 2:
        dep, wx, wy = _depth2(pt[0], pt[1], cl, tol)
        return DepthResult(int(dep), np.array([wx, wy]))
    dep, wx, wy, wz = _depth3(pt[0], pt[1], pt[2], cl, tol)
    return DepthResult(int(dep), np.array([wx, wy, wz]))


def centerpoint_target(n: int, dim: int) -> int:
    """Verified depth target: ceil(n/3) in 2D, ceil(n/6) in 3D."""
    return -(-n // 3) if dim == 2 else -(-n // 6)


def centerpoint(cloud, tol: float = DEFAULT_TOL, budget: int = 2000):
    """Point of verified Tukey depth >= the dimension's target.

    Runs the tiered candidate search (median, centroid, Radon points,
    exhaustive line intersections for small 2D clouds, local random search
    with at most `budget` extra depth evaluations). The returned depth is
    re-verified by tukey_depth on the returned point.

    Returns (point, achieved_depth). Raises SearchExhausted if no candidate
    certifies the target, InsufficientPoints if |cloud| < dim+1.
    """
    cl = np.ascontiguousarray(_as_points(cloud))
    n, d = cl.shape
    if n < d + 1:
        raise InsufficientPoints(
            f"centerpoint needs at least {d + 1} points, got {n}")
    out = np.empty(d)
    dep, status = _centerpoint_into(cl, tol, budget, out)
    target = centerpoint_target(n, d)
    if status == CP_EXHAUSTED:
        raise SearchExhausted(
            f"no candidate certified depth {target} (best {dep}, n={n}, d={d})",
            best_depth=int(dep), target=target)
    verified = tukey_depth(out, cl, tol).depth
    if status != CP_DEGENERATE and verified < target:
        raise SearchExhausted(
            f"verification regressed below target {target} (got {verified})",
            best_depth=verified, target=target)
    return out, int(verified)


def diameter(poly: Polytope) -> float:
    """Max pairwise distance over vertices (the polytope's diameter)."""
    v = poly.vertices
    if v.shape[0] == 1:
        return 0.0
    d2 = np.sum((v[:, None, :] - v[None, :, :]) ** 2, axis=-1)
    return float(np.sqrt(d2.max()))


def _seg_dist(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom <= 0.0:
        return float(np.linalg.norm(p - a))
    t = float((p - a) @ ab) / denom
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(p - (a + t * ab)))


def _tri_dist(p: np.ndarray, tri: np.ndarray) -> float:
    """Distance from point to a 3D triangle (closest-point clamp)."""
    a, b, c = tri
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = float(ab @ ap)
    d2 = float(ac @ ap)
    if d1 <= 0.0 and d2 <= 0.0:
        return float(np.linalg.norm(p - a))
    bp = p - b
    d3 = float(ab @ bp)
    d4 = float(ac @ bp)
    if d3 >= 0.0 and d4 <= d3:
        return float(np.linalg.norm(p - b))
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        return float(np.linalg.norm(p - (a + t * ab)))
    cp = p - c
    d5 = float(ab @ cp)
    d6 = float(ac @ cp)
    if d6 >= 0.0 and d5 <= d6:
        return float(np.linalg.norm(p - c))
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = d2 / (d2 - d6)
        return float(np.linalg.norm(p - (a + t * ac)))
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(p - (b + t * (c - b))))
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return float(np.linalg.norm(p - (a + v * ab + w * ac)))


def distance_to(poly: Polytope, p) -> float:
    """Euclidean distance from a point to the polytope (0 if inside)."""
    pt = np.asarray(p, float).ravel()
    if pt.shape[0] != poly.dim:
        raise ValueError("dimension mismatch")
    q = pt - poly.carrier_origin
    c = poly.carrier_basis @ q
    perp = q - c @ poly.carrier_basis
    pd2 = float(perp @ perp)
    if poly.rank == 0:
        return float(np.sqrt(pd2))
    if poly.rank == 1:
        lo = 0.0
        hi = float(poly.facet_offsets[0])
        t = float(c[0])
        dc = max(0.0, lo - t, t - hi)
        return float(np.sqrt(pd2 + dc * dc))
    if poly.rank == 2:
        slack = poly.facet_normals @ c - poly.facet_offsets
        if np.all(slack <= 0.0):
            dc = 0.0
        else:
            ring, _ = poly._carrier_coords(poly.vertices)
            nv = ring.shape[0]
            dc = min(_seg_dist(c, ring[i], ring[(i + 1) % nv]) for i in range(nv))
        return float(np.sqrt(pd2 + dc * dc))
    slack = poly.facet_normals @ pt - poly.facet_offsets
    if np.all(slack <= 0.0):
        return 0.0
    return min(_tri_dist(pt, tri) for tri in poly.tris)


def hausdorff(P: Polytope, Q: Polytope) -> float:
    """Hausdorff distance between convex polytopes.

    Computed as the max over both vertex sets of the distance to the other
    polytope; exact for convex sets because point-to-set distance is convex
    and so attains its maximum at a vertex. For full-rank convex bodies this
    equals the boundary-to-boundary Hausdorff distance.
    """
    if P.dim != Q.dim:
        raise ValueError("dimension mismatch")
    d_pq = max(distance_to(Q, v) for v in P.vertices)
    d_qp = max(distance_to(P, w) for w in Q.vertices)
    return max(d_pq, d_qp)


def mahalanobis_sq(x, mean, cov) -> float:
    """Squared Mahalanobis distance (x-mean)' cov^{-1} (x-mean)."""
    x = np.asarray(x, float).ravel()
    mean = np.asarray(mean, float).ravel()
    cov = np.asarray(cov, float)
    if cov.shape != (x.shape[0], x.shape[0]) or mean.shape != x.shape:
        raise ValueError("dimension mismatch")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance must be positive definite") from exc
    z = np.linalg.solve(L, x - mean)
    return float(z @ z)


def _range_product_vertices(base_pts: np.ndarray, free_dims, noisy_ranges, dim):
    """Ambient vertex candidates: base polytope vertices x per-dim ranges."""
    out = []
    for bp in base_pts:
        for combo in itertools.product(*[noisy_ranges[k] for k in sorted(noisy_ranges)]):
            v = np.empty(dim)
            v[list(free_dims)] = bp
            for k, val in zip(sorted(noisy_ranges), combo):
                v[k] = val
            out.append(v)
    return np.array(out)


def build_swept_hulls(normal_initials, noisy_dims, margins):
    """Swept and widened hulls over the noisy dimensions.

    The initial hull is projected onto the noise-free dimensions and
    extruded along each noisy dimension k over the initial-state range
    [min_k, max_k]; the widened hull extends that range by the margin r_k on
    both sides. `noisy_dims` uses zero-based indices; `margins` is either a
    single positive number applied to every noisy dimension or a mapping
    from noisy dimension to its margin.

    Returns (swept, widened) as Polytopes in the ambient dimension.
    """
    pts = _as_points(normal_initials)
    d = pts.shape[1]
    noisy = sorted(set(int(k) for k in noisy_dims))
    if not noisy:
        raise ValueError("noisy_dims must be non-empty")
    if any(k < 0 or k >= d for k in noisy):
        raise ValueError(f"noisy_dims out of range for dimension {d}")
    if len(noisy) == d:
        raise ValueError("at least one dimension must be noise-free")
    if isinstance(margins, dict):
        marg = {int(k): float(margins[k]) for k in noisy}
    else:
        marg = {k: float(margins) for k in noisy}
    if any(marg[k] < 0 for k in noisy):
        raise ValueError("margins must be nonnegative")

    free = [k for k in range(d) if k not in noisy]
    # Projection hull vertices: for one free dim just the endpoints, else
    # the polygon hull of the projection.
    if len(free) == 1:
        bvals = pts[:, free[0]]
        base_pts = np.array([[bvals.min()], [bvals.max()]])
    else:
        proj = pts[:, free]
        hull2 = convex_hull(proj)
        base_pts = hull2.vertices

    ranges_b = {k: (float(pts[:, k].min()), float(pts[:, k].max())) for k in noisy}
    ranges_c = {k: (ranges_b[k][0] - marg[k], ranges_b[k][1] + marg[k])
                for k in noisy}
    vb = _range_product_vertices(base_pts, free, ranges_b, d)
    vc = _range_product_vertices(base_pts, free, ranges_c, d)
    return convex_hull(vb), convex_hull(vc)


def bounding_box(normal_initials) -> Polytope:
    """Axis-aligned bounding box of the initial states, as a Polytope."""
    pts = _as_points(normal_initials)
    d = pts.shape[1]
    los = pts.min(axis=0)
    his = pts.max(axis=0)
    corners = np.array([[los[k] if bit == 0 else his[k] for k, bit in enumerate(bits)]
                        for bits in itertools.product([0, 1], repeat=d)])
    return convex_hull(corners)

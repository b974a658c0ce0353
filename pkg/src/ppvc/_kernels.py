"""JIT-compiled numerical kernels: Tukey depth, centerpoint search, run loop.

Everything here is internal. Public entry points live in `geometry` and
`engine`, which wrap these kernels with validation and result types. The
kernels are pure functions of their arguments; the only randomness is an
inline splitmix64 stream seeded with a fixed constant, so a call's output
depends on nothing but its inputs.
"""

import math

import numpy as np
from numba import njit

# Status codes shared with the wrappers.
CP_OK = 0
CP_EXHAUSTED = 1
CP_DEGENERATE = 2

_SM64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM64_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_MIX2 = np.uint64(0x94D049BB133111EB)
# Fixed seed for the candidate search; keeps centerpoint a pure function.
_SEARCH_SEED = np.uint64(0x51A3B7C9D2E4F681)


@njit(cache=True)
def _sm64_next(state):
    state = state + _SM64_GAMMA
    z = state
    z = (z ^ (z >> np.uint64(30))) * _SM64_MIX1
    z = (z ^ (z >> np.uint64(27))) * _SM64_MIX2
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True)
def _sm64_uniform(state):
    state, z = _sm64_next(state)
    # 53-bit mantissa in (0, 1)
    return state, (float(z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _sm64_normal(state):
    state, u1 = _sm64_uniform(state)
    state, u2 = _sm64_uniform(state)
    r = math.sqrt(-2.0 * math.log(u1))
    return state, r * math.cos(2.0 * math.pi * u2)


@njit(cache=True)
def _depth2(px, py, cloud, tol):
    """Exact Tukey depth of (px,py) w.r.t. a 2D cloud, closed halfspaces.

    Enumerates the critical normals (perpendiculars to p->q) plus the
    midpoints of consecutive critical angles; the count is piecewise
    constant between criticals, so the minimum over this set is exact.
    Returns (depth, wx, wy) with (wx,wy) the minimizing unit normal.
    """
    n = cloud.shape[0]
    angs = np.empty(2 * n)
    m = 0
    for k in range(n):
        dx = cloud[k, 0] - px
        dy = cloud[k, 1] - py
        if dx * dx + dy * dy <= tol * tol:
            continue
        a = math.atan2(dy, dx)
        # Normalize into [0, 2pi) so sorted order is circular order.
        aa = a + 0.5 * math.pi
        if aa < 0.0:
            aa += 2.0 * math.pi
        angs[m] = aa
        m += 1
        aa = a - 0.5 * math.pi
        if aa < 0.0:
            aa += 2.0 * math.pi
        angs[m] = aa
        m += 1
    if m == 0:
        return n, 1.0, 0.0
    srt = np.sort(angs[:m])
    best = n + 1
    bw = 0.0
    for j in range(2 * m):
        if j < m:
            phi = srt[j]
        else:
            jj = j - m
            if jj + 1 < m:
                phi = 0.5 * (srt[jj] + srt[jj + 1])
            else:
                phi = 0.5 * (srt[m - 1] + srt[0] + 2.0 * math.pi)
        nx = math.cos(phi)
        ny = math.sin(phi)
        c = 0
        for k in range(n):
            if nx * (cloud[k, 0] - px) + ny * (cloud[k, 1] - py) >= -tol:
                c += 1
        if c < best:
            best = c
            bw = phi
    return best, math.cos(bw), math.sin(bw)


@njit(cache=True)
def _count3(px, py, pz, cloud, nx, ny, nz, tol):
    c = 0
    for k in range(cloud.shape[0]):
        v = (nx * (cloud[k, 0] - px) + ny * (cloud[k, 1] - py)
             + nz * (cloud[k, 2] - pz))
        if v >= -tol:
            c += 1
    return c


@njit(cache=True)
def _depth3(px, py, pz, cloud, tol):
    """Exact Tukey depth in 3D via the direction-sphere arrangement.

    The count of cloud points in the closed halfspace with normal v is
    piecewise constant on the cells of the arrangement of great circles
    {v : v.(q-p) = 0}. Every cell (given two distinct circles) has an
    arrangement vertex on its boundary, and closed counting at a vertex is
    never below the counts of its incident cells, so sampling the angular
    sectors around every vertex (midpoints between consecutive circle
    tangents) visits a representative of every cell. Degenerate clouds
    whose directions are all parallel reduce to a 1D sign count.
    Returns (depth, wx, wy, wz).
    """
    n = cloud.shape[0]
    U = np.empty((n, 3))
    m = 0
    for k in range(n):
        ux = cloud[k, 0] - px
        uy = cloud[k, 1] - py
        uz = cloud[k, 2] - pz
        r = math.sqrt(ux * ux + uy * uy + uz * uz)
        if r <= tol:
            continue
        U[m, 0] = ux / r
        U[m, 1] = uy / r
        U[m, 2] = uz / r
        m += 1
    if m == 0:
        return n, 1.0, 0.0, 0.0

    # Degenerate family: all directions parallel to U[0].
    all_par = True
    for j in range(1, m):
        cx = U[0, 1] * U[j, 2] - U[0, 2] * U[j, 1]
        cy = U[0, 2] * U[j, 0] - U[0, 0] * U[j, 2]
        cz = U[0, 0] * U[j, 1] - U[0, 1] * U[j, 0]
        if cx * cx + cy * cy + cz * cz > 1e-18:
            all_par = False
            break
    if all_par:
        c1 = _count3(px, py, pz, cloud, U[0, 0], U[0, 1], U[0, 2], tol)
        c2 = _count3(px, py, pz, cloud, -U[0, 0], -U[0, 1], -U[0, 2], tol)
        if c1 <= c2:
            return c1, U[0, 0], U[0, 1], U[0, 2]
        return c2, -U[0, 0], -U[0, 1], -U[0, 2]

    best = n + 1
    bwx = 1.0
    bwy = 0.0
    bwz = 0.0
    tang = np.empty(2 * m)
    for a in range(m - 1):
        for b in range(a + 1, m):
            vx = U[a, 1] * U[b, 2] - U[a, 2] * U[b, 1]
            vy = U[a, 2] * U[b, 0] - U[a, 0] * U[b, 2]
            vz = U[a, 0] * U[b, 1] - U[a, 1] * U[b, 0]
            s = math.sqrt(vx * vx + vy * vy + vz * vz)
            if s <= 1e-12:
                continue
            vx /= s
            vy /= s
            vz /= s
            for sign in range(2):
                if sign == 1:
                    vx = -vx
                    vy = -vy
                    vz = -vz
                # Tangent-plane basis at v.
                if abs(vx) <= abs(vy) and abs(vx) <= abs(vz):
                    ex, ey, ez = 1.0, 0.0, 0.0
                elif abs(vy) <= abs(vz):
                    ex, ey, ez = 0.0, 1.0, 0.0
                else:
                    ex, ey, ez = 0.0, 0.0, 1.0
                e1x = vy * ez - vz * ey
                e1y = vz * ex - vx * ez
                e1z = vx * ey - vy * ex
                e1n = math.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
                e1x /= e1n
                e1y /= e1n
                e1z /= e1n
                e2x = vy * e1z - vz * e1y
                e2y = vz * e1x - vx * e1z
                e2z = vx * e1y - vy * e1x
                # Circles through v and the safe perturbation radius.
                nt = 0
                margin = 1.0
                for j in range(m):
                    dotv = vx * U[j, 0] + vy * U[j, 1] + vz * U[j, 2]
                    if abs(dotv) <= 1e-10:
                        tx = vy * U[j, 2] - vz * U[j, 1]
                        ty = vz * U[j, 0] - vx * U[j, 2]
                        tz = vx * U[j, 1] - vy * U[j, 0]
                        ang = math.atan2(
                            tx * e2x + ty * e2y + tz * e2z,
                            tx * e1x + ty * e1y + tz * e1z)
                        tang[nt] = ang
                        nt += 1
                        if ang >= 0.0:
                            tang[nt] = ang - math.pi
                        else:
                            tang[nt] = ang + math.pi
                        nt += 1
                    elif abs(dotv) < margin:
                        margin = abs(dotv)
                eps = 0.5 * margin
                if eps > 1e-4:
                    eps = 1e-4
                tsrt = np.sort(tang[:nt])
                for j in range(nt):
                    if j + 1 < nt:
                        mid = 0.5 * (tsrt[j] + tsrt[j + 1])
                    else:
                        mid = 0.5 * (tsrt[nt - 1] + tsrt[0] + 2.0 * math.pi)
                    wx = vx + eps * (math.cos(mid) * e1x + math.sin(mid) * e2x)
                    wy = vy + eps * (math.cos(mid) * e1y + math.sin(mid) * e2y)
                    wz = vz + eps * (math.cos(mid) * e1z + math.sin(mid) * e2z)
                    wn = math.sqrt(wx * wx + wy * wy + wz * wz)
                    wx /= wn
                    wy /= wn
                    wz /= wn
                    c = _count3(px, py, pz, cloud, wx, wy, wz, tol)
                    if c < best:
                        best = c
                        bwx = wx
                        bwy = wy
                        bwz = wz
    return best, bwx, bwy, bwz


@njit(cache=True)
def _depth_eval(cloud, tol, cx, cy, cz):
    if cloud.shape[1] == 2:
        dep, wx, wy = _depth2(cx, cy, cloud, tol)
    else:
        dep, wx, wy, wz = _depth3(cx, cy, cz, cloud, tol)
    return dep


@njit(cache=True)
def _radon_point(pts, out):
    """Radon point of d+2 points in R^d (affine-dependence sign split)."""
    m = pts.shape[0]
    d = pts.shape[1]
    A = np.empty((d + 1, m))
    for j in range(m):
        for k in range(d):
            A[k, j] = pts[j, k]
        A[d, j] = 1.0
    u, s, vt = np.linalg.svd(A)
    alpha = vt[m - 1]
    wsum = 0.0
    for k in range(d):
        out[k] = 0.0
    for j in range(m):
        if alpha[j] > 0.0:
            wsum += alpha[j]
            for k in range(d):
                out[k] += alpha[j] * pts[j, k]
    if wsum <= 1e-300:
        for k in range(d):
            out[k] = 0.0
            for j in range(m):
                out[k] += pts[j, k]
            out[k] /= m
        return
    for k in range(d):
        out[k] /= wsum


@njit(cache=True)
def _centerpoint_into(cloud, tol, budget, out):
    """Depth-verified centerpoint search over candidate tiers.

    Tiers: coordinate median, centroid, Radon points of random (d+2)-subsets,
    exhaustive pairwise-line intersections (2D, n <= 15), then a local random
    search of at most `budget` depth evaluations around the deepest candidate.
    Returns (achieved_depth, status). status CP_DEGENERATE means the cloud had
    fewer than d+1 distinct points and `out` is the coordinate-wise median.
    """
    n = cloud.shape[0]
    d = cloud.shape[1]
    if d == 2:
        target = (n + 2) // 3
    else:
        target = (n + 5) // 6

    # Distinct-point count decides degeneracy.
    distinct = 0
    for k in range(n):
        fresh = True
        for j in range(k):
            dd = 0.0
            for c in range(d):
                dd += (cloud[k, c] - cloud[j, c]) ** 2
            if dd <= tol * tol:
                fresh = False
                break
        if fresh:
            distinct += 1

    # Coordinate-wise median of the full multiset.
    col = np.empty(n)
    med = np.empty(3)
    med[2] = 0.0
    for c in range(d):
        for k in range(n):
            col[k] = cloud[k, c]
        cs = np.sort(col)
        if n % 2 == 1:
            med[c] = cs[n // 2]
        else:
            med[c] = 0.5 * (cs[n // 2 - 1] + cs[n // 2])

    if distinct < d + 1:
        for c in range(d):
            out[c] = med[c]
        dep = _depth_eval(cloud, tol, med[0], med[1], med[2])
        return dep, CP_DEGENERATE

    best_depth = _depth_eval(cloud, tol, med[0], med[1], med[2])
    bx, by, bz = med[0], med[1], med[2]
    if best_depth >= target:
        for c in range(d):
            out[c] = med[c]
        return best_depth, CP_OK

    cx, cy, cz = 0.0, 0.0, 0.0
    for k in range(n):
        cx += cloud[k, 0]
        cy += cloud[k, 1]
        if d == 3:
            cz += cloud[k, 2]
    cx /= n
    cy /= n
    cz /= n
    dep = _depth_eval(cloud, tol, cx, cy, cz)
    if dep > best_depth:
        best_depth = dep
        bx, by, bz = cx, cy, cz
    if dep >= target:
        out[0] = cx
        out[1] = cy
        if d == 3:
            out[2] = cz
        return dep, CP_OK

    # Radon points of random (d+2)-subsets.
    state = _SEARCH_SEED
    n_radon = 24 if d == 2 else 48
    sub = np.empty((d + 2, d))
    idx = np.empty(d + 2, dtype=np.int64)
    rp = np.empty(d)
    for it in range(n_radon):
        nn = 0
        while nn < d + 2:
            state, z = _sm64_next(state)
            cand = np.int64(z % np.uint64(n))
            ok = True
            for j in range(nn):
                if idx[j] == cand:
                    ok = False
                    break
            if ok:
                idx[nn] = cand
                nn += 1
        for j in range(d + 2):
            for c in range(d):
                sub[j, c] = cloud[idx[j], c]
        _radon_point(sub, rp)
        rz = rp[2] if d == 3 else 0.0
        dep = _depth_eval(cloud, tol, rp[0], rp[1], rz)
        if dep > best_depth:
            best_depth = dep
            bx, by, bz = rp[0], rp[1], rz
        if dep >= target:
            for c in range(d):
                out[c] = rp[c]
            return dep, CP_OK

    # Exhaustive tier for small 2D clouds: cloud points and all
    # intersections of lines through distinct point pairs. The maximal-depth
    # region's vertices lie in this set, so the tier cannot miss a target
    # point when one exists.
    if d == 2 and n <= 15:
        for k in range(n):
            dep = _depth_eval(cloud, tol, cloud[k, 0], cloud[k, 1], 0.0)
            if dep > best_depth:
                best_depth = dep
                bx, by = cloud[k, 0], cloud[k, 1]
            if dep >= target:
                out[0] = cloud[k, 0]
                out[1] = cloud[k, 1]
                return dep, CP_OK
        nl = (n * (n - 1)) // 2
        lines = np.empty((nl, 4))
        nlv = 0
        for a in range(n - 1):
            for b in range(a + 1, n):
                dx = cloud[b, 0] - cloud[a, 0]
                dy = cloud[b, 1] - cloud[a, 1]
                ln = math.sqrt(dx * dx + dy * dy)
                if ln <= tol:
                    continue
                # Unit directions keep the parallelism test scale-free
                # (tightly clustered clouds otherwise skip every pair).
                lines[nlv, 0] = cloud[a, 0]
                lines[nlv, 1] = cloud[a, 1]
                lines[nlv, 2] = dx / ln
                lines[nlv, 3] = dy / ln
                nlv += 1
        for a in range(nlv - 1):
            for b in range(a + 1, nlv):
                den = lines[a, 2] * lines[b, 3] - lines[a, 3] * lines[b, 2]
                if abs(den) <= 1e-12:
                    continue
                rx = lines[b, 0] - lines[a, 0]
                ry = lines[b, 1] - lines[a, 1]
                tpar = (rx * lines[b, 3] - ry * lines[b, 2]) / den
                ix = lines[a, 0] + tpar * lines[a, 2]
                iy = lines[a, 1] + tpar * lines[a, 3]
                dep = _depth_eval(cloud, tol, ix, iy, 0.0)
                if dep > best_depth:
                    best_depth = dep
                    bx, by = ix, iy
                if dep >= target:
                    out[0] = ix
                    out[1] = iy
                    return dep, CP_OK

    # Local random search around the deepest candidate so far.
    lo = np.empty(3)
    hi = np.empty(3)
    for c in range(d):
        lo[c] = cloud[0, c]
        hi[c] = cloud[0, c]
        for k in range(1, n):
            if cloud[k, c] < lo[c]:
                lo[c] = cloud[k, c]
            if cloud[k, c] > hi[c]:
                hi[c] = cloud[k, c]
    diam = 0.0
    for c in range(d):
        diam += (hi[c] - lo[c]) ** 2
    diam = math.sqrt(diam)
    scale = 0.25 * diam if diam > 0.0 else 1.0
    # Decay the step scale across ~12 decades over the budget so clouds
    # whose deep region is tiny (late-iteration clusters) are still found.
    shrink = math.exp(math.log(1e-13) / budget) if budget > 0 else 1.0
    for it in range(budget):
        state, g0 = _sm64_normal(state)
        state, g1 = _sm64_normal(state)
        px = bx + scale * g0
        py = by + scale * g1
        pz = 0.0
        if d == 3:
            state, g2 = _sm64_normal(state)
            pz = bz + scale * g2
        dep = _depth_eval(cloud, tol, px, py, pz)
        if dep > best_depth:
            best_depth = dep
            bx, by, bz = px, py, pz
            if dep >= target:
                out[0] = px
                out[1] = py
                if d == 3:
                    out[2] = pz
                return dep, CP_OK
        scale *= shrink
    out[0] = bx
    out[1] = by
    if d == 3:
        out[2] = bz
    return best_depth, CP_EXHAUSTED


@njit(cache=True)
def _run_core(x, nbrs, cnts, noise, byz, gammas, tol, budget,
              traj, ys, keep_traj, keep_y):
    """Full protocol loop. Mutates x in place; returns status and counters.

    nbrs[t, i, a] encodes the a-th in-neighbor of normal row i at iteration
    t: values < nbar are normal row indices, nbar + f is faulty index f.
    Returns (status, t, i, n_degenerate); status 0 ok, 1 search exhausted.
    """
    T = noise.shape[0]
    nbar = x.shape[0]
    d = x.shape[1]
    maxin = nbrs.shape[2]
    cloud = np.empty((maxin, d))
    y = np.empty((nbar, d))
    xn = np.empty((nbar, d))
    s = np.empty(d)
    n_degenerate = 0
    if keep_traj:
        for i in range(nbar):
            for k in range(d):
                traj[0, i, k] = x[i, k]
    for t in range(T):
        for i in range(nbar):
            for k in range(d):
                y[i, k] = x[i, k] + noise[t, i, k]
        if keep_y:
            for i in range(nbar):
                for k in range(d):
                    ys[t, i, k] = y[i, k]
        for i in range(nbar):
            c = cnts[t, i]
            for a in range(c):
                j = nbrs[t, i, a]
                if j < nbar:
                    for k in range(d):
                        cloud[a, k] = y[j, k]
                else:
                    f = j - nbar
                    for k in range(d):
                        cloud[a, k] = byz[t, f, i, k]
            dep, status = _centerpoint_into(cloud[:c], tol, budget, s)
            if status == CP_EXHAUSTED:
                return 1, t, i, n_degenerate
            if status == CP_DEGENERATE:
                n_degenerate += 1
            g = gammas[t, i]
            for k in range(d):
                xn[i, k] = g * s[k] + (1.0 - g) * x[i, k]
        for i in range(nbar):
            for k in range(d):
                x[i, k] = xn[i, k]
        if keep_traj:
            for i in range(nbar):
                for k in range(d):
                    traj[t + 1, i, k] = x[i, k]
    return 0, -1, -1, n_degenerate

"""Median-split BVH over triangles with numba traversal kernels.

Nearest-hit queries return exactly what brute-force all-triangle testing
returns (same t, same triangle, same barycentrics); the occlusion kernel just
early-exits. Both kernels are serial per ray, so results never depend on
scheduling.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .geometry import TriMesh

LEAF_SIZE = 4


class EmptyMeshError(ValueError):
    pass


@njit(cache=True)
def _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, tmin, tbest):
    px = dy * e2[2] - dz * e2[1]
    py = dz * e2[0] - dx * e2[2]
    pz = dx * e2[1] - dy * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if abs(det) < 1e-12:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    tx = ox - v0[0]
    ty = oy - v0[1]
    tz = oz - v0[2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return -1.0, 0.0, 0.0
    qx = ty * e1[2] - tz * e1[1]
    qy = tz * e1[0] - tx * e1[2]
    qz = tx * e1[1] - ty * e1[0]
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return -1.0, 0.0, 0.0
    t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    if t <= tmin or t >= tbest:
        return -1.0, 0.0, 0.0
    return t, u, v


@njit(cache=True)
def _aabb_hit(ox, oy, oz, ix, iy, iz, bmin, bmax, tbest):
    t0 = (bmin[0] - ox) * ix
    t1 = (bmax[0] - ox) * ix
    tlo = min(t0, t1)
    thi = max(t0, t1)
    t0 = (bmin[1] - oy) * iy
    t1 = (bmax[1] - oy) * iy
    tlo = max(tlo, min(t0, t1))
    thi = min(thi, max(t0, t1))
    t0 = (bmin[2] - oz) * iz
    t1 = (bmax[2] - oz) * iz
    tlo = max(tlo, min(t0, t1))
    thi = min(thi, max(t0, t1))
    return tlo <= thi and tlo < tbest and thi > 0.0


@njit(cache=True)
def _intersect_kernel(orig, dirs, bmin, bmax, left, right, start, count, order,
                      v0, e1, e2, tmin, out_t, out_tri, out_u, out_v):
    stack = np.empty(128, dtype=np.int64)
    for r in range(orig.shape[0]):
        ox, oy, oz = orig[r, 0], orig[r, 1], orig[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix = 1.0 / dx if abs(dx) > 1e-12 else 1e300
        iy = 1.0 / dy if abs(dy) > 1e-12 else 1e300
        iz = 1.0 / dz if abs(dz) > 1e-12 else 1e300
        tbest = np.inf
        best = -1
        bu = 0.0
        bv = 0.0
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _aabb_hit(ox, oy, oz, ix, iy, iz, bmin[node], bmax[node], tbest):
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    tri = order[k]
                    t, u, v = _tri_hit(ox, oy, oz, dx, dy, dz,
                                       v0[tri], e1[tri], e2[tri], tmin, tbest)
                    if t > 0.0:
                        tbest = t
                        best = tri
                        bu = u
                        bv = v
            else:
                stack[sp] = left[node]
                sp += 1
                stack[sp] = right[node]
                sp += 1
        out_t[r] = tbest
        out_tri[r] = best
        out_u[r] = bu
        out_v[r] = bv


@njit(cache=True)
def _occluded_kernel(orig, dirs, bmin, bmax, left, right, start, count, order,
                     v0, e1, e2, tmin, tmax, out):
    stack = np.empty(128, dtype=np.int64)
    for r in range(orig.shape[0]):
        ox, oy, oz = orig[r, 0], orig[r, 1], orig[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix = 1.0 / dx if abs(dx) > 1e-12 else 1e300
        iy = 1.0 / dy if abs(dy) > 1e-12 else 1e300
        iz = 1.0 / dz if abs(dz) > 1e-12 else 1e300
        hit = False
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0 and not hit:
            sp -= 1
            node = stack[sp]
            if not _aabb_hit(ox, oy, oz, ix, iy, iz, bmin[node], bmax[node], tmax[r]):
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    tri = order[k]
                    t, u, v = _tri_hit(ox, oy, oz, dx, dy, dz,
                                       v0[tri], e1[tri], e2[tri], tmin, tmax[r])
                    if t > 0.0:
                        hit = True
                        break
            else:
                stack[sp] = left[node]
                sp += 1
                stack[sp] = right[node]
                sp += 1
        out[r] = hit


class Bvh:
    """Acceleration structure over a TriMesh."""

    def __init__(self, mesh: TriMesh):
        if mesh.n_faces == 0 or not np.all(np.isfinite(mesh.vertices)):
            raise EmptyMeshError("BVH needs a non-empty mesh with finite vertices")
        self.mesh = mesh
        v = mesh.vertices
        f = mesh.faces
        self.v0 = np.ascontiguousarray(v[f[:, 0]])
        self.e1 = np.ascontiguousarray(v[f[:, 1]] - v[f[:, 0]])
        self.e2 = np.ascontiguousarray(v[f[:, 2]] - v[f[:, 0]])
        tri_min = np.minimum(np.minimum(v[f[:, 0]], v[f[:, 1]]), v[f[:, 2]])
        tri_max = np.maximum(np.maximum(v[f[:, 0]], v[f[:, 1]]), v[f[:, 2]])
        centroids = (tri_min + tri_max) * 0.5

        order = np.arange(mesh.n_faces, dtype=np.int64)
        bmin, bmax, left, right, start, count = [], [], [], [], [], []

        def new_node():
            bmin.append(np.zeros(3))
            bmax.append(np.zeros(3))
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
            return len(bmin) - 1

        stack = [(new_node(), 0, mesh.n_faces)]
        while stack:
            node, lo, hi = stack.pop()
            idx = order[lo:hi]
            bmin[node] = tri_min[idx].min(axis=0)
            bmax[node] = tri_max[idx].max(axis=0)
            if hi - lo <= LEAF_SIZE:
                start[node] = lo
                count[node] = hi - lo
                continue
            cen = centroids[idx]
            axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
            key = np.argsort(cen[:, axis], kind="stable")
            order[lo:hi] = idx[key]
            mid = (lo + hi) // 2
            l, r = new_node(), new_node()
            left[node] = l
            right[node] = r
            stack.append((l, lo, mid))
            stack.append((r, mid, hi))

        self.order = order
        self.bmin = np.asarray(bmin)
        self.bmax = np.asarray(bmax)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.start = np.asarray(start, dtype=np.int64)
        self.count = np.asarray(count, dtype=np.int64)

    def intersect(self, origins, dirs, t_min=1e-5):
        """Nearest hits: (t, tri_index, u, v); t = inf and tri = -1 on miss."""
        origins = np.ascontiguousarray(origins, dtype=np.float64)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64)
        n = origins.shape[0]
        out_t = np.empty(n)
        out_tri = np.empty(n, dtype=np.int64)
        out_u = np.empty(n)
        out_v = np.empty(n)
        _intersect_kernel(origins, dirs, self.bmin, self.bmax, self.left, self.right,
                          self.start, self.count, self.order, self.v0, self.e1, self.e2,
                          t_min, out_t, out_tri, out_u, out_v)
        return out_t, out_tri, out_u, out_v

    def occluded(self, origins, dirs, t_min=1e-4, t_max=None):
        origins = np.ascontiguousarray(origins, dtype=np.float64)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64)
        n = origins.shape[0]
        if t_max is None:
            t_max = np.full(n, np.inf)
        out = np.empty(n, dtype=np.bool_)
        _occluded_kernel(origins, dirs, self.bmin, self.bmax, self.left, self.right,
                         self.start, self.count, self.order, self.v0, self.e1, self.e2,
                         t_min, np.ascontiguousarray(t_max, dtype=np.float64), out)
        return out

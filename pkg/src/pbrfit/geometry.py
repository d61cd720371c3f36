"""Triangle meshes: container, OBJ export/import, analytic test shapes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class TriMesh:
    vertices: np.ndarray        # (V, 3)
    faces: np.ndarray           # (F, 3) int
    vertex_normals: np.ndarray  # (V, 3) unit

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        self.vertex_normals = np.ascontiguousarray(self.vertex_normals, dtype=np.float64)

    @property
    def n_faces(self):
        return self.faces.shape[0]


def export_obj(path, mesh: TriMesh):
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}")
    for n in mesh.vertex_normals:
        lines.append(f"vn {n[0]:.8f} {n[1]:.8f} {n[2]:.8f}")
    for f in mesh.faces + 1:
        lines.append(f"f {f[0]}//{f[0]} {f[1]}//{f[1]} {f[2]}//{f[2]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def import_obj(path):
    verts, normals, faces = [], [], []
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                verts.append([float(x) for x in tok[1:4]])
            elif tok[0] == "vn":
                normals.append([float(x) for x in tok[1:4]])
            elif tok[0] == "f":
                faces.append([int(t.split("/")[0]) - 1 for t in tok[1:4]])
    verts = np.asarray(verts)
    if not normals:
        normals = _area_weighted_normals(verts, np.asarray(faces, dtype=np.int64))
    return TriMesh(verts, np.asarray(faces, dtype=np.int64), np.asarray(normals))


def _area_weighted_normals(verts, faces):
    n = np.zeros_like(verts)
    fn = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]],
                  verts[faces[:, 2]] - verts[faces[:, 0]])
    for k in range(3):
        np.add.at(n, faces[:, k], fn)
    return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)


def icosphere(subdivisions=3, radius=1.0) -> TriMesh:
    """Subdivided icosahedron; exact unit normals (vertex directions)."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = np.asarray(verts[i]) + np.asarray(verts[j])
                m /= np.linalg.norm(m)
                verts.append(tuple(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts)
    return TriMesh(v * radius, np.asarray(faces, dtype=np.int64), v.copy())


def plane(half=10.0, z=0.0) -> TriMesh:
    """Two-triangle square plane at height z with +z normals."""
    v = np.array([[-half, -half, z], [half, -half, z],
                  [half, half, z], [-half, half, z]])
    n = np.tile([0.0, 0.0, 1.0], (4, 1))
    return TriMesh(v, np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64), n)


def hausdorff(points_a, points_b):
    """Symmetric Hausdorff distance between two point sets."""
    from scipy.spatial import cKDTree

    da = cKDTree(points_b).query(points_a)[0].max()
    db = cKDTree(points_a).query(points_b)[0].max()
    return max(da, db)

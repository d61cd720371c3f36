"""Triplane feature field with MLP heads and isosurface extraction.

A 3D point in [-1,1]^3 is bilinearly looked up on the xy / yz / zx feature
planes; the concatenated 3C vector feeds five small MLP heads producing
occupancy, albedo, roughness, metallic, and a tangent-space bump normal.
Head activations pin the output ranges regardless of the raw features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .brdf import MaterialPoint, ROUGHNESS_MIN
from .geometry import TriMesh
from .vecmath import RGB, V3

PLANE_NAMES = ("xy", "yz", "zx")
HEAD_SPECS = (("sigma", 1), ("albedo", 3), ("rough", 1), ("metal", 1), ("bump", 3))
DEFAULT_CHANNELS = 16
DEFAULT_RES = 64
DEFAULT_HIDDEN = 64


class EmptyMeshError(RuntimeError):
    """The occupancy grid never crosses the isolevel."""


@dataclass
class Triplane:
    """Three (C, H, W) feature planes over the domain box [-1,1]^3."""

    planes: dict  # name -> (C,H,W) array or Var

    def __post_init__(self):
        shapes = {np.shape(ad.value(p)) for p in self.planes.values()}
        if len(shapes) != 1 or len(next(iter(shapes))) != 3:
            raise ValueError("all three planes must share one (C,H,W) shape")

    @staticmethod
    def zeros(channels=DEFAULT_CHANNELS, res=DEFAULT_RES):
        return Triplane({n: np.zeros((channels, res, res)) for n in PLANE_NAMES})

    @staticmethod
    def random(channels=DEFAULT_CHANNELS, res=DEFAULT_RES, scale=0.1, seed=0):
        rng = np.random.default_rng(seed)
        return Triplane({n: rng.normal(0, scale, (channels, res, res))
                         for n in PLANE_NAMES})

    @property
    def shape(self):
        return np.shape(ad.value(self.planes["xy"]))


@dataclass
class HeadSet:
    """Five 2-hidden-layer MLPs decoding a 3C feature vector."""

    layers: dict  # name -> [(W, b), (W, b), (W, b)], entries array or Var
    hidden: int = DEFAULT_HIDDEN

    @staticmethod
    def make(channels=DEFAULT_CHANNELS, hidden=DEFAULT_HIDDEN, seed=0, zero_init=False):
        """Random hidden layers, zero final layer (outputs start at midpoints)."""
        rng = np.random.default_rng(seed)
        layers = {}
        in_dim = 3 * channels
        for name, out in HEAD_SPECS:
            dims = [in_dim, hidden, hidden, out]
            head = []
            for li in range(3):
                if zero_init or li == 2:
                    w = np.zeros((dims[li], dims[li + 1]))
                else:
                    w = rng.normal(0, np.sqrt(2.0 / dims[li]), (dims[li], dims[li + 1]))
                head.append((w, np.zeros(dims[li + 1])))
            layers[name] = head
        return HeadSet(layers, hidden)


@dataclass
class FieldSample:
    occupancy: object  # in [0,1]
    material: MaterialPoint


def _bilinear_plane(flat_feat, res, a, b):
    """Border-clamped bilinear lookup on one plane; (n, C) out.

    `flat_feat` is (H*W, C), array or Var; a/b are the two in-plane
    coordinates in [-1, 1] (array or Var).
    """
    h = w = res
    u = (a + 1.0) * (0.5 * w) - 0.5
    v = (b + 1.0) * (0.5 * h) - 0.5
    uu, vv = ad.value(u), ad.value(v)
    j0 = np.floor(uu)
    i0 = np.floor(vv)
    fu = ad.clip(u - j0, 0.0, 1.0)
    fv = ad.clip(v - i0, 0.0, 1.0)
    j0c = np.clip(j0.astype(np.int64), 0, w - 1)
    j1c = np.clip(j0.astype(np.int64) + 1, 0, w - 1)
    i0c = np.clip(i0.astype(np.int64), 0, h - 1)
    i1c = np.clip(i0.astype(np.int64) + 1, 0, h - 1)
    out = None
    for wj, jj in (((1.0 - fu), j0c), (fu, j1c)):
        for wi, ii in (((1.0 - fv), i0c), (fv, i1c)):
            g = ad.take(flat_feat, ii * w + jj)
            weight = wi * wj
            part = g * ad.reshape(weight, (-1, 1))
            out = part if out is None else out + part
    return out


def triplane_lookup(tri: Triplane, p):
    """Concatenated (n, 3C) features for points p (V3 lanes or (n,3) array).

    Coordinates outside [-1,1] clamp to the plane borders.
    """
    if isinstance(p, V3):
        x, y, z = p.x, p.y, p.z
    else:
        p = np.asarray(p, dtype=np.float64)
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
    res = np.shape(ad.value(tri.planes["xy"]))[1]
    parts = []
    for name, (a, b) in (("xy", (x, y)), ("yz", (y, z)), ("zx", (z, x))):
        parts.append(_bilinear_plane(_plane_flat(tri.planes[name]), res, a, b))
    return ad.concat(parts, axis=1)


def _plane_flat(plane):
    v = ad.value(plane)
    c, h, w = v.shape
    if isinstance(plane, ad.Var):
        # move channels last without a transpose primitive: gather rows
        idx = np.arange(h * w)
        flat = ad.reshape(plane, (c, h * w))
        cols = [ad.reshape(flat[k], (-1, 1)) for k in range(c)]
        return ad.concat(cols, axis=1)
    return np.ascontiguousarray(np.moveaxis(v, 0, -1).reshape(h * w, c))


def decode_features(heads: HeadSet, feats):
    """Apply the five heads to (n, 3C) features; returns FieldSample lanes."""

    def run(name):
        x = feats
        hl = heads.layers[name]
        for li, (w, b) in enumerate(hl):
            x = ad.matmul(x, w) + b
            if li < len(hl) - 1:
                x = ad.maximum(x, 0.0)
        return x

    sig = ad.sigmoid(run("sigma")[:, 0])
    alb = run("albedo")
    albedo = RGB(ad.sigmoid(alb[:, 0]), ad.sigmoid(alb[:, 1]), ad.sigmoid(alb[:, 2]))
    rough = ROUGHNESS_MIN + (1.0 - ROUGHNESS_MIN) * ad.sigmoid(run("rough")[:, 0])
    metal = ad.sigmoid(run("metal")[:, 0])
    braw = run("bump")
    # small floor keeps z strictly positive even when softplus underflows
    bump = V3(braw[:, 0], braw[:, 1], ad.softplus(braw[:, 2]) + 1e-4).normalized()
    return FieldSample(sig, MaterialPoint(albedo, rough, metal, bump))


def field_sample(tri: Triplane, heads: HeadSet, p) -> FieldSample:
    return decode_features(heads, triplane_lookup(tri, p))


# --- isosurface extraction ------------------------------------------------------

def occupancy_grid(occ_fn, res, chunk=2_000_000):
    """Evaluate a scalar occupancy function on a res^3 corner grid over [-1,1]^3."""
    axis = np.linspace(-1.0, 1.0, res)
    xx, yy, zz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([xx.reshape(-1), yy.reshape(-1), zz.reshape(-1)], axis=-1)
    out = np.empty(pts.shape[0])
    for s in range(0, pts.shape[0], chunk):
        out[s:s + chunk] = np.asarray(occ_fn(pts[s:s + chunk]))
    return out.reshape(res, res, res)


def mesh_from_occupancy(occ_fn, res, level=0.5) -> TriMesh:
    """Marching cubes at `level`; vertex normals follow -grad(occupancy)."""
    from skimage import measure

    if not 16 <= res <= 256:
        raise ValueError("grid resolution must be in [16, 256]")
    grid = occupancy_grid(occ_fn, res)
    lo, hi = grid.min(), grid.max()
    if lo >= level or hi <= level:
        raise EmptyMeshError(f"occupancy in [{lo:.3g}, {hi:.3g}] never crosses {level}")
    cell = 2.0 / (res - 1)
    verts, faces, _, _ = measure.marching_cubes(grid, level=level,
                                                spacing=(cell, cell, cell))
    verts = verts + (-1.0)
    grads = np.stack(np.gradient(grid, cell), axis=-1)
    normals = -_trilinear(grads, verts, res)
    normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-300)
    return TriMesh(verts, faces.astype(np.int64), normals)


def _trilinear(grid_vec, pts, res):
    """Trilinear interpolation of a (res,res,res,3) field at (n,3) points."""
    g = (pts + 1.0) * ((res - 1) / 2.0)
    i0 = np.clip(np.floor(g).astype(np.int64), 0, res - 2)
    f = g - i0
    out = np.zeros((pts.shape[0], grid_vec.shape[-1]))
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1 - f[:, 2]
                w = (wx * wy * wz)[:, None]
                out += w * grid_vec[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
    return out


def extract_mesh(tri: Triplane, heads: HeadSet, res) -> TriMesh:
    """Isosurface of the field's occupancy head at level 0.5."""

    def occ(pts):
        return ad.value(field_sample(tri, heads, pts).occupancy)

    return mesh_from_occupancy(occ, res)


# --- checkpoint container -------------------------------------------------------

MAGIC = b"TRIF"
VERSION = 1


def param_blocks(tri: Triplane, heads: HeadSet):
    """Named parameter blocks in their declared container order."""
    blocks = {}
    for n in PLANE_NAMES:
        blocks[f"plane_{n}"] = ad.value(tri.planes[n])
    for name, _ in HEAD_SPECS:
        for li, (w, b) in enumerate(heads.layers[name]):
            blocks[f"head_{name}_w{li}"] = ad.value(w)
            blocks[f"head_{name}_b{li}"] = ad.value(b)
    return blocks


def save_field(path, tri: Triplane, heads: HeadSet):
    c, h, w = tri.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIIIII", VERSION, c, h, w, heads.hidden, len(HEAD_SPECS)))
        for _, out in HEAD_SPECS:
            f.write(struct.pack("<I", out))
        for block in param_blocks(tri, heads).values():
            f.write(np.ascontiguousarray(block, dtype="<f4").tobytes())


def load_field(path):
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError("not a field checkpoint (bad magic)")
        version, c, h, w, hidden, n_heads = struct.unpack("<IIIIII", f.read(24))
        if version != VERSION:
            raise ValueError(f"unsupported field checkpoint version {version}")
        outs = struct.unpack(f"<{n_heads}I", f.read(4 * n_heads))
        if outs != tuple(o for _, o in HEAD_SPECS):
            raise ValueError("head layout mismatch")

        def read(shape):
            n = int(np.prod(shape))
            return np.frombuffer(f.read(4 * n), dtype="<f4").astype(np.float64).reshape(shape)

        tri = Triplane({n: read((c, h, w)) for n in PLANE_NAMES})
        layers = {}
        for name, out in HEAD_SPECS:
            dims = [3 * c, hidden, hidden, out]
            layers[name] = [(read((dims[i], dims[i + 1])), read((dims[i + 1],)))
                            for i in range(3)]
        return tri, HeadSet(layers, hidden)

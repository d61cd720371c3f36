"""One-bounce direct-lighting Monte Carlo renderer with multiple importance
sampling, plus the deterministic spherical-Gaussian fast-shading mode.

The estimator combines environment-light samples and BRDF samples with the
balance heuristic; visibility uses shadow rays against the scene BVH and is
treated as constant in gradients. All continuous quantities (BRDF values,
pdfs, the VNDF warp, decoded radiance) stay differentiable when material or
environment parameters are autodiff Vars; sampling distributions (the light
proxy CDFs, lobe choices) act on detached values.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from . import brdf as bx
from . import envlight as el
from .bvh import Bvh
from .sampling import lane_uniform, smith_g2
from .vecmath import RGB, V3, reflect, to_local, to_world, world_aligned_frame

RAY_EPS = 1e-4


@dataclass
class Camera:
    """Pinhole camera: world-from-camera rigid pose, vertical fov, image size."""

    pose: np.ndarray  # 3x4 [R | t], camera looks down -z, +y up, +x right
    fov_deg: float
    width: int
    height: int

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(3, 4)
        if not 1.0 < self.fov_deg < 179.0:
            raise ValueError("fov must be in (1, 179) degrees")
        r = self.pose[:, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-5:
            raise ValueError("camera rotation is not orthonormal")

    @staticmethod
    def look_at(eye, target, fov_deg=30.0, width=64, height=64, up=(0.0, 0.0, 1.0)):
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        nr = np.linalg.norm(right)
        if nr < 1e-8:  # looking straight along up: pick any horizontal right
            right = np.array([1.0, 0.0, 0.0])
        else:
            right /= nr
        cam_up = np.cross(right, fwd)
        rot = np.stack([right, cam_up, -fwd], axis=1)
        return Camera(np.concatenate([rot, eye[:, None]], axis=1), fov_deg, width, height)

    def rays(self):
        """Pixel-center primary rays: (origins (n,3), dirs (n,3)), row-major."""
        w, h = self.width, self.height
        tan = np.tan(np.radians(self.fov_deg) / 2.0)
        xs = (2.0 * (np.arange(w) + 0.5) / w - 1.0) * tan * (w / h)
        ys = (1.0 - 2.0 * (np.arange(h) + 0.5) / h) * tan
        px, py = np.meshgrid(xs, ys, indexing="xy")
        d_cam = np.stack([px.reshape(-1), py.reshape(-1), -np.ones(w * h)], axis=-1)
        d_cam /= np.linalg.norm(d_cam, axis=1, keepdims=True)
        rot, t = self.pose[:, :3], self.pose[:, 3]
        dirs = d_cam @ rot.T
        origins = np.broadcast_to(t, dirs.shape).copy()
        return origins, dirs


@dataclass
class RenderConfig:
    spp: int = 16
    light_samples: int = 1
    brdf_samples: int = 1
    mode: str = "mc"  # "mc" | "sg" | "diffuse" (diffuse-only debug MC)
    antithetic: bool = False
    seed: int = 0
    shadow_rays: bool = True
    background: str = "env"  # "env" | "black"

    def __post_init__(self):
        if self.spp < 1:
            raise ValueError("spp must be >= 1")
        if self.mode not in ("mc", "sg", "diffuse"):
            raise ValueError(f"unknown shading mode {self.mode!r}")


@dataclass
class ImageBuffer:
    rgb: np.ndarray    # (H, W, 3) linear radiance
    alpha: np.ndarray  # (H, W) coverage
    diagnostics: dict = dc_field(default_factory=dict)


@dataclass
class Hit:
    position: np.ndarray
    normal_geo: np.ndarray
    normal_shading: np.ndarray
    tri: np.ndarray
    bary: np.ndarray
    t: np.ndarray
    mask: np.ndarray


def build_bvh(mesh) -> Bvh:
    return Bvh(mesh)


def mis_weight(p_this, p_other):
    """Balance heuristic weight p/(p+q); p must be > 0 on call."""
    return p_this / (p_this + p_other)


def trace(bvh: Bvh, origins, dirs) -> Hit:
    t, tri, u, v = bvh.intersect(origins, dirs, t_min=RAY_EPS)
    mask = np.isfinite(t)
    ts = np.where(mask, t, 1.0)
    pos = origins + ts[:, None] * dirs
    mesh = bvh.mesh
    f = mesh.faces[np.where(mask, tri, 0)]
    w = (1.0 - u - v)[:, None]
    ns = (mesh.vertex_normals[f[:, 0]] * w
          + mesh.vertex_normals[f[:, 1]] * u[:, None]
          + mesh.vertex_normals[f[:, 2]] * v[:, None])
    ns /= np.maximum(np.linalg.norm(ns, axis=1, keepdims=True), 1e-300)
    ng = np.cross(mesh.vertices[f[:, 1]] - mesh.vertices[f[:, 0]],
                  mesh.vertices[f[:, 2]] - mesh.vertices[f[:, 0]])
    ng /= np.maximum(np.linalg.norm(ng, axis=1, keepdims=True), 1e-300)
    flip = np.einsum("ij,ij->i", ng, ns) < 0.0
    ng[flip] *= -1.0
    return Hit(pos, ng, ns, tri, np.stack([u, v], axis=-1), t, mask)


class Scene:
    """Geometry + material source + environment, ready to shade.

    `material` is either a MaterialPoint (constant, components may be Vars) or
    a ("field", triplane, heads) triple queried at hit points. `env` is an
    EnvMap, EnvLatent, or SGSet; `light_map` is the sampling proxy (defaults
    to the env itself for maps, a baked copy for latents).
    """

    def __init__(self, mesh, material, env, light_map=None, bvh=None):
        self.mesh = mesh
        self.bvh = bvh if bvh is not None else (Bvh(mesh) if mesh is not None else None)
        self.material = material
        self.env = env
        if light_map is None and isinstance(env, el.EnvMap):
            light_map = env
        if light_map is None and isinstance(env, el.EnvLatent):
            light_map = el.bake_latent_to_map(env, 64, 128)
        self.light_map = light_map

    def material_at(self, pts):
        if isinstance(self.material, bx.MaterialPoint):
            return self.material
        kind, tri, heads = self.material
        assert kind == "field"
        from .field import field_sample

        return field_sample(tri, heads, pts).material

    def env_radiance(self, d: V3) -> RGB:
        if isinstance(self.env, el.EnvMap):
            return el.env_eval_map(self.env, d)
        if isinstance(self.env, el.EnvLatent):
            return el.env_decode_latent(self.env, d)
        rgb = self.env.eval(d.values())
        return RGB(rgb[:, 0], rgb[:, 1], rgb[:, 2])


def _masked(rgb: RGB, keep) -> RGB:
    z = np.zeros(1)
    return RGB(ad.where(keep, rgb.r, z), ad.where(keep, rgb.g, z), ad.where(keep, rgb.b, z))


def _safe_z(v: V3, ok):
    return V3(v.x, v.y, ad.where(ok, ad.maximum(v.z, 1e-7), np.full(1, 0.5)))


def shade_direct(scene: Scene, hit_pos, ng: V3, ns: V3, wo_world: V3, mat,
                 cfg: RenderConfig, lane_ids, sample_idx, diagnostics=None) -> RGB:
    """MIS estimate of the direct-lighting integral at each lane's hit point.

    One light sample and one BRDF sample (pairs when antithetic) per call;
    callers average over `sample_idx` for more spp. Invalid lanes (view or
    sample below the horizon) contribute zero and are counted in diagnostics.
    """
    diffuse_only = cfg.mode == "diffuse"
    frame = bx.ShadingFrame.from_normals(ng, ns)
    n_bumped = bx.apply_bump(frame, mat.bump)
    t2, b2 = world_aligned_frame(n_bumped)
    wo_local = to_local(t2, b2, n_bumped, wo_world)
    view_ok = ad.value(wo_local.z) > 1e-6
    wo_safe = _safe_z(wo_local, view_ok)
    if diagnostics is not None:
        diagnostics["degenerate_view"] = diagnostics.get("degenerate_view", 0) \
            + int(np.sum(~view_ok))

    total = RGB.gray(np.zeros(1))
    base_ctr = np.uint64(sample_idx) * np.uint64(32)

    def draw(slot):
        return lane_uniform(cfg.seed, lane_ids, base_ctr + np.uint64(slot))

    def visibility(d_world_vals):
        above = np.einsum("ij,ij->i", d_world_vals, ng.values()) > 1e-7
        if not cfg.shadow_rays or scene.bvh is None:
            return above
        org = hit_pos + ng.values() * (4.0 * RAY_EPS)
        occ = scene.bvh.occluded(org, d_world_vals, t_min=RAY_EPS)
        return above & ~occ

    def radiance_at(d_world: V3) -> RGB:
        return scene.env_radiance(d_world)

    # light-strategy samples (directions and pdfs from the detached proxy)
    for s in range(cfg.light_samples):
        u1, u2 = draw(2 * s), draw(2 * s + 1)
        d_l, pdf_l, _ = el.env_sample(scene.light_map, u1, u2)
        wi_l = to_local(t2, b2, n_bumped, d_l)
        ok = view_ok & (ad.value(wi_l.z) > 1e-6) & visibility(d_l.values())
        wi_safe = _safe_z(wi_l, ok)
        f = bx.brdf_eval(mat, wi_safe, wo_safe, diffuse_only=diffuse_only)
        pdf_b_here = bx.brdf_pdf(mat, wo_safe, wi_safe, diffuse_only=diffuse_only)
        w = mis_weight(pdf_l, pdf_b_here)
        lrad = radiance_at(d_l)
        scale = wi_safe.z * w * (ok.astype(np.float64) / (pdf_l * cfg.light_samples))
        total = total + _masked(f * lrad * scale, ok)

    # BRDF-strategy samples (reparameterized warp, antithetic pairs optional)
    def brdf_contribution(wi_local: V3, pdf_b):
        wi_world = to_world(t2, b2, n_bumped, wi_local)
        wvals = wi_world.values()
        ok = view_ok & (ad.value(wi_local.z) > 1e-6) & (ad.value(pdf_b) > 1e-12) \
            & visibility(wvals)
        wi_safe = _safe_z(wi_local, ok)
        f = bx.brdf_eval(mat, wi_safe, wo_safe, diffuse_only=diffuse_only)
        pdf_l_at = el.env_pdf(scene.light_map, wi_world)
        safe_pdf = ad.where(ok, ad.maximum(pdf_b, 1e-12), np.ones(1))
        w = mis_weight(safe_pdf, pdf_l_at)
        lrad = radiance_at(wi_world)
        scale = wi_safe.z * w * (ok.astype(np.float64) / cfg.brdf_samples) / safe_pdf
        return _masked(f * lrad * scale, ok)

    for s in range(cfg.brdf_samples):
        ul, u1, u2 = draw(16 + 3 * s), draw(17 + 3 * s), draw(18 + 3 * s)
        wi, pdf_b, _ = bx.brdf_sample(mat, wo_safe, ul, u1, u2, diffuse_only=diffuse_only)
        c = brdf_contribution(wi, pdf_b)
        if cfg.antithetic:
            h2sum = wo_safe + wi
            h2 = h2sum.scale(1.0 / ad.maximum(h2sum.norm(), 1e-12))
            wi2 = reflect(wo_safe, V3(-h2.x, -h2.y, h2.z))
            pdf2 = bx.brdf_pdf(mat, wo_safe, wi2, diffuse_only=diffuse_only)
            c2 = brdf_contribution(wi2, pdf2)
            c = (c + c2) * 0.5
        total = total + c

    return total


def _sg_irradiance(sharpness, cos_angle):
    """Hill's analytic fit for the cosine-hemisphere integral of a unit SG."""
    lam = sharpness
    eml = np.exp(-lam)
    em2l = eml * eml
    rl = 1.0 / lam
    scale = 1.0 + 2.0 * em2l - rl
    bias = (eml - em2l) * rl - em2l
    x = np.sqrt(np.maximum(1.0 - scale, 1e-12))
    x0 = 0.36 * cos_angle
    x1 = x / (4.0 * 0.36)
    n = x0 + x1
    y = np.where(np.abs(x0) <= x1, n * n / np.maximum(x, 1e-12),
                 np.clip(cos_angle, 0.0, 1.0))
    y = scale * y + bias
    integral = 2.0 * np.pi * rl * (1.0 - em2l)
    return np.maximum(y, 0.0) * integral


def shade_sg(mat, n: V3, wo_world: V3, sgs: el.SGSet, diffuse_only=False) -> RGB:
    """Deterministic shading against an SG light set (no sampling, plain numpy)."""
    nv = n.values()
    wov = wo_world.values()
    coso = np.clip(np.einsum("ij,ij->i", nv, wov), 1e-6, 1.0)
    alb = mat.albedo.values()
    metal = np.broadcast_to(np.asarray(ad.value(mat.metallic)), coso.shape)
    rough = np.broadcast_to(np.asarray(ad.value(mat.roughness)), coso.shape)
    if sgs.axes.shape[0] == 0:
        z = np.zeros_like(coso)
        return RGB(z, z.copy(), z.copy())

    irr = np.zeros((coso.shape[0], 3))
    for ax, lam, amp in zip(sgs.axes, sgs.sharpness, sgs.amplitude):
        irr += _sg_irradiance(lam, nv @ ax)[:, None] * amp[None, :]
    f0 = 0.04 + (alb - 0.04) * metal[:, None]
    if diffuse_only:
        return RGB(*(alb[:, c_] * irr[:, c_] / np.pi for c_ in range(3)))
    favg = (20.0 * f0 + 1.0) / 21.0
    fo = f0 + (1.0 - f0) * (1.0 - coso[:, None]) ** 5
    kd = (1.0 - metal[:, None]) * (1.0 - favg) * (1.0 - fo)
    diff = alb * kd * irr / np.pi

    alpha = np.maximum(np.clip(rough, bx.ROUGHNESS_MIN, 1.0) ** 2, bx.ALPHA_MIN)
    r_dir = 2.0 * coso[:, None] * nv - wov
    lam_g = 2.0 / (alpha * alpha)
    g2 = ad.value(smith_g2(alpha, coso, coso))
    # normalized GGX-proxy lobe against every light lobe, all lanes at once
    d = lam_g[:, None, None] * r_dir[:, None, :] \
        + sgs.sharpness[None, :, None] * sgs.axes[None, :, :]
    lam_m = np.linalg.norm(d, axis=2)
    norm_g = lam_g / (2.0 * np.pi * (1.0 - np.exp(-2.0 * lam_g)))
    inner = norm_g[:, None] * 2.0 * np.pi \
        * np.exp(lam_m - lam_g[:, None] - sgs.sharpness[None, :]) \
        * (1.0 - np.exp(-2.0 * lam_m)) / np.maximum(lam_m, 1e-12)
    spec = (inner[:, :, None] * sgs.amplitude[None, :, :]).sum(axis=1) * fo * g2[:, None]
    return RGB(diff[:, 0] + spec[:, 0], diff[:, 1] + spec[:, 1], diff[:, 2] + spec[:, 2])


def render_lanes(scene: Scene, origins, dirs, lane_ids, cfg: RenderConfig,
                 diagnostics=None):
    """Shade arbitrary rays; returns (RGB lanes, alpha lanes). Core of render_image."""
    n = origins.shape[0]
    d = V3.from_array(dirs)
    if scene.bvh is None:
        if cfg.background == "black":
            z = np.zeros(n)
            return RGB(z, z.copy(), z.copy()), np.zeros(n)
        bg = scene.env_radiance(d)
        return bg, np.zeros(n)
    hit = trace(scene.bvh, origins, dirs)
    alpha = hit.mask.astype(np.float64)

    if cfg.background == "black":
        z = np.zeros(n)
        bg = RGB(z, z.copy(), z.copy())
    else:
        bg = scene.env_radiance(d)

    if not np.any(hit.mask):
        return _masked(bg, ~hit.mask), alpha

    idx = np.where(hit.mask)[0]
    pos = hit.position[idx]
    ng = V3.from_array(hit.normal_geo[idx])
    ns = V3.from_array(hit.normal_shading[idx])
    wo = V3.from_array(-dirs[idx])
    mat = scene.material_at(pos)
    lanes = lane_ids[idx]

    if cfg.mode == "sg":
        if not isinstance(scene.env, el.SGSet):
            raise ValueError("sg mode needs an SGSet environment")
        frame = bx.ShadingFrame.from_normals(ng, ns)
        nb = bx.apply_bump(frame, mat.bump)
        fg = shade_sg(mat, V3.from_array(nb.values()), wo, scene.env)
    else:
        acc = RGB.gray(np.zeros(1))
        for s in range(cfg.spp):
            acc = acc + shade_direct(scene, pos, ng, ns, wo, mat, cfg, lanes, s,
                                     diagnostics)
        fg = acc * (1.0 / cfg.spp)

    # scatter foreground lanes back over the background
    def compose(bgc, fgc):
        buf_bg = ad.where(hit.mask, np.zeros(1), bgc + np.zeros(n))
        return buf_bg + ad.put_rows(fgc + np.zeros(len(idx)), idx, n)

    out = RGB(compose(bg.r, fg.r), compose(bg.g, fg.g), compose(bg.b, fg.b))
    return out, alpha


def render_image(scene: Scene, camera: Camera, cfg: RenderConfig) -> ImageBuffer:
    """Forward render to an (H, W) buffer; deterministic under fixed seed."""
    origins, dirs = camera.rays()
    lane_ids = np.arange(origins.shape[0], dtype=np.uint64)
    diagnostics = {}
    rgb, alpha = render_lanes(scene, origins, dirs, lane_ids, cfg, diagnostics)
    h, w = camera.height, camera.width
    img = rgb.values().reshape(h, w, 3)
    return ImageBuffer(img, alpha.reshape(h, w), diagnostics)

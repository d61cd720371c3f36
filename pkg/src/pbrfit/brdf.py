"""Disney-style metallic-roughness BRDF: evaluation, sampling, pdf, bump normals.

Lobes: Lambert diffuse scaled by (1 - metallic) and the symmetric Fresnel
compensation (1 - F(n.wi))(1 - F(n.wo)) (keeps reciprocity exact and the
directional albedo under one at grazing incidence), plus a GGX specular lobe
with height-correlated Smith shadowing and Schlick Fresnel,
F0 = mix(0.04, albedo, metallic), alpha = roughness^2. Directions are unit
vectors in the local frame whose +z is the (bump-perturbed) shading normal.
All math accepts autodiff Vars in material parameters and directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import sampling as sp
from .vecmath import RGB, V3, reflect, to_world, world_aligned_frame

ROUGHNESS_MIN = 0.01
ALPHA_MIN = 1e-4
P_SPEC_MIN, P_SPEC_MAX = 0.1, 0.9


class BelowHorizonError(ValueError):
    """A direction handed to the BRDF lies at or below the local horizon."""


def _up():
    return V3(np.float64(0.0), np.float64(0.0), np.float64(1.0))


@dataclass
class MaterialPoint:
    """One svBRDF sample: albedo in [0,1]^3, roughness in [0.01,1], metallic in [0,1]."""

    albedo: RGB
    roughness: object
    metallic: object
    bump: V3 = field(default_factory=_up)

    @staticmethod
    def constant(albedo, roughness, metallic, bump=(0.0, 0.0, 1.0)):
        return MaterialPoint(RGB.from_array(np.asarray(albedo, dtype=np.float64)),
                             np.float64(roughness), np.float64(metallic),
                             V3.from_array(np.asarray(bump, dtype=np.float64)))

    def validate(self):
        a = self.albedo.values()
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("albedo outside [0,1]")
        r = ad.value(self.roughness)
        if np.any(r < ROUGHNESS_MIN) or np.any(r > 1):
            raise ValueError("roughness outside [0.01,1]")
        m = ad.value(self.metallic)
        if np.any(m < 0) or np.any(m > 1):
            raise ValueError("metallic outside [0,1]")
        if np.any(ad.value(self.bump.z) <= 0):
            raise ValueError("bump must keep a positive z component")
        return self


@dataclass
class ShadingFrame:
    """Orthonormal {t, b, n_s} with a world-axis-aligned tangent, plus n_g."""

    n_g: V3
    n_s: V3
    t: V3
    b: V3

    @staticmethod
    def from_normals(n_g: V3, n_s: V3 | None = None):
        n_s = n_s if n_s is not None else n_g
        t, b = world_aligned_frame(n_s)
        return ShadingFrame(n_g, n_s, t, b)


def alpha_of(roughness):
    return ad.maximum(ad.clip(roughness, ROUGHNESS_MIN, 1.0) ** 2.0, ALPHA_MIN)


def f0_of(mat: MaterialPoint) -> RGB:
    return mat.albedo.map(lambda c: 0.04 + (c - 0.04) * mat.metallic)


def fresnel_schlick(f0: RGB, cos_vh) -> RGB:
    w = (1.0 - ad.clip(cos_vh, 0.0, 1.0)) ** 5.0
    return f0.map(lambda c: c + (1.0 - c) * w)


def _check_above_horizon(*cosines):
    for c in cosines:
        if np.any(ad.value(c) <= 0.0):
            raise BelowHorizonError("direction at or below the shading horizon")


def brdf_eval(mat: MaterialPoint, wi: V3, wo: V3, diffuse_only=False, split=False):
    """f_r(wi, wo) in the local frame; RGB with units 1/sr.

    `split=True` returns (diffuse, specular) RGB parts.
    """
    _check_above_horizon(wi.z, wo.z)
    if diffuse_only:
        diff = mat.albedo.scale(1.0 / np.pi)
        zero = RGB.gray(diff.r * 0.0)
        return (diff, zero) if split else diff
    f0 = f0_of(mat)
    one_m = 1.0 - mat.metallic
    fi = fresnel_schlick(f0, wi.z)
    fo = fresnel_schlick(f0, wo.z)
    kd = RGB((1.0 - fi.r) * (1.0 - fo.r), (1.0 - fi.g) * (1.0 - fo.g),
             (1.0 - fi.b) * (1.0 - fo.b)).scale(one_m / np.pi)
    diff = mat.albedo * kd
    a = alpha_of(mat.roughness)
    hsum = wi + wo
    h = hsum.scale(1.0 / ad.maximum(hsum.norm(), 1e-12))
    d = sp.ggx_d(a, h.z)
    g = sp.smith_g2(a, wi.z, wo.z)
    f = fresnel_schlick(f0, wi.dot(h))
    spec = f.scale(d * g / (4.0 * wi.z * wo.z))
    return (diff, spec) if split else diff + spec


def p_specular(mat: MaterialPoint):
    """Probability of picking the specular lobe: clamp(m + (1-m)*mean(F0), 0.1, 0.9)."""
    return ad.clip(mat.metallic + (1.0 - mat.metallic) * f0_of(mat).mean(),
                   P_SPEC_MIN, P_SPEC_MAX)


def brdf_pdf(mat: MaterialPoint, wo: V3, wi: V3, diffuse_only=False):
    """Solid-angle density matching brdf_sample's mixture."""
    _check_above_horizon(wo.z)
    if diffuse_only:
        return sp.cosine_hemisphere_pdf(wi.z)
    ps = p_specular(mat)
    a = alpha_of(mat.roughness)
    return ps * sp.vndf_reflected_pdf(wo, wi, a) \
        + (1.0 - ps) * sp.cosine_hemisphere_pdf(wi.z)


def brdf_sample(mat: MaterialPoint, wo: V3, u_lobe, u1, u2, diffuse_only=False):
    """Importance-sample wi; returns (wi, pdf, specular_lobe_mask).

    Lobe choice happens on detached probabilities; the VNDF warp itself stays
    differentiable in roughness so pathwise gradients flow through wi.
    """
    _check_above_horizon(wo.z)
    if diffuse_only:
        wi, pdf = sp.sample_cosine_hemisphere(u1, u2)
        return wi, pdf, np.zeros(np.shape(ad.value(pdf)), dtype=bool)
    spec_mask = np.asarray(u_lobe) < ad.value(p_specular(mat))
    a = alpha_of(mat.roughness)
    h = sp.sample_ggx_vndf(wo, a, u1, u2)
    wi_s = reflect(wo, h)
    wi_d, _ = sp.sample_cosine_hemisphere(u1, u2)
    wi = V3(ad.where(spec_mask, wi_s.x, wi_d.x),
            ad.where(spec_mask, wi_s.y, wi_d.y),
            ad.where(spec_mask, wi_s.z, wi_d.z))
    return wi, brdf_pdf(mat, wo, wi), spec_mask


def apply_bump(frame: ShadingFrame, bump: V3) -> V3:
    """World-space shading normal after the tangent-space bump perturbation.

    Results crossing the geometric horizon are pulled back so that
    n . n_g stays >= 1e-4.
    """
    n = to_world(frame.t, frame.b, frame.n_s, bump).normalized()
    d = n.dot(frame.n_g)
    need = ad.value(d) < 1e-4
    if not np.any(need):
        return n
    eps = 2e-4
    tang = n - frame.n_g.scale(d)
    tn = ad.maximum(tang.norm(), 1e-9)
    fallback = np.asarray(ad.value(tn)) < 1e-8
    safe = frame.t  # n anti-parallel to n_g: any tangent of n_g works
    tang = V3(ad.where(fallback, safe.x, tang.x / tn),
              ad.where(fallback, safe.y, tang.y / tn),
              ad.where(fallback, safe.z, tang.z / tn))
    lifted = tang.scale(np.sqrt(1.0 - eps * eps)) + frame.n_g.scale(eps)
    return V3(ad.where(need, lifted.x, n.x),
              ad.where(need, lifted.y, n.y),
              ad.where(need, lifted.z, n.z))

"""Deterministic counter-based RNG streams and hemisphere sampling warps.

Every draw is a pure hash of (seed, sequence, counter), so parallel pixels
need no shared state and any render is bit-reproducible. Warps are written
against the autodiff dispatch layer: feeding Var roughness differentiates
straight through the spherical-cap construction (pathwise gradients).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .vecmath import V3, reflect


class DegenerateViewError(ValueError):
    """View direction is at or below the horizon of the shading frame."""


_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = float(2.0 ** -53)


def _mix(x):
    # scalar numpy warns on intended uint64 wraparound; arrays wrap silently
    with np.errstate(over="ignore"):
        x = (x + _GOLD).astype(np.uint64)
        x = x ^ (x >> _S30)
        x = (x * _M1).astype(np.uint64)
        x = x ^ (x >> _S27)
        x = (x * _M2).astype(np.uint64)
        return x ^ (x >> _S31)


def hash_u01(seed, sequence, counter):
    """Uniform [0,1) from a 3-level splitmix64 hash; broadcasts over arrays."""
    s = _mix(np.uint64(seed) ^ _mix(np.asarray(sequence, dtype=np.uint64)))
    h = _mix(s ^ _mix(np.asarray(counter, dtype=np.uint64)))
    return (h >> _S11).astype(np.float64) * _INV53


@dataclass
class RngStream:
    """Stateful view over the counter-based generator for one (seed, sequence)."""

    seed: int
    sequence: int = 0
    counter: int = field(default=0, compare=False)

    def uniform(self, n=None):
        if n is None:
            v = hash_u01(self.seed, self.sequence, self.counter)
            self.counter += 1
            return float(v)
        c = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        return hash_u01(self.seed, self.sequence, c)

    def fork(self, sequence):
        return RngStream(self.seed, sequence)


def lane_uniform(seed, lane_ids, counter):
    """One draw per lane: lane_ids selects the sequence, counter the position."""
    return hash_u01(seed, lane_ids, counter)


# warps ------------------------------------------------------------------------

def sample_cosine_hemisphere(u1, u2):
    """Cosine-weighted local direction; pdf = cos(theta)/pi."""
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    z = np.sqrt(np.maximum(0.0, 1.0 - u1))
    d = V3(r * np.cos(phi), r * np.sin(phi), z)
    return d, cosine_hemisphere_pdf(z)


def cosine_hemisphere_pdf(z):
    return ad.maximum(z, 0.0) / np.pi


def ggx_d(alpha, hz):
    """Isotropic GGX normal distribution at cos(theta_h) = hz."""
    a2 = alpha * alpha
    denom = hz * hz * (a2 - 1.0) + 1.0
    return a2 / (np.pi * denom * denom)


def smith_lambda(alpha, z):
    a2 = alpha * alpha
    z2 = z * z
    tan2 = (1.0 - z2) / ad.maximum(z2, 1e-14)
    return 0.5 * (ad.sqrt(1.0 + a2 * tan2) - 1.0)


def smith_g1(alpha, z):
    return 1.0 / (1.0 + smith_lambda(alpha, z))


def smith_g2(alpha, zi, zo):
    """Height-correlated Smith shadowing-masking."""
    return 1.0 / (1.0 + smith_lambda(alpha, zi) + smith_lambda(alpha, zo))


def sample_ggx_vndf(view: V3, alpha, u1, u2) -> V3:
    """Visible-normal sample by the spherical-cap construction.

    Stretch the view by alpha, draw a point uniformly on the cap
    z in [-view_stretched.z, 1], add the stretched view, unstretch.
    Differentiable in alpha and view for frozen (u1, u2).
    """
    if np.any(ad.value(view.z) <= 0.0):
        raise DegenerateViewError("view.z must be > 0 for VNDF sampling")
    vh = V3(view.x * alpha, view.y * alpha, view.z).normalized()
    phi = 2.0 * np.pi * u1
    cz = (1.0 - u2) * (1.0 + vh.z) - vh.z
    sz = ad.sqrt(ad.clip(1.0 - cz * cz, 0.0, 1.0))
    cap = V3(sz * np.cos(phi), sz * np.sin(phi), cz)
    c = cap + vh
    h = V3(c.x * alpha, c.y * alpha, ad.maximum(c.z, 0.0)).normalized()
    return h


def ggx_vndf_pdf(view: V3, h: V3, alpha):
    """Density of sample_ggx_vndf: G1(view) * D(h) * max(0, view.h) / view.z."""
    return smith_g1(alpha, view.z) * ggx_d(alpha, h.z) \
        * ad.maximum(view.dot(h), 0.0) / view.z


def vndf_reflected_pdf(view: V3, wi: V3, alpha):
    """Solid-angle density of wi = reflect(view, h) with h ~ VNDF.

    Zero where the implied half-vector lies below the surface (the cap
    construction never emits those).
    """
    hsum = view + wi
    n = ad.maximum(hsum.norm(), 1e-12)
    h = V3(hsum.x / n, hsum.y / n, hsum.z / n)
    dens = smith_g1(alpha, view.z) * ggx_d(alpha, h.z) / (4.0 * view.z)
    return ad.where(ad.value(h.z) > 0.0, dens, dens * 0.0)


@dataclass
class SamplePair:
    """A primary direction sample and its antithetic partner."""

    primary: V3
    primary_pdf: object
    antithetic: V3
    antithetic_pdf: object


def make_antithetic(view: V3, primary: V3, primary_pdf, pdf_fn) -> SamplePair:
    """Pair `primary` with the sample whose half-vector azimuth is rotated by pi.

    The partner's polar angle matches the primary's; its outgoing direction is
    re-reflected about the rotated half-vector and its pdf recomputed through
    `pdf_fn` (so any lobe mixture stays consistent).
    """
    hsum = view + primary
    h = hsum.normalized()
    h2 = V3(-h.x, -h.y, h.z)
    wi2 = reflect(view, h2)
    return SamplePair(primary, primary_pdf, wi2, pdf_fn(wi2))

"""Environment illumination: tabulated HDR maps, a compact latent decoder, and
spherical-Gaussian approximations.

Maps are latitude-longitude grids with +z up, theta in [0, pi] top-to-bottom
rows, phi in [0, 2pi) columns. Importance sampling picks a texel proportional
to luminance times texel solid angle (a small uniform floor keeps the support
full), then a uniform direction inside the texel, so the per-solid-angle pdf
is exactly P_texel / Omega_texel.

The latent form decodes radiance as exp(mlp(flatten(z) ++ enc(R^T w))) with a
fixed, seeded random MLP; only z and the 6D rotation are ever optimized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import imgio
from .optim import Adam
from .vecmath import RGB, V3, direction_to_spherical, fibonacci_sphere

LUM_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])
SAMPLE_FLOOR = 1e-3  # relative luminance floor so every texel stays sampleable

DECODER_HIDDEN = 128
DECODER_LAYERS = 4
DEFAULT_BANDS = 4
DEFAULT_Z_SHAPE = (49, 3)
DEFAULT_DECODER_SEED = 710


class BlackEnvironmentError(ValueError):
    """The map carries no energy, so importance sampling is undefined."""


# --- tabulated maps -----------------------------------------------------------

class EnvMap:
    """HxWx3 linear radiance grid plus the sampling CDF tables."""

    def __init__(self, radiance):
        radiance = np.asarray(radiance, dtype=np.float64)
        if radiance.ndim != 3 or radiance.shape[2] != 3:
            raise ValueError("EnvMap expects an HxWx3 radiance grid")
        if np.any(radiance < 0) or not np.all(np.isfinite(radiance)):
            raise ValueError("radiance must be finite and >= 0")
        self.radiance = radiance
        h, w = radiance.shape[:2]
        self.h, self.w = h, w
        edges = np.linspace(0.0, np.pi, h + 1)
        self.cos_top = np.cos(edges[:-1])
        self.cos_bot = np.cos(edges[1:])
        omega_row = (self.cos_top - self.cos_bot) * (2.0 * np.pi / w)
        self.omega = np.repeat(omega_row[:, None], w, axis=1)
        lum = radiance @ LUM_WEIGHTS
        self.total_lum = float(lum.sum())
        weight = (lum + SAMPLE_FLOOR * lum.mean()) * self.omega
        wsum = weight.sum()
        if wsum > 0:
            self.pdf_table = (weight / wsum) / self.omega
            row_w = weight.sum(axis=1)
            self.row_cdf = np.cumsum(row_w) / row_w.sum()
            self.row_cdf[-1] = 1.0
            cond = np.cumsum(weight, axis=1)
            cond /= cond[:, -1:]
            cond[:, -1] = 1.0
            self.cond_cdf = cond
        else:
            self.pdf_table = None

    @staticmethod
    def constant(value, h=8, w=16):
        return EnvMap(np.full((h, w, 3), float(value)))

    def save_pfm(self, path):
        imgio.write_pfm(path, self.radiance)

    @staticmethod
    def load_pfm(path):
        return EnvMap(imgio.read_pfm(path))


def _bilinear_latlong(flat_rgb, h, w, d: V3) -> RGB:
    """Bilinear lookup; `flat_rgb` is an (H*W, 3) array or Var so texel
    gradients flow when requested. Direction components may be Vars too."""
    theta, phi = direction_to_spherical(d)
    v = theta * (h / np.pi) - 0.5
    u = phi * (w / (2.0 * np.pi)) - 0.5
    vv, uu = ad.value(v), ad.value(u)
    i0 = np.floor(vv)
    j0 = np.floor(uu)
    fv = v - i0
    fu = u - j0
    i0c = np.clip(i0.astype(np.int64), 0, h - 1)
    i1c = np.clip(i0.astype(np.int64) + 1, 0, h - 1)
    j0w = np.mod(j0.astype(np.int64), w)
    j1w = np.mod(j0.astype(np.int64) + 1, w)
    out = None
    for wj, jj in (((1.0 - fu), j0w), (fu, j1w)):
        for wi, ii in (((1.0 - fv), i0c), (fv, i1c)):
            texel = ad.take(flat_rgb, ii * w + jj)
            weight = wi * wj
            part = RGB(texel[:, 0] * weight, texel[:, 1] * weight, texel[:, 2] * weight)
            out = part if out is None else out + part
    return out


def env_eval_map(env: EnvMap, d: V3, radiance=None) -> RGB:
    """Radiance along d; `radiance` optionally overrides the grid (e.g. a Var)."""
    flat = radiance if radiance is not None else env.radiance.reshape(-1, 3)
    if isinstance(flat, np.ndarray):
        flat = flat.reshape(-1, 3)
    else:
        flat = ad.reshape(flat, (-1, 3))
    return _bilinear_latlong(flat, env.h, env.w, d)


def env_sample(env: EnvMap, u1, u2):
    """Importance-sample directions: returns (V3 dirs, pdf per sr, RGB radiance)."""
    if env.pdf_table is None or env.total_lum <= 0.0:
        raise BlackEnvironmentError("cannot importance-sample a black environment")
    u1 = np.atleast_1d(np.asarray(u1, dtype=np.float64))
    u2 = np.atleast_1d(np.asarray(u2, dtype=np.float64))
    i = np.searchsorted(env.row_cdf, u1, side="right")
    i = np.clip(i, 0, env.h - 1)
    prev = np.where(i > 0, env.row_cdf[i - 1], 0.0)
    res1 = np.clip((u1 - prev) / np.maximum(env.row_cdf[i] - prev, 1e-300), 0.0, 1.0 - 1e-12)
    rows = env.cond_cdf[i]
    j = np.clip((rows < u2[:, None]).sum(axis=1), 0, env.w - 1)
    prev2 = np.where(j > 0, rows[np.arange(len(j)), j - 1], 0.0)
    res2 = np.clip((u2 - prev2) / np.maximum(rows[np.arange(len(j)), j] - prev2, 1e-300),
                   0.0, 1.0 - 1e-12)
    cos_theta = env.cos_top[i] + res1 * (env.cos_bot[i] - env.cos_top[i])
    sin_theta = np.sqrt(np.maximum(0.0, 1.0 - cos_theta ** 2))
    phi = (j + res2) * (2.0 * np.pi / env.w)
    d = V3(sin_theta * np.cos(phi), sin_theta * np.sin(phi), cos_theta)
    return d, env.pdf_table[i, j], env_eval_map(env, d)


def env_pdf(env: EnvMap, d: V3):
    """Per-solid-angle density env_sample would report for direction d."""
    if env.pdf_table is None:
        raise BlackEnvironmentError("black environment has no sampling density")
    theta, phi = direction_to_spherical(d)
    i = np.clip((ad.value(theta) * (env.h / np.pi)).astype(np.int64), 0, env.h - 1)
    j = np.mod((ad.value(phi) * (env.w / (2.0 * np.pi))).astype(np.int64), env.w)
    return env.pdf_table[i, j]


# --- 6D rotations -------------------------------------------------------------

def rot6_columns(rot6):
    """Gram-Schmidt the two stacked 3-vectors into rotation columns (V3 triple)."""
    r = rot6
    a = V3(r[0], r[1], r[2])
    b = V3(r[3], r[4], r[5])
    na = a.norm()
    if np.any(ad.value(na) < 1e-8):
        raise ValueError("rot6 first vector is degenerate")
    c1 = V3(a.x / na, a.y / na, a.z / na)
    proj = b.dot(c1)
    b2 = b - c1.scale(proj)
    nb = b2.norm()
    if np.any(ad.value(nb) < 1e-8):
        raise ValueError("rot6 second vector is parallel to the first")
    c2 = V3(b2.x / nb, b2.y / nb, b2.z / nb)
    c3 = c1.cross(c2)
    return c1, c2, c3


def rot6_to_matrix(rot6):
    """Plain 3x3 rotation matrix (columns from Gram-Schmidt)."""
    c1, c2, c3 = rot6_columns(np.asarray(rot6, dtype=np.float64))
    return np.stack([np.array([c.x, c.y, c.z]) for c in (c1, c2, c3)], axis=1)


IDENTITY_ROT6 = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


# --- latent environments ------------------------------------------------------

_decoder_cache = {}


def decoder_weights(seed, bands=DEFAULT_BANDS, z_size=int(np.prod(DEFAULT_Z_SHAPE)),
                    zero_final=False):
    """Fixed seeded MLP weights [(W, b), ...]; never optimized."""
    key = (seed, bands, z_size, zero_final)
    if key not in _decoder_cache:
        rng = np.random.default_rng(seed)
        in_dim = z_size + 3 + 6 * bands
        dims = [in_dim] + [DECODER_HIDDEN] * DECODER_LAYERS + [3]
        layers = []
        for li in range(len(dims) - 1):
            fan_in = dims[li]
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, dims[li + 1]))
            if li == len(dims) - 2:
                # small head keeps the initial environment near neutral while
                # leaving d(out)/dz useful
                w = w * (0.0 if zero_final else 0.3)
            layers.append((w, np.zeros(dims[li + 1])))
        _decoder_cache[key] = layers
    return _decoder_cache[key]


@dataclass
class EnvLatent:
    """Compact illumination code: z (K x d), a global 6D rotation, decoder seed."""

    z: object = field(default_factory=lambda: np.zeros(DEFAULT_Z_SHAPE))
    rot6: object = field(default_factory=lambda: IDENTITY_ROT6.copy())
    decoder_seed: int = DEFAULT_DECODER_SEED
    bands: int = DEFAULT_BANDS
    zero_final: bool = False

    def save_json(self, path):
        obj = {"z": np.asarray(ad.value(self.z)).tolist(),
               "rot6": np.asarray(ad.value(self.rot6)).tolist(),
               "decoder_seed": self.decoder_seed,
               "bands": self.bands}
        with open(path, "w") as f:
            json.dump(obj, f)

    @staticmethod
    def load_json(path):
        with open(path) as f:
            obj = json.load(f)
        return EnvLatent(np.asarray(obj["z"], dtype=np.float64),
                         np.asarray(obj["rot6"], dtype=np.float64),
                         int(obj["decoder_seed"]), int(obj["bands"]))


def _freq_encode(d: V3, bands):
    cols = [d.x, d.y, d.z]
    for k in range(bands):
        s = float(2 ** k)
        for c in (d.x, d.y, d.z):
            cols.append(ad.sin(c * s))
        for c in (d.x, d.y, d.z):
            cols.append(ad.cos(c * s))
    n = np.shape(ad.value(d.x))[0] if np.ndim(ad.value(d.x)) else 1
    return ad.concat([ad.reshape(c + np.zeros(n), (n, 1)) for c in cols], axis=1)


def env_decode_latent(lat: EnvLatent, d: V3) -> RGB:
    """exp(mlp(flatten(z) ++ enc(R(rot6)^T d))) per channel; strictly positive."""
    c1, c2, c3 = rot6_columns(lat.rot6)
    local = V3(d.dot(c1), d.dot(c2), d.dot(c3))
    enc = _freq_encode(local, lat.bands)
    n = enc.shape[0] if isinstance(enc, np.ndarray) else ad.value(enc).shape[0]
    zflat = ad.reshape(lat.z, (1, -1))
    zsize = int(np.prod(np.shape(ad.value(lat.z))))
    ztile = ad.matmul(np.ones((n, 1)), zflat)
    x = ad.concat([ztile, enc], axis=1)
    layers = decoder_weights(lat.decoder_seed, lat.bands, zsize, lat.zero_final)
    for li, (w, b) in enumerate(layers):
        x = ad.matmul(x, w) + b
        if li < len(layers) - 1:
            x = ad.maximum(x, 0.0)
    return RGB(ad.exp(x[:, 0]), ad.exp(x[:, 1]), ad.exp(x[:, 2]))


def bake_latent_to_map(lat: EnvLatent, h, w) -> EnvMap:
    """Decode texel-center directions into a tabulated map (rebuilds CDFs)."""
    if h < 8 or w < 8:
        raise ValueError("bake resolution must be at least 8x8")
    theta = (np.arange(h) + 0.5) * np.pi / h
    phi = (np.arange(w) + 0.5) * 2.0 * np.pi / w
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    d = V3((np.sin(tt) * np.cos(pp)).reshape(-1),
           (np.sin(tt) * np.sin(pp)).reshape(-1),
           np.cos(tt).reshape(-1))
    plain = EnvLatent(ad.value(lat.z), ad.value(lat.rot6), lat.decoder_seed,
                      lat.bands, lat.zero_final)
    rgb = env_decode_latent(plain, d).values()
    return EnvMap(rgb.reshape(h, w, 3))


# --- spherical Gaussians ------------------------------------------------------

@dataclass
class SGSet:
    """N lobes of (unit axis, sharpness in [1, 1e4], RGB amplitude >= 0)."""

    axes: np.ndarray       # (N, 3)
    sharpness: np.ndarray  # (N,)
    amplitude: np.ndarray  # (N, 3)

    def eval(self, dirs):
        dirs = np.asarray(dirs, dtype=np.float64)
        dots = dirs @ self.axes.T
        return np.exp((dots - 1.0) * self.sharpness) @ self.amplitude

    def save_json(self, path):
        obj = {"axes": self.axes.tolist(), "sharpness": self.sharpness.tolist(),
               "amplitudes": self.amplitude.tolist()}
        with open(path, "w") as f:
            json.dump(obj, f)

    @staticmethod
    def load_json(path):
        with open(path) as f:
            obj = json.load(f)
        return SGSet(np.asarray(obj["axes"], dtype=np.float64),
                     np.asarray(obj["sharpness"], dtype=np.float64),
                     np.asarray(obj["amplitudes"], dtype=np.float64))


SG_SHARP_MIN, SG_SHARP_MAX = 1.0, 1e4


def _sharp_to_raw(lam):
    f = (lam - SG_SHARP_MIN) / (SG_SHARP_MAX - SG_SHARP_MIN)
    return np.log(f / (1.0 - f))


def fit_sg(env: EnvMap, n_lobes, iters=800, lr=5e-2, init_sharpness=5.0):
    """Least-squares SG fit over texel centers; returns (SGSet, rms residual).

    Lobes start broad (sharpness ~5) so distant bright features still pull on
    them; a sharp init has vanishing overlap with off-axis targets and stalls.
    """
    if env.total_lum <= 0.0:
        raise BlackEnvironmentError("cannot fit spherical Gaussians to a black map")
    if not 1 <= n_lobes <= 256:
        raise ValueError("lobe count must be in [1, 256]")
    h, w = env.h, env.w
    theta = (np.arange(h) + 0.5) * np.pi / h
    phi = (np.arange(w) + 0.5) * 2.0 * np.pi / w
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    dirs = np.stack([(np.sin(tt) * np.cos(pp)).reshape(-1),
                     (np.sin(tt) * np.sin(pp)).reshape(-1),
                     np.cos(tt).reshape(-1)], axis=-1)
    target = env.radiance.reshape(-1, 3)
    wts = (env.omega.reshape(-1, 1)) / env.omega.sum()

    axes0 = fibonacci_sphere(n_lobes)
    amp0 = np.maximum(env_eval_map(env, V3.from_array(axes0)).values(), 1e-4)
    params = {
        "axes": axes0.T.copy(),                     # (3, N): dots need no transpose op
        "raw_sharp": np.full(n_lobes, _sharp_to_raw(init_sharpness)),
        "log_amp": np.log(amp0),                    # (N, 3)
    }

    def forward(p):
        ax = p["axes"]
        dots = ad.matmul(dirs, ax)                                   # (T, N)
        norms = ad.reshape(ad.sqrt(ad.vsum(ax * ax, axis=0)), (1, -1))
        cosang = dots / norms
        lam = SG_SHARP_MIN + (SG_SHARP_MAX - SG_SHARP_MIN) * ad.sigmoid(p["raw_sharp"])
        e = ad.exp((cosang - 1.0) * ad.reshape(lam, (1, -1)))
        pred = ad.matmul(e, ad.exp(p["log_amp"]))                    # (T, 3)
        err = pred - target
        return ad.vsum(err * err * wts) / 3.0

    opt = Adam(params, lr=lr)
    for _ in range(iters):
        t = ad.Tape()
        pv = {k: t.param(k, v) for k, v in params.items()}
        loss = forward(pv)
        grads = t.backward(loss)
        opt.step(grads)

    axes = params["axes"].T
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    lam = SG_SHARP_MIN + (SG_SHARP_MAX - SG_SHARP_MIN) / (1.0 + np.exp(-params["raw_sharp"]))
    sgs = SGSet(axes, lam, np.exp(params["log_amp"]))
    resid = sgs.eval(dirs) - target
    rms = float(np.sqrt(np.sum(resid ** 2 * wts) / 3.0))
    return sgs, rms


def demod_probe_dirs(n=256):
    """Fixed probe directions for the neutral-white demodulation regularizer."""
    return fibonacci_sphere(n)

"""3-vector helpers that work for both plain numpy arrays and autodiff Vars.

Components are stored separately so any of them can be a tape node; all
arithmetic routes through :mod:`pbrfit.autodiff` dispatch.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


class V3:
    __slots__ = ("x", "y", "z")

    def __init__(self, x, y, z):
        self.x = x
        self.y = y
        self.z = z

    @staticmethod
    def from_array(a):
        a = np.asarray(a, dtype=np.float64)
        return V3(a[..., 0], a[..., 1], a[..., 2])

    def values(self):
        """Detached (n, 3) array of the component values."""
        xs = np.broadcast_arrays(ad.value(self.x), ad.value(self.y), ad.value(self.z))
        return np.stack(xs, axis=-1)

    def __add__(self, o):
        return V3(self.x + o.x, self.y + o.y, self.z + o.z)

    def __sub__(self, o):
        return V3(self.x - o.x, self.y - o.y, self.z - o.z)

    def __neg__(self):
        return V3(-self.x, -self.y, -self.z)

    def scale(self, s):
        return V3(self.x * s, self.y * s, self.z * s)

    def dot(self, o):
        return self.x * o.x + self.y * o.y + self.z * o.z

    def cross(self, o):
        return V3(self.y * o.z - self.z * o.y,
                  self.z * o.x - self.x * o.z,
                  self.x * o.y - self.y * o.x)

    def norm(self):
        return ad.sqrt(self.dot(self))

    def normalized(self):
        n = self.norm()
        return V3(self.x / n, self.y / n, self.z / n)


class RGB:
    """Color triple with the same Var-or-array component discipline as V3."""

    __slots__ = ("r", "g", "b")

    def __init__(self, r, g, b):
        self.r = r
        self.g = g
        self.b = b

    @staticmethod
    def from_array(a):
        a = np.asarray(a, dtype=np.float64)
        return RGB(a[..., 0], a[..., 1], a[..., 2])

    @staticmethod
    def gray(v):
        return RGB(v, v, v)

    def values(self):
        xs = np.broadcast_arrays(ad.value(self.r), ad.value(self.g), ad.value(self.b))
        return np.stack(xs, axis=-1)

    def __add__(self, o):
        return RGB(self.r + o.r, self.g + o.g, self.b + o.b)

    def __sub__(self, o):
        return RGB(self.r - o.r, self.g - o.g, self.b - o.b)

    def __mul__(self, o):
        if isinstance(o, RGB):
            return RGB(self.r * o.r, self.g * o.g, self.b * o.b)
        return RGB(self.r * o, self.g * o, self.b * o)

    __rmul__ = __mul__

    def scale(self, s):
        return RGB(self.r * s, self.g * s, self.b * s)

    def mean(self):
        return (self.r + self.g + self.b) / 3.0

    def map(self, fn):
        return RGB(fn(self.r), fn(self.g), fn(self.b))


def reflect(w: V3, h: V3) -> V3:
    """Mirror w about the axis h (both unit)."""
    k = w.dot(h) * 2.0
    return V3(h.x * k - w.x, h.y * k - w.y, h.z * k - w.z)


def world_aligned_frame(n: V3):
    """Tangent/bitangent for normal n with the tangent aligned to world x.

    Falls back to world y where n is within ~8 degrees of the x axis; the
    branch is chosen on detached values so it never creates a tape kink.
    """
    nx = ad.value(n.x)
    use_y = np.abs(nx) > 0.99
    ax = np.where(use_y, 0.0, 1.0)
    ay = np.where(use_y, 1.0, 0.0)
    d = n.x * ax + n.y * ay
    t = V3(ax - n.x * d, ay - n.y * d, -n.z * d).normalized()
    b = n.cross(t)
    return t, b


def to_local(t: V3, b: V3, n: V3, w: V3) -> V3:
    return V3(w.dot(t), w.dot(b), w.dot(n))


def to_world(t: V3, b: V3, n: V3, v: V3) -> V3:
    return V3(t.x * v.x + b.x * v.y + n.x * v.z,
              t.y * v.x + b.y * v.y + n.y * v.z,
              t.z * v.x + b.z * v.y + n.z * v.z)


def direction_to_spherical(w: V3):
    """(theta, phi) with +z up, theta in [0, pi], phi in [0, 2pi)."""
    theta = ad.arccos(ad.clip(w.z, -1.0, 1.0))
    phi = ad.arctan2(w.y, w.x)
    phi = ad.where(ad.value(phi) < 0.0, phi + 2.0 * np.pi, phi)
    return theta, phi


def spherical_to_direction(theta, phi) -> V3:
    st = np.sin(theta)
    return V3(st * np.cos(phi), st * np.sin(phi), np.cos(theta))


def fibonacci_sphere(n: int) -> np.ndarray:
    """(n, 3) roughly uniform unit directions."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    phi = golden * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)

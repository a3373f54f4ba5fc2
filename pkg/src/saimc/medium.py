"""Volume and surface coefficients, and the sampling kernels that use them."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._jit import njit

PHASE_KINDS = {"rayleigh": 0, "isotropic": 1}
KERNEL_KINDS = {"lambertian": 0, "uniform": 1}

# volume-scattering modes for leg()
COLLIDE_TOTAL, COLLIDE_SCATTER, NO_COLLISION = 0, 1, 2


@dataclass(frozen=True)
class Region:
    """Axis-aligned box with its own coefficients."""
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    sigma_a: float
    sigma_s: float


@dataclass(frozen=True)
class VolumeCoefficients:
    sigma_a: float = 0.0
    sigma_s: float = 0.0
    regions: tuple = ()
    phase: str = "rayleigh"

    def __post_init__(self):
        for s in [self.sigma_a, self.sigma_s] + [v for r in self.regions for v in (r.sigma_a, r.sigma_s)]:
            if not (s >= 0 and math.isfinite(s)):
                raise ValueError(f"volume coefficients must be finite and nonnegative, got {s}")
        if self.phase not in PHASE_KINDS:
            raise ValueError(f"unknown phase function {self.phase!r}")

    @classmethod
    def from_mfp(cls, mult: float, diameter: float = 2 * math.pi, scatter_ratio: float = 2.0,
                 phase: str = "rayleigh") -> "VolumeCoefficients":
        """sigma = 1/(mult*diameter) split as sigma_s = scatter_ratio * sigma_a; mult=inf gives a void."""
        if not mult > 0:
            raise ValueError(f"mean-free-path multiplier must be positive, got {mult}")
        if math.isinf(mult):
            return cls(0.0, 0.0, (), phase)
        sigma = 1.0 / (mult * diameter)
        sa = sigma / (1.0 + scatter_ratio)
        return cls(sa, sigma - sa, (), phase)

    @property
    def sigma(self) -> float:
        return self.sigma_a + self.sigma_s

    @property
    def is_void(self) -> bool:
        return self.sigma == 0 and all(r.sigma_a + r.sigma_s == 0 for r in self.regions)

    def arrays(self) -> "VolArrays":
        nb = len(self.regions)
        boxes = np.array([[r.xmin, r.xmax, r.ymin, r.ymax] for r in self.regions], dtype=float).reshape(nb, 4)
        sig = np.array([[r.sigma_a, r.sigma_s] for r in self.regions], dtype=float).reshape(nb, 2)
        return VolArrays(np.array([self.sigma_a, self.sigma_s]), boxes, sig, PHASE_KINDS[self.phase])


@dataclass(frozen=True)
class SurfaceMaterial:
    """alpha(x) = alpha + alpha_amp*sin(2 pi x / alpha_period); g0 > 0 marks a detector."""
    alpha: float = 0.0
    alpha_amp: float = 0.0
    alpha_period: float = 0.0
    kernel: str = "lambertian"
    g0: float = 0.0

    def __post_init__(self):
        lo, hi = self.alpha - abs(self.alpha_amp), self.alpha + abs(self.alpha_amp)
        if lo < -1e-12 or hi > 1 + 1e-12:
            raise ValueError(f"albedo must stay in [0, 1], got range [{lo}, {hi}]")
        if self.alpha_amp and not self.alpha_period > 0:
            raise ValueError("oscillating albedo needs a positive period")
        if self.kernel not in KERNEL_KINDS:
            raise ValueError(f"unknown surface kernel {self.kernel!r}")
        if self.g0 < 0:
            raise ValueError("detector weight must be nonnegative")
        if self.g0 > 0 and hi > 0:
            raise ValueError("detector surfaces must be absorbing (alpha = 0)")

    def alpha_at(self, x):
        return alpha_eval(np.array([self.alpha, self.alpha_amp, self.alpha_period]), x)

    def row(self) -> np.ndarray:
        return np.array([self.alpha, self.alpha_amp, self.alpha_period])


@dataclass(frozen=True)
class SourceSpec:
    """Boundary source on the pieces labelled ``material``.

    The density along the boundary is proportional to
    base + amp*sin(2 pi x / period) (x the horizontal coordinate) and the
    direction is fixed.
    """
    material: str
    base: float = 1.0
    amp: float = 0.0
    period: float = 0.0
    direction: tuple = (0.0, -1.0)

    def __post_init__(self):
        if self.base - abs(self.amp) < 0:
            raise ValueError("source profile must be nonnegative")
        if self.amp and not self.period > 0:
            raise ValueError("oscillating source needs a positive period")

    def profile(self, x):
        return src_profile(np.array([self.base, self.amp, self.period, 0.0, 1.0]), x)


class VolArrays(NamedTuple):
    sig: np.ndarray       # (2,) background sigma_a, sigma_s
    boxes: np.ndarray     # (nb, 4)
    box_sig: np.ndarray   # (nb, 2)
    phase: int


# ----------------------------------------------------------------------------
# kernels

INV3PI = 1.0 / (3.0 * math.pi)
INV2PI = 1.0 / (2.0 * math.pi)


@njit
def phase_pdf(kind, mu):
    """Density of the scattering angle on the unit circle; mu = v.v'."""
    if kind == 0:
        return (1.0 + mu * mu) * INV3PI
    return INV2PI


@njit
def phase_max(kind):
    return 2.0 * INV3PI if kind == 0 else INV2PI


@njit
def phase_sample(kind, vx, vy, rng):
    if kind == 0:
        while True:
            th = (2.0 * rng.random() - 1.0) * math.pi
            c = math.cos(th)
            if 2.0 * rng.random() <= 1.0 + c * c:
                break
    else:
        th = (2.0 * rng.random() - 1.0) * math.pi
        c = math.cos(th)
    s = math.sin(th)
    return c * vx - s * vy, s * vx + c * vy


@njit
def kappa_pdf(kind, nx, ny, vx, vy):
    """Outgoing-direction density at a boundary point with outward normal nu."""
    c = -(nx * vx + ny * vy)
    if c <= 0.0:
        return 0.0
    if kind == 0:
        return 0.5 * c
    return 1.0 / math.pi


@njit
def kappa_sample(kind, nx, ny, rng):
    if kind == 0:
        s = 2.0 * rng.random() - 1.0
        c = math.sqrt(max(0.0, 1.0 - s * s))
    else:
        th = (rng.random() - 0.5) * math.pi
        s = math.sin(th)
        c = math.cos(th)
    # rotate the inward normal by asin(s)
    return -c * nx + s * ny, -c * ny - s * nx


@njit
def alpha_eval(row, x):
    a = row[0]
    if row[2] > 0.0:
        a += row[1] * math.sin(2.0 * math.pi * x / row[2])
    return min(max(a, 0.0), 1.0)


@njit
def src_profile(prof, x):
    """Unnormalized source profile; prof = (base, amp, period, fmax, total)."""
    f = prof[0]
    if prof[2] > 0.0:
        f += prof[1] * math.sin(2.0 * math.pi * x / prof[2])
    return max(f, 0.0)


@njit
def sig_at(V, x, y):
    for b in range(V.boxes.shape[0]):
        if V.boxes[b, 0] <= x <= V.boxes[b, 1] and V.boxes[b, 2] <= y <= V.boxes[b, 3]:
            return V.box_sig[b, 0], V.box_sig[b, 1]
    return V.sig[0], V.sig[1]


@njit
def leg(V, x, y, vx, vy, tmax, mode, target):
    """Walk a ray up to tmax and stop where the collision optical depth reaches ``target``.

    mode selects the collision coefficient (total, scattering only, none).
    Returns (t, tau_a, tau_s): t < tmax signals a collision and the optical
    depths are integrated over [0, t].
    """
    nb = V.boxes.shape[0]
    if nb == 0:
        sa = V.sig[0]
        ss = V.sig[1]
        if mode == 0:
            sw = sa + ss
        elif mode == 1:
            sw = ss
        else:
            sw = 0.0
        t = tmax
        if sw > 0.0 and target < sw * tmax:
            t = target / sw
        return t, sa * t, ss * t
    ts = np.empty(2 * nb + 2)
    ts[0] = 0.0
    n = 1
    for b in range(nb):
        lo = -math.inf
        hi = math.inf
        for ax in range(2):
            p = x if ax == 0 else y
            v = vx if ax == 0 else vy
            bmin = V.boxes[b, 2 * ax]
            bmax = V.boxes[b, 2 * ax + 1]
            if v == 0.0:
                if p < bmin or p > bmax:
                    lo = math.inf
            else:
                t1 = (bmin - p) / v
                t2 = (bmax - p) / v
                if t1 > t2:
                    t1, t2 = t2, t1
                lo = max(lo, t1)
                hi = min(hi, t2)
        if lo < hi:
            if 0.0 < lo < tmax:
                ts[n] = lo
                n += 1
            if 0.0 < hi < tmax:
                ts[n] = hi
                n += 1
    ts[n] = tmax
    n += 1
    ts[:n] = np.sort(ts[:n])
    acc = 0.0
    ta = 0.0
    tsc = 0.0
    for k in range(n - 1):
        a = ts[k]
        b = ts[k + 1]
        if b <= a:
            continue
        tm = 0.5 * (a + b)
        sa, ss = sig_at(V, x + tm * vx, y + tm * vy)
        if mode == 0:
            sw = sa + ss
        elif mode == 1:
            sw = ss
        else:
            sw = 0.0
        dl = b - a
        if sw > 0.0 and acc + sw * dl > target:
            dt = (target - acc) / sw
            return a + dt, ta + sa * dt, tsc + ss * dt
        acc += sw * dl
        ta += sa * dl
        tsc += ss * dl
    return tmax, ta, tsc


def optical_depth(volume: VolumeCoefficients, x, y, vx, vy, length):
    """(tau_a, tau_s) along a straight leg."""
    _, ta, ts = leg(volume.arrays(), float(x), float(y), float(vx), float(vy), float(length), NO_COLLISION, 0.0)
    return ta, ts


def sample_free_path(volume: VolumeCoefficients, x, y, vx, vy, tmax, rng, scatter_only=False):
    """Collision distance (or tmax if the ray reaches the boundary)."""
    target = -math.log1p(-rng.random())
    t, _, _ = leg(volume.arrays(), float(x), float(y), float(vx), float(vy), float(tmax),
                  COLLIDE_SCATTER if scatter_only else COLLIDE_TOTAL, target)
    return t

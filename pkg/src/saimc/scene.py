"""A transport problem: meshed boundary, coefficients, source and detector."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .geometry import ARC, GRAPH, LINE, BoundaryMesh, BoundaryProfile, _graph_invert, build_mesh
from .medium import KERNEL_KINDS, SourceSpec, SurfaceMaterial, VolArrays, VolumeCoefficients, alpha_eval, src_profile

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


class SurfArrays(NamedTuple):
    alpha: np.ndarray      # (P, 3) albedo rows
    kernel: np.ndarray     # (P,) surface kernel kind
    g0: np.ndarray         # (P,) detector weight
    seg_alpha: np.ndarray  # (N,) segment-averaged albedo
    src_piece: np.ndarray  # (ns,) source pieces
    src_cdf: np.ndarray    # (ns,) cumulative mass over source pieces
    src_prof: np.ndarray   # (5,) base, amp, period, max, total mass
    src_dir: np.ndarray    # (2,)
    det: np.ndarray        # (6,) detector endpoints a, b and midpoint


def quad_on_piece(profile: BoundaryProfile, k: int, t0: float, t1: float, f, panel: float = 0.01) -> float:
    """Arc-length integral of f(x, y) over [t0, t1] of piece k by composite Gauss-Legendre."""
    pc = profile.pieces[k]
    L = pc.arc_length(t0, t1)
    if L <= 0:
        return 0.0
    n = max(1, int(math.ceil(L / panel)))
    edges = np.linspace(t0, t1, n + 1)
    total = 0.0
    p = pc.params
    for a, b in zip(edges[:-1], edges[1:]):
        ts = 0.5 * (a + b) + 0.5 * (b - a) * _GL_X
        if pc.kind == LINE:
            speed = np.full_like(ts, math.hypot(p[2] - p[0], p[3] - p[1]))
        elif pc.kind == ARC:
            speed = np.full_like(ts, p[2])
        else:
            fp = -3.0 * p[3] * np.cos(ts) ** 2 * np.sin(ts)
            speed = np.sqrt(1 + fp * fp)
        pts = [pc.point(t) for t in ts]
        vals = np.array([f(x, y) for x, y in pts])
        total += 0.5 * (b - a) * float(np.sum(_GL_W * speed * vals))
    return total


@dataclass
class Scene:
    name: str
    profile: BoundaryProfile
    materials: dict
    volume: VolumeCoefficients
    source: SourceSpec
    h: float
    mfp_mult: float = math.inf
    mesh: BoundaryMesh = field(init=False, repr=False)
    surf: SurfArrays = field(init=False, repr=False)
    vol: VolArrays = field(init=False, repr=False)

    def __post_init__(self):
        missing = {p.material for p in self.profile.pieces} - set(self.materials)
        if missing:
            raise ValueError(f"no surface coefficients for materials {sorted(missing)}")
        self.mesh = build_mesh(self.profile, self.h)
        self.vol = self.volume.arrays()
        self.surf = self._surface_arrays()

    # -- construction helpers
    def with_h(self, h: float) -> "Scene":
        return replace(self, h=h)

    def with_volume(self, volume: VolumeCoefficients, mfp_mult: float = math.inf) -> "Scene":
        return replace(self, volume=volume, mfp_mult=mfp_mult)

    def material_of(self, k: int) -> SurfaceMaterial:
        return self.materials[self.profile.pieces[k].material]

    @property
    def detector_pieces(self) -> list[int]:
        return [k for k in range(len(self.profile.pieces)) if self.material_of(k).g0 > 0]

    @property
    def source_pieces(self) -> list[int]:
        return [k for k, p in enumerate(self.profile.pieces) if p.material == self.source.material]

    def _detector_geometry(self) -> np.ndarray:
        det = self.detector_pieces
        if not det:
            raise ValueError("scene has no detector (no material with g0 > 0)")
        P = len(self.profile.pieces)
        # the detector must be one contiguous run of pieces
        runs = sum(1 for k in det if (k - 1) % P not in det)
        if runs != 1:
            raise ValueError("detector pieces must be contiguous")
        first = next(k for k in det if (k - 1) % P not in det)
        last = first
        while (last + 1) % P in det:
            last = (last + 1) % P
        a = self.profile.pieces[first].start()
        b = self.profile.pieces[last].end()
        # midpoint in arc length along the run
        run = [first]
        while run[-1] != last:
            run.append((run[-1] + 1) % P)
        total = sum(self.profile.pieces[k].arc_length() for k in run)
        acc = 0.0
        for k in run:
            pc = self.profile.pieces[k]
            L = pc.arc_length()
            if acc + L >= total / 2:
                lo, hi = pc.t_range
                frac = (total / 2 - acc) / L
                if pc.kind == GRAPH:
                    t = float(_graph_invert(pc.params[3], lo, hi, [total / 2 - acc])[0])
                else:
                    t = lo + frac * (hi - lo)
                m = np.array(pc.point(t))
                break
            acc += L
        return np.array([a[0], a[1], b[0], b[1], m[0], m[1]])

    def _surface_arrays(self) -> SurfArrays:
        prof = self.profile
        P = len(prof.pieces)
        mats = [self.material_of(k) for k in range(P)]
        alpha = np.array([m.row() for m in mats])
        kernel = np.array([KERNEL_KINDS[m.kernel] for m in mats], dtype=np.int64)
        g0 = np.array([m.g0 for m in mats])
        a = self.mesh.arrays
        seg_alpha = np.empty(self.mesh.n)
        for j in range(self.mesh.n):
            k = int(a.seg_piece[j])
            m = mats[k]
            if m.alpha_amp == 0:
                seg_alpha[j] = m.alpha
            else:
                row = alpha[k]
                seg_alpha[j] = quad_on_piece(prof, k, a.seg_t0[j], a.seg_t1[j], lambda x, y: alpha_eval(row, x)) / a.length[j]
        src = self.source_pieces
        if not src:
            raise ValueError(f"source material {self.source.material!r} does not appear on the boundary")
        s = self.source
        profile = np.array([s.base, s.amp, s.period, s.base + abs(s.amp), 1.0])
        masses = np.array([quad_on_piece(prof, k, *prof.pieces[k].t_range, lambda x, y: src_profile(profile, x))
                           for k in src])
        if masses.sum() <= 0:
            raise ValueError("source has zero total mass")
        profile[4] = masses.sum()
        d = np.asarray(s.direction, dtype=float)
        d = d / np.linalg.norm(d)
        for k in src:
            pc = prof.pieces[k]
            for t in np.linspace(*pc.t_range, 9)[1:-1]:
                nx, ny = pc.normal(t)
                if nx * d[0] + ny * d[1] >= 0:
                    raise ValueError("source direction must point into the domain")
        return SurfArrays(alpha, kernel, g0, seg_alpha, np.array(src, dtype=np.int64), np.cumsum(masses) / masses.sum(),
                          profile, d, self._detector_geometry())

    # -- source densities
    def source_density(self, x: float) -> float:
        """Normalized source density per unit boundary length at horizontal coordinate x."""
        return src_profile(self.surf.src_prof, x) / self.surf.src_prof[4]

    def segment_source(self, j: int) -> float:
        """Segment average of the normalized source density (zero off the source)."""
        a = self.mesh.arrays
        k = int(a.seg_piece[j])
        if k not in self.source_pieces:
            return 0.0
        if self.source.amp == 0:
            return self.source.base / self.surf.src_prof[4]
        return quad_on_piece(self.profile, k, a.seg_t0[j], a.seg_t1[j], lambda x, y: self.source_density(x)) / a.length[j]

    def rg(self) -> np.ndarray:
        """Segment averages of the detector response."""
        g0 = self.surf.g0[self.mesh.arrays.seg_piece]
        return np.asarray(g0, dtype=float).copy()

"""Boundary geometry of the 2D domain.

The boundary is a closed counterclockwise chain of pieces (so the domain lies
to the left and outward normals point to the right of the tangent).  Three
piece kinds are supported:

* ``LINE``  (x0, y0, x1, y1), parameter u in [0, 1]
* ``ARC``   (cx, cy, r, th0, th1), parameter theta, domain inside the circle
* ``GRAPH`` (x0, x1, c, amp), the floor y = c + amp*cos(x)**3 traversed left
  to right with the domain above, parameter x

Each piece is split into segments of equal arc length not exceeding ``h``.
Segment midpoints, normals and lengths are taken on the true curve.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._jit import njit

LINE, ARC, GRAPH = 0, 1, 2

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class Piece:
    kind: int
    params: tuple
    material: str

    @staticmethod
    def line(x0, y0, x1, y1, material):
        return Piece(LINE, (float(x0), float(y0), float(x1), float(y1)), material)

    @staticmethod
    def arc(cx, cy, r, th0, th1, material):
        if not th1 > th0:
            raise ValueError("arc pieces run counterclockwise: need th1 > th0")
        return Piece(ARC, (float(cx), float(cy), float(r), float(th0), float(th1)), material)

    @staticmethod
    def cos3(x0, x1, c, amp, material):
        if not x1 > x0:
            raise ValueError("graph pieces run left to right: need x1 > x0")
        return Piece(GRAPH, (float(x0), float(x1), float(c), float(amp)), material)

    @property
    def t_range(self) -> tuple[float, float]:
        p = self.params
        if self.kind == LINE:
            return 0.0, 1.0
        if self.kind == ARC:
            return p[3], p[4]
        return p[0], p[1]

    def point(self, t):
        return piece_point(self.kind, _pad(self.params), t)

    def normal(self, t):
        return piece_normal(self.kind, _pad(self.params), t)

    def start(self):
        return np.array(self.point(self.t_range[0]))

    def end(self):
        return np.array(self.point(self.t_range[1]))

    def arc_length(self, t0=None, t1=None) -> float:
        a, b = self.t_range
        t0 = a if t0 is None else t0
        t1 = b if t1 is None else t1
        p = self.params
        if self.kind == LINE:
            return math.hypot(p[2] - p[0], p[3] - p[1]) * (t1 - t0)
        if self.kind == ARC:
            return p[2] * (t1 - t0)
        return _graph_arclen(p[3], t0, t1)


def _pad(params) -> np.ndarray:
    out = np.zeros(6)
    out[: len(params)] = params
    return out


def _graph_speed(amp, x):
    fp = -3.0 * amp * np.cos(x) ** 2 * np.sin(x)
    return np.sqrt(1.0 + fp * fp)


def _graph_arclen(amp, t0, t1, panels=None) -> float:
    if t1 <= t0:
        return 0.0
    n = panels or max(8, int(math.ceil((t1 - t0) / 0.02)))
    edges = np.linspace(t0, t1, n + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    xs = mid[:, None] + half[:, None] * _GL_X[None, :]
    return float(np.sum(half[:, None] * _GL_W[None, :] * _graph_speed(amp, xs)))


def _graph_invert(amp, x0, x1, targets) -> np.ndarray:
    """x values in [x0, x1] whose arc length from x0 equals ``targets``."""
    # cumulative table on a fine grid, then Newton on the exact integrand
    n = max(64, int(math.ceil((x1 - x0) / 0.005)))
    edges = np.linspace(x0, x1, n + 1)
    cum = np.concatenate([[0.0], np.cumsum([_graph_arclen(amp, a, b, 1) for a, b in zip(edges[:-1], edges[1:])])])
    out = np.empty(len(targets))
    for k, s in enumerate(targets):
        i = int(np.clip(np.searchsorted(cum, s) - 1, 0, n - 1))
        x = edges[i] + (s - cum[i]) / _graph_speed(amp, edges[i])
        x = min(max(x, edges[i]), edges[i + 1])
        for _ in range(30):
            err = cum[i] + _graph_arclen(amp, edges[i], x, 1) - s
            step = err / _graph_speed(amp, x)
            x -= step
            if abs(step) < 1e-15:
                break
        out[k] = min(max(x, x0), x1)
    return out


class BoundaryProfile:
    """Closed counterclockwise boundary made of :class:`Piece` objects."""

    def __init__(self, pieces: Sequence[Piece], name: str = "custom", tol: float = 1e-9):
        if len(pieces) < 2:
            raise ValueError("a closed boundary needs at least two pieces")
        self.pieces = list(pieces)
        self.name = name
        for k, pc in enumerate(self.pieces):
            nxt = self.pieces[(k + 1) % len(self.pieces)]
            gap = np.linalg.norm(pc.end() - nxt.start())
            if gap > tol:
                raise ValueError(f"boundary is not closed between piece {k} and {k + 1} (gap {gap:.3e})")
        if self.signed_area() <= 0:
            raise ValueError("boundary must be oriented counterclockwise around a domain of positive area")

    def signed_area(self) -> float:
        pts = []
        for pc in self.pieces:
            a, b = pc.t_range
            for t in np.linspace(a, b, 64, endpoint=False):
                pts.append(pc.point(t))
        p = np.array(pts)
        return 0.5 * float(np.sum(p[:, 0] * np.roll(p[:, 1], -1) - np.roll(p[:, 0], -1) * p[:, 1]))

    def with_materials(self, mapping: dict) -> "BoundaryProfile":
        return BoundaryProfile([Piece(p.kind, p.params, mapping.get(p.material, p.material)) for p in self.pieces], self.name)

    @property
    def materials(self) -> list[str]:
        return [p.material for p in self.pieces]

    def perimeter(self) -> float:
        return sum(p.arc_length() for p in self.pieces)


class GeomArrays(NamedTuple):
    kind: np.ndarray       # (P,) int64
    par: np.ndarray        # (P, 6)
    bbox: np.ndarray       # (P, 4) xmin, xmax, ymin, ymax
    seg_lo: np.ndarray     # (P,) first segment of each piece
    seg_hi: np.ndarray     # (P,) one past the last segment
    seg_piece: np.ndarray  # (N,) int64
    seg_t0: np.ndarray     # (N,) parameter range of each segment
    seg_t1: np.ndarray
    mid: np.ndarray        # (N, 2)
    nrm: np.ndarray        # (N, 2) outward unit normals at midpoints
    length: np.ndarray     # (N,)


@dataclass
class BoundaryMesh:
    profile: BoundaryProfile
    h: float
    arrays: GeomArrays

    @property
    def n(self) -> int:
        return len(self.arrays.length)

    @property
    def mid(self) -> np.ndarray:
        return self.arrays.mid

    @property
    def normal(self) -> np.ndarray:
        return self.arrays.nrm

    @property
    def length(self) -> np.ndarray:
        return self.arrays.length

    @property
    def seg_piece(self) -> np.ndarray:
        return self.arrays.seg_piece

    def material(self, j: int) -> str:
        return self.profile.pieces[int(self.arrays.seg_piece[j])].material

    def segments_of(self, material: str) -> np.ndarray:
        pcs = [k for k, p in enumerate(self.profile.pieces) if p.material == material]
        return np.flatnonzero(np.isin(self.arrays.seg_piece, pcs))

    def segment_at(self, piece: int, t: float) -> int:
        return int(find_segment(self.arrays, piece, t))

    def locate(self, x: float, y: float) -> tuple[int, float, int]:
        """(piece, parameter, segment) of the boundary point nearest to (x, y)."""
        best = (math.inf, -1, 0.0)
        for k, pc in enumerate(self.profile.pieces):
            t = float(locate_param(pc.kind, self.arrays.par[k], x, y))
            a, b = pc.t_range
            t = min(max(t, a), b)
            px, py = pc.point(t)
            d = math.hypot(px - x, py - y)
            if d < best[0]:
                best = (d, k, t)
        if best[0] > 1e-6:
            raise ValueError(f"point ({x}, {y}) is not on the boundary (distance {best[0]:.3e})")
        return best[1], best[2], self.segment_at(best[1], best[2])

    def to_csv(self, path) -> None:
        a = self.arrays
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "x", "y", "nx", "ny", "length", "material"])
            for j in range(self.n):
                w.writerow([j, repr(float(a.mid[j, 0])), repr(float(a.mid[j, 1])), repr(float(a.nrm[j, 0])),
                            repr(float(a.nrm[j, 1])), repr(float(a.length[j])), self.material(j)])


def build_mesh(profile: BoundaryProfile, h: float, max_h: float | None = None) -> BoundaryMesh:
    """Split every piece into equal arc-length segments of length <= h.

    Pieces are already split where coefficients change, so every support is
    resolved by at least one segment; h may not exceed ``max_h`` (default: the
    longest piece).
    """
    if not (h > 0 and math.isfinite(h)):
        raise ValueError(f"mesh size must be positive, got {h}")
    lengths = [p.arc_length() for p in profile.pieces]
    limit = max(lengths) if max_h is None else max_h
    if h > limit * (1 + 1e-12):
        raise ValueError(f"mesh size {h} exceeds every boundary feature (limit {limit:.4g})")
    P = len(profile.pieces)
    kind = np.array([p.kind for p in profile.pieces], dtype=np.int64)
    par = np.array([_pad(p.params) for p in profile.pieces])
    bbox = np.zeros((P, 4))
    seg_lo = np.zeros(P, dtype=np.int64)
    seg_hi = np.zeros(P, dtype=np.int64)
    t0s, t1s, mids, nrms, lens, owners = [], [], [], [], [], []
    for k, (pc, L) in enumerate(zip(profile.pieces, lengths)):
        n = max(1, int(math.ceil(L / h - 1e-9)))
        a, b = pc.t_range
        s_edges = np.linspace(0.0, L, n + 1)
        s_mids = 0.5 * (s_edges[1:] + s_edges[:-1])
        if pc.kind == GRAPH:
            t_edges = _graph_invert(pc.params[3], a, b, s_edges)
            t_edges[0], t_edges[-1] = a, b
            t_mids = _graph_invert(pc.params[3], a, b, s_mids)
        else:
            t_edges = a + (b - a) * s_edges / L
            t_edges[-1] = b
            t_mids = a + (b - a) * s_mids / L
        seg_lo[k] = len(lens)
        for i in range(n):
            t0s.append(t_edges[i])
            t1s.append(t_edges[i + 1])
            mids.append(pc.point(t_mids[i]))
            nrms.append(pc.normal(t_mids[i]))
            lens.append(L / n)
            owners.append(k)
        seg_hi[k] = len(lens)
        ts = np.linspace(a, b, 257)
        pts = np.array([pc.point(t) for t in ts])
        pad = 1e-9
        if pc.kind == GRAPH:
            amp = pc.params[3]
            c = pc.params[2]
            ylo, yhi = c - abs(amp), c + abs(amp)
            bbox[k] = (a - pad, b + pad, ylo - pad, _graph_ymax(c, amp, a, b) + pad)
        else:
            bbox[k] = (pts[:, 0].min() - pad, pts[:, 0].max() + pad, pts[:, 1].min() - pad, pts[:, 1].max() + pad)
    arrays = GeomArrays(kind, par, bbox, seg_lo, seg_hi, np.array(owners, dtype=np.int64), np.array(t0s),
                        np.array(t1s), np.array(mids, dtype=float), np.array(nrms, dtype=float), np.array(lens))
    return BoundaryMesh(profile, float(h), arrays)


def _graph_ymax(c, amp, a, b) -> float:
    # cos^3 is monotone in cos, so the max over [a, b] is at an endpoint or at a critical point of cos
    cands = [a, b] + [m * math.pi for m in range(int(math.floor(a / math.pi)) - 1, int(math.ceil(b / math.pi)) + 2)
                      if a <= m * math.pi <= b]
    return max(c + amp * math.cos(x) ** 3 for x in cands)


# ----------------------------------------------------------------------------
# kernels


@njit
def graph_f(par, x):
    cx = math.cos(x)
    return par[2] + par[3] * cx * cx * cx


@njit
def graph_fp(par, x):
    cx = math.cos(x)
    return -3.0 * par[3] * cx * cx * math.sin(x)


@njit
def piece_point(kind, par, t):
    if kind == LINE:
        return par[0] + t * (par[2] - par[0]), par[1] + t * (par[3] - par[1])
    if kind == ARC:
        return par[0] + par[2] * math.cos(t), par[1] + par[2] * math.sin(t)
    return t, graph_f(par, t)


@njit
def piece_normal(kind, par, t):
    if kind == LINE:
        dx = par[2] - par[0]
        dy = par[3] - par[1]
        L = math.sqrt(dx * dx + dy * dy)
        return dy / L, -dx / L
    if kind == ARC:
        return math.cos(t), math.sin(t)
    fp = graph_fp(par, t)
    s = math.sqrt(1.0 + fp * fp)
    return fp / s, -1.0 / s


@njit
def locate_param(kind, par, x, y):
    if kind == LINE:
        dx = par[2] - par[0]
        dy = par[3] - par[1]
        return ((x - par[0]) * dx + (y - par[1]) * dy) / (dx * dx + dy * dy)
    if kind == ARC:
        th = math.atan2(y - par[1], x - par[0])
        while th < par[3] - 1e-12:
            th += 2.0 * math.pi
        while th > par[3] + 2.0 * math.pi:
            th -= 2.0 * math.pi
        return th
    return x


@njit
def find_segment(G, piece, t):
    lo = G.seg_lo[piece]
    hi = G.seg_hi[piece] - 1
    while lo < hi:
        m = (lo + hi) // 2
        if G.seg_t1[m] < t:
            lo = m + 1
        else:
            hi = m
    return lo


@njit
def _hit_line(par, x, y, vx, vy, skip_collinear):
    dx = par[2] - par[0]
    dy = par[3] - par[1]
    wx = par[0] - x
    wy = par[1] - y
    if skip_collinear:
        L = math.sqrt(dx * dx + dy * dy)
        if abs(dx * wy - dy * wx) <= 1e-11 * L:
            return math.inf, 0.0
    den = vx * dy - vy * dx
    if den == 0.0:
        return math.inf, 0.0
    t = (wx * dy - wy * dx) / den
    u = (wx * vy - wy * vx) / den
    if t <= 1e-12 or u < -1e-12 or u > 1.0 + 1e-12:
        return math.inf, 0.0
    return t, min(max(u, 0.0), 1.0)


@njit
def _hit_arc(par, x, y, vx, vy):
    wx = x - par[0]
    wy = y - par[1]
    b = wx * vx + wy * vy
    c = wx * wx + wy * wy - par[2] * par[2]
    disc = b * b - c
    if disc < 0.0:
        return math.inf, 0.0
    sq = math.sqrt(disc)
    if b > 0.0:
        t = -c / (b + sq)
    else:
        t = sq - b
    if t <= 1e-12:
        return math.inf, 0.0
    th = math.atan2(y + t * vy - par[1], x + t * vx - par[0])
    while th < par[3] - 1e-12:
        th += 2.0 * math.pi
    while th > par[3] + 2.0 * math.pi - 1e-12:
        th -= 2.0 * math.pi
    if th > par[4] + 1e-12:
        return math.inf, 0.0
    return t, min(max(th, par[3]), par[4])


@njit
def _hit_graph(par, bb, x, y, vx, vy, on_piece):
    # ray parameter window in which the ray is inside the piece's bounding box
    tlo = 0.0
    thi = math.inf
    if vx == 0.0:
        if x < par[0] or x > par[1]:
            return math.inf, 0.0
    else:
        ta = (par[0] - x) / vx
        tb = (par[1] - x) / vx
        if ta > tb:
            ta, tb = tb, ta
        tlo = max(tlo, ta)
        thi = min(thi, tb)
    if vy < 0.0:
        tlo = max(tlo, (y - bb[3]) / (-vy))
    elif vy > 0.0:
        thi = min(thi, (bb[3] - y) / vy)
    elif y > bb[3]:
        return math.inf, 0.0
    if tlo > thi:
        return math.inf, 0.0
    M = 3.0 * abs(par[3]) * vx * vx * (1.0 + 1e-12)
    tol = 1e-14
    if on_piece:
        fp0 = vy - graph_fp(par, x) * vx
        if fp0 <= 0.0 or M == 0.0:
            return math.inf, 0.0
        t = fp0 / M
    else:
        t = tlo
    if t > thi:
        return math.inf, 0.0
    xt = x + t * vx
    F = y + t * vy - graph_f(par, xt)
    if F <= tol:
        if on_piece or F < -1e-9:
            return math.inf, 0.0
        return (t, xt) if t > 1e-12 else (math.inf, 0.0)
    for _ in range(100000):
        Fp = vy - graph_fp(par, xt) * vx
        den = -Fp + math.sqrt(Fp * Fp + 2.0 * M * F)
        if den <= 0.0:
            return math.inf, 0.0
        t += 2.0 * F / den
        if t > thi:
            return math.inf, 0.0
        xt = x + t * vx
        F = y + t * vy - graph_f(par, xt)
        if F <= tol:
            return t, min(max(xt, par[0]), par[1])
    return t, min(max(xt, par[0]), par[1])


@njit
def cast(G, x, y, vx, vy, start_piece):
    """First boundary hit along x + t v, t > 0.

    Returns (t, piece, parameter); piece = -1 if nothing is hit.
    ``start_piece`` is the piece the ray starts on (-1 for interior points).
    """
    best_t = math.inf
    best_p = -1
    best_s = 0.0
    for p in range(len(G.kind)):
        k = G.kind[p]
        if k == LINE:
            if p == start_piece:
                continue
            t, s = _hit_line(G.par[p], x, y, vx, vy, start_piece >= 0)
        elif k == ARC:
            t, s = _hit_arc(G.par[p], x, y, vx, vy)
        else:
            t, s = _hit_graph(G.par[p], G.bbox[p], x, y, vx, vy, p == start_piece)
        if t < best_t:
            best_t = t
            best_p = p
            best_s = s
    return best_t, best_p, best_s


@njit
def surface_jacobian(xi, yi, xj, yj, nx, ny):
    """|nu . (x_i - x_j)| / |x_i - x_j|^2 with nu the normal at x_j (or x_i for the legacy form)."""
    dx = xi - xj
    dy = yi - yj
    d2 = dx * dx + dy * dy
    return abs(nx * dx + ny * dy) / d2


@njit
def visible(G, i, j):
    """Open chord between midpoints i and j lies in the domain and faces both normals."""
    if i == j:
        return False
    dx = G.mid[j, 0] - G.mid[i, 0]
    dy = G.mid[j, 1] - G.mid[i, 1]
    d = math.sqrt(dx * dx + dy * dy)
    if d == 0.0:
        return False
    if G.nrm[i, 0] * dx + G.nrm[i, 1] * dy >= -1e-13 * d:
        return False
    if G.nrm[j, 0] * dx + G.nrm[j, 1] * dy <= 1e-13 * d:
        return False
    t, p, s = cast(G, G.mid[i, 0], G.mid[i, 1], dx / d, dy / d, G.seg_piece[i])
    return t >= d * (1.0 - 1e-9)


@njit
def psi_of(nx, ny, vx, vy):
    """Angle of v measured counterclockwise from the inward normal -nu."""
    cx = -nx
    cy = -ny
    return math.atan2(cx * vy - cy * vx, cx * vx + cy * vy)


@njit
def dir_of(nx, ny, psi):
    """Unit direction at angle psi from the inward normal -nu."""
    c = math.cos(psi)
    s = math.sin(psi)
    # inward n = -nu, left perpendicular of n = (nu_y, -nu_x)
    return -c * nx + s * ny, -c * ny - s * nx


@njit
def row_visible(G, i, idx, psi):
    """Fill idx/psi with visible midpoints from i sorted by angle; returns the count."""
    n = 0
    for j in range(len(G.length)):
        if visible(G, i, j):
            idx[n] = j
            psi[n] = psi_of(G.nrm[i, 0], G.nrm[i, 1], G.mid[j, 0] - G.mid[i, 0], G.mid[j, 1] - G.mid[i, 1])
            n += 1
    order = np.argsort(psi[:n])
    idx[:n] = idx[:n][order]
    psi[:n] = psi[:n][order]
    return n


@njit
def cell_bounds(psi, n, lo, hi):
    """Voronoi-in-angle cells over the inward half plane (-pi/2, pi/2)."""
    for m in range(n):
        lo[m] = -0.5 * math.pi if m == 0 else 0.5 * (psi[m - 1] + psi[m])
        hi[m] = 0.5 * math.pi if m == n - 1 else 0.5 * (psi[m] + psi[m + 1])


@njit
def rotate_frame(vx, vy, nx0, ny0, nx1, ny1):
    """Rotate v by the angle taking normal nu0 to normal nu1."""
    c = nx0 * nx1 + ny0 * ny1
    s = nx0 * ny1 - ny0 * nx1
    return c * vx - s * vy, s * vx + c * vy


# ----------------------------------------------------------------------------
# convenience wrappers


def cast_to_boundary(mesh: BoundaryMesh, x, y, vx, vy, start_piece: int = -1):
    """Python wrapper around :func:`cast` returning (t, piece, param, segment, point)."""
    nv = math.hypot(vx, vy)
    if nv == 0:
        raise ValueError("direction must be nonzero")
    vx, vy = vx / nv, vy / nv
    t, p, s = cast(mesh.arrays, float(x), float(y), vx, vy, int(start_piece))
    if p < 0:
        raise RuntimeError(f"ray from ({x}, {y}) along ({vx}, {vy}) left the domain without a hit")
    return t, int(p), float(s), mesh.segment_at(p, s), (x + t * vx, y + t * vy)


@dataclass
class DirectionCells:
    """Angular cells V_ij of one row: visible targets sorted by angle."""
    row: int
    cols: np.ndarray
    psi: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def measure(self, j: int) -> float:
        k = np.flatnonzero(self.cols == j)
        return float(self.hi[k[0]] - self.lo[k[0]]) if len(k) else 0.0

    def cell_of_angle(self, psi: float) -> int:
        if not len(self.cols) or abs(psi) >= math.pi / 2:
            return -1
        m = int(np.clip(np.searchsorted(self.hi, psi), 0, len(self.cols) - 1))
        return int(self.cols[m])


def direction_cells(mesh: BoundaryMesh, i: int) -> DirectionCells:
    n = mesh.n
    idx = np.zeros(n, dtype=np.int64)
    psi = np.zeros(n)
    m = row_visible(mesh.arrays, i, idx, psi)
    lo = np.zeros(m)
    hi = np.zeros(m)
    cell_bounds(psi, m, lo, hi)
    return DirectionCells(i, idx[:m].copy(), psi[:m].copy(), lo, hi)


def direction_cell(mesh: BoundaryMesh, i: int, v, cells: DirectionCells | None = None) -> int:
    """Index j of the cell V_ij containing direction v at segment i (-1 if v is not inward)."""
    cells = cells or direction_cells(mesh, i)
    nx, ny = mesh.arrays.nrm[i]
    return cells.cell_of_angle(psi_of(nx, ny, v[0], v[1]))

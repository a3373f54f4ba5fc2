"""Surface adjoint problem without volume interactions.

The discrete adjoint phi solves phi = Q phi + Rg on the boundary mesh, where

    Q_ij = alpha_i |dX_j| kappa(x_i, v_ij) J(x_i, x_j) vis(i, j)

and J is the exact surface Jacobian |nu_j . (x_i - x_j)| / |x_i - x_j|^2
(``jacobian="observer"`` swaps nu_j for nu_i).  From phi we build the
sampling tables of the surface chain: per-row angular cells with
probabilities Q_ij phi_j / phi_i, and a source proposal proportional to
s^h times the uncollided importance.
"""
from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from ._jit import njit
from .geometry import cast, cell_bounds, dir_of, find_segment, psi_of, row_visible
from .medium import kappa_pdf
from .scene import Scene

IDENTITY, EXACT = 0, 1
ROTATIONS = {"identity": IDENTITY, "exact": EXACT}
JACOBIANS = ("exact", "observer")
DIRECT_LIMIT = 8000
HALF_PI = 0.5 * math.pi


class SaiArrays(NamedTuple):
    row_ptr: np.ndarray
    col: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    cum: np.ndarray
    cont: np.ndarray
    stop: np.ndarray
    phi: np.ndarray
    rot: int
    sc_lo: np.ndarray
    sc_hi: np.ndarray
    sc_piece: np.ndarray
    sc_t0: np.ndarray
    sc_t1: np.ndarray
    sc_cum: np.ndarray
    sc_logp0: np.ndarray


def empty_sai_arrays(n_pieces: int = 1) -> SaiArrays:
    """Placeholder tables for chains that never evaluate the surface chain."""
    z = np.zeros(0)
    zi = np.zeros(0, dtype=np.int64)
    pz = np.zeros(n_pieces, dtype=np.int64)
    return SaiArrays(np.zeros(1, dtype=np.int64), zi, z, z, z, z, z, z, IDENTITY, pz, pz, zi, z, z, z, z)


@njit
def _row_q(G, i, alpha_i, kernel_i, legacy, idx, psi, lo, hi, q):
    n = row_visible(G, i, idx, psi)
    cell_bounds(psi, n, lo, hi)
    xi = G.mid[i, 0]
    yi = G.mid[i, 1]
    for m in range(n):
        j = idx[m]
        dx = xi - G.mid[j, 0]
        dy = yi - G.mid[j, 1]
        d2 = dx * dx + dy * dy
        d = math.sqrt(d2)
        kap = kappa_pdf(kernel_i, G.nrm[i, 0], G.nrm[i, 1], -dx / d, -dy / d)
        if legacy:
            J = abs(G.nrm[i, 0] * dx + G.nrm[i, 1] * dy) / d2
        else:
            J = abs(G.nrm[j, 0] * dx + G.nrm[j, 1] * dy) / d2
        q[m] = alpha_i * G.length[j] * kap * J
    return n


@dataclass
class CellTables:
    """Per-row angular cells in angle order (CSR layout)."""
    row_ptr: np.ndarray
    col: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    q: np.ndarray

    def row(self, i: int) -> slice:
        return slice(int(self.row_ptr[i]), int(self.row_ptr[i + 1]))


def assemble_Q(scene: Scene, jacobian: str = "exact") -> tuple[sp.csr_matrix, CellTables]:
    """Sparse Q and the angular cells of every row with positive albedo."""
    if jacobian not in JACOBIANS:
        raise ValueError(f"jacobian must be one of {JACOBIANS}, got {jacobian!r}")
    G = scene.mesh.arrays
    N = scene.mesh.n
    legacy = jacobian == "observer"
    idx = np.zeros(N, dtype=np.int64)
    psi = np.zeros(N)
    lo = np.zeros(N)
    hi = np.zeros(N)
    q = np.zeros(N)
    row_ptr = np.zeros(N + 1, dtype=np.int64)
    cols, los, his, qs = [], [], [], []
    kernel = scene.surf.kernel[G.seg_piece]
    for i in range(N):
        a = scene.surf.seg_alpha[i]
        n = 0
        if a > 0:
            n = _row_q(G, i, a, kernel[i], legacy, idx, psi, lo, hi, q)
            cols.append(idx[:n].copy())
            los.append(lo[:n].copy())
            his.append(hi[:n].copy())
            qs.append(q[:n].copy())
        row_ptr[i + 1] = row_ptr[i] + n
    cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt))
    cells = CellTables(row_ptr, cat(cols, np.int64), cat(los, float), cat(his, float), cat(qs, float))
    # copies: csr_matrix may share the buffers and sort_indices would reorder them in place
    Q = sp.csr_matrix((cells.q.copy(), cells.col.copy(), cells.row_ptr.copy()), shape=(N, N))
    Q.sum_duplicates()
    Q.sort_indices()
    return Q, cells


def solve_phi(Q, rg, method: str = "direct", k: int | None = None, tol: float = 1e-15, max_iter: int = 100000):
    """Solve phi = Q phi + rg.

    ``method="neumann"`` with ``k`` returns the k-term partial sum
    sum_{n<k} Q^n rg; without ``k`` it iterates to convergence.  The direct
    method works on the rows that actually scatter and falls back to Neumann
    iteration above ``DIRECT_LIMIT`` unknowns.
    """
    Q = sp.csr_matrix(Q)
    rg = np.asarray(rg, dtype=float)
    N = Q.shape[0]
    if Q.shape != (N, N) or rg.shape != (N,):
        raise ValueError("Q must be square and match rg")
    if np.any(Q.data < 0) or np.any(rg < 0):
        raise ValueError("Q and rg must be nonnegative")
    qnorm = float(np.abs(Q).sum(axis=1).max()) if Q.nnz else 0.0
    if method == "neumann" or (method == "direct" and _active_rows(Q).size > DIRECT_LIMIT):
        if method == "direct":
            warnings.warn("system too large for a dense solve, using Neumann iteration", RuntimeWarning)
        if k is not None:
            term = rg.copy()
            phi = np.zeros(N)
            for _ in range(k):
                phi += term
                term = Q @ term
            return phi
        if qnorm >= 1:
            warnings.warn(f"||Q||_inf = {qnorm:.6f} >= 1; Neumann iteration may not converge", RuntimeWarning)
        phi = rg.copy()
        for _ in range(max_iter):
            new = Q @ phi + rg
            if np.max(np.abs(new - phi)) <= tol * max(1.0, np.max(np.abs(new))):
                return new
            phi = new
        raise RuntimeError("Neumann iteration did not converge")
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    S = _active_rows(Q)
    phi = rg.copy()
    if S.size == 0:
        return phi
    QS = Q[S]
    other = np.setdiff1d(np.arange(N), S)
    A = np.eye(S.size) - QS[:, S].toarray()
    b = rg[S] + QS[:, other] @ rg[other]
    lu = scipy.linalg.lu_factor(A)
    x = scipy.linalg.lu_solve(lu, b)
    for _ in range(3):
        phi[S] = x
        r = Q @ phi + rg - phi
        if np.all(np.abs(r[S]) <= 1e-16 * np.maximum(phi[S], 1e-300)):
            break
        x = x + scipy.linalg.lu_solve(lu, r[S])
    phi[S] = np.maximum(x, 0.0)
    return phi


def _active_rows(Q) -> np.ndarray:
    return np.flatnonzero(np.diff(Q.indptr) > 0)


@dataclass
class AdjointField:
    scene: Scene
    jacobian: str
    Q: sp.csr_matrix
    rg: np.ndarray
    phi: np.ndarray
    cells: CellTables
    seconds: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def q_norm(self) -> float:
        return float(self.Q.sum(axis=1).max()) if self.Q.nnz else 0.0

    def row_pdf(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """(targets, probabilities Q_ij phi_j / phi_i) of row i."""
        sl = self.cells.row(i)
        cols = self.cells.col[sl]
        if self.phi[i] <= 0:
            return cols, np.zeros(len(cols))
        return cols, self.cells.q[sl] * self.phi[cols] / self.phi[i]

    def identity_error(self) -> float:
        """max_i |sum_j P_ij + Rg_i/phi_i - 1| over rows with phi_i > 0."""
        err = 0.0
        for i in np.flatnonzero(self.phi > 0):
            _, p = self.row_pdf(i)
            err = max(err, abs(p.sum() + self.rg[i] / self.phi[i] - 1.0))
        return err

    def to_csv(self, path) -> None:
        mid = self.scene.mesh.mid
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "x", "y", "phi"])
            for j in range(len(self.phi)):
                w.writerow([j, repr(float(mid[j, 0])), repr(float(mid[j, 1])), repr(float(self.phi[j]))])


def surface_adjoint(scene: Scene, jacobian: str = "exact", method: str = "direct", k: int | None = None) -> AdjointField:
    t0 = time.perf_counter()
    Q, cells = assemble_Q(scene, jacobian)
    rg = scene.rg()
    phi = solve_phi(Q, rg, method, k)
    seconds = time.perf_counter() - t0
    scat = scene.surf.seg_alpha > 0
    diag = {
        "q_norm": float(Q.sum(axis=1).max()) if Q.nnz else 0.0,
        "n_segments": scene.mesh.n,
        "n_scattering": int(scat.sum()),
        "dead_rows": int(np.sum(scat & (phi <= 0))),
        "nnz": int(Q.nnz),
    }
    return AdjointField(scene, jacobian, Q, rg, phi, cells, seconds, diag)


# ----------------------------------------------------------------------------
# sampling tables


@dataclass
class SaiTables:
    field: AdjointField
    rotation: str
    arrays: SaiArrays
    estimate: float
    seconds: float
    cells: list = field(default_factory=list)


def _hit_segment(G, k, pc, t, d) -> int:
    x, y = pc.point(t)
    tt, p, s = cast(G, x, y, d[0], d[1], k)
    return -1 if p < 0 else int(find_segment(G, p, s))


def _split_source(G, k, pc, a, b, d, sa, sb, out, depth=0):
    """Append (ta, tb, hit) cells covering [a, b] on which the hit segment is constant."""
    if sa == sb:
        out.append([a, b, sa])
        return
    if b - a < 1e-13 or depth > 60:
        out.append([a, b, sa])
        return
    m = 0.5 * (a + b)
    sm = _hit_segment(G, k, pc, m, d)
    _split_source(G, k, pc, a, m, d, sa, sm, out, depth + 1)
    _split_source(G, k, pc, m, b, d, sm, sb, out, depth + 1)


def source_cells(scene: Scene) -> list:
    """Source sub-cells (piece, t0, t1, source segment, hit segment, length)."""
    G = scene.mesh.arrays
    d = scene.surf.src_dir
    cells = []
    for k in scene.source_pieces:
        pc = scene.profile.pieces[k]
        L = pc.arc_length()
        ta, tb = pc.t_range
        for j in range(int(G.seg_lo[k]), int(G.seg_hi[k])):
            t0, t1 = float(G.seg_t0[j]), float(G.seg_t1[j])
            eps = 1e-12 * (t1 - t0)
            out = []
            _split_source(G, k, pc, t0, t1, d, _hit_segment(G, k, pc, t0 + eps, d), _hit_segment(G, k, pc, t1 - eps, d), out)
            merged = [out[0]]
            for c in out[1:]:
                if c[2] == merged[-1][2]:
                    merged[-1][1] = c[1]
                else:
                    merged.append(c)
            for c0, c1, hit in merged:
                cells.append((k, c0, c1, j, hit, L * (c1 - c0) / (tb - ta)))
    return cells


def build_sai_tables(fld: AdjointField, rotation: str = "identity") -> SaiTables:
    if rotation not in ROTATIONS:
        raise ValueError(f"rotation must be one of {tuple(ROTATIONS)}, got {rotation!r}")
    t0 = time.perf_counter()
    scene = fld.scene
    N = scene.mesh.n
    P = len(scene.profile.pieces)
    cells = fld.cells
    phi = fld.phi
    cum = np.zeros(len(cells.q))
    cont = np.zeros(N)
    stop = np.zeros(N)
    pos = phi > 0
    stop[pos] = np.clip(fld.rg[pos] / phi[pos], 0.0, 1.0)
    for i in range(N):
        sl = cells.row(i)
        if sl.stop == sl.start or phi[i] <= 0:
            continue
        p = cells.q[sl] * phi[cells.col[sl]] / phi[i]
        tot = p.sum()
        if tot <= 0:
            continue
        c = np.cumsum(p) / tot
        c[-1] = 1.0
        cum[sl] = c
        cont[i] = 1.0 - stop[i]
    sc = source_cells(scene)
    sh = np.array([scene.segment_source(c[3]) for c in sc])
    psi_bar = np.array([phi[c[4]] if c[4] >= 0 else 0.0 for c in sc])
    lens = np.array([c[5] for c in sc])
    w = sh * lens * psi_bar
    Z = float(w.sum())
    if Z <= 0:
        raise ValueError("no source point sees positive importance; the surface chain cannot be sampled")
    sc_piece = np.array([c[0] for c in sc], dtype=np.int64)
    order_ok = np.all(np.diff(sc_piece) >= 0)
    assert order_ok
    sc_lo = np.zeros(P, dtype=np.int64)
    sc_hi = np.zeros(P, dtype=np.int64)
    for k in range(P):
        hits = np.flatnonzero(sc_piece == k)
        if hits.size:
            sc_lo[k], sc_hi[k] = hits[0], hits[-1] + 1
    with np.errstate(divide="ignore"):
        logp0 = np.log(w / (Z * lens))
    sc_cum = np.cumsum(w) / Z
    sc_cum[-1] = 1.0
    arr = SaiArrays(cells.row_ptr, cells.col, cells.lo, cells.hi, cum, cont, stop, phi.copy(), ROTATIONS[rotation],
                    sc_lo, sc_hi, sc_piece, np.array([c[1] for c in sc]), np.array([c[2] for c in sc]), sc_cum, logp0)
    return SaiTables(fld, rotation, arr, Z, time.perf_counter() - t0, sc)


def deterministic_estimate(tables: SaiTables) -> float:
    """<s^h, psi_o^h>: the surface-only answer implied by the discrete adjoint."""
    return tables.estimate


def eval_importance(fld: AdjointField, x, y, vx=None, vy=None, which: str = "incoming") -> float:
    """Piecewise-constant importance at a boundary point (incoming) or along a ray (outgoing)."""
    mesh = fld.scene.mesh
    if which == "incoming":
        _, _, j = mesh.locate(x, y)
        return float(fld.phi[j])
    if which != "outgoing":
        raise ValueError("which must be 'incoming' or 'outgoing'")
    nv = math.hypot(vx, vy)
    start = -1
    try:
        start = mesh.locate(x, y)[0]
    except ValueError:
        pass
    t, p, s = cast(mesh.arrays, float(x), float(y), vx / nv, vy / nv, start)
    if p < 0:
        return 0.0
    return float(fld.phi[find_segment(mesh.arrays, p, s)])


# ----------------------------------------------------------------------------
# kernels used by the chains


@njit
def _row_cdf(T, i, psi):
    a = T.row_ptr[i]
    b = T.row_ptr[i + 1]
    if psi <= -HALF_PI:
        return 0.0
    if psi >= HALF_PI:
        return 1.0
    lo = a
    hi = b - 1
    while lo < hi:
        m = (lo + hi) // 2
        if T.hi[m] < psi:
            lo = m + 1
        else:
            hi = m
    c0 = T.cum[lo - 1] if lo > a else 0.0
    w = T.hi[lo] - T.lo[lo]
    f = 1.0 if w <= 0.0 else min(max((psi - T.lo[lo]) / w, 0.0), 1.0)
    return c0 + (T.cum[lo] - c0) * f


@njit
def _frame(G, T, i, nx, ny):
    if T.rot == EXACT:
        return nx, ny, -HALF_PI, HALF_PI
    fx = G.nrm[i, 0]
    fy = G.nrm[i, 1]
    delta = psi_of(fx, fy, -nx, -ny)
    return fx, fy, max(-HALF_PI, delta - HALF_PI), min(HALF_PI, delta + HALF_PI)


@njit
def sai_sample(G, T, i, nx, ny, rng):
    """Direction from the surface chain at a point of segment i with outward normal nu.

    Returns (vx, vy, density, truncated); density 0 means the chain dies.
    """
    if T.cont[i] <= 0.0:
        return 0.0, 0.0, 0.0, False
    fx, fy, a, b = _frame(G, T, i, nx, ny)
    Fa = _row_cdf(T, i, a)
    Fb = _row_cdf(T, i, b)
    mass = Fb - Fa
    if mass <= 0.0:
        return 0.0, 0.0, 0.0, True
    u = Fa + rng.random() * mass
    r0 = T.row_ptr[i]
    lo = r0
    hi = T.row_ptr[i + 1] - 1
    while lo < hi:
        m = (lo + hi) // 2
        if T.cum[m] <= u:
            lo = m + 1
        else:
            hi = m
    c0 = T.cum[lo - 1] if lo > r0 else 0.0
    while T.cum[lo] - c0 <= 0.0 and lo > r0:
        lo -= 1
        c0 = T.cum[lo - 1] if lo > r0 else 0.0
    p = T.cum[lo] - c0
    w = T.hi[lo] - T.lo[lo]
    psi = T.lo[lo] + min(max((u - c0) / p, 0.0), 1.0) * w
    psi = min(max(psi, a), b)
    vx, vy = dir_of(fx, fy, psi)
    dens = T.cont[i] * p / w / mass if w > 0.0 else 0.0
    return vx, vy, dens, mass < 1.0 - 1e-15


@njit
def sai_pdf(G, T, i, nx, ny, vx, vy):
    """Density of direction v under the surface chain at a point of segment i."""
    if T.cont[i] <= 0.0:
        return 0.0
    fx, fy, a, b = _frame(G, T, i, nx, ny)
    psi = psi_of(fx, fy, vx, vy)
    if psi < a or psi > b:
        return 0.0
    mass = _row_cdf(T, i, b) - _row_cdf(T, i, a)
    if mass <= 0.0:
        return 0.0
    r0 = T.row_ptr[i]
    lo = r0
    hi = T.row_ptr[i + 1] - 1
    while lo < hi:
        m = (lo + hi) // 2
        if T.hi[m] < psi:
            lo = m + 1
        else:
            hi = m
    c0 = T.cum[lo - 1] if lo > r0 else 0.0
    w = T.hi[lo] - T.lo[lo]
    if w <= 0.0:
        return 0.0
    return T.cont[i] * (T.cum[lo] - c0) / w / mass


@njit
def source_logp0(T, piece, t):
    a = T.sc_lo[piece]
    b = T.sc_hi[piece]
    if b <= a:
        return -math.inf
    lo = a
    hi = b - 1
    while lo < hi:
        m = (lo + hi) // 2
        if T.sc_t1[m] < t:
            lo = m + 1
        else:
            hi = m
    return T.sc_logp0[lo]


@njit
def source_sample(T, rng):
    u = rng.random()
    lo = 0
    hi = len(T.sc_cum) - 1
    while lo < hi:
        m = (lo + hi) // 2
        if T.sc_cum[m] <= u:
            lo = m + 1
        else:
            hi = m
    t = T.sc_t0[lo] + rng.random() * (T.sc_t1[lo] - T.sc_t0[lo])
    return T.sc_piece[lo], t, T.sc_logp0[lo]

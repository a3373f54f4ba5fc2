"""Monte Carlo path kernels: analog, survival biasing, heuristic and SAI chains.

Every non-analog chain keeps the log Radon-Nikodym factors of the sampled
path against the survival-biasing measure:

* ``la_sb``  = log dPa/dPsb   (absorption optical depths and albedos)
* ``lhe_sb`` = log dPheu/dPsb (heuristic direction factors)
* ``lsb_h``  = log dPsb/dPh   (+inf when the surface chain cannot produce the path)

so that ``xi_sb = g exp(la_sb)``, ``xi_heu = g exp(la_sb - lhe_sb)`` and the
SAI mixture weight follows from ``log dPa/dPh = la_sb + lsb_h``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .geometry import cast, find_segment, piece_normal, piece_point
from .medium import (COLLIDE_SCATTER, COLLIDE_TOTAL, NO_COLLISION, alpha_eval, kappa_pdf, kappa_sample, leg,
                     phase_max, phase_pdf, phase_sample, sig_at, src_profile)
from .radiosity import SaiArrays, empty_sai_arrays, sai_pdf, sai_sample, source_logp0, source_sample

CHAINS = ("analog", "sb", "heu", "sai")
KIND = {name: k for k, name in enumerate(CHAINS)}

# path flags
HIT, VOLUME, CAPPED, LOST, SURFACE_BRANCH, TRUNCATED, DEAD = 1, 2, 4, 8, 16, 32, 64

# trace event types
EV_SOURCE, EV_VOLUME, EV_BOUNCE, EV_DETECT, EV_DEATH = 0, 1, 2, 3, 4

NEG_INF = -math.inf


@njit
def _log(x):
    return math.log(x) if x > 0.0 else -math.inf


@njit
def _logaddexp(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))


@njit
def _trange(kind, par):
    if kind == 0:
        return 0.0, 1.0
    if kind == 1:
        return par[3], par[4]
    return par[0], par[1]


@njit
def _record(ev, n, typ, x, y, vx, vy, seg, fa, fh):
    if n < ev.shape[0]:
        ev[n, 0] = typ
        ev[n, 1] = x
        ev[n, 2] = y
        ev[n, 3] = vx
        ev[n, 4] = vy
        ev[n, 5] = seg
        ev[n, 6] = fa
        ev[n, 7] = fh
    return n + 1


@njit
def _sample_source(G, S, rng):
    u = rng.random()
    k = 0
    while k < len(S.src_cdf) - 1 and S.src_cdf[k] <= u:
        k += 1
    p = S.src_piece[k]
    a, b = _trange(G.kind[p], G.par[p])
    while True:
        t = a + rng.random() * (b - a)
        x, y = piece_point(G.kind[p], G.par[p], t)
        if rng.random() * S.src_prof[3] <= src_profile(S.src_prof, x):
            return p, t, x, y


@njit
def _log_src(S, x):
    return _log(src_profile(S.src_prof, x) / S.src_prof[4])


@njit
def _angle_in(th, tha, w):
    d = th - tha
    while d > math.pi:
        d -= 2.0 * math.pi
    while d <= -math.pi:
        d += 2.0 * math.pi
    if w >= 0.0:
        return 0.0 <= d <= w
    return w <= d <= 0.0


@njit
def analog_shot(G, S, V, rng, cap, ev):
    """One analog path. Returns (score, events, flags)."""
    p, t, x, y = _sample_source(G, S, rng)
    vx = S.src_dir[0]
    vy = S.src_dir[1]
    start = p
    tau = 0
    flags = 0
    ne = _record(ev, 0, EV_SOURCE, x, y, vx, vy, -1, 0.0, 0.0)
    while True:
        tb, pb, sb = cast(G, x, y, vx, vy, start)
        if pb < 0:
            return 0.0, tau, flags | LOST
        tl, ta, ts = leg(V, x, y, vx, vy, tb, COLLIDE_TOTAL, -math.log1p(-rng.random()))
        tau += 1
        if tau > cap:
            return 0.0, tau, flags | CAPPED
        if tl < tb:
            flags |= VOLUME
            x += tl * vx
            y += tl * vy
            start = -1
            sa, ss = sig_at(V, x, y)
            if rng.random() * (sa + ss) < sa:
                ne = _record(ev, ne, EV_DEATH, x, y, vx, vy, -1, 0.0, 0.0)
                return 0.0, tau, flags
            vx, vy = phase_sample(V.phase, vx, vy, rng)
            ne = _record(ev, ne, EV_VOLUME, x, y, vx, vy, -1, 0.0, 0.0)
        else:
            x, y = piece_point(G.kind[pb], G.par[pb], sb)
            g = S.g0[pb]
            if g > 0.0:
                ne = _record(ev, ne, EV_DETECT, x, y, vx, vy, find_segment(G, pb, sb), 0.0, 0.0)
                return g, tau, flags | HIT
            a = alpha_eval(S.alpha[pb], x)
            if rng.random() >= a:
                ne = _record(ev, ne, EV_DEATH, x, y, vx, vy, find_segment(G, pb, sb), 0.0, 0.0)
                return 0.0, tau, flags
            nx, ny = piece_normal(G.kind[pb], G.par[pb], sb)
            vx, vy = kappa_sample(S.kernel[pb], nx, ny, rng)
            ne = _record(ev, ne, EV_BOUNCE, x, y, vx, vy, find_segment(G, pb, sb), 0.0, 0.0)
            start = pb


@njit
def _heuristic_direction(S, V, x, y, vx, vy, q_v, rng):
    """New direction after a volume scattering and log of its density ratio against p."""
    mx = S.det[4] - x
    my = S.det[5] - y
    dm = math.sqrt(mx * mx + my * my)
    q = 1.0
    if q_v != 1.0 and dm > 0.0:
        mu = (vx * mx + vy * my) / dm
        q = (q_v - 1.0) * phase_pdf(V.phase, mu) / phase_max(V.phase) + 1.0
    tha = math.atan2(S.det[1] - y, S.det[0] - x)
    thb = math.atan2(S.det[3] - y, S.det[2] - x)
    w = thb - tha
    while w > math.pi:
        w -= 2.0 * math.pi
    while w <= -math.pi:
        w += 2.0 * math.pi
    if abs(w) < 1e-300:
        q = 1.0
    if q < 1.0 and rng.random() < 1.0 - q:
        th = tha + rng.random() * w
        nx = math.cos(th)
        ny = math.sin(th)
    else:
        nx, ny = phase_sample(V.phase, vx, vy, rng)
    pv = phase_pdf(V.phase, vx * nx + vy * ny)
    if q >= 1.0:
        return nx, ny, 0.0
    fv = 0.0
    if _angle_in(math.atan2(ny, nx), tha, w):
        fv = 1.0 / abs(w)
    return nx, ny, math.log(((1.0 - q) * fv + q * pv) / pv)


@njit
def biased_shot(G, S, V, T, rng, q_v, track_h, cap, ev, out):
    """Survival-biasing path with heuristic volume directions (q_v = 1 is plain survival biasing).

    out receives (la_sb, lhe_sb, lsb_h); returns (g, events, flags).
    """
    p, t, x, y = _sample_source(G, S, rng)
    flags = 0
    la_sb = 0.0
    lhe_sb = 0.0
    lsb_h = math.inf
    h_ok = track_h
    if h_ok:
        lp0 = source_logp0(T, p, t)
        if lp0 == -math.inf:
            h_ok = False
        else:
            lsb_h = _log_src(S, x) - lp0
    vx = S.src_dir[0]
    vy = S.src_dir[1]
    start = p
    tau = 0
    g = 0.0
    ne = _record(ev, 0, EV_SOURCE, x, y, vx, vy, -1, 0.0, lsb_h)
    while True:
        tb, pb, sb = cast(G, x, y, vx, vy, start)
        if pb < 0:
            flags |= LOST
            break
        tl, ta, ts = leg(V, x, y, vx, vy, tb, COLLIDE_SCATTER, -math.log1p(-rng.random()))
        tau += 1
        la_sb -= ta
        if h_ok:
            lsb_h -= ts
        if tau > cap:
            flags |= CAPPED
            break
        if tl < tb:
            flags |= VOLUME
            h_ok = False
            x += tl * vx
            y += tl * vy
            start = -1
            vx, vy, lr = _heuristic_direction(S, V, x, y, vx, vy, q_v, rng)
            lhe_sb += lr
            ne = _record(ev, ne, EV_VOLUME, x, y, vx, vy, -1, -ta, lr)
            continue
        x, y = piece_point(G.kind[pb], G.par[pb], sb)
        j = find_segment(G, pb, sb)
        if S.g0[pb] > 0.0:
            g = S.g0[pb]
            flags |= HIT
            if h_ok:
                lsb_h -= _log(T.stop[j])
            ne = _record(ev, ne, EV_DETECT, x, y, vx, vy, j, -ta, 0.0)
            break
        a = alpha_eval(S.alpha[pb], x)
        if a <= 0.0:
            ne = _record(ev, ne, EV_DEATH, x, y, vx, vy, j, -ta, 0.0)
            break
        la_sb += math.log(a)
        nx, ny = piece_normal(G.kind[pb], G.par[pb], sb)
        vx, vy = kappa_sample(S.kernel[pb], nx, ny, rng)
        fh = 0.0
        if h_ok:
            kh = sai_pdf(G, T, j, nx, ny, vx, vy)
            if kh <= 0.0:
                h_ok = False
            else:
                fh = math.log(kappa_pdf(S.kernel[pb], nx, ny, vx, vy)) - math.log(kh)
                lsb_h += fh
        ne = _record(ev, ne, EV_BOUNCE, x, y, vx, vy, j, math.log(a) - ta, fh)
        start = pb
    out[0] = la_sb
    out[1] = lhe_sb
    out[2] = lsb_h if h_ok else math.inf
    return g, tau, flags


@njit
def surface_shot(G, S, V, T, rng, cap, ev, out):
    """Path of the surface chain: source from p0, directions from the adjoint tables."""
    p, t, lp0 = source_sample(T, rng)
    x, y = piece_point(G.kind[p], G.par[p], t)
    la_sb = 0.0
    lsb_h = _log_src(S, x) - lp0
    vx = S.src_dir[0]
    vy = S.src_dir[1]
    start = p
    tau = 0
    g = 0.0
    flags = SURFACE_BRANCH
    ne = _record(ev, 0, EV_SOURCE, x, y, vx, vy, -1, 0.0, lsb_h)
    while True:
        tb, pb, sb = cast(G, x, y, vx, vy, start)
        if pb < 0:
            flags |= LOST
            break
        _, ta, ts = leg(V, x, y, vx, vy, tb, NO_COLLISION, 0.0)
        tau += 1
        la_sb -= ta
        lsb_h -= ts
        if tau > cap:
            flags |= CAPPED
            break
        x, y = piece_point(G.kind[pb], G.par[pb], sb)
        j = find_segment(G, pb, sb)
        if S.g0[pb] > 0.0:
            g = S.g0[pb]
            flags |= HIT
            lsb_h -= _log(T.stop[j])
            ne = _record(ev, ne, EV_DETECT, x, y, vx, vy, j, -ta, 0.0)
            break
        a = alpha_eval(S.alpha[pb], x)
        nx, ny = piece_normal(G.kind[pb], G.par[pb], sb)
        vx, vy, kh, trunc = sai_sample(G, T, j, nx, ny, rng)
        if trunc:
            flags |= TRUNCATED
        if a <= 0.0 or kh <= 0.0:
            flags |= DEAD
            ne = _record(ev, ne, EV_DEATH, x, y, vx, vy, j, -ta, 0.0)
            break
        la_sb += math.log(a)
        fh = math.log(kappa_pdf(S.kernel[pb], nx, ny, vx, vy)) - math.log(kh)
        lsb_h += fh
        ne = _record(ev, ne, EV_BOUNCE, x, y, vx, vy, j, math.log(a) - ta, fh)
        start = pb
    out[0] = la_sb
    out[1] = 0.0
    out[2] = lsb_h if g > 0.0 else math.inf
    return g, tau, flags


@njit
def sai_weight(g, la_sb, lhe_sb, lsb_h, q_s):
    """g dPa/dPq with dPq = (1 - q_s) dPh + q_s dPheu."""
    if g <= 0.0:
        return 0.0
    la_h = la_sb + lsb_h
    la_heu = la_sb - lhe_sb
    lq = _logaddexp(_log(1.0 - q_s) - la_h, _log(q_s) - la_heu)
    return g * math.exp(-lq)


@njit
def run_shots(kind, n, G, S, V, T, rng, q_v, q_s, cap, score, tau, flags, ledger):
    ev = np.zeros((0, 8))
    out = np.zeros(3)
    for k in range(n):
        if kind == 0:
            g, tt, fl = analog_shot(G, S, V, rng, cap, ev)
            score[k] = g
            ledger[k, 0] = 0.0
            ledger[k, 1] = 0.0
            ledger[k, 2] = math.inf
        else:
            if kind == 3 and q_s < 1.0 and (q_s <= 0.0 or rng.random() < 1.0 - q_s):
                g, tt, fl = surface_shot(G, S, V, T, rng, cap, ev, out)
            else:
                g, tt, fl = biased_shot(G, S, V, T, rng, 1.0 if kind == 1 else q_v, kind == 3 and q_s < 1.0, cap,
                                        ev, out)
            ledger[k, 0] = out[0]
            ledger[k, 1] = out[1]
            ledger[k, 2] = out[2]
            if g <= 0.0:
                score[k] = 0.0
            elif kind == 1:
                score[k] = g * math.exp(out[0])
            elif kind == 2:
                score[k] = g * math.exp(out[0] - out[1])
            else:
                score[k] = sai_weight(g, out[0], out[1], out[2], q_s)
        tau[k] = tt
        flags[k] = fl


# ----------------------------------------------------------------------------
# Python API


@dataclass(frozen=True)
class ChainConfig:
    chain: str = "analog"
    q_v: float = 1.0
    q_s: float = 0.9
    cap: int = 10_000

    def __post_init__(self):
        if self.chain not in CHAINS:
            raise ValueError(f"chain must be one of {CHAINS}, got {self.chain!r}")
        if not (0.0 < self.q_v <= 1.0):
            raise ValueError(f"q_v must lie in (0, 1], got {self.q_v}")
        if not (0.0 <= self.q_s <= 1.0):
            raise ValueError(f"q_s must lie in [0, 1], got {self.q_s}")


@dataclass
class ShotBatch:
    config: ChainConfig
    score: np.ndarray
    tau: np.ndarray
    flags: np.ndarray
    ledger: np.ndarray
    seconds: float
    shards: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.score)

    def count(self, flag: int) -> int:
        return int(np.count_nonzero(self.flags & flag))


def _check_support(scene, config, tables):
    if config.chain == "sai":
        if tables is None and config.q_s < 1.0:
            raise ValueError("the SAI chain needs adjoint tables (build_sai_tables)")
        if config.q_s == 0.0 and not scene.volume.is_void:
            raise ValueError("q_s = 0 leaves volume-scattering paths unsampled (absolute continuity fails)")


def _warm(kind, scene, T):
    rng = np.random.default_rng(0)
    buf = (np.zeros(1), np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64), np.zeros((1, 3)))
    run_shots(kind, 1, scene.mesh.arrays, scene.surf, scene.vol, T, rng, 0.5, 0.5 if kind == 3 else 1.0, 10, *buf)


def shard_plan(n: int, shard_size: int) -> list[int]:
    sizes = [shard_size] * (n // shard_size)
    if n % shard_size:
        sizes.append(n % shard_size)
    return sizes


def run_chain(scene, config: ChainConfig, n: int, seed: int = 0, tables=None, shard_size: int = 1 << 16) -> ShotBatch:
    """Run n independent paths.

    Shards of ``shard_size`` paths draw from ``SeedSequence(seed).spawn``
    streams, so results depend only on (seed, n, shard_size).
    """
    if n <= 0:
        raise ValueError("number of shots must be positive")
    _check_support(scene, config, tables)
    kind = KIND[config.chain]
    P = len(scene.profile.pieces)
    T = tables.arrays if (tables is not None and config.chain == "sai") else empty_sai_arrays(P)
    _warm(kind, scene, T)
    sizes = shard_plan(n, shard_size)
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    score = np.zeros(n)
    tau = np.zeros(n, dtype=np.int64)
    flags = np.zeros(n, dtype=np.int64)
    ledger = np.zeros((n, 3))
    shards = []
    t0 = time.perf_counter()
    off = 0
    for size, ss in zip(sizes, seqs):
        rng = np.random.Generator(np.random.PCG64(ss))
        sl = slice(off, off + size)
        run_shots(kind, size, scene.mesh.arrays, scene.surf, scene.vol, T, rng, float(config.q_v), float(config.q_s),
                  int(config.cap), score[sl], tau[sl], flags[sl], ledger[sl])
        shards.append((off, size))
        off += size
    seconds = time.perf_counter() - t0
    return ShotBatch(config, score, tau, flags, ledger, seconds, shards)


@dataclass
class PathTrace:
    score: float
    weight: float
    tau: int
    flags: int
    events: np.ndarray
    ledger: np.ndarray


def trace_path(scene, config: ChainConfig, rng: np.random.Generator, tables=None, branch: str | None = None,
               max_events: int = 256) -> PathTrace:
    """Sample one path and return its event list and log ledger.

    ``branch`` forces the SAI branch ("surface" or "heuristic"); the returned
    weight is still the mixture weight.
    """
    _check_support(scene, config, tables)
    P = len(scene.profile.pieces)
    T = tables.arrays if tables is not None else empty_sai_arrays(P)
    ev = np.zeros((max_events, 8))
    out = np.zeros(3)
    G, S, V = scene.mesh.arrays, scene.surf, scene.vol
    c = config
    if c.chain == "analog":
        g, tt, fl = analog_shot(G, S, V, rng, c.cap, ev)
        w = g
        out[:] = (0.0, 0.0, math.inf)
    else:
        if c.chain == "sai":
            if branch is None:
                branch = "surface" if (c.q_s < 1.0 and (c.q_s <= 0.0 or rng.random() < 1.0 - c.q_s)) else "heuristic"
        if c.chain == "sai" and branch == "surface":
            g, tt, fl = surface_shot(G, S, V, T, rng, c.cap, ev, out)
        else:
            g, tt, fl = biased_shot(G, S, V, T, rng, 1.0 if c.chain == "sb" else c.q_v, c.chain == "sai" and c.q_s < 1.0,
                                    c.cap, ev, out)
        if g <= 0:
            w = 0.0
        elif c.chain == "sb":
            w = g * math.exp(out[0])
        elif c.chain == "heu":
            w = g * math.exp(out[0] - out[1])
        else:
            w = sai_weight(g, out[0], out[1], out[2], c.q_s)
    n_ev = min(int(tt) + 1, max_events)
    return PathTrace(g, w, int(tt), int(fl), ev[:n_ev].copy(), out.copy())

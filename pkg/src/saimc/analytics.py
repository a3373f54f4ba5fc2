"""Estimator statistics, cost model and the closed-form variance calculus.

Notation for the stealing calculus: D is the detector event, B a controlled
set whose probability is boosted by a factor b, beta = b P[D],
gamma = P[B]/P[D] and a = (1 - gamma P[D]) (1 - P[B|D]) / (P[B|D] P[D]).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as _stats

from .chains import HIT, VOLUME, ChainConfig, ShotBatch, run_chain


class RunningStats:
    """Welford accumulator with an exact pairwise merge."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def push(self, x: float) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def extend(self, xs) -> "RunningStats":
        xs = np.asarray(xs, dtype=float)
        if xs.size:
            self.merge(RunningStats.from_array(xs))
        return self

    @classmethod
    def from_array(cls, xs) -> "RunningStats":
        xs = np.asarray(xs, dtype=float)
        s = cls()
        s.n = int(xs.size)
        if s.n:
            s.mean = float(xs.mean())
            s.m2 = float(np.sum((xs - s.mean) ** 2))
        return s

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean, other.m2
            return self
        n = self.n + other.n
        d = other.mean - self.mean
        self.mean += d * other.n / n
        self.m2 += other.m2 + d * d * self.n * other.n / n
        self.n = n
        return self

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n else math.nan


@dataclass
class CostModel:
    """T0(h) = C h^(-2(d-1)); measured T0 values override the model."""
    C: float = 0.017
    d: int = 2
    m: float = math.inf

    def t0(self, h: float) -> float:
        if not h > 0:
            raise ValueError("h must be positive")
        return self.C * h ** (-2 * (self.d - 1))


RESULT_COLUMNS = ("scenario", "chain", "h", "q_s", "q_v", "mfp_mult", "N", "mean", "variance", "stderr",
                  "shots_per_sec", "t0_seconds", "fom_m10", "fom_minf", "seed")


@dataclass
class EstimateRecord:
    scenario: str
    chain: str
    h: float
    q_s: float
    q_v: float
    mfp_mult: float
    N: int
    mean: float
    variance: float
    stderr: float
    shots_per_sec: float
    t0_seconds: float
    fom_m10: float
    fom_minf: float
    seed: int
    seconds: float = 0.0
    hits: int = 0
    capped: int = 0

    @property
    def tau(self) -> float:
        """Seconds per shot."""
        return 1.0 / self.shots_per_sec if self.shots_per_sec > 0 else math.inf

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in RESULT_COLUMNS}


def default_epsilon(mean: float) -> float:
    """RMS error target used in the FOM columns: 1% of the estimate."""
    return 0.01 * abs(mean)


def fom(variance: float, tau: float, t0: float = 0.0, m: float = math.inf, eps: float | None = None) -> float:
    """1 / (tau Var + eps^2 T0 / m): inverse per-simulation cost of reaching RMS error eps."""
    cost = tau * variance
    if math.isfinite(m):
        cost += (eps or 0.0) ** 2 * t0 / m
    return 1.0 / cost if cost > 0 else math.inf


def summarize(batch: ShotBatch, scenario: str = "", h: float = math.nan, mfp_mult: float = math.nan, seed: int = 0,
              t0_seconds: float = 0.0) -> EstimateRecord:
    # shard statistics merged in shard order
    st = RunningStats()
    for off, size in batch.shards or [(0, batch.n)]:
        st.merge(RunningStats.from_array(batch.score[off:off + size]))
    sps = batch.n / batch.seconds if batch.seconds > 0 else math.inf
    tau = 1.0 / sps
    eps = default_epsilon(st.mean)
    c = batch.config
    return EstimateRecord(scenario, c.chain, h, c.q_s, c.q_v, mfp_mult, st.n, st.mean, st.variance, st.stderr, sps,
                          t0_seconds, fom(st.variance, tau, t0_seconds, 10, eps), fom(st.variance, tau), seed,
                          batch.seconds, batch.count(HIT), batch.count(4))


def run_batch(scene, config: ChainConfig, n: int, seed: int = 0, tables=None, shard_size: int = 1 << 16) -> EstimateRecord:
    """Run a chain and return its statistics."""
    if n < 1:
        raise ValueError("N must be at least 1")
    t0 = 0.0
    if config.chain == "sai" and tables is not None:
        t0 = tables.field.seconds + tables.seconds
    batch = run_chain(scene, config, n, seed, tables, shard_size)
    return summarize(batch, scene.name, scene.h, scene.mfp_mult, seed, t0)


def speedup(rec1: EstimateRecord, rec2: EstimateRecord, eps: float, m: float = math.inf) -> float:
    """Cost of estimator 1 over cost of estimator 2 for RMS error eps and m reuses of one deterministic solve."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not m >= 1:
        raise ValueError("m must be at least 1")

    def cost(r):
        c = m * r.tau * r.variance if math.isfinite(m) else r.tau * r.variance
        return c + (eps * eps * r.t0_seconds if math.isfinite(m) else 0.0)

    den = cost(rec2)
    if den == 0:
        raise ValueError("zero cost in the denominator")
    return cost(rec1) / den


def sample_variance_stderr(x) -> float:
    """Normal-theory standard error of the unbiased sample variance, from the fourth central moment."""
    x = np.asarray(x, dtype=float)
    n = x.size
    m = x.mean()
    d = x - m
    m2 = np.mean(d * d)
    m4 = np.mean(d ** 4)
    return math.sqrt(max(m4 - m2 * m2 * (n - 3) / (n - 1), 0.0) / n)


# ----------------------------------------------------------------------------
# stealing calculus


def stealing_second_moment(b, p_d, p_bd, p_b, p_c=0.0) -> float:
    """E[xi~^2] for xi = 1_D when the measure of B is multiplied by b (mass taken from the complement)."""
    if b < 0:
        raise ValueError("b must be nonnegative")
    for v in (p_d, p_bd, p_b, p_c):
        if not 0 <= v <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
    if b * p_b >= 1:
        raise ValueError("need b P[B] < 1")
    first = p_d * p_bd / b if p_d * p_bd > 0 else 0.0
    return first + (1 - p_b - p_c) / (1 - b * p_b) * p_d * (1 - p_bd)


def vrr(b, p_d, p_bd, p_b, variant: str = "steal", p_c: float = 0.0) -> float:
    """Variance ratio Var[xi]/Var[xi~]."""
    if variant not in ("steal", "steal-with-c"):
        raise ValueError("variant must be 'steal' or 'steal-with-c'")
    e2 = stealing_second_moment(b, p_d, p_bd, p_b, p_c if variant == "steal-with-c" else 0.0)
    var = e2 - p_d * p_d
    if abs(var) <= 1e-12 * p_d * p_d:
        return math.inf
    if var < 0:
        raise ValueError("E[xi~^2] < P[D]^2: inconsistent probabilities")
    return (p_d - p_d * p_d) / var


def agamma(p_d, p_bd, p_b, p_c: float = 0.0) -> tuple[float, float]:
    """(gamma, a) of the stealing calculus."""
    gamma = p_b / p_d
    a = (1 - p_c - gamma * p_d) * (1 - p_bd) / (p_bd * p_d)
    return gamma, a


def beta_opt(gamma, a) -> float:
    if not gamma > 0 or a < 0:
        raise ValueError("need gamma > 0 and a >= 0")
    return 1.0 / (math.sqrt(gamma) * (math.sqrt(gamma) + math.sqrt(a)))


def vrr_max(p_d, p_bd, gamma) -> float:
    """Maximal variance ratio over b."""
    a = (1 - gamma * p_d) * (1 - p_bd) / (p_bd * p_d)
    den = p_bd * (math.sqrt(gamma) + math.sqrt(a)) ** 2 - 1
    if den <= 0:
        return math.inf
    return (1 - p_d) / p_d / den


def vrr_max_approx(p_bd) -> float:
    """Large-a approximation of the maximal variance ratio."""
    return math.inf if p_bd >= 1 else 1.0 / (1.0 - p_bd)


def vrr_curve(p_d, p_bd, gamma, betas) -> np.ndarray:
    """Rows (b P[D], VRR) for a Fig.-3-style table."""
    p_b = gamma * p_d
    out = []
    for beta in betas:
        b = beta / p_d
        try:
            out.append((beta, vrr(b, p_d, p_bd, p_b)))
        except ValueError:
            out.append((beta, math.nan))
    return np.array(out)


def qs_opt1(i_b: float, i_v: float) -> float:
    """Minimizer of I_B/(1-q) + I_V/q."""
    if i_b < 0 or i_v < 0 or (i_b == 0 and i_v == 0):
        raise ValueError("need nonnegative pilot integrals, not both zero")
    if i_b == 0:
        return 1.0
    if i_v == 0:
        return 0.0
    r = math.sqrt(i_v / i_b)
    return r / (1.0 + r)


def qs_from_b(b, p_b) -> float:
    """Mixture weight implied by a stealing factor b on B."""
    return (1.0 - b * p_b) / (1.0 - p_b)


def qs_opt2(p_d, p_bd) -> float:
    """A-priori q_s with B inside D (gamma = P[B|D]) and b at its optimum."""
    if not (0 < p_d < 1 and 0 < p_bd <= 1):
        raise ValueError("need P[D] in (0,1) and P[B|D] in (0,1]")
    gamma = p_bd
    a = (1 - gamma * p_d) * (1 - p_bd) / (p_bd * p_d)
    b = beta_opt(gamma, a) / p_d
    return min(max(qs_from_b(b, p_d * p_bd), 0.0), 1.0)


def pilot_integrals(batch: ShotBatch) -> tuple[float, float]:
    """Estimates of I_B and I_V from the log ledger of a run of any chain.

    Each shot contributes xi * dPa/dPh on B = {no volume event} and
    xi * dPa/dPheu on D without B, where xi already carries dPa/dP of the
    sampling chain.
    """
    hit = (batch.flags & HIT) != 0
    vol = (batch.flags & VOLUME) != 0
    la_sb, lhe_sb, lsb_h = batch.ledger.T
    with np.errstate(over="ignore", invalid="ignore"):
        wh = np.where(hit & ~vol & np.isfinite(lsb_h), np.exp(la_sb + lsb_h), 0.0)
        wv = np.where(hit & vol, np.exp(la_sb - lhe_sb), 0.0)
    return float(np.mean(batch.score * wh)), float(np.mean(batch.score * wv))


def volume_fraction(batch: ShotBatch) -> float:
    """P[V]: fraction of detector hits whose path had a volume event (analog pilot)."""
    if batch.config.chain != "analog":
        raise ValueError("P[V] is read off an analog run")
    hit = (batch.flags & HIT) != 0
    if not hit.any():
        raise ValueError("no detector hits in the pilot")
    return float(np.mean((batch.flags[hit] & VOLUME) != 0))


def qs_table(p_d: float = 0.0024, p_v=(1 / 21, 1 / 11, 1 / 4, 1 / 2.35), mfp=(16, 8, 2.7, 1.3)) -> list[dict]:
    """q_s-vs-MFP rows using P[B|D] = 1 - P[V]."""
    return [{"mfp_mult": k, "p_v": v, "p_bd": 1 - v, "q_s": qs_opt2(p_d, 1 - v)} for k, v in zip(mfp, p_v)]


# ----------------------------------------------------------------------------
# collision-count histograms


def tau_conditional_hist(tau, flags, max_tau: int | None = None) -> np.ndarray:
    """Normalized histogram of collision counts over detector hits (index = tau)."""
    tau = np.asarray(tau)
    hit = (np.asarray(flags) & HIT) != 0
    if not hit.any():
        raise ValueError("no detector hits to condition on")
    t = tau[hit]
    top = int(t.max()) if max_tau is None else max_tau
    h = np.bincount(np.minimum(t, top), minlength=top + 1).astype(float)
    return h / h.sum()


def compare_tau_counts(c1, c2, min_expected: float = 5.0) -> tuple[float, float, int]:
    """Chi-square homogeneity test of two count vectors; sparse tail bins are pooled.

    Returns (statistic, p-value, degrees of freedom).
    """
    n = max(len(c1), len(c2))
    a = np.zeros(n)
    b = np.zeros(n)
    a[: len(c1)] = c1
    b[: len(c2)] = c2
    keep = (a + b) > 0
    a, b = a[keep], b[keep]
    tot = a.sum() + b.sum()
    # pool bins from the tail until every expected count reaches min_expected
    rows_a, rows_b = [], []
    acc_a = acc_b = 0.0
    for x, y in zip(a, b):
        acc_a += x
        acc_b += y
        s = acc_a + acc_b
        if min(s * a.sum() / tot, s * b.sum() / tot) >= min_expected:
            rows_a.append(acc_a)
            rows_b.append(acc_b)
            acc_a = acc_b = 0.0
    if acc_a + acc_b > 0:
        if rows_a:
            rows_a[-1] += acc_a
            rows_b[-1] += acc_b
        else:
            rows_a.append(acc_a)
            rows_b.append(acc_b)
    if len(rows_a) < 2:
        return 0.0, 1.0, 0
    chi2, p, dof, _ = _stats.chi2_contingency(np.array([rows_a, rows_b]), correction=False)
    return float(chi2), float(p), int(dof)

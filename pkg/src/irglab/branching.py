"""Multi-type Poisson Galton-Watson simulation and total-progeny estimators.

Samples are drawn a generation at a time: the number of type-y children of
a generation holding n_x particles of each type x is Poisson with mean
sum_x n_x kappa(x, y) mu(y), which has the same law as expanding every
particle separately.  This keeps the per-sample work proportional to the
depth of the tree rather than its size.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .kernel import Kernel, KernelError, operator_norm
from .seeding import chunk_generator

DEFAULT_CAP = 10_000_000
CHUNK = 1 << 16
MIN_EXCEEDANCES = 200
# local law of the total progeny near its radius: P(X = k) ~ C k^(-3/2) r^(-k)
PREFACTOR_EXPONENT = 1.5


class TailFitError(ValueError):
    """Not enough uncensored tail mass to estimate the decay rate."""

    def __init__(self, msg, censored_fraction=0.0):
        super().__init__(msg)
        self.censored_fraction = censored_fraction


@dataclass(frozen=True)
class ProgenyOutcome:
    size: int
    censored: bool
    generations: int


@dataclass(frozen=True)
class SampleBatch:
    root_type: int
    sizes: np.ndarray
    censored: np.ndarray
    generations: np.ndarray
    seed: int
    cap: int

    def __len__(self):
        return int(self.sizes.size)

    @property
    def outcomes(self):
        return [ProgenyOutcome(int(s), bool(c), int(g))
                for s, c, g in zip(self.sizes, self.censored, self.generations)]

    @property
    def censored_fraction(self):
        return float(self.censored.mean()) if len(self) else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["root_type", "size", "censored", "generations"])
            for s, c, g in zip(self.sizes, self.censored, self.generations):
                w.writerow([self.root_type, int(s), int(bool(c)), int(g)])


def _simulate(K, root_idx, n, cap, rng):
    d = K.shape[0]
    current = np.zeros((n, d), dtype=np.int64)
    current[:, root_idx] = 1
    size = np.ones(n, dtype=np.int64)
    gens = np.zeros(n, dtype=np.int64)
    censored = np.zeros(n, dtype=bool)
    active = np.arange(n)
    if cap <= 1:
        censored[:] = True
        return np.full(n, cap, dtype=np.int64), censored, gens
    while active.size:
        lam = current[active] @ K
        kids = rng.poisson(lam)
        tot = kids.sum(axis=1)
        size[active] += tot
        gens[active] += tot > 0
        current[active] = kids
        hit = size[active] >= cap
        censored[active[hit]] = True
        keep = (tot > 0) & ~hit
        active = active[keep]
    np.minimum(size, cap, out=size)
    return size, censored, gens


def sample_progeny(kernel: Kernel, root: int, cap: int, rng: np.random.Generator) -> ProgenyOutcome:
    if cap < 1:
        raise ValueError("cap must be >= 1")
    idx = kernel.space.index(root)
    s, c, g = _simulate(kernel.intensity, idx, 1, int(cap), rng)
    return ProgenyOutcome(int(s[0]), bool(c[0]), int(g[0]))


def sample_batch(kernel: Kernel, root: int, n_samples: int, seed: int,
                 cap: int = DEFAULT_CAP, chunk: int = CHUNK) -> SampleBatch:
    """Draw ``n_samples`` independent progenies of a type-``root`` ancestor.

    Samples are generated in fixed-size chunks, chunk ``i`` from a stream
    derived from ``(seed, i)``, so the result does not depend on how chunks
    are scheduled.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    idx = kernel.space.index(root)
    K = kernel.intensity
    parts = []
    for i, start in enumerate(range(0, n_samples, chunk)):
        m = min(chunk, n_samples - start)
        parts.append(_simulate(K, idx, m, int(cap), chunk_generator(seed, "progeny", i)))
    if parts:
        sizes, cens, gens = (np.concatenate(p) for p in zip(*parts))
    else:
        sizes = np.zeros(0, dtype=np.int64)
        cens = np.zeros(0, dtype=bool)
        gens = np.zeros(0, dtype=np.int64)
    return SampleBatch(int(root), sizes, cens, gens, int(seed), int(cap))


def mean_progeny(kernel: Kernel) -> np.ndarray:
    """Exact mean total progeny per root type: solves m = 1 + K m."""
    if operator_norm(kernel) >= 1.0:
        raise KernelError("mean total progeny is infinite when ||T|| >= 1")
    K = kernel.intensity
    return np.linalg.solve(np.eye(kernel.dim) - K, np.ones(kernel.dim))


@dataclass(frozen=True)
class GFEstimate:
    value: float
    stderr: float
    ci: tuple
    n_used: int
    censored_fraction: float
    lower_bound: Optional[float]

    @property
    def is_lower_bound(self):
        return self.lower_bound is not None


def empirical_gf(batch: SampleBatch, z: float, level: float = 0.95) -> GFEstimate:
    """Monte Carlo estimate of E z^X from the uncensored outcomes.

    With censoring present, ``lower_bound`` adds the censored mass at
    ``z**cap`` over the whole batch.
    """
    from scipy.stats import norm

    if z < 1:
        raise ValueError("z must be >= 1")
    if len(batch) == 0:
        raise ValueError("empty batch")
    ok = ~batch.censored
    if not ok.any():
        raise ValueError("all samples censored")
    vals = np.power(float(z), batch.sizes[ok].astype(float))
    n = vals.size
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    q = float(norm.ppf(0.5 + level / 2))
    lb = None
    if batch.censored.any():
        lb = float((vals.sum() + batch.censored.sum() * float(z) ** batch.cap) / len(batch))
    return GFEstimate(mean, se, (mean - q * se, mean + q * se), n, batch.censored_fraction, lb)


@dataclass(frozen=True)
class TailFit:
    rate: float
    stderr: float
    window: tuple
    exceedances: int
    naive_rate: float
    curvature: float
    free_exponent: float

    def to_dict(self):
        return {
            "rate": self.rate,
            "stderr": self.stderr,
            "window": list(self.window),
            "exceedances": self.exceedances,
            "naive_rate": self.naive_rate,
            "curvature": self.curvature,
            "free_exponent": self.free_exponent,
        }


def default_window(batch: SampleBatch, min_exceedances: int = MIN_EXCEEDANCES) -> tuple:
    """[0.99 quantile, largest k with at least ``min_exceedances`` samples >= k]."""
    s = np.sort(batch.sizes)
    k_min = int(np.ceil(np.quantile(s, 0.99)))
    if s.size < min_exceedances:
        raise TailFitError("batch smaller than the exceedance requirement", batch.censored_fraction)
    k_max = int(s[s.size - min_exceedances])
    return k_min, k_max


def _poisson_loglinear(counts, X, offset, iters=100):
    """MLE of beta in counts ~ Poisson(exp(X beta + offset)); returns (beta, cov)."""
    beta = np.linalg.lstsq(X, np.log(counts + 0.5) - offset, rcond=None)[0]
    try:
        with np.errstate(over="raise", invalid="raise"):
            for _ in range(iters):
                mu = np.exp(X @ beta + offset)
                grad = X.T @ (counts - mu)
                info = X.T @ (mu[:, None] * X)
                step = np.linalg.solve(info, grad)
                beta = beta + step
                if np.max(np.abs(step)) < 1e-12:
                    break
            mu = np.exp(X @ beta + offset)
            cov = np.linalg.inv(X.T @ (mu[:, None] * X))
    except (np.linalg.LinAlgError, FloatingPointError):
        raise TailFitError("tail regression is degenerate on this window") from None
    if not np.all(np.isfinite(beta)):
        raise TailFitError("tail regression did not converge")
    return beta, cov


def tail_fit(batch: SampleBatch, window: Optional[Sequence[int]] = None,
             min_exceedances: int = MIN_EXCEEDANCES) -> TailFit:
    """Exponential decay rate of the total-progeny law.

    Counts of X = k over the window are fitted by Poisson regression on
    ``a - rate*k - 1.5*log k``, i.e. with the square-root-singularity
    prefactor of the progeny law divided out.  ``naive_rate`` is the plain
    least-squares slope of log P(X >= k); ``curvature`` is the quadratic
    coefficient of that curve and ``free_exponent`` the prefactor exponent
    when it is fitted rather than fixed.
    """
    if window is None:
        window = default_window(batch, min_exceedances)
    if int(window[1]) >= batch.cap:
        raise TailFitError("window reaches the censoring cap", batch.censored_fraction)
    hist = np.bincount(batch.sizes[~batch.censored])
    return fit_tail_histogram(hist, int(batch.censored.sum()), window, min_exceedances)


def fit_tail_histogram(hist, n_censored: int, window: Sequence[int],
                       min_exceedances: int = MIN_EXCEEDANCES) -> TailFit:
    """:func:`tail_fit` on ``hist[k]`` = number of uncensored samples of size k."""
    hist = np.asarray(hist, dtype=float)
    n = float(hist.sum()) + n_censored
    cens_frac = n_censored / n if n else 0.0
    k_min, k_max = int(window[0]), int(window[1])
    if not 1 <= k_min < k_max:
        raise TailFitError(f"empty window [{k_min}, {k_max}]", cens_frac)
    hist = np.pad(hist, (0, max(0, k_max + 1 - hist.size)))
    surv_counts = np.cumsum(hist[::-1])[::-1] + n_censored
    exceed = int(surv_counts[k_max])
    if exceed < min_exceedances:
        raise TailFitError(f"only {exceed} samples reach k_max={k_max}", cens_frac)

    ks = np.arange(k_min, k_max + 1)
    counts = hist[k_min:k_max + 1]
    if np.count_nonzero(counts) < 3:
        raise TailFitError("fewer than three occupied sizes in the window", cens_frac)
    logk = np.log(ks)
    X = np.column_stack([np.ones(ks.size), -ks.astype(float)])
    Xf = np.column_stack([X, -logk])
    try:
        beta, cov = _poisson_loglinear(counts, X, -PREFACTOR_EXPONENT * logk)
        beta_f, _ = _poisson_loglinear(counts, Xf, np.zeros_like(logk))
    except TailFitError as exc:
        raise TailFitError(str(exc), cens_frac) from None
    rate, se = float(beta[1]), float(math.sqrt(cov[1, 1]))

    ls = np.log(surv_counts[k_min:k_max + 1] / n)
    naive = -float(np.polyfit(ks, ls, 1)[0])
    curvature = float(np.polyfit(ks, ls, 2)[0]) if ks.size >= 3 else 0.0
    return TailFit(rate, se, (k_min, k_max), exceed, naive, curvature, float(beta_f[2]))


@dataclass(frozen=True)
class DominanceReport:
    passed: bool
    max_violation: float
    tolerance: float
    confidence: float


def dominance_check(batch_a: SampleBatch, batch_b: SampleBatch, confidence: float = 0.999) -> DominanceReport:
    """Check that ``batch_b`` is stochastically larger than ``batch_a``.

    Passes when F_a(k) >= F_b(k) - t for every k, with t the one-sided
    two-sample DKW bound sqrt(log(1/alpha) (n + m) / (2 n m)).
    """
    if batch_a.root_type != batch_b.root_type:
        raise ValueError("batches have different root types")
    if batch_a.cap != batch_b.cap:
        raise ValueError("batches have different caps")
    n, m = len(batch_a), len(batch_b)
    if n == 0 or m == 0:
        raise ValueError("empty batch")
    a = np.sort(batch_a.sizes)
    b = np.sort(batch_b.sizes)
    grid = np.union1d(a, b)
    fa = np.searchsorted(a, grid, side="right") / n
    fb = np.searchsorted(b, grid, side="right") / m
    viol = float(max(0.0, np.max(fb - fa)))
    alpha = 1.0 - confidence
    tol = math.sqrt(math.log(1.0 / alpha) * (n + m) / (2.0 * n * m))
    return DominanceReport(viol <= tol, viol, tol, confidence)

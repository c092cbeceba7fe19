"""Generating-function fixed points: h_z, the radius r_kappa, survival and
negative solutions of the survival equation."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _loops
from .kernel import Kernel, KernelError, apply_T, operator_norm, tilt_kernel, truncate_kernel

log = logging.getLogger(__name__)

Z_MAX = 64.0
BRACKET_START = 1e-3
NEWTON_SEEDS = (0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)


@dataclass(frozen=True)
class IterationConfig:
    tol: float = 1e-12
    max_iter: int = 1_000_000
    diverge_threshold: float = 1e12

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.diverge_threshold > 1:
            raise ValueError("diverge_threshold must exceed 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


DEFAULT_CONFIG = IterationConfig()


class Status(enum.Enum):
    CONVERGED = "converged"
    DIVERGED = "diverged"
    UNDETERMINED = "undetermined"


_STATUS = {
    _loops.CONVERGED: Status.CONVERGED,
    _loops.DIVERGED: Status.DIVERGED,
    _loops.UNDETERMINED: Status.UNDETERMINED,
}


@dataclass(frozen=True)
class GFOutcome:
    status: Status
    h: Optional[np.ndarray]
    iterations: int
    residual: float
    monotone: bool = True

    @property
    def converged(self):
        return self.status is Status.CONVERGED


@dataclass(frozen=True)
class RKappaEstimate:
    lo: float
    hi: float
    undetermined_hits: int = 0
    saturated: bool = False
    probes: int = 0

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self):
        return self.hi - self.lo

    def excludes_one(self, tol):
        return self.lo > 1.0 + tol

    def to_dict(self):
        return {
            "lo": self.lo,
            "hi": self.hi,
            "mid": self.mid,
            "undetermined_hits": self.undetermined_hits,
            "saturated": self.saturated,
        }


@dataclass(frozen=True)
class SurvivalResult:
    rho: np.ndarray
    rho_aggregate: float
    residual: float
    iterations: int
    converged: bool
    monotone: bool = True
    via_norm: bool = False

    def to_dict(self):
        return {
            "rho": [float(v) for v in self.rho],
            "rho_aggregate": self.rho_aggregate,
            "residual": self.residual,
            "converged": self.converged,
            "via_norm": self.via_norm,
        }


@dataclass(frozen=True)
class NegativeSolution:
    f: np.ndarray
    residual: float
    seed: float = field(default=float("nan"))

    def to_dict(self):
        return {"f": [float(v) for v in self.f], "residual": self.residual, "seed": self.seed}


def _intensity(kernel):
    return np.ascontiguousarray(kernel.intensity)


def phi_step(kernel: Kernel, z: float, f) -> np.ndarray:
    """One application of f -> z exp(T[f - 1])."""
    f = np.asarray(f, dtype=float)
    with np.errstate(over="ignore"):
        return z * np.exp(apply_T(kernel, f - 1.0))


def progeny_gf(kernel: Kernel, z: float, cfg: IterationConfig = DEFAULT_CONFIG) -> GFOutcome:
    """Iterate phi_step from the constant 1 until it settles or blows up."""
    if z < 1:
        raise ValueError("z must be >= 1")
    code, f, its, mono = _loops.phi_iterate(
        _intensity(kernel), float(z), cfg.tol, int(cfg.max_iter), cfg.diverge_threshold
    )
    status = _STATUS[code]
    if status is not Status.CONVERGED:
        return GFOutcome(status, None, int(its), math.inf, bool(mono))
    residual = float(np.max(np.abs(phi_step(kernel, z, f) - f)))
    return GFOutcome(status, f, int(its), residual, bool(mono))


def _bisect_radius(kernel, cfg, bis_tol):
    undetermined = 0
    probes = 0

    def probe(z):
        nonlocal undetermined, probes
        probes += 1
        out = progeny_gf(kernel, z, cfg)
        if out.status is Status.UNDETERMINED:
            undetermined += 1
        return out.converged

    lo, hi = 1.0, None
    step = BRACKET_START
    while True:
        z = min(1.0 + step, Z_MAX)
        if probe(z):
            lo = z
            if z >= Z_MAX:
                break
            step *= 2
        else:
            hi = z
            break
    if hi is None:
        return RKappaEstimate(lo, Z_MAX, undetermined, saturated=True, probes=probes)
    while hi - lo > bis_tol:
        mid = 0.5 * (lo + hi)
        if probe(mid):
            lo = mid
        else:
            hi = mid
    return RKappaEstimate(lo, hi, undetermined, probes=probes)


def r_kappa(kernel: Kernel, cfg: IterationConfig = DEFAULT_CONFIG, bis_tol: float = 1e-9) -> RKappaEstimate:
    """Bracket the radius of finiteness of z -> E z^X by bisection.

    ``lo`` is always a z at which the iteration converged; undetermined
    probes are counted against ``hi``.
    """
    if not bis_tol > 0:
        raise ValueError("bis_tol must be positive")
    return _bisect_radius(kernel, cfg, bis_tol)


def scalar_r_closed_form(c: float) -> float:
    if not c > 0:
        raise ValueError("c must be positive")
    if c >= 1:
        return 1.0
    return math.exp(c - 1.0) / c


def survival_prob(kernel: Kernel, cfg: IterationConfig = DEFAULT_CONFIG) -> SurvivalResult:
    """Maximum solution of f = 1 - exp(-T f), iterated down from f = 1.

    At and below criticality the iteration decays only like 1/k; when it
    does not settle and ||T|| <= 1 the zero solution is returned, since it
    is then the maximal one.
    """
    K = _intensity(kernel)
    ok, f, its, mono = _loops.survival_iterate(K, cfg.tol, int(cfg.max_iter))
    f = np.clip(f, 0.0, 1.0)
    via_norm = False
    if not ok and operator_norm(kernel) <= 1.0 + 1e-12:
        f = np.zeros(kernel.dim)
        ok, via_norm = True, True
    residual = float(np.max(np.abs(f - (1.0 - np.exp(-apply_T(kernel, f))))))
    agg = float(f @ kernel.space.weights)
    if not ok:
        log.warning("survival iteration hit max_iter=%d, residual %.3g", cfg.max_iter, residual)
    return SurvivalResult(f, agg, residual, int(its), bool(ok), bool(mono), via_norm)


def _newton(kernel, f, max_iter=200, tol=1e-13, max_halvings=40):
    K = kernel.intensity
    d = kernel.dim
    eye = np.eye(d)

    def F(v):
        return v - 1.0 + np.exp(-K @ v)

    r = F(f)
    nr = np.max(np.abs(r))
    for _ in range(max_iter):
        if not np.isfinite(nr):
            return None
        if nr <= tol:
            break
        J = eye - np.exp(-K @ f)[:, None] * K
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            step = -r
        if not np.all(np.isfinite(step)):
            step = -r
        t = 1.0
        for _ in range(max_halvings):
            cand = f + t * step
            with np.errstate(over="ignore", invalid="ignore"):
                rc = F(cand)
            nc = np.max(np.abs(rc))
            if np.isfinite(nc) and nc < nr:
                break
            t *= 0.5
        else:
            return None
        f, r, nr = cand, rc, nc
    return f


def negative_solution(kernel: Kernel, cfg: IterationConfig = DEFAULT_CONFIG) -> Optional[NegativeSolution]:
    """Search for a strictly negative root of f = 1 - exp(-T f).

    Damped Newton from f = -s for s in a fixed seed grid.  ``None`` means no
    seed led to one, not that none exists.
    """
    for s in NEWTON_SEEDS:
        with np.errstate(over="ignore", invalid="ignore"):
            f = _newton(kernel, np.full(kernel.dim, -s))
        if f is None:
            continue
        res = float(np.max(np.abs(f - (1.0 - np.exp(-apply_T(kernel, f))))))
        if res <= 1e-10 and float(np.max(f)) <= -1e-6:
            return NegativeSolution(f, res, s)
    return None


def transformed_kernel(kernel: Kernel, transform: dict) -> Kernel:
    kind = transform.get("kind")
    if kind == "tilt":
        return tilt_kernel(kernel, float(transform["q"]), float(transform.get("c", 1.0)))
    if kind == "truncate":
        return truncate_kernel(kernel, int(transform["D"]), float(transform.get("c", 1.0)))
    raise KernelError(f"unknown transform {kind!r}")


def r_transformed(kernel: Kernel, transform: dict, cfg: IterationConfig = DEFAULT_CONFIG,
                  bis_tol: float = 1e-9) -> RKappaEstimate:
    """r_kappa of the tilted (``{"kind": "tilt", "q", "c"}``) or truncated
    (``{"kind": "truncate", "D", "c"}``) offspring law."""
    return r_kappa(transformed_kernel(kernel, transform), cfg, bis_tol)

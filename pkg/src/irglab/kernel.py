"""Finite type spaces, kernels and the integral operator they induce.

A kernel here is a symmetric nonnegative matrix ``kappa[x, y]`` indexed by
the labels of a :class:`TypeSpace`.  The operator acts on vectors as

    (T f)(x) = sum_y kappa(x, y) f(y) mu(y)

and most of the numerics in the package reduce to this matrix-vector product.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

WEIGHT_TOL = 1e-12
AS1_GRID = tuple(2.0 ** k for k in range(-4, 5))
_LOG_FLOAT_MAX = math.log(np.finfo(float).max)


class KernelError(ValueError):
    """Invalid type space, kernel or builder descriptor."""


class PowerIterationError(RuntimeError):
    """Power iteration hit its cap; carries a bracket for the spectral radius."""

    def __init__(self, msg, lower, upper, iterations):
        super().__init__(msg)
        self.lower = lower
        self.upper = upper
        self.iterations = iterations


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TypeSpace:
    labels: tuple
    weights: np.ndarray

    def __init__(self, labels, weights):
        labels = tuple(int(v) for v in labels)
        w = np.asarray(weights, dtype=float).ravel()
        if len(labels) == 0:
            raise KernelError("type space must contain at least one type")
        if len(labels) != w.size:
            raise KernelError(f"{len(labels)} labels but {w.size} weights")
        if any(b <= a for a, b in zip(labels, labels[1:])):
            raise KernelError("labels must be strictly increasing")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise KernelError("weights must be finite and strictly positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise KernelError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", _readonly(w))

    def __eq__(self, other):
        if not isinstance(other, TypeSpace):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash((self.labels, self.weights.tobytes()))

    @classmethod
    def normalized(cls, labels, weights):
        """Build a space from unnormalized positive weights."""
        w = np.asarray(weights, dtype=float)
        return cls(labels, w / w.sum())

    @classmethod
    def uniform(cls, dim):
        return cls(range(1, dim + 1), np.full(dim, 1.0 / dim))

    @property
    def dim(self):
        return len(self.labels)

    def index(self, label):
        try:
            return self.labels.index(int(label))
        except ValueError:
            raise KernelError(f"unknown type label {label!r}") from None

    def to_dict(self):
        return {"labels": list(self.labels), "weights": [float(v) for v in self.weights]}


@dataclass(frozen=True, eq=False)
class Kernel:
    space: TypeSpace
    matrix: np.ndarray
    builder: str = "explicit"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        d = self.space.dim
        if m.shape != (d, d):
            raise KernelError(f"kernel matrix has shape {m.shape}, space has {d} types")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise KernelError("kernel entries must be finite and nonnegative")
        if not np.array_equal(m, m.T):
            raise KernelError("kernel matrix is not symmetric")
        if self.builder not in BUILDERS:
            raise KernelError(f"unknown builder {self.builder!r}")
        object.__setattr__(self, "matrix", _readonly(m))

    @property
    def dim(self):
        return self.space.dim

    @property
    def intensity(self):
        """Offspring means K[x, y] = kappa(x, y) mu(y)."""
        return self.matrix * self.space.weights[None, :]

    def scaled(self, c):
        return Kernel(self.space, c * self.matrix, self.builder)

    def with_space(self, space, matrix=None, builder=None):
        m = self.matrix if matrix is None else matrix
        return Kernel(space, m, builder or self.builder)

    def to_dict(self):
        return {
            "space": self.space.to_dict(),
            "kernel": {"builder": "explicit", "matrix": self.matrix.tolist()},
            "builder": self.builder,
        }


BUILDERS = ("constant", "rank1", "max", "explicit")


def _positive_vector(values, name, dim):
    v = np.asarray(values, dtype=float).ravel()
    if v.size != dim:
        raise KernelError(f"{name} has {v.size} entries, space has {dim} types")
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise KernelError(f"{name} entries must be finite and positive")
    return v


def build_kernel(params: Mapping[str, Any], space: TypeSpace) -> Kernel:
    """Realize a builder descriptor on ``space``.

    ``params`` is a mapping with key ``builder`` and builder-specific params:
    ``constant`` takes ``c``, ``rank1`` takes ``phi``, ``max`` takes
    ``kappa_tilde`` (nondecreasing in label order) and ``explicit`` takes a
    symmetric ``matrix``.
    """
    kind = params.get("builder")
    d = space.dim
    if kind == "constant":
        c = float(params["c"])
        if not c > 0 or not math.isfinite(c):
            raise KernelError("constant kernel requires c > 0")
        m = np.full((d, d), c)
    elif kind == "rank1":
        phi = _positive_vector(params["phi"], "phi", d)
        m = np.outer(phi, phi)
    elif kind == "max":
        kt = _positive_vector(params["kappa_tilde"], "kappa_tilde", d)
        if np.any(np.diff(kt) < 0):
            raise KernelError("kappa_tilde must be nondecreasing")
        idx = np.maximum.outer(np.arange(d), np.arange(d))
        m = kt[idx]
    elif kind == "explicit":
        m = np.asarray(params["matrix"], dtype=float)
        if m.shape != (d, d):
            raise KernelError(f"explicit matrix has shape {m.shape}, space has {d} types")
        if not np.array_equal(m, m.T):
            raise KernelError("explicit matrix is not symmetric")
    else:
        raise KernelError(f"unknown builder {kind!r}; expected one of {BUILDERS}")
    return Kernel(space, m, kind)


def constant_kernel(c, space=None):
    space = space or TypeSpace([1], [1.0])
    return build_kernel({"builder": "constant", "c": c}, space)


def kernel_from_config(doc: Mapping[str, Any]) -> Kernel:
    """Parse ``{"space": {...}, "kernel": {"builder": ..., ...}}``."""
    try:
        sp = doc["space"]
        space = TypeSpace(sp["labels"], sp["weights"])
        return build_kernel(doc["kernel"], space)
    except KeyError as exc:
        raise KernelError(f"missing field {exc.args[0]!r} in kernel config") from None
    except TypeError as exc:
        raise KernelError(f"malformed kernel config: {exc}") from None


def load_kernel(path) -> Kernel:
    with open(Path(path)) as fh:
        return kernel_from_config(json.load(fh))


# -- operator ---------------------------------------------------------------

def apply_T(kernel: Kernel, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (kernel.dim,):
        raise KernelError(f"vector has shape {f.shape}, expected ({kernel.dim},)")
    return kernel.matrix @ (f * kernel.space.weights)


def symmetrized(kernel: Kernel) -> np.ndarray:
    """sqrt(mu(x)) kappa(x, y) sqrt(mu(y)), same spectrum as T on L2(mu)."""
    s = np.sqrt(kernel.space.weights)
    return s[:, None] * kernel.matrix * s[None, :]


def operator_norm(kernel: Kernel, tol=1e-13, max_iter=100_000) -> float:
    """Spectral norm of T via power iteration on the symmetrized matrix.

    The estimate at step k is ||M v_k|| for unit v_k, i.e. the square root of
    the Rayleigh quotient of M^2; unlike the plain Rayleigh quotient it does
    not stall when -lambda is also an eigenvalue.
    """
    m = symmetrized(kernel)
    d = m.shape[0]
    v = np.full(d, 1.0 / math.sqrt(d))
    prev = None
    for it in range(1, max_iter + 1):
        w = m @ v
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        if prev is not None and abs(est - prev) < tol * max(est, 1.0):
            return est
        prev = est
        v = w / est
    w = m @ v
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(v > 0, w / v, np.inf)
    raise PowerIterationError(
        f"power iteration did not converge in {max_iter} steps",
        lower=float(np.linalg.norm(w)), upper=float(np.max(ratios)), iterations=max_iter,
    )


def dense_norm(kernel: Kernel) -> float:
    """Dense eigensolver; reference for :func:`operator_norm`."""
    return float(np.max(np.abs(np.linalg.eigvalsh(symmetrized(kernel)))))


def hs_norm(kernel: Kernel) -> float:
    w = kernel.space.weights
    return math.sqrt(float(np.sum(kernel.matrix ** 2 * np.outer(w, w))))


def psi(kernel: Kernel) -> np.ndarray:
    return np.sqrt(kernel.matrix ** 2 @ kernel.space.weights)


def as1_margin(kernel: Kernel) -> Optional[float]:
    """Largest grid value a with sum_x exp(a psi(x)) mu(x) representable.

    On a finite space the sum is always finite mathematically; this only
    flags truncations of heavy-tailed measures.
    """
    ps = psi(kernel)
    logw = np.log(kernel.space.weights)
    best = None
    for a in AS1_GRID:
        z = a * ps + logw
        zmax = float(np.max(z))
        lse = zmax + math.log(float(np.sum(np.exp(z - zmax))))
        if lse < _LOG_FLOAT_MAX:
            best = a
    return best


@dataclass(frozen=True)
class OperatorStats:
    op_norm: float
    hs_norm: float
    t_one: np.ndarray
    psi: np.ndarray
    as1_margin: Optional[float]

    @property
    def c2(self):
        return self.hs_norm < 1.0

    def to_dict(self):
        return {
            "op_norm": self.op_norm,
            "hs_norm": self.hs_norm,
            "c2_hs_below_one": self.c2,
            "t_one": [float(v) for v in self.t_one],
            "psi": [float(v) for v in self.psi],
            "as1_margin": self.as1_margin,
        }


def operator_stats(kernel: Kernel) -> OperatorStats:
    return OperatorStats(
        op_norm=operator_norm(kernel),
        hs_norm=hs_norm(kernel),
        t_one=apply_T(kernel, np.ones(kernel.dim)),
        psi=psi(kernel),
        as1_margin=as1_margin(kernel),
    )


# -- conditions -------------------------------------------------------------

@dataclass(frozen=True)
class ConditionReport:
    inf_value: float
    sup_value: float
    c3_monotone: bool
    c3_constant: Optional[float]
    as1_margin: Optional[float]
    hs_norm: float = field(default=float("nan"))

    @property
    def inf_positive(self):
        return self.inf_value > 0

    @property
    def c1_bounded(self):
        return math.isfinite(self.sup_value)

    @property
    def c2(self):
        return self.hs_norm < 1.0

    @property
    def c3(self):
        return self.c3_monotone and self.c3_constant is not None

    @property
    def as1(self):
        return self.as1_margin is not None

    def to_dict(self):
        return {
            "inf_positive": self.inf_positive,
            "inf_value": self.inf_value,
            "c1_bounded": self.c1_bounded,
            "sup_value": self.sup_value,
            "c2_hs_below_one": self.c2,
            "hs_norm": self.hs_norm,
            "c3": self.c3,
            "c3_monotone": self.c3_monotone,
            "c3_constant": self.c3_constant,
            "as1": self.as1,
            "as1_margin": self.as1_margin,
        }


def is_monotone(kernel: Kernel) -> bool:
    # symmetric, so monotone in the first argument suffices
    return bool(np.all(np.diff(kernel.matrix, axis=0) >= 0))


def check_conditions(kernel: Kernel) -> ConditionReport:
    m = kernel.matrix
    t1 = apply_T(kernel, np.ones(kernel.dim))
    c3_const = None
    if np.all(t1 > 0):
        c3_const = float(np.max(m / np.outer(t1, t1)))
    return ConditionReport(
        inf_value=float(m.min()),
        sup_value=float(m.max()),
        c3_monotone=is_monotone(kernel),
        c3_constant=c3_const,
        as1_margin=as1_margin(kernel),
        hs_norm=hs_norm(kernel),
    )


# -- measure transforms -----------------------------------------------------

def tilt_measure(kernel: Kernel, q: float) -> tuple[TypeSpace, float]:
    """Exponentially tilted weights m_q exp(q T[1](x)) mu(x).

    Returns the new space and the normalizer m_q.
    """
    if q < 0:
        raise KernelError("tilt parameter q must be >= 0")
    t1 = apply_T(kernel, np.ones(kernel.dim))
    # shift by max for stability; m_q recovered below
    logw = q * t1 + np.log(kernel.space.weights)
    shift = float(np.max(logw))
    w = np.exp(logw - shift)
    total = float(w.sum())
    m_q = 1.0 / (total * math.exp(shift))
    return TypeSpace(kernel.space.labels, w / total), m_q


def truncate_measure(space: TypeSpace, D: int) -> tuple[TypeSpace, float]:
    """Restrict to labels <= D and renormalize; returns (space, M_D)."""
    keep = [i for i, lab in enumerate(space.labels) if lab <= D]
    if not keep:
        raise KernelError(f"truncation level {D} is below the smallest label {space.labels[0]}")
    w = space.weights[keep]
    m_d = float(w.sum())
    return TypeSpace([space.labels[i] for i in keep], w / m_d), m_d


def truncate_kernel(kernel: Kernel, D: int, c: float = 1.0) -> Kernel:
    """c * kappa restricted to labels <= D, against the renormalized measure."""
    space, _ = truncate_measure(kernel.space, D)
    k = len(space.labels)
    return Kernel(space, c * kernel.matrix[:k, :k], "explicit")


def tilt_kernel(kernel: Kernel, q: float, c: float) -> Kernel:
    """c * kappa against the tilted measure; requires c m_q >= 1."""
    space, m_q = tilt_measure(kernel, q)
    if c * m_q < 1.0 - 1e-12:
        raise KernelError(f"tilt needs c * m_q >= 1, got c={c}, m_q={m_q}")
    return Kernel(space, c * kernel.matrix, "explicit")

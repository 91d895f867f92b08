"""Shared domain types: datasets, parameter vectors, ambiguity configuration.

All numeric payloads are float64 numpy arrays. Objects are treated as
immutable after construction and are safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

Vector = NDArray[np.float64]

DEFAULT_LAMBDA_MIN = 1e-3
DEFAULT_ALPHA_MIN = 0.01
DEFAULT_SIGNAL_FLOOR = 0.01

#: Comparison tolerance used by validators and invariant checks.
NUMERIC_TOL = 1e-9


def _as_f64(x) -> Vector:
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class AmbiguityConfig:
    """Radii, tolerances and parameter-box bounds for the robust estimator.

    The derived quantities V, v1_max and v2_max are recomputed from R and
    epsilon on every access so they can never disagree with them.
    """

    epsilon: float = 0.2
    R: float = 3.0
    delta: float = 0.1
    lambda_min: float = DEFAULT_LAMBDA_MIN
    alpha_min: float = DEFAULT_ALPHA_MIN
    signal_floor: float = DEFAULT_SIGNAL_FLOOR

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.lambda_min > 0:
            raise ValueError(f"lambda_min must be positive, got {self.lambda_min}")
        if not self.alpha_min > 0:
            raise ValueError(f"alpha_min must be positive, got {self.alpha_min}")

    @property
    def V(self) -> float:
        """Bound on the proximity function over the parameter box and support."""
        return 2.0 * (1.0 + self.R) + 2.0

    @property
    def v1_max(self) -> float:
        return 2.0 * self.V

    @property
    def v2_max(self) -> float:
        return self.V / self.epsilon


@dataclass(frozen=True)
class DualPair:
    """Auxiliary variables (v1, v2) of the robust master program."""

    v1: float
    v2: float

    def __post_init__(self) -> None:
        if self.v1 < -NUMERIC_TOL or self.v2 < -NUMERIC_TOL:
            raise ValueError(f"dual variables must be nonnegative, got ({self.v1}, {self.v2})")

    def in_box(self, cfg: AmbiguityConfig, tol: float = NUMERIC_TOL) -> bool:
        return self.v1 <= cfg.v1_max + tol and self.v2 <= cfg.v2_max + tol


@dataclass
class Dataset:
    """T probe vectors and M x T response-signal vectors.

    Shapes: probes (T, N), signals (M, T, N). Construction only coerces
    dtypes; cross-field consistency is checked by :func:`validate_dataset`
    so that malformed inputs produce a report instead of an exception.
    """

    T: int
    M: int
    N: int
    probes: Vector
    signals: Vector
    noisy: bool = False

    def __post_init__(self) -> None:
        self.probes = _as_f64(self.probes)
        self.signals = _as_f64(self.signals)

    @classmethod
    def from_arrays(cls, probes, signals, noisy: bool = False) -> "Dataset":
        probes = _as_f64(probes)
        signals = _as_f64(signals)
        T, N = probes.shape
        M = signals.shape[0]
        return cls(T=T, M=M, N=N, probes=probes, signals=signals, noisy=noisy)


@dataclass(frozen=True)
class ValidationReport:
    """Result of dataset validation: ok, or the first violated invariant."""

    ok: bool
    violation: str | None = None


def validate_dataset(d: Dataset, cfg: AmbiguityConfig | None = None) -> ValidationReport:
    """Check dimension consistency and the probe/signal assumptions.

    Returns the first violation found (report style, never raises).
    """
    cfg = cfg or AmbiguityConfig()
    if d.T < 1 or d.M < 1 or d.N < 1:
        return ValidationReport(False, f"counts must be >= 1, got T={d.T}, M={d.M}, N={d.N}")
    if d.probes.ndim != 2 or d.probes.shape != (d.T, d.N):
        return ValidationReport(
            False, f"dimension mismatch: probes shape {d.probes.shape}, expected {(d.T, d.N)}"
        )
    if d.signals.ndim != 3 or d.signals.shape != (d.M, d.T, d.N):
        return ValidationReport(
            False, f"dimension mismatch: signals shape {d.signals.shape}, expected {(d.M, d.T, d.N)}"
        )
    if not np.all(np.isfinite(d.probes)) or not np.all(np.isfinite(d.signals)):
        return ValidationReport(False, "non-finite entries")
    if np.any(d.probes < 0):
        return ValidationReport(False, "negative probe entries")
    norms = np.linalg.norm(d.probes, axis=1)
    if np.any(norms < cfg.alpha_min - NUMERIC_TOL):
        t = int(np.argmin(norms))
        return ValidationReport(False, f"probe norm below bound: |alpha_{t}| = {norms[t]:.6g} < {cfg.alpha_min}")
    if np.any(d.signals < -NUMERIC_TOL):
        return ValidationReport(False, "negative signal entries")
    return ValidationReport(True)


@dataclass
class ParameterVector:
    """Afriat parameters (u, lambda), both shaped (M, T).

    The box constraints u in [-1, 1], lambda in [lam_min, 1] are enforced
    at construction (small numeric slack allowed and clipped away).
    """

    u: Vector
    lam: Vector
    lam_min: float = DEFAULT_LAMBDA_MIN

    def __post_init__(self) -> None:
        self.u = _as_f64(self.u)
        self.lam = _as_f64(self.lam)
        if self.u.shape != self.lam.shape or self.u.ndim != 2:
            raise ValueError(f"u and lambda must share shape (M, T), got {self.u.shape} and {self.lam.shape}")
        if np.any(self.u < -1 - NUMERIC_TOL) or np.any(self.u > 1 + NUMERIC_TOL):
            raise ValueError("u outside [-1, 1]")
        if np.any(self.lam < self.lam_min - NUMERIC_TOL) or np.any(self.lam > 1 + NUMERIC_TOL):
            raise ValueError(f"lambda outside [{self.lam_min}, 1]")
        self.u = np.clip(self.u, -1.0, 1.0)
        self.lam = np.clip(self.lam, self.lam_min, 1.0)

    @property
    def M(self) -> int:
        return self.u.shape[0]

    @property
    def T(self) -> int:
        return self.u.shape[1]

    @classmethod
    def default(cls, M: int, T: int, lam_min: float = DEFAULT_LAMBDA_MIN) -> "ParameterVector":
        """Neutral point of the box: all u = 0, all lambda = 1."""
        return cls(u=np.zeros((M, T)), lam=np.ones((M, T)), lam_min=lam_min)


@dataclass
class Scenario:
    """One candidate signal dataset, with its cached transport cost.

    ``transport_cost`` is the summed Euclidean distance to the reference
    (observed) signals it was built against.
    """

    signals: Vector
    transport_cost: float

    def __post_init__(self) -> None:
        self.signals = _as_f64(self.signals)

    @classmethod
    def from_signals(cls, signals, reference: Dataset) -> "Scenario":
        signals = _as_f64(signals)
        cost = float(np.linalg.norm(signals - reference.signals, axis=2).sum())
        return cls(signals=signals, transport_cost=cost)


@dataclass
class UtilityFunction:
    """Concave piecewise-affine utility f(x) = min_t [u_t + lam_t * probe_t . (x - anchor_t)].

    Monotone nondecreasing coordinatewise because probes are nonnegative
    and every lam_t is positive.
    """

    u: Vector
    lam: Vector
    probes: Vector
    anchors: Vector

    def __post_init__(self) -> None:
        self.u = _as_f64(self.u)
        self.lam = _as_f64(self.lam)
        self.probes = _as_f64(self.probes)
        self.anchors = _as_f64(self.anchors)
        if not (len(self.u) == len(self.lam) == self.probes.shape[0] == self.anchors.shape[0]):
            raise ValueError("piece counts disagree")
        if np.any(self.lam <= 0):
            raise ValueError("lambda must be positive in every piece")

    @property
    def n_pieces(self) -> int:
        return len(self.u)

    def __call__(self, x) -> float:
        x = _as_f64(x)
        vals = self.u + self.lam * np.einsum("tn,tn->t", self.probes, x[None, :] - self.anchors)
        return float(vals.min())

    def evaluate_many(self, X) -> Vector:
        """Evaluate at each row of X, shape (k, N) -> (k,)."""
        X = _as_f64(X)
        # vals[k, t] = u_t + lam_t * probe_t . (x_k - anchor_t)
        vals = self.u[None, :] + self.lam[None, :] * (
            X @ self.probes.T - np.einsum("tn,tn->t", self.probes, self.anchors)[None, :]
        )
        return vals.min(axis=1)


@dataclass
class ExchangeState:
    """Trace of one run of the exchange loop."""

    pool: list[Scenario] = field(default_factory=list)
    incumbent_psi: ParameterVector | None = None
    incumbent_v: DualPair | None = None
    cv_trace: list[float] = field(default_factory=list)
    objective_trace: list[float] = field(default_factory=list)
    iterations: int = 0


class CycleLimit(RuntimeError):
    """Pivoting exceeded the configured iteration cap (numerical pathology)."""


class InfeasibleAtSlack(RuntimeError):
    """Parameter recovery was requested at a slack below the feasibility threshold."""


class IterationCapExceeded(RuntimeError):
    """Exchange loop hit its iteration cap; carries the state for diagnosis."""

    def __init__(self, message: str, state: "ExchangeState"):
        super().__init__(message)
        self.state = state


class NonConvergence(RuntimeError):
    """Forward solver failed to reach the requested KKT residual."""


class EmptySet(ValueError):
    """A point-set operation received an empty set."""


def stack_signals(signals: Vector) -> Vector:
    """Flatten (M, N) per-agent allocations into a single (M*N,) point."""
    return _as_f64(signals).reshape(-1)


def probe_norms(probes: Sequence[Vector]) -> Vector:
    return np.linalg.norm(_as_f64(probes), axis=1)

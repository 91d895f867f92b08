"""Coordination detection, the proximity statistic, and utility reconstruction.

The central object is the per-agent pairwise feasibility system

    u_s - u_t - lam_t * (k[t, s]) <= 0   for all ordered pairs s != t,
    u in [-1, 1]^T,  lam in [lam_min, 1]^T,

where k is a T x T matrix of pair values. Coordination testing uses
k = a (the probe/signal gap matrix), the proximity statistic bisects over
k = a + r, and the robust master program reuses the same system with
pooled pair values. Feasibility is decided by a cheap necessary test
(2-cycles), a fixed-lambda shortest-path certificate, and the linear
feasibility kernel as the general fallback; all three agree with the
kernel's 1e-9 tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import linfeas
from .types import (
    AmbiguityConfig,
    Dataset,
    InfeasibleAtSlack,
    ParameterVector,
    UtilityFunction,
    validate_dataset,
)

Vector = NDArray[np.float64]

#: Default bisection tolerance for the proximity statistic.
PROXIMITY_TOL = 1e-6


def pair_gap_matrix(probes: Vector, signals: Vector) -> Vector:
    """a[t, s] = probe_t . (signal_s - signal_t) for one agent's signals (T, N)."""
    G = probes @ signals.T
    return G - np.diag(G)[:, None]


def h_value(psi: ParameterVector, signals: Vector, probes: Vector) -> float:
    """Closed-form proximity of the parameter vector to rationalizing ``signals``.

    Equals max over agents i and ordered pairs s != t of
    (u_s^i - u_t^i) / lam_t^i - probe_t . (signal_s^i - signal_t^i).
    Returns 0 for T = 1 (empty pair set).
    """
    signals = np.asarray(signals, dtype=np.float64)
    probes = np.asarray(probes, dtype=np.float64)
    T = probes.shape[0]
    if T == 1:
        return 0.0
    best = -np.inf
    off = ~np.eye(T, dtype=bool)
    for i in range(signals.shape[0]):
        a = pair_gap_matrix(probes, signals[i])
        terms = (psi.u[i][None, :] - psi.u[i][:, None]) / psi.lam[i][:, None] - a
        best = max(best, float(terms[off].max()))
    return best


# ---------------------------------------------------------------------------
# Per-agent feasibility of the pairwise system
# ---------------------------------------------------------------------------

def _pair_rows(T: int) -> tuple[Vector, NDArray[np.intp], NDArray[np.intp]]:
    """Static u-part of the constraint matrix plus (t, s) index arrays."""
    t_idx, s_idx = np.nonzero(~np.eye(T, dtype=bool))
    rows = np.arange(t_idx.size)
    A_u = np.zeros((t_idx.size, T))
    A_u[rows, s_idx] = 1.0
    A_u[rows, t_idx] = -1.0
    return A_u, t_idx, s_idx


_PAIR_CACHE: dict[int, tuple[Vector, NDArray[np.intp], NDArray[np.intp]]] = {}


def _pairs(T: int):
    if T not in _PAIR_CACHE:
        _PAIR_CACHE[T] = _pair_rows(T)
    return _PAIR_CACHE[T]


def _fixed_lambda_witness(k: Vector, lam: Vector, tol: float = 1e-12) -> Vector | None:
    """Try to satisfy the pair system with a fixed lambda via shortest paths.

    Difference constraints u_s - u_t <= lam_t * k[t, s] plus the box
    |u| <= 1 (encoded through a virtual source node). Returns u or None.
    """
    T = k.shape[0]
    W = np.full((T + 1, T + 1), np.inf)
    W[1:, 1:] = lam[:, None] * k
    np.fill_diagonal(W[1:, 1:], np.inf)
    W[0, 1:] = 1.0  # u_s <= 1
    W[1:, 0] = 1.0  # u_s >= -1
    dist = np.zeros(T + 1)
    for _ in range(T + 1):
        relaxed = np.min(dist[:, None] + W, axis=0)
        new = np.minimum(dist, relaxed)
        if np.allclose(new, dist, rtol=0, atol=0):
            break
        dist = new
    else:
        # one extra pass: any further improvement means a negative cycle
        if np.any(np.min(dist[:, None] + W, axis=0) < dist - 1e-15):
            return None
    u = dist[1:] - dist[0]
    lhs = u[None, :] - u[:, None] - lam[:, None] * k
    np.fill_diagonal(lhs, -np.inf)
    if lhs.max() > tol or np.abs(u).max() > 1 + tol:
        return None
    return u


def agent_system_feasible(
    k: Vector, lam_min: float, tol: float = 1e-9
) -> tuple[bool, tuple[Vector, Vector] | None]:
    """Feasibility of the pairwise system for one agent's pair values ``k``.

    Returns (feasible, (u, lam)) with a verified witness when feasible.
    """
    T = k.shape[0]
    if T == 1:
        return True, (np.zeros(1), np.ones(1))

    off = ~np.eye(T, dtype=bool)
    # Necessary: a 2-cycle with both pair values negative is unsatisfiable
    # for any positive lambda. Fire only safely beyond the kernel tolerance.
    both_neg = (k < 0) & (k.T < 0) & off
    if np.any(both_neg & (lam_min * (-k - k.T) > 10 * tol)):
        return False, None

    # Sufficient: a fixed lambda that admits shortest-path potentials.
    for lam_try in (np.ones(T), np.full(T, lam_min)):
        u = _fixed_lambda_witness(k, lam_try)
        if u is not None:
            return True, (u, lam_try)

    # General: phase-one linear feasibility over (u, lam).
    A_u, t_idx, s_idx = _pairs(T)
    A = np.zeros((t_idx.size, 2 * T))
    A[:, :T] = A_u
    A[np.arange(t_idx.size), T + t_idx] = -k[t_idx, s_idx]
    system = linfeas.LinearSystem(
        A=A,
        b=np.zeros(t_idx.size),
        lower=np.concatenate([-np.ones(T), np.full(T, lam_min)]),
        upper=np.ones(2 * T),
    )
    result = linfeas.feasible(system, tol=tol)
    if isinstance(result, linfeas.Feasible):
        x = result.witness
        return True, (x[:T], x[T:])
    return False, None


@dataclass
class ThresholdResult:
    """Least slack r making one agent's pair system feasible (bisected)."""

    threshold: float
    witness: tuple[Vector, Vector]
    trace: list[tuple[float, bool]] = field(default_factory=list)


def agent_slack_threshold(
    base: Vector,
    lam_min: float,
    lo: float,
    hi: float,
    tol: float,
    lo_is_infeasible: bool = False,
) -> ThresholdResult:
    """Bisect the least r with agent_system_feasible(base + r).

    ``hi`` must be feasible; ``lo`` is either known infeasible or is checked
    first (feasibility at ``lo`` short-circuits). Feasibility is monotone in
    r because every lam_t is positive.
    """
    trace: list[tuple[float, bool]] = []

    def check(r: float):
        ok, wit = agent_system_feasible(base + r, lam_min)
        trace.append((r, ok))
        return ok, wit

    if not lo_is_infeasible:
        ok, wit = check(lo)
        if ok:
            return ThresholdResult(lo, wit, trace)
    ok, wit = check(hi)
    if not ok:
        raise RuntimeError(f"bisection upper end r={hi} is infeasible")
    best = wit
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok, wit = check(mid)
        if ok:
            hi, best = mid, wit
        else:
            lo = mid
    return ThresholdResult(hi, best, trace)


def _agent_bracket(a: Vector) -> tuple[float, float]:
    """Certified bisection bracket for one agent's slack threshold.

    Below ``lo`` some 2-cycle has both pair values negative (infeasible);
    at ``hi`` every pair value is nonnegative (feasible with constant u).
    """
    T = a.shape[0]
    off = ~np.eye(T, dtype=bool)
    pair_floor = np.minimum(-a, -a.T)  # threshold >= min(-a_ts, -a_st) per 2-cycle
    lo = float(pair_floor[off].max()) - 1e-9
    hi = float((-a)[off].max())
    return lo, max(hi, lo)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

@dataclass
class CoordinationResult:
    coordinated: bool
    psi: ParameterVector | None = None


@dataclass
class ProximityResult:
    """Proximity statistic phi and a parameter vector feasible at slack phi."""

    phi: float
    witness: ParameterVector
    trace: list[tuple[float, bool]] = field(default_factory=list)


def _require_valid(d: Dataset, cfg: AmbiguityConfig) -> None:
    report = validate_dataset(d, cfg)
    if not report.ok:
        raise ValueError(f"invalid dataset: {report.violation}")


def coordination_test(d: Dataset, cfg: AmbiguityConfig | None = None) -> CoordinationResult:
    """Decide whether the dataset is consistent with coordinated maximization.

    Coordinated iff the pairwise system is feasible at zero slack for every
    agent; the returned psi is the assembled per-agent witness.
    """
    cfg = cfg or AmbiguityConfig()
    _require_valid(d, cfg)
    us, lams = [], []
    for i in range(d.M):
        a = pair_gap_matrix(d.probes, d.signals[i])
        ok, wit = agent_system_feasible(a, cfg.lambda_min)
        if not ok:
            return CoordinationResult(False)
        us.append(wit[0])
        lams.append(wit[1])
    psi = ParameterVector(u=np.array(us), lam=np.array(lams), lam_min=cfg.lambda_min)
    return CoordinationResult(True, psi)


def proximity(
    d: Dataset, cfg: AmbiguityConfig | None = None, tol: float = PROXIMITY_TOL
) -> ProximityResult:
    """Least uniform slack phi making the dataset rationalizable.

    Bisects per agent (the joint system is block separable) and takes the
    max; the witness is re-solved at phi so it is feasible for every agent
    simultaneously. For T = 1 the pair set is empty and phi = 0.
    """
    cfg = cfg or AmbiguityConfig()
    _require_valid(d, cfg)
    if d.T == 1:
        return ProximityResult(0.0, ParameterVector.default(d.M, 1, cfg.lambda_min))

    gaps = [pair_gap_matrix(d.probes, d.signals[i]) for i in range(d.M)]
    thresholds, trace = [], []
    for a in gaps:
        lo, hi = _agent_bracket(a)
        lo = max(lo, -cfg.V)
        res = agent_slack_threshold(a, cfg.lambda_min, lo, hi, tol)
        thresholds.append(res.threshold)
        trace.extend(res.trace)
    phi = float(max(thresholds))

    us, lams = [], []
    for a in gaps:
        ok, wit = agent_system_feasible(a + phi, cfg.lambda_min)
        if not ok:  # pragma: no cover - phi >= each agent's feasible point
            raise RuntimeError("witness re-solve failed at phi")
        us.append(wit[0])
        lams.append(wit[1])
    psi = ParameterVector(u=np.array(us), lam=np.array(lams), lam_min=cfg.lambda_min)
    return ProximityResult(phi, psi, trace)


def recover_parameters(
    d: Dataset, r: float, cfg: AmbiguityConfig | None = None
) -> ParameterVector:
    """Parameters satisfying every pairwise inequality at slack ``r``.

    Raises :class:`InfeasibleAtSlack` when r is below the proximity
    statistic of the dataset.
    """
    cfg = cfg or AmbiguityConfig()
    _require_valid(d, cfg)
    us, lams = [], []
    for i in range(d.M):
        a = pair_gap_matrix(d.probes, d.signals[i])
        ok, wit = agent_system_feasible(a + r, cfg.lambda_min)
        if not ok:
            raise InfeasibleAtSlack(f"pairwise system infeasible at slack r={r} (agent {i})")
        us.append(wit[0])
        lams.append(wit[1])
    return ParameterVector(u=np.array(us), lam=np.array(lams), lam_min=cfg.lambda_min)


def reconstruct_utilities(psi: ParameterVector, d: Dataset) -> list[UtilityFunction]:
    """Min-of-affine utilities anchored at the dataset's probes and signals."""
    if psi.M != d.M or psi.T != d.T:
        raise ValueError(f"psi shape ({psi.M}, {psi.T}) does not match dataset ({d.M}, {d.T})")
    return [
        UtilityFunction(u=psi.u[i], lam=psi.lam[i], probes=d.probes, anchors=d.signals[i])
        for i in range(d.M)
    ]


def evaluate_utility(f: UtilityFunction, x) -> float:
    """Exact min over the pieces of ``f`` at the point ``x``."""
    return f(x)

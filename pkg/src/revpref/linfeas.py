"""Linear feasibility kernel: find x with A x <= b, l <= x <= u, or report infeasible.

Phase-one simplex over bounded variables. The pivot rule is Bland-style
(smallest variable index), so identical inputs always produce identical
witnesses. Systems here are small and dense (tens of rows), which is the
regime this kernel is tuned for.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .types import CycleLimit

#: Stand-in for infinite bounds; large relative to every system built here.
_BIG = 1e9

_EPS_RC = 1e-10   # reduced-cost threshold for entering candidates
_EPS_PIV = 1e-11  # pivot / ratio-test threshold


@dataclass
class LinearSystem:
    """Carrier for the polyhedron {x : A x <= b, lower <= x <= upper}."""

    A: NDArray[np.float64]
    b: NDArray[np.float64]
    lower: NDArray[np.float64]
    upper: NDArray[np.float64]

    def __post_init__(self) -> None:
        self.A = np.ascontiguousarray(self.A, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if self.A.ndim != 2:
            raise ValueError("A must be 2-D")
        m, n = self.A.shape
        if self.b.shape != (m,):
            raise ValueError(f"b must have shape ({m},), got {self.b.shape}")
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must match the number of variables")
        if not np.all(np.isfinite(self.A)) or not np.all(np.isfinite(self.b)):
            raise ValueError("coefficients must be finite")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def rows(self) -> list[tuple[NDArray[np.float64], float]]:
        return [(self.A[k], float(self.b[k])) for k in range(self.A.shape[0])]

    @classmethod
    def from_rows(cls, n_vars: int, rows, bounds) -> "LinearSystem":
        """Build from sparse rows: each row is (coeffs, rhs) with coeffs a
        dict {var_index: coefficient} or a dense sequence."""
        A = np.zeros((len(rows), n_vars))
        b = np.zeros(len(rows))
        for k, (coeffs, rhs) in enumerate(rows):
            if isinstance(coeffs, dict):
                for j, c in coeffs.items():
                    A[k, j] = c
            else:
                A[k, :] = np.asarray(coeffs, dtype=np.float64)
            b[k] = rhs
        lower = np.array([lo for lo, _ in bounds], dtype=np.float64)
        upper = np.array([hi for _, hi in bounds], dtype=np.float64)
        return cls(A=A, b=b, lower=lower, upper=upper)


@dataclass(frozen=True)
class Feasible:
    witness: NDArray[np.float64]


@dataclass(frozen=True)
class Infeasible:
    #: phase-one optimum (total residual violation), > tol by construction
    residual: float = np.inf


def feasible(
    sys: LinearSystem,
    tol: float = 1e-9,
    max_pivots: int = 10**6,
) -> Feasible | Infeasible:
    """Decide feasibility of ``sys`` and return a witness when feasible.

    The witness re-verifies against the original rows and bounds before it
    is returned. Infeasibility is certified by the phase-one optimum staying
    above ``tol``. Raises :class:`CycleLimit` if pivoting exceeds
    ``max_pivots``.
    """
    lower = np.where(np.isfinite(sys.lower), sys.lower, -_BIG)
    upper = np.where(np.isfinite(sys.upper), sys.upper, _BIG)

    m, n = sys.A.shape
    # Shift to y = x - lower, 0 <= y <= w.
    w = upper - lower
    b = sys.b - sys.A @ lower

    if m == 0 or (b >= 0).all():
        # The lower-bound corner already satisfies every row.
        witness = lower.copy()
        _self_check(sys, witness, tol)
        return Feasible(witness)

    neg = b < 0
    sign = np.where(neg, -1.0, 1.0)
    n_art = int(neg.sum())

    ncols = n + m + n_art
    Aall = np.zeros((m, ncols))
    Aall[:, :n] = sys.A * sign[:, None]
    Aall[np.arange(m), n + np.arange(m)] = sign
    art_cols = n + m + np.arange(n_art)
    art_rows = np.flatnonzero(neg)
    Aall[art_rows, art_cols] = 1.0
    rhs = b * sign

    ub = np.full(ncols, np.inf)
    ub[:n] = w

    # Basis: slack on rows with b >= 0, artificial otherwise.
    basis = np.where(neg, 0, n + np.arange(m))
    basis[art_rows] = art_cols
    xB = rhs.copy()

    AT_LOWER, AT_UPPER, BASIC, RETIRED = 0, 1, 2, 3
    status = np.full(ncols, AT_LOWER, dtype=np.int8)
    status[basis] = BASIC

    # Initial basis matrix is the identity, so the tableau starts as Aall.
    Tab = Aall.copy()
    c = np.zeros(ncols)
    c[art_cols] = 1.0
    # r = c - c_B @ Tab; initial basic artificials contribute -their rows.
    r = c - np.sum(Tab[art_rows], axis=0) if n_art else c.copy()

    col_idx = np.arange(ncols)
    for _ in range(max_pivots):
        enter_lower = (status == AT_LOWER) & (r < -_EPS_RC)
        enter_upper = (status == AT_UPPER) & (r > _EPS_RC)
        candidates = col_idx[enter_lower | enter_upper]
        if candidates.size == 0:
            break
        q = int(candidates[0])  # Bland: smallest index
        from_lower = status[q] == AT_LOWER

        d = Tab[:, q] if from_lower else -Tab[:, q]
        # x_B moves by -d * step; entering variable moves by +step toward
        # the opposite bound.
        best_step = ub[q]  # bound flip
        best_kind = -1     # -1 = flip, otherwise leaving row index
        best_var = q
        ubB = ub[basis]
        dec = d > _EPS_PIV
        if dec.any():
            steps = xB[dec] / d[dec]
            rows_ = np.flatnonzero(dec)
            k = int(np.argmin(steps))
            s, rrow = float(steps[k]), int(rows_[k])
            # resolve ties toward the smallest leaving variable index
            tied = rows_[np.abs(xB[rows_] / d[rows_] - s) <= 1e-12]
            rrow = int(tied[np.argmin(basis[tied])])
            s = float(xB[rrow] / d[rrow])
            if s < best_step - 1e-12 or (s <= best_step + 1e-12 and basis[rrow] < best_var):
                best_step, best_kind, best_var = s, rrow, int(basis[rrow])
        inc = (d < -_EPS_PIV) & np.isfinite(ubB)
        if inc.any():
            steps = (ubB[inc] - xB[inc]) / (-d[inc])
            rows_ = np.flatnonzero(inc)
            k = int(np.argmin(steps))
            s, rrow = float(steps[k]), int(rows_[k])
            tied = rows_[np.abs((ubB[rows_] - xB[rows_]) / (-d[rows_]) - s) <= 1e-12]
            rrow = int(tied[np.argmin(basis[tied])])
            s = float((ub[basis[rrow]] - xB[rrow]) / (-d[rrow]))
            if s < best_step - 1e-12 or (s <= best_step + 1e-12 and basis[rrow] < best_var):
                best_step, best_kind, best_var = s, rrow, int(basis[rrow])

        if not np.isfinite(best_step):
            raise CycleLimit("phase-one ratio test found no blocking bound (numerical pathology)")
        best_step = max(best_step, 0.0)

        if best_kind == -1:
            # Bound flip: no basis change.
            xB = xB - d * best_step
            status[q] = AT_UPPER if from_lower else AT_LOWER
            continue

        p = best_kind
        leaving = int(basis[p])
        xB = xB - d * best_step
        entering_val = best_step if from_lower else ub[q] - best_step
        xB[p] = entering_val
        # Leaving variable parks at whichever bound it reached; with the
        # uniform direction convention (x_B moves by -d * step), d[p] < 0
        # means row p was increasing toward its upper bound.
        hit_upper = d[p] < 0
        if leaving >= n + m:
            status[leaving] = RETIRED  # artificials never re-enter
        else:
            status[leaving] = AT_UPPER if hit_upper else AT_LOWER
        status[q] = BASIC
        basis[p] = q

        piv = Tab[p, q]
        Tab[p] = Tab[p] / piv
        colq = Tab[:, q].copy()
        colq[p] = 0.0
        Tab -= np.outer(colq, Tab[p])
        r = r - r[q] * Tab[p]
    else:
        raise CycleLimit(f"pivot cap {max_pivots} exceeded")

    art_mask = basis >= n + m
    residual = float(xB[art_mask].sum()) if art_mask.any() else 0.0
    if residual > tol:
        return Infeasible(residual=residual)

    x_full = np.where(status == AT_UPPER, ub, 0.0)
    x_full[art_cols] = 0.0
    x_full[basis] = xB
    witness = lower + x_full[:n]
    _self_check(sys, witness, max(tol, 1e-7))
    return Feasible(witness)


def _self_check(sys: LinearSystem, x: NDArray[np.float64], tol: float) -> None:
    resid = sys.A @ x - sys.b
    if resid.size and float(resid.max()) > tol:
        raise AssertionError(f"witness violates a row by {float(resid.max()):.3g}")
    if np.any(x < sys.lower - tol) or np.any(x > sys.upper + tol):
        raise AssertionError("witness violates variable bounds")

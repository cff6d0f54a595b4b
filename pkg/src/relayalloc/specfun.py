"""Exponential-integral product and its rational approximation.

Every ergodic-rate expression in this package reduces to evaluations of

    exp(x) * E1(x),   E1(x) = integral_1^inf exp(-x*t)/t dt,   x > 0.

The product is evaluated exactly here (series below 1, continued fraction
above, which also avoids the exp overflow for large x), and approximated by
degree-1 rational functions (a*x + b)/(c + x) with different constants per
decibel range of x. The fast allocators rely on the rational form because it
turns the power stationarity condition into a quartic with closed-form roots.

Two coefficient tables are shipped: ``FITTED_TABLE`` is regenerated by
``fit_coeffs`` and is what the allocators use; ``REFERENCE_TABLE`` is a
legacy constant set retained for comparison (the ``fit-table`` command
reports the fit quality of both).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import opcount

EULER_GAMMA = 0.57721566490153286060651209008240243
LOG2E = math.log2(math.e)

_SERIES_MAX_TERMS = 64
_CF_MAX_ITER = 400
_TERM_TOL = 1e-15
_TINY = 1e-300


def _as_positive_array(x, name: str):
    arr = np.asarray(x, dtype=float)
    if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr <= 0.0)):
        bad = arr[~(np.isfinite(arr) & (arr > 0.0))].flat[0]
        raise ValueError(f"{name} requires x > 0 and finite, got {bad!r}")
    return arr


def _exp_e1_series(x: np.ndarray) -> np.ndarray:
    # exp(x) * (-gamma - ln x + sum_k (-1)^(k+1) x^k / (k k!)), for x < 1
    acc = -EULER_GAMMA - np.log(x)
    p = np.ones_like(x)
    for k in range(1, _SERIES_MAX_TERMS):
        p = p * (-x) / k
        term = -p / k
        acc = acc + term
        if np.max(np.abs(term)) < _TERM_TOL * np.min(np.abs(acc)):
            break
    return np.exp(x) * acc


def _exp_e1_cf(x: np.ndarray) -> np.ndarray:
    # exp(x)E1(x) = 1/(x+1 - 1^2/(x+3 - 2^2/(x+5 - ...))), modified Lentz.
    f = x + 1.0
    C = f.copy()
    D = np.zeros_like(x)
    done = np.zeros(x.shape, dtype=bool)
    for j in range(2, _CF_MAX_ITER):
        a = -((j - 1.0) ** 2)
        b = x + (2.0 * j - 1.0)
        D = b + a * D
        np.copyto(D, _TINY, where=np.abs(D) < _TINY)
        C = b + a / C
        np.copyto(C, _TINY, where=np.abs(C) < _TINY)
        D = 1.0 / D
        delta = C * D
        f = np.where(done, f, f * delta)
        done |= np.abs(delta - 1.0) < 1e-14
        if done.all():
            break
    return 1.0 / f


def exp_e1(x):
    """exp(x) * E1(x) for x > 0, scalar or array.

    Computed without forming exp(x) and E1(x) separately, so it stays finite
    for arbitrarily large x; the value always lies in (1/(x+1), 1/x).
    """
    arr = _as_positive_array(x, "exp_e1")
    opcount.tally(opcount.EXP, arr.size)
    opcount.tally(opcount.E1, arr.size)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    small = arr < 1.0
    if small.any():
        out[small] = _exp_e1_series(arr[small])
    big = ~small
    if big.any():
        out[big] = _exp_e1_cf(arr[big])
    return float(out[0]) if scalar else out


def e1(x):
    """Exponential integral E1(x) for x > 0, scalar or array.

    Absolute accuracy is at the 1e-15 level over the tested range; the result
    underflows to 0.0 for x beyond ~745 where E1 drops below double range.
    """
    arr = _as_positive_array(x, "e1")
    opcount.tally(opcount.E1, arr.size)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    small = arr < 1.0
    if small.any():
        xs = arr[small]
        acc = -EULER_GAMMA - np.log(xs)
        p = np.ones_like(xs)
        for k in range(1, _SERIES_MAX_TERMS):
            p = p * (-xs) / k
            term = -p / k
            acc = acc + term
            if np.max(np.abs(term)) < _TERM_TOL * np.min(np.abs(acc)):
                break
        out[small] = acc
    big = ~small
    if big.any():
        xb = arr[big]
        out[big] = np.exp(-xb) * _exp_e1_cf(xb)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class RationalCoeffs:
    """Constants of one rational approximation range.

    (a*x + b)/(c + x) approximates exp(x)E1(x) for x whose decibel value
    10*log10(x) lies in [range_lo_db, range_hi_db).
    """

    a: float
    b: float
    c: float
    range_lo_db: float
    range_hi_db: float

    def __post_init__(self):
        if not self.c > 0.0:
            raise ValueError(f"RationalCoeffs.c must be > 0, got {self.c}")
        if not self.range_lo_db < self.range_hi_db:
            raise ValueError(
                f"RationalCoeffs range is empty: [{self.range_lo_db}, {self.range_hi_db}]"
            )

    @property
    def lo_linear(self) -> float:
        return 10.0 ** (self.range_lo_db / 10.0)

    @property
    def hi_linear(self) -> float:
        return 10.0 ** (self.range_hi_db / 10.0)


# Legacy reference constants kept for comparison with the refit path.
REFERENCE_TABLE = (
    RationalCoeffs(a=2.4989, b=0.0364, c=0.005416, range_lo_db=-15.0, range_hi_db=0.0),
    RationalCoeffs(a=0.3495, b=0.3698, c=0.0985, range_lo_db=0.0, range_hi_db=15.0),
    RationalCoeffs(a=0.003246, b=0.9306, c=0.583, range_lo_db=15.0, range_hi_db=30.0),
)

# Regenerated by fit_coeffs (n = 10^4 per range); used by the allocators.
# tests/test_specfun.py asserts these stay in sync with the fitting code.
FITTED_TABLE = (
    RationalCoeffs(
        a=0.34953573624501694, b=0.3697853868750016, c=0.09847208068152538,
        range_lo_db=-15.0, range_hi_db=0.0,
    ),
    RationalCoeffs(
        a=0.0037451222065972207, b=0.9226319410774166, c=0.5639677849589837,
        range_lo_db=0.0, range_hi_db=15.0,
    ),
    RationalCoeffs(
        a=8.555617882738185e-07, b=0.9995837456259062, c=0.9602946142846468,
        range_lo_db=15.0, range_hi_db=30.0,
    ),
)


def rational_approx(x, coeffs: RationalCoeffs):
    """(a*x + b)/(c + x); scalar or array."""
    arr = np.asarray(x, dtype=float)
    opcount.tally(opcount.MUL, arr.size)
    opcount.tally(opcount.DIV, arr.size)
    out = (coeffs.a * arr + coeffs.b) / (coeffs.c + arr)
    return float(out) if arr.ndim == 0 else out


def select_coeffs(delta: float, table: Sequence[RationalCoeffs] = FITTED_TABLE) -> RationalCoeffs:
    """Pick the table row whose dB range contains the ratio ``delta``.

    Comparison happens on the linear scale against precomputed range bounds,
    so selection costs no logarithms. Ratios outside the table clamp to the
    nearest row; ``delta`` may be +inf (clamps to the top row).
    """
    if not table:
        raise ValueError("select_coeffs: empty coefficient table")
    if not delta > 0.0 or math.isnan(delta):
        raise ValueError(f"select_coeffs: delta must be > 0, got {delta!r}")
    rows = sorted(table, key=lambda r: r.range_lo_db)
    for row in rows:
        if delta < row.hi_linear:
            return row
    return rows[-1]


@dataclass(frozen=True)
class FitResult:
    coeffs: RationalCoeffs
    residual: float
    iterations: int
    converged: bool


def sample_grid(range_lo_db: float, range_hi_db: float, n: int) -> np.ndarray:
    """n sample ratios spaced uniformly in dB over [lo, hi]."""
    return 10.0 ** (np.linspace(range_lo_db, range_hi_db, n) / 10.0)


def _rational(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    a, b, c = theta
    return (a * x + b) / (c + x)


def fit_rational(x: np.ndarray, y: np.ndarray, init=(1.0, 1.0, 1.0), *,
                 damping0: float = 1e-3, max_iter: int = 500,
                 rel_tol: float = 1e-12):
    """Least-squares fit of (a*x + b)/(c + x) to samples (x, y).

    Levenberg-Marquardt with multiplicative damping (x10 on failure, /10 on
    success) starting from ``init``. Steps that would make the denominator
    c + x vanish anywhere on the grid are rejected like any other failed
    step. Returns (theta, residual, iterations, converged); ``converged`` is
    False when the iteration budget runs out before the relative residual
    change drops below ``rel_tol`` (best parameters so far are returned).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise ValueError("fit_rational needs at least 3 samples")
    theta = np.asarray(init, dtype=float).copy()
    lam = damping0
    x_min = float(x.min())

    def sse(th):
        if th[2] + x_min <= 1e-12:
            return np.inf
        r = y - _rational(th, x)
        return float(r @ r)

    S = sse(theta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        a, b, c = theta
        denom = c + x
        model = (a * x + b) / denom
        r = y - model
        J = np.stack([x / denom, 1.0 / denom, -(a * x + b) / denom**2], axis=1)
        g = J.T @ r
        H = J.T @ J
        accepted = False
        S_new = S
        while lam <= 1e15:
            A = H + lam * np.diag(np.diag(H))
            try:
                step = np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = theta + step
            S_trial = sse(trial)
            if S_trial < S:
                theta = trial
                S_new = S_trial
                lam = max(lam / 10.0, 1e-15)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent possible at machine precision: a numerical minimum,
            # unless the very first step already failed
            converged = it > 1
            break
        rel_change = (S - S_new) / max(S, 1e-300)
        S = S_new
        if rel_change < rel_tol:
            converged = True
            break
    return theta, S, it, converged


def fit_coeffs(range_lo_db: float, range_hi_db: float, n: int = 10_000, *,
               init=(1.0, 1.0, 1.0), max_iter: int = 500) -> FitResult:
    """Fit the rational constants for one dB range of exp(x)E1(x).

    Minimises the sum of squared residuals over ``n`` samples spaced
    uniformly in dB. Preconditions: lo < hi, n >= 3.
    """
    if not range_lo_db < range_hi_db:
        raise ValueError("fit_coeffs: range_lo_db must be < range_hi_db")
    if n < 3:
        raise ValueError("fit_coeffs: n must be >= 3")
    x = sample_grid(range_lo_db, range_hi_db, n)
    y = exp_e1(x)
    theta, S, it, conv = fit_rational(x, y, init, max_iter=max_iter)
    coeffs = RationalCoeffs(
        a=float(theta[0]), b=float(theta[1]), c=float(theta[2]),
        range_lo_db=range_lo_db, range_hi_db=range_hi_db,
    )
    return FitResult(coeffs=coeffs, residual=S, iterations=it, converged=conv)


def residual_sum(coeffs: RationalCoeffs, n: int = 10_000) -> float:
    """Sum of squared approximation residuals of a row over its own range."""
    x = sample_grid(coeffs.range_lo_db, coeffs.range_hi_db, n)
    r = exp_e1(x) - rational_approx(x, coeffs)
    return float(r @ r)


def rmse_mean(residual: float, n: int) -> float:
    """Root mean squared error, sqrt(S/n)."""
    return math.sqrt(residual / n)


def rmse_alt(residual: float, n: int) -> float:
    """Alternate RMSE definition sqrt(S^2/n), reported alongside sqrt(S/n)."""
    return math.sqrt(residual**2 / n)


_CSV_FIELDS = ("range_lo_db", "range_hi_db", "a", "b", "c")


def save_table(path, table: Sequence[RationalCoeffs]) -> None:
    """Write a coefficient table as CSV (range_lo_db, range_hi_db, a, b, c)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_CSV_FIELDS)
        for row in table:
            w.writerow([row.range_lo_db, row.range_hi_db, row.a, row.b, row.c])


def load_table(path) -> tuple[RationalCoeffs, ...]:
    """Read a coefficient table written by :func:`save_table`."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(_CSV_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"coefficient CSV missing columns: {sorted(missing)}")
        for rec in reader:
            rows.append(RationalCoeffs(
                a=float(rec["a"]), b=float(rec["b"]), c=float(rec["c"]),
                range_lo_db=float(rec["range_lo_db"]),
                range_hi_db=float(rec["range_hi_db"]),
            ))
    if not rows:
        raise ValueError("coefficient CSV contains no rows")
    return tuple(sorted(rows, key=lambda r: r.range_lo_db))

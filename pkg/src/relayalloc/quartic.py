"""Closed forms behind the fast allocators.

Two pieces of machinery live here.

``constraint_power`` solves the rate-constraint boundary R_2m = R_1m for the
relay power, with the rational approximation substituted for the
exponential-integral product: clearing denominators gives the quadratic
k1 P^2 - k2 P - k3 = 0 with

    k1 = b - c psi
    k2 = k_rd (psi - a) + (c P_s k_rd / k_sd)(beta - psi)
    k3 = (P_s k_rd^2 / k_sd)(beta - psi)

where psi = exp_e1(k_sr/P_s) and beta = exp_e1(k_sd/P_s). A non-positive or
complex solution means the relay cannot help the user within the model and
maps to power 0 (admission control).

``kkt_power`` inverts the marginal-rate condition dR_2m^+/dP = tau. With the
rational approximation the condition clears to a monic quartic
P^4 + l1 P^3 + l2 P^2 + l3 P - l4 = 0 whose closed-form roots Ferrari's
method provides (``solve_quartic``); the coefficient set used for the
marginal is produced by ``stationarity_coeffs``. ``depressed_coeffs`` is a
legacy coefficient variant retained because its l4 > 0 structure guarantees
one or three positive roots (Descartes); it is not a usable water-filling
marginal (not monotone in tau) and the allocators do not use it.

The rational approximation introduces a spurious pole at the crossover power
s = P_s k_rd / k_sd where the exact rate expression has only a removable
singularity; root selection therefore discards candidates at the pole and,
for the marginal, keeps only concave-side stationary points, picking the one
with the largest Lagrangian value f(P) - tau P.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import opcount
from .specfun import LOG2E, RationalCoeffs, exp_e1

_REAL_TOL = 1e-8
_POLE_TOL = 1e-9
_RESIDUAL_TOL = 1e-6
_ETA1_ZERO = 1e-10


class QuarticSolveError(RuntimeError):
    """No admissible root could be certified for the given coefficients."""


# re-exported for allocator use
__all__ = [
    "QuarticProblem", "QuarticSolveError", "constraint_power",
    "constraint_power_given", "depressed_coeffs", "stationarity_coeffs",
    "quartic_roots", "quartic_residual", "solve_quartic", "marginal_power_arr",
    "pin_coeffs", "kkt_power", "problem",
]


@dataclass(frozen=True)
class QuarticProblem:
    """Assembled marginal-power problem for one user (debug/diagnostics)."""

    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float
    tau: float
    beta: float
    psi: float
    coeffs: RationalCoeffs
    k_sd: float
    k_rd: float
    P_s: float


# -- rate-constraint power cap ---------------------------------------------


def constraint_power(k_rd: float, k_sr: float, k_sd: float, P_s: float,
                     coeffs: RationalCoeffs) -> float:
    """Power at which the approximated R_2m meets R_1m.

    Returns 0 when the relay cannot help the user at any power (psi <= beta:
    admission refused) and +inf when the constraint cannot bind within the
    approximation's range (callers clip at the budget). Otherwise the cleared
    constraint is the quadratic k1 P^2 - k2 P - k3 = 0, whose roots are the
    crossover power s = P_s k_rd / k_sd (an exact artifact of the pinned
    constants) and the genuine cap.
    """
    psi = exp_e1(k_sr / P_s)
    beta = exp_e1(k_sd / P_s)
    return constraint_power_given(k_rd, k_sd, P_s, coeffs, psi, beta)


def constraint_power_given(k_rd: float, k_sd: float, P_s: float,
                           coeffs: RationalCoeffs, psi: float, beta: float) -> float:
    """constraint_power with psi/beta precomputed.

    The constants are re-anchored at the crossover ratio first (see
    :func:`pin_coeffs`); with raw constants the quadratic's smaller root is a
    pole-flank artifact whenever the true cap lies beyond the crossover power.
    """
    if psi <= beta:
        return 0.0
    a, b, c = pin_coeffs(coeffs, k_sd, P_s, beta)
    opcount.tally(opcount.MUL, 10)
    opcount.tally(opcount.DIV, 2)
    k1 = b - c * psi
    if k1 <= 1e-12 * max(abs(b), c * psi):
        # the level psi - beta meets or exceeds the rational's ceiling b/c -
        # beta: the constraint never binds within the approximation's range
        return math.inf
    k2 = k_rd * (psi - a) + (c * P_s * k_rd / k_sd) * (beta - psi)
    k3 = (P_s * k_rd**2 / k_sd) * (beta - psi)
    s = P_s * k_rd / k_sd
    # pinning makes the crossover power an exact root of the cleared
    # quadratic; the cap is the other root (clamped nonnegative disc guards
    # the float residue of the pin)
    disc = max(k2 * k2 + 4.0 * k1 * k3, 0.0)
    opcount.tally(opcount.SQRT, 1)
    root = math.sqrt(disc)
    cands = [(k2 - root) / (2.0 * k1), (k2 + root) / (2.0 * k1)]
    genuine = max(cands, key=lambda r: abs(r - s))
    if genuine > 0.0:
        return genuine
    return s


# -- quartic coefficient sets ------------------------------------------------


def depressed_coeffs(k_rd, k_sd, beta, coeffs: RationalCoeffs, tau):
    """Legacy quartic coefficients (l1, l2, l3, l4); l4 > 0 for valid inputs.

    Retained for its sign structure: with l4 > 0, Descartes's rule forces one
    or three positive roots of P^4 + l1 P^3 + l2 P^2 + l3 P - l4. Scalar or
    array arguments.
    """
    a, b, c = coeffs.a, coeffs.b, coeffs.c
    le = LOG2E
    tl = tau * le
    l1 = -k_rd * (2.0 * c * k_sd - 1.0) / c - 1.0 / tl
    l2 = (k_rd / c) * (
        2.0 * k_sd * (c * k_rd * k_sd - 1.0)
        + k_sd * (c * (1.0 - beta) + b) / tl
        + k_rd * (b - 1.0) / tl
    )
    l3 = (k_rd * k_sd * (k_rd**2 * k_sd * tl + b + (1.0 - beta)) / (c * tl)
          + k_rd**2 * a / (c * tl))
    l4 = k_rd**3 * k_sd * a / (c * tl)
    return l1, l2, l3, l4


def stationarity_coeffs(k_rd, k_sd, beta, coeffs: RationalCoeffs, tau, P_s):
    """Coefficients of the marginal-rate quartic dR_2m^+/dP = tau.

    Derived by differentiating the approximated R_2m^+ and clearing the
    denominators (P - s)^2 (cP + k_rd)^2; scalar or array arguments. Unlike
    the legacy set, l4 may take either sign: l4 <= 0 signals that the user's
    marginal rate at zero power is already below tau (water level above the
    user, no power allocated).
    """
    a, b, c = coeffs.a, coeffs.b, coeffs.c
    le = LOG2E
    k = k_rd
    s = P_s * k_rd / k_sd
    u = k - c * s
    v = k * s
    A = tau * c * c
    opcount.tally(opcount.MUL, 30 * np.size(k))
    opcount.tally(opcount.DIV, 5 * np.size(k))
    l1 = 2.0 * tau * c * u / A
    l2 = (tau * (u * u - 2.0 * c * v) - le * (k * (b - a * c) - s * c * (b - beta * c))) / A
    l3 = (-2.0 * tau * u * v + 2.0 * le * s * k * (b - beta * c)) / A
    const = (tau * v * v + le * s * (a - beta) * k * k) / A
    return l1, l2, l3, -const


# -- closed-form quartic roots -----------------------------------------------


def quartic_roots(l1, l2, l3, l4) -> np.ndarray:
    """All four roots of P^4 + l1 P^3 + l2 P^2 + l3 P - l4 = 0 (complex).

    Ferrari's closed form evaluated in complex arithmetic; intermediate
    radicals may pass through complex values for real coefficient sets, which
    is expected and harmless. Batched: array inputs give shape (4, n).
    """
    l1, l2, l3, l4 = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (l1, l2, l3, l4))
    )
    scalar = l1.ndim == 0
    l1, l2, l3, l4 = (np.atleast_1d(v) for v in (l1, l2, l3, l4))
    n = l1.size
    opcount.tally(opcount.SQRT, 8 * n)  # four complex square roots
    opcount.tally(opcount.CBRT, n)
    opcount.tally(opcount.MUL, 40 * n)
    opcount.tally(opcount.DIV, 6 * n)

    e0 = -l4  # constant term
    d0 = (l2 * l2 - 3.0 * l1 * l3 + 12.0 * e0).astype(complex)
    d1 = (2.0 * l2**3 - 9.0 * l1 * l2 * l3 + 27.0 * l3 * l3
          + 27.0 * l1 * l1 * e0 - 72.0 * l2 * e0).astype(complex)
    inner = np.sqrt(d1 * d1 - 4.0 * d0**3)
    base = 0.5 * (d1 + inner)
    alt = 0.5 * (d1 - inner)
    use_alt = np.abs(base) < 1e-12 * np.maximum(np.abs(alt), 1.0)
    Q = np.where(use_alt, alt, base) ** (1.0 / 3.0)
    both_zero = (np.abs(base) < 1e-300) & (np.abs(alt) < 1e-300)
    Qsafe = np.where(both_zero, 1.0, Q)
    theta = l2 / 3.0 + np.where(both_zero, 0.0, (Qsafe + d0 / Qsafe) / 3.0)

    eta1 = np.sqrt(l1 * l1 / 4.0 - l2 + theta)
    small = np.abs(eta1) < _ETA1_ZERO * (1.0 + np.abs(l1))
    eta1_safe = np.where(small, 1.0, eta1)
    coupling = (4.0 * l1 * l2 - 8.0 * l3 - l1**3) / (4.0 * eta1_safe)
    body = 0.75 * l1 * l1 - eta1 * eta1 - 2.0 * l2
    eta2 = np.sqrt(body + coupling)
    eta3 = np.sqrt(body - coupling)
    quarter = l1 / 4.0
    roots = np.stack([
        (eta1 + eta2) / 2.0 - quarter,
        (eta1 - eta2) / 2.0 - quarter,
        (-eta1 + eta3) / 2.0 - quarter,
        (-eta1 - eta3) / 2.0 - quarter,
    ])
    if small.any():
        # eta1 = 0: the shifted quartic is biquadratic; solve in u^2 directly
        p = l2 - 3.0 * l1 * l1 / 8.0
        r = e0 - l1 * l3 / 4.0 + l1 * l1 * l2 / 16.0 - 3.0 * l1**4 / 256.0
        disc = np.sqrt(p.astype(complex) ** 2 - 4.0 * r)
        u1 = np.sqrt((-p + disc) / 2.0)
        u2 = np.sqrt((-p - disc) / 2.0)
        bi = np.stack([u1 - quarter, -u1 - quarter, u2 - quarter, -u2 - quarter])
        roots = np.where(small[None, :], bi, roots)
    return roots[:, 0] if scalar else roots


def quartic_residual(r, l1, l2, l3, l4):
    """Normalized residual of a candidate root.

    |q(r)| divided by max(1, |l4|, sum of term magnitudes). Including the
    term-magnitude sum makes this the standard backward error: plain
    evaluation noise on a large root already exceeds 1e-6 when normalized by
    l4 alone, so that scale would reject exact roots.
    """
    val = np.abs(((r + l1) * r + l2) * r**2 + l3 * r - l4)
    m = np.abs(r)
    scale = m**4 + np.abs(l1) * m**3 + np.abs(l2) * m**2 + np.abs(l3) * m
    return val / np.maximum(1.0, np.maximum(np.abs(l4), scale))


def _positive_real_roots(l1, l2, l3, l4) -> np.ndarray:
    roots = quartic_roots(l1, l2, l3, l4)
    real = roots.real[np.abs(roots.imag) <= _REAL_TOL * (1.0 + np.abs(roots.real))]
    return np.sort(real[real > 0.0])


def _newton_polish(r: float, l1, l2, l3, l4, steps: int = 3) -> float:
    for _ in range(steps):
        f = ((r + l1) * r + l2) * r**2 + l3 * r - l4
        fp = ((4.0 * r + 3.0 * l1) * r + 2.0 * l2) * r + l3
        if fp == 0.0:
            break
        rn = r - f / fp
        if not (rn > 0.0 and np.isfinite(rn)):
            break
        if quartic_residual(rn, l1, l2, l3, l4) >= quartic_residual(r, l1, l2, l3, l4):
            break
        r = rn
    return r


def _bisect_largest_root(l1, l2, l3, l4) -> float:
    # scan down from the Cauchy bound for the sign change across the largest root
    hi = 1.0 + max(abs(l1), abs(l2), abs(l3), abs(l4))
    xs = np.linspace(hi, 0.0, 1025)
    vals = ((xs + l1) * xs + l2) * xs**2 + l3 * xs - l4
    neg = np.nonzero(vals < 0.0)[0]
    if neg.size == 0:
        raise QuarticSolveError(
            f"no positive real root for coefficients ({l1}, {l2}, {l3}, {l4})"
        )
    i = neg[0]
    if i == 0:
        raise QuarticSolveError(
            f"largest root exceeds the Cauchy bound for ({l1}, {l2}, {l3}, {l4})"
        )
    lo_x, hi_x = xs[i], xs[i - 1]  # f(lo_x) < 0 <= f(hi_x)
    for _ in range(200):
        mid = 0.5 * (lo_x + hi_x)
        v = ((mid + l1) * mid + l2) * mid**2 + l3 * mid - l4
        if v < 0.0:
            lo_x = mid
        else:
            hi_x = mid
    return 0.5 * (lo_x + hi_x)


def solve_quartic(l1: float, l2: float, l3: float, l4: float) -> float:
    """Largest positive real root of P^4 + l1 P^3 + l2 P^2 + l3 P - l4 = 0.

    The closed form is the fast path; the returned root must pass the
    residual check |q(r)|/max(1, l4) < 1e-6, otherwise a bracketed bisection
    recomputes it. Raises :class:`QuarticSolveError` when no positive real
    root exists.
    """
    pos = _positive_real_roots(l1, l2, l3, l4)
    if pos.size:
        r = _newton_polish(float(pos[-1]), l1, l2, l3, l4)
        if quartic_residual(r, l1, l2, l3, l4) < _RESIDUAL_TOL:
            return r
    r = _bisect_largest_root(l1, l2, l3, l4)
    r = _newton_polish(r, l1, l2, l3, l4)
    if quartic_residual(r, l1, l2, l3, l4) >= _RESIDUAL_TOL:
        raise QuarticSolveError(
            f"root failed the residual check for ({l1}, {l2}, {l3}, {l4})"
        )
    return r


# -- marginal power (allocator hot path) --------------------------------------


def _rational_objective(P, a, b, c, beta, k_rd, s):
    # approximated R_2m^+ as a pure rational function of P
    delta = k_rd / P
    X = (a * delta + b) / (c + delta)
    return LOG2E * (X - beta) / (1.0 - s / P)


def marginal_power_arr(k_rd, k_sd, beta, a, b, c, tau: float, P_s: float) -> np.ndarray:
    """Water-filling marginal powers for a batch of users at multiplier tau.

    Solves dR_2m^+/dP = tau per user via the closed-form quartic, then keeps
    only stationary points on a concave branch (second difference < 0) away
    from the approximation pole, and returns the candidate with the largest
    per-user Lagrangian value f(P) - tau P, or 0 when no candidate beats
    allocating nothing. Nonincreasing in tau by construction.
    """
    k_rd, k_sd, beta, a, b, c = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (k_rd, k_sd, beta, a, b, c))
    )
    l1, l2, l3, l4 = stationarity_coeffs(k_rd, k_sd, beta, _CoeffView(a, b, c), tau, P_s)
    roots = quartic_roots(l1, l2, l3, l4)
    s = P_s * k_rd / k_sd
    real = np.abs(roots.imag) <= _REAL_TOL * (1.0 + np.abs(roots.real))
    P = roots.real
    ok = real & (P > 0.0) & (np.abs(P - s[None, :]) > _POLE_TOL * s[None, :])
    Psafe = np.where(ok, P, 1.0)
    h = 1e-4 * Psafe
    ok &= Psafe - h > 0.0
    f0 = _rational_objective(Psafe, a, b, c, beta, k_rd, s)
    fp = _rational_objective(Psafe + h, a, b, c, beta, k_rd, s)
    fm = _rational_objective(Psafe - h, a, b, c, beta, k_rd, s)
    ok &= (fp - 2.0 * f0 + fm) < 0.0
    lagr = np.where(ok, f0 - tau * Psafe, -np.inf)
    best = np.argmax(lagr, axis=0)
    idx = np.arange(P.shape[1])
    power = np.where(lagr[best, idx] > 0.0, Psafe[best, idx], 0.0)
    return power


class _CoeffView:
    """Duck-typed RationalCoeffs over arrays, for the batched coefficient math."""

    __slots__ = ("a", "b", "c")

    def __init__(self, a, b, c):
        self.a, self.b, self.c = a, b, c


def pin_coeffs(coeffs: RationalCoeffs, k_sd: float, P_s: float, beta: float):
    """(a, b, c) shifted so the rational equals beta at the crossover ratio.

    The shift keeps the rational degree-1 (a -> a - eps, b -> b - eps*c) and
    makes its numerator vanish exactly where the rate expression has its
    removable singularity, i.e. it removes the approximation's spurious pole.
    """
    d_s = k_sd / P_s
    eps = (coeffs.a * d_s + coeffs.b) / (coeffs.c + d_s) - beta
    return coeffs.a - eps, coeffs.b - eps * coeffs.c, coeffs.c


def kkt_power(k_rd: float, k_sd: float, beta: float, coeffs: RationalCoeffs,
              tau: float, P_s: float) -> float:
    """Power allocated to one user at multiplier tau, clipped at 0.

    The coefficients are first re-anchored with :func:`pin_coeffs`; without
    that the spurious pole makes the stationary branch disappear over a tau
    window and the power is not monotone. Nonincreasing in tau (strictly
    decreasing wherever positive) and reaching 0 once tau exceeds the user's
    marginal rate at zero power, which is what makes the budget bisection of
    the Lagrangian allocator valid.
    """
    if not tau > 0.0:
        raise ValueError(f"kkt_power: tau must be > 0, got {tau}")
    a, b, c = pin_coeffs(coeffs, k_sd, P_s, beta)
    out = marginal_power_arr(
        np.array([k_rd]), np.array([k_sd]), np.array([beta]),
        np.array([a]), np.array([b]), np.array([c]),
        tau, P_s,
    )
    return float(max(out[0], 0.0))


def problem(k_rd: float, k_sr: float, k_sd: float, P_s: float,
            coeffs: RationalCoeffs, tau: float) -> QuarticProblem:
    """Assemble the per-user diagnostic record (legacy coefficient set)."""
    psi = exp_e1(k_sr / P_s)
    beta = exp_e1(k_sd / P_s)
    l1, l2, l3, l4 = depressed_coeffs(k_rd, k_sd, beta, coeffs, tau)
    return QuarticProblem(
        lambda1=float(l1), lambda2=float(l2), lambda3=float(l3), lambda4=float(l4),
        tau=tau, beta=float(beta), psi=float(psi), coeffs=coeffs,
        k_sd=k_sd, k_rd=k_rd, P_s=P_s,
    )

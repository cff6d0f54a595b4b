"""Relay power allocation schemes.

All schemes distribute the relay budget P_r across the M users from channel
statistics only. They share two building blocks: per-user power caps (the
power at which the delivered rate R_2m meets the decode rate R_1m; pushing
past the cap wastes relay power) and the classical water-filling estimate on
mean-field combined gains.

* ``pas0_reference`` -- numerical reference: generic projected-ascent
  maximizer with finite-difference gradients over the exact objective.
* ``pas1``           -- Lagrangian scheme: bisection on the multiplier tau,
  per-user powers from the closed-form marginal quartic, cap-and-redistribute
  outer loop, and a short exact-gradient leveling pass.
* ``pas2``           -- sorted equal-power scheme with the same
  cap-and-redistribute loop but no multiplier search.
* ``subop``          -- the equal-power baseline without rate-constraint
  capping (what PAS-2 would be with the cap loop removed).
* ``cwf_estimate``   -- plain water-filling on mean-field combined gains.
* ``grid_oracle``    -- exhaustive simplex grid search for M <= 3.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .model import NetworkConfig, mean_combined_gains, path_coeff_arrays
from .quartic import marginal_power_arr
from .rates import r2m_plus_arr, r2m_plus_slope
from .specfun import FITTED_TABLE, LOG2E, exp_e1, select_coeffs

SCHEMES = ("pas0", "pas1", "pas2", "cwf", "subop", "oracle")

_BUDGET_RTOL = 1e-6          # budget invariant: |sum P - P_r| <= 1e-6 P_r
_CAP_SLACK = 1e-9            # powers may sit on caps up to this slack
_TAU_LO = 1e-9


class AllocationError(RuntimeError):
    """An allocator could not produce a valid allocation."""


@dataclass(frozen=True)
class Allocation:
    """Relay powers for one scenario plus solver metadata.

    ``shortfall`` is the unspendable budget remainder when every user is
    frozen at its cap (sum of caps below P_r); it is zero otherwise.
    """

    powers: np.ndarray
    scheme: str
    iterations: int
    capped_users: frozenset[int]
    residual: float
    shortfall: float = 0.0
    converged: bool = True
    message: str = ""
    history: tuple[float, ...] = field(default=(), repr=False)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# scheme={self.scheme},iterations={self.iterations},"
                     f"residual={self.residual!r},shortfall={self.shortfall!r}\n")
            w = csv.writer(fh)
            w.writerow(["user", "power", "capped"])
            for m, p in enumerate(self.powers):
                w.writerow([m, repr(float(p)), m in self.capped_users])


def _finish(cfg: NetworkConfig, powers: np.ndarray, scheme: str, iterations: int,
            caps: np.ndarray | None, shortfall: float = 0.0, converged: bool = True,
            message: str = "", history=()) -> Allocation:
    powers = np.maximum(np.asarray(powers, dtype=float), 0.0)
    spent = float(powers.sum())
    residual = abs(spent - cfg.P_r)
    if caps is not None:
        capped = frozenset(
            int(m) for m in range(cfg.M)
            if powers[m] >= caps[m] - _CAP_SLACK * max(1.0, caps[m])
        )
    else:
        capped = frozenset()
    return Allocation(
        powers=powers, scheme=scheme, iterations=iterations, capped_users=capped,
        residual=residual, shortfall=shortfall, converged=converged,
        message=message, history=tuple(history),
    )


# -- shared building blocks --------------------------------------------------


def water_fill(inv_gains: np.ndarray, budget: float) -> np.ndarray:
    """Classical water-filling: P_i = max(0, w - inv_gains[i]), sum = budget."""
    inv = np.asarray(inv_gains, dtype=float)
    if budget <= 0.0:
        return np.zeros_like(inv)
    order = np.argsort(inv, kind="stable")
    sorted_inv = inv[order]
    csum = np.cumsum(sorted_inv)
    powers = np.zeros_like(inv)
    for k in range(inv.size, 0, -1):
        level = (budget + csum[k - 1]) / k
        if level > sorted_inv[k - 1]:
            powers[: k] = level - sorted_inv[: k]
            break
    out = np.zeros_like(inv)
    out[order] = powers
    return out


def exact_caps(cfg: NetworkConfig, P_hi: float | None = None) -> np.ndarray:
    """Per-user cap: largest P with R_2m(P) <= R_1m, clipped to [0, P_hi].

    Bisection on the exact rate expressions keeps the feasible side, so
    R_2m evaluated at the returned cap never exceeds R_1m.
    """
    if P_hi is None:
        P_hi = cfg.P_r
    k_sr, k_sd, k_rd = path_coeff_arrays(cfg)
    r1 = LOG2E * exp_e1(k_sr / cfg.P_s)
    minus = LOG2E * exp_e1(k_sd / cfg.P_s)
    caps = np.zeros(cfg.M)
    refused = minus >= r1                     # direct path alone already violates
    level = r1 - minus
    top = np.full(cfg.M, False)
    open_idx = ~refused
    if open_idx.any():
        g_hi = r2m_plus_arr(k_sd[open_idx], k_rd[open_idx], cfg.P_s, P_hi) - level[open_idx]
        sel = np.nonzero(open_idx)[0]
        top_sel = sel[g_hi <= 0.0]
        caps[top_sel] = P_hi
        top[top_sel] = True
    todo = np.nonzero(open_idx & ~top)[0]
    if todo.size:
        lo = np.zeros(todo.size)
        hi = np.full(todo.size, float(P_hi))
        ksd, krd, lvl = k_sd[todo], k_rd[todo], level[todo]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            above = r2m_plus_arr(ksd, krd, cfg.P_s, mid) > lvl
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
        caps[todo] = lo
    return caps


def _anchored_rows(k_sd, k_rd, beta, P_s: float, pest: np.ndarray,
                   table=FITTED_TABLE):
    """Per-user rational constants, re-anchored at two exact points.

    The table row is chosen from the operating ratio k_rd / P_est; its (a, b)
    are then shifted so the rational interpolates exp_e1 exactly at the pole
    ratio k_sd / P_s (removing the spurious pole of the approximated rate)
    and at the operating ratio itself.
    """
    n = len(k_rd)
    a = np.empty(n)
    b = np.empty(n)
    c = np.empty(n)
    for i in range(n):
        delta = k_rd[i] / pest[i] if pest[i] > 0.0 else math.inf
        row = select_coeffs(delta, table)
        a[i], b[i], c[i] = row.a, row.b, row.c
    d_s = k_sd / P_s
    d_e = np.where(pest > 0.0, k_rd / np.maximum(pest, 1e-300), d_s)
    two_point = np.abs(d_e - d_s) > 1e-6 * np.maximum(d_e, d_s)
    y_e = exp_e1(np.where(two_point, d_e, 1.0))
    a2 = np.where(
        two_point,
        (beta * (c + d_s) - y_e * (c + np.where(two_point, d_e, 1.0)))
        / np.where(two_point, d_s - d_e, 1.0),
        a,
    )
    b2 = np.where(two_point, beta * (c + d_s) - a2 * d_s, b)
    # single-point fallback: shift so the rational is exact at the pole ratio
    eps = (a2 * d_s + b2) / (c + d_s) - beta
    one_point = ~two_point
    a2 = np.where(one_point, a2 - eps, a2)
    b2 = np.where(one_point, b2 - eps * c, b2)
    return a2, b2, c


def _project_capped_simplex(x: np.ndarray, caps: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {0 <= y <= caps, sum y = total}."""
    if total >= caps.sum():
        return caps.copy()
    lo = float(np.min(x - caps)) - 1.0
    hi = float(np.max(x)) + 1.0
    for _ in range(100):
        nu = 0.5 * (lo + hi)
        if np.clip(x - nu, 0.0, caps).sum() > total:
            lo = nu
        else:
            hi = nu
    return np.clip(x - 0.5 * (lo + hi), 0.0, caps)


def _level_exact(k_sd, k_rd, P_s: float, powers: np.ndarray, caps: np.ndarray,
                 budget: float, max_steps: int = 8) -> np.ndarray:
    """Short projected-gradient pass equalizing the exact marginal rates.

    Removes the residual misallocation the rational approximation leaves
    behind; budget and caps are preserved by the projection.
    """
    x = powers.copy()
    fbest = float(r2m_plus_arr(k_sd, k_rd, P_s, x).sum())
    t = 1.0
    for _ in range(max_steps):
        g = r2m_plus_slope(k_sd, k_rd, P_s, x)
        improved = False
        for _ in range(20):
            y = _project_capped_simplex(x + t * g, caps, budget)
            fy = float(r2m_plus_arr(k_sd, k_rd, P_s, y).sum())
            if fy > fbest + 1e-15:
                x, fbest = y, fy
                t = min(t * 2.0, 1e6)
                improved = True
                break
            t *= 0.25
            if t < 1e-12:
                break
        if not improved:
            break
    return x


# -- schemes -----------------------------------------------------------------


def cwf_estimate(cfg: NetworkConfig) -> Allocation:
    """Classical water-filling over mean-field combined gains."""
    gains = mean_combined_gains(cfg)
    powers = water_fill(1.0 / gains, cfg.P_r)
    return _finish(cfg, powers, "cwf", 1, caps=None)


def subop(cfg: NetworkConfig) -> Allocation:
    """Equal-power baseline on mean channels, without rate-constraint caps.

    Users whose inverse gain exceeds the budget plus the best user's inverse
    gain are dropped; the budget is split equally among the rest.
    """
    gains = mean_combined_gains(cfg)
    order = sorted(range(cfg.M), key=lambda m: (-gains[m], m))
    active = list(order)
    while len(active) > 1 and 1.0 / gains[active[-1]] >= cfg.P_r + 1.0 / gains[active[0]]:
        active.pop()
    powers = np.zeros(cfg.M)
    powers[active] = cfg.P_r / len(active)
    return _finish(cfg, powers, "subop", 1, caps=None)


def pas1(cfg: NetworkConfig, *, table=FITTED_TABLE, max_outer: int | None = None,
         collect_problems: list | None = None) -> Allocation:
    """Lagrangian allocation: tau bisection + caps + redistribution.

    Each outer iteration water-fills a power estimate on mean-field gains to
    pick (and re-anchor) the per-user rational constants, bisects the
    multiplier tau until the closed-form marginal powers spend the remaining
    budget, freezes users that overshoot their cap, and redistributes. A
    short exact-gradient leveling pass finishes the uncapped users.

    ``collect_problems`` (diagnostics) receives per-user dictionaries of the
    anchored constants and chosen tau for each outer iteration.
    """
    if max_outer is None:
        max_outer = cfg.M + 10
    k_sr, k_sd, k_rd = path_coeff_arrays(cfg)
    beta = exp_e1(k_sd / cfg.P_s)
    caps = exact_caps(cfg)
    powers = np.zeros(cfg.M)
    active = np.arange(cfg.M)
    P_rem = float(cfg.P_r)
    iterations = 0
    message = ""
    shortfall = 0.0

    while active.size:
        iterations += 1
        if iterations > max_outer:
            raise AllocationError(
                f"pas1 did not converge within {max_outer} outer iterations"
            )
        sub = active
        gains = mean_combined_gains(cfg)[sub]
        pest = water_fill(1.0 / gains, P_rem)
        a, b, c = _anchored_rows(k_sd[sub], k_rd[sub], beta[sub], cfg.P_s, pest, table)
        if collect_problems is not None:
            for i, m in enumerate(sub):
                collect_problems.append({
                    "iteration": iterations, "user": int(m),
                    "a": float(a[i]), "b": float(b[i]), "c": float(c[i]),
                    "p_est": float(pest[i]), "cap": float(caps[m]),
                })

        def phis(tau):
            return marginal_power_arr(k_rd[sub], k_sd[sub], beta[sub], a, b, c,
                                      tau, cfg.P_s)

        tau, phi, gap = _bisect_budget(phis, P_rem, cfg.P_r)
        if phi is None:
            # even tau -> 0 cannot spend the remainder: the approximated rates
            # saturate; fill toward the caps and report what stays unspent
            fill = _project_capped_simplex(
                np.full(sub.size, P_rem / sub.size), caps[sub], P_rem
            )
            powers[sub] = fill
            shortfall = max(P_rem - float(caps[sub].sum()), 0.0)
            message = "budget saturates the approximated rates"
            break
        if collect_problems is not None:
            collect_problems.append({"iteration": iterations, "tau": float(tau),
                                     "budget_gap": float(gap)})
        viol = phi > caps[sub] + _CAP_SLACK
        if not viol.any():
            powers[sub] = phi
            break
        if viol.all():
            powers[sub] = caps[sub]
            shortfall = max(P_rem - float(caps[sub].sum()), 0.0)
            if shortfall > _BUDGET_RTOL * cfg.P_r:
                message = "all users capped; budget cannot be fully spent"
            break
        frozen = sub[viol]
        powers[frozen] = caps[frozen]
        P_rem -= float(caps[frozen].sum())
        active = sub[~viol]

    # exact-gradient leveling over the users that ended uncapped
    free = np.nonzero(
        (powers > 0.0) & (powers < caps - _CAP_SLACK * np.maximum(1.0, caps))
    )[0]
    if free.size >= 2:
        budget = float(powers[free].sum())
        powers[free] = _level_exact(k_sd[free], k_rd[free], cfg.P_s,
                                    powers[free], caps[free], budget)
    return _finish(cfg, powers, "pas1", iterations, caps,
                   shortfall=shortfall, message=message)


def _bisect_budget(phis, target: float, P_r: float):
    """Find tau with sum(phis(tau)) = target; phis is nonincreasing in tau.

    Bracket [1e-9, tau_hi] with tau_hi doubled until the total drops below
    the target, then bisection in log tau until |total - target| < 1e-6 P_r
    or 200 iterations. Returns (tau, powers, gap) or (None, None, gap) when
    the target is unreachable even at the lower bracket end.
    """
    lo = _TAU_LO
    phi_lo = phis(lo)
    if phi_lo.sum() < target - _BUDGET_RTOL * P_r:
        return None, None, float(target - phi_lo.sum())
    hi = 1.0
    for _ in range(90):
        if phis(hi).sum() < target:
            break
        hi *= 2.0
    else:
        raise AllocationError("tau bracket expansion failed")
    best = (lo, phi_lo, abs(phi_lo.sum() - target))
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        phi = phis(mid)
        gap = abs(float(phi.sum()) - target)
        if gap < best[2]:
            best = (mid, phi, gap)
        if gap < _BUDGET_RTOL * P_r:
            break
        if phi.sum() > target:
            lo = mid
        else:
            hi = mid
    return best


def pas2(cfg: NetworkConfig, *, table=FITTED_TABLE, max_outer: int | None = None) -> Allocation:
    """Sorted equal-power allocation with cap-and-redistribute.

    No multiplier search: the remaining budget is split equally over the
    active users (worst users dropped by the inverse-gain test), users above
    their cap are frozen there, and the loop repeats on the complement.
    """
    if max_outer is None:
        max_outer = cfg.M + 10
    k_sr, k_sd, k_rd = path_coeff_arrays(cfg)
    caps = exact_caps(cfg)
    gains = mean_combined_gains(cfg)
    powers = np.zeros(cfg.M)
    active = sorted(range(cfg.M), key=lambda m: (-gains[m], m))
    P_rem = float(cfg.P_r)
    iterations = 0
    shortfall = 0.0
    message = ""
    while active:
        iterations += 1
        if iterations > max_outer:
            raise AllocationError(
                f"pas2 did not converge within {max_outer} outer iterations"
            )
        active.sort(key=lambda m: (-gains[m], m))
        while len(active) > 1 and 1.0 / gains[active[-1]] >= cfg.P_r + 1.0 / gains[active[0]]:
            powers[active[-1]] = 0.0
            active.pop()
        share = P_rem / len(active)
        idx = np.array(active)
        powers[idx] = share
        viol = share > caps[idx] + _CAP_SLACK
        if not viol.any():
            break
        if viol.all():
            powers[idx] = caps[idx]
            shortfall = max(P_rem - float(caps[idx].sum()), 0.0)
            if shortfall > _BUDGET_RTOL * cfg.P_r:
                message = "all users capped; budget cannot be fully spent"
            break
        frozen = idx[viol]
        powers[frozen] = caps[frozen]
        P_rem -= float(caps[frozen].sum())
        active = [int(m) for m in idx[~viol]]
    return _finish(cfg, powers, "pas2", iterations, caps,
                   shortfall=shortfall, message=message)


def pas0_reference(cfg: NetworkConfig, *, tol: float = 1e-8, max_iter: int = 10_000,
                   record_history: bool = False) -> Allocation:
    """Reference maximizer: projected ascent with finite-difference gradients.

    The exact objective (sum of relay rate contributions) is treated as a
    black box: gradients come from central finite differences, steps use
    backtracking line search, and iterates are projected onto the feasible
    set {sum P = P_r, 0 <= P <= cap}. Converges when the projected-gradient
    norm drops below ``tol`` or progress stalls at finite-difference
    resolution; the iteration cap marks the result as non-converged.
    """
    k_sr, k_sd, k_rd = path_coeff_arrays(cfg)
    caps = exact_caps(cfg)
    if caps.sum() <= cfg.P_r:
        shortfall = float(cfg.P_r - caps.sum())
        return _finish(cfg, caps, "pas0", 0, caps, shortfall=shortfall,
                       message="all users capped; budget cannot be fully spent")

    def objective(x: np.ndarray) -> float:
        return float(r2m_plus_arr(k_sd, k_rd, cfg.P_s, x).sum())

    def fd_gradient(x: np.ndarray) -> np.ndarray:
        g = np.empty_like(x)
        for i in range(x.size):
            h = 1e-6 * (1.0 + abs(x[i]))
            xp = x.copy(); xp[i] = x[i] + h
            xm = x.copy(); xm[i] = max(x[i] - h, 0.0)
            g[i] = (objective(xp) - objective(xm)) / (xp[i] - xm[i])
        return g

    x = _project_capped_simplex(np.full(cfg.M, cfg.P_r / cfg.M), caps, cfg.P_r)
    F = objective(x)
    history = [F] if record_history else None
    t = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = fd_gradient(x)
        pg = _project_capped_simplex(x + g, caps, cfg.P_r) - x
        if np.linalg.norm(pg) < tol:
            converged = True
            break
        stepped = False
        for _ in range(60):
            y = _project_capped_simplex(x + t * g, caps, cfg.P_r)
            Fy = objective(y)
            if Fy >= F + 1e-4 * float(g @ (y - x)):
                x, F = y, Fy
                t = min(t * 2.0, 1e6)
                stepped = True
                break
            t *= 0.5
            if t < 1e-18:
                break
        if history is not None:
            history.append(F)
        if not stepped:
            # no ascent possible at finite-difference resolution
            converged = bool(np.linalg.norm(pg) < 1e-5)
            break
    return _finish(cfg, x, "pas0", it, caps, converged=converged,
                   history=history or ())


def grid_oracle(cfg: NetworkConfig, steps: int = 2000) -> Allocation:
    """Exhaustive grid search over the feasible simplex (ground truth, M <= 3).

    Powers live on the grid {0, P_r/steps, ..., P_r}; the rate-constraint cap
    is enforced exactly through the per-user index bound. For M = 3 the inner
    two users are combined by a max-plus convolution table.
    """
    if cfg.M > 3:
        raise ValueError(f"grid_oracle handles M <= 3 only, got M={cfg.M}")
    k_sr, k_sd, k_rd = path_coeff_arrays(cfg)
    caps = exact_caps(cfg)
    step = cfg.P_r / steps
    if caps.sum() <= cfg.P_r:
        return _finish(cfg, caps, "oracle", 1, caps,
                       shortfall=float(cfg.P_r - caps.sum()),
                       message="all users capped; budget cannot be fully spent")
    grid = np.arange(steps + 1) * step
    capidx = np.minimum(np.floor(caps / step + 1e-12).astype(int), steps)
    F = []
    for m in range(cfg.M):
        f = r2m_plus_arr(k_sd[m], k_rd[m], cfg.P_s, grid)
        f[capidx[m] + 1:] = -np.inf
        F.append(f)
    if cfg.M == 1:
        j = int(min(steps, capidx[0]))
        powers = np.array([grid[j]])
    elif cfg.M == 2:
        js = np.arange(steps + 1)
        v = F[0] + F[1][steps - js]
        j = int(np.argmax(v))
        powers = np.array([grid[j], grid[steps - j]])
    else:
        # H[r] = max_{j2 + j3 = r} F2[j2] + F3[j3], with argmax bookkeeping
        H = np.full(steps + 1, -np.inf)
        arg = np.zeros(steps + 1, dtype=int)
        for j2 in range(capidx[1] + 1):
            upto = steps - j2
            cand = F[1][j2] + F[2][: upto + 1]
            sl = slice(j2, steps + 1)
            better = cand > H[sl]
            H[sl] = np.where(better, cand, H[sl])
            arg[sl] = np.where(better, j2, arg[sl])
        js = np.arange(steps + 1)
        v = F[0] + H[steps - js]
        j1 = int(np.argmax(v))
        j2 = int(arg[steps - j1])
        j3 = steps - j1 - j2
        powers = np.array([grid[j1], grid[j2], grid[j3]])
    return _finish(cfg, powers, "oracle", 1, caps)


_ALLOCATORS = {
    "pas0": pas0_reference,
    "pas1": pas1,
    "pas2": pas2,
    "cwf": cwf_estimate,
    "subop": subop,
    "oracle": grid_oracle,
}


def get(scheme: str):
    """Allocator callable for a scheme name."""
    try:
        return _ALLOCATORS[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}") from None

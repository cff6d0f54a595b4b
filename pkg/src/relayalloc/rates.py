"""Instantaneous and ergodic achievable rates.

Per user m the relay path supports

    R_1m = log2(e) * exp_e1(k_sr / P_s)                     (decode at relay)
    R_2m = R_2m^+ + R_2m^-                                  (deliver to dest)
    R_2m^- = log2(e) * exp_e1(k_sd / P_s)
    R_2m^+ = log2(e) * (exp_e1(k_rd/P_m) - exp_e1(k_sd/P_s))
                     / (1 - P_s k_rd / (P_m k_sd))

and the user's ergodic rate is min(R_1m, R_2m); the system rate is the sum
over users. R_2m^+ has a removable singularity where P_m k_sd = P_s k_rd;
inside a narrow band around it the value is obtained by symmetric
perturbation averaging at P_m (1 +/- 1e-6). All rates are in bits/s/Hz;
bandwidth scaling is applied only at the CLI boundary.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .model import NetworkConfig, PathCoeffs, path_coeff_arrays
from .specfun import LOG2E, exp_e1

_SINGULAR_BAND = 1e-9
_PERTURB = 1e-6


def rate_r1m(k_sr: float, P_s: float) -> float:
    """Ergodic source-to-relay decoding rate."""
    return LOG2E * exp_e1(k_sr / P_s)


def r2m_plus_arr(k_sd, k_rd, P_s: float, P) -> np.ndarray:
    """Relay contribution R_2m^+, vectorized over users and/or powers.

    Zero power contributes zero rate; the singular band uses perturbation
    averaging. Arguments broadcast like numpy ufuncs.
    """
    k_sd, k_rd, P = np.broadcast_arrays(
        np.asarray(k_sd, dtype=float), np.asarray(k_rd, dtype=float),
        np.asarray(P, dtype=float),
    )
    out = np.zeros(P.shape)
    pos = P > 0
    if not pos.any():
        return out
    ksd = k_sd[pos]
    krd = k_rd[pos]
    Pp = P[pos]
    beta = exp_e1(ksd / P_s)
    s = P_s * krd / ksd
    near = np.abs(Pp * ksd - P_s * krd) < _SINGULAR_BAND * np.maximum(Pp * ksd, P_s * krd)
    P1 = np.where(near, Pp * (1.0 + _PERTURB), Pp)
    val = LOG2E * (exp_e1(krd / P1) - beta) / (1.0 - s / P1)
    if near.any():
        P2 = Pp[near] * (1.0 - _PERTURB)
        v2 = LOG2E * (exp_e1(krd[near] / P2) - beta[near]) / (1.0 - s[near] / P2)
        val[near] = 0.5 * (val[near] + v2)
    out[pos] = val
    return out


def r2m_plus_slope(k_sd, k_rd, P_s: float, P) -> np.ndarray:
    """d R_2m^+ / d P_m, vectorized; finite at P = 0 and across the singular band."""
    k_sd, k_rd, P = np.broadcast_arrays(
        np.asarray(k_sd, dtype=float), np.asarray(k_rd, dtype=float),
        np.asarray(P, dtype=float),
    )
    beta = exp_e1(k_sd / P_s)
    s = P_s * k_rd / k_sd
    out = np.empty(P.shape)
    zero = P <= 0
    # limit of the quotient as P -> 0+: log2(e) * beta / s
    out[zero] = (LOG2E * beta / s)[zero] if out.shape else LOG2E * beta / s
    Pp = np.where(zero, 1.0, P)
    near = np.abs(Pp * k_sd - P_s * k_rd) < 1e-7 * np.maximum(Pp * k_sd, P_s * k_rd)

    def slope_at(Pq):
        z = k_rd / Pq
        X = exp_e1(z)
        Xp = 1.0 / Pq - (k_rd / Pq**2) * X  # d/dP exp_e1(k/P)
        D = 1.0 - s / Pq
        return LOG2E * (Xp * D - (X - beta) * s / Pq**2) / D**2

    val = slope_at(np.where(near, Pp * (1.0 + 1e-4), Pp))
    if near.any():
        v2 = slope_at(np.where(near, Pp * (1.0 - 1e-4), Pp))
        val = np.where(near, 0.5 * (val + v2), val)
    out[~zero] = val[~zero]
    return out


class R2mParts(NamedTuple):
    r2m_plus: float
    r2m_minus: float
    r2m: float


def rate_r2m(k_sd: float, k_rd: float, P_s: float, P_m: float) -> R2mParts:
    """Ergodic relay-to-destination rate split into relay and direct parts."""
    minus = LOG2E * exp_e1(k_sd / P_s)
    plus = float(r2m_plus_arr(k_sd, k_rd, P_s, np.asarray(P_m, dtype=float)))
    return R2mParts(r2m_plus=plus, r2m_minus=minus, r2m=plus + minus)


def instantaneous_terms(h2_sr, h2_sd, h2_rd, coeffs: PathCoeffs, P_s: float, P_m: float):
    """Both log terms of the instantaneous rate for given |h|^2 values.

    Vectorized over fading realizations; returns (relay_term, dest_term) in
    bits/s/Hz.
    """
    t1 = np.log2(1.0 + np.asarray(h2_sr) * P_s / coeffs.k_sr)
    t2 = np.log2(1.0 + np.asarray(h2_sd) * P_s / coeffs.k_sd
                 + np.asarray(h2_rd) * P_m / coeffs.k_rd)
    return t1, t2


def instantaneous_rate(h, coeffs: PathCoeffs, P_s: float, P_m: float) -> float:
    """min of the two instantaneous log terms for one fading triple h."""
    h_sr, h_sd, h_rd = h
    t1, t2 = instantaneous_terms(
        abs(h_sr) ** 2, abs(h_sd) ** 2, abs(h_rd) ** 2, coeffs, P_s, P_m
    )
    return float(np.minimum(t1, t2))


@dataclass(frozen=True)
class PerUserRate:
    user: int
    r1m: float
    r2m_plus: float
    r2m_minus: float
    r2m: float
    binding: str          # which of r1m / r2m is the minimum
    admission_ok: bool    # True when r1m > r2m (relay can decode)


@dataclass(frozen=True)
class RateReport:
    per_user: tuple[PerUserRate, ...]
    system_rate: float

    def violations(self) -> tuple[int, ...]:
        return tuple(u.user for u in self.per_user if not u.admission_ok)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "r1m", "r2m_plus", "r2m_minus", "r2m", "binding"])
            for u in self.per_user:
                w.writerow([u.user, repr(u.r1m), repr(u.r2m_plus), repr(u.r2m_minus),
                            repr(u.r2m), u.binding])
            w.writerow(["system_rate", repr(self.system_rate), "", "", "", ""])


def system_rate(cfg: NetworkConfig, allocation) -> RateReport:
    """Per-user and system ergodic rates for an allocation.

    ``allocation`` is a power vector or anything with a ``powers`` attribute.
    The system rate is the sum of per-user min(R_1m, R_2m); users whose
    allocation violates the decode condition R_1m > R_2m are flagged rather
    than silently clipped.
    """
    powers = np.asarray(getattr(allocation, "powers", allocation), dtype=float)
    if powers.shape != (cfg.M,):
        raise ValueError(f"allocation must have M={cfg.M} powers, got shape {powers.shape}")
    if np.any(powers < -1e-12):
        raise ValueError("allocation powers must be >= 0")
    k_sr, k_sd, k_rd = path_coeff_arrays(cfg)
    r1 = LOG2E * exp_e1(k_sr / cfg.P_s)
    minus = LOG2E * exp_e1(k_sd / cfg.P_s)
    plus = r2m_plus_arr(k_sd, k_rd, cfg.P_s, np.maximum(powers, 0.0))
    r2 = plus + minus
    rows = []
    for m in range(cfg.M):
        binding = "r2m" if r2[m] <= r1[m] else "r1m"
        rows.append(PerUserRate(
            user=m, r1m=float(r1[m]), r2m_plus=float(plus[m]),
            r2m_minus=float(minus[m]), r2m=float(r2[m]), binding=binding,
            admission_ok=bool(r1[m] > r2[m] - 1e-12),
        ))
    total = float(np.minimum(r1, r2).sum())
    return RateReport(per_user=tuple(rows), system_rate=total)


def system_rate_value(cfg: NetworkConfig, powers: Sequence[float]) -> float:
    """System rate only, without building the per-user report."""
    powers = np.asarray(getattr(powers, "powers", powers), dtype=float)
    k_sr, k_sd, k_rd = path_coeff_arrays(cfg)
    r1 = LOG2E * exp_e1(k_sr / cfg.P_s)
    r2 = (LOG2E * exp_e1(k_sd / cfg.P_s)
          + r2m_plus_arr(k_sd, k_rd, cfg.P_s, np.maximum(powers, 0.0)))
    return float(np.minimum(r1, r2).sum())

"""Scenario description: geometry, path loss, noise, fading statistics.

Conventions
-----------
Distances are normalized to a reference of 1 unit, powers to a reference of
1 mW (all linear, never dB). The planar layout puts the relay at the origin
with the destination on the positive x axis; source positions are sampled
uniformly in a disc of radius 0.5. Fading is Rayleigh: each complex gain has
i.i.d. Gaussian real/imaginary parts of variance 1/2, so E[|h|^2] = 1.

Sampling takes explicit seeds and runs on counter-based Philox streams;
``trial_stream`` derives independent substreams per trial index so parallel
Monte Carlo runs are reproducible under any worker count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Deterministic magnitude the fast allocators substitute for |h| when only
# channel statistics are available: pi/(2*sqrt(2)).
MEAN_FIELD_MAGNITUDE = math.pi / (2.0 * math.sqrt(2.0))

# True mean magnitude of a unit-power Rayleigh variable, sqrt(pi)/2. Kept as
# a separate constant: the allocators deliberately use MEAN_FIELD_MAGNITUDE,
# which is not the Rayleigh mean.
RAYLEIGH_MEAN_MAGNITUDE = math.sqrt(math.pi) / 2.0

SOURCE_DISC_RADIUS = 0.5


def mean_field_gains() -> float:
    """Deterministic |h| magnitude used by the mean-channel steps."""
    return MEAN_FIELD_MAGNITUDE


@dataclass(frozen=True)
class UserGeometry:
    """Normalized source-relay / source-destination / relay-destination distances."""

    d_sr: float
    d_sd: float
    d_rd: float

    def __post_init__(self):
        for name in ("d_sr", "d_sd", "d_rd"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0.0):
                raise ValueError(f"UserGeometry.{name} must be > 0, got {v}")


@dataclass(frozen=True)
class PathCoeffs:
    """Per-user propagation constants k = d^alpha * N."""

    k_sr: float
    k_sd: float
    k_rd: float


@dataclass(frozen=True)
class NetworkConfig:
    """Global scenario: user count, powers, path loss, noise, geometry."""

    M: int
    P_s: float
    P_r: float
    alpha: float
    N_r: float
    N_d: float
    users: tuple[UserGeometry, ...]
    bandwidth_hz: float = 1e6

    def __post_init__(self):
        if not (isinstance(self.M, int) and self.M >= 1):
            raise ValueError(f"NetworkConfig.M must be an integer >= 1, got {self.M}")
        for name in ("P_s", "P_r", "N_r", "N_d", "bandwidth_hz"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0.0):
                raise ValueError(f"NetworkConfig.{name} must be > 0, got {v}")
        if not (np.isfinite(self.alpha) and self.alpha >= 0.0):
            raise ValueError(f"NetworkConfig.alpha must be >= 0, got {self.alpha}")
        object.__setattr__(self, "users", tuple(self.users))
        if len(self.users) != self.M:
            raise ValueError(
                f"NetworkConfig.users must have exactly M={self.M} entries, "
                f"got {len(self.users)}"
            )

    # -- JSON interchange ---------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkConfig":
        for key in ("M", "Ps", "Pr", "alpha", "Nr", "Nd", "users"):
            if key not in doc:
                raise ValueError(f"config document is missing field {key!r}")
        try:
            users = tuple(
                UserGeometry(d_sr=float(u["d_sr"]), d_sd=float(u["d_sd"]),
                             d_rd=float(u["d_rd"]))
                for u in doc["users"]
            )
        except KeyError as exc:
            raise ValueError(
                f"config users entry is missing field {exc.args[0]!r}") from None
        return cls(
            M=int(doc["M"]), P_s=float(doc["Ps"]), P_r=float(doc["Pr"]),
            alpha=float(doc["alpha"]), N_r=float(doc["Nr"]), N_d=float(doc["Nd"]),
            users=users, bandwidth_hz=float(doc.get("bandwidth_hz", 1e6)),
        )

    @classmethod
    def from_json(cls, path) -> "NetworkConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "M": self.M, "Ps": self.P_s, "Pr": self.P_r, "alpha": self.alpha,
            "Nr": self.N_r, "Nd": self.N_d, "bandwidth_hz": self.bandwidth_hz,
            "users": [
                {"d_sr": u.d_sr, "d_sd": u.d_sd, "d_rd": u.d_rd} for u in self.users
            ],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


@dataclass(frozen=True)
class FadingDraw:
    """One joint draw of the 3M complex channel gains."""

    h_sr: np.ndarray
    h_sd: np.ndarray
    h_rd: np.ndarray

    def __post_init__(self):
        if not (len(self.h_sr) == len(self.h_sd) == len(self.h_rd)):
            raise ValueError("FadingDraw arrays must have equal length")

    def user(self, m: int) -> tuple[complex, complex, complex]:
        return complex(self.h_sr[m]), complex(self.h_sd[m]), complex(self.h_rd[m])


# -- randomness -----------------------------------------------------------


def rng_from(seed) -> np.random.Generator:
    """Philox generator from an int seed, SeedSequence, or Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def trial_stream(seed: int, *key: int) -> np.random.SeedSequence:
    """Independent substream for (seed, key...); order-independent replay."""
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))


# -- propagation ----------------------------------------------------------


def path_coeffs(cfg: NetworkConfig, user: int) -> PathCoeffs:
    """Propagation constants k_sr = d_sr^alpha N_r, k_sd/k_rd with N_d."""
    if not 0 <= user < cfg.M:
        raise IndexError(f"user index {user} out of range for M={cfg.M}")
    u = cfg.users[user]
    return PathCoeffs(
        k_sr=u.d_sr**cfg.alpha * cfg.N_r,
        k_sd=u.d_sd**cfg.alpha * cfg.N_d,
        k_rd=u.d_rd**cfg.alpha * cfg.N_d,
    )


def path_coeff_arrays(cfg: NetworkConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(k_sr, k_sd, k_rd) vectors over all users."""
    d_sr = np.array([u.d_sr for u in cfg.users])
    d_sd = np.array([u.d_sd for u in cfg.users])
    d_rd = np.array([u.d_rd for u in cfg.users])
    return d_sr**cfg.alpha * cfg.N_r, d_sd**cfg.alpha * cfg.N_d, d_rd**cfg.alpha * cfg.N_d


# -- sampling -------------------------------------------------------------


def sample_source_positions(seed, M: int, radius: float = SOURCE_DISC_RADIUS) -> np.ndarray:
    """(M, 2) positions uniform in a disc of the given radius around (0, 0)."""
    rng = rng_from(seed)
    r = radius * np.sqrt(rng.uniform(size=M))
    theta = rng.uniform(0.0, 2.0 * math.pi, size=M)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def geometry_between(positions: np.ndarray, relay_xy, dest_xy) -> tuple[UserGeometry, ...]:
    """Per-user distances for given source positions, relay and destination."""
    relay = np.asarray(relay_xy, dtype=float)
    dest = np.asarray(dest_xy, dtype=float)
    d_rd = float(np.hypot(*(dest - relay)))
    users = []
    for p in np.asarray(positions, dtype=float):
        users.append(UserGeometry(
            d_sr=float(np.hypot(*(p - relay))),
            d_sd=float(np.hypot(*(p - dest))),
            d_rd=d_rd,
        ))
    return tuple(users)


def sample_topology(seed, M: int, relay_to_dest: float = 1.0) -> tuple[UserGeometry, ...]:
    """Random topology: sources in the disc around the relay, destination on axis.

    The relay sits at the origin, the destination at (relay_to_dest, 0), and
    the M sources are uniform in the disc of radius 0.5 around the relay.
    Deterministic given the seed.
    """
    if not relay_to_dest > 0.0:
        raise ValueError(f"relay_to_dest must be > 0, got {relay_to_dest}")
    positions = sample_source_positions(seed, M)
    return geometry_between(positions, (0.0, 0.0), (relay_to_dest, 0.0))


def sample_fading(seed, M: int) -> FadingDraw:
    """3M i.i.d. unit-power complex Gaussian gains; deterministic given seed."""
    rng = rng_from(seed)
    draws = (rng.normal(size=(3, M)) + 1j * rng.normal(size=(3, M))) / math.sqrt(2.0)
    return FadingDraw(h_sr=draws[0], h_sd=draws[1], h_rd=draws[2])


# -- combined channel gain -------------------------------------------------


def combined_gain(cfg: NetworkConfig, user: int, fading: FadingDraw | None = None) -> float:
    """Relay-path gain of one user, normalized by its direct-path term.

    G = (d_sd^a |h_rd|^2) / (d_rd^a (P_s |h_sd|^2 + N_d d_sd^a)). With
    ``fading=None`` the deterministic mean-field magnitude is substituted
    for both |h| factors.
    """
    u = cfg.users[user]
    if fading is None:
        h2_sd = h2_rd = MEAN_FIELD_MAGNITUDE**2
    else:
        h2_sd = abs(fading.h_sd[user]) ** 2
        h2_rd = abs(fading.h_rd[user]) ** 2
    dsd_a = u.d_sd**cfg.alpha
    drd_a = u.d_rd**cfg.alpha
    return (dsd_a * h2_rd) / (drd_a * (cfg.P_s * h2_sd + cfg.N_d * dsd_a))


def mean_combined_gains(cfg: NetworkConfig) -> np.ndarray:
    """Vector of combined gains with mean-field magnitudes for all users."""
    d_sd = np.array([u.d_sd for u in cfg.users])
    d_rd = np.array([u.d_rd for u in cfg.users])
    h2 = MEAN_FIELD_MAGNITUDE**2
    dsd_a = d_sd**cfg.alpha
    drd_a = d_rd**cfg.alpha
    return (dsd_a * h2) / (drd_a * (cfg.P_s * h2 + cfg.N_d * dsd_a))

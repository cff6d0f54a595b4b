"""Monte Carlo sweep driver and complexity benchmark.

A sweep draws random topologies (trials), allocates power per scheme from
channel statistics, and evaluates each allocation two ways: the analytic
ergodic rate, and Monte Carlo averages of the instantaneous rate terms over
fading realizations. Trials run on independent seeded substreams keyed by
(seed, trial, value), so results are identical for any worker count.

Per (sweep value, scheme) the result rows carry the analytic mean and
standard error, the Monte Carlo estimates, and paired analytic-minus-MC
differences for the two rate terms (the ergodic-consistency check is
term-wise: the per-realization minimum is biased low wherever the two terms
tie, e.g. for users saturated at their cap, so the min-form MC rate is
reported but not used for the consistency test).

The benchmark times each allocator on synthetic random scenarios
(single-threaded) and collects instrumented operation tallies.
"""

from __future__ import annotations

import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import allocators, opcount
from .allocators import AllocationError
from .model import (NetworkConfig, geometry_between, rng_from,
                    sample_source_positions, trial_stream)
from .quartic import QuarticSolveError
from .rates import system_rate
from .specfun import LOG2E, exp_e1

SWEEP_VARIABLES = ("relay_position", "M", "P_s", "P_r")


class SimulationError(RuntimeError):
    """A sweep failed (bad spec or too many failed trials)."""


@dataclass(frozen=True)
class SweepSpec:
    """One sweep: what varies, over which values, and the base scenario."""

    sweep_variable: str
    values: tuple
    trials: int = 200
    realizations: int = 500
    seed: int = 0
    schemes: tuple = ("pas0", "pas1", "pas2", "subop")
    M: int = 5
    P_s: float = 5.0
    P_r: float = 20.0
    pr_per_user: float | None = None   # when set, P_r = pr_per_user * M
    alpha: float = 2.0
    N_r: float = 1.0
    N_d: float = 1.0
    relay_frac: float = 0.5            # fixed-relay sweeps: relay at frac * dest
    dest_distance: float = 1.0
    label: str = ""

    def __post_init__(self):
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise SimulationError(
                f"sweep_variable must be one of {SWEEP_VARIABLES}, "
                f"got {self.sweep_variable!r}"
            )
        if not self.values:
            raise SimulationError("SweepSpec.values must be non-empty")
        if self.trials < 1 or self.realizations < 1:
            raise SimulationError("trials and realizations must be >= 1")
        if self.sweep_variable == "relay_position":
            if any(not (0.0 <= v < 1.0) for v in self.values):
                raise SimulationError("relay positions must lie in [0, 1)")
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "schemes", tuple(self.schemes))
        for s in self.schemes:
            allocators.get(s)

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise SimulationError(f"unknown SweepSpec fields: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return {
            "sweep_variable": self.sweep_variable, "values": list(self.values),
            "trials": self.trials, "realizations": self.realizations,
            "seed": self.seed, "schemes": list(self.schemes), "M": self.M,
            "P_s": self.P_s, "P_r": self.P_r, "pr_per_user": self.pr_per_user,
            "alpha": self.alpha, "N_r": self.N_r, "N_d": self.N_d,
            "relay_frac": self.relay_frac, "dest_distance": self.dest_distance,
            "label": self.label,
        }


@dataclass(frozen=True)
class SweepRow:
    sweep_value: float
    scheme: str
    mean_rate: float        # analytic ergodic system rate, mean over trials
    std_error: float
    mean_K: float
    wall_clock_ms: float
    mc_rate: float          # MC rate from per-user min of term means
    mc_se: float
    mc_min_rate: float      # MC rate from per-realization minimum (reported only)
    diff1_mean: float       # analytic minus MC, decode-term sums
    diff1_se: float
    diff2_mean: float       # analytic minus MC, delivery-term sums
    diff2_se: float
    max_K: int
    trials: int
    failures: int
    label: str


_CSV_COLUMNS = (
    "sweep_value", "scheme", "mean_rate", "std_error", "mean_K", "wall_clock_ms",
    "mc_rate", "mc_se", "mc_min_rate", "diff1_mean", "diff1_se", "diff2_mean",
    "diff2_se", "max_K", "trials", "failures", "label",
)


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    rows: tuple[SweepRow, ...]
    failures: int
    attempts: int

    def to_csv(self, path, include_timing: bool = False) -> None:
        """Write rows as CSV; timing is split out because it is not reproducible."""
        import csv as _csv

        cols = [c for c in _CSV_COLUMNS if include_timing or c != "wall_clock_ms"]
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([getattr(r, c) if isinstance(getattr(r, c), str)
                            else repr(getattr(r, c)) for c in cols])

    def timings_to_csv(self, path) -> None:
        import csv as _csv

        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["sweep_value", "scheme", "wall_clock_ms"])
            for r in self.rows:
                w.writerow([repr(r.sweep_value), r.scheme, repr(r.wall_clock_ms)])

    def row(self, sweep_value, scheme: str) -> SweepRow:
        for r in self.rows:
            if r.scheme == scheme and r.sweep_value == sweep_value:
                return r
        raise KeyError((sweep_value, scheme))


# -- scenario construction ---------------------------------------------------


def _scenario(spec: SweepSpec, value, trial: int) -> NetworkConfig:
    """NetworkConfig for one (sweep value, trial)."""
    if spec.sweep_variable == "relay_position":
        M, P_s, P_r = spec.M, spec.P_s, spec.P_r
        positions = sample_source_positions(trial_stream(spec.seed, trial, 0), M)
        relay = (float(value) * spec.dest_distance, 0.0)
    else:
        if spec.sweep_variable == "M":
            M = int(value)
            P_s, P_r = spec.P_s, spec.P_r
        elif spec.sweep_variable == "P_s":
            M, P_r = spec.M, spec.P_r
            P_s = float(value)
        else:
            M, P_s = spec.M, spec.P_s
            P_r = float(value)
        vi = spec.values.index(value)
        positions = sample_source_positions(trial_stream(spec.seed, trial, 1, vi), M)
        relay = (spec.relay_frac * spec.dest_distance, 0.0)
    if spec.pr_per_user is not None:
        P_r = spec.pr_per_user * M
    users = geometry_between(positions, relay, (spec.dest_distance, 0.0))
    return NetworkConfig(M=M, P_s=P_s, P_r=P_r, alpha=spec.alpha,
                         N_r=spec.N_r, N_d=spec.N_d, users=users)


def _mc_terms(cfg: NetworkConfig, powers: np.ndarray, h2: np.ndarray):
    """Per-user term means and the per-realization-min rate for one fading batch."""
    k_sr = np.array([u.d_sr for u in cfg.users]) ** cfg.alpha * cfg.N_r
    k_sd = np.array([u.d_sd for u in cfg.users]) ** cfg.alpha * cfg.N_d
    k_rd = np.array([u.d_rd for u in cfg.users]) ** cfg.alpha * cfg.N_d
    t1 = np.log2(1.0 + h2[:, 0, :] * cfg.P_s / k_sr)
    t2 = np.log2(1.0 + h2[:, 1, :] * cfg.P_s / k_sd + h2[:, 2, :] * powers / k_rd)
    term1 = t1.mean(axis=0)
    term2 = t2.mean(axis=0)
    mc_min = float(np.minimum(t1, t2).sum(axis=1).mean())
    return term1, term2, mc_min


def _run_trial(args):
    """All (value, scheme) measurements for one trial; runs in a worker."""
    spec, trial = args
    out = {}
    failures = []
    for vi, value in enumerate(spec.values):
        cfg = _scenario(spec, value, trial)
        rng = rng_from(trial_stream(spec.seed, trial, 2, vi))
        z = rng.normal(size=(spec.realizations, 3, cfg.M, 2))
        h2 = (z[..., 0] ** 2 + z[..., 1] ** 2) / 2.0
        k_sr = np.array([u.d_sr for u in cfg.users]) ** cfg.alpha * cfg.N_r
        k_sd = np.array([u.d_sd for u in cfg.users]) ** cfg.alpha * cfg.N_d
        r1_analytic = LOG2E * exp_e1(k_sr / cfg.P_s)
        for scheme in spec.schemes:
            t0 = time.perf_counter()
            try:
                alloc = allocators.get(scheme)(cfg)
            except (AllocationError, QuarticSolveError) as exc:
                failures.append((value, scheme, trial, str(exc)))
                continue
            dt = time.perf_counter() - t0
            report = system_rate(cfg, alloc)
            term1, term2, mc_min = _mc_terms(cfg, alloc.powers, h2)
            r2_analytic = np.array([u.r2m for u in report.per_user])
            out[(vi, scheme)] = {
                "analytic": report.system_rate,
                "mc_rate": float(np.minimum(term1, term2).sum()),
                "mc_min_rate": mc_min,
                "diff1": float(r1_analytic.sum() - term1.sum()),
                "diff2": float(r2_analytic.sum() - term2.sum()),
                "K": alloc.iterations,
                "dt": dt,
            }
    return trial, out, failures


def _reduce(spec: SweepSpec, per_trial: list) -> SweepResult:
    rows = []
    failures_total = 0
    attempts = spec.trials * len(spec.values) * len(spec.schemes)
    fail_count = {}
    for _, _, fails in per_trial:
        failures_total += len(fails)
        for value, scheme, _, _ in fails:
            fail_count[(value, scheme)] = fail_count.get((value, scheme), 0) + 1
    for vi, value in enumerate(spec.values):
        for scheme in spec.schemes:
            recs = [out[(vi, scheme)] for _, out, _ in per_trial if (vi, scheme) in out]
            if not recs:
                continue
            analytic = [r["analytic"] for r in recs]
            mc = [r["mc_rate"] for r in recs]
            d1 = [r["diff1"] for r in recs]
            d2 = [r["diff2"] for r in recs]
            n = len(recs)

            def se(xs):
                return statistics.stdev(xs) / (n ** 0.5) if n > 1 else 0.0

            rows.append(SweepRow(
                sweep_value=float(value), scheme=scheme,
                mean_rate=statistics.fmean(analytic), std_error=se(analytic),
                mean_K=statistics.fmean(r["K"] for r in recs),
                wall_clock_ms=1e3 * statistics.fmean(r["dt"] for r in recs),
                mc_rate=statistics.fmean(mc), mc_se=se(mc),
                mc_min_rate=statistics.fmean(r["mc_min_rate"] for r in recs),
                diff1_mean=statistics.fmean(d1), diff1_se=se(d1),
                diff2_mean=statistics.fmean(d2), diff2_se=se(d2),
                max_K=max(r["K"] for r in recs), trials=n,
                failures=fail_count.get((value, scheme), 0), label=spec.label,
            ))
    result = SweepResult(spec=spec, rows=tuple(rows), failures=failures_total,
                         attempts=attempts)
    if failures_total > 0.01 * attempts:
        raise SimulationError(
            f"{failures_total}/{attempts} allocator runs failed (> 1% threshold)"
        )
    return result


def run_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    """Execute a sweep; deterministic for a given (spec, seed), any worker count."""
    args = [(spec, t) for t in range(spec.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(_run_trial, args))
    else:
        per_trial = [_run_trial(a) for a in args]
    per_trial.sort(key=lambda item: item[0])
    return _reduce(spec, per_trial)


def relay_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    """Sweep the relay position along the source-circle -> destination axis."""
    if spec.sweep_variable != "relay_position":
        raise SimulationError("relay_sweep expects sweep_variable='relay_position'")
    return run_sweep(spec, workers)


def scaling_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    """Sweep M, P_s or P_r with the relay fixed between sources and destination."""
    if spec.sweep_variable not in ("M", "P_s", "P_r"):
        raise SimulationError("scaling_sweep expects sweep_variable in {'M','P_s','P_r'}")
    return run_sweep(spec, workers)


# -- benchmark ----------------------------------------------------------------


@dataclass(frozen=True)
class BenchRow:
    M: int
    scheme: str
    median_ms: float
    mean_K: float
    max_K: int
    reps: int
    ops: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BenchResult:
    rows: tuple[BenchRow, ...]

    def row(self, M: int, scheme: str) -> BenchRow:
        for r in self.rows:
            if r.M == M and r.scheme == scheme:
                return r
        raise KeyError((M, scheme))

    def to_csv(self, path) -> None:
        import csv as _csv

        opcols = [opcount.MUL, opcount.DIV, opcount.LOG, opcount.EXP,
                  opcount.E1, opcount.SQRT, opcount.CBRT]
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["M", "scheme", "median_ms", "mean_K", "max_K", "reps", *opcols])
            for r in self.rows:
                w.writerow([r.M, r.scheme, repr(r.median_ms), repr(r.mean_K),
                            r.max_K, r.reps, *[r.ops.get(c, 0) for c in opcols]])


def _bench_config(seed: int, rep: int, M: int, P_s: float, pr_per_user: float) -> NetworkConfig:
    positions = sample_source_positions(trial_stream(seed, rep, 3, M), M)
    users = geometry_between(positions, (0.0, 0.0), (1.0, 0.0))
    return NetworkConfig(M=M, P_s=P_s, P_r=pr_per_user * M, alpha=2.0,
                         N_r=1.0, N_d=1.0, users=users)


def bench(M_values, repetitions: int = 5, schemes=("pas0", "pas1", "pas2", "cwf", "subop"),
          seed: int = 0, P_s: float = 5.0, pr_per_user: float = 4.0) -> BenchResult:
    """Median wall clock and operation tallies per allocator per M.

    Runs single-threaded on synthetic random scenarios. Operation tallies are
    collected in a separate instrumented pass so the timed runs stay clean.
    """
    M_values = list(M_values)
    if any(b < a for a, b in zip(M_values, M_values[1:])):
        raise ValueError("bench expects nondecreasing M values")
    rows = []
    for M in M_values:
        cfgs = [_bench_config(seed, rep, int(M), P_s, pr_per_user)
                for rep in range(repetitions)]
        for scheme in schemes:
            fn = allocators.get(scheme)
            times = []
            Ks = []
            for cfg in cfgs:
                t0 = time.perf_counter()
                alloc = fn(cfg)
                times.append(time.perf_counter() - t0)
                Ks.append(alloc.iterations)
            with opcount.counting() as ops:
                fn(cfgs[0])
            rows.append(BenchRow(
                M=int(M), scheme=scheme,
                median_ms=1e3 * statistics.median(times),
                mean_K=statistics.fmean(Ks), max_K=max(Ks),
                reps=repetitions, ops=dict(ops),
            ))
    return BenchResult(rows=tuple(rows))


def growth_exponent(result: BenchResult, scheme: str) -> float:
    """Log-log slope of median wall clock versus M for one scheme."""
    pts = [(r.M, r.median_ms) for r in result.rows if r.scheme == scheme]
    if len(pts) < 2:
        raise ValueError(f"need at least two M values for {scheme}")
    x = np.log([p[0] for p in pts])
    y = np.log([max(p[1], 1e-9) for p in pts])
    return float(np.polyfit(x, y, 1)[0])


# -- presets -------------------------------------------------------------------

_RELAY_VALUES = tuple(round(0.1 * i, 1) for i in range(10))


def preset(name: str):
    """Named experiment presets; sweeps return a list of SweepSpec."""
    if name == "fig-m5":
        return [SweepSpec(sweep_variable="relay_position", values=_RELAY_VALUES,
                          M=5, P_s=5.0, P_r=20.0, trials=60, realizations=400,
                          schemes=("pas0", "pas1", "pas2", "subop"), label="m5")]
    if name == "fig-m25":
        return [SweepSpec(sweep_variable="relay_position", values=_RELAY_VALUES,
                          M=25, P_s=3.0, P_r=75.0, trials=16, realizations=200,
                          schemes=("pas0", "pas1", "pas2", "subop"), label="m25")]
    if name == "fig-rvsps":
        return [SweepSpec(sweep_variable="P_s", values=(1.0, 2.0, 3.0, 5.0, 8.0, 10.0),
                          M=50, P_r=200.0, trials=8, realizations=100,
                          schemes=("pas0", "pas1", "pas2"), label="rvsps")]
    if name == "fig-rvspr":
        return [SweepSpec(sweep_variable="P_r", values=(100.0, 150.0, 200.0, 250.0, 300.0),
                          M=50, P_s=5.0, trials=8, realizations=100,
                          schemes=("pas0", "pas1", "pas2"), label="rvspr")]
    if name == "fig-scaling":
        return [
            SweepSpec(sweep_variable="M", values=(5, 10, 25, 50), pr_per_user=4.0,
                      P_s=1.0, trials=12, realizations=100,
                      schemes=("pas0", "pas1", "pas2", "subop"), label="Ps=1"),
            SweepSpec(sweep_variable="M", values=(5, 10, 25, 50), pr_per_user=4.0,
                      P_s=5.0, trials=12, realizations=100,
                      schemes=("pas0", "pas1", "pas2", "subop"), label="Ps=5"),
        ]
    if name == "fig-bench":
        return ("bench", dict(M_values=(10, 25, 50, 100), repetitions=5))
    raise SimulationError(f"unknown preset {name!r}")


PRESET_NAMES = ("fig-m5", "fig-m25", "fig-rvsps", "fig-rvspr", "fig-scaling", "fig-bench")

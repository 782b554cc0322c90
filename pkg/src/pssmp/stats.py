"""Empirical distribution tools and the experiment-level law tests."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import special, stats as sps

from .errors import ContractError, DomainError, PreconditionError
from . import oracles, rng as rngmod
from .lamperti import simulate_lamperti
from .levy import LevyTriplet, drift_coefficient
from .sde import (SolverParams, simulate_sde, simulate_truncated,
                  simulate_truncated_escalating)

MIN_EXPERIMENT_SIZE = 500


@dataclass(frozen=True)
class Sample:
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size == 0:
            raise DomainError(f"sample {self.label!r} is empty")
        object.__setattr__(self, "values", v)


@dataclass
class TestResult:
    test: str
    statistic: float
    p_value: float
    alpha: float
    passed: bool
    n: int
    m: int

    def to_json(self):
        return {"test": self.test, "statistic": float(self.statistic),
                "p_value": float(self.p_value), "alpha": float(self.alpha),
                "pass": bool(self.passed), "n": int(self.n), "m": int(self.m)}


def _values(x):
    return x.values if isinstance(x, Sample) else Sample(x).values


def ecdf(values):
    """Right-continuous empirical CDF as a vectorized function."""
    v = np.sort(_values(values))
    return lambda x: np.searchsorted(v, x, side="right") / v.size


def ks_statistic(a, b) -> float:
    """sup_x |F_a(x) - F_b(x)| over the merged sample points."""
    a = np.sort(_values(a))
    b = np.sort(_values(b))
    pts = np.concatenate((a, b))
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a, b, alpha: float = 0.05, label: str = "ks_two_sample") -> TestResult:
    """Two-sample KS test with the asymptotic Kolmogorov p-value."""
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    va, vb = _values(a), _values(b)
    n, m = va.size, vb.size
    d = ks_statistic(va, vb)
    p = float(np.clip(special.kolmogorov(math.sqrt(n * m / (n + m)) * d), 0.0, 1.0))
    return TestResult(label, d, p, alpha, p >= alpha, n, m)


def two_proportion_test(k1: int, n1: int, k2: int, n2: int, alpha: float,
                        label: str = "zero_atom") -> TestResult:
    """Two-sided pooled z-test for equal proportions, with continuity correction."""
    p1, p2 = k1 / n1, k2 / n2
    pooled = (k1 + k2) / (n1 + n2)
    var = pooled * (1 - pooled) * (1 / n1 + 1 / n2)
    if var == 0:
        return TestResult(label, abs(p1 - p2), 1.0, alpha, True, n1, n2)
    z = max(0.0, abs(p1 - p2) - 0.5 * (1 / n1 + 1 / n2)) / math.sqrt(var)
    p = float(2 * sps.norm.sf(z))
    return TestResult(label, abs(p1 - p2), min(p, 1.0), alpha, p >= alpha, n1, n2)


def mean_se(values):
    v = _values(values)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.inf


def bootstrap_se(values, stat, n_boot: int, rng) -> float:
    """Standard deviation of ``stat`` over ``n_boot`` resamples."""
    v = _values(values)
    reps = [stat(v[rng.integers(0, v.size, v.size)]) for _ in range(n_boot)]
    return float(np.std(reps, ddof=1))


# ------------------------------------------------------------ experiments

ROUTES = ("lamperti", "sde", "sde_absorbed", "truncated", "besq", "besq_absorbed")


def sample_route(route: str, triplet: LevyTriplet, z0: float, times, n: int,
                 params: SolverParams, seed: int, threads: int = 1, tag: str = ""):
    """``(n, len(times))`` samples of one construction, on its own random stream.

    ``tag`` separates the streams of two samples drawn from the same route.

    ``besq`` and ``besq_absorbed`` are the exact squared Bessel laws for the
    dimension ``delta = 2 + gamma`` of a Bessel triplet (``sigma = 2``, no jumps).
    """
    times = np.asarray(times, dtype=float)
    key = f"{route}:{tag}" if tag else route
    if route == "lamperti":
        return simulate_lamperti(triplet, z0, times, n, params, seed, key=key,
                                 threads=threads).values
    if route in ("sde", "sde_absorbed"):
        return simulate_sde(triplet, z0, times, n, params, seed, key=key,
                            absorb=route == "sde_absorbed", threads=threads).values
    if route == "truncated":
        run = simulate_truncated_escalating if params.escalate else simulate_truncated
        return run(triplet, z0, times, n, params, seed, key=key, threads=threads).values
    if route in ("besq", "besq_absorbed"):
        if not (triplet.sigma == 2 and triplet.jumps.is_empty() and triplet.kill_rate == 0
                and triplet.index_a == 1):
            raise ContractError("exact squared Bessel routes need a Bessel triplet")
        spec = oracles.BesqSpec(triplet.gamma + 2.0, z0)
        draw = oracles.besq_sampler if route == "besq" else oracles.besq_absorbed_sampler
        rng = rngmod.stream(seed, key)
        cols = [draw(spec, t, rng, n) if t > 0 else np.full(n, float(z0)) for t in times]
        return np.column_stack(cols)
    raise ContractError(f"unknown route {route!r}; expected one of {ROUTES}")


@dataclass
class LawEqualityResult:
    time: float
    zero_atom: TestResult
    ks: TestResult
    passed: bool

    def to_json(self):
        return {"time": self.time, "zero_atom": self.zero_atom.to_json(),
                "ks": self.ks.to_json(), "pass": self.passed}


def _by_time(samples, times):
    if isinstance(samples, dict):
        if sorted(samples) != sorted(times):
            raise ContractError("sample times do not match the requested times")
        return [np.asarray(samples[t], dtype=float) for t in times]
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != len(times):
        raise ContractError("expected an (n, len(times)) array of samples")
    return [arr[:, k] for k in range(len(times))]


def compare_with_atom(a, b, alpha: float, time: float = math.nan) -> LawEqualityResult:
    """Zero-atom proportion test plus KS on the strictly positive parts."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    za, zb = a == 0, b == 0
    zero = two_proportion_test(int(za.sum()), a.size, int(zb.sum()), b.size, alpha)
    pa, pb = a[~za], b[~zb]
    if pa.size and pb.size:
        ks = ks_two_sample(pa, pb, alpha)
    elif pa.size == pb.size:
        ks = TestResult("ks_two_sample", 0.0, 1.0, alpha, True, 0, 0)
    else:
        ks = TestResult("ks_two_sample", 1.0, 0.0, alpha, False, pa.size, pb.size)
    return LawEqualityResult(time, zero, ks, zero.passed and ks.passed)


def law_equality_test(route_a_samples, route_b_samples, times, alpha: float):
    """Per-time comparison of two constructions sampled at the same ``times``.

    Samples are ``{time: values}`` mappings or ``(n, len(times))`` arrays.
    """
    times = list(times)
    cols_a = _by_time(route_a_samples, times)
    cols_b = _by_time(route_b_samples, times)
    return [compare_with_atom(a, b, alpha, t) for t, a, b in zip(times, cols_a, cols_b)]


def scaling_law_test(triplet: LevyTriplet, z0: float, c: float, t: float, n: int, alpha: float,
                     params: SolverParams, seed: int, threads: int = 1) -> TestResult:
    """KS between c^(-a) Z_{ct} from z0 and Z_t from c^(-a) z0, independent streams."""
    b0 = drift_coefficient(triplet)
    if not (z0 > 0 or b0 > 0):
        raise PreconditionError("scaling test needs z0 > 0 or a strictly positive drift")
    if not c > 0:
        raise DomainError("c must be positive")
    a = triplet.index_a
    big = simulate_sde(triplet, z0, np.array([c * t]), n, params, seed, key="scale-original",
                       threads=threads)
    small = simulate_sde(triplet, z0 * c ** (-a), np.array([t]), n, params, seed,
                         key="scale-rescaled", threads=threads)
    return ks_two_sample(big.values[:, 0] * c ** (-a), small.values[:, 0], alpha,
                         label="scaling_law")


@dataclass
class ConvergenceReport:
    z_values: list
    distances: list
    decreasing: bool
    kendall_tau: float
    n: int
    t: float

    def to_json(self):
        return asdict(self)


def zero_start_convergence(triplet: LevyTriplet, z_list, t: float, n: int,
                           params: SolverParams, seed: int, threads: int = 1) -> ConvergenceReport:
    """KS distance at time t between starts z and the start 0.

    All starts share one seed and a fixed step h_max, so their samples are
    driven by common random numbers.
    """
    if not drift_coefficient(triplet) > 0:
        raise PreconditionError(
            "started-from-zero convergence needs a strictly positive drift coefficient "
            "(equivalently the Cramer condition for a process drifting to -infinity)")
    fixed = replace(params, h_min=params.h_max)
    times = np.array([t])

    def run(z):
        return simulate_sde(triplet, z, times, n, fixed, seed, key="zero-start",
                            threads=threads).values[:, 0]

    base = run(0.0)
    dists = [ks_statistic(run(z), base) if z > 0 else 0.0 for z in z_list]
    tau = sps.kendalltau(z_list, dists).statistic if len(z_list) > 1 else math.nan
    dec = all(d1 > d2 for d1, d2 in zip(dists, dists[1:]))
    return ConvergenceReport(list(map(float, z_list)), dists, dec, float(tau), n, t)


@dataclass
class ContinuityReport:
    jumps_from_zero: int
    departures: int
    departures_with_jump: int
    zero_hits: dict
    coincident_atoms: int
    envelope_checks: int
    envelope_violations: int
    kills_are_only_zero_hits: bool
    events_complete: bool
    violations: int = field(init=False)

    def __post_init__(self):
        self.violations = (self.jumps_from_zero + self.departures_with_jump
                           + self.coincident_atoms + self.envelope_violations)

    def to_json(self):
        return asdict(self)


def leave_zero_continuity_check(batch) -> ContinuityReport:
    """Audit of an SDE batch: no jump fires from zero and departures are continuous."""
    c = batch.counters
    ev = batch.events
    zero_hits = {"kill": c["zero_hits_kill"], "diffusion": c["zero_hits_diffusion"],
                 "floor": c["zero_hits_floor"]}
    # a jump logged from an exact zero state would also show up here
    logged_from_zero = int(np.sum((ev[:, 2] == 0) & (ev[:, 3] == 0) & (ev[:, 4] != 0))) if len(ev) else 0
    return ContinuityReport(
        jumps_from_zero=max(c["jumps_from_zero"], logged_from_zero),
        departures=c["departures"], departures_with_jump=c["departures_with_jump"],
        zero_hits=zero_hits, coincident_atoms=c["coincident_atoms"],
        envelope_checks=c["envelope_checks"], envelope_violations=c["envelope_violations"],
        kills_are_only_zero_hits=zero_hits["diffusion"] == 0 and zero_hits["floor"] == 0,
        events_complete=c["events_dropped"] == 0)

"""Solvers for the index-one jump SDE driven by xi/a.

The equation has a constant drift, a square-root diffusion and jump and
killing terms thinned by ``1{r Z <= 1}``.  Random runs use compiled kernels in
blocks; explicit-driver runs are pure Python and replay a fixed realization
of the Brownian increments and of the atoms of N and M.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, rng as rngmod
from .errors import (ContractError, DomainError, DriverError, EscalationLimitError,
                     PreconditionError, SolverError)
from .lamperti import BLOCK, Path, _run_blocks
from .levy import LevyTriplet, drift_coefficient, encode_components, laplace_exponent, make_grid

EVENT_KINDS = ("jump", "kill", "zero_diffusion", "zero_floor", "departure")
COUNTER_NAMES = ("steps", "jumps", "jumps_from_zero", "kills", "zero_hits_diffusion",
                 "zero_hits_kill", "zero_hits_floor", "coincident_atoms", "envelope_checks",
                 "envelope_violations", "departures", "departures_with_jump", "events_logged",
                 "events_dropped", "max_steps_paths")


@dataclass(frozen=True)
class SolverParams:
    """Step and truncation controls, in the time and state units of Z**(1/a)."""

    h_max: float = 1e-3
    h_min: float = 1e-5
    z_floor: float = 1e-3
    state_cap_m: float = 1e6
    escalate: bool = False
    trunc_eps: float = 1e-3
    max_steps: int = 10 ** 8
    envelope_steps: int = 10
    events_per_path: int = 16

    def __post_init__(self):
        if not (0 < self.h_min <= self.h_max):
            raise DomainError("need 0 < h_min <= h_max")
        if not self.z_floor >= 0:
            raise DomainError("need z_floor >= 0")
        if not self.state_cap_m > 0:
            raise DomainError("need state_cap_m > 0")
        if not 0 < self.trunc_eps < self.state_cap_m:
            raise DomainError("need 0 < trunc_eps < state_cap_m")


@dataclass(frozen=True)
class Drivers:
    """Either a seed, or explicit Brownian increments on a uniform grid plus atoms.

    ``atoms_n`` holds ``(s, r, u)`` triples and ``atoms_m`` holds ``(s, r)`` pairs.
    """

    mode: str
    seed: int | None = None
    step: float | None = None
    brownian_increments: tuple | None = None
    atoms_n: tuple = ()
    atoms_m: tuple = ()

    @classmethod
    def random(cls, seed):
        return cls(mode="random", seed=int(seed))

    @classmethod
    def explicit(cls, step, brownian_increments=None, atoms_n=(), atoms_m=()):
        inc = None if brownian_increments is None else tuple(float(x) for x in brownian_increments)
        d = cls(mode="explicit", step=float(step), brownian_increments=inc,
                atoms_n=tuple((float(s), float(r), float(u)) for s, r, u in atoms_n),
                atoms_m=tuple((float(s), float(r)) for s, r in atoms_m))
        d.validate()
        return d

    def validate(self):
        if not (self.step and self.step > 0):
            raise DriverError("explicit drivers need a positive step")
        for name, atoms in (("N", self.atoms_n), ("M", self.atoms_m)):
            times = [a[0] for a in atoms]
            if times != sorted(times):
                raise DriverError(f"{name} atoms must be sorted by time")
            if any(a[1] <= 0 for a in atoms):
                raise DriverError(f"{name} atoms need r > 0")
        if any(u >= 0 for _, _, u in self.atoms_n):
            raise DriverError("N atoms need u < 0")

    def to_csv(self, path):
        """Atoms as ``kind,s,r,u`` rows (u empty for M)."""
        rows = [("N", s, r, u) for s, r, u in self.atoms_n] + [("M", s, r, "") for s, r in self.atoms_m]
        rows.sort(key=lambda row: row[1])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("kind", "s", "r", "u"))
            for k, s, r, u in rows:
                w.writerow((k, repr(s), repr(r), u if u == "" else repr(u)))

    @classmethod
    def from_csv(cls, path, step, brownian_increments=None):
        n_atoms, m_atoms = [], []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["kind", "s", "r", "u"]:
                raise DriverError("driver CSV header must be kind,s,r,u")
            for row in reader:
                if row["kind"] == "N":
                    n_atoms.append((float(row["s"]), float(row["r"]), float(row["u"])))
                elif row["kind"] == "M":
                    if row["u"]:
                        raise DriverError("M rows must leave u empty")
                    m_atoms.append((float(row["s"]), float(row["r"])))
                else:
                    raise DriverError(f"unknown atom kind {row['kind']!r}")
        return cls.explicit(step, brownian_increments, n_atoms, m_atoms)


@dataclass(frozen=True)
class Reduced:
    """Index-one coefficients of the SDE driven by xi/a."""

    b0: float      # drift at zero, psi(1/a)
    beff: float    # drift with raw (uncompensated) atoms, psi(1/a) + q - J
    sigma: float   # sigma / a
    inv_a: float
    q: float
    jump_mean: float  # J = sum of rate * E[exp(U/a) - 1] over simulated components


def reduce_index(triplet: LevyTriplet, components=None) -> Reduced:
    a = triplet.index_a
    comps = triplet.jumps.simulated() if components is None else components
    jm = sum(r * law.expect(lambda u: math.expm1(u / a)) for r, law in comps)
    b0 = drift_coefficient(triplet)
    return Reduced(b0=b0, beff=b0 + triplet.kill_rate - jm, sigma=triplet.sigma / a,
                   inv_a=1.0 / a, q=triplet.kill_rate, jump_mean=jm)


# ------------------------------------------------------------ random batches

@dataclass
class SdeBatch:
    times: np.ndarray
    values: np.ndarray
    t0: np.ndarray
    counters: dict
    events: np.ndarray
    absorbing: bool
    drift: float

    def event_table(self):
        """Events as dicts with keys path, t, kind, pre, post (Z units)."""
        return [{"path": int(p), "t": float(t), "kind": EVENT_KINDS[int(k)],
                 "pre": float(pre), "post": float(post)} for p, t, k, pre, post in self.events]


def _check_start(z0, b0, absorbing):
    if not z0 >= 0:
        raise DomainError(f"z0 must be >= 0, got {z0}")
    if z0 == 0 and b0 <= 0:
        raise PreconditionError(
            "z0 = 0 needs a strictly positive drift coefficient; with drift <= 0 zero is a trap")


def simulate_sde(triplet: LevyTriplet, z0: float, times, n_paths: int, params: SolverParams,
                 seed: int, key="sde", absorb: bool | None = None, threads: int = 1) -> SdeBatch:
    """Random batch of SDE paths sampled at ``times``.

    With ``absorb`` the paths are stopped at their first zero (below the
    floor); with drift <= 0 they are always stopped, since zero is then a trap.
    """
    red = reduce_index(triplet)
    absorbing = bool(absorb) or red.b0 <= 0
    _check_start(z0, red.b0, absorbing)
    times = np.ascontiguousarray(times, dtype=float)
    a = triplet.index_a
    x0 = z0 ** red.inv_a
    rates, kinds, p1, p2, p3 = encode_components(triplet.jumps.simulated())
    cum = np.cumsum(rates)
    x_ref = max(x0, 1.0)

    def job(b, start):
        n = min(BLOCK, n_paths - start)
        g_b, g_j, g_f = rngmod.block_streams(seed, key, b)
        vals = np.empty((n, times.size))
        t0 = np.empty(n)
        cnt = np.zeros(_kernels.N_COUNTERS, dtype=np.int64)
        ev = np.empty((params.events_per_path * n, 5))
        _kernels.sde_block(x0, times, red.beff, red.b0, red.sigma, red.inv_a, red.q, cum,
                           kinds, p1, p2, p3, params.h_max, params.h_min, x_ref, params.z_floor,
                           absorbing, params.envelope_steps, params.max_steps,
                           g_b, g_j, g_f, vals, t0, cnt, ev)
        ev = ev[: cnt[_kernels.C_EVENTS]].copy()
        ev[:, 0] += start
        return vals, t0, cnt, ev

    parts = _run_blocks(n_paths, threads, job)
    vals = np.concatenate([p[0] for p in parts])
    ev = np.concatenate([p[3] for p in parts])
    ev[:, 3:] = ev[:, 3:] ** a
    cnt = sum(p[2] for p in parts)
    if cnt[_kernels.C_MAX_STEPS]:
        raise SolverError(f"{cnt[_kernels.C_MAX_STEPS]} paths exceeded max_steps={params.max_steps}")
    return SdeBatch(times=times, values=vals ** a, t0=np.concatenate([p[1] for p in parts]),
                    counters=dict(zip(COUNTER_NAMES, (int(c) for c in cnt))),
                    events=ev, absorbing=absorbing, drift=red.b0)


@dataclass
class TruncatedBatch:
    times: np.ndarray
    values: np.ndarray
    tau_m: np.ndarray
    counters: dict
    m: float


def simulate_truncated(triplet: LevyTriplet, z0: float, times, n_paths: int, params: SolverParams,
                       seed: int, key="truncated", threads: int = 1) -> TruncatedBatch:
    """Random batch of the (eps, m)-truncated equation on a fixed Euler grid.

    Random numbers are consumed independently of the state, so runs that
    differ only in the cap m agree bitwise before the cap is reached.
    """
    eps, m = params.trunc_eps, params.state_cap_m
    a = triplet.index_a
    comps = triplet.jumps.truncated(a * eps)
    red = reduce_index(triplet, comps)
    if not z0 >= 0:
        raise DomainError(f"z0 must be >= 0, got {z0}")
    times = np.ascontiguousarray(times, dtype=float)
    x0 = z0 ** red.inv_a
    rates, kinds, p1, p2, p3 = encode_components(comps)
    cum = np.cumsum(rates)

    def job(b, start):
        n = min(BLOCK, n_paths - start)
        g_b, g_j, _ = rngmod.block_streams(seed, key, b)
        vals = np.empty((n, times.size))
        tau = np.empty(n)
        cnt = np.zeros(4, dtype=np.int64)
        _kernels.truncated_block(x0, times, red.b0, red.jump_mean, red.q, red.sigma, red.inv_a,
                                 eps, m, cum, kinds, p1, p2, p3, params.h_max,
                                 g_b, g_j, vals, tau, cnt)
        return vals, tau, cnt

    parts = _run_blocks(n_paths, threads, job)
    cnt = sum(p[2] for p in parts)
    return TruncatedBatch(times=times, values=np.concatenate([p[0] for p in parts]) ** a,
                          tau_m=np.concatenate([p[1] for p in parts]),
                          counters=dict(zip(("steps", "atoms", "jumps", "kills"),
                                            (int(c) for c in cnt))), m=m)


# ------------------------------------------------------------ explicit drivers

def _explicit_grid(horizon, drivers):
    if drivers.mode != "explicit":
        raise ContractError("explicit drivers required")
    h = drivers.step
    n = int(round(horizon / h))
    if n < 1 or abs(n * h - horizon) > 1e-9 * max(1.0, horizon):
        raise DriverError(f"step {h} does not divide horizon {horizon}")
    inc = drivers.brownian_increments
    if inc is not None and len(inc) != n:
        raise DriverError(f"expected {n} Brownian increments, got {len(inc)}")
    atoms = [(s, r, u, False) for s, r, u in drivers.atoms_n] + [(s, r, 0.0, True) for s, r in drivers.atoms_m]
    for s, *_ in atoms:
        if not 0 < s <= horizon * (1 + 1e-12):
            raise DriverError(f"atom time {s} outside (0, {horizon}]")
    atoms.sort(key=lambda x: x[0])
    times = np.arange(n + 1) * h
    times[-1] = horizon
    return times, (np.zeros(n) if inc is None else np.asarray(inc, dtype=float)), atoms


def _replay(x0, times, dbs, atoms, drift, diffusion, apply_atom, absorbing):
    """Euler cells with atoms applied at their times; the noise enters in the first sub-step."""
    x = x0
    vals = [x0]
    marks = []
    first_zero = 0.0 if x0 == 0 else math.inf
    dead = absorbing and x0 == 0
    k_atom = 0
    for k in range(len(dbs)):
        t_lo, t_hi = times[k], times[k + 1]
        cur = t_lo
        noise = 0.0 if dead else diffusion(x) * dbs[k]
        while True:
            nxt = atoms[k_atom][0] if k_atom < len(atoms) and atoms[k_atom][0] <= t_hi else None
            seg_end = t_hi if nxt is None else nxt
            if not dead:
                pre = x
                x = x + drift(x) * (seg_end - cur) + noise
                noise = 0.0
                if x <= 0:
                    if pre > 0:
                        first_zero = min(first_zero, seg_end)
                    x = 0.0
                    dead = absorbing
            cur = seg_end
            if nxt is None:
                break
            s, r, u, is_kill = atoms[k_atom]
            k_atom += 1
            if dead:
                continue
            pre = x
            x = apply_atom(x, r, u, is_kill)
            if x != pre:
                marks.append((s, pre, x))
            if x == 0.0 and pre > 0.0:
                first_zero = min(first_zero, s)
                dead = absorbing
        vals.append(x)
    return np.array(vals), marks, first_zero


def _to_path(times, xs, marks, first_zero, absorbing, a, info):
    absorption = first_zero if absorbing else math.inf
    info = dict(info)
    info["first_zero_time"] = first_zero
    return Path(times=times, values=np.asarray(xs) ** a,
                jump_marks=[(t, pre ** a, post ** a) for t, pre, post in marks],
                absorption_time=absorption, info=info)


def solve_sde(triplet: LevyTriplet, z0: float, horizon: float, params: SolverParams,
              drivers: Drivers, output_grid=None, absorb: bool | None = None) -> Path:
    """One path of the SDE, from a seed or from explicit drivers."""
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    red = reduce_index(triplet)
    absorbing = bool(absorb) or red.b0 <= 0
    _check_start(z0, red.b0, absorbing)
    a = triplet.index_a
    if drivers.mode == "random":
        grid = make_grid(horizon, params.h_max) if output_grid is None else np.asarray(output_grid, float)
        batch = simulate_sde(triplet, z0, grid, 1, params, drivers.seed, key="path", absorb=absorbing)
        marks = [(e["t"], e["pre"], e["post"]) for e in batch.event_table()
                 if e["kind"] in ("jump", "kill")]
        t0 = float(batch.t0[0])
        return Path(times=grid, values=batch.values[0], jump_marks=marks,
                    absorption_time=t0 if absorbing else math.inf,
                    info={"first_zero_time": t0, "counters": batch.counters,
                          "events": batch.event_table()})
    times, dbs, atoms = _explicit_grid(horizon, drivers)
    x0 = z0 ** red.inv_a

    def drift(x):
        return red.beff if x > 0 else red.b0

    def diffusion(x):
        return red.sigma * math.sqrt(x)

    def apply_atom(x, r, u, is_kill):
        if r * x > 1.0:
            return x
        return 0.0 if is_kill else x * math.exp(u * red.inv_a)

    xs, marks, first_zero = _replay(x0, times, dbs, atoms, drift, diffusion, apply_atom, absorbing)
    return _to_path(times, xs, marks, first_zero, absorbing, a, {})


def _bm(x, eps, m):
    return min(x, m) / max(x, eps) if x > 0 else 0.0


def _solve_truncated_once(triplet, z0, horizon, params, drivers, output_grid):
    eps, m = params.trunc_eps, params.state_cap_m
    a = triplet.index_a
    comps = triplet.jumps.truncated(a * eps)
    red = reduce_index(triplet, comps)
    if not z0 >= 0:
        raise DomainError(f"z0 must be >= 0, got {z0}")
    if drivers.mode == "random":
        grid = make_grid(horizon, params.h_max) if output_grid is None else np.asarray(output_grid, float)
        batch = simulate_truncated(triplet, z0, grid, 1, params, drivers.seed, key="path")
        return Path(times=grid, values=batch.values[0],
                    info={"tau_m": float(batch.tau_m[0]), "m": m, "counters": batch.counters})
    times, dbs, atoms = _explicit_grid(horizon, drivers)
    # atoms outside (0, 1/eps] x {|u/a| >= eps} are not part of the truncated equation
    atoms = [at for at in atoms if at[1] <= 1.0 / eps and (at[3] or -at[2] / a >= eps)]

    def drift(x):
        return red.b0 - (red.jump_mean - red.q) * _bm(x, eps, m)

    def diffusion(x):
        return red.sigma * math.sqrt(min(x, m))

    def apply_atom(x, r, u, is_kill):
        if r * x > 1.0:
            return x
        return max(0.0, x - min(x, m)) if is_kill else x + min(x, m) * math.expm1(u * red.inv_a)

    x0 = z0 ** red.inv_a
    xs, marks, first_zero = _replay(x0, times, dbs, atoms, drift, diffusion, apply_atom, red.b0 <= 0)
    hit = np.flatnonzero(xs >= m)
    tau_m = float(times[hit[0]]) if hit.size else math.inf
    for t, pre, post in marks:
        if post >= m and t < tau_m:
            tau_m = t
    return _to_path(times, xs, marks, first_zero, red.b0 <= 0, a, {"tau_m": tau_m, "m": m})


def solve_truncated(triplet: LevyTriplet, z0: float, horizon: float, params: SolverParams,
                    drivers: Drivers, output_grid=None) -> Path:
    """Interlacing solution of the (eps, m)-truncated equation; escalates m if asked."""
    if not horizon > 0:
        raise DomainError("horizon must be positive")

    def run(z, h, p):
        return _solve_truncated_once(triplet, z, h, p, drivers, output_grid)

    if params.escalate:
        return cap_escalation(run, z0, horizon, params)
    return run(z0, horizon, params)


def cap_escalation(run, z0, horizon, params: SolverParams, max_doublings: int = 20) -> Path:
    """Rerun with a doubled cap while the cap is reached before ``horizon``.

    ``run(z0, horizon, params)`` must return a Path whose info carries ``tau_m``.
    """
    if not params.escalate:
        raise ContractError("cap escalation needs params.escalate = True")
    p = params
    for k in range(max_doublings + 1):
        path = run(z0, horizon, p)
        if not path.info["tau_m"] <= horizon:
            path.info["escalations"] = k
            return path
        if k < max_doublings:
            p = replace(p, state_cap_m=2 * p.state_cap_m)
    raise EscalationLimitError(
        f"cap still reached after {max_doublings} doublings (m = {p.state_cap_m})")


# ------------------------------------------------------------ checks

def scale_drivers(drivers: Drivers, c: float) -> Drivers:
    """Drivers of the time-rescaled equation: B_ct / sqrt(c), (s, r) -> (s / c, c r)."""
    inc = drivers.brownian_increments
    return Drivers.explicit(
        drivers.step / c,
        None if inc is None else [x / math.sqrt(c) for x in inc],
        [(s / c, c * r, u) for s, r, u in drivers.atoms_n],
        [(s / c, c * r) for s, r in drivers.atoms_m])


@dataclass
class ScalingReport:
    max_abs_deviation: float
    c: float
    n_points: int
    info: dict = field(default_factory=dict)


def pathwise_scaling_check(triplet: LevyTriplet, z0: float, c: float, drivers: Drivers,
                           horizon: float, params: SolverParams) -> ScalingReport:
    """sup_k |c^(-a) Z_{c t_k} - Zbar_{t_k}| for the original and rescaled drivers.

    The original drivers live on [0, c * horizon] with step ``drivers.step``.
    """
    if drivers.mode != "explicit":
        raise ContractError("the pathwise scaling check is deterministic and needs explicit drivers")
    if not (z0 > 0 and c > 0):
        raise DomainError("need z0 > 0 and c > 0")
    a = triplet.index_a
    orig = solve_sde(triplet, z0, c * horizon, params, drivers)
    scaled = solve_sde(triplet, z0 * c ** (-a), horizon, params, scale_drivers(drivers, c))
    dev = np.max(np.abs(orig.values * c ** (-a) - scaled.values))
    return ScalingReport(max_abs_deviation=float(dev), c=c, n_points=len(orig.values))


def generator_apply(triplet: LevyTriplet, f, fp, fpp, z: float) -> float:
    """Generator of the index-one equation applied to ``f`` at ``z`` (q = 0, a = 1)."""
    if not z > 0:
        raise DomainError(f"generator needs z > 0, got {z}")
    if triplet.kill_rate != 0 or triplet.index_a != 1:
        raise PreconditionError("generator formula holds for q = 0 and a = 1")
    val = laplace_exponent(triplet, 1.0) * fp(z) + 0.5 * triplet.sigma ** 2 * z * fpp(z)
    if not triplet.jumps.is_empty():
        fz, dz = f(z), fp(z)
        val += triplet.jumps.integrate(lambda u: f(z * math.exp(u)) - fz - z * dz * math.expm1(u)) / z
    return val


def simulate_truncated_escalating(triplet: LevyTriplet, z0: float, times, n_paths: int,
                                  params: SolverParams, seed: int, key="truncated",
                                  threads: int = 1, max_doublings: int = 20) -> TruncatedBatch:
    """Batch version of :func:`cap_escalation` with identical random drivers per rerun."""
    horizon = float(np.max(times))
    p = params
    for k in range(max_doublings + 1):
        batch = simulate_truncated(triplet, z0, times, n_paths, p, seed, key=key, threads=threads)
        if not np.any(batch.tau_m <= horizon):
            batch.counters["escalations"] = k
            return batch
        if k < max_doublings:
            p = replace(p, state_cap_m=2 * p.state_cap_m)
    raise EscalationLimitError(
        f"cap still reached after {max_doublings} doublings (m = {p.state_cap_m})")

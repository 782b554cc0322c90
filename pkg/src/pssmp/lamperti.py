"""Lamperti's time change between Levy paths and positive self-similar paths."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, rng as rngmod
from .errors import DomainError, PreconditionError, SolverError
from .levy import LevyPath, LevyTriplet, compensated_drift, encode_components

BLOCK = 256


@dataclass
class Path:
    """A non-negative path on a grid with its jump record.

    ``jump_marks`` holds ``(time, pre, post)`` triples.  ``absorption_time`` is
    the first time the path is trapped at zero (``inf`` if never).
    """

    times: np.ndarray
    values: np.ndarray
    jump_marks: list = field(default_factory=list)
    absorption_time: float = math.inf
    info: dict = field(default_factory=dict)


@dataclass
class TimeChange:
    source_times: np.ndarray
    I_values: np.ndarray


def exp_functional(xi: LevyPath, a: float, rule: str = "left") -> TimeChange:
    """Grid values of I_s = int_0^s exp(xi_r / a) dr, frozen after the lifetime.

    ``rule="left"`` integrates the left grid value over each cell.
    ``rule="linear"`` integrates exp of the linear interpolant exactly, which is
    exact for piecewise-linear xi but smears jumps across their cell.
    """
    if not a > 0:
        raise DomainError(f"index a must be > 0, got {a}")
    t = np.asarray(xi.times, dtype=float)
    v = np.asarray(xi.values, dtype=float) / a
    dt = np.diff(t)
    # fraction of each cell lived before the killing time
    live = np.clip((xi.kill_time - t[:-1]) / dt, 0.0, 1.0)
    if rule == "left":
        inc = np.exp(v[:-1]) * dt * live
    elif rule == "linear":
        d = np.diff(v) * live
        small = np.abs(d) < 1e-8
        rel = np.where(small, 1.0 + 0.5 * d, np.expm1(d) / np.where(small, 1.0, d))
        inc = np.exp(v[:-1]) * dt * live * rel
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return TimeChange(source_times=t, I_values=np.concatenate(([0.0], np.cumsum(inc))))


def inverse_time_change(tc: TimeChange, t: float) -> float:
    """inf{s : I_s >= t}, interpolating linearly inside the bracketing cell."""
    if not t >= 0:
        raise DomainError(f"time must be >= 0, got {t}")
    iv = tc.I_values
    if t > iv[-1]:
        return math.inf
    k = int(np.searchsorted(iv, t, side="left"))
    if k == 0:
        return float(tc.source_times[0])
    lo, hi = iv[k - 1], iv[k]
    s0, s1 = tc.source_times[k - 1], tc.source_times[k]
    return float(s0 + (s1 - s0) * (t - lo) / (hi - lo))


def lamperti_transform(xi: LevyPath, z: float, a: float, output_grid, rule: str = "left") -> Path:
    """Z_t = z exp(xi at tau(t z^(-1/a))) on ``output_grid``, zero once tau is infinite."""
    if not z > 0:
        raise DomainError(f"the transform needs z > 0, got {z}")
    tc = exp_functional(xi, a, rule=rule)
    grid = np.asarray(output_grid, dtype=float)
    scale = z ** (-1.0 / a)
    values = np.zeros_like(grid)
    horizon_i = tc.I_values[-1]
    killed = xi.kill_time <= xi.times[-1]
    for i, t in enumerate(grid):
        target = t * scale
        if target > horizon_i:
            if not killed:
                values[i] = np.nan
            continue
        s = inverse_time_change(tc, target)
        if killed and s >= xi.kill_time:
            continue
        k = max(0, int(np.searchsorted(xi.times, s, side="right")) - 1)
        values[i] = z * math.exp(xi.values[k])
    covered = ~np.isnan(values)
    marks = []
    for s, u in xi.jump_marks:
        t_img = z ** (1.0 / a) * float(np.interp(s, tc.source_times, tc.I_values))
        k = int(np.searchsorted(xi.times, s, side="left"))
        post = z * math.exp(xi.values[k])
        marks.append((t_img, post * math.exp(-u), post))
    absorption = math.inf
    if killed:
        t_kill = z ** (1.0 / a) * horizon_i
        k = int(np.searchsorted(xi.times, xi.kill_time, side="right")) - 1
        marks.append((t_kill, z * math.exp(xi.values[max(k, 0)]), 0.0))
        values[grid >= t_kill] = 0.0
        zeros = np.flatnonzero(values == 0.0)
        if zeros.size:
            absorption = float(grid[zeros[0]])
    keep = covered | (values == 0.0)
    return Path(times=grid[keep], values=values[keep], jump_marks=marks,
                absorption_time=absorption,
                info={"coverage": float(keep.mean()) if grid.size else 1.0,
                      "kill_image": z ** (1.0 / a) * horizon_i if killed else math.inf})


def power_map(path: Path, a: float, direction: str) -> Path:
    """Pointwise ``value**(1/a)`` ("toIndex1") or ``value**a`` ("fromIndex1")."""
    if direction == "toIndex1":
        e = 1.0 / a
    elif direction == "fromIndex1":
        e = float(a)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    vals = np.asarray(path.values, dtype=float)
    if np.any(vals < 0):
        raise DomainError("power map needs a non-negative path")
    marks = [(t, pre ** e, post ** e) for t, pre, post in path.jump_marks]
    return Path(times=path.times, values=vals ** e, jump_marks=marks,
                absorption_time=path.absorption_time, info=dict(path.info))


# ------------------------------------------------------------ batch route

@dataclass
class LampertiBatch:
    times: np.ndarray
    values: np.ndarray
    t0: np.ndarray
    counters: dict


def _run_blocks(n_paths, threads, job):
    starts = list(range(0, n_paths, BLOCK))
    if threads and threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, range(len(starts)), starts))
    return [job(i, s) for i, s in enumerate(starts)]


def simulate_lamperti(triplet: LevyTriplet, z0: float, times, n_paths: int, params, seed: int,
                      key="lamperti", threads: int = 1) -> LampertiBatch:
    """Batch of Lamperti images sampled at ``times``; values are absorbed below the floor.

    The xi-time step is chosen so that the induced step in the time of Z
    follows the same rule as the SDE solver.  The continuous part is
    integrated exactly between jump epochs.
    """
    if not z0 > 0:
        raise PreconditionError("the Lamperti route needs a strictly positive start z0 > 0")
    times = np.ascontiguousarray(times, dtype=float)
    a = triplet.index_a
    x0 = z0 ** (1.0 / a)
    comps = triplet.jumps.simulated()
    rates, kinds, p1, p2, p3 = encode_components(comps)
    cum = np.cumsum(rates)
    x_ref = max(x0, 1.0)
    drift = compensated_drift(triplet) / a

    def job(b, start):
        n = min(BLOCK, n_paths - start)
        g_b, g_j, _ = rngmod.block_streams(seed, key, b)
        vals = np.empty((n, times.size))
        t0 = np.empty(n)
        cnt = np.zeros(5, dtype=np.int64)
        _kernels.lamperti_block(x0, times, drift, triplet.sigma / a,
                                1.0 / a, triplet.kill_rate, cum, kinds, p1, p2, p3,
                                params.h_max, params.h_min, x_ref, params.z_floor,
                                params.max_steps, g_b, g_j, vals, t0, cnt)
        return vals, t0, cnt

    parts = _run_blocks(n_paths, threads, job)
    vals = np.concatenate([p[0] for p in parts]) ** a
    t0 = np.concatenate([p[1] for p in parts])
    cnt = sum(p[2] for p in parts)
    if cnt[3]:
        raise SolverError(f"{cnt[3]} paths exceeded max_steps={params.max_steps}")
    counters = dict(zip(("jumps", "kills", "floor_absorptions", "max_steps", "steps"),
                        (int(c) for c in cnt)))
    return LampertiBatch(times=times, values=vals, t0=t0, counters=counters)

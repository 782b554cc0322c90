"""Compiled per-block path simulators.

All kernels work with the index-one state ``X = Z**(1/a)`` and write values at
prescribed output times.  Every block draws from three dedicated streams so
that the Brownian noise of a path does not depend on its jump history.
"""

import math

import numpy as np
from numba import njit

# counter slots of the SDE kernel
C_STEPS = 0
C_JUMPS = 1
C_JUMPS_FROM_ZERO = 2
C_KILLS = 3
C_ZERO_DIFFUSION = 4
C_ZERO_KILL = 5
C_ZERO_FLOOR = 6
C_COINCIDENT = 7
C_ENV_CHECKS = 8
C_ENV_VIOLATIONS = 9
C_DEPARTURES = 10
C_DEPARTURES_WITH_JUMP = 11
C_EVENTS = 12
C_EVENTS_DROPPED = 13
C_MAX_STEPS = 14
N_COUNTERS = 15

# event kinds
EV_JUMP = 0
EV_KILL = 1
EV_ZERO_DIFFUSION = 2
EV_ZERO_FLOOR = 3
EV_DEPARTURE = 4


@njit(cache=True, nogil=True)
def _mark(kind, p1, p2, p3, g):
    if kind == 0:
        return p1
    if kind == 1:
        return -p2 - g.standard_exponential() / p1
    if kind == 2:
        return p1 + (p2 - p1) * g.random()
    lo = p2 ** -p1
    hi = p3 ** -p1
    return -((lo - g.random() * (lo - hi)) ** (-1.0 / p1))


@njit(cache=True, nogil=True)
def _draw_jump(cum, kinds, p1, p2, p3, g):
    x = g.random() * cum[cum.shape[0] - 1]
    i = 0
    while i < cum.shape[0] - 1 and x >= cum[i]:
        i += 1
    return _mark(kinds[i], p1[i], p2[i], p3[i], g)


@njit(cache=True, nogil=True)
def _step_size(x, h_max, h_min, x_ref):
    h = h_max * min(1.0, x / x_ref)
    if h < h_min:
        h = h_min
    return h


@njit(cache=True, nogil=True)
def sqrt_diffusion_step(y, b, sig, h, nb, g):
    """Exact transition of dY = b dt + sig sqrt(Y) dW over h (b >= 0)."""
    if sig == 0.0:
        return y + b * h
    c = 0.25 * sig * sig * h
    d = b / c * h
    lam = y / c
    if d >= 1.0:
        x = (math.sqrt(lam) + nb) ** 2
        if d > 1.0:
            x += 2.0 * g.standard_gamma(0.5 * (d - 1.0))
        return c * x
    n = g.poisson(0.5 * lam)
    return 2.0 * c * g.standard_gamma(0.5 * d + n)


@njit(cache=True, nogil=True)
def _log_event(ev, counters, p, t, kind, pre, post):
    k = counters[C_EVENTS]
    if k < ev.shape[0]:
        ev[k, 0] = p
        ev[k, 1] = t
        ev[k, 2] = kind
        ev[k, 3] = pre
        ev[k, 4] = post
        counters[C_EVENTS] = k + 1
    else:
        counters[C_EVENTS_DROPPED] += 1


@njit(cache=True, nogil=True)
def sde_block(x0, out_t, beff, b0, sig, inv_a, q, cum, kinds, p1, p2, p3,
              h_max, h_min, x_ref, z_floor, absorbing, env_k, max_steps,
              g_b, g_j, g_f, out_vals, out_t0, counters, ev):
    n_paths = out_vals.shape[0]
    n_out = out_t.shape[0]
    lam_tot = cum[cum.shape[0] - 1] if cum.shape[0] > 0 else 0.0
    jump_gap = beff - b0  # q - J, the compensator carried by the drift
    for p in range(n_paths):
        x = x0
        t = 0.0
        dead = False
        t0 = np.inf
        since_zero = env_k
        if x0 == 0.0:
            since_zero = 0
            t0 = 0.0
            if absorbing:
                dead = True
        steps = 0
        j = 0
        while j < n_out:
            target = out_t[j]
            if t >= target:
                out_vals[p, j] = x
                j += 1
                continue
            if dead:
                out_vals[p, j] = 0.0
                j += 1
                continue
            if steps >= max_steps:
                counters[C_MAX_STEPS] += 1
                while j < n_out:
                    out_vals[p, j] = np.nan
                    j += 1
                break
            h = _step_size(x, h_max, h_min, x_ref)
            if t + h >= target * (1.0 - 1e-13):
                h = target - t
            nb = g_b.standard_normal()
            steps += 1
            xs = x
            if xs <= z_floor and absorbing:
                if xs > 0.0:
                    counters[C_ZERO_FLOOR] += 1
                    _log_event(ev, counters, p, t, EV_ZERO_FLOOR, xs, 0.0)
                x = 0.0
                dead = True
                if t < t0:
                    t0 = t
                continue
            if xs > z_floor:
                bdrift = beff
                xn = xs + beff * h + sig * math.sqrt(xs * h) * nb
                rate_scale = 1.0 / xs
            else:
                kappa = xs / z_floor if z_floor > 0.0 else 0.0
                bdrift = b0 + kappa * jump_gap
                xn = sqrt_diffusion_step(xs, bdrift, sig, h, nb, g_f)
                rate_scale = 1.0 / z_floor if xs > 0.0 else 0.0
            # envelope audit on the continuous part of post-zero steps
            if since_zero < env_k:
                counters[C_ENV_CHECKS] += 1
                bound = abs(bdrift) * h + 4.0 * sig * math.sqrt(max(xs, xn) * h)
                if abs(xn - xs) > bound * (1.0 + 1e-12):
                    counters[C_ENV_VIOLATIONS] += 1
            if since_zero < env_k:
                since_zero += 1
            if xn <= 0.0:
                xn = 0.0
                if xs > 0.0:
                    counters[C_ZERO_DIFFUSION] += 1
                    _log_event(ev, counters, p, t + h, EV_ZERO_DIFFUSION, xs, 0.0)
                    if t + h < t0:
                        t0 = t + h
                    since_zero = 0
                if absorbing:
                    x = 0.0
                    dead = True
                    t = t + h
                    continue
            # atoms at intensity frozen at the step start
            n_atoms = 0
            if rate_scale > 0.0:
                tk = np.inf
                if q > 0.0:
                    tk = g_j.exponential(1.0 / (q * rate_scale))
                nj = 0
                if lam_tot > 0.0:
                    nj = g_j.poisson(lam_tot * rate_scale * h)
                if nj > 0:
                    st = np.sort(g_j.random(nj) * h)
                    for i in range(nj):
                        u = _draw_jump(cum, kinds, p1, p2, p3, g_j)
                        if st[i] > tk:
                            continue
                        if st[i] == tk:
                            counters[C_COINCIDENT] += 1
                        pre = xn
                        xn = pre * math.exp(u * inv_a)
                        n_atoms += 1
                        counters[C_JUMPS] += 1
                        if pre == 0.0 and xn != pre:
                            counters[C_JUMPS_FROM_ZERO] += 1
                        _log_event(ev, counters, p, t + st[i], EV_JUMP, pre, xn)
                if tk < h:
                    pre = xn
                    counters[C_KILLS] += 1
                    _log_event(ev, counters, p, t + tk, EV_KILL, pre, 0.0)
                    xn = 0.0
                    if pre > 0.0:
                        counters[C_ZERO_KILL] += 1
                        since_zero = 0
                        if t + tk < t0:
                            t0 = t + tk
                    if absorbing:
                        x = 0.0
                        dead = True
                        t = t + h
                        continue
            if xs == 0.0 and xn > 0.0:
                counters[C_DEPARTURES] += 1
                if n_atoms > 0:
                    counters[C_DEPARTURES_WITH_JUMP] += 1
                _log_event(ev, counters, p, t + h, EV_DEPARTURE, xs, xn)
            x = xn
            t = target if h == target - t else t + h
        out_t0[p] = t0
        counters[C_STEPS] += steps


@njit(cache=True, nogil=True)
def _relexp(y):
    if abs(y) < 1e-8:
        return 1.0 + 0.5 * y
    return math.expm1(y) / y


@njit(cache=True, nogil=True)
def lamperti_block(x0, out_t, drift, sig, inv_a, q, cum, kinds, p1, p2, p3,
                   h_max, h_min, x_ref, z_floor, max_steps,
                   g_b, g_j, out_vals, out_t0, counters):
    """Time-changed exponential of xi/a; drift and sig are already divided by a."""
    n_paths = out_vals.shape[0]
    n_out = out_t.shape[0]
    lam_tot = cum[cum.shape[0] - 1] if cum.shape[0] > 0 else 0.0
    for p in range(n_paths):
        zeta = g_j.exponential(1.0 / q) if q > 0.0 else np.inf
        eta = 0.0
        big_i = 0.0
        s = 0.0
        xcur = x0
        dead = False
        t0 = np.inf
        steps = 0
        j = 0
        while j < n_out and out_t[j] == 0.0:
            out_vals[p, j] = x0
            j += 1
        while j < n_out:
            if dead:
                out_vals[p, j] = 0.0
                j += 1
                continue
            if steps >= max_steps:
                counters[3] += 1
                while j < n_out:
                    out_vals[p, j] = np.nan
                    j += 1
                break
            ds = _step_size(xcur, h_max, h_min, x_ref) / xcur
            nb = g_b.standard_normal()
            steps += 1
            d = drift * ds + sig * math.sqrt(ds) * nb
            killed = s + ds >= zeta
            frac = (zeta - s) / ds if killed else 1.0
            e0 = math.exp(eta)
            d_i = e0 * ds * frac * _relexp(d * frac)
            while j < n_out and out_t[j] / x0 <= big_i + d_i:
                r = (out_t[j] / x0 - big_i) / (e0 * ds)
                rd = r * d
                theta = math.log1p(rd) / d if abs(rd) > 1e-12 else r
                out_vals[p, j] = x0 * math.exp(eta + d * theta)
                j += 1
            if killed:
                dead = True
                t0 = x0 * (big_i + d_i)
                counters[1] += 1
                continue
            eta += d
            big_i += d_i
            s += ds
            if lam_tot > 0.0:
                nj = g_j.poisson(lam_tot * ds)
                for _ in range(nj):
                    eta += _draw_jump(cum, kinds, p1, p2, p3, g_j) * inv_a
                counters[0] += nj
            xcur = x0 * math.exp(eta)
            if xcur <= z_floor:
                dead = True
                t0 = x0 * big_i
                counters[2] += 1
        out_t0[p] = t0
        counters[4] += steps


@njit(cache=True, nogil=True)
def truncated_block(x0, out_t, psi1, j_eps, q, sig, inv_a, eps, m, cum, kinds, p1, p2, p3,
                    h, g_b, g_j, out_vals, out_tau, counters):
    """Interlacing scheme for the (eps, m)-truncated equation with fixed Euler cells."""
    n_paths = out_vals.shape[0]
    n_out = out_t.shape[0]
    lam_tot = cum[cum.shape[0] - 1] if cum.shape[0] > 0 else 0.0
    atom_rate = (lam_tot + q) / eps
    gap = j_eps - q
    for p in range(n_paths):
        x = x0
        t = 0.0
        tau = np.inf
        if x >= m:
            tau = 0.0
        s_next = g_j.exponential(1.0 / atom_rate) if atom_rate > 0.0 else np.inf
        j = 0
        while j < n_out:
            target = out_t[j]
            if t >= target:
                out_vals[p, j] = x
                j += 1
                continue
            step = h
            if t + step >= target * (1.0 - 1e-13):
                step = target - t
            t_end = target if step == target - t else t + step
            nb = g_b.standard_normal()
            counters[0] += 1
            noise = sig * math.sqrt(min(x, m) * step) * nb if x > 0.0 else 0.0
            cur = t
            while True:
                seg_end = s_next if s_next <= t_end else t_end
                bx = min(x, m) / max(x, eps) if x > 0.0 else 0.0
                x = x + (psi1 - gap * bx) * (seg_end - cur) + noise
                noise = 0.0
                if x < 0.0:
                    x = 0.0
                if x >= m and tau == np.inf:
                    tau = seg_end
                cur = seg_end
                if s_next > t_end:
                    break
                # atom at s_next: (r, mark) drawn whatever the state
                r = g_j.random() / eps
                is_kill = g_j.random() * (lam_tot + q) < q
                u = 0.0
                if not is_kill:
                    u = _draw_jump(cum, kinds, p1, p2, p3, g_j)
                counters[1] += 1
                if r * x <= 1.0 and x > 0.0:
                    if is_kill:
                        x = x - min(x, m)
                        counters[3] += 1
                    else:
                        x = x + min(x, m) * math.expm1(u * inv_a)
                        counters[2] += 1
                    if x < 0.0:
                        x = 0.0
                    if x >= m and tau == np.inf:
                        tau = cur
                s_next = s_next + g_j.exponential(1.0 / atom_rate)
            t = t_end
        out_tau[p] = tau

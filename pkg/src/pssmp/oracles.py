"""Closed-form references: squared Bessel laws and deterministic descent."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class BesqSpec:
    delta: float
    z0: float

    def __post_init__(self):
        if not (self.delta >= 0 and self.z0 >= 0):
            raise DomainError("squared Bessel needs delta >= 0 and z0 >= 0")


def besq_mean(spec: BesqSpec, t: float) -> float:
    if not t >= 0:
        raise DomainError("t must be >= 0")
    return spec.z0 + spec.delta * t


def besq_laplace(spec: BesqSpec, t: float, lam: float) -> float:
    """E exp(-lam Z_t) for the squared Bessel process reflected at zero."""
    if not (t > 0 and lam >= 0):
        raise DomainError("need t > 0 and lam >= 0")
    k = 1.0 + 2.0 * lam * t
    return k ** (-0.5 * spec.delta) * math.exp(-lam * spec.z0 / k)


def besq_sampler(spec: BesqSpec, t: float, rng, size=None):
    """Exact draw(s) of Z_t as a Poisson mixture of Gamma laws."""
    if not t > 0:
        raise DomainError("t must be > 0")
    n = rng.poisson(spec.z0 / (2.0 * t), size)
    shape = 0.5 * spec.delta + n
    g = np.where(shape > 0, rng.standard_gamma(np.maximum(shape, 1e-300)), 0.0)
    out = 2.0 * t * g
    return float(out) if size is None else out


def besq_absorbed_sampler(spec: BesqSpec, t: float, rng, size=None):
    """Exact draw(s) of Z_t stopped at its first zero.

    For delta < 2 write nu = 1 - delta/2.  Zero has not been reached by t with
    probability P(Gamma(nu) <= z0/(2t)); given the Gamma draw g below that
    level, the surviving value is 2t * Gamma(1 + Poisson(z0/(2t) - g)).
    For delta >= 2 zero is never reached and the reflected law applies.
    """
    if not t > 0:
        raise DomainError("t must be > 0")
    if spec.delta >= 2:
        return besq_sampler(spec, t, rng, size)
    nu = 1.0 - 0.5 * spec.delta
    y = spec.z0 / (2.0 * t)
    g = rng.standard_gamma(nu, size)
    alive = g <= y
    k = rng.poisson(np.where(alive, y - g, 0.0))
    out = np.where(alive, 2.0 * t * rng.standard_gamma(k + 1.0), 0.0)
    return float(out) if size is None else out


def besq_absorption_probability(spec: BesqSpec, t: float) -> float:
    """P(T_0 <= t) from the Gamma representation above."""
    from scipy.special import gammaincc
    if spec.delta >= 2 or spec.z0 == 0:
        return 0.0 if spec.z0 > 0 or spec.delta >= 2 else 1.0
    return float(gammaincc(1.0 - 0.5 * spec.delta, spec.z0 / (2.0 * t)))


def deterministic_descent(z: float, t: float) -> float:
    """max(z - t, 0): the image of xi_s = -s with index one."""
    return max(z - t, 0.0)

"""Killed spectrally negative Levy processes.

A process is described by a :class:`LevyTriplet` ``(gamma, sigma, jumps, q, a)``
where the Levy-Ito drift ``gamma`` compensates only the jumps of size at most
one.  The Levy measure is a finite list of compound-Poisson components plus an
optional power-law small-jump density on ``[-1, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import jsonschema
import numpy as np
from scipy import integrate, optimize

from .errors import ConfigError, DomainError, NumericalError

QUAD_EPSABS = 1e-12
ROOT_SCAN_POINTS = 64

# Mark-law codes understood by the compiled kernels.
KIND_POINT = 0
KIND_EXP = 1
KIND_UNIFORM = 2
KIND_POWER = 3


def _quad(g, lo, hi, points=None):
    val, _ = integrate.quad(g, lo, hi, epsabs=QUAD_EPSABS, epsrel=1e-12,
                            limit=200, points=points)
    return val


def phi2(x):
    """(expm1(x) - x) / x**2, accurate near zero."""
    if abs(x) < 1e-3:
        return 0.5 + x / 6.0 + x * x / 24.0 + x ** 3 / 120.0
    return (math.expm1(x) - x) / (x * x)


# ---------------------------------------------------------------- mark laws

@dataclass(frozen=True)
class PointMass:
    """All jumps equal ``u0 < 0``."""

    u0: float

    def __post_init__(self):
        if not (self.u0 < 0 and math.isfinite(self.u0)):
            raise DomainError(f"point mass needs u0 < 0, got {self.u0}")

    def sample(self, rng, size):
        return np.full(size, self.u0)

    def expect(self, g):
        return g(self.u0)

    def mean(self):
        return self.u0

    def mean_below(self, level):
        return self.u0 if self.u0 < level else 0.0

    def tail(self, v):
        """P(|U| >= v)."""
        return 1.0 if -self.u0 >= v else 0.0

    def truncated(self, v):
        return self if -self.u0 >= v else None

    def encode(self):
        return KIND_POINT, self.u0, 0.0, 0.0

    def to_json(self):
        return {"law": "point", "params": {"u0": self.u0}}


@dataclass(frozen=True)
class NegExponential:
    """Density ``eta * exp(eta * (u + offset))`` on ``u < -offset``."""

    eta: float
    offset: float = 0.0

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise DomainError(f"exponential law needs eta > 0, got {self.eta}")
        if not self.offset >= 0:
            raise DomainError(f"exponential law needs offset >= 0, got {self.offset}")

    def sample(self, rng, size):
        return -self.offset - rng.standard_exponential(size) / self.eta

    def expect(self, g):
        eta, c = self.eta, self.offset
        dens = lambda u: g(u) * eta * math.exp(eta * (u + c))
        top = -c
        if top > -1.0:
            return _quad(dens, -math.inf, -1.0) + _quad(dens, -1.0, top)
        return _quad(dens, -math.inf, top)

    def mean(self):
        return -self.offset - 1.0 / self.eta

    def mean_below(self, level):
        # E[U; U < level]
        eta, c = self.eta, self.offset
        if level >= -c:
            return self.mean()
        return math.exp(eta * (level + c)) * (level - 1.0 / eta)

    def tail(self, v):
        return 1.0 if v <= self.offset else math.exp(-self.eta * (v - self.offset))

    def truncated(self, v):
        return self if v <= self.offset else NegExponential(self.eta, v)

    def encode(self):
        return KIND_EXP, self.eta, self.offset, 0.0

    def to_json(self):
        params = {"eta": self.eta}
        if self.offset:
            params["offset"] = self.offset
        return {"law": "exp", "params": params}


@dataclass(frozen=True)
class Uniform:
    """Uniform law on ``[lo, hi]`` with ``hi < 0``."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and self.lo < self.hi < 0):
            raise DomainError(f"uniform law needs lo < hi < 0, got [{self.lo}, {self.hi}]")

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size)

    def expect(self, g):
        w = self.hi - self.lo
        pts = [-1.0] if self.lo < -1.0 < self.hi else None
        return _quad(g, self.lo, self.hi, points=pts) / w

    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def mean_below(self, level):
        top = min(self.hi, level)
        if top <= self.lo:
            return 0.0
        return 0.5 * (top * top - self.lo * self.lo) / (self.hi - self.lo)

    def tail(self, v):
        top = min(self.hi, -v)
        return max(0.0, (top - self.lo) / (self.hi - self.lo))

    def truncated(self, v):
        if -v <= self.lo:
            return None
        return Uniform(self.lo, min(self.hi, -v))

    def encode(self):
        return KIND_UNIFORM, self.lo, self.hi, 0.0

    def to_json(self):
        return {"law": "uniform", "params": {"lo": self.lo, "hi": self.hi}}


@dataclass(frozen=True)
class PowerLaw:
    """Jumps ``u = -v`` with density proportional to ``v**(-1-alpha)`` on ``[v_lo, v_hi]``."""

    alpha: float
    v_lo: float
    v_hi: float

    def _norm(self):
        a = self.alpha
        return (self.v_lo ** -a - self.v_hi ** -a) / a

    def sample(self, rng, size):
        a = self.alpha
        lo, hi = self.v_lo ** -a, self.v_hi ** -a
        uni = rng.random(size)
        return -((lo - uni * (lo - hi)) ** (-1.0 / a))

    def expect(self, g):
        a = self.alpha
        return _quad(lambda v: g(-v) * v ** (-1.0 - a), self.v_lo, self.v_hi) / self._norm()

    def mean(self):
        a = self.alpha
        if abs(a - 1.0) < 1e-14:
            m = math.log(self.v_hi / self.v_lo)
        else:
            m = (self.v_hi ** (1 - a) - self.v_lo ** (1 - a)) / (1 - a)
        return -m / self._norm()

    def mean_below(self, level):
        if level <= -self.v_hi:
            return 0.0
        if level > -self.v_lo:
            return self.mean()
        a = self.alpha
        return -_quad(lambda v: v ** -a, -level, self.v_hi) / self._norm()

    def tail(self, v):
        if v <= self.v_lo:
            return 1.0
        if v > self.v_hi:
            return 0.0
        return PowerLaw(self.alpha, v, self.v_hi)._norm() / self._norm()

    def truncated(self, v):
        if v <= self.v_lo:
            return self
        if v > self.v_hi:
            return None
        return PowerLaw(self.alpha, v, self.v_hi)

    def encode(self):
        return KIND_POWER, self.alpha, self.v_lo, self.v_hi


@dataclass(frozen=True)
class SmallJumps:
    """Levy density ``c * |u|**(-1-alpha)`` on ``[-1, 0)``, simulated above ``eps``."""

    c: float
    alpha: float
    eps: float

    def __post_init__(self):
        if not self.c > 0:
            raise DomainError(f"small-jump density needs c > 0, got {self.c}")
        if not 0 < self.alpha < 2:
            raise DomainError(f"small-jump density needs 0 < alpha < 2, got {self.alpha}")
        if not 0 < self.eps < 1:
            raise DomainError(f"small-jump truncation needs 0 < eps < 1, got {self.eps}")

    def rate_above(self, v):
        a = self.alpha
        return self.c * (v ** -a - 1.0) / a if v < 1 else 0.0

    def integrate(self, g):
        """Integral of ``g`` against the full density on [-1, 0)."""
        a = self.alpha
        return self.c * _quad(lambda v: g(-v) * v ** (-1.0 - a), 0.0, 1.0)

    def simulated(self, v=None):
        """(rate, law) of the compound-Poisson part with |u| >= v (default eps)."""
        v = self.eps if v is None else v
        if v >= 1:
            return None
        return self.rate_above(v), PowerLaw(self.alpha, v, 1.0)

    def to_json(self):
        return {"density": "power", "c": self.c, "alpha": self.alpha, "eps": self.eps}


@dataclass(frozen=True)
class JumpSpec:
    """Levy measure as ``((rate, law), ...)`` plus an optional small-jump density."""

    components: tuple = ()
    small_jump: SmallJumps | None = None

    def __post_init__(self):
        comps = tuple((float(r), law) for r, law in self.components)
        for r, _ in comps:
            if not (r > 0 and math.isfinite(r)):
                raise DomainError(f"component rate must be positive and finite, got {r}")
        object.__setattr__(self, "components", comps)

    @property
    def total_finite_rate(self):
        return sum(r for r, _ in self.components)

    def integrate(self, g):
        total = sum(r * law.expect(g) for r, law in self.components)
        if self.small_jump is not None:
            total += self.small_jump.integrate(g)
        return total

    def mean_below(self, level=-1.0):
        """Integral of u over {u < level}; the small-jump part lives on [-1, 0)."""
        return sum(r * law.mean_below(level) for r, law in self.components)

    def simulated(self):
        """Compound-Poisson components actually drawn by the simulators."""
        out = list(self.components)
        if self.small_jump is not None:
            out.append(self.small_jump.simulated())
        return out

    def truncated(self, v):
        """Components restricted to |u| >= v, with rates rescaled."""
        out = []
        for r, law in self.components:
            sub = law.truncated(v)
            if sub is not None:
                out.append((r * law.tail(v), sub))
        if self.small_jump is not None:
            sub = self.small_jump.simulated(v)
            if sub is not None and sub[0] > 0:
                out.append(sub)
        return out

    def is_empty(self):
        return not self.components and self.small_jump is None


def encode_components(components):
    """Arrays ``(rates, kinds, p1, p2, p3)`` for the compiled kernels."""
    n = len(components)
    rates = np.zeros(n)
    kinds = np.zeros(n, dtype=np.int64)
    p = np.zeros((3, n))
    for i, (r, law) in enumerate(components):
        rates[i] = r
        kind, a, b, c = law.encode()
        kinds[i] = kind
        p[:, i] = a, b, c
    return rates, kinds, p[0].copy(), p[1].copy(), p[2].copy()


# ---------------------------------------------------------------- triplet

TRIPLET_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["gamma", "sigma", "q", "a", "jumps"],
    "properties": {
        "gamma": {"type": "number"},
        "sigma": {"type": "number", "minimum": 0},
        "q": {"type": "number", "minimum": 0},
        "a": {"type": "number", "exclusiveMinimum": 0},
        "jumps": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["rate", "law", "params"],
                "properties": {
                    "rate": {"type": "number", "exclusiveMinimum": 0},
                    "law": {"enum": ["point", "exp", "uniform"]},
                    "params": {"type": "object"},
                },
                "allOf": [
                    {"if": {"properties": {"law": {"const": "point"}}},
                     "then": {"properties": {"params": {
                         "additionalProperties": False, "required": ["u0"],
                         "properties": {"u0": {"type": "number", "exclusiveMaximum": 0}}}}}},
                    {"if": {"properties": {"law": {"const": "exp"}}},
                     "then": {"properties": {"params": {
                         "additionalProperties": False, "required": ["eta"],
                         "properties": {"eta": {"type": "number", "exclusiveMinimum": 0},
                                        "offset": {"type": "number", "minimum": 0}}}}}},
                    {"if": {"properties": {"law": {"const": "uniform"}}},
                     "then": {"properties": {"params": {
                         "additionalProperties": False, "required": ["lo", "hi"],
                         "properties": {"lo": {"type": "number"},
                                        "hi": {"type": "number", "exclusiveMaximum": 0}}}}}},
                ],
            },
        },
        "small_jump": {
            "oneOf": [
                {"type": "null"},
                {"type": "object",
                 "additionalProperties": False,
                 "required": ["density", "c", "alpha", "eps"],
                 "properties": {
                     "density": {"const": "power"},
                     "c": {"type": "number", "exclusiveMinimum": 0},
                     "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
                     "eps": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                 }},
            ],
        },
    },
}

_LAWS = {
    "point": lambda p: PointMass(p["u0"]),
    "exp": lambda p: NegExponential(p["eta"], p.get("offset", 0.0)),
    "uniform": lambda p: Uniform(p["lo"], p["hi"]),
}


@dataclass(frozen=True)
class LevyTriplet:
    """Characteristics of a killed spectrally negative Levy process plus index ``a``."""

    gamma: float
    sigma: float
    jumps: JumpSpec = field(default_factory=JumpSpec)
    kill_rate: float = 0.0
    index_a: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "sigma", "kill_rate", "index_a"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if self.sigma < 0:
            raise DomainError(f"sigma must be >= 0, got {self.sigma}")
        if self.kill_rate < 0:
            raise DomainError(f"kill rate must be >= 0, got {self.kill_rate}")
        if self.index_a <= 0:
            raise DomainError(f"index a must be > 0, got {self.index_a}")

    @property
    def q(self):
        return self.kill_rate

    @property
    def a(self):
        return self.index_a

    def to_dict(self):
        return {
            "gamma": self.gamma,
            "sigma": self.sigma,
            "q": self.kill_rate,
            "a": self.index_a,
            "jumps": [dict(rate=r, **law.to_json()) for r, law in self.jumps.components],
            "small_jump": None if self.jumps.small_jump is None else self.jumps.small_jump.to_json(),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            jsonschema.validate(data, TRIPLET_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<triplet>"
            raise ConfigError(f"invalid triplet at {where}: {exc.message}") from exc
        try:
            comps = tuple((j["rate"], _LAWS[j["law"]](j["params"])) for j in data["jumps"])
            sj = data.get("small_jump")
            small = None if sj is None else SmallJumps(sj["c"], sj["alpha"], sj["eps"])
            return cls(gamma=float(data["gamma"]), sigma=float(data["sigma"]),
                       jumps=JumpSpec(comps, small), kill_rate=float(data["q"]),
                       index_a=float(data["a"]))
        except DomainError as exc:
            raise ConfigError(f"invalid triplet: {exc}") from exc


def bessel_triplet(delta, a=1.0):
    """Triplet whose Lamperti image is the squared Bessel process of dimension ``delta``."""
    return LevyTriplet(gamma=delta - 2.0, sigma=2.0, index_a=a)


class Trichotomy(IntEnum):
    CASE1 = 1  # never hits zero
    CASE2 = 2  # hits zero continuously
    CASE3 = 3  # hits zero by a jump


# ---------------------------------------------------------------- analytics

def _levy_khintchine_integrand(lam):
    def g(u):
        x = lam * u
        if abs(u) <= 1.0:
            return x * x * phi2(x)
        return math.expm1(x)
    return g


def laplace_exponent(triplet: LevyTriplet, lam: float) -> float:
    """log E[exp(lam * xi_1); zeta > 1] for ``lam >= 0``."""
    if not lam >= 0:
        raise DomainError(f"Laplace exponent needs lambda >= 0, got {lam}")
    lam = float(lam)
    val = triplet.gamma * lam + 0.5 * triplet.sigma ** 2 * lam * lam
    if lam > 0 and not triplet.jumps.is_empty():
        val += triplet.jumps.integrate(_levy_khintchine_integrand(lam))
    return val - triplet.kill_rate


def drift_coefficient(triplet: LevyTriplet) -> float:
    """Constant drift of the index-one SDE: the killed exponent at ``1/a``."""
    return laplace_exponent(triplet, 1.0 / triplet.index_a)


def mean(triplet: LevyTriplet) -> float:
    """E[xi_1] of the unkilled process, i.e. the right derivative of psi at 0."""
    return triplet.gamma + triplet.jumps.mean_below(-1.0)


def cramer_root(triplet: LevyTriplet):
    """The unique ``theta`` in ``(0, 1/a)`` with ``psi(theta) = 0``, or ``None``."""
    top = 1.0 / triplet.index_a
    psi = lambda x: laplace_exponent(triplet, x)
    grid = np.linspace(0.0, top, ROOT_SCAN_POINTS + 1)[1:]
    vals = np.array([psi(x) for x in grid])
    if triplet.kill_rate == 0 and mean(triplet) < 0 and vals[0] > 0:
        # psi(0) = 0 with negative slope: the dip sits left of the first scan point.
        x = grid[0]
        for _ in range(200):
            x *= 0.5
            if psi(x) < 0:
                grid = np.concatenate(([x], grid))
                vals = np.concatenate(([psi(x)], vals))
                break
    lo = None
    for i in range(len(grid) - 1):
        if vals[i] < 0 < vals[i + 1]:
            lo = i
            break
        if vals[i + 1] == 0.0 and vals[i] < 0 and i + 1 < len(grid) - 1:
            return float(grid[i + 1])
    if lo is None:
        return None
    try:
        root, res = optimize.brentq(psi, grid[lo], grid[lo + 1], xtol=1e-14,
                                    rtol=8.9e-16, maxiter=500, full_output=True)
    except (RuntimeError, ValueError) as exc:
        raise NumericalError("Cramer root bracketing failed",
                             bracket=(grid[lo], grid[lo + 1])) from exc
    if not res.converged:
        raise NumericalError("Cramer root did not converge", iterations=res.iterations,
                             bracket=(grid[lo], grid[lo + 1]))
    return float(root)


def classify_trichotomy(triplet: LevyTriplet) -> Trichotomy:
    if triplet.kill_rate > 0:
        return Trichotomy.CASE3
    if mean(triplet) < 0:
        return Trichotomy.CASE2
    return Trichotomy.CASE1


def compensated_drift(triplet: LevyTriplet) -> float:
    """Drift of the continuous part once the simulated small jumps are uncompensated."""
    drift = triplet.gamma
    for r, law in triplet.jumps.simulated():
        drift -= r * (law.mean() - law.mean_below(-1.0))
    return drift


# ---------------------------------------------------------------- simulation

@dataclass
class LevyPath:
    times: np.ndarray
    values: np.ndarray
    jump_marks: list
    kill_time: float = math.inf


def make_grid(horizon, step):
    """Uniform grid on [0, horizon]; the last cell may be shorter."""
    if not (horizon > 0 and step > 0):
        raise DomainError("horizon and step must be positive")
    if step > horizon:
        raise DomainError("step must not exceed horizon")
    n = int(math.ceil(horizon / step - 1e-9))
    times = np.arange(n + 1) * step
    times[-1] = horizon
    return times


def simulate_levy_path(triplet: LevyTriplet, horizon: float, step: float, rng) -> LevyPath:
    """Grid path of xi with exact compound-Poisson jumps and an exponential lifetime."""
    times = make_grid(horizon, step)
    dt = np.diff(times)
    n = len(dt)
    incr = compensated_drift(triplet) * dt
    if triplet.sigma > 0:
        incr = incr + triplet.sigma * np.sqrt(dt) * rng.standard_normal(n)
    marks = []
    for rate, law in triplet.jumps.simulated():
        counts = rng.poisson(rate * dt)
        total = int(counts.sum())
        if total == 0:
            continue
        u = law.sample(rng, total)
        cells = np.repeat(np.arange(n), counts)
        np.add.at(incr, cells, u)
        marks.extend(zip(times[cells + 1].tolist(), u.tolist()))
    values = np.concatenate(([0.0], np.cumsum(incr)))
    kill = rng.exponential(1.0 / triplet.kill_rate) if triplet.kill_rate > 0 else math.inf
    if math.isfinite(kill):
        dead = times >= kill
        if dead.any():
            k = int(np.argmax(dead))
            values[k:] = values[k - 1]
            marks = [m for m in marks if m[0] < kill]
    marks.sort()
    return LevyPath(times=times, values=values, jump_marks=marks, kill_time=kill)


def sample_marginal(triplet: LevyTriplet, t: float, n: int, rng):
    """``n`` draws of ``xi_t`` and of the survival indicator ``zeta > t``."""
    x = compensated_drift(triplet) * t + triplet.sigma * math.sqrt(t) * rng.standard_normal(n)
    for rate, law in triplet.jumps.simulated():
        counts = rng.poisson(rate * t, n)
        total = int(counts.sum())
        if total:
            np.add.at(x, np.repeat(np.arange(n), counts), law.sample(rng, total))
    if triplet.kill_rate > 0:
        alive = rng.random(n) < math.exp(-triplet.kill_rate * t)
    else:
        alive = np.ones(n, dtype=bool)
    return x, alive

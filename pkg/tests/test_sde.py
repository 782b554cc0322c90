import math

import numpy as np
import pytest

from pssmp.errors import (ContractError, DomainError, DriverError, EscalationLimitError,
                          PreconditionError, SolverError)
from pssmp.lamperti import Path
from pssmp.levy import (JumpSpec, LevyTriplet, NegExponential, PointMass, bessel_triplet,
                        drift_coefficient)
from pssmp.sde import (Drivers, SolverParams, cap_escalation, generator_apply,
                       pathwise_scaling_check, reduce_index, scale_drivers, simulate_sde,
                       simulate_truncated, simulate_truncated_escalating, solve_sde,
                       solve_truncated)
from pssmp.stats import ks_two_sample

LN2 = math.log(2.0)


def point_jumps(u=-LN2, rate=1.0, gamma=0.0, sigma=0.0, q=0.0, a=1.0):
    return LevyTriplet(gamma, sigma, JumpSpec(((rate, PointMass(u)),)), q, a)


# ---------------------------------------------------------------- parameters and drivers

@pytest.mark.parametrize("kw", [dict(h_min=0.0), dict(h_min=1.0, h_max=0.1), dict(z_floor=-1.0),
                                dict(state_cap_m=0.0), dict(trunc_eps=2.0, state_cap_m=1.0)])
def test_params_validation(kw):
    with pytest.raises(DomainError):
        SolverParams(**kw)


@pytest.mark.parametrize("atoms_n,atoms_m", [
    ([(0.2, 1.0, -0.1), (0.1, 1.0, -0.1)], []),
    ([(0.1, 0.0, -0.1)], []),
    ([(0.1, 1.0, 0.1)], []),
    ([], [(0.1, -1.0)]),
])
def test_driver_validation(atoms_n, atoms_m):
    with pytest.raises(DriverError):
        Drivers.explicit(0.1, None, atoms_n, atoms_m)


def test_driver_csv_round_trip(tmp_path):
    d = Drivers.explicit(0.1, None, [(0.1, 0.5, -0.2), (0.7, 2.0, -1.5)], [(0.3, 0.25)])
    d.to_csv(tmp_path / "drivers.csv")
    lines = (tmp_path / "drivers.csv").read_text().splitlines()
    assert lines[0] == "kind,s,r,u" and lines[2] == "M,0.3,0.25,"
    assert Drivers.from_csv(tmp_path / "drivers.csv", 0.1) == d


def test_driver_csv_bad_header(tmp_path):
    (tmp_path / "d.csv").write_text("s,r,u\n")
    with pytest.raises(DriverError):
        Drivers.from_csv(tmp_path / "d.csv", 0.1)


def test_explicit_grid_errors():
    tr = LevyTriplet(1.0, 0.0)
    p = SolverParams()
    with pytest.raises(DriverError):
        solve_sde(tr, 1.0, 1.0, p, Drivers.explicit(0.3))
    with pytest.raises(DriverError):
        solve_sde(tr, 1.0, 1.0, p, Drivers.explicit(0.1, [0.0] * 9))
    with pytest.raises(DriverError):
        solve_sde(tr, 1.0, 1.0, p, Drivers.explicit(0.1, None, [(1.5, 1.0, -0.1)]))


def test_reduce_index():
    red = reduce_index(point_jumps(rate=2.0, q=0.5, a=2.0, sigma=1.0))
    assert red.sigma == 0.5 and red.inv_a == 0.5
    assert red.jump_mean == pytest.approx(2.0 * math.expm1(-LN2 / 2))
    assert red.beff == pytest.approx(red.b0 + 0.5 - red.jump_mean)


# ---------------------------------------------------------------- explicit-driver solver

def test_descent_explicit():
    path = solve_sde(LevyTriplet(-1.0, 0.0), 2.0, 3.0, SolverParams(), Drivers.explicit(0.01))
    np.testing.assert_allclose(path.values, np.maximum(2.0 - path.times, 0.0), atol=1e-12)
    assert path.absorption_time == pytest.approx(2.0, abs=1e-9)


def test_descent_index_two():
    # psi(1/2) = -1/2, so X = Z^(1/2) falls at rate 1/2
    path = solve_sde(LevyTriplet(-1.0, 0.0, index_a=2.0), 4.0, 2.0, SolverParams(),
                     Drivers.explicit(0.01))
    np.testing.assert_allclose(path.values, (2.0 - 0.5 * path.times) ** 2, atol=1e-12)


def test_positive_drift_from_zero_is_linear():
    path = solve_sde(LevyTriplet(1.5, 0.0), 0.0, 2.0, SolverParams(), Drivers.explicit(0.1))
    np.testing.assert_allclose(path.values, 1.5 * path.times, atol=1e-12)
    batch = simulate_sde(LevyTriplet(1.5, 0.0), 0.0, [0.5, 2.0], 3, SolverParams(), seed=1)
    np.testing.assert_allclose(batch.values, [[0.75, 3.0]] * 3, rtol=1e-12)


def test_euler_step_with_explicit_noise():
    tr = bessel_triplet(1.0)
    path = solve_sde(tr, 1.0, 0.02, SolverParams(), Drivers.explicit(0.01, [0.1, -0.2]))
    x1 = 1.0 + 0.01 + 2.0 * 0.1
    x2 = x1 + 0.01 + 2.0 * math.sqrt(x1) * -0.2
    np.testing.assert_allclose(path.values, [1.0, x1, x2], rtol=1e-14)


def test_thinning_and_jump_factor():
    tr = point_jumps(gamma=5.0)
    b = reduce_index(tr).beff
    d = Drivers.explicit(0.5, None, [(0.5, 0.2, -LN2), (1.0, 0.9, -LN2)])
    path = solve_sde(tr, 2.0, 1.0, SolverParams(), d)
    x_pre = 2.0 + 0.5 * b
    assert 0.2 * x_pre <= 1.0
    assert path.values[1] == pytest.approx(x_pre / 2, rel=1e-12)
    x_end = x_pre / 2 + 0.5 * b
    assert 0.9 * x_end > 1.0
    assert path.values[2] == pytest.approx(x_end, rel=1e-12)


def test_atom_fires_only_when_r_z_at_most_one():
    tr = point_jumps(gamma=0.0)
    b = reduce_index(tr).beff
    z, s = 2.0, 1e-6
    pre = z + b * s
    keep = solve_sde(tr, z, s, SolverParams(), Drivers.explicit(s, None, [(s, 1.0 / pre * 1.01, -LN2)]))
    hit = solve_sde(tr, z, s, SolverParams(), Drivers.explicit(s, None, [(s, 1.0 / pre * 0.99, -LN2)]))
    assert keep.values[-1] == pytest.approx(pre, rel=1e-12)
    assert hit.values[-1] == pytest.approx(pre / 2, rel=1e-12)
    assert hit.jump_marks == [(s, pytest.approx(pre), pytest.approx(pre / 2))]


def test_kill_atom_sends_to_zero():
    tr = point_jumps(gamma=3.0, q=0.5)
    # binary-exact grid so the kill lands on a grid point
    d = Drivers.explicit(0.125, None, [], [(0.25, 0.1)])
    stopped = solve_sde(tr, 1.0, 1.0, SolverParams(), d, absorb=True)
    assert stopped.absorption_time == 0.25
    assert np.all(stopped.values[stopped.times >= 0.25] == 0)
    assert stopped.jump_marks[-1][2] == 0.0
    # with positive drift the unstopped path leaves zero through the drift alone
    free = solve_sde(tr, 1.0, 1.0, SolverParams(), d)
    assert free.absorption_time == math.inf
    assert free.info["first_zero_time"] == 0.25
    assert free.values[2] == 0.0
    assert free.values[3] == pytest.approx(0.125 * reduce_index(tr).b0, rel=1e-12)


def test_atom_at_zero_changes_nothing():
    tr = point_jumps(gamma=2.0, u=-5.0, sigma=1.0)
    b0 = reduce_index(tr).b0
    # the state is exactly zero when the atom at s = 0.1 arrives
    d = Drivers.explicit(0.1, [-2.0, 0.0], [(0.1, 1e-3, -5.0)])
    path = solve_sde(tr, 0.5, 0.2, SolverParams(), d)
    assert path.values[1] == 0.0
    assert path.jump_marks == []
    assert path.values[2] == pytest.approx(0.1 * b0, rel=1e-12)


def test_prefix_stable_under_cap():
    tr = point_jumps(gamma=2.0, sigma=0.5)
    rng = np.random.default_rng(5)
    inc = rng.normal(0, 0.1, 200)
    d = Drivers.explicit(0.01, inc, [(0.5, 0.2, -0.3), (1.2, 0.1, -0.4)])
    small = solve_truncated(tr, 1.0, 2.0, SolverParams(state_cap_m=3.0, trunc_eps=1e-3), d)
    big = solve_truncated(tr, 1.0, 2.0, SolverParams(state_cap_m=6.0, trunc_eps=1e-3), d)
    tau = small.info["tau_m"]
    assert tau < 2.0
    before = small.times < tau
    np.testing.assert_array_equal(small.values[before], big.values[before])


def test_truncated_jump_arithmetic():
    tr = point_jumps()
    p = SolverParams(state_cap_m=10.0, trunc_eps=1e-3)
    s = 1e-9
    one = solve_truncated(tr, 2.0, s, p, Drivers.explicit(s, None, [(s, 0.4, -LN2)]))
    assert one.values[-1] == pytest.approx(1.0, abs=1e-6)
    capped = solve_truncated(tr, 20.0, s, p, Drivers.explicit(s, None, [(s, 0.01, -LN2)]))
    assert capped.values[-1] == pytest.approx(15.0, abs=1e-6)


def test_truncated_ignores_atoms_outside_window():
    tr = point_jumps()
    p = SolverParams(state_cap_m=10.0, trunc_eps=0.1)
    s = 1e-9
    big_r = solve_truncated(tr, 0.5, s, p, Drivers.explicit(s, None, [(s, 11.0, -LN2)]))
    tiny_u = solve_truncated(tr, 0.5, s, p, Drivers.explicit(s, None, [(s, 0.4, -0.05)]))
    assert big_r.values[-1] == pytest.approx(0.5, abs=1e-6)
    assert tiny_u.values[-1] == pytest.approx(0.5, abs=1e-6)


def test_cap_escalation():
    descent = LevyTriplet(-1.0, 0.0)
    p = SolverParams(escalate=True, state_cap_m=4.0)
    path = solve_truncated(descent, 2.0, 1.0, p, Drivers.explicit(0.01))
    assert path.info["escalations"] == 0
    grow = solve_truncated(LevyTriplet(3.0, 0.0), 1.0, 2.0, SolverParams(escalate=True, state_cap_m=2.0),
                           Drivers.explicit(0.01))
    assert grow.info["escalations"] == 2 and grow.info["m"] == 8.0
    np.testing.assert_allclose(grow.values, 1.0 + 3.0 * grow.times, rtol=1e-12)
    with pytest.raises(ContractError):
        cap_escalation(lambda *a: None, 1.0, 1.0, SolverParams())
    always = lambda z, h, prm: Path(np.zeros(1), np.zeros(1), info={"tau_m": 0.0})
    with pytest.raises(EscalationLimitError):
        cap_escalation(always, 1.0, 1.0, SolverParams(escalate=True))


def test_batch_escalation():
    p = SolverParams(h_max=1e-2, escalate=True, state_cap_m=2.5)
    b = simulate_truncated_escalating(LevyTriplet(3.0, 0.0), 1.0, [1.0], 4, p, seed=0)
    assert b.counters["escalations"] == 1
    np.testing.assert_allclose(b.values, 4.0, rtol=1e-12)


def test_truncated_batch_prefix_is_bitwise_stable():
    tr = LevyTriplet(1.0, 1.0, JumpSpec(((1.0, NegExponential(2.0)),)), 0.2)
    times = np.linspace(0, 2, 41)
    lo = simulate_truncated(tr, 1.0, times, 300, SolverParams(h_max=1e-2, state_cap_m=2.0), seed=4)
    hi = simulate_truncated(tr, 1.0, times, 300, SolverParams(h_max=1e-2, state_cap_m=4.0), seed=4)
    assert np.any(lo.tau_m < 2.0)
    for k in range(300):
        pre = times < lo.tau_m[k]
        np.testing.assert_array_equal(lo.values[k, pre], hi.values[k, pre])


# ---------------------------------------------------------------- scaling

def test_scaling_identity_and_descent():
    d = Drivers.explicit(0.01, np.random.default_rng(1).normal(0, 0.1, 100))
    rep = pathwise_scaling_check(bessel_triplet(1.0), 1.0, 1.0, d, 1.0, SolverParams())
    assert rep.max_abs_deviation == 0.0
    for c in (0.5, 2.0, 4.0):
        rep = pathwise_scaling_check(LevyTriplet(-1.0, 0.0), 3.0, c, Drivers.explicit(0.01), 1.0 / c * 2,
                                     SolverParams())
        assert rep.max_abs_deviation <= 1e-12


def test_scaling_one_atom():
    tr = point_jumps(gamma=1.0)
    d = Drivers.explicit(0.01, None, [(0.37, 0.3, -0.7)], [(1.5, 10.0)])
    rep = pathwise_scaling_check(tr, 2.0, 4.0, d, 0.5, SolverParams())
    assert rep.max_abs_deviation <= 1e-12


def test_scale_drivers():
    d = scale_drivers(Drivers.explicit(0.1, [0.2, 0.4], [(0.2, 1.0, -0.5)], [(0.1, 3.0)]), 4.0)
    assert d.step == 0.025 and d.brownian_increments == (0.1, 0.2)
    assert d.atoms_n == ((0.05, 4.0, -0.5),) and d.atoms_m == ((0.025, 12.0),)


def test_scaling_needs_explicit_drivers():
    with pytest.raises(ContractError):
        pathwise_scaling_check(bessel_triplet(1.0), 1.0, 2.0, Drivers.random(1), 1.0, SolverParams())


# ---------------------------------------------------------------- generator

def test_generator_examples():
    besq = bessel_triplet(1.0)
    zero = lambda z: 0.0
    assert generator_apply(besq, lambda z: 7.0, zero, zero, 1.3) == 0.0
    jumpy = LevyTriplet(0.0, 1.0, JumpSpec(((1.0, NegExponential(2.0)),)))
    for z in (0.5, 2.0):
        assert generator_apply(jumpy, lambda x: x, lambda x: 1.0, zero, z) == pytest.approx(
            drift_coefficient(jumpy), abs=1e-12)
    assert generator_apply(besq, lambda x: x * x, lambda x: 2 * x, lambda x: 2.0, 2.0) == pytest.approx(12.0)


def test_generator_square_with_jumps():
    # (1/z) int (z^2 e^{2u} - z^2 - 2 z^2 (e^u - 1)) = z E(e^U - 1)^2 = z / 6 for exp(2) marks
    tr = LevyTriplet(0.0, 1.0, JumpSpec(((1.0, NegExponential(2.0)),)))
    z = 1.7
    val = generator_apply(tr, lambda x: x * x, lambda x: 2 * x, lambda x: 2.0, z)
    assert val == pytest.approx(2 * z * drift_coefficient(tr) + z + z / 6, abs=1e-10)


def test_generator_preconditions():
    d = lambda z: 0.0
    with pytest.raises(PreconditionError):
        generator_apply(LevyTriplet(0.0, 1.0, kill_rate=0.1), d, d, d, 1.0)
    with pytest.raises(PreconditionError):
        generator_apply(LevyTriplet(0.0, 1.0, index_a=2.0), d, d, d, 1.0)
    with pytest.raises(DomainError):
        generator_apply(bessel_triplet(1.0), d, d, d, 0.0)


# ---------------------------------------------------------------- random batches

FAST = SolverParams(h_max=1e-2, h_min=1e-4, z_floor=1e-3)


def test_batch_reproducible_and_thread_invariant():
    tr = LevyTriplet(0.0, 1.0, JumpSpec(((1.0, NegExponential(2.0)),)), 0.3)
    times = np.array([0.25, 0.5])
    a = simulate_sde(tr, 1.0, times, 700, FAST, seed=3)
    b = simulate_sde(tr, 1.0, times, 700, FAST, seed=3, threads=2)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.events, b.events)
    assert a.counters == b.counters


def test_batch_nonnegative_downward_jumps_and_kills():
    tr = LevyTriplet(0.0, 1.0, JumpSpec(((1.0, NegExponential(2.0)),)), 0.3)
    b = simulate_sde(tr, 1.0, np.linspace(0, 1, 11), 500, FAST, seed=9)
    assert np.all(b.values >= 0)
    table = b.event_table()
    jumps = [e for e in table if e["kind"] == "jump"]
    kills = [e for e in table if e["kind"] == "kill"]
    assert jumps and kills
    assert all(e["post"] <= e["pre"] for e in jumps)
    assert all(e["post"] == 0.0 for e in kills)


def test_bessel_mean():
    b = simulate_sde(bessel_triplet(1.0), 1.0, [1.0], 10_000, SolverParams(h_max=2e-3, h_min=2e-5, z_floor=1e-2),
                     seed=2)
    x = b.values[:, 0]
    assert abs(x.mean() - 2.0) < 3 * x.std(ddof=1) / math.sqrt(x.size)


def test_batch_preconditions():
    with pytest.raises(PreconditionError):
        simulate_sde(LevyTriplet(-1.0, 1.0), 0.0, [1.0], 10, FAST, seed=0)
    with pytest.raises(DomainError):
        simulate_sde(bessel_triplet(1.0), -1.0, [1.0], 10, FAST, seed=0)
    with pytest.raises(SolverError):
        simulate_sde(bessel_triplet(1.0), 1.0, [1.0], 2, replace_params(FAST, max_steps=10), seed=0)


def replace_params(p, **kw):
    from dataclasses import replace
    return replace(p, **kw)


def test_nonpositive_drift_is_absorbed():
    b = simulate_sde(LevyTriplet(-1.0, 0.5), 1.0, np.linspace(0, 4, 9), 300, FAST, seed=1)
    assert b.absorbing
    for row, t0 in zip(b.values, b.t0):
        assert np.all(row[b.times >= t0] == 0)


def test_random_solve_sde_wraps_batch():
    path = solve_sde(bessel_triplet(1.0), 1.0, 0.5, FAST, Drivers.random(4))
    again = solve_sde(bessel_triplet(1.0), 1.0, 0.5, FAST, Drivers.random(4))
    np.testing.assert_array_equal(path.values, again.values)
    assert path.times[-1] == 0.5 and path.values[0] == 1.0


def test_truncated_without_atoms_matches_sde():
    tr = bessel_triplet(3.0)
    p = SolverParams(h_max=1e-3, h_min=1e-3, z_floor=1e-3)
    a = simulate_truncated(tr, 1.0, [1.0], 10_000, p, seed=21).values[:, 0]
    b = simulate_sde(tr, 1.0, [1.0], 10_000, p, seed=22).values[:, 0]
    assert ks_two_sample(a, b, 0.01).passed

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from kpocat.pump import LinearRamp, LpfCascade, ShortcutMode, counterdiabatic, write_schedule_csv


def run(cascade, dt, t_end):
    ts, ps = [0.0], [cascade.sample().p]
    for _ in range(int(round(t_end / dt))):
        cascade.advance(dt)
        ts.append(cascade.t)
        ps.append(cascade.sample().p)
    return np.array(ts), np.array(ps)


def test_first_order_step_response():
    # kappa_ex = 0 makes the drive a constant K * A_p
    c = LpfCascade(K=1.0, A_p=1.5, kappa_ex=0.0, B=0.7, order=1)
    t, p = run(c, 0.01, 10.0)
    assert np.max(np.abs(p - 1.5 * (1 - np.exp(-0.7 * t)))) < 1e-9


def test_fourth_order_starts_flat():
    c = LpfCascade(K=1.0, A_p=2.45, kappa_ex=0.2, B=0.5)
    s = c.sample()
    assert s.p == 0.0 and s.p_dot == 0.0
    # p ~ c t^4 near t = 0, so the first three derivatives vanish there
    h = 1e-2
    p1 = LpfCascade(1.0, 2.45, 0.2, 0.5).advance(h).sample().p
    p2 = LpfCascade(1.0, 2.45, 0.2, 0.5).advance(2 * h).sample().p
    assert p2 / p1 == pytest.approx(16.0, rel=0.02)


def test_matches_high_accuracy_oracle():
    K, A_p, kappa, B = 1.0, 2.45, 0.2, 0.5

    def rhs(t, y):
        inputs = np.concatenate([[K * A_p * math.exp(-kappa * t)], y[:-1]])
        return -B * (y - inputs)

    ref = solve_ivp(rhs, (0, 50), np.zeros(4), method="DOP853", rtol=1e-13, atol=1e-15,
                    dense_output=True)
    c = LpfCascade(K, A_p, kappa, B)
    t, p = run(c, 1e-2, 50.0)
    p_ref = ref.sol(t)[-1]
    assert np.max(np.abs(p - p_ref)) < 1e-6 * K
    i = int(np.argmax(p))
    assert p[i] == pytest.approx(np.max(p_ref), abs=1e-6)
    # peak time from the oracle within the sampling grid
    fine = np.linspace(t[i - 1], t[i + 1], 2001)
    t_peak = fine[np.argmax(ref.sol(fine)[-1])]
    assert abs(t[i] - t_peak) <= 1e-2


def test_tail_tracks_the_input_exponential():
    c = LpfCascade(1.0, 2.45, 0.2, 0.5)
    for _ in range(4000):
        c.advance(0.01)
    s = c.sample()
    assert s.p_dot / s.p == pytest.approx(-0.2, rel=0.01)


def test_eq12_value():
    assert counterdiabatic(1.0, 1.0, 1.0, "eq12") == pytest.approx(math.tanh(1.0))
    assert counterdiabatic(1.0, 1.0, 1.0, "eq12") == pytest.approx(0.76159, abs=1e-5)


def test_eq12_small_p_limit():
    assert counterdiabatic(1e-9, 0.3, 2.0, ShortcutMode.EQ12) == pytest.approx(0.3 / 2.0, rel=1e-12)
    assert counterdiabatic(0.0, 0.3, 2.0, "eq12") == pytest.approx(0.15)
    # continuous across the series switch
    a = counterdiabatic(0.999e-6, 1.0, 1.0, "eq12")
    b = counterdiabatic(1.001e-6, 1.0, 1.0, "eq12")
    assert a == pytest.approx(b, rel=1e-9)


def test_ref15():
    assert counterdiabatic(2.0, 0.0, 1.0, "ref15") == 0.0
    p = 2.0
    expected = 0.5 * math.sqrt(1 - 2 * math.exp(-4)) / (math.sqrt(2) + 4)
    assert counterdiabatic(p, 0.5, 1.0, "ref15") == pytest.approx(expected)
    # imaginary square root below K ln 2 / 2: correction is off
    assert counterdiabatic(0.3, 1.0, 1.0, "ref15") == 0.0
    assert counterdiabatic(0.0, 1.0, 1.0, "ref15") == 0.0


def test_none_mode():
    assert counterdiabatic(1.0, 5.0, 1.0, "none") == 0.0
    with pytest.raises(ValueError):
        counterdiabatic(1.0, 1.0, 1.0, "bogus")


def test_stage_samples_share_rk4_states():
    c = LpfCascade(1.0, 2.45, 0.2, 0.5, stages=[0.1, 0.2, 0.3, 0.4])
    samples, y_next = c.stage_samples(0.1, "eq12")
    assert [s.t for s in samples] == [0.0, 0.05, 0.05, 0.1]
    assert samples[0].p == 0.4
    c.advance(0.1)
    assert np.array_equal(c.stages, y_next)
    assert samples[1].p_prime == pytest.approx(
        counterdiabatic(samples[1].p, samples[1].p_dot, 1.0, "eq12"))


def test_invalid_cascade():
    with pytest.raises(ValueError):
        LpfCascade(1.0, 1.0, 0.2, 0.5, order=0)
    with pytest.raises(ValueError):
        LpfCascade(1.0, 1.0, 0.2, 0.5).advance(0.0)


def test_linear_ramp():
    r = LinearRamp(K=1.0, p_final=2.0, duration=10.0)
    s = r.sample_at(5.0, "eq12")
    assert (s.p, s.p_dot) == (1.0, 0.2)
    assert s.p_prime == pytest.approx(0.2 * math.tanh(1.0))
    assert r.sample_at(12.0).p == 2.0 and r.sample_at(12.0).p_dot == 0.0
    assert r.sample_at(5.0).complex_amplitude == 1.0


def test_schedule_csv(tmp_path):
    r = LinearRamp()
    write_schedule_csv(tmp_path / "pump.csv", [r.sample_at(t) for t in (0.0, 1.0)])
    lines = (tmp_path / "pump.csv").read_text().splitlines()
    assert lines[0] == "t,p,p_dot,p_prime" and len(lines) == 3

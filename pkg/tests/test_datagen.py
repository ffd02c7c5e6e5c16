import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinode.datagen import (
    Dataset,
    RigConfig,
    Trajectory,
    dataset_stats,
    exact_dataset,
    excitation_signal,
    format_stats,
    generate_dataset,
    read_csv,
    sensor_model,
    simulate_rig,
    write_csv,
)
from pinode.dynamics import PhysicalParams, energy, pure_ode_rhs
from pinode.exceptions import DatasetError, InvalidArgument
from pinode.integrator import rollout

P = PhysicalParams()


def test_excitation_length_and_determinism():
    a = excitation_signal(480.0, 50.0, 1.0, seed=3)
    assert a.shape == (24000,)
    np.testing.assert_array_equal(a, excitation_signal(480.0, 50.0, 1.0, seed=3))
    assert not np.array_equal(a, excitation_signal(480.0, 50.0, 1.0, seed=4))


def test_excitation_zero_amplitude():
    assert not excitation_signal(10.0, 50.0, 0.0).any()


@given(st.floats(0.1, 5.0), st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_excitation_bounded(amplitude, seed):
    u = excitation_signal(20.0, 50.0, amplitude, seed)
    assert np.abs(u).max() <= amplitude


def test_excitation_holds_levels():
    u = excitation_signal(60.0, 50.0, 1.0, seed=0)
    # smoothing spans three samples, so most consecutive samples are equal
    assert np.mean(np.diff(u) == 0.0) > 0.7


def test_excitation_rejects_non_positive_duration():
    with pytest.raises(InvalidArgument):
        excitation_signal(0.0)


def test_rig_config_validation():
    with pytest.raises(InvalidArgument):
        RigConfig(noise_x=-1.0)
    with pytest.raises(InvalidArgument):
        RigConfig(inner_step=0.003)
    with pytest.raises(InvalidArgument):
        RigConfig(track_half_length=0.0)
    assert RigConfig().substeps == 10


def test_rig_config_dict_round_trip():
    cfg = RigConfig(mu_c_pos=0.07)
    assert RigConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidArgument):
        RigConfig.from_dict({"friction": 1.0})


def test_ideal_rig_matches_pure_model():
    cfg = RigConfig.ideal(P)
    u = excitation_signal(20.0, cfg.sample_rate, 1.0, seed=1)
    z0 = (0.0, math.pi - 0.2, 0.0, 0.0)
    truth = simulate_rig(cfg, u, z0)
    # same recorded controls through the baseline model at the same inner step
    h = cfg.inner_step
    fine_u = np.repeat(truth.u, cfg.substeps)
    ref = rollout(pure_ode_rhs(P), np.array(z0), fine_u, h)[:: cfg.substeps][: len(u)]
    assert np.max(np.abs(truth.states - ref)) < 1e-9


def test_rest_is_an_equilibrium():
    cfg = RigConfig.ideal(P, operator_kp=0.0, operator_kd=0.0)
    truth = simulate_rig(cfg, np.zeros(200), (0.0, math.pi, 0.0, 0.0))
    assert np.max(np.abs(truth.states - truth.states[0])) < 1e-12


def test_frictionless_rig_conserves_energy():
    cfg = RigConfig.ideal(P.frictionless(), operator_kp=0.0, operator_kd=0.0)
    truth = simulate_rig(cfg, np.zeros(500), (0.0, math.pi - 0.3, 0.0, 0.0))
    T, V = energy(P.frictionless(), tuple(truth.states.T))
    E = T + V
    assert np.max(np.abs(E - E[0])) < 1e-6


def test_rails_clamp_position():
    cfg = RigConfig(operator_kp=0.0, operator_kd=0.0, track_half_length=0.1)
    truth = simulate_rig(cfg, np.full(300, 2.0), (0.0, math.pi, 0.0, 0.0))
    assert np.abs(truth.states[:, 0]).max() <= 0.1


def test_centering_keeps_cart_near_middle():
    cfg = RigConfig()
    u = excitation_signal(120.0, 50.0, 1.0, seed=0)
    truth = simulate_rig(cfg, u, (0.0, math.pi, 0.0, 0.0))
    at_rail = np.isclose(np.abs(truth.states[:, 0]), cfg.track_half_length)
    assert at_rail.mean() < 0.01
    # the recorded control is the force actually commanded
    assert not np.array_equal(truth.u, u)


def make_truth(x, phi=None):
    n = len(x)
    phi = np.full(n, math.pi) if phi is None else phi
    states = np.column_stack([x, phi, np.zeros(n), np.zeros(n)])
    return Trajectory(np.arange(n) / 50.0, states, np.zeros(n))


def quiet(**kw):
    return RigConfig(noise_x=0.0, noise_phi=0.0, **kw)


def test_sensor_constant_truth_gives_zero_velocity():
    d = sensor_model(make_truth(np.full(10, 0.3)), quiet())
    assert not d.x_dot.any() and not d.phi_dot.any()


def test_sensor_ramp_velocity():
    d = sensor_model(make_truth(0.02 * np.arange(20)), quiet())
    np.testing.assert_allclose(d.x_dot[1:], 1.0, rtol=1e-12)
    assert d.x_dot[0] == 0.0


def test_sensor_velocity_noise_level():
    cfg = RigConfig(noise_x=0.002)
    d = sensor_model(make_truth(np.zeros(20000)), cfg, seed=1)
    assert np.std(d.x_dot[1:]) == pytest.approx(0.002 * math.sqrt(2) * 50, rel=0.1)


def test_sensor_wraps_angle_but_not_velocity():
    phi = np.linspace(6.0, 6.6, 31)
    d = sensor_model(make_truth(np.zeros(31), phi), quiet())
    assert d.phi.min() >= 0 and d.phi.max() < 2 * math.pi
    np.testing.assert_allclose(d.phi_dot[1:], 0.02 * 50, rtol=1e-9)


def test_generate_dataset_determinism_and_size():
    a = generate_dataset(RigConfig(), 20.0, seed=5)
    b = generate_dataset(RigConfig(), 20.0, seed=5)
    assert len(a) == 1000 and a == b
    assert a.provenance.startswith("synthetic rig")
    assert generate_dataset(RigConfig(), 20.0, seed=6) != a


def test_dataset_rejects_bad_timestamps():
    t = np.array([0.0, 0.04, 0.02, 0.06])
    with pytest.raises(DatasetError):
        Dataset(50.0, t, *np.zeros((5, 4)))


def test_transitions_are_contiguous():
    d = exact_dataset(make_truth(np.arange(6.0)), 50.0)
    states, controls, targets = d.transitions(2)
    assert states.shape == (4, 4) and controls.shape == (4, 2) and targets.shape == (4, 2, 4)
    np.testing.assert_array_equal(targets[:, 0, 0], states[:, 0] + 1)
    np.testing.assert_array_equal(targets[:, 1, 0], states[:, 0] + 2)


def test_stats_hand_values():
    d = exact_dataset(make_truth(np.array([0.0, 2.0])), 50.0)
    assert dataset_stats(d)["x"] == (1.0, 1.0, 0.0, 2.0)
    const = dataset_stats(exact_dataset(make_truth(np.full(4, 0.5)), 50.0))["x"]
    assert const == (0.5, 0.0, 0.5, 0.5)
    text = format_stats(d)
    assert "Samples" in text and "x (m)" in text and "phi_dot (rad/s)" in text


def test_benchmark_range_is_plausible():
    d = generate_dataset(RigConfig(), 120.0, seed=0)
    lo, hi = d.x.min(), d.x.max()
    # identified rig data spans roughly -0.325 .. 0.276 m
    assert -0.325 <= lo < -0.05 and 0.05 < hi <= 0.325


def test_csv_round_trip_is_exact(tmp_path):
    d = generate_dataset(RigConfig(), 10.0, seed=2)
    d.provenance += "\nsecond line"
    path = tmp_path / "d.csv"
    write_csv(d, path)
    back = read_csv(path)
    assert back == d
    for c in ("t", "x", "phi", "x_dot", "phi_dot", "u"):
        assert np.array_equal(getattr(back, c), getattr(d, c))


def test_csv_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,x,phi,x_dot,u\n0,0,0,0,0\n")
    with pytest.raises(DatasetError, match="phi_dot"):
        read_csv(path)


def test_csv_shuffled_timestamps(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,x,phi,x_dot,phi_dot,u\n0,0,0,0,0,0\n0.04,0,0,0,0,0\n0.02,0,0,0,0,0\n")
    with pytest.raises(DatasetError):
        read_csv(path)


def test_csv_bad_value_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# sample_rate: 50.0\nt,x,phi,x_dot,phi_dot,u\n0,0,0,0,0,0\n0.02,zero,0,0,0,0\n")
    with pytest.raises(DatasetError, match="line 4"):
        read_csv(path)


def test_csv_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(DatasetError):
        read_csv(path)


def test_csv_infers_sample_rate(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("t,x,phi,x_dot,phi_dot,u\n0,0,0,0,0,0\n0.1,0,0,0,0,0\n0.2,0,0,0,0,0\n")
    assert read_csv(path).sample_rate == pytest.approx(10.0)

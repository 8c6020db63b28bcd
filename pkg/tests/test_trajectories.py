import numpy as np
import pytest

from kerrdpt.correlations import g2_curve, tail_rate
from kerrdpt.errors import CutoffError
from kerrdpt.fock import FockSpace, QuantumState, SystemParams
from kerrdpt.liouvillian import build, spectrum, steady_state
from kerrdpt.photonstream import bin_intensity, dwell_times
from kerrdpt.trajectories import ensemble_g2, me_evolve, simulate


def test_no_drive_no_clicks():
    rec = simulate(SystemParams(1.0, 0.2, 0.0), FockSpace(5), 100.0, seed=1)
    assert len(rec.stream) == 0


def test_click_rate_of_linear_cavity():
    # n = 0.25 / 0.25 = 1 -> rate gamma * n = 1
    rec = simulate(SystemParams(0.0, 0.0, 0.5), FockSpace(15), 4000.0, seed=3, burn_in=20)
    n = len(rec.stream)
    assert abs(n / 4000.0 - 1.0) < 3 * np.sqrt(n) / 4000.0


def test_reproducible_bit_for_bit():
    p, s = SystemParams(1.0, 0.2, 1.1), FockSpace(20)
    a = simulate(p, s, 300.0, seed=7, index=2)
    b = simulate(p, s, 300.0, seed=7, index=2)
    c = simulate(p, s, 300.0, seed=7, index=3)
    assert np.array_equal(a.stream.clicks, b.stream.clicks)
    assert not np.array_equal(a.stream.clicks, c.stream.clicks)


def test_norm_and_ordering():
    rec = simulate(SystemParams(1.0, 0.2, 1.2), FockSpace(25), 500.0, seed=11)
    assert rec.max_norm_error < 1e-8
    assert np.all(np.diff(rec.stream.clicks) > 0)
    assert np.all(np.diff(rec.jump_times) > 0)


def test_population_leak_detected():
    with pytest.raises(CutoffError):
        simulate(SystemParams(1.0, 0.2, 1.5), FockSpace(4), 50.0, seed=0)


def test_invalid_arguments():
    p, s = SystemParams(1.0, 0.2, 1.0), FockSpace(10)
    with pytest.raises(ValueError):
        simulate(p, s, -1.0, seed=0)
    with pytest.raises(ValueError):
        simulate(p, s, 1.0, seed=0, sample_dt=0.033)
    with pytest.raises(ValueError):
        ensemble_g2(p, s, 10.0, 0, 0, bin_width=0.5, max_delay=2)


def test_coherent_light_unbunched():
    c = ensemble_g2(SystemParams(0.0, 0.0, 1.0), FockSpace(20), 3000.0, 10, seed=5,
                    bin_width=0.5, max_delay=5.0, burn_in=20, time_unit_ps=1000.0)
    z = (c.values - 1) / c.errors
    assert np.max(np.abs(z)) < 4


def _binned_regression(p, s, width, max_delay):
    fine = np.linspace(0, max_delay, 801)
    ref = g2_curve(p, s, fine).values
    return np.array([ref[(fine >= lo) & (fine < lo + width)].mean() for lo in np.arange(0, max_delay, width)])


def test_ensemble_matches_regression_curve():
    p, s = SystemParams(1.0, 0.2, 1.17), FockSpace(25)
    c = ensemble_g2(p, s, 3000.0, 40, seed=3, bin_width=0.5, max_delay=4.0, burn_in=50,
                    time_unit_ps=1000.0)
    z = (c.values - _binned_regression(p, s, 0.5, 4.0)) / c.errors
    assert np.max(np.abs(z)) < 3
    assert c.values[0] > 1.05


def test_one_long_and_many_short_trajectories_agree():
    p, s = SystemParams(1.0, 0.2, 1.17), FockSpace(25)
    kw = dict(bin_width=0.5, max_delay=4.0, burn_in=50, time_unit_ps=1000.0)
    one = ensemble_g2(p, s, 30000.0, 1, seed=21, **kw)
    ten = ensemble_g2(p, s, 3000.0, 10, seed=21, **kw)
    assert np.allclose(one.delays, ten.delays)
    assert np.all(np.abs(one.values - ten.values) < 3 * np.hypot(one.errors, ten.errors))


def test_mean_photon_against_master_equation():
    p, s = SystemParams(1.0, 0.2, 1.0), FockSpace(15)
    grid = np.arange(0, 6.01, 0.5)
    runs = np.array([simulate(p, s, 6.0, seed=99, index=i, sample_dt=0.5).sample_n for i in range(200)])
    mean, se = runs.mean(0), runs.std(0, ddof=1) / np.sqrt(200)
    ref = me_evolve(p, s, QuantumState.vacuum(s), grid).n
    assert runs.shape[1] == grid.size
    assert np.all(np.abs(mean[1:] - ref[1:]) < 3.5 * se[1:])
    assert mean[0] == 0 and ref[0] == 0


def test_me_evolve_limits():
    p, s = SystemParams(1.0, 0.2, 1.1), FockSpace(20)
    rho = steady_state(build(p, s))
    ev = me_evolve(p, s, rho, [0.0, 5.0, 50.0])
    assert np.allclose(ev.n, rho.mean_photon(), atol=1e-8)
    late = me_evolve(p, s, QuantumState.vacuum(s), [0.0, 200.0])
    assert late.n[-1] == pytest.approx(rho.mean_photon(), abs=1e-6)
    assert np.isnan(late.g2_0[0])


def test_me_evolve_single_photon_decay():
    s = FockSpace(4)
    t = np.linspace(0, 5, 6)
    ev = me_evolve(SystemParams(0.3, 0.2, 0.0), s, QuantumState.fock(s, 1), t)
    assert np.allclose(ev.n, np.exp(-t), atol=1e-10)
    assert np.all(ev.g2_0[:3] == 0)


def test_quench_relaxes_at_gap_rate():
    p, s = SystemParams(1.0, 0.2, 1.17), FockSpace(25)
    adr = spectrum(build(p, s), k=2).adr
    grid = np.linspace(0, 25 / adr, 400)
    ev = me_evolve(p, s, QuantumState.vacuum(s), grid)
    n_ss = steady_state(build(p, s)).mean_photon()
    dev = np.abs(ev.n - n_ss)
    mask = (grid > 5 / adr) & (grid < 15 / adr)
    rate = -np.polyfit(grid[mask], np.log(dev[mask]), 1)[0]
    assert rate == pytest.approx(adr, rel=0.02)


def test_bistable_switching_is_slow():
    p, s = SystemParams(1.5, 0.2, 1.566), FockSpace(30)
    rec = simulate(p, s, 2e4, seed=4, burn_in=50, time_unit_ps=1000.0)
    trace = bin_intensity(rec.stream, 2.0 * rec.stream.time_unit_s)
    stats = dwell_times(trace)
    assert stats.switches >= 10
    unit = rec.stream.time_unit_s
    assert stats.mean_low > 5 * unit and stats.mean_high > 5 * unit

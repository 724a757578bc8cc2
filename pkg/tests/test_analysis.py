import numpy as np
import pytest

import tdpid
from tdpid import (DelaySystem, PIDFilterController, ValidationError,
                   assemble_closed_loop, compute_roots, delay_margin,
                   root_locus, simulate, spectral_abscissa, stability_region,
                   with_input_delay)

from conftest import random_stable_loop


def _rho_at(sys, ctl, tau0):
    cl = assemble_closed_loop(with_input_delay(sys, tau0), ctl, reduce=True)
    return spectral_abscissa(cl)


def test_margin_matches_recorded_value(plant_second_order):
    ctl = tdpid.load_controller(
        {"Kp": [[0.8184]], "Ki": [[0.0]], "Kd": [[0.7237]], "T": 0.0216})
    res = delay_margin(plant_second_order, ctl, tau_hi=0.4)
    assert res.crossing_found
    assert abs(res.value - 0.1422) < 5e-3


def test_margin_brackets_instability(plant_second_order):
    ctl = tdpid.load_controller(
        {"Kp": [[0.6618]], "Ki": [[0.0]], "Kd": [[0.5999]], "T": 0.0729})
    res = delay_margin(plant_second_order, ctl, tau_hi=0.4)
    assert res.crossing_found
    assert _rho_at(plant_second_order, ctl, 0.9 * res.value) < 0
    assert _rho_at(plant_second_order, ctl, 1.1 * res.value) > 0


def test_margin_undefined_when_unstable_at_zero():
    unstable = DelaySystem(A0=[[1.0]], B=[[1.0]], C=[[1.0]])
    with pytest.raises(ValidationError, match="margin undefined"):
        delay_margin(unstable, PIDFilterController.zero(1, 1, T=0.1), tau_hi=1.0)


def test_margin_no_crossing_flag(plant_nonmin, ctl_filtered):
    res = delay_margin(plant_nonmin, ctl_filtered, tau_hi=0.3)
    assert not res.crossing_found
    assert res.value == 0.3


def test_region_extent_and_T_limit(plant_input_delay, ctl_fixed_filter):
    gains = (ctl_fixed_filter.Kp, ctl_fixed_filter.Ki, ctl_fixed_filter.Kd)
    region = stability_region(plant_input_delay, gains,
                              (0.05, 2.4, 13), (0.0, 0.6, 13))
    # at T = 0.1 the stable tau0 extent exceeds 0.2
    i = int(np.argmin(np.abs(region.t_axis - 0.1)))
    stable_taus = region.tau_axis[region.stable[i]]
    assert stable_taus.size and stable_taus.max() > 0.2
    # tolerating tau0 = 0.2 requires roughly T <= 1.75: stable on the
    # tau0 ~ 0.2 row somewhat past 1.6 but not out at 2.2
    j = int(np.argmin(np.abs(region.tau_axis - 0.2)))
    row = region.t_axis[region.stable[:, j]]
    assert row.max() > 1.5
    assert row.max() < 2.2
    assert region.boundary


def test_region_matches_margin_within_grid_cell(plant_input_delay, ctl_fixed_filter):
    gains = (ctl_fixed_filter.Kp, ctl_fixed_filter.Ki, ctl_fixed_filter.Kd)
    margin = delay_margin(plant_input_delay, ctl_fixed_filter, tau_hi=1.0).value
    region = stability_region(plant_input_delay, gains,
                              (0.1, 0.1, 1), (0.3, 0.9, 25))
    cell = region.tau_axis[1] - region.tau_axis[0]
    stable_taus = region.tau_axis[region.stable[0]]
    crossing = stable_taus.max()
    assert abs(crossing - margin) <= cell


def test_region_all_false_for_destabilizing_gains(plant_input_delay):
    gains = (np.array([[10.0]]), np.array([[0.0]]), np.array([[0.0]]))
    ctl = PIDFilterController(Kp=gains[0], Ki=gains[1], Kd=gains[2], T=0.1)
    assert _rho_at(plant_input_delay, ctl, 0.0) > 0
    region = stability_region(plant_input_delay, gains, (0.05, 0.5, 4), (0.0, 0.4, 4))
    assert not region.stable.any()


def test_region_rejects_bad_ranges(plant_input_delay, ctl_fixed_filter):
    gains = (ctl_fixed_filter.Kp, ctl_fixed_filter.Ki, ctl_fixed_filter.Kd)
    with pytest.raises(ValidationError):
        stability_region(plant_input_delay, gains, (0.0, 1.0, 5), (0.0, 1.0, 5))


def test_region_csv(tmp_path, plant_input_delay, ctl_fixed_filter):
    gains = (ctl_fixed_filter.Kp, ctl_fixed_filter.Ki, ctl_fixed_filter.Kd)
    region = stability_region(plant_input_delay, gains, (0.05, 0.3, 3), (0.0, 0.3, 3))
    path = tmp_path / "region.csv"
    region.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "T,tau0,rho,stable"
    assert len(lines) == 1 + 9


def test_locus_single_point_equals_spectrum(plant_input_delay, ctl_fixed_filter):
    locus = root_locus(plant_input_delay, ctl_fixed_filter, "tau0", 0.2, 0.2, 1)
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    spec = compute_roots(cl)
    got = sorted((r for trace in locus.traces for _, r in trace),
                 key=lambda z: (-z.real, abs(z.imag)))
    want = [r.value for r in spec.roots[:len(got)]]
    assert np.all(np.abs(np.array(got) - np.array(want)) < 1e-12)


def test_locus_crossing_matches_margin(plant_nonmin, ctl_classical):
    margin = delay_margin(plant_nonmin, ctl_classical, tau_hi=0.02).value
    locus = root_locus(plant_nonmin, ctl_classical, "tau0", 0.0, 0.012, 13, k=6)
    rho = np.array([locus.abscissa_at(i) for i in range(len(locus.values))])
    crossings = np.nonzero(np.diff(np.sign(rho)))[0]
    assert crossings.size
    lo = locus.values[crossings[0]]
    hi = locus.values[crossings[0] + 1]
    assert lo <= margin <= hi


def test_locus_abscissa_coherence_and_continuity(plant_input_delay, ctl_fixed_filter):
    locus = root_locus(plant_input_delay, ctl_fixed_filter, "T", 0.08, 0.2, 7, k=8)
    for i, T in enumerate(locus.values):
        loop = assemble_closed_loop(plant_input_delay,
                                    ctl_fixed_filter.with_T(T), reduce=True)
        assert abs(locus.abscissa_at(i) - spectral_abscissa(loop)) < 1e-6
    fine = root_locus(plant_input_delay, ctl_fixed_filter, "T", 0.08, 0.2, 13, k=8)
    for trace in fine.traces:
        roots = [r for _, r in trace]
        jumps = [abs(a - b) for a, b in zip(roots, roots[1:])]
        assert all(j < 1.0 for j in jumps)


def test_locus_rejects_bad_param(plant_input_delay, ctl_fixed_filter):
    with pytest.raises(ValidationError):
        root_locus(plant_input_delay, ctl_fixed_filter, "alpha", 0.0, 1.0, 5)


def test_simulate_delay_free_decay_rate():
    sys = DelaySystem(A0=[[0.0, 1.0], [-2.0 / 3.0, -1.0]], B=[[0.0], [1.0]],
                      C=[[1.0, 0.0]])
    cl = assemble_closed_loop(sys, PIDFilterController.zero(1, 1), reduce=True)
    traj = simulate(cl, np.array([1.0, 0.0]), horizon=80.0, dt=0.01)
    assert not traj.diverged
    assert abs(traj.norm_log_slope - (-0.5)) < 0.05


def test_simulate_delayed_decay_matches_abscissa(plant_input_delay, ctl_fixed_filter):
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    rho = spectral_abscissa(cl)
    traj = simulate(cl, np.ones(cl.n_ext), horizon=60.0, dt=0.002)
    assert abs(traj.norm_log_slope - rho) < 0.05


def test_simulate_unstable_has_positive_slope(plant_input_delay, ctl_fixed_filter):
    cl = assemble_closed_loop(with_input_delay(plant_input_delay, 0.7),
                              ctl_fixed_filter, reduce=True)
    assert spectral_abscissa(cl) > 0
    traj = simulate(cl, np.ones(cl.n_ext), horizon=60.0, dt=0.002)
    assert traj.diverged or traj.norm_log_slope > 0


def test_simulate_initial_function_callable(plant_input_delay, ctl_fixed_filter):
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    traj = simulate(cl, lambda th: np.cos(th) * np.ones(cl.n_ext),
                    horizon=20.0, dt=0.002)
    assert traj.states.shape[1] == cl.n_ext
    assert np.all(np.isfinite(traj.states))


def test_simulate_validates_grid(plant_input_delay, ctl_fixed_filter):
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    with pytest.raises(ValidationError, match="divide"):
        simulate(cl, np.ones(cl.n_ext), horizon=10.0, dt=0.003)
    with pytest.raises(ValidationError, match="exceeds"):
        simulate(cl, np.ones(cl.n_ext), horizon=10.0, dt=0.4)
    with pytest.raises(ValidationError, match="horizon"):
        simulate(cl, np.ones(cl.n_ext), horizon=0.1, dt=0.002)


def test_simulate_sign_agreement_random():
    rng = np.random.default_rng(5)
    done = 0
    while done < 3:
        sys, ctl, cl, rho = random_stable_loop(rng, with_delay=True,
                                               require_stable=False)
        if abs(rho) <= 0.05 or not cl.delays:
            continue
        dt = min(cl.delays) / max(1, round(min(cl.delays) / 0.002))
        traj = simulate(cl, np.ones(cl.n_ext), horizon=max(25.0, 4 * max(cl.delays)),
                        dt=dt)
        slope = traj.norm_log_slope
        if traj.diverged:
            assert rho > 0
        else:
            assert np.sign(slope) == np.sign(rho)
        done += 1


def test_trajectory_csv(tmp_path, plant_input_delay, ctl_fixed_filter):
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    traj = simulate(cl, np.ones(cl.n_ext), horizon=5.0, dt=0.01)
    path = tmp_path / "traj.csv"
    traj.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("t,norm,comp_0")
    assert len(lines) == 1 + len(traj.times)

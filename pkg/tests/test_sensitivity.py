import numpy as np
import pytest

import tdpid
from tdpid import (DelaySystem, PIDFilterController, assemble_closed_loop,
                   abscissa_subgradient, compute_roots, root_gradient,
                   spectral_abscissa)
from tdpid.optimize import PenaltyConfig, check_gradient
from tdpid.sensitivity import parameter_labels

from conftest import random_stable_loop


def test_parameter_labels_order():
    assert parameter_labels(1, 1) == ["Kp[0,0]", "Ki[0,0]", "Kd[0,0]", "T"]
    labs = parameter_labels(2, 1)
    assert labs[:2] == ["Kp[0,0]", "Kp[1,0]"] and labs[-1] == "T"


def test_proportional_loop_matches_analytic_quadratic_derivative():
    # plant (s-1)/((s+1)(s+3)); plus-sign proportional gain g:
    # det(sI - A - g B C) = s^2 + (4-g)s + (3+g), so ds/dg = (s-1)/(2s+4-g)
    sys = DelaySystem(A0=[[0.0, 1.0], [-3.0, -4.0]], B=[[0.0], [1.0]],
                      C=[[-1.0, 1.0]])
    g = -1.0
    ctl = PIDFilterController(Kp=[[g]], Ki=[[0.0]], Kd=[[0.0]], T=1.0)
    cl = assemble_closed_loop(sys, ctl, reduce=True)
    assert cl.n_ext == 2
    for root in compute_roots(cl).roots:
        s = root.value
        sens = root_gradient(cl, s)
        assert sens.simple
        want = ((s - 1) / (2 * s + 4 - g)).real
        assert abs(sens.gradient[0] - want) < 1e-8


def test_dropped_integrator_gives_exactly_zero_Ki_gradient(plant_input_delay,
                                                           ctl_fixed_filter):
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    s = compute_roots(cl).roots[0].value
    sens = root_gradient(cl, s)
    assert sens.simple
    assert sens.gradient[1] == 0.0           # Ki entry, structurally absent


def test_gradient_matches_finite_differences(plant_input_delay, ctl_codesigned):
    rel, _, _ = check_gradient(plant_input_delay, ctl_codesigned,
                               PenaltyConfig(T_min=0.001, T_max=1.75, alpha=10.0))
    assert rel < 1e-5


def test_conjugate_pair_members_share_gradient(plant_input_delay, ctl_fixed_filter):
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    spec = compute_roots(cl)
    s = spec.roots[0].value
    assert abs(s.imag) > 0
    g_up = root_gradient(cl, s).gradient
    g_dn = root_gradient(cl, s.conjugate()).gradient
    assert np.all(np.abs(g_up - g_dn) < 1e-10)


def test_T_gradient_consistent_with_cutoff_reparametrization(plant_input_delay,
                                                             ctl_codesigned):
    # with omega_c = 1/T:  d rho/d omega_c = -T^2 d rho/d T
    sys, ctl = plant_input_delay, ctl_codesigned
    cl = assemble_closed_loop(sys, ctl, reduce=True)
    spec = compute_roots(cl)
    dT = abscissa_subgradient(cl, spec).gradient[-1]
    wc = ctl.omega_c
    h = 1e-5 * wc

    def rho_at_wc(w):
        loop = assemble_closed_loop(sys, ctl.with_T(1.0 / w), reduce=True)
        return spectral_abscissa(loop)

    d_wc = (rho_at_wc(wc + h) - rho_at_wc(wc - h)) / (2 * h)
    assert abs(dT - (-d_wc / ctl.T ** 2)) < 1e-4 * max(abs(dT), 1.0)


def test_output_scaling_chain_rule(plant_input_delay, ctl_fixed_filter):
    c = 2.5
    scaled_sys = DelaySystem(A0=plant_input_delay.A0, B=plant_input_delay.B,
                             C=c * plant_input_delay.C,
                             tau0=plant_input_delay.tau0)
    scaled_ctl = PIDFilterController(Kp=ctl_fixed_filter.Kp / c,
                                     Ki=ctl_fixed_filter.Ki / c,
                                     Kd=ctl_fixed_filter.Kd / c,
                                     T=ctl_fixed_filter.T)
    base = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    scaled = assemble_closed_loop(scaled_sys, scaled_ctl, reduce=True)
    s0 = compute_roots(base).roots[0].value
    s1 = compute_roots(scaled).roots[0].value
    assert abs(s0 - s1) < 1e-8
    g0 = root_gradient(base, s0).gradient
    g1 = root_gradient(scaled, s1).gradient
    # gains shrank by 1/c, so root sensitivities to them grow by c
    assert abs(g1[0] - c * g0[0]) < 1e-6 * max(1.0, abs(g0[0]))
    assert abs(g1[2] - c * g0[2]) < 1e-6 * max(1.0, abs(g0[2]))
    assert abs(g1[3] - g0[3]) < 1e-6 * max(1.0, abs(g0[3]))


def test_near_tied_decoupled_blocks_flag_nonsmooth():
    eps = 5e-7
    A = np.zeros((4, 4))
    A[:2, :2] = [[0.0, 1.0], [-2.0 / 3.0, -1.0]]
    A[2:, 2:] = np.array([[0.0, 1.0], [-2.0 / 3.0, -1.0]]) + eps * np.eye(2)
    sys = DelaySystem(A0=A, B=[[0.0], [1.0], [0.0], [1.0]], C=[[1.0, 0.0, 1.0, 0.0]])
    cl = assemble_closed_loop(sys, PIDFilterController.zero(1, 1), reduce=True)
    spec = compute_roots(cl)
    sub = abscissa_subgradient(cl, spec)
    assert sub.nonsmooth


def test_unique_dominant_pair_is_smooth(plant_input_delay, ctl_fixed_filter):
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    spec = compute_roots(cl)
    sub = abscissa_subgradient(cl, spec)
    assert not sub.nonsmooth and sub.simple
    assert np.all(np.isfinite(sub.gradient))
    assert abs(sub.active_root - spec.roots[0].value) < 1e-12 or \
        abs(sub.active_root - spec.roots[0].value.conjugate()) < 1e-12


def test_defective_root_flags_not_simple():
    sys = DelaySystem(A0=[[0.0, 1.0], [0.0, 0.0]], B=[[0.0], [1.0]], C=[[1.0, 0.0]])
    cl = assemble_closed_loop(sys, PIDFilterController.zero(1, 1), reduce=True)
    sens = root_gradient(cl, 0.0)
    assert not sens.simple
    assert np.all(np.isnan(sens.gradient))


def test_random_loops_gradient_vs_finite_differences():
    rng = np.random.default_rng(23)
    checked = 0
    while checked < 6:
        sys, ctl, cl, rho = random_stable_loop(rng, with_delay=True)
        spec = compute_roots(cl)
        sub = abscissa_subgradient(cl, spec)
        if sub.nonsmooth:
            continue
        rel, _, _ = check_gradient(sys, ctl, PenaltyConfig(1e-4, 10.0, alpha=1.0))
        assert rel < 1e-5
        checked += 1

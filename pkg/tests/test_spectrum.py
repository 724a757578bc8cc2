import math

import numpy as np
import pytest
import scipy.linalg

import tdpid
from tdpid import (ComputationError, PIDFilterController, Rect,
                   ScalarQuasiPolynomial, SpectrumOptions, ValidationError,
                   assemble_closed_loop, char_matrix, compute_roots,
                   scan_scalar, spectral_abscissa)
from tdpid.repro import (ex31_realized_plant, ex32_realized_plant,
                         ex32_scaled_limit)

from conftest import random_stable_loop


def _bare_loop(sys):
    return assemble_closed_loop(sys, PIDFilterController.zero(sys.m, sys.p),
                                reduce=True)


def test_char_matrix_at_zero(plant_input_delay, ctl_fixed_filter):
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    M = char_matrix(cl, 0.0)
    want = -cl.M0.astype(complex)
    for _, D in cl.delayed_blocks:
        want -= D
    assert np.allclose(M, want, atol=0, rtol=0)


def test_pd_quadratic_closed_form_roots():
    cl = _bare_loop(ex31_realized_plant())
    spec = compute_roots(cl)
    want = complex(-0.5, math.sqrt(15) / 6)
    vals = spec.values
    assert min(abs(vals - want)) < 1e-9
    assert min(abs(vals - want.conjugate())) < 1e-9
    assert abs(spec.abscissa + 0.5) < 1e-9


def test_ideal_derivative_cubic_roots():
    cl = _bare_loop(ex32_realized_plant())
    vals = compute_roots(cl).values
    oracle = np.roots([-9.0, -14.0, -1.0, -1.0])
    for z in oracle:
        assert min(abs(vals - z)) < 1e-9
    # quoted two-decimal locations
    for z in (-1.53, -0.012 + 0.269j, -0.012 - 0.269j):
        assert min(abs(vals - z)) < 2e-3


def test_filtered_pd_extra_real_root():
    sys = tdpid.DelaySystem(A0=[[0.0, 5.0], [1.0, 0.0]], B=[[1.0], [-1.0]],
                            C=[[1.0, 0.0]])
    # plus-sign loop with kp=2, kd=1/2 through a filter with T=0.01
    ctl = PIDFilterController(Kp=[[2.0]], Ki=[[0.0]], Kd=[[0.5]], T=0.01)
    cl = assemble_closed_loop(sys, ctl, reduce=True)
    vals = compute_roots(cl, search_floor=-80.0).values
    assert min(abs(vals - (-47.057))) < 1e-2
    pair = complex(-0.5, math.sqrt(39) / 2)
    assert min(abs(vals - pair)) < 0.2


def test_abscissa_fixed_filter_and_codesign(plant_input_delay, ctl_fixed_filter,
                                            ctl_codesigned):
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    assert abs(spectral_abscissa(cl) - (-0.1475)) < 5e-3
    cl2 = assemble_closed_loop(plant_input_delay, ctl_codesigned, reduce=True)
    assert abs(spectral_abscissa(cl2) - (-0.2435)) < 5e-3


def test_delay_free_matches_dense_pencil():
    rng = np.random.default_rng(3)
    for _ in range(5):
        sys, ctl, cl, _ = random_stable_loop(rng, with_delay=False,
                                             require_stable=False)
        spec = compute_roots(cl)
        pencil = scipy.linalg.eig(cl.M0, cl.E, right=False)
        pencil = np.array([z for z in pencil if np.isfinite(z)])
        assert len(spec.roots) == len(pencil)
        for root in spec.roots:
            assert min(abs(pencil - root.value)) < 1e-9


def test_conjugate_closure_and_floor():
    rng = np.random.default_rng(11)
    for _ in range(5):
        _, _, cl, _ = random_stable_loop(rng, with_delay=True, require_stable=False)
        spec = compute_roots(cl)
        vals = spec.values
        assert np.all(vals.real >= spec.search_floor)
        for z in vals[np.abs(vals.imag) > 0]:
            assert np.min(np.abs(vals - z.conjugate())) <= 1e-10


def test_residual_certificate(plant_input_delay, ctl_fixed_filter):
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    spec = compute_roots(cl)
    assert spec.roots
    for root in spec.roots:
        M = char_matrix(cl, root.value)
        svals = np.linalg.svd(M, compute_uv=False)
        assert svals[-1] <= 1e-8 * svals[0]
        assert root.refined and root.residual <= 1e-8


def test_degree_stability(plant_input_delay, ctl_fixed_filter):
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    fixed_lo = compute_roots(cl, opts=SpectrumOptions(degree=60, adaptive=False))
    fixed_hi = compute_roots(cl, opts=SpectrumOptions(degree=120, adaptive=False))
    k = min(6, len(fixed_lo.roots), len(fixed_hi.roots))
    for a, b in zip(fixed_lo.roots[:k], fixed_hi.roots[:k]):
        assert abs(a.value - b.value) < 1e-8


def test_floor_insensitivity_of_dominant_roots(plant_second_order):
    ctl = tdpid.load_controller(
        {"Kp": [[1.2311]], "Ki": [[0.0]], "Kd": [[0.8927]], "T": 0.0059})
    cl = assemble_closed_loop(plant_second_order, ctl, reduce=True)
    a = compute_roots(cl).values
    b = compute_roots(cl, search_floor=-200.0).values
    k = min(3, len(a), len(b))
    assert np.all(np.abs(a[:k] - b[:k]) < 1e-9)


def test_matrix_vs_scalar_oracle_on_delayed_loop(plant_input_delay, ctl_fixed_filter):
    """Scanner on det(M(s)) agrees with the eigenvalue route inside a window."""
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    qp = ScalarQuasiPolynomial(
        evaluator=lambda s: np.linalg.det(char_matrix(cl, complex(s))))
    rect = Rect(-1.4, 0.4, 0.05, 12.0)
    scanned = scan_scalar(qp, rect)
    vals = compute_roots(cl).values
    inside = [z for z in vals
              if rect.re_min < z.real < rect.re_max and rect.im_min < z.imag < rect.im_max]
    assert scanned and len(inside) == len(scanned)
    for z in inside:
        assert min(abs(np.array(scanned) - z)) < 1e-6


def test_scan_quadratic_pair():
    qp = ScalarQuasiPolynomial(evaluator=lambda s: s * s + s + 10.0)
    roots = scan_scalar(qp, Rect(-5.0, 5.0, -10.0, 10.0))
    want = complex(-0.5, math.sqrt(39) / 2)
    assert len(roots) == 2
    assert min(abs(z - want) for z in roots) < 1e-6
    assert min(abs(z - want.conjugate()) for z in roots) < 1e-6


def test_scan_identity_root_at_origin():
    qp = ScalarQuasiPolynomial(evaluator=lambda s: s)
    roots = scan_scalar(qp, Rect(-0.5, 0.5, -0.5, 0.5))
    assert len(roots) == 1
    assert abs(roots[0]) < 1e-12


def test_scan_scaled_limit_root():
    qp = ScalarQuasiPolynomial(evaluator=ex32_scaled_limit)
    roots = scan_scalar(qp, Rect(0.01, 20.0, -1.0, 1.0))
    assert len(roots) == 1
    assert abs(roots[0] - 9.9995457944465329) < 1e-6


def test_scan_uses_supplied_derivative():
    qp = ScalarQuasiPolynomial(evaluator=lambda s: s * s + s + 10.0,
                               derivative_evaluator=lambda s: 2 * s + 1.0)
    roots = scan_scalar(qp, Rect(-5.0, 5.0, 0.0, 10.0))
    assert len(roots) == 1
    assert abs(roots[0] - complex(-0.5, math.sqrt(39) / 2)) < 1e-10


def test_scan_detects_count_mismatch_for_double_root():
    qp = ScalarQuasiPolynomial(evaluator=lambda s: s * s)
    with pytest.raises(ComputationError, match="mismatch"):
        scan_scalar(qp, Rect(-1.0, 1.0, -1.0, 1.0))


def test_scan_rejects_root_on_boundary():
    qp = ScalarQuasiPolynomial(evaluator=lambda s: s)
    with pytest.raises(ComputationError, match="boundary"):
        scan_scalar(qp, Rect(0.0, 1.0, -1.0, 1.0))


def test_scan_rejects_degenerate_rect():
    with pytest.raises(ValidationError):
        Rect(1.0, 1.0, -1.0, 1.0)


def test_spectrum_csv_round_trip(tmp_path, plant_input_delay, ctl_fixed_filter):
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    spec = compute_roots(cl)
    path = tmp_path / "spec.csv"
    spec.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "re,im,residual,refined"
    for root, line in zip(spec.roots, lines[1:]):
        re, im, res, refined = line.split(",")
        assert float(re) == root.value.real
        assert float(im) == root.value.imag
        assert float(res) == root.residual


def test_adaptive_cap_reports_not_converged(plant_input_delay, ctl_fixed_filter):
    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    spec = compute_roots(cl, opts=SpectrumOptions(degree=30, max_degree=30))
    assert not spec.converged
    assert spec.discretization_degree == 30
    assert spec.roots


def test_empty_spectrum_above_floor_and_subgradient_error(plant_input_delay,
                                                          ctl_fixed_filter):
    from tdpid import abscissa_subgradient

    cl = assemble_closed_loop(plant_input_delay, ctl_fixed_filter, reduce=True)
    spec = compute_roots(cl, search_floor=10.0)
    assert not spec.roots
    assert spec.abscissa == -math.inf
    with pytest.raises(ComputationError, match="no characteristic roots"):
        abscissa_subgradient(cl, spec)

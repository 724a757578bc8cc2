"""Reference regression targets for the bundled case studies.

Each target re-runs one bundled design study and compares the computed
numbers against recorded reference values at fixed tolerances, returning a
per-check pass/fail report.  Bundled controller files realize each study
under this package's plus-sign feedback convention (see README), so the
recorded roots, spectral abscissas and delay margins come out directly.

Derived constants were frozen from independent oracles (closed-form root
formulas, dense polynomial eigensolvers, bisection on the scaled limit
function); the oracles are re-run by the test suite.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .analysis import delay_margin
from .errors import ValidationError
from .model import (DelaySystem, PIDFilterController, assemble_closed_loop,
                    load_controller, load_system)
from .optimize import MinimizeOptions, PenaltyConfig, design_filtered_pid
from .spectrum import (Rect, ScalarQuasiPolynomial, SpectrumOptions,
                       compute_roots, scan_scalar, spectral_abscissa)

__all__ = ["Check", "ReproReport", "TARGETS", "run_target", "run_all", "data_path"]


@dataclass
class Check:
    name: str
    expected: str
    computed: str
    passed: bool


@dataclass
class ReproReport:
    target: str
    checks: list = field(default_factory=list)
    elapsed: float = 0.0
    artifacts: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def add(self, name, expected, computed, passed):
        self.checks.append(Check(name=name, expected=str(expected),
                                 computed=str(computed), passed=bool(passed)))

    def to_dict(self):
        return {"target": self.target, "passed": self.passed,
                "elapsed_s": self.elapsed,
                "checks": [vars(c) for c in self.checks],
                "artifacts": [str(a) for a in self.artifacts]}


def data_path(name):
    """Path of a bundled example file (systems and controllers)."""
    return resources.files("tdpid.data").joinpath(name)


def _bundled_system(name):
    return load_system(json.loads(data_path(name).read_text()))


def _bundled_controller(name):
    return load_controller(json.loads(data_path(name).read_text()))


def _close(a, b, tol):
    return abs(a - b) <= tol


def _match_root(roots, target, tol):
    if not roots:
        return None, False
    best = min(roots, key=lambda z: abs(z - target))
    return best, abs(best - target) <= tol


def _fmt(z):
    if isinstance(z, complex):
        return f"{z.real:.6g}{z.imag:+.6g}j"
    return f"{z:.6g}"


def _roots_artifacts(report, outdir, stem, values, title=None):
    if outdir is None:
        return
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / f"{stem}.csv"
    with open(csv_path, "w") as fh:
        fh.write("re,im\n")
        for z in values:
            fh.write(f"{z.real:.17g},{z.imag:.17g}\n")
    report.artifacts.append(csv_path)
    from .plots import save_spectrum_plot

    png_path = outdir / f"{stem}.png"
    save_spectrum_plot(np.array(values, dtype=complex), png_path, title=title or stem)
    report.artifacts.append(png_path)


# --------------------------------------------------------------------------
# small-feedback-delay study: PD loop with closed-form quadratic, plus the
# neutral characteristic equation that loses stability under a tiny loop delay

_EX31_KP, _EX31_KD = 1.0, 2.0
_EX31_ROOTS = (complex(-0.5, math.sqrt(15.0) / 6.0),
               complex(-0.5, -math.sqrt(15.0) / 6.0))


def ex31_quadratic(s):
    kp, kd = _EX31_KP, _EX31_KD
    return (1 + kd) * s ** 2 + (4 + kp - kd) * s + (3 - kp)


def ex31_neutral(s, r=0.01):
    kp, kd = _EX31_KP, _EX31_KD
    e = np.exp(-r * s)
    return (1 + kd * e) * s ** 2 + (4 + (kp - kd) * e) * s + (3 - kp * e)


def ex31_realized_plant():
    """State-space realization of the closed PD loop (delay-free)."""
    return DelaySystem(A0=[[0.0, 1.0], [-2.0 / 3.0, -1.0]], B=[[0.0], [1.0]],
                       C=[[1.0, 0.0]])


def run_ex3_1(seed=0, outdir=None):
    rep = ReproReport(target="ex3-1")
    t0 = time.perf_counter()
    qp = ScalarQuasiPolynomial(evaluator=ex31_quadratic)
    roots = scan_scalar(qp, Rect(-2.0, 0.5, -2.0, 2.0))
    for tgt in _EX31_ROOTS:
        got, ok = _match_root(roots, tgt, 1e-9)
        rep.add(f"closed-form root {_fmt(tgt)} (tol 1e-9)", _fmt(tgt),
                _fmt(got) if got is not None else "none", ok)
    cl = assemble_closed_loop(ex31_realized_plant(),
                              PIDFilterController.zero(1, 1), reduce=True)
    spec = compute_roots(cl)
    for tgt in _EX31_ROOTS:
        got, ok = _match_root([r.value for r in spec.roots], tgt, 1e-9)
        rep.add(f"matrix-route root {_fmt(tgt)} (tol 1e-9)", _fmt(tgt),
                _fmt(got) if got is not None else "none", ok)
    qpn = ScalarQuasiPolynomial(evaluator=ex31_neutral)
    nroots = scan_scalar(qpn, Rect(40.0, 100.0, 250.0, 400.0))
    unstable = [z for z in nroots if z.real > 0]
    rep.add("neutral loop (r=0.01) has a root with Re > 0", "Re > 0",
            _fmt(unstable[0]) if unstable else "none found", bool(unstable))
    rep.elapsed = time.perf_counter() - t0
    _roots_artifacts(rep, outdir, "ex3_1_roots", list(roots) + unstable)
    return rep


# --------------------------------------------------------------------------
# delay-difference study: cubic closed loop and the scaled limit function
# whose positive zero survives as r -> 0+

# positive zero of f(sb) = sb - 10(1 - exp(-sb)), frozen from the bisection
# oracle in tests/test_acceptance.py
SCALED_LIMIT_ROOT = 9.9995457944465329

_EX32_CUBIC = (-9.0, -14.0, -1.0, -1.0)   # p(s) - 5 s^2 (kp + kd s), kp=3, kd=2


def ex32_cubic(s):
    a, b, c, d = _EX32_CUBIC
    return ((a * s + b) * s + c) * s + d


def ex32_scaled_limit(s):
    return s - 10.0 * (1.0 - np.exp(-s))


def ex32_realized_plant():
    return DelaySystem(A0=[[-14.0 / 9.0, -1.0 / 9.0, -1.0 / 9.0],
                           [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
                       B=[[1.0], [0.0], [0.0]], C=[[1.0, 0.0, 0.0]])


def run_ex3_2(seed=0, outdir=None):
    rep = ReproReport(target="ex3-2")
    t0 = time.perf_counter()
    oracle = sorted(np.roots(_EX32_CUBIC), key=lambda z: -z.real)
    quoted = [complex(-1.53, 0.0), complex(-0.012, 0.269), complex(-0.012, -0.269)]
    cl = assemble_closed_loop(ex32_realized_plant(),
                              PIDFilterController.zero(1, 1), reduce=True)
    vals = [r.value for r in compute_roots(cl).roots]
    for tgt in quoted:
        got, _ = _match_root(vals, tgt, math.inf)
        ok = got is not None and abs(got - tgt) <= 2e-3
        rep.add(f"ideal-derivative root near {_fmt(tgt)} (tol 2e-3)",
                _fmt(tgt), _fmt(got) if got is not None else "none", ok)
    for tgt in oracle:
        got, ok = _match_root(vals, complex(tgt), 1e-9)
        rep.add(f"matrix vs dense-cubic oracle {_fmt(complex(tgt))} (tol 1e-9)",
                _fmt(complex(tgt)), _fmt(got) if got is not None else "none", ok)
    qp = ScalarQuasiPolynomial(evaluator=ex32_scaled_limit)
    roots = scan_scalar(qp, Rect(0.01, 20.0, -1.0, 1.0))
    got, ok = _match_root(roots, complex(SCALED_LIMIT_ROOT, 0.0), 1e-6)
    rep.add("scaled-limit positive zero (tol 1e-6)", f"{SCALED_LIMIT_ROOT:.10f}",
            _fmt(got) if got is not None else "none", ok)
    rep.elapsed = time.perf_counter() - t0
    _roots_artifacts(rep, outdir, "ex3_2_roots", vals)
    return rep


# --------------------------------------------------------------------------
# filter-constant study: inserting a first-order filter with r = 0.01 adds a
# fast real root near -47.057 next to the ideal dominant pair

_EX33_KP, _EX33_KD = 2.0, 0.5
_EX33_IDEAL_PAIR = (complex(-0.5, math.sqrt(39.0) / 2.0),
                    complex(-0.5, -math.sqrt(39.0) / 2.0))
_EX33_FILTER_ROOT = -47.057


def ex33_ideal(s):
    return s ** 2 + s + 10.0


def ex33_filtered(s, r=0.01):
    kp, kd = _EX33_KP, _EX33_KD
    return (r * s + 1) * (s ** 2 - 5) + (5 - s) * (kp * (r * s + 1) + kd * s)


def run_ex3_3(seed=0, outdir=None):
    rep = ReproReport(target="ex3-3")
    t0 = time.perf_counter()
    qp = ScalarQuasiPolynomial(evaluator=ex33_ideal)
    ideal = scan_scalar(qp, Rect(-5.0, 5.0, -10.0, 10.0))
    for tgt in _EX33_IDEAL_PAIR:
        got, ok = _match_root(ideal, tgt, 1e-6)
        rep.add(f"ideal dominant root {_fmt(tgt)} (tol 1e-6)", _fmt(tgt),
                _fmt(got) if got is not None else "none", ok)
    qpf = ScalarQuasiPolynomial(evaluator=ex33_filtered)
    filt = scan_scalar(qpf, Rect(-60.0, 2.0, -8.0, 8.0))
    got, ok = _match_root(filt, complex(_EX33_FILTER_ROOT, 0.0), 1e-2)
    rep.add("extra filter root -47.057 (tol 1e-2)", f"{_EX33_FILTER_ROOT}",
            _fmt(got) if got is not None else "none", ok)
    for tgt in _EX33_IDEAL_PAIR:
        got, ok = _match_root(filt, tgt, 0.2)
        rep.add(f"filtered pair near {_fmt(tgt)} (tol 0.2)", _fmt(tgt),
                _fmt(got) if got is not None else "none", ok)
    rep.elapsed = time.perf_counter() - t0
    _roots_artifacts(rep, outdir, "ex3_3_roots", filt)
    return rep


# --------------------------------------------------------------------------
# motivating study: fixed-filter abscissa vs joint co-design at tau0 = 0.2

def run_motivating(seed=0, outdir=None):
    rep = ReproReport(target="motivating")
    t0 = time.perf_counter()
    sys = _bundled_system("motivating_plant.json")
    fixed = _bundled_controller("motivating_fixed_filter.json")
    joint = _bundled_controller("motivating_codesign.json")

    cl = assemble_closed_loop(sys, fixed, reduce=True)
    spec_fixed = compute_roots(cl)
    rep.add("abscissa at fixed-filter gains (tol 5e-3)", "-0.1475",
            _fmt(spec_fixed.abscissa), _close(spec_fixed.abscissa, -0.1475, 5e-3))
    cl2 = assemble_closed_loop(sys, joint, reduce=True)
    spec_joint = compute_roots(cl2)
    rep.add("abscissa at co-designed gains (tol 5e-3)", "-0.2435",
            _fmt(spec_joint.abscissa), _close(spec_joint.abscissa, -0.2435, 5e-3))

    res = design_filtered_pid(sys, fixed, PenaltyConfig(T_min=0.001, T_max=1.75),
                              opts=MinimizeOptions(max_iter=40, seed=seed))
    rep.add("co-design from fixed-filter start achieves rho <= -0.235",
            "<= -0.235", f"{res.rho:.6g} ({res.status})", res.rho <= -0.24 + 5e-3)
    rep.elapsed = time.perf_counter() - t0
    _roots_artifacts(rep, outdir, "motivating_fixed_spectrum",
                     [r.value for r in spec_fixed.roots])
    _roots_artifacts(rep, outdir, "motivating_codesign_spectrum",
                     [r.value for r in spec_joint.roots])
    return rep


# --------------------------------------------------------------------------
# first design study: classical small-filter PID vs co-designed filtered PID

def run_ex6_1(seed=0, outdir=None):
    rep = ReproReport(target="ex6-1")
    t0 = time.perf_counter()
    sys = _bundled_system("ex1_plant.json")
    classical = _bundled_controller("ex1_classical.json")
    filtered = _bundled_controller("ex1_filtered.json")

    open_loop = assemble_closed_loop(sys, PIDFilterController.zero(1, 1), reduce=True)
    poles = [r.value for r in compute_roots(open_loop).roots]
    for tgt in (complex(-0.7152, 0.0), complex(-0.1423, 1.666), complex(-0.1423, -1.666)):
        got, ok = _match_root(poles, tgt, 1e-3)
        rep.add(f"open-loop pole {_fmt(tgt)} (tol 1e-3)", _fmt(tgt),
                _fmt(got) if got is not None else "none", ok)

    spec_c = compute_roots(assemble_closed_loop(sys, classical, reduce=True))
    for tgt in (complex(-0.3004, 0.0898), complex(-0.3004, -0.0898)):
        got, ok = _match_root([r.value for r in spec_c.roots], tgt, 1e-3)
        rep.add(f"classical dominant root {_fmt(tgt)} (tol 1e-3)", _fmt(tgt),
                _fmt(got) if got is not None else "none", ok)
    m_c = delay_margin(sys, classical, tau_hi=0.05)
    rep.add("classical delay margin < 7e-3", "< 0.007",
            f"{m_c.value:.6g}", m_c.crossing_found and m_c.value < 7e-3)

    spec_f = compute_roots(assemble_closed_loop(sys, filtered, reduce=True))
    for tgt in (complex(-0.1011, 1.6262), complex(-0.1011, -1.6262)):
        got, ok = _match_root([r.value for r in spec_f.roots], tgt, 1e-3)
        rep.add(f"filtered dominant root {_fmt(tgt)} (tol 1e-3)", _fmt(tgt),
                _fmt(got) if got is not None else "none", ok)
    m_f = delay_margin(sys, filtered, tau_hi=1.2)
    computed = f"{m_f.value:.6g}" if m_f.crossing_found else f"no crossing <= {m_f.value:g}"
    rep.add("filtered delay margin 0.85 (tol 0.05)", "0.85 +/- 0.05", computed,
            m_f.crossing_found and _close(m_f.value, 0.85, 0.05))
    rep.elapsed = time.perf_counter() - t0
    _roots_artifacts(rep, outdir, "ex6_1_classical_spectrum",
                     [r.value for r in spec_c.roots])
    _roots_artifacts(rep, outdir, "ex6_1_filtered_spectrum",
                     [r.value for r in spec_f.roots])
    return rep


# --------------------------------------------------------------------------
# second design study: abscissa / delay-margin trade-off across T windows

_EX62_ROWS = (("ex2_row1.json", -3.57769, 0.0275),
              ("ex2_row2.json", -1.46503, 0.1422),
              ("ex2_row3.json", -1.23445, 0.217))


def run_ex6_2(seed=0, outdir=None):
    rep = ReproReport(target="ex6-2")
    t0 = time.perf_counter()
    sys = _bundled_system("ex2_plant.json")
    dominant = []
    for name, rho_want, margin_want in _EX62_ROWS:
        ctl = _bundled_controller(name)
        spec = compute_roots(assemble_closed_loop(sys, ctl, reduce=True))
        rep.add(f"{name}: delay-free abscissa (tol 1e-2)", f"{rho_want}",
                _fmt(spec.abscissa), _close(spec.abscissa, rho_want, 1e-2))
        m = delay_margin(sys, ctl, tau_hi=0.4)
        rep.add(f"{name}: delay margin (tol 5e-3)", f"{margin_want}",
                f"{m.value:.6g}", m.crossing_found and _close(m.value, margin_want, 5e-3))
        dominant.extend(r.value for r in spec.roots[:3])
    rep.elapsed = time.perf_counter() - t0
    _roots_artifacts(rep, outdir, "ex6_2_dominant_roots", dominant)
    return rep


TARGETS = {
    "ex3-1": run_ex3_1,
    "ex3-2": run_ex3_2,
    "ex3-3": run_ex3_3,
    "motivating": run_motivating,
    "ex6-1": run_ex6_1,
    "ex6-2": run_ex6_2,
}


def run_target(name, seed=0, outdir=None) -> ReproReport:
    if name not in TARGETS:
        raise ValidationError(
            f"unknown repro target '{name}'; choose from {sorted(TARGETS)} or 'all'")
    return TARGETS[name](seed=seed, outdir=outdir)


def run_all(seed=0, outdir=None):
    return [TARGETS[name](seed=seed, outdir=outdir) for name in TARGETS]

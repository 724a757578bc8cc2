import json

import numpy as np
import pytest

import tdpid
from tdpid.repro import data_path


def _bundled(name):
    return json.loads(data_path(name).read_text())


@pytest.fixture(scope="session")
def plant_nonmin():
    """Third-order non-minimum-phase SISO plant (delay-free by default)."""
    return tdpid.load_system(_bundled("ex1_plant.json"))


@pytest.fixture(scope="session")
def ctl_classical():
    return tdpid.load_controller(_bundled("ex1_classical.json"))


@pytest.fixture(scope="session")
def ctl_filtered():
    return tdpid.load_controller(_bundled("ex1_filtered.json"))


@pytest.fixture(scope="session")
def plant_second_order():
    """Unstable 2-state SISO plant stabilizable only with derivative action."""
    return tdpid.load_system(_bundled("ex2_plant.json"))


@pytest.fixture(scope="session")
def plant_input_delay():
    """Third-order plant with input delay 0.2."""
    return tdpid.load_system(_bundled("motivating_plant.json"))


@pytest.fixture(scope="session")
def ctl_fixed_filter():
    return tdpid.load_controller(_bundled("motivating_fixed_filter.json"))


@pytest.fixture(scope="session")
def ctl_codesigned():
    return tdpid.load_controller(_bundled("motivating_codesign.json"))


def random_stable_loop(rng, with_delay=True, require_stable=True, max_tries=200):
    """Random small plant + PD/PID controller; optionally resample until the
    reduced closed loop is comfortably stable."""
    for _ in range(max_tries):
        n = int(rng.integers(1, 4))
        A0 = rng.normal(0.0, 1.0, (n, n))
        shift = max(np.linalg.eigvals(A0).real.max(), 0.0) + rng.uniform(0.3, 1.5)
        A0 = A0 - shift * np.eye(n)
        B = rng.normal(0.0, 1.0, (n, 1))
        C = rng.normal(0.0, 1.0, (1, n))
        terms = ()
        if with_delay and rng.uniform() < 0.5:
            # delays land on a 0.01 grid so the simulator can share a step
            tau1 = round(float(rng.uniform(0.1, 0.6)), 2)
            terms = ((tau1, 0.3 * rng.normal(0.0, 1.0, (n, n))),)
        tau0 = round(float(rng.uniform(0.05, 0.5)), 2) if with_delay else 0.0
        if terms and abs(tau0 - terms[0][0]) < 1e-12:
            tau0 += 0.01
        sys = tdpid.DelaySystem(A0=A0, B=B, C=C, state_terms=terms, tau0=tau0)
        ctl = tdpid.PIDFilterController(
            Kp=[[float(rng.normal(0.0, 0.3))]],
            Ki=[[float(rng.normal(0.0, 0.2))]],
            Kd=[[float(rng.normal(0.0, 0.2))]],
            T=float(rng.uniform(0.05, 0.5)))
        cl = tdpid.assemble_closed_loop(sys, ctl, reduce=True)
        try:
            rho = tdpid.spectral_abscissa(cl)
        except tdpid.ComputationError:
            continue
        if not np.isfinite(rho):
            continue
        if require_stable and not rho < -0.01:
            continue
        return sys, ctl, cl, rho
    raise RuntimeError("could not draw a suitable random loop")


@pytest.fixture(scope="session")
def repro_reports():
    """All bundled case-study reports, computed once (used by acceptance)."""
    import time

    from tdpid.repro import run_all

    t0 = time.perf_counter()
    reports = run_all(seed=0)
    elapsed = time.perf_counter() - t0
    return {rep.target: rep for rep in reports}, elapsed

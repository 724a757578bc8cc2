"""Derivatives of characteristic roots and of the spectral abscissa.

For a simple root s of det M(s) = 0 with left/right null vectors u, v,

    ds/dtheta = -(u^H dM/dtheta v) / (u^H dM/ds v),

where theta ranges over the entries of Kp, Ki, Kd and the filter constant T.
Gradients are reported for Re(s) in a fixed flattening order: row-major
vec(Kp), vec(Ki), vec(Kd), then T; this order is stable across releases.
Entries whose state block was dropped by reduced assembly are exactly zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ComputationError
from .model import ClosedLoopSystem
from .spectrum import (Spectrum, SpectrumOptions, char_matrix,
                       char_matrix_derivative, _cexp, _null_vectors)

__all__ = [
    "RootSensitivity",
    "AbscissaSubgradient",
    "root_gradient",
    "abscissa_subgradient",
    "parameter_count",
    "parameter_labels",
]

# twice the Newton tolerance: real-part ties below this are indistinguishable
DEFAULT_TIE_TOL = 1e-6


def parameter_count(m, p):
    return 3 * m * p + 1


def parameter_labels(m, p):
    labels = []
    for name in ("Kp", "Ki", "Kd"):
        labels.extend(f"{name}[{i},{j}]" for i in range(m) for j in range(p))
    labels.append("T")
    return labels


@dataclass
class RootSensitivity:
    root: complex
    left_vector: np.ndarray
    right_vector: np.ndarray
    gradient: np.ndarray        # d Re(s) / d[vec Kp, vec Ki, vec Kd, T]
    simple: bool


@dataclass
class AbscissaSubgradient:
    gradient: np.ndarray
    nonsmooth: bool
    active_root: complex
    simple: bool


def root_gradient(cl: ClosedLoopSystem, s: complex,
                  opts: SpectrumOptions | None = None) -> RootSensitivity:
    """Gradient of Re(s) at a (refined, simple) characteristic root s.

    A near-zero u^H M'(s) v marks the root non-simple; the gradient is then
    returned as NaN with simple=False and callers must fall back to sampling.
    """
    opts = opts or SpectrumOptions()
    rng = np.random.default_rng(opts.seed)
    M = char_matrix(cl, s)
    u, v = _null_vectors(M, rng)
    den = np.vdot(u, char_matrix_derivative(cl, s) @ v)
    nparam = parameter_count(cl.system.m, cl.system.p)
    if abs(den) < 1e-10 * max(np.linalg.norm(cl.E), 1.0):
        return RootSensitivity(root=s, left_vector=u, right_vector=v,
                               gradient=np.full(nparam, np.nan), simple=False)

    sysm, ctl = cl.system, cl.controller
    n, m, p = sysm.n, sysm.m, sysm.p
    expo = _cexp(-sysm.tau0 * s)
    ux = np.conj(u[:n])
    uB = ux @ sysm.B                       # u^H B, length m
    Cv = sysm.C @ v[:n]                    # C v,   length p

    # dM/dK_ij = -(B e_i e_j^T [C | I | I]) e^(-tau0 s) embedded per block
    dKp = -expo * np.outer(uB, Cv)
    if cl.has_integrator:
        dKi = -expo * np.outer(uB, v[cl.w_slice])
    else:
        dKi = np.zeros((m, p), dtype=complex)
    if cl.has_filter:
        vz = v[cl.z_slice]
        uz = np.conj(u[cl.z_slice])
        dKd = -expo * np.outer(uB, vz)
        # dM/dT = s T^-2 (block z,x: C) - T^-2 (block z,z: I)
        dT = (s * (uz @ (sysm.C @ v[:n])) - uz @ vz) / ctl.T ** 2
    else:
        dKd = np.zeros((m, p), dtype=complex)
        dT = 0.0

    ds = -np.concatenate([dKp.ravel(), dKi.ravel(), dKd.ravel(), [dT]]) / den
    return RootSensitivity(root=s, left_vector=u, right_vector=v,
                           gradient=ds.real.astype(float), simple=True)


def abscissa_subgradient(cl: ClosedLoopSystem, spec: Spectrum,
                         tie_tol: float = DEFAULT_TIE_TOL,
                         opts: SpectrumOptions | None = None) -> AbscissaSubgradient:
    """Gradient of the spectral abscissa from its rightmost active root.

    Smooth case: a unique simple real root or unique simple conjugate pair is
    active (pair members share the Re-gradient by symmetry).  Ties within
    tie_tol, or a non-simple active root, set nonsmooth=True; the returned
    gradient then belongs to one active root only.
    """
    if not spec.roots:
        raise ComputationError("no characteristic roots above the search floor")
    rmax = spec.abscissa
    active = [r.value for r in spec.roots if r.value.real >= rmax - tie_tol]
    # conjugate pairs are one smooth eigenvalue branch; count upper-half reps
    reps = [s for s in active if s.imag >= 0.0]
    rep = max(reps, key=lambda z: z.real)
    sens = root_gradient(cl, rep, opts=opts)
    nonsmooth = len(reps) > 1 or not sens.simple
    return AbscissaSubgradient(gradient=sens.gradient, nonsmooth=nonsmooth,
                               active_root=rep, simple=sens.simple)

"""Plant, controller and closed-loop data types.

A plant is a linear time-invariant system with discrete state delays and a
single input delay,

    x'(t) = A0 x(t) + sum_k Ak x(t - tau_k) + B u(t - tau0),
    y(t)  = C x(t),

controlled by a PID law whose derivative action runs through a first-order
low-pass filter with time constant T,

    u(t) = Kp y(t) + Ki w(t) + Kd z(t),      w' = y,   T z' + z = y'.

Gains enter the loop with a plus sign; for a conventional negative-feedback
design pass negated gain matrices.

``assemble_closed_loop`` eliminates u and y and returns the extended-state
closed loop on xi = [x; w; z], described by the blocks (E, M0, delayed
blocks) of the characteristic matrix

    M(s) = s E - M0 - sum_j D_j exp(-tau_j s).

E is unit lower block triangular by construction, hence invertible, and the
assembled loop is always of retarded type.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError

__all__ = [
    "DelaySystem",
    "PIDFilterController",
    "ClosedLoopSystem",
    "ValidationReport",
    "assemble_closed_loop",
    "validate_system",
    "validate_controller",
    "load_system",
    "load_controller",
    "system_to_dict",
    "controller_to_dict",
    "with_input_delay",
]


def _matrix(value, name):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name} is not a numeric matrix: {exc}") from None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValidationError(f"{name} must be a 2-d matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DelaySystem:
    """Plant data. Construction is permissive; see :func:`validate_system`."""

    A0: np.ndarray
    B: np.ndarray
    C: np.ndarray
    state_terms: tuple = ()
    tau0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "A0", _matrix(self.A0, "A0"))
        object.__setattr__(self, "B", _matrix(self.B, "B"))
        object.__setattr__(self, "C", _matrix(self.C, "C"))
        terms = tuple((float(tau), _matrix(Ak, f"A(tau={tau})"))
                      for tau, Ak in self.state_terms)
        object.__setattr__(self, "state_terms", terms)
        object.__setattr__(self, "tau0", float(self.tau0))

    @property
    def n(self):
        return self.A0.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]


@dataclass(frozen=True)
class PIDFilterController:
    """PID gain matrices plus the derivative filter constant T > 0."""

    Kp: np.ndarray
    Ki: np.ndarray
    Kd: np.ndarray
    T: float

    def __post_init__(self):
        object.__setattr__(self, "Kp", _matrix(self.Kp, "Kp"))
        object.__setattr__(self, "Ki", _matrix(self.Ki, "Ki"))
        object.__setattr__(self, "Kd", _matrix(self.Kd, "Kd"))
        object.__setattr__(self, "T", float(self.T))

    @property
    def omega_c(self):
        """Filter cut-off frequency 1/T."""
        return 1.0 / self.T

    @classmethod
    def zero(cls, m, p, T=1.0):
        z = np.zeros((m, p))
        return cls(Kp=z, Ki=z, Kd=z, T=T)

    def with_T(self, T):
        return replace(self, T=T)


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.issues

    def __bool__(self):
        return self.ok

    def __str__(self):
        return "valid" if self.ok else "; ".join(self.issues)


def validate_system(sys: DelaySystem) -> ValidationReport:
    """Check the structural invariants of a plant; empty report means valid."""
    issues = []
    n, m, p = sys.n, sys.m, sys.p
    if sys.A0.shape != (n, n):
        issues.append(f"A0 must be square, got {sys.A0.shape}")
    if sys.B.shape[0] != n:
        issues.append(f"dimension mismatch B: {sys.B.shape[0]} rows, state dimension {n}")
    if sys.C.shape[1] != n:
        issues.append(f"dimension mismatch C: {sys.C.shape[1]} columns, state dimension {n}")
    prev = 0.0
    for k, (tau, Ak) in enumerate(sys.state_terms):
        if tau <= 0:
            issues.append(f"negative delay: state delay #{k} is {tau} (must be > 0)")
        elif tau <= prev:
            issues.append(f"state delays must be strictly increasing (#{k} = {tau})")
        prev = tau
        if Ak.shape != (n, n):
            issues.append(f"dimension mismatch A(tau={tau}): {Ak.shape} != ({n}, {n})")
        if not np.all(np.isfinite(Ak)):
            issues.append(f"non-finite entries in A(tau={tau})")
    if sys.tau0 < 0:
        issues.append(f"negative delay: tau0 = {sys.tau0}")
    for name, mat in (("A0", sys.A0), ("B", sys.B), ("C", sys.C)):
        if not np.all(np.isfinite(mat)):
            issues.append(f"non-finite entries in {name}")
    if not np.isfinite(sys.tau0):
        issues.append("tau0 is not finite")
    return ValidationReport(issues)


def validate_controller(sys: DelaySystem, ctl: PIDFilterController) -> ValidationReport:
    """Check a controller against a plant's input/output dimensions."""
    issues = []
    m, p = sys.m, sys.p
    for name, mat in (("Kp", ctl.Kp), ("Ki", ctl.Ki), ("Kd", ctl.Kd)):
        if mat.shape != (m, p):
            issues.append(f"dimension mismatch {name}: {mat.shape} != ({m}, {p})")
        if not np.all(np.isfinite(mat)):
            issues.append(f"non-finite entries in {name}")
    if not (np.isfinite(ctl.T) and ctl.T > 0):
        issues.append(f"filter constant T must be > 0, got {ctl.T}")
    return ValidationReport(issues)


@dataclass(frozen=True)
class ClosedLoopSystem:
    """Assembled closed loop: blocks of M(s) = sE - M0 - sum_j D_j e^(-tau_j s).

    ``delayed_blocks`` holds the input-delay block and the embedded state-delay
    blocks, merged per delay value and sorted ascending; all-zero blocks are
    dropped.  ``has_integrator``/``has_filter`` record whether the w and z
    states are present (they are dropped by reduced assembly when the matching
    gain is exactly zero).
    """

    E: np.ndarray
    M0: np.ndarray
    delayed_blocks: tuple
    system: DelaySystem
    controller: PIDFilterController
    reduced: bool
    has_integrator: bool
    has_filter: bool

    @property
    def n_ext(self):
        return self.E.shape[0]

    @property
    def M1(self):
        """Input-delay gain block (folded into M0 when tau0 = 0)."""
        return _gain_block(self.system, self.controller,
                           self.n_ext, self.has_integrator, self.has_filter)

    @property
    def x_slice(self):
        return slice(0, self.system.n)

    @property
    def w_slice(self):
        n, p = self.system.n, self.system.p
        return slice(n, n + p) if self.has_integrator else slice(n, n)

    @property
    def z_slice(self):
        n, p = self.system.n, self.system.p
        start = n + (p if self.has_integrator else 0)
        return slice(start, start + p) if self.has_filter else slice(start, start)

    @property
    def delays(self):
        return tuple(tau for tau, _ in self.delayed_blocks)


def _gain_block(sys, ctl, n_ext, has_w, has_z):
    n, p = sys.n, sys.p
    M1 = np.zeros((n_ext, n_ext))
    M1[:n, :n] = sys.B @ ctl.Kp @ sys.C
    col = n
    if has_w:
        M1[:n, col:col + p] = sys.B @ ctl.Ki
        col += p
    if has_z:
        M1[:n, col:col + p] = sys.B @ ctl.Kd
    return M1


def assemble_closed_loop(sys: DelaySystem, ctl: PIDFilterController,
                         reduce: bool = False) -> ClosedLoopSystem:
    """Assemble the extended closed loop on xi = [x; w; z].

    With ``reduce=True`` the integrator states w are dropped when Ki is exactly
    zero, and the filter states z are dropped when Kd is exactly zero; the
    corresponding decoupled eigenvalues (p zeros, p copies of -1/T) then do not
    appear in the spectrum.  Duplicate delays are merged by summing blocks, a
    zero input delay is folded into M0, and all-zero blocks are dropped.
    """
    rep = validate_system(sys)
    if not rep.ok:
        raise ValidationError(f"invalid system: {rep}")
    rep = validate_controller(sys, ctl)
    if not rep.ok:
        raise ValidationError(f"invalid controller: {rep}")

    n, p = sys.n, sys.p
    has_w = (not reduce) or bool(np.any(ctl.Ki != 0))
    has_z = (not reduce) or bool(np.any(ctl.Kd != 0))
    n_ext = n + p * has_w + p * has_z
    iw = n
    iz = n + (p if has_w else 0)

    E = np.eye(n_ext)
    M0 = np.zeros((n_ext, n_ext))
    M0[:n, :n] = sys.A0
    if has_w:
        M0[iw:iw + p, :n] = sys.C
    if has_z:
        E[iz:iz + p, :n] = -sys.C / ctl.T
        M0[iz:iz + p, iz:iz + p] = -np.eye(p) / ctl.T

    blocks = {}
    for tau, Ak in sys.state_terms:
        Dk = np.zeros((n_ext, n_ext))
        Dk[:n, :n] = Ak
        blocks[tau] = blocks.get(tau, 0) + Dk
    M1 = _gain_block(sys, ctl, n_ext, has_w, has_z)
    if sys.tau0 == 0.0:
        M0 = M0 + M1
    else:
        blocks[sys.tau0] = blocks.get(sys.tau0, 0) + M1

    delayed = tuple(sorted(
        ((tau, D) for tau, D in blocks.items() if np.any(D != 0)),
        key=lambda item: item[0]))
    for mat in (E, M0) + tuple(D for _, D in delayed):
        mat.setflags(write=False)
    return ClosedLoopSystem(E=E, M0=M0, delayed_blocks=delayed,
                            system=sys, controller=ctl, reduced=reduce,
                            has_integrator=has_w, has_filter=has_z)


def with_input_delay(sys: DelaySystem, tau0: float) -> DelaySystem:
    """Copy of the plant with a different input delay."""
    return replace(sys, tau0=tau0)


# ---------------------------------------------------------------------------
# JSON ingestion.  Matrices are row-major nested arrays; unknown keys are
# rejected so typos fail loudly.

_SYSTEM_KEYS = {"A0", "B", "C", "delays", "tau0"}
_CONTROLLER_KEYS = {"Kp", "Ki", "Kd", "T"}


def _load_json(source):
    if isinstance(source, dict):
        return source
    path = Path(source)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON in {path}: {exc}") from None


def load_system(source) -> DelaySystem:
    """Build a plant from a JSON file path or an already-parsed dict."""
    data = _load_json(source)
    unknown = set(data) - _SYSTEM_KEYS
    if unknown:
        raise ValidationError(f"unknown system keys: {sorted(unknown)}")
    for key in ("A0", "B", "C"):
        if key not in data:
            raise ValidationError(f"system is missing required key '{key}'")
    terms = []
    for entry in data.get("delays", []):
        if set(entry) != {"tau", "A"}:
            raise ValidationError(f"delay entries need exactly 'tau' and 'A', got {sorted(entry)}")
        terms.append((entry["tau"], entry["A"]))
    sys = DelaySystem(A0=data["A0"], B=data["B"], C=data["C"],
                      state_terms=tuple(terms), tau0=data.get("tau0", 0.0))
    rep = validate_system(sys)
    if not rep.ok:
        raise ValidationError(f"invalid system: {rep}")
    return sys


def load_controller(source) -> PIDFilterController:
    """Build a controller from a JSON file path or dict; Ki/Kd default to zero."""
    data = _load_json(source)
    unknown = set(data) - _CONTROLLER_KEYS
    if unknown:
        raise ValidationError(f"unknown controller keys: {sorted(unknown)}")
    for key in ("Kp", "T"):
        if key not in data:
            raise ValidationError(f"controller is missing required key '{key}'")
    Kp = _matrix(data["Kp"], "Kp")
    zeros = np.zeros_like(Kp)
    return PIDFilterController(Kp=Kp, Ki=data.get("Ki", zeros),
                               Kd=data.get("Kd", zeros), T=data["T"])


def system_to_dict(sys: DelaySystem) -> dict:
    out = {"A0": sys.A0.tolist(), "B": sys.B.tolist(), "C": sys.C.tolist()}
    if sys.state_terms:
        out["delays"] = [{"tau": tau, "A": Ak.tolist()} for tau, Ak in sys.state_terms]
    if sys.tau0:
        out["tau0"] = sys.tau0
    return out


def controller_to_dict(ctl: PIDFilterController) -> dict:
    return {"Kp": ctl.Kp.tolist(), "Ki": ctl.Ki.tolist(),
            "Kd": ctl.Kd.tolist(), "T": ctl.T}

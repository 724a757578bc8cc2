"""Robustness and time-domain analysis: delay margins, stability regions in
the (T, tau0) plane, parameter root loci, and a method-of-steps simulator used
as an independent stability oracle.

All operations assemble the loop in reduced form, so PD controllers (Ki = 0)
are analyzed without the decoupled integrator root at the origin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._threads import parallel_map
from .errors import ComputationError, ValidationError
from .model import (ClosedLoopSystem, DelaySystem, PIDFilterController,
                    assemble_closed_loop, with_input_delay)
from .spectrum import SpectrumOptions, compute_roots, spectral_abscissa

__all__ = [
    "DelayMarginResult",
    "StabilityRegion",
    "RootLocus",
    "Trajectory",
    "delay_margin",
    "stability_region",
    "root_locus",
    "simulate",
]


@dataclass
class DelayMarginResult:
    value: float
    crossing_found: bool

    def __float__(self):
        return self.value


def _rho_at_tau(sys, ctl, tau0, opts):
    cl = assemble_closed_loop(with_input_delay(sys, tau0), ctl, reduce=True)
    return spectral_abscissa(cl, opts=opts)


def delay_margin(sys: DelaySystem, ctl: PIDFilterController, tau_hi: float,
                 tol: float = 1e-4, sweep_points: int = 50,
                 spectrum_opts: SpectrumOptions | None = None) -> DelayMarginResult:
    """Smallest input delay in (0, tau_hi] that destroys exponential stability.

    Coarse sweep (rho may be non-monotone in tau0, so the first crossing is
    what counts) followed by bisection to absolute tolerance ``tol``.  Returns
    tau_hi with crossing_found=False when the loop stays stable throughout.
    The loop must be stable at tau0 = 0.
    """
    if tau_hi <= 0:
        raise ValidationError(f"tau_hi must be > 0, got {tau_hi}")
    opts = spectrum_opts or SpectrumOptions()
    if _rho_at_tau(sys, ctl, 0.0, opts) >= 0:
        raise ValidationError("margin undefined: loop is unstable at tau0 = 0")

    taus = np.linspace(0.0, tau_hi, sweep_points + 1)[1:]
    rhos = parallel_map(lambda t: _rho_at_tau(sys, ctl, t, opts), taus)
    crossing = None
    for i, r in enumerate(rhos):
        if r >= 0:
            crossing = i
            break
    if crossing is None:
        return DelayMarginResult(value=tau_hi, crossing_found=False)
    lo = 0.0 if crossing == 0 else taus[crossing - 1]
    hi = taus[crossing]
    while hi - lo > tol:
        mid = (lo + hi) / 2.0
        if _rho_at_tau(sys, ctl, mid, opts) >= 0:
            hi = mid
        else:
            lo = mid
    return DelayMarginResult(value=(lo + hi) / 2.0, crossing_found=True)


@dataclass
class StabilityRegion:
    """sign(rho) over a (T, tau0) grid with marching-squares zero contours."""

    t_axis: np.ndarray
    tau_axis: np.ndarray
    rho: np.ndarray              # shape (len(t_axis), len(tau_axis)); NaN = failed
    stable: np.ndarray           # boolean grid; failures count as not stable
    boundary: list = field(default_factory=list)   # polylines [(T, tau0), ...]

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("T,tau0,rho,stable\n")
            for i, T in enumerate(self.t_axis):
                for j, tau in enumerate(self.tau_axis):
                    fh.write(f"{T:.17g},{tau:.17g},{self.rho[i, j]:.17g},"
                             f"{int(self.stable[i, j])}\n")


def stability_region(sys: DelaySystem, gains, t_range, tau_range,
                     spectrum_opts: SpectrumOptions | None = None) -> StabilityRegion:
    """Stability chart of fixed gains over filter constant and input delay.

    ``gains`` is (Kp, Ki, Kd); ``t_range``/``tau_range`` are (lo, hi, count)
    with count >= 1 and T lo > 0.  Per-point spectrum failures are marked NaN,
    excluded from the boundary, and counted unstable.
    """
    Kp, Ki, Kd = gains
    t_lo, t_hi, t_n = t_range
    tau_lo, tau_hi, tau_n = tau_range
    if t_lo <= 0:
        raise ValidationError(f"filter constants must be > 0, got lower bound {t_lo}")
    if t_n < 1 or tau_n < 1:
        raise ValidationError("grid counts must be >= 1")
    if tau_lo < 0:
        raise ValidationError(f"input delays must be >= 0, got lower bound {tau_lo}")
    t_axis = np.linspace(t_lo, t_hi, int(t_n))
    tau_axis = np.linspace(tau_lo, tau_hi, int(tau_n))
    opts = spectrum_opts or SpectrumOptions()

    def point(idx):
        i, j = idx
        ctl = PIDFilterController(Kp=Kp, Ki=Ki, Kd=Kd, T=t_axis[i])
        try:
            return _rho_at_tau(sys, ctl, tau_axis[j], opts)
        except (ComputationError, ValidationError, np.linalg.LinAlgError):
            return math.nan

    pairs = [(i, j) for i in range(len(t_axis)) for j in range(len(tau_axis))]
    values = parallel_map(point, pairs)
    rho = np.full((len(t_axis), len(tau_axis)), math.nan)
    for (i, j), v in zip(pairs, values):
        rho[i, j] = v
    stable = np.where(np.isnan(rho), False, rho < 0)
    boundary = _marching_squares(t_axis, tau_axis, rho)
    return StabilityRegion(t_axis=t_axis, tau_axis=tau_axis, rho=rho,
                           stable=stable, boundary=boundary)


def _marching_squares(xs, ys, z, level=0.0):
    """Zero-level segments of z on the grid, chained into polylines."""
    segments = []
    nx, ny = z.shape

    def interp(pa, va, pb, vb):
        t = (level - va) / (vb - va)
        return (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))

    for i in range(nx - 1):
        for j in range(ny - 1):
            corners = [(xs[i], ys[j], z[i, j]), (xs[i + 1], ys[j], z[i + 1, j]),
                       (xs[i + 1], ys[j + 1], z[i + 1, j + 1]), (xs[i], ys[j + 1], z[i, j + 1])]
            vals = [c[2] for c in corners]
            if any(math.isnan(v) for v in vals):
                continue
            idx = sum((1 << k) for k, v in enumerate(vals) if v > level)
            if idx in (0, 15):
                continue
            edges = []
            for k in range(4):
                a, b = corners[k], corners[(k + 1) % 4]
                if (a[2] > level) != (b[2] > level):
                    edges.append(interp((a[0], a[1]), a[2], (b[0], b[1]), b[2]))
            if len(edges) == 2:
                segments.append((edges[0], edges[1]))
            elif len(edges) == 4:   # saddle: split by cell-center sign
                center = sum(vals) / 4.0
                if (center > level) == (vals[0] > level):
                    segments.append((edges[0], edges[3]))
                    segments.append((edges[1], edges[2]))
                else:
                    segments.append((edges[0], edges[1]))
                    segments.append((edges[2], edges[3]))
    return _chain_segments(segments)


def _chain_segments(segments):
    def key(pt):
        return (round(pt[0], 12), round(pt[1], 12))

    remaining = list(segments)
    polylines = []
    while remaining:
        a, b = remaining.pop()
        chain = [a, b]
        grew = True
        while grew:
            grew = False
            for idx, (c, d) in enumerate(remaining):
                if key(c) == key(chain[-1]):
                    chain.append(d)
                elif key(d) == key(chain[-1]):
                    chain.append(c)
                elif key(c) == key(chain[0]):
                    chain.insert(0, d)
                elif key(d) == key(chain[0]):
                    chain.insert(0, c)
                else:
                    continue
                remaining.pop(idx)
                grew = True
                break
        polylines.append(chain)
    return polylines


@dataclass
class RootLocus:
    """Rightmost roots traced along a parameter sweep."""

    param: str
    values: np.ndarray
    traces: list                 # each trace: list of (param_value, complex root)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("param,trace_id,re,im\n")
            for tid, trace in enumerate(self.traces):
                for val, root in trace:
                    fh.write(f"{val:.17g},{tid},{root.real:.17g},{root.imag:.17g}\n")

    def abscissa_at(self, index):
        best = -math.inf
        val = self.values[index]
        for trace in self.traces:
            for v, root in trace:
                if v == val:
                    best = max(best, root.real)
        return best


def root_locus(sys: DelaySystem, ctl: PIDFilterController, param: str,
               lo: float, hi: float, count: int, k: int = 8,
               spectrum_opts: SpectrumOptions | None = None) -> RootLocus:
    """Track the k rightmost roots while tau0 or T sweeps [lo, hi].

    Traces are continuity-ordered by nearest-neighbor matching between
    consecutive sweep points; unmatched roots start new traces, and per-point
    failures leave gaps.
    """
    if param not in ("tau0", "T"):
        raise ValidationError(f"sweep parameter must be 'tau0' or 'T', got '{param}'")
    if count < 1 or hi < lo:
        raise ValidationError("invalid sweep range")
    values = np.linspace(lo, hi, int(count)) if count > 1 else np.array([lo])
    opts = spectrum_opts or SpectrumOptions()

    def at(value):
        if param == "tau0":
            loop = assemble_closed_loop(with_input_delay(sys, value), ctl, reduce=True)
        else:
            loop = assemble_closed_loop(sys, ctl.with_T(value), reduce=True)
        try:
            spec = compute_roots(loop, opts=opts)
        except ComputationError:
            return None
        return [r.value for r in spec.roots[:k]]

    columns = parallel_map(at, values)
    traces = []
    alive = {}                  # trace index -> last root
    for vi, roots in enumerate(columns):
        if roots is None:
            alive = {}
            continue
        if len(roots) > 1:
            dists = [abs(a - b) for a in roots for b in roots if a != b]
            tol = 0.5 * float(np.median(dists)) if dists else math.inf
        else:
            tol = math.inf
        assigned = {}
        taken = set()
        for root in roots:
            best_tid, best_d = None, tol
            for tid, last in alive.items():
                if tid in taken:
                    continue
                d = abs(root - last)
                if d <= best_d:
                    best_tid, best_d = tid, d
            if best_tid is None:
                traces.append([])
                best_tid = len(traces) - 1
            taken.add(best_tid)
            traces[best_tid].append((float(values[vi]), root))
            assigned[best_tid] = root
        alive = assigned
    return RootLocus(param=param, values=values, traces=traces)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray           # shape (len(times), n_ext)
    norm_log_slope: float
    diverged: bool = False

    def write_csv(self, path):
        with open(path, "w") as fh:
            comps = ",".join(f"comp_{k}" for k in range(self.states.shape[1]))
            fh.write(f"t,norm,{comps}\n")
            norms = np.linalg.norm(self.states, axis=1)
            for t, nrm, row in zip(self.times, norms, self.states):
                vals = ",".join(f"{v:.17g}" for v in row)
                fh.write(f"{t:.17g},{nrm:.17g},{vals}\n")


_OVERFLOW_NORM = 1e150


def simulate(cl: ClosedLoopSystem, phi, horizon: float, dt: float) -> Trajectory:
    """Method-of-steps integration of xi' = E^-1(M0 xi + sum_j D_j xi(t-tau_j)).

    Classical fourth-order Runge-Kutta with linear interpolation of stored
    history at half-steps.  Delays must sit on the time grid (rounded, checked
    to 1e-9 relative) and dt may not exceed the smallest delay; the initial
    function ``phi`` is either a constant vector or a callable on
    [-tau_max, 0].  The fitted exponent ``norm_log_slope`` comes from a least
    squares line through log ||xi|| over the trailing third of the horizon.
    """
    n = cl.n_ext
    taus = cl.delays
    tau_max = max(taus) if taus else 0.0
    if dt <= 0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    if horizon <= tau_max:
        raise ValidationError(f"horizon must exceed the largest delay {tau_max}")
    steps_per_tau = []
    for tau in taus:
        m = round(tau / dt)
        if m < 1:
            raise ValidationError(f"dt={dt} exceeds delay {tau}; reduce dt")
        if abs(m * dt - tau) > 1e-9 * max(tau, 1.0):
            raise ValidationError(f"dt={dt} does not divide delay {tau}")
        steps_per_tau.append(m)

    Einv_M0 = np.linalg.solve(cl.E, cl.M0)
    delayed = [(m, np.linalg.solve(cl.E, Dk))
               for m, (_, Dk) in zip(steps_per_tau, cl.delayed_blocks)]

    nsteps = int(math.ceil(horizon / dt))
    lead = max(steps_per_tau) if steps_per_tau else 0
    buf = np.zeros((lead + nsteps + 1, n))
    if callable(phi):
        for k in range(lead + 1):
            buf[k] = np.asarray(phi(-tau_max + k * dt), dtype=float)
    else:
        buf[:lead + 1] = np.asarray(phi, dtype=float)

    def hist(idx_float):
        # linear interpolation between buffer rows (half-step stage lookups)
        lo = int(math.floor(idx_float))
        frac = idx_float - lo
        if frac == 0.0:
            return buf[lo]
        return (1.0 - frac) * buf[lo] + frac * buf[lo + 1]

    def rhs(xi, idx_float):
        acc = Einv_M0 @ xi
        for m, Lk in delayed:
            acc = acc + Lk @ hist(idx_float - m)
        return acc

    diverged = False
    last = lead
    for step in range(nsteps):
        i = lead + step
        xi = buf[i]
        k1 = rhs(xi, i)
        k2 = rhs(xi + 0.5 * dt * k1, i + 0.5)
        k3 = rhs(xi + 0.5 * dt * k2, i + 0.5)
        # the i+1 history row is still unset; delayed lookups there resolve to
        # stored values because every delay is >= dt
        k4 = rhs(xi + dt * k3, i + 1.0)
        buf[i + 1] = xi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        last = i + 1
        if not np.all(np.isfinite(buf[i + 1])) or np.linalg.norm(buf[i + 1]) > _OVERFLOW_NORM:
            diverged = True
            break

    states = buf[lead:last + 1]
    times = dt * np.arange(states.shape[0])
    norms = np.maximum(np.linalg.norm(states, axis=1), 1e-300)
    tail = times >= (2.0 / 3.0) * times[-1]
    if tail.sum() >= 2 and times[-1] > 0:
        slope = float(np.polyfit(times[tail], np.log(norms[tail]), 1)[0])
    else:
        slope = math.nan
    return Trajectory(times=times, states=states, norm_log_slope=slope,
                      diverged=diverged)

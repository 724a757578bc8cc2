"""Joint minimization of the spectral abscissa over (Kp, Ki, Kd, T).

The filter-constant box T in [T_min, T_max] is handled by a linear penalty:

    rho~(K, T) = rho(K, T)                          T_min <= T <= T_max
               = rho(K, T_min) + alpha (T_min - T)  T <  T_min
               = rho(K, T_max) + alpha (T - T_max)  T >  T_max

with alpha > 0.  Local minimizers of rho~ are feasible, so an unconstrained
nonsmooth solver applies: BFGS with a weak-Wolfe bisection line search, and a
gradient-sampling fallback that certifies approximate stationarity when the
line search stalls (the spectral abscissa is nonsmooth wherever rightmost
roots tie, which is typical at minimizers).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from .errors import ComputationError, ValidationError
from .model import DelaySystem, PIDFilterController, assemble_closed_loop
from .sensitivity import abscissa_subgradient, parameter_count
from .spectrum import SpectrumOptions, compute_roots

__all__ = [
    "PenaltyConfig",
    "MinimizeOptions",
    "MinimizeResult",
    "OptimizationResult",
    "WindowResult",
    "pack_params",
    "unpack_params",
    "penalized_abscissa",
    "PenalizedObjective",
    "minimize",
    "design_filtered_pid",
    "refine_T_window",
    "check_gradient",
]


@dataclass
class PenaltyConfig:
    """Admissible filter window and penalty slope (alpha=None: set at solve time)."""

    T_min: float
    T_max: float
    alpha: float | None = None

    def __post_init__(self):
        if not (0 < self.T_min <= self.T_max):
            raise ValidationError(f"need 0 < T_min <= T_max, got [{self.T_min}, {self.T_max}]")
        if self.alpha is not None and self.alpha <= 0:
            raise ValidationError(f"penalty slope alpha must be > 0, got {self.alpha}")


@dataclass
class MinimizeOptions:
    max_iter: int = 200
    grad_tol: float = 1e-6
    seed: int = 0
    # weak-Wolfe line search
    c1: float = 1e-4
    c2: float = 0.5
    ls_max: int = 40
    # gradient sampling fallback
    gs_trigger: int = 5
    gs_radius: float = 1e-2
    gs_shrink: float = 0.5
    gs_min_radius: float = 1e-8
    # multi-start
    starts: int = 1
    perturb_sigma: float = 0.1


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    iterations: int
    grad_norm_final: float
    status: str                  # converged | max_iter | nonsmooth_stall
    history: list = field(default_factory=list)


@dataclass
class OptimizationResult:
    params: PIDFilterController
    rho: float
    iterations: int
    grad_norm_final: float
    status: str                  # converged | max_iter | nonsmooth_stall | infeasible_start
    history: list = field(default_factory=list)
    spectrum: object = None      # diagnostic spectrum for infeasible starts


@dataclass
class WindowResult:
    window: tuple
    result: OptimizationResult | None
    margin: float | None
    error: str | None = None


def pack_params(ctl: PIDFilterController) -> np.ndarray:
    """Flatten to [vec Kp, vec Ki, vec Kd, T] (row-major, fixed order)."""
    return np.concatenate([ctl.Kp.ravel(), ctl.Ki.ravel(), ctl.Kd.ravel(), [ctl.T]])


def unpack_params(x, m, p) -> PIDFilterController:
    x = np.asarray(x, dtype=float)
    if x.size != parameter_count(m, p):
        raise ValidationError(f"parameter vector has {x.size} entries, expected {parameter_count(m, p)}")
    mp = m * p
    return PIDFilterController(Kp=x[:mp].reshape(m, p),
                               Ki=x[mp:2 * mp].reshape(m, p),
                               Kd=x[2 * mp:3 * mp].reshape(m, p),
                               T=float(x[-1]))


class PenalizedObjective:
    """Value/gradient bundle for rho~ over the flat parameter vector.

    The spectrum is always taken on the reduced assembly so that integrator or
    filter states frozen at zero gain never contribute spurious roots.  For
    the inner evaluation T is clamped into the window per the penalty formula,
    so the assembled loop never sees T <= 0.
    """

    def __init__(self, sys: DelaySystem, cfg: PenaltyConfig,
                 spectrum_opts: SpectrumOptions | None = None):
        if cfg.alpha is None:
            raise ValidationError("penalty slope alpha is unset; pass a concrete value")
        self.sys = sys
        self.cfg = cfg
        self.spectrum_opts = spectrum_opts or SpectrumOptions()
        self._memo_key = None
        self._memo = None

    def _clamped(self, x):
        T = x[-1]
        Tc = min(max(T, self.cfg.T_min), self.cfg.T_max)
        ctl = unpack_params(np.concatenate([x[:-1], [Tc]]), self.sys.m, self.sys.p)
        return ctl, T, Tc

    def _spectrum(self, ctl):
        # line searches evaluate value and gradient at the same point
        key = (ctl.Kp.tobytes(), ctl.Ki.tobytes(), ctl.Kd.tobytes(), ctl.T)
        if key != self._memo_key:
            cl = assemble_closed_loop(self.sys, ctl, reduce=True)
            self._memo = (cl, compute_roots(cl, opts=self.spectrum_opts))
            self._memo_key = key
        return self._memo

    def value(self, x):
        ctl, T, Tc = self._clamped(x)
        _, spec = self._spectrum(ctl)
        rho = spec.abscissa
        if T < self.cfg.T_min:
            rho += self.cfg.alpha * (self.cfg.T_min - T)
        elif T > self.cfg.T_max:
            rho += self.cfg.alpha * (T - self.cfg.T_max)
        return rho

    def gradient(self, x):
        ctl, T, Tc = self._clamped(x)
        cl, spec = self._spectrum(ctl)
        sub = abscissa_subgradient(cl, spec, opts=self.spectrum_opts)
        g = np.array(sub.gradient, dtype=float)
        if T < self.cfg.T_min:
            g[-1] = -self.cfg.alpha
        elif T > self.cfg.T_max:
            g[-1] = self.cfg.alpha
        nonsmooth = sub.nonsmooth or not sub.simple
        if not np.all(np.isfinite(g)):
            g = np.zeros_like(g)
            nonsmooth = True
        return g, nonsmooth


def penalized_abscissa(sys: DelaySystem, params, cfg: PenaltyConfig,
                       spectrum_opts: SpectrumOptions | None = None) -> float:
    """rho~ at a flat parameter vector [vec Kp, vec Ki, vec Kd, T]."""
    return PenalizedObjective(sys, cfg, spectrum_opts).value(np.asarray(params, dtype=float))


# ---------------------------------------------------------------------------
# nonsmooth quasi-Newton solver


def _min_norm_convex_combination(G):
    """Smallest-norm point of the convex hull of the rows of G (NNLS trick)."""
    k, n = G.shape
    big = 1e5 * max(1.0, float(np.max(np.abs(G))))
    A = np.vstack([G.T, np.full((1, k), big)])
    b = np.zeros(n + 1)
    b[-1] = big
    lam, _ = scipy.optimize.nnls(A, b)
    total = lam.sum()
    if total <= 0:
        return G.mean(axis=0)
    return (lam / total) @ G


def _weak_wolfe(objective, gradient, x, f0, g0, d, opts):
    """Bisection line search; nonfinite or non-decreasing steps are halved."""
    g0d = float(g0 @ d)
    lo, hi = 0.0, math.inf
    t = 1.0
    best = None
    for _ in range(opts.ls_max):
        fx = objective(x + t * d)
        if not np.isfinite(fx) or fx > f0 + opts.c1 * t * g0d:
            hi = t
        else:
            gx, ns = gradient(x + t * d)
            best = (t, fx, gx, ns)
            if float(gx @ d) < opts.c2 * g0d:
                lo = t
            else:
                return best
        t = (lo + hi) / 2.0 if np.isfinite(hi) else 2.0 * lo
        if hi - lo < 1e-16 * max(1.0, lo):
            break
    return best  # Armijo-only point or None


def _gradient_sampling(objective, gradient, x, f, opts, rng, free):
    """One gradient-sampling descent attempt with shrinking radius.

    Returns (x, f, outcome) with outcome in {progress, certificate, stall}.
    """
    dim = int(free.sum())
    radius = opts.gs_radius * (1.0 + np.linalg.norm(x[free]))
    while radius >= opts.gs_min_radius:
        grads = []
        g0, _ = gradient(x)
        grads.append(g0[free])
        for _ in range(2 * dim + 1):
            pert = np.zeros_like(x)
            step = rng.standard_normal(dim)
            norm = np.linalg.norm(step)
            if norm == 0:
                continue
            pert[free] = radius * rng.uniform(0, 1) ** (1.0 / dim) * step / norm
            gi, _ = gradient(x + pert)
            if np.all(np.isfinite(gi)):
                grads.append(gi[free])
        gmin = _min_norm_convex_combination(np.array(grads))
        if np.linalg.norm(gmin) <= opts.grad_tol:
            return x, f, "certificate"
        d = np.zeros_like(x)
        d[free] = -gmin / np.linalg.norm(gmin)
        t = radius
        for _ in range(20):
            fx = objective(x + t * d)
            if np.isfinite(fx) and fx < f - opts.c1 * t * np.linalg.norm(gmin):
                return x + t * d, fx, "progress"
            t /= 2.0
        radius *= opts.gs_shrink
    return x, f, "stall"


def minimize(objective, gradient, x0, opts: MinimizeOptions | None = None,
             free_mask=None) -> MinimizeResult:
    """Locally minimize a nonsmooth objective with BFGS + gradient sampling.

    ``gradient`` must return (vector, nonsmooth_flag).  Coordinates where
    ``free_mask`` is False are frozen at their initial values.  Accepted
    objective values are nonincreasing.
    """
    opts = opts or MinimizeOptions()
    x = np.asarray(x0, dtype=float).copy()
    free = np.ones(x.size, dtype=bool) if free_mask is None else np.asarray(free_mask, bool)
    rng = np.random.default_rng(opts.seed)

    f = objective(x)
    if not np.isfinite(f):
        raise ValidationError("objective is not finite at the starting point")
    g, _ = gradient(x)
    g = np.where(free, g, 0.0)
    dim = int(free.sum())
    H = np.eye(x.size)
    history = [(0, float(f))]
    ls_failures = 0
    status = "max_iter"
    it = 0

    for it in range(1, opts.max_iter + 1):
        gnorm = np.linalg.norm(g[free]) if dim else 0.0
        if gnorm <= opts.grad_tol:
            status = "converged"
            break
        d = -H @ g
        d = np.where(free, d, 0.0)
        if float(d @ g) >= 0:
            H = np.eye(x.size)
            d = np.where(free, -g, 0.0)
        got = _weak_wolfe(objective, gradient, x, f, g, d, opts)
        if got is not None and got[1] < f:
            t, fx, gx, _ = got
            gx = np.where(free, gx, 0.0)
            s = t * d
            y = gx - g
            x = x + s
            f = fx
            g = gx
            history.append((it, float(f)))
            sy = float(s @ y)
            if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
                rho_ = 1.0 / sy
                I = np.eye(x.size)
                V = I - rho_ * np.outer(s, y)
                H = V @ H @ V.T + rho_ * np.outer(s, s)
            ls_failures = 0
            continue
        ls_failures += 1
        if ls_failures < opts.gs_trigger:
            H = np.eye(x.size)
            continue
        x2, f2, outcome = _gradient_sampling(objective, gradient, x, f, opts, rng, free)
        if outcome == "progress":
            x, f = x2, f2
            g, _ = gradient(x)
            g = np.where(free, g, 0.0)
            history.append((it, float(f)))
            H = np.eye(x.size)
            ls_failures = 0
        elif outcome == "certificate":
            status = "converged"
            break
        else:
            status = "nonsmooth_stall"
            break

    gnorm = float(np.linalg.norm(g[free])) if dim else 0.0
    return MinimizeResult(x=x, fun=float(f), iterations=it,
                          grad_norm_final=gnorm, status=status, history=history)


# ---------------------------------------------------------------------------
# controller-level entry points


def _free_mask(sys, init):
    """Kp and T always free; Ki/Kd free only when the init gain is nonzero
    (zero-gain blocks are dropped by reduced assembly and have no gradient)."""
    m, p = sys.m, sys.p
    mp = m * p
    mask = np.ones(parameter_count(m, p), dtype=bool)
    if not np.any(init.Ki != 0):
        mask[mp:2 * mp] = False
    if not np.any(init.Kd != 0):
        mask[2 * mp:3 * mp] = False
        mask[-1] = False     # no filter state, T has no influence
    return mask


def design_filtered_pid(sys: DelaySystem, init: PIDFilterController,
                        cfg: PenaltyConfig, opts: MinimizeOptions | None = None,
                        spectrum_opts: SpectrumOptions | None = None) -> OptimizationResult:
    """Co-design gains and filter constant by minimizing the penalized abscissa.

    The start must be strongly stabilizing: rho(init) < 0 for the filtered
    loop, with init.T inside the window.  Searching for stabilizing initial
    gains is the caller's responsibility.
    """
    opts = opts or MinimizeOptions()
    spectrum_opts = spectrum_opts or SpectrumOptions()
    if not (cfg.T_min <= init.T <= cfg.T_max):
        raise ValidationError(f"initial T={init.T} outside window [{cfg.T_min}, {cfg.T_max}]")

    cl0 = assemble_closed_loop(sys, init, reduce=True)
    spec0 = compute_roots(cl0, opts=spectrum_opts)
    rho0 = spec0.abscissa
    if not rho0 < 0:
        return OptimizationResult(params=init, rho=rho0, iterations=0,
                                  grad_norm_final=math.nan, status="infeasible_start",
                                  history=[], spectrum=spec0)

    if cfg.alpha is None:
        cfg = replace(cfg, alpha=10.0 * (1.0 + abs(rho0)))
    obj = PenalizedObjective(sys, cfg, spectrum_opts)
    x0 = pack_params(init)
    mask = _free_mask(sys, init)

    best = None
    rng = np.random.default_rng(opts.seed)
    for start in range(max(opts.starts, 1)):
        xs = x0.copy()
        if start > 0:
            pert = opts.perturb_sigma * (1.0 + np.abs(x0)) * rng.standard_normal(x0.size)
            xs = np.where(mask, x0 + pert, x0)
            xs[-1] = min(max(xs[-1], cfg.T_min), cfg.T_max)
            if not obj.value(xs) < 0:
                continue
        run = minimize(obj.value, obj.gradient, xs,
                       opts=replace(opts, seed=opts.seed + start), free_mask=mask)
        if best is None or run.fun < best.fun:
            best = run
    if best is None:
        raise ComputationError("no feasible start produced a run")

    x = best.x
    status = best.status
    T = x[-1]
    if T < cfg.T_min - 1e-9 or T > cfg.T_max + 1e-9:
        if status == "converged":   # a converged point off the box contradicts the penalty
            status = "nonsmooth_stall"
    x[-1] = min(max(T, cfg.T_min), cfg.T_max)
    params = unpack_params(x, sys.m, sys.p)
    cl = assemble_closed_loop(sys, params, reduce=True)
    rho = compute_roots(cl, opts=spectrum_opts).abscissa
    return OptimizationResult(params=params, rho=rho, iterations=best.iterations,
                              grad_norm_final=best.grad_norm_final, status=status,
                              history=best.history)


def refine_T_window(sys: DelaySystem, init: PIDFilterController, windows,
                    margin_probe=None, opts: MinimizeOptions | None = None,
                    spectrum_opts: SpectrumOptions | None = None) -> list:
    """Re-run the co-design per T-window and report the achieved delay margin.

    Lets a user trade convergence rate against robustness across windows.
    Failures are recorded per window and the loop continues.
    """
    if not windows:
        raise ValidationError("need at least one T window")
    if margin_probe is None:
        from .analysis import delay_margin

        def margin_probe(system, ctl):
            return delay_margin(system, ctl, tau_hi=1.0,
                                spectrum_opts=spectrum_opts).value

    results = []
    for lo, hi in windows:
        try:
            cfg = PenaltyConfig(T_min=lo, T_max=hi)
            start = init.with_T(min(max(init.T, lo), hi))
            res = design_filtered_pid(sys, start, cfg, opts=opts,
                                      spectrum_opts=spectrum_opts)
            margin = None
            if res.status != "infeasible_start":
                margin = margin_probe(sys, res.params)
            results.append(WindowResult(window=(lo, hi), result=res, margin=margin))
        except (ValidationError, ComputationError) as exc:
            results.append(WindowResult(window=(lo, hi), result=None,
                                        margin=None, error=str(exc)))
    return results


def check_gradient(sys: DelaySystem, ctl: PIDFilterController, cfg: PenaltyConfig,
                   step: float = 1e-6,
                   spectrum_opts: SpectrumOptions | None = None):
    """Central finite-difference audit of the analytic gradient at ctl.

    Returns (max_relative_error, analytic, numeric) over the free coordinates.
    Coordinates far below the gradient scale are compared absolutely (their
    quotient would only measure finite-difference noise).
    """
    if cfg.alpha is None:
        cfg = replace(cfg, alpha=10.0)
    obj = PenalizedObjective(sys, cfg, spectrum_opts)
    x = pack_params(ctl)
    g, _ = obj.gradient(x)
    mask = _free_mask(sys, ctl)
    num = np.zeros_like(g)
    for j in np.nonzero(mask)[0]:
        e = np.zeros_like(x)
        e[j] = step
        num[j] = (obj.value(x + e) - obj.value(x - e)) / (2 * step)
    scale = np.max(np.abs(num[mask])) if mask.any() else 1.0
    denom = np.maximum(np.abs(num), 1e-3 * (1.0 + scale))
    rel = np.abs(g - num)[mask] / denom[mask]
    return float(rel.max()), g, num

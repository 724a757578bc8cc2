"""Characteristic roots and spectral abscissa of assembled closed loops.

Matrix route: the retarded system xi' = E^-1 M0 xi + sum_j E^-1 D_j xi(t-tau_j)
is discretized by pseudospectral collocation of its infinitesimal generator on
Chebyshev extreme points over [-tau_max, 0].  Eigenvalues of the resulting
dense matrix approximate the rightmost characteristic roots; each candidate is
then Newton-refined on the nonlinear eigenvalue problem M(s) v = 0 using
approximate left/right null vectors, and certified through the smallest
singular value of M at the accepted root.  The collocation degree doubles
until the rightmost refined roots stop moving.

Scalar route: ``scan_scalar`` locates zeros of an arbitrary holomorphic
characteristic function on a rectangle from sign changes of its real and
imaginary parts on a grid, polishes them by Newton's method, and validates the
count against the argument principle along the rectangle boundary.  It serves
as an independent oracle for the matrix route and covers neutral-type
characteristic functions that have no retarded state-space form.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ComputationError, ValidationError
from .model import ClosedLoopSystem

__all__ = [
    "SpectrumOptions",
    "Root",
    "Spectrum",
    "ScalarQuasiPolynomial",
    "Rect",
    "char_matrix",
    "char_matrix_derivative",
    "compute_roots",
    "spectral_abscissa",
    "default_search_floor",
    "scan_scalar",
]

# exp(-tau*s) overflows past this; such points are far left of any search
# floor we admit, so the term is evaluated as 0 to keep arithmetic finite
_EXP_LIMIT = 700.0

_FLOOR_CLIP = -100.0


def _cexp(z):
    if z.real > _EXP_LIMIT:
        return 0.0
    return np.exp(z)


@dataclass
class SpectrumOptions:
    """Knobs for the matrix root computation.

    degree doubles (up to max_degree) until the ``stable_count`` rightmost
    refined roots move by less than ``stable_tol`` between levels.
    """

    degree: int = 30
    max_degree: int = 160
    adaptive: bool = True
    refine_tol: float = 1e-10
    residual_tol: float = 1e-8
    dedupe_tol: float = 1e-7
    max_newton: int = 25
    stable_count: int = 10
    stable_tol: float = 1e-8
    seed: int = 0


@dataclass
class Root:
    value: complex
    residual: float
    refined: bool


@dataclass
class Spectrum:
    """Computed roots with Re >= search_floor, sorted rightmost first."""

    roots: list
    abscissa: float
    search_floor: float
    discretization_degree: int
    converged: bool
    dropped: int = 0

    @property
    def values(self):
        return np.array([r.value for r in self.roots])

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("re,im,residual,refined\n")
            for r in self.roots:
                fh.write(f"{r.value.real:.17g},{r.value.imag:.17g},"
                         f"{r.residual:.17g},{int(r.refined)}\n")


def char_matrix(cl: ClosedLoopSystem, s: complex) -> np.ndarray:
    """M(s) = sE - M0 - sum_j D_j exp(-tau_j s)."""
    M = s * cl.E.astype(complex) - cl.M0
    for tau, Dk in cl.delayed_blocks:
        M -= Dk * _cexp(-tau * s)
    return M


def char_matrix_derivative(cl: ClosedLoopSystem, s: complex) -> np.ndarray:
    """dM/ds = E + sum_j tau_j D_j exp(-tau_j s)."""
    M = cl.E.astype(complex).copy()
    for tau, Dk in cl.delayed_blocks:
        M += tau * Dk * _cexp(-tau * s)
    return M


def default_search_floor(cl: ClosedLoopSystem) -> float:
    """-1/min(tau) - ||E^-1 M0||, clipped at -100; -inf for delay-free loops."""
    taus = cl.delays
    if not taus:
        return -math.inf
    norm = np.linalg.norm(np.linalg.solve(cl.E, cl.M0), 2)
    return max(-1.0 / min(taus) - norm, _FLOOR_CLIP)


def _cheb_nodes_diff(N):
    # Chebyshev extreme points on [-1, 1] (descending) and differentiation matrix
    j = np.arange(N + 1)
    x = np.cos(np.pi * j / N)
    c = np.hstack([2.0, np.ones(N - 1), 2.0]) * (-1.0) ** j
    X = np.tile(x, (N + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    return x, D


def _generator_matrix(cl, N):
    """Collocation matrix of the solution-operator generator on [-tau_max, 0]."""
    n = cl.n_ext
    taus = cl.delays
    tau_max = max(taus)
    x, D = _cheb_nodes_diff(N)
    theta = tau_max * (x - 1.0) / 2.0          # theta[0] = 0 ... theta[N] = -tau_max
    Dt = D * (2.0 / tau_max)
    L0 = np.linalg.solve(cl.E, cl.M0)
    G = np.zeros((n * (N + 1), n * (N + 1)))
    G[n:, :] = np.kron(Dt[1:, :], np.eye(n))
    G[:n, :n] += L0
    # barycentric weights of Chebyshev extreme points
    w = np.ones(N + 1)
    w[0] = w[-1] = 0.5
    w *= (-1.0) ** np.arange(N + 1)
    for tau, Dk in cl.delayed_blocks:
        Lk = np.linalg.solve(cl.E, Dk)
        diff = -tau - theta
        hit = np.abs(diff) <= 1e-14 * max(tau_max, 1.0)
        if hit.any():
            ell = np.zeros(N + 1)
            ell[int(np.argmax(hit))] = 1.0
        else:
            q = w / diff
            ell = q / q.sum()
        for i in np.nonzero(ell)[0]:
            G[:n, n * i:n * (i + 1)] += Lk * ell[i]
    return G


def _null_vectors(M, rng):
    """Approximate left/right null vectors via two inverse-iteration steps."""
    n = M.shape[0]
    try:
        with warnings.catch_warnings(), np.errstate(all="ignore"):
            warnings.simplefilter("ignore")
            lu = scipy.linalg.lu_factor(M)
            v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            for _ in range(2):
                v = scipy.linalg.lu_solve(lu, v)
                v /= np.linalg.norm(v)
            u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            for _ in range(2):
                u = scipy.linalg.lu_solve(lu, u, trans=2)
                u /= np.linalg.norm(u)
        if np.all(np.isfinite(u)) and np.all(np.isfinite(v)):
            return u, v
    except (scipy.linalg.LinAlgError, ValueError):
        pass
    # exactly singular or ill-posed LU: fall back to singular vectors
    U, _, Vh = np.linalg.svd(M)
    return U[:, -1], Vh[-1].conj()


def _relative_smin(M):
    try:
        svals = np.linalg.svd(M, compute_uv=False)
    except np.linalg.LinAlgError:
        return math.inf
    if svals[0] == 0:
        return 0.0
    return float(svals[-1] / svals[0])


def _refine_root(cl, s0, opts):
    """Newton on s with correction -(u^H M v)/(u^H M' v); returns (s, residual, ok)."""
    rng = np.random.default_rng(opts.seed)
    s = complex(s0)
    for _ in range(opts.max_newton):
        M = char_matrix(cl, s)
        if not np.all(np.isfinite(M)):
            return s, math.inf, False
        u, v = _null_vectors(M, rng)
        den = np.vdot(u, char_matrix_derivative(cl, s) @ v)
        if abs(den) < 1e-300:
            return s, math.inf, False
        ds = -np.vdot(u, M @ v) / den
        s += ds
        if not np.isfinite(s) or abs(s) > 1e12:
            return s, math.inf, False
        if abs(ds) < opts.refine_tol:
            res = _relative_smin(char_matrix(cl, s))
            return s, res, res <= opts.residual_tol
    return s, math.inf, False


def _snap_and_mirror(root_list, opts):
    """Snap near-real roots to the axis and mirror complex ones to exact pairs."""
    out = []
    for s, res in root_list:
        if abs(s.imag) <= opts.dedupe_tol:
            out.append((complex(s.real, 0.0), res))
        else:
            s = complex(s.real, abs(s.imag))
            out.append((s, res))
            out.append((s.conjugate(), res))
    return out


def _dedupe(root_list, tol):
    kept = []
    for s, res in sorted(root_list, key=lambda item: (item[0].real, item[0].imag, item[1])):
        dup = False
        for i, (t, tres) in enumerate(kept):
            if abs(s - t) < tol:
                dup = True
                if res < tres:
                    kept[i] = (s, res)
                break
        if not dup:
            kept.append((s, res))
    return kept


def _sort_key(s):
    return (-s.real, abs(s.imag), -s.imag)


def _refine_candidates(cl, candidates, floor, opts):
    refined = []
    dropped = 0
    for s0 in candidates:
        s, res, ok = _refine_root(cl, s0, opts)
        if ok and s.real >= floor - 10 * opts.dedupe_tol:
            refined.append((s, res))
        else:
            dropped += 1
    roots = _dedupe(_snap_and_mirror(refined, opts), opts.dedupe_tol)
    roots = [(s, res) for s, res in roots if s.real >= floor]
    roots.sort(key=lambda item: _sort_key(item[0]))
    return roots, dropped


def _agrees(prev, cur, opts):
    # the stopping rule watches the rightmost stable_count refined roots only;
    # an inserted or moved root shifts positions and breaks the pairing
    if (len(prev) == 0) != (len(cur) == 0):
        return False
    k = min(opts.stable_count, len(prev), len(cur))
    if k < min(opts.stable_count, max(len(prev), len(cur))):
        return False
    return all(abs(prev[i][0] - cur[i][0]) < opts.stable_tol for i in range(k))


def compute_roots(cl: ClosedLoopSystem, search_floor=None,
                  opts: SpectrumOptions | None = None) -> Spectrum:
    """All characteristic roots with Re(s) >= search_floor, Newton-refined.

    Delay-free loops reduce to the dense generalized eigenvalue problem of
    (E, M0); otherwise collocation supplies the candidates.  converged=False
    signals that the adaptive degree loop hit its cap before the rightmost
    roots stabilized.
    """
    opts = opts or SpectrumOptions()
    if search_floor is None:
        search_floor = default_search_floor(cl)
    if not (np.isfinite(search_floor) or search_floor == -math.inf):
        raise ValidationError(f"search floor must be finite or -inf, got {search_floor}")

    if not cl.delayed_blocks:
        try:
            vals = scipy.linalg.eig(cl.M0, cl.E, right=False)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise ComputationError(f"dense eigensolver failed: {exc}") from None
        cand = [complex(v) for v in vals if np.isfinite(v) and v.imag >= -1e-12]
        roots, dropped = _refine_candidates(cl, cand, search_floor, opts)
        return _make_spectrum(roots, search_floor, 0, True, dropped)

    slack = 0.05 * (1.0 + abs(search_floor)) if np.isfinite(search_floor) else 0.0
    N = opts.degree
    prev = None
    dropped = 0
    while True:
        G = _generator_matrix(cl, N)
        try:
            raw = np.linalg.eigvals(G)
        except np.linalg.LinAlgError as exc:
            raise ComputationError(f"collocation eigensolver failed: {exc}") from None
        cand = [complex(v) for v in raw
                if v.real >= search_floor - slack and v.imag >= -1e-12]
        roots, dropped = _refine_candidates(cl, cand, search_floor, opts)
        if prev is not None and _agrees(prev, roots, opts):
            return _make_spectrum(roots, search_floor, N, True, dropped)
        if not opts.adaptive or N >= opts.max_degree:
            converged = not opts.adaptive
            return _make_spectrum(roots, search_floor, N, converged, dropped)
        prev = roots
        N = min(2 * N, opts.max_degree)


def _make_spectrum(roots, floor, degree, converged, dropped):
    abscissa = max((s.real for s, _ in roots), default=-math.inf)
    return Spectrum(
        roots=[Root(value=s, residual=res, refined=True) for s, res in roots],
        abscissa=abscissa, search_floor=floor,
        discretization_degree=degree, converged=converged, dropped=dropped)


def spectral_abscissa(cl: ClosedLoopSystem, opts: SpectrumOptions | None = None,
                      search_floor=None) -> float:
    """max Re(s) over the dominant spectrum; negative iff exponentially stable.

    Returns -inf when no root lies right of the search floor.
    """
    return compute_roots(cl, search_floor=search_floor, opts=opts).abscissa


# ---------------------------------------------------------------------------
# scalar quasi-polynomial scanner


@dataclass
class ScalarQuasiPolynomial:
    """Holomorphic characteristic function Delta(s), optionally with Delta'."""

    evaluator: object
    derivative_evaluator: object = None


@dataclass
class Rect:
    re_min: float
    re_max: float
    im_min: float
    im_max: float

    def __post_init__(self):
        if not (self.re_min < self.re_max and self.im_min < self.im_max):
            raise ValidationError(f"degenerate rectangle: {self}")

    @property
    def scale(self):
        return max(abs(self.re_min), abs(self.re_max),
                   abs(self.im_min), abs(self.im_max), 1.0)


def _eval_grid(qp, Z):
    try:
        F = np.asarray(qp.evaluator(Z), dtype=complex)
        if F.shape == Z.shape:
            return F
    except Exception:
        pass
    return np.array([[complex(qp.evaluator(z)) for z in row] for row in Z])


def _polish(qp, s, scale):
    for _ in range(80):
        fs = complex(qp.evaluator(s))
        if qp.derivative_evaluator is not None:
            fp = complex(qp.derivative_evaluator(s))
        else:
            h = 1e-6 * max(1.0, abs(s))
            fp = (complex(qp.evaluator(s + h)) - complex(qp.evaluator(s - h))) / (2 * h)
        if fp == 0 or not np.isfinite(fp):
            return s, False
        ds = -fs / fp
        s += ds
        if not np.isfinite(s) or abs(s) > 1e6 * scale:
            return s, False
        if abs(ds) <= 1e-13 * max(1.0, abs(s)):
            return s, True
    return s, False


def _winding_number(qp, rect, samples_per_edge):
    """Winding of Delta along the rectangle boundary = number of interior zeros."""
    corners = [complex(rect.re_min, rect.im_min), complex(rect.re_max, rect.im_min),
               complex(rect.re_max, rect.im_max), complex(rect.re_min, rect.im_max),
               complex(rect.re_min, rect.im_min)]
    pts = []
    for a, b in zip(corners[:-1], corners[1:]):
        t = np.linspace(0.0, 1.0, samples_per_edge, endpoint=False)
        pts.extend(a + (b - a) * t)
    pts.append(pts[0])
    vals = [complex(qp.evaluator(z)) for z in pts]
    total = 0.0
    for i in range(len(pts) - 1):
        total += _arg_increment(qp, pts[i], pts[i + 1], vals[i], vals[i + 1], depth=0)
    return int(round(total / (2 * np.pi)))


def _arg_increment(qp, za, zb, fa, fb, depth):
    if fa == 0 or fb == 0 or not (np.isfinite(fa) and np.isfinite(fb)):
        raise ComputationError("characteristic function vanishes on the scan boundary")
    d = np.angle(fb / fa)
    if abs(d) < np.pi / 2 or depth >= 24:
        return d
    zm = (za + zb) / 2
    fm = complex(qp.evaluator(zm))
    return (_arg_increment(qp, za, zm, fa, fm, depth + 1)
            + _arg_increment(qp, zm, zb, fm, fb, depth + 1))


def scan_scalar(qp: ScalarQuasiPolynomial, rect: Rect,
                grid_step: float | None = None, max_refine: int = 2) -> list:
    """Zeros of Delta inside ``rect``, assuming simple roots.

    Candidate cells are those where both Re(Delta) and Im(Delta) change sign
    among the four corners; candidates are Newton-polished and deduplicated.
    The count is checked against the argument principle; on mismatch the grid
    is refined twice (x2 each time) before giving up with an error.
    """
    if grid_step is not None and grid_step <= 0:
        raise ValidationError(f"grid_step must be > 0, got {grid_step}")
    width = rect.re_max - rect.re_min
    height = rect.im_max - rect.im_min
    if grid_step is None:
        grid_step = max(width, height) / 400.0

    expected = _winding_number(qp, rect, samples_per_edge=512)
    step = grid_step
    for attempt in range(max_refine + 1):
        nre = max(int(np.ceil(width / step)), 8)
        nim = max(int(np.ceil(height / step)), 8)
        re = np.linspace(rect.re_min, rect.re_max, nre + 1)
        im = np.linspace(rect.im_min, rect.im_max, nim + 1)
        RE, IM = np.meshgrid(re, im, indexing="ij")
        F = _eval_grid(qp, RE + 1j * IM)
        roots = []
        for i, j in np.argwhere(_sign_change_cells(F)):
            center = complex((re[i] + re[i + 1]) / 2, (im[j] + im[j + 1]) / 2)
            s, ok = _polish(qp, center, rect.scale)
            if ok and (rect.re_min - 1e-9 <= s.real <= rect.re_max + 1e-9
                       and rect.im_min - 1e-9 <= s.imag <= rect.im_max + 1e-9):
                roots.append(s)
        out = []
        for s in sorted(roots, key=lambda z: (z.real, z.imag)):
            if not any(abs(s - t) < 1e-7 for t in out):
                out.append(s)
        if len(out) == expected:
            return out
        step /= 2.0
    raise ComputationError(
        f"root count mismatch: argument principle expects {expected}, "
        f"located {len(out)} after {max_refine} refinements")


def _sign_change_cells(F):
    sr = np.sign(F.real)
    si = np.sign(F.imag)

    def mixed(sgn):
        a, b = sgn[:-1, :-1], sgn[1:, :-1]
        c, d = sgn[:-1, 1:], sgn[1:, 1:]
        mn = np.minimum(np.minimum(a, b), np.minimum(c, d))
        mx = np.maximum(np.maximum(a, b), np.maximum(c, d))
        return (mn <= 0) & (mx >= 0)

    return mixed(sr) & mixed(si)

"""Homotopy path tracking and solution-set assembly.

A homotopy here is always ``H(x, s) = gamma (1 - s) F(x) + s G(x)`` tracked
from ``s = 0`` (solutions of ``F`` known) to ``s = 1``. The total-degree
solve uses a start system for ``F``; the parameter homotopy uses the system at
the generic parameter point with ``gamma = 1``.
"""

from __future__ import annotations

import logging
import math
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .polysys import FixedSystem

log = logging.getLogger(__name__)

STATUS_NAMES = {kernels.CONVERGED: "converged", kernels.DIVERGED: "diverged",
                kernels.STEP_FAILURE: "step_failure"}

DEDUP_TOL = 1e-8
GAMMA_BAND = 0.01
BLOCK = 4096


@dataclass(frozen=True)
class TrackOptions:
    dt_init: float = 0.05
    dt_min: float = 1e-7
    dt_max: float = 0.1
    newton_tol: float = 1e-10
    newton_max_iter: int = 8
    divergence_norm: float = 1e8
    endgame_t: float = 0.99
    refine_tol: float = 1e-12
    refine_max_iter: int = 20
    cond_max: float = 1e12

    def __post_init__(self):
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max < 1:
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max < 1")
        for name in ("newton_tol", "divergence_norm", "refine_tol", "cond_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.endgame_t < 1:
            raise ValueError("endgame_t must lie in (0, 1)")
        if self.newton_max_iter < 1 or self.refine_max_iter < 1:
            raise ValueError("iteration limits must be at least 1")

    def as_array(self) -> np.ndarray:
        v = np.zeros(kernels.N_OPTS)
        v[kernels.OPT_DT_INIT] = self.dt_init
        v[kernels.OPT_DT_MIN] = self.dt_min
        v[kernels.OPT_DT_MAX] = self.dt_max
        v[kernels.OPT_NEWTON_TOL] = self.newton_tol
        v[kernels.OPT_NEWTON_MAX_ITER] = self.newton_max_iter
        v[kernels.OPT_DIV_NORM] = self.divergence_norm
        v[kernels.OPT_ENDGAME_T] = self.endgame_t
        v[kernels.OPT_COND_MAX] = self.cond_max
        v[kernels.OPT_REFINE_TOL] = self.refine_tol
        v[kernels.OPT_REFINE_MAX_ITER] = self.refine_max_iter
        return v


@dataclass
class PathResult:
    status: str
    endpoint: np.ndarray | None
    steps_taken: int
    final_residual: float
    suspect_singular: bool = False
    condition: float = math.inf
    last_point: np.ndarray | None = field(default=None, repr=False)


@dataclass
class Solution:
    point: np.ndarray
    multiplicity_flag: str = "regular"
    condition: float = 1.0
    path_index: int = -1
    hits: int = 1


@dataclass
class SolutionSet:
    solutions: list[Solution]
    n_paths_tracked: int
    n_converged: int
    n_diverged: int
    n_failed: int

    def __len__(self):
        return len(self.solutions)

    def points(self) -> np.ndarray:
        if not self.solutions:
            return np.zeros((0, 0), dtype=np.complex128)
        return np.array([s.point for s in self.solutions])


# ---------------------------------------------------------------- start systems

def generic_gamma(rng: np.random.Generator) -> complex:
    """Uniform on the unit circle, avoiding a band around the real axis."""
    while True:
        theta = rng.uniform(-math.pi, math.pi)
        if min(abs(theta), math.pi - abs(theta)) > GAMMA_BAND:
            return complex(math.cos(theta), math.sin(theta))


class StartPoints(Sequence):
    """Lazy list of all root combinations of ``x_i**d_i = b_i``.

    Point ``p`` takes root ``digit_i`` of coordinate ``i`` where the digits are
    ``p`` written in mixed radix ``degrees`` (last coordinate fastest).
    """

    def __init__(self, degrees: Sequence[int], b: np.ndarray):
        self.degrees = np.asarray(degrees, dtype=np.int64)
        self.b = np.asarray(b, dtype=np.complex128)
        self.roots = [
            abs(bi) ** (1.0 / d) * np.exp(1j * (np.angle(bi) + 2 * np.pi * np.arange(d)) / d)
            for bi, d in zip(self.b, self.degrees)]
        self._n = math.prod(int(d) for d in self.degrees)

    def __len__(self):
        return self._n

    def digits(self, p: int) -> list[int]:
        out = []
        for d in reversed(self.degrees.tolist()):
            out.append(p % d)
            p //= d
        return out[::-1]

    def point(self, p: int) -> np.ndarray:
        if not 0 <= p < self._n:
            raise IndexError(p)
        return np.array([r[k] for r, k in zip(self.roots, self.digits(p))],
                        dtype=np.complex128)

    def __getitem__(self, p):
        if isinstance(p, slice):
            return self.take(range(*p.indices(self._n)))
        return self.point(int(p))

    def take(self, indices: Iterable[int]) -> np.ndarray:
        idx = list(indices)
        out = np.empty((len(idx), len(self.degrees)), dtype=np.complex128)
        for row, p in enumerate(idx):
            out[row] = self.point(p)
        return out


def total_degree_start(n_vars: int, degrees: Sequence[int], seed: int,
                       b: Sequence[complex] | None = None):
    """Start system ``x_i**d_i - b_i`` and its ``prod d_i`` solutions.

    ``b`` defaults to generic unit-modulus constants drawn from ``seed``.
    """
    degrees = [int(d) for d in degrees]
    if len(degrees) != n_vars:
        raise ValueError("need one degree per variable")
    if min(degrees) < 1:
        raise ValueError("degrees must be at least 1")
    if b is None:
        rng = np.random.default_rng([seed, 0])
        b = np.exp(1j * rng.uniform(0, 2 * np.pi, n_vars))
    b = np.asarray(b, dtype=np.complex128)
    eqs = []
    for i, d in enumerate(degrees):
        e = [0] * n_vars
        e[i] = d
        eqs.append({tuple(e): 1.0, (0,) * n_vars: -b[i]})
    return FixedSystem(eqs, n_vars), StartPoints(degrees, b)


# ---------------------------------------------------------------- homotopy

class LinearHomotopy:
    """``H(x, s) = gamma (1 - s) start(x) + s target(x)``.

    Terms of both systems are merged on (equation, monomial) so each
    evaluation visits every monomial once.
    """

    def __init__(self, start: FixedSystem, target: FixedSystem, gamma: complex = 1.0):
        if start.n_vars != target.n_vars or start.n_eqs != target.n_eqs:
            raise ValueError("start and target systems differ in shape")
        if target.n_eqs != target.n_vars:
            raise ValueError("homotopy needs a square system")
        self.start = start
        self.target = target
        self.gamma = complex(gamma)
        n = target.n_vars
        deg = max(start.slots.shape[1], target.slots.shape[1])

        def padded(sys):
            s = np.full((sys.slots.shape[0], deg), n, dtype=np.int64)
            s[:, :sys.slots.shape[1]] = sys.slots
            s.sort(axis=1)
            return s

        keys: dict[tuple, int] = {}
        slots, eq, ca, cb = [], [], [], []
        for sys, which in ((start, 0), (target, 1)):
            ps = padded(sys)
            for t in range(len(sys.eq)):
                key = (int(sys.eq[t]), *ps[t].tolist())
                if key not in keys:
                    keys[key] = len(slots)
                    slots.append(ps[t])
                    eq.append(sys.eq[t])
                    ca.append(0j)
                    cb.append(0j)
                i = keys[key]
                if which == 0:
                    ca[i] += sys.coef[t]
                else:
                    cb[i] += sys.coef[t]
        self.slots = np.ascontiguousarray(np.array(slots, dtype=np.int64).reshape(-1, deg))
        self.eq = np.asarray(eq, dtype=np.int64)
        self.c_start = np.asarray(ca, dtype=np.complex128)
        self.c_target = np.asarray(cb, dtype=np.complex128)

    @property
    def n_vars(self) -> int:
        return self.target.n_vars

    def residual(self, x, s: float) -> np.ndarray:
        coef = self.gamma * (1 - s) * self.c_start + s * self.c_target
        f, _, _, _ = kernels.eval2(np.asarray(x, dtype=np.complex128), self.slots, self.eq,
                                coef, np.zeros_like(coef), self.n_vars)
        return f


def _track_chunk(args):
    slots, eq, ca, cb, gamma, starts, opts = args
    m = starts.shape[0]
    n = starts.shape[1]
    status = np.zeros(m, dtype=np.int64)
    ends = np.zeros((m, n), dtype=np.complex128)
    steps = np.zeros(m, dtype=np.int64)
    resid = np.zeros(m)
    flags = np.zeros(m, dtype=np.int64)
    conds = np.zeros(m)
    kernels.track_batch(slots, eq, ca, cb, gamma, np.ascontiguousarray(starts), opts,
                        status, ends, steps, resid, flags, conds)
    return status, ends, steps, resid, flags, conds


def _pool(workers: int):
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
    return ProcessPoolExecutor(max_workers=workers, mp_context=ctx)


def track_paths(hom: LinearHomotopy, starts: np.ndarray, opts: TrackOptions | None = None,
                workers: int = 1, chunk: int | None = None) -> list[PathResult]:
    """Track each row of ``starts``; results come back in row order.

    Paths are split into chunks (by default about four per worker, at most
    64 paths each) that run in separate processes when ``workers > 1``.
    """
    opts = opts or TrackOptions()
    starts = np.ascontiguousarray(np.atleast_2d(np.asarray(starts, dtype=np.complex128)))
    if starts.shape[1] != hom.n_vars:
        raise ValueError("start points have the wrong dimension")
    oa = opts.as_array()
    if chunk is None:
        chunk = max(1, min(64, -(-len(starts) // (4 * workers))))
    pieces = [starts[i:i + chunk] for i in range(0, len(starts), chunk)]
    jobs = [(hom.slots, hom.eq, hom.c_start, hom.c_target, hom.gamma, p, oa) for p in pieces]
    if workers > 1 and len(jobs) > 1:
        with _pool(workers) as ex:
            outs = list(ex.map(_track_chunk, jobs))
    else:
        outs = [_track_chunk(j) for j in jobs]
    results = []
    for status, ends, steps, resid, flags, conds in outs:
        for k in range(len(status)):
            name = STATUS_NAMES[int(status[k])]
            results.append(PathResult(
                status=name,
                endpoint=ends[k].copy() if name == "converged" else None,
                steps_taken=int(steps[k]),
                final_residual=float(resid[k]),
                suspect_singular=bool(flags[k]),
                condition=float(conds[k]),
                last_point=ends[k].copy(),
            ))
    return results


def track_path(hom: LinearHomotopy, x0, opts: TrackOptions | None = None) -> PathResult:
    """Track one path from ``x0`` (a solution at s = 0) to s = 1."""
    return track_paths(hom, np.asarray(x0, dtype=np.complex128)[None, :], opts)[0]


# ---------------------------------------------------------------- endpoints

@dataclass
class RefineResult:
    x: np.ndarray
    converged: bool
    suspect_singular: bool
    residual: float
    condition: float


def refine(target: FixedSystem, x, tol: float = 1e-12, max_iter: int = 20) -> RefineResult:
    """Newton-polish ``x`` on ``target``.

    ``converged`` is False when the residual did not drop below
    ``tol * (1 + |x|_inf)`` within ``max_iter`` steps.
    """
    x = np.array(x, dtype=np.complex128).reshape(-1)
    xr, ok, resid, linear, cond = kernels.refine_core(
        target.slots, target.eq, target.coef, x, tol, max_iter)
    return RefineResult(xr, bool(ok), bool(linear or cond > kernels.SINGULAR_COND),
                        float(resid), float(cond))


def _close(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    scale = 1.0 + max(np.max(np.abs(a)), np.max(np.abs(b)))
    return bool(np.max(np.abs(a - b)) <= tol * scale)


def assemble(results: Sequence[PathResult], tol: float = DEDUP_TOL,
             indices: Sequence[int] | None = None) -> SolutionSet:
    """Deduplicate converged endpoints, keeping first-hit order."""
    sols: list[Solution] = []
    n_conv = n_div = n_fail = 0
    for k, r in enumerate(results):
        if r.status == "diverged":
            n_div += 1
            continue
        if r.status != "converged":
            n_fail += 1
            continue
        n_conv += 1
        for s in sols:
            if _close(s.point, r.endpoint, tol):
                s.hits += 1
                if s.multiplicity_flag == "regular":
                    s.multiplicity_flag = "suspect_singular"
                break
        else:
            sols.append(Solution(
                point=r.endpoint,
                multiplicity_flag="suspect_singular" if r.suspect_singular else "regular",
                condition=r.condition,
                path_index=indices[k] if indices is not None else k,
            ))
    return SolutionSet(sols, len(results), n_conv, n_div, n_fail)


def total_degree_homotopy(target: FixedSystem, seed: int = 42):
    """Gamma-trick homotopy from the seeded total-degree start system to the
    row-normalized ``target``. Returns ``(homotopy, start points)``."""
    if target.n_eqs != target.n_vars:
        raise ValueError("target system must be square")
    degrees = target.degrees
    if min(degrees) < 1:
        raise ValueError("every equation needs a nonconstant term")
    start, points = total_degree_start(target.n_vars, degrees, seed)
    gamma = generic_gamma(np.random.default_rng([seed, 1]))
    scaled = target.scaled(target.row_scales())
    return LinearHomotopy(start, scaled, gamma), points


def solve_total_degree(target: FixedSystem, seed: int = 42, opts: TrackOptions | None = None,
                       workers: int = 1, sample: Sequence[int] | None = None) -> SolutionSet:
    """All isolated finite solutions of a square system by total-degree homotopy.

    ``sample`` restricts tracking to the given start-point indices.
    """
    opts = opts or TrackOptions()
    hom, points = total_degree_homotopy(target, seed)
    indices = range(len(points)) if sample is None else [int(i) for i in sample]
    results: list[PathResult] = []
    for lo in range(0, len(indices), BLOCK):
        block = indices[lo:lo + BLOCK]
        results.extend(_slim(track_paths(hom, points.take(block), opts, workers), target, opts))
    return assemble(results, indices=indices)


def _slim(results: list[PathResult], target: FixedSystem, opts: TrackOptions) -> list[PathResult]:
    """Polish converged endpoints on the unscaled ``target`` (tracking ran on
    the row-normalized one) and drop the points of other paths to keep memory
    flat on huge runs."""
    for r in results:
        r.last_point = None
        if r.endpoint is not None:
            pol = refine(target, r.endpoint, opts.refine_tol, opts.refine_max_iter)
            if pol.converged:
                r.endpoint = pol.x
            r.final_residual = float(np.max(np.abs(target.evaluate(r.endpoint))))
    return results


def classify_real(sols: SolutionSet, tau_real: float = 1e-6, target: FixedSystem | None = None,
                  back_map=None, tol: float = 1e-12):
    """Split solutions into (real points, nonreal points).

    A point is real iff every coordinate has ``|Im| < tau_real``. Real points
    get their imaginary parts zeroed and, when ``target`` is given, one more
    Newton polish. ``back_map`` (optional) maps points to full coordinates.
    """
    real, nonreal = [], []
    for s in sols.solutions:
        p = s.point
        if np.max(np.abs(p.imag), initial=0.0) < tau_real:
            x = p.real.astype(np.complex128)
            if target is not None:
                r = refine(target, x, tol)
                if r.converged:
                    x = r.x
            x = x.real.astype(np.complex128)
            real.append(back_map(x) if back_map else x)
        else:
            nonreal.append(back_map(p) if back_map else p)
    real = [np.real(x) for x in real]
    return real, nonreal

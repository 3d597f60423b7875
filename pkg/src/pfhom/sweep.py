"""Real-solution counts over a parameter grid, boundary edges, and maps.

A boundary edge joins two 4-neighbour grid cells whose real-solution counts
differ. Edges can be sharpened by bisection along the segment between the
two cell centres.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .paramhom import StartCache, count_real
from .polysys import ParamPolySystem
from .tracker import TrackOptions, _pool

log = logging.getLogger(__name__)

MAX_PROBES = 40


@dataclass(frozen=True)
class SweepDim:
    name: str
    min: float
    max: float
    steps: int

    def __post_init__(self):
        if not self.min < self.max:
            raise ValueError(f"{self.name}: need min < max")
        if self.steps < 2:
            raise ValueError(f"{self.name}: need at least 2 steps")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.min, self.max, self.steps)


@dataclass(frozen=True)
class ParameterGrid:
    """One or two swept parameters; every other parameter is held fixed."""

    dims: tuple[SweepDim, ...]
    fixed: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        object.__setattr__(self, "fixed", tuple(dict(self.fixed).items()))
        if not 1 <= len(self.dims) <= 2:
            raise ValueError("a grid sweeps one or two parameters")
        names = [d.name for d in self.dims] + [n for n, _ in self.fixed]
        if len(set(names)) != len(names):
            raise ValueError("a parameter is both swept and fixed, or listed twice")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dims[0].steps, self.dims[1].steps if len(self.dims) > 1 else 1)

    def coords(self, i: int, j: int) -> tuple[float, ...]:
        out = (float(self.dims[0].values[i]),)
        if len(self.dims) > 1:
            out += (float(self.dims[1].values[j]),)
        return out

    def lambda_at(self, params: Sequence[str], coords: Sequence[float]) -> np.ndarray:
        """Full parameter vector (ordered like ``params``) at swept ``coords``."""
        vals = dict(self.fixed)
        vals.update({d.name: c for d, c in zip(self.dims, coords)})
        missing = [p for p in params if p not in vals]
        if missing:
            raise ValueError(f"no value for parameters {missing}; fix them with --fix")
        unknown = sorted(set(vals) - set(params))
        if unknown:
            raise ValueError(f"grid names unknown parameters {unknown}")
        return np.array([vals[p] for p in params], dtype=float)

    def points(self):
        """``(i, j)`` in row-major order (parameter 2 fastest)."""
        n1, n2 = self.shape
        return [(i, j) for i in range(n1) for j in range(n2)]


def boundary_edges(counts: np.ndarray) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """All 4-neighbour cell pairs with different counts, in scan order."""
    counts = np.asarray(counts)
    n1, n2 = counts.shape
    out = []
    for i in range(n1):
        for j in range(n2):
            if i + 1 < n1 and counts[i, j] != counts[i + 1, j]:
                out.append(((i, j), (i + 1, j)))
            if j + 1 < n2 and counts[i, j] != counts[i, j + 1]:
                out.append(((i, j), (i, j + 1)))
    return out


@dataclass
class CountGrid:
    grid: ParameterGrid
    counts: np.ndarray
    diverged: np.ndarray
    failed: np.ndarray
    boundary_edges: list = field(default=None)

    def __post_init__(self):
        if self.boundary_edges is None:
            self.boundary_edges = boundary_edges(self.counts)

    def histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(self.counts.ravel().tolist()).items()))


# ---------------------------------------------------------------- sweeping

_WORK: dict = {}


def _count_points(chunk):
    sys, cache, grid, tau, opts = (_WORK[k] for k in ("sys", "cache", "grid", "tau", "opts"))
    out = []
    for i, j in chunk:
        lam = grid.lambda_at(sys.params, grid.coords(i, j))
        try:
            r = count_real(sys, cache, lam, tau, opts)
            out.append((r.k_real, r.set.n_diverged, r.set.n_failed))
        except Exception as exc:  # never let one point abort the sweep
            log.warning("grid point (%d, %d) failed: %s", i, j, exc)
            out.append((0, 0, len(cache.solutions)))
    return out


def run_sweep(sys: ParamPolySystem, cache: StartCache, grid: ParameterGrid,
              workers: int = 1, tau_real: float = 1e-6,
              opts: TrackOptions | None = None, chunk: int = 16) -> CountGrid:
    """Real-solution count at every grid point.

    Points are independent; output arrays are filled by index so the result
    does not depend on ``workers``.
    """
    if workers < 1:
        raise ValueError("workers must be positive")
    grid.lambda_at(sys.params, grid.coords(0, 0))  # fail fast on bad names
    pts = grid.points()
    chunks = [pts[k:k + chunk] for k in range(0, len(pts), chunk)]
    _WORK.update(sys=sys, cache=cache, grid=grid, tau=tau_real, opts=opts)
    try:
        if workers > 1 and len(chunks) > 1:
            with _pool(workers) as ex:
                results = list(ex.map(_count_points, chunks))
        else:
            results = [_count_points(c) for c in chunks]
    finally:
        _WORK.clear()
    shape = grid.shape
    counts = np.zeros(shape, dtype=np.int64)
    div = np.zeros(shape, dtype=np.int64)
    fail = np.zeros(shape, dtype=np.int64)
    for c, res in zip(chunks, results):
        for (i, j), (k, d, f) in zip(c, res):
            counts[i, j], div[i, j], fail[i, j] = k, d, f
    return CountGrid(grid, counts, div, fail)


# ---------------------------------------------------------------- edge refinement

@dataclass
class EdgeRefinement:
    point: np.ndarray
    bracket: tuple[np.ndarray, np.ndarray]
    counts: tuple[int, int]
    probes: int
    anomaly: bool
    converged: bool


def bisect_edge(count: Callable[[np.ndarray], int], a, b, count_a: int, count_b: int,
                tol: float, max_probes: int = MAX_PROBES) -> EdgeRefinement:
    """Bisect the segment ``a``-``b`` for the count change.

    A probe whose count matches neither end is an anomaly (more than one
    fold inside the segment); the search stops and reports the first
    bracketing half. Final brackets whose counts differ by more than two are
    flagged as well, since one generic fold changes the count by two.
    """
    if count_a == count_b:
        raise ValueError("edge endpoints have equal counts; nothing to refine")
    if not tol > 0:
        raise ValueError("tol must be positive")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    probes = 0
    anomaly = False
    while np.linalg.norm(b - a) >= tol and probes < max_probes:
        m = 0.5 * (a + b)
        cm = count(m)
        probes += 1
        if cm == count_a:
            a = m
        elif cm == count_b:
            b = m
        else:
            anomaly = True
            b, count_b = m, cm
            break
    converged = bool(np.linalg.norm(b - a) < tol)
    anomaly = anomaly or abs(count_a - count_b) > 2
    return EdgeRefinement(0.5 * (a + b), (a, b), (count_a, count_b), probes, anomaly, converged)


def refine_edge(sys: ParamPolySystem, cache: StartCache, cgrid: CountGrid, edge,
                tol: float = 1e-4, tau_real: float = 1e-6,
                opts: TrackOptions | None = None) -> EdgeRefinement:
    """Locate the count change on one boundary edge by bisection; every probe
    is a full :func:`count_real` call."""
    (ia, ja), (ib, jb) = edge
    ca, cb = int(cgrid.counts[ia, ja]), int(cgrid.counts[ib, jb])
    grid = cgrid.grid
    a = np.array(grid.coords(ia, ja))
    b = np.array(grid.coords(ib, jb))

    def count(p):
        return count_real(sys, cache, grid.lambda_at(sys.params, p), tau_real, opts).k_real

    return bisect_edge(count, a, b, ca, cb, tol)


# ---------------------------------------------------------------- output

def _num(v: float) -> str:
    return repr(float(v))


def emit_maps(cgrid: CountGrid, basename: str | Path,
              refined: dict | None = None) -> list[Path]:
    """Write ``<base>_counts.csv``, ``<base>_counts.pgm`` and
    ``<base>_boundary.csv``; ``refined`` maps edges to :class:`EdgeRefinement`."""
    base = str(basename)
    grid = cgrid.grid
    names = [d.name for d in grid.dims]
    n1, n2 = grid.shape

    rows = [",".join(["i", "j", *names, "count", "n_diverged", "n_failed"])]
    for i, j in grid.points():
        rows.append(",".join([str(i), str(j), *map(_num, grid.coords(i, j)),
                              str(cgrid.counts[i, j]), str(cgrid.diverged[i, j]),
                              str(cgrid.failed[i, j])]))
    counts_csv = Path(base + "_counts.csv")
    counts_csv.write_text("\n".join(rows) + "\n", encoding="ascii")

    # P2 needs a positive maxval; an all-zero map is written with maxval 1
    maxval = max(int(cgrid.counts.max()), 1)
    lines = ["P2", f"{n1} {n2}", str(maxval)]
    for j in range(n2):  # first image row is the smallest value of parameter 2
        lines.append(" ".join(str(cgrid.counts[i, j]) for i in range(n1)))
    pgm = Path(base + "_counts.pgm")
    pgm.write_text("\n".join(lines) + "\n", encoding="ascii")

    head = ["i_a", "j_a", "i_b", "j_b", "count_a", "count_b"]
    head += [f"{n}_boundary" for n in names] + ["anomaly"]
    rows = [",".join(head)]
    refined = refined or {}
    for edge in cgrid.boundary_edges:
        (ia, ja), (ib, jb) = edge
        row = [str(ia), str(ja), str(ib), str(jb),
               str(cgrid.counts[ia, ja]), str(cgrid.counts[ib, jb])]
        ref = refined.get(edge)
        if ref is None:
            row += [""] * len(names) + [""]
        else:
            row += [_num(v) for v in ref.point] + [str(int(ref.anomaly))]
        rows.append(",".join(row))
    bnd = Path(base + "_boundary.csv")
    bnd.write_text("\n".join(rows) + "\n", encoding="ascii")
    return [counts_csv, pgm, bnd]


def parse_sweep_spec(text: str) -> SweepDim:
    """``NAME=MIN:MAX:STEPS``."""
    try:
        name, rng = text.split("=", 1)
        lo, hi, steps = rng.split(":")
        return SweepDim(name.strip(), float(lo), float(hi), int(steps))
    except ValueError as exc:
        raise ValueError(f"bad sweep spec {text!r} (want NAME=MIN:MAX:STEPS): {exc}") from None


def parse_fix_spec(text: str) -> tuple[str, float]:
    """``NAME=VALUE``."""
    try:
        name, val = text.split("=", 1)
        v = float(val)
    except ValueError:
        raise ValueError(f"bad fix spec {text!r} (want NAME=VALUE)") from None
    if not math.isfinite(v):
        raise ValueError(f"bad fix spec {text!r}: value must be finite")
    return name.strip(), v

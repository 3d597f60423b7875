"""Two-stage parameter homotopy.

Stage one solves the system once at a random complex parameter point
``lambda*`` with a total-degree homotopy. Stage two moves those finite
solutions to any other parameter value along the straight coefficient path
``(1 - s) P(x, lambda*) + s P(x, lambda)``, which never needs more paths
than stage one found roots.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .polysys import BackSubstitution, ParamPolySystem, eliminate_slack, instantiate
from .tracker import (BLOCK, DEDUP_TOL, LinearHomotopy, PathResult, SolutionSet, TrackOptions,
                      assemble, classify_real, generic_gamma, refine,
                      total_degree_homotopy, track_paths)

log = logging.getLogger(__name__)

CACHE_TOL = 1e-10


class StaleCacheError(ValueError):
    """The cache was built from a different polynomial system."""


# ---------------------------------------------------------------- JSON helpers

def _cjson(z) -> list[float]:
    z = complex(z)
    return [z.real, z.imag]


def _cvec(v) -> list[list[float]]:
    return [_cjson(z) for z in np.asarray(v).reshape(-1)]


def _from_cvec(rows) -> np.ndarray:
    return np.array([complex(re, im) for re, im in rows], dtype=np.complex128)


@dataclass(frozen=True)
class StartCache:
    """Finite solutions at ``lambda_star`` in full coordinates."""

    lambda_star: np.ndarray
    solutions: tuple[np.ndarray, ...]
    seed: int
    system_hash: int
    bound_used: int

    def to_json(self) -> str:
        doc = {
            "lambda_star": _cvec(self.lambda_star),
            "solutions": [_cvec(x) for x in self.solutions],
            "seed": int(self.seed),
            "system_hash": int(self.system_hash),
            "bound_used": int(self.bound_used),
        }
        return json.dumps(doc, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "StartCache":
        doc = json.loads(text)
        return cls(
            lambda_star=_from_cvec(doc["lambda_star"]),
            solutions=tuple(_from_cvec(x) for x in doc["solutions"]),
            seed=int(doc["seed"]),
            system_hash=int(doc["system_hash"]),
            bound_used=int(doc["bound_used"]),
        )

    def max_residual(self, sys: ParamPolySystem) -> float:
        """Largest residual of a cached point on ``sys`` at ``lambda_star``."""
        fixed = instantiate(sys, self.lambda_star)
        return max((float(np.max(np.abs(fixed.evaluate(x)))) for x in self.solutions),
                   default=0.0)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "StartCache":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def draw_lambda_star(m: int, seed: int) -> np.ndarray:
    """Complex point with real and imaginary parts uniform on [-1, 1], scaled
    by 1/sqrt(2) so every component lies in the closed unit disk."""
    rng = np.random.default_rng([seed, 2])
    a = rng.uniform(-1.0, 1.0, m)
    b = rng.uniform(-1.0, 1.0, m)
    return (a + 1j * b) / math.sqrt(2.0)


_REDUCED: dict[int, tuple[ParamPolySystem, BackSubstitution]] = {}


def reduced_system(sys: ParamPolySystem) -> tuple[ParamPolySystem, BackSubstitution]:
    """Memoized :func:`eliminate_slack`."""
    key = sys.system_hash
    if key not in _REDUCED:
        _REDUCED[key] = eliminate_slack(sys)
    return _REDUCED[key]


def _to_full(results: Sequence[PathResult], sys: ParamPolySystem, back: BackSubstitution,
             lam, opts: TrackOptions | None) -> list[PathResult]:
    """Back-substitute converged endpoints and give them a last polish on
    the unscaled full system."""
    opts = opts or TrackOptions()
    full = None
    for r in results:
        if r.endpoint is not None:
            if full is None:
                full = instantiate(sys, lam)
            x = back(r.endpoint, lam)
            pol = refine(full, x, opts.refine_tol, opts.refine_max_iter)
            if pol.converged:
                x = pol.x
            r.endpoint = x
            r.final_residual = float(np.max(np.abs(full.evaluate(x))))
        r.last_point = None
    return results


# ---------------------------------------------------------------- checkpoints

def _path_record(index: int, r: PathResult) -> dict:
    rec = {"i": index, "status": r.status, "steps": r.steps_taken,
           "resid": r.final_residual if math.isfinite(r.final_residual) else None,
           "singular": r.suspect_singular,
           "cond": r.condition if math.isfinite(r.condition) else None}
    if r.endpoint is not None:
        rec["x"] = _cvec(r.endpoint)
    return rec


def _path_from_record(rec: dict) -> PathResult:
    return PathResult(
        status=rec["status"],
        endpoint=_from_cvec(rec["x"]) if "x" in rec else None,
        steps_taken=rec["steps"],
        final_residual=math.inf if rec["resid"] is None else rec["resid"],
        suspect_singular=rec["singular"],
        condition=math.inf if rec["cond"] is None else rec["cond"],
    )


_CODES = {"converged": 0, "diverged": 1, "step_failure": 2}


def _read_checkpoint(path: Path, header: dict):
    """Header check plus records ``(index, PathResult)``; a torn last line left
    by an interrupted write is cut off the file."""
    with path.open("rb+") as fh:
        data = fh.read()
        end = data.rfind(b"\n") + 1
        if end < len(data):
            fh.truncate(end)
    lines = data[:end].decode("utf-8").splitlines()
    if not lines:
        return []
    first = json.loads(lines[0])
    if first.get("system_hash") != header["system_hash"]:
        raise StaleCacheError(
            f"checkpoint {path} belongs to system {first.get('system_hash')}, "
            f"not {header['system_hash']}")
    if first != header:
        raise ValueError(f"checkpoint {path} was written with different settings")
    return [(rec["i"], _path_from_record(rec)) for rec in map(json.loads, lines[1:])]


# ---------------------------------------------------------------- stage one

def solve_at(sys: ParamPolySystem, lam, seed: int = 42, opts: TrackOptions | None = None,
             workers: int = 1, sample: Sequence[int] | None = None,
             checkpoint: str | Path | None = None) -> SolutionSet:
    """Total-degree solve of the slack-reduced system at ``lam``; points are
    returned in full coordinates.

    With ``checkpoint`` every finished block of paths is appended to that
    file, and a rerun skips paths already recorded there. Only converged
    paths are held in memory, so the full 10-bus run stays small.
    """
    lam = np.asarray(lam, dtype=np.complex128)
    reduced, back = reduced_system(sys)
    hom, points = total_degree_homotopy(instantiate(reduced, lam), seed)
    indices = range(len(points)) if sample is None else [int(i) for i in sample]
    pos = None if sample is None else {i: p for p, i in enumerate(indices)}
    status = np.full(len(indices), -1, dtype=np.int8)
    conv: dict[int, PathResult] = {}

    def record(i: int, r: PathResult):
        p = i if pos is None else pos[i]
        status[p] = _CODES[r.status]
        if r.status == "converged":
            conv[p] = r

    fh = None
    if checkpoint is not None:
        path = Path(checkpoint)
        header = {"system_hash": sys.system_hash, "seed": int(seed),
                  "lambda": _cvec(lam), "n_paths": len(indices)}
        old = _read_checkpoint(path, header) if path.exists() else []
        for i, r in old:
            record(i, r)
        if old:
            log.info("resuming: %d of %d paths already tracked", len(old), len(indices))
        else:
            path.write_text(json.dumps(header) + "\n", encoding="utf-8")
        fh = path.open("a", encoding="utf-8")
    try:
        for lo in range(0, len(indices), BLOCK):
            block = [i for k, i in enumerate(indices[lo:lo + BLOCK]) if status[lo + k] < 0]
            if not block:
                continue
            res = _to_full(track_paths(hom, points.take(block), opts, workers),
                           sys, back, lam, opts)
            for i, r in zip(block, res):
                record(i, r)
            if fh is not None:
                fh.write("".join(json.dumps(_path_record(i, r)) + "\n"
                                 for i, r in zip(block, res)))
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    order = sorted(conv)
    sols = assemble([conv[p] for p in order], indices=[indices[p] for p in order])
    return SolutionSet(sols.solutions, len(indices), len(order),
                       int(np.sum(status == 1)), int(np.sum(status == 2)))


def solve_generic(sys: ParamPolySystem, seed: int = 42, opts: TrackOptions | None = None,
                  workers: int = 1, sample: Sequence[int] | None = None,
                  checkpoint: str | Path | None = None) -> StartCache:
    """Stage one: all finite solutions at a seeded generic complex ``lambda*``."""
    if sys.n_vars != sys.n_eqs:
        raise ValueError("system must be square")
    lam_star = draw_lambda_star(len(sys.params), seed)
    sols = solve_at(sys, lam_star, seed, opts, workers, sample, checkpoint)
    log.info("stage one: %d solutions from %d paths (%d diverged, %d failed)",
             len(sols), sols.n_paths_tracked, sols.n_diverged, sols.n_failed)
    if sols.n_failed:
        log.warning("%d paths failed at lambda*", sols.n_failed)
    if len(sols) == sols.n_paths_tracked:
        warnings.warn("every tracked path gave a distinct finite solution; "
                      "the root count bound may be too tight", RuntimeWarning)
    cache = StartCache(lam_star, tuple(s.point for s in sols.solutions), int(seed),
                       sys.system_hash, sols.n_paths_tracked)
    worst = cache.max_residual(sys)
    if worst > CACHE_TOL:
        log.warning("largest cached residual %.3g exceeds %.0e", worst, CACHE_TOL)
    return cache


# ---------------------------------------------------------------- stage two

def parameter_homotopy(sys: ParamPolySystem, lam_from, lam_to,
                       gamma: complex = 1.0) -> LinearHomotopy:
    """``gamma (1-s) P(x, lam_from) + s P(x, lam_to)`` on the reduced system,
    both ends scaled by the same row factors."""
    reduced, _ = reduced_system(sys)
    rs = reduced.row_scales()
    start = instantiate(reduced, lam_from).scaled(rs)
    target = instantiate(reduced, lam_to).scaled(rs)
    return LinearHomotopy(start, target, gamma)


def _check_cache(sys: ParamPolySystem, cache: StartCache) -> None:
    if cache.system_hash != sys.system_hash:
        raise StaleCacheError(
            f"cache was built for system {cache.system_hash:#018x}, "
            f"this system is {sys.system_hash:#018x}")


def track_to(sys: ParamPolySystem, cache: StartCache, lambda_target,
             opts: TrackOptions | None = None, workers: int = 1,
             gamma_seed: int | None = None) -> SolutionSet:
    """Stage two: follow every cached solution from ``lambda*`` to ``lambda_target``.

    ``gamma_seed`` multiplies the start end by a seeded generic unit complex
    constant; by default the homotopy is the plain coefficient path.
    """
    _check_cache(sys, cache)
    lam = np.asarray(lambda_target, dtype=np.complex128).reshape(-1)
    if lam.shape[0] != len(sys.params):
        raise ValueError(f"expected {len(sys.params)} parameter values, got {lam.shape[0]}")
    _, back = reduced_system(sys)
    gamma = 1.0 if gamma_seed is None else generic_gamma(np.random.default_rng([gamma_seed, 3]))
    hom = parameter_homotopy(sys, cache.lambda_star, lam, gamma)
    if not cache.solutions:
        return SolutionSet([], 0, 0, 0, 0)
    starts = np.array([back.restrict(x) for x in cache.solutions])
    res = _to_full(track_paths(hom, starts, opts, workers), sys, back, lam, opts)
    return assemble(res, DEDUP_TOL)


@dataclass
class RealCount:
    k_real: int
    set: SolutionSet
    real: list[np.ndarray]
    nonreal: list[np.ndarray]


def count_real(sys: ParamPolySystem, cache: StartCache, lambda_target,
               tau_real: float = 1e-6, opts: TrackOptions | None = None,
               workers: int = 1) -> RealCount:
    """Number of real finite solutions at a real parameter point."""
    lam = np.asarray(lambda_target)
    if np.iscomplexobj(lam) and np.any(lam.imag != 0):
        raise ValueError("count_real needs a real parameter vector")
    lam = lam.real.astype(float)
    sols = track_to(sys, cache, lam, opts, workers)
    real, nonreal = classify_real(sols, tau_real, target=instantiate(sys, lam))
    return RealCount(len(real), sols, real, nonreal)

"""Classical boundary tracing on the augmented singularity system.

Unknowns are ``z = [x | v | mu]`` where ``x`` solves the (slack-reduced)
power flow, ``v`` is a unit right null vector of its Jacobian and ``mu`` are
the free parameters. The residual is

    phi(z) = [ P(x, lam) ;  P_x(x, lam) v ;  v.v - 1 ].

With one free parameter the system is square and Newton finds isolated
boundary points; with two the solutions form curves that are followed by
pseudo-arclength continuation.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .paramhom import reduced_system
from .polysys import ParamPolySystem

log = logging.getLogger(__name__)

PHI_TOL = 1e-10
BOUNDARY_TOL = 1e-9


class NoBoundaryFound(RuntimeError):
    """Newton on the augmented system did not converge from the given guess."""


@dataclass
class AugmentedSystem:
    """Augmented singularity system over the slack-reduced power flow.

    ``base_lambda`` holds every parameter value; entries listed in
    ``swept`` are overridden by the ``mu`` block of ``z``.
    """

    reduced: ParamPolySystem
    swept: tuple[int, ...]
    base_lambda: np.ndarray
    _arr: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.swept = tuple(self.swept)
        self.base_lambda = np.asarray(self.base_lambda, dtype=float).copy()
        slots, eq, c0, cp = self.reduced._arrays
        if np.any(c0.imag != 0) or np.any(cp.imag != 0):
            raise ValueError("augmented system needs real coefficients")
        self._arr = (slots, eq, c0, cp)

    @property
    def n(self) -> int:
        return self.reduced.n_vars

    @property
    def size(self) -> int:
        return 2 * self.n + len(self.swept)

    @property
    def n_eqs(self) -> int:
        return 2 * self.n + 1

    @property
    def swept_names(self) -> list[str]:
        return [self.reduced.params[k] for k in self.swept]

    def split(self, z):
        z = np.asarray(z, dtype=float)
        n = self.n
        return z[:n], z[n:2 * n], z[2 * n:]

    def lam(self, z) -> np.ndarray:
        lam = self.base_lambda.copy()
        lam[list(self.swept)] = self.split(z)[2]
        return lam

    def pack(self, x, v, mu) -> np.ndarray:
        return np.concatenate([np.asarray(x, float), np.asarray(v, float),
                               np.atleast_1d(np.asarray(mu, float))])

    def _eval(self, x, coef, dcoef=None):
        slots, eq, _, _ = self._arr
        xc = np.asarray(x, dtype=np.complex128)
        d = np.zeros_like(coef) if dcoef is None else dcoef
        f, g, jac, _ = kernels.eval2(xc, slots, eq, coef, d, self.n)
        return f.real, g.real, jac.real

    def power_flow(self, x, lam):
        """``(P, P_x)`` of the reduced system at real ``(x, lam)``."""
        _, _, c0, cp = self._arr
        f, _, jac = self._eval(x, c0 + cp @ np.asarray(lam, dtype=np.complex128))
        return f, jac

    def phi(self, z) -> np.ndarray:
        x, v, _ = self.split(z)
        f, jac = self.power_flow(x, self.lam(z))
        return np.concatenate([f, jac @ v, [v @ v - 1.0]])

    def jacobian(self, z) -> np.ndarray:
        """Analytic Jacobian of :meth:`phi`, shape ``(2n+1, 2n+k)``."""
        x, v, _ = self.split(z)
        n = self.n
        _, _, c0, cp = self._arr
        coef = c0 + cp @ self.lam(z).astype(np.complex128)
        f, _, jac = self._eval(x, coef)
        # every entry of P_x is affine in x, so d(P_x v)/dx = P_x(v) - P_x(0)
        _, _, jv = self._eval(v, coef)
        _, _, j0 = self._eval(np.zeros(n), coef)
        out = np.zeros((self.n_eqs, self.size))
        out[:n, :n] = jac
        out[n:2 * n, :n] = jv - j0
        out[n:2 * n, n:2 * n] = jac
        out[2 * n, n:2 * n] = 2.0 * v
        for col, k in enumerate(self.swept):
            dp, _, jk = self._eval(x, cp[:, k].copy())
            out[:n, 2 * n + col] = dp
            out[n:2 * n, 2 * n + col] = jk @ v
        return out


def augmented(sys: ParamPolySystem, swept: Sequence[str], lam) -> AugmentedSystem:
    """Augmented system of ``sys`` with the parameters named in ``swept``
    free; ``lam`` gives the starting value of every parameter."""
    reduced, _ = reduced_system(sys)
    params = list(reduced.params)
    unknown = [s for s in swept if s not in params]
    if unknown:
        raise ValueError(f"unknown parameters {unknown}")
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (len(params),):
        raise ValueError(f"need {len(params)} parameter values")
    return AugmentedSystem(reduced, tuple(params.index(s) for s in swept), lam)


def min_singular(jac) -> tuple[float, np.ndarray]:
    """Smallest singular value of ``jac`` and its right singular vector."""
    _, s, vt = np.linalg.svd(jac)
    return float(s[-1]), vt[-1]


def initial_guess(aug: AugmentedSystem, x, mu) -> np.ndarray:
    """``z`` guess from a power-flow point: ``v`` is the right singular vector
    of ``P_x`` for its smallest singular value."""
    lam = aug.base_lambda.copy()
    lam[list(aug.swept)] = np.atleast_1d(mu)
    _, jac = aug.power_flow(np.asarray(x, float), lam)
    _, v = min_singular(jac)
    return aug.pack(x, v, mu)


def newton(fun, jac, z, tol: float, max_iter: int = 30) -> tuple[np.ndarray, bool, float]:
    """Plain Newton with least-squares steps; returns ``(z, ok, |f|_inf)``."""
    z = np.asarray(z, dtype=float).copy()
    r = np.inf
    for _ in range(max_iter + 1):
        f = fun(z)
        r = float(np.max(np.abs(f)))
        if not np.isfinite(r):
            return z, False, r
        if r < tol:
            return z, True, r
        step, *_ = np.linalg.lstsq(jac(z), -f, rcond=None)
        z = z + step
    return z, False, r


def find_initial_boundary_point(aug: AugmentedSystem, guess, tol: float = BOUNDARY_TOL,
                                max_iter: int = 30, max_shift: float | None = None) -> np.ndarray:
    """Solve ``phi(z) = 0`` by Newton from ``guess`` (one free parameter).

    The augmented system is low-degree polynomial and Newton often reaches a
    fold far from the guess. ``max_shift`` bounds how far the free parameter
    may move; a point beyond it counts as not found.
    """
    if aug.size != aug.n_eqs:
        raise ValueError("find_initial_boundary_point needs exactly one free parameter")
    guess = np.asarray(guess, dtype=float)
    z, ok, r = newton(aug.phi, aug.jacobian, guess, tol, max_iter)
    if not ok:
        raise NoBoundaryFound(f"Newton stalled at |phi| = {r:.3g} from this guess")
    shift = float(np.max(np.abs(aug.split(z)[2] - aug.split(guess)[2])))
    if max_shift is not None and shift > max_shift:
        raise NoBoundaryFound(
            f"nearest fold found is {shift:.3g} away in the parameter, beyond {max_shift:g}")
    return z


# ---------------------------------------------------------------- tracing

@dataclass
class TracePoint:
    step: int
    z: np.ndarray
    mu: np.ndarray
    phi_norm: float
    sigma_min: float


@dataclass
class Trace:
    points: list[TracePoint]
    closed: bool
    failed: bool
    reason: str

    def polyline(self) -> np.ndarray:
        return np.array([p.mu for p in self.points])


def tangent(aug: AugmentedSystem, z) -> np.ndarray:
    """Unit null direction of the augmented Jacobian (last right singular
    vector)."""
    _, _, vt = np.linalg.svd(aug.jacobian(z))
    return vt[-1]


def _point(aug: AugmentedSystem, step: int, z) -> TracePoint:
    x, _, mu = aug.split(z)
    _, jac = aug.power_flow(x, aug.lam(z))
    return TracePoint(step, z.copy(), mu.copy(), float(np.max(np.abs(aug.phi(z)))),
                      min_singular(jac)[0])


def trace_boundary(aug: AugmentedSystem, z0, epsilon: float, max_steps: int = 20000,
                   direction: int = 1, tol: float = PHI_TOL, min_close: int = 10) -> Trace:
    """Pseudo-arclength continuation of the boundary curve through ``z0``.

    Each step predicts along the tangent and corrects on ``phi = 0`` plus the
    hyperplane ``t.(z - z_prev) = epsilon``. The first tangent is oriented so
    its first free-parameter component has the sign of ``direction``; later
    ones keep a positive inner product with their predecessor. Closure is
    measured on ``(x, mu)``: ``v`` is only defined up to sign.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if aug.size != aug.n_eqs + 1:
        raise ValueError("trace_boundary needs exactly two free parameters")
    z0 = np.asarray(z0, dtype=float)
    r0 = float(np.max(np.abs(aug.phi(z0))))
    if r0 >= BOUNDARY_TOL:
        raise ValueError(f"z0 is not on the boundary (|phi| = {r0:.3g})")
    n = aug.n

    def key(z):
        return np.concatenate([z[:n], z[2 * n:]])

    pts = [_point(aug, 0, z0)]
    z = z0.copy()
    t = tangent(aug, z)
    if np.sign(t[2 * n]) != np.sign(direction) and t[2 * n] != 0:
        t = -t
    elif t[2 * n] == 0 and direction < 0:
        t = -t
    for step in range(1, max_steps + 1):
        z_prev, t_prev = z, t

        def fun(w):
            return np.concatenate([aug.phi(w), [t_prev @ (w - z_prev) - epsilon]])

        def jac(w):
            return np.vstack([aug.jacobian(w), t_prev])

        z, ok, r = newton(fun, jac, z_prev + epsilon * t_prev, tol, 12)
        if not ok:
            log.info("corrector failed at step %d (|phi| = %.3g)", step, r)
            return Trace(pts, False, True, f"corrector failed at step {step}")
        pts.append(_point(aug, step, z))
        t = tangent(aug, z)
        if t @ t_prev < 0:
            t = -t
        if step >= min_close and np.linalg.norm(key(z) - key(z0)) < epsilon:
            return Trace(pts, True, False, "closed")
    return Trace(pts, False, False, "max_steps")


def write_trace_csv(trace: Trace, path: str | Path, names: Sequence[str]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", *names, "phi_inf", "sigma_min"])
        for p in trace.points:
            w.writerow([p.step, *(repr(float(m)) for m in p.mu), repr(p.phi_norm),
                        repr(p.sigma_min)])
    return path

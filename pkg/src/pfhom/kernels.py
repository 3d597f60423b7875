"""Hot numeric kernels: polynomial evaluation, LU solves, path tracking.

Polynomial systems reach these kernels in "slot" form. Every term is a
product of exactly ``D`` factors ``xs[slots[t, k]]`` where ``xs`` is the
variable vector with a trailing 1.0 appended, so index ``n_vars`` pads
lower-degree monomials (``x0**2 * x1`` is slots ``[0, 0, 1]``, a constant
is ``[n, n, n]``). Term ``t`` contributes ``coef[t] * monomial`` to
equation ``eq[t]``.

Two implementations of the innermost kernels exist: explicit loops compiled
with numba, and vectorized numpy used when numba is disabled (see
``_accel``). The tracking drivers are written once and compiled only in the
numba backend.
"""

from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, maybe_njit

CONVERGED = 0
DIVERGED = 1
STEP_FAILURE = 2

# layout of the float options vector consumed by track_core
OPT_DT_INIT = 0
OPT_DT_MIN = 1
OPT_DT_MAX = 2
OPT_NEWTON_TOL = 3
OPT_NEWTON_MAX_ITER = 4
OPT_DIV_NORM = 5
OPT_ENDGAME_T = 6
OPT_COND_MAX = 7
OPT_REFINE_TOL = 8
OPT_REFINE_MAX_ITER = 9
N_OPTS = 10

LINEAR_RATE = 0.25
ENDGAME_EPS = 1e-14
GROWTH_MIN = 0.1
EARLY_REST = 1e-8
JUMP_TOL = 1e-4
ENDGAME_RATIO = 0.8
SINGULAR_COND = 1e8


# ---------------------------------------------------------------- loop kernels

def _eval2_loop(x, slots, eq, coef, dcoef, n_eq):
    n = x.shape[0]
    n_terms, deg = slots.shape
    xs = np.empty(n + 1, dtype=np.complex128)
    xs[:n] = x
    xs[n] = 1.0
    f = np.zeros(n_eq, dtype=np.complex128)
    g = np.zeros(n_eq, dtype=np.complex128)
    jac = np.zeros((n_eq, n), dtype=np.complex128)
    scale = 0.0
    for t in range(n_terms):
        m = 1.0 + 0.0j
        for k in range(deg):
            m *= xs[slots[t, k]]
        r = eq[t]
        c = coef[t]
        f[r] += c * m
        a = abs(c * m)
        if a > scale:
            scale = a
        g[r] += dcoef[t] * m
        for k in range(deg):
            v = slots[t, k]
            if v == n:
                continue
            p = c
            for l in range(deg):
                if l != k:
                    p *= xs[slots[t, l]]
            jac[r, v] += p
    return f, g, jac, scale


def _lu_solve_loop(a, b):
    """Solve ``a @ x = b`` by partial-pivot LU.

    Returns ``(x, cond_est, ok)``; ``cond_est`` is the ratio of the largest
    to the smallest pivot magnitude.
    """
    n = a.shape[0]
    lu = a.copy()
    x = b.copy()
    for k in range(n):
        p = k
        best = abs(lu[k, k])
        for i in range(k + 1, n):
            v = abs(lu[i, k])
            if v > best:
                best = v
                p = i
        if best == 0.0:
            return x, np.inf, False
        if p != k:
            for j in range(n):
                tmp = lu[k, j]
                lu[k, j] = lu[p, j]
                lu[p, j] = tmp
            tmp = x[k]
            x[k] = x[p]
            x[p] = tmp
        piv = lu[k, k]
        for i in range(k + 1, n):
            l = lu[i, k] / piv
            if l != 0.0:
                for j in range(k + 1, n):
                    lu[i, j] -= l * lu[k, j]
                x[i] -= l * x[k]
    dmax = 0.0
    dmin = np.inf
    for k in range(n - 1, -1, -1):
        s = x[k]
        for j in range(k + 1, n):
            s -= lu[k, j] * x[j]
        x[k] = s / lu[k, k]
        d = abs(lu[k, k])
        if d > dmax:
            dmax = d
        if d < dmin:
            dmin = d
    return x, dmax / dmin, True


# --------------------------------------------------------------- numpy kernels

def _eval2_np(x, slots, eq, coef, dcoef, n_eq):
    n = x.shape[0]
    xs = np.append(np.asarray(x, dtype=np.complex128), 1.0 + 0.0j)
    vals = xs[slots]
    m = vals.prod(axis=1)
    f = np.zeros(n_eq, dtype=np.complex128)
    g = np.zeros(n_eq, dtype=np.complex128)
    cm = coef * m
    np.add.at(f, eq, cm)
    np.add.at(g, eq, dcoef * m)
    jac = np.zeros((n_eq, n + 1), dtype=np.complex128)
    deg = slots.shape[1]
    for k in range(deg):
        others = np.delete(vals, k, axis=1).prod(axis=1)
        np.add.at(jac, (eq, slots[:, k]), coef * others)
    scale = float(np.abs(cm).max()) if cm.size else 0.0
    return f, g, np.ascontiguousarray(jac[:, :n]), scale


def _lu_solve_np(a, b):
    n = a.shape[0]
    lu = np.array(a, dtype=np.complex128)
    x = np.array(b, dtype=np.complex128)
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if lu[p, k] == 0:
            return x, np.inf, False
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            x[[k, p]] = x[[p, k]]
        l = lu[k + 1:, k] / lu[k, k]
        lu[k + 1:, k + 1:] -= np.outer(l, lu[k, k + 1:])
        x[k + 1:] -= l * x[k]
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - lu[k, k + 1:] @ x[k + 1:]) / lu[k, k]
    d = np.abs(np.diag(lu))
    return x, d.max() / d.min(), True


if USE_NUMBA:
    eval2 = maybe_njit(_eval2_loop)
    lu_solve = maybe_njit(_lu_solve_loop)
else:
    eval2 = _eval2_np
    lu_solve = _lu_solve_np


# ---------------------------------------------------------------- drivers

@maybe_njit
def maxabs(v):
    m = 0.0
    for i in range(v.shape[0]):
        a = abs(v[i])
        if a > m:
            m = a
    return m


@maybe_njit
def newton_correct(slots, eq, coef, x, tol, max_iter, cond_max):
    """Newton at fixed homotopy time.

    Converged once the residual is below ``tol`` relative to the largest
    term magnitude. Each update must shrink at least tenfold; slower
    contraction means the predictor landed outside the quadratic basin
    (risk of path jumping).
    """
    n = x.shape[0]
    zero = np.zeros(coef.shape[0], dtype=np.complex128)
    prev = np.inf
    for k in range(max_iter + 1):
        f, g, jac, scale = eval2(x, slots, eq, coef, zero, n)
        if maxabs(f) <= tol * (1.0 + scale):
            return True, x
        if k == max_iter:
            break
        d, cond, ok = lu_solve(jac, -f)
        if not ok or cond > cond_max:
            return False, x
        nd = maxabs(d)
        if k > 0 and nd > 0.1 * prev:
            return False, x
        x = x + d
        prev = nd
    return False, x


@maybe_njit
def rk4_predict(slots, eq, c_start, c_target, gamma, dcoef, x, s, h, cond_max):
    """Classical Runge-Kutta step of ``dx/ds = -H_x^{-1} H_s`` from ``(x, s)``."""
    n = x.shape[0]
    out = np.zeros(n, dtype=np.complex128)
    y = x
    for stage in range(4):
        ds = 0.0 if stage == 0 else (h if stage == 3 else 0.5 * h)
        t = s + ds
        coef = gamma * (1.0 - t) * c_start + t * c_target
        f, g, jac, scale = eval2(y, slots, eq, coef, dcoef, n)
        k, cond, ok = lu_solve(jac, -g)
        if not ok or cond > cond_max:
            return out, False
        w = 1.0 if stage == 0 or stage == 3 else 2.0
        out += (w * h / 6.0) * k
        if stage < 3:
            y = x + (h if stage == 2 else 0.5 * h) * k
    return x + out, True


@maybe_njit
def at_infinity(rest_e, norm_e, rest, norm):
    """Power-law growth ``|x| ~ (1-s)**-a`` with ``a >= GROWTH_MIN`` since
    endgame entry, over at least three decades of ``1 - s``."""
    if rest <= 0.0 or rest > 1e-3 * rest_e or norm <= 1.0:
        return False
    a = np.log(norm / max(norm_e, 1.0)) / np.log(rest_e / rest)
    return a >= GROWTH_MIN


@maybe_njit
def track_core(slots, eq, c_start, c_target, gamma, x0, opts):
    """Track ``H(x,s) = gamma (1-s) start + s target`` from s=0 to s=1.

    Returns ``(status, x, steps, s)``. On CONVERGED, ``x`` is the
    unpolished endpoint at s = 1.
    """
    dt_min = opts[OPT_DT_MIN]
    dt_max = opts[OPT_DT_MAX]
    tol = opts[OPT_NEWTON_TOL]
    max_iter = int(opts[OPT_NEWTON_MAX_ITER])
    div_norm = opts[OPT_DIV_NORM]
    endgame_t = opts[OPT_ENDGAME_T]
    cond_max = opts[OPT_COND_MAX]
    floor = 10.0 * dt_min
    n = x0.shape[0]
    dcoef = c_target - gamma * c_start

    x = x0.copy()
    s = 0.0
    dt = opts[OPT_DT_INIT]
    n_ok = 0
    steps = 0
    rest_e = -1.0
    norm_e = 0.0
    while s < 1.0:
        if s >= endgame_t and rest_e < 0:
            rest_e = 1.0 - s
            norm_e = maxabs(x)
        rest = 1.0 - s
        h = min(dt, rest)
        if s >= endgame_t and rest > 2.0 * floor:
            h = min(h, max(ENDGAME_RATIO * rest, floor))
        s_new = s + h
        if h >= rest:
            s_new = 1.0
        x_pred, ok = rk4_predict(slots, eq, c_start, c_target, gamma, dcoef,
                                 x, s, h, cond_max)
        accepted = False
        if ok:
            coef_new = gamma * (1.0 - s_new) * c_start + s_new * c_target
            accepted, x_new = newton_correct(slots, eq, coef_new, x_pred,
                                             tol, max_iter, cond_max)
        if accepted:
            x = x_new
            s = s_new
            steps += 1
            n_ok += 1
            if n_ok >= 3:
                dt = min(1.5 * dt, dt_max)
                n_ok = 0
            nx = maxabs(x)
            if nx > div_norm:
                return DIVERGED, x, steps, s
            if (rest_e > 0 and 1.0 - s < EARLY_REST and nx * nx > div_norm
                    and at_infinity(rest_e, norm_e, 1.0 - s, nx)):
                return DIVERGED, x, steps, s
        else:
            n_ok = 0
            dt = 0.5 * h
            # inside the endgame zone steps may shrink below dt_min so paths
            # heading to infinity get far enough to cross div_norm
            limit = ENDGAME_EPS if s >= endgame_t else dt_min
            if dt < limit:
                nx = maxabs(x)
                if rest_e > 0 and nx * nx > div_norm and at_infinity(rest_e, norm_e, 1.0 - s, nx):
                    return DIVERGED, x, steps, s
                return STEP_FAILURE, x, steps, s
    return CONVERGED, x, steps, s


@maybe_njit
def refine_core(slots, eq, coef, x, tol, max_iter):
    """Newton polishing on a fixed system.

    Returns ``(x, ok, residual, linear, cond)``: ``ok`` when the residual
    fell below ``tol * (1 + |x|_inf)``, ``linear`` when the last three
    Newton updates shrank by less than a factor 4 each (multiple root).
    """
    n = x.shape[0]
    zero = np.zeros(coef.shape[0], dtype=np.complex128)
    steps = np.zeros(max_iter + 1)
    n_steps = 0
    ok = False
    cond = np.inf
    resid = np.inf
    for _ in range(max_iter + 1):
        f, g, jac, scale = eval2(x, slots, eq, coef, zero, n)
        resid = maxabs(f)
        d, cond, solvable = lu_solve(jac, -f)
        if resid < tol * (1.0 + maxabs(x)):
            ok = True
            break
        if not solvable or n_steps == max_iter:
            break
        x = x + d
        steps[n_steps] = maxabs(d)
        n_steps += 1
    linear = False
    if n_steps >= 4:
        linear = True
        for k in range(n_steps - 3, n_steps):
            if not steps[k] > LINEAR_RATE * steps[k - 1]:
                linear = False
    return x, ok, resid, linear, cond


@maybe_njit
def track_batch(slots, eq, c_start, c_target, gamma, starts, opts,
                status, ends, steps, resid, flags, conds):
    """Track every row of ``starts``; results go into the output arrays.

    ``flags`` is 1 for endpoints that look singular (linear Newton
    convergence or large pivot ratio), else 0.
    """
    refine_tol = opts[OPT_REFINE_TOL]
    refine_iter = int(opts[OPT_REFINE_MAX_ITER])
    for p in range(starts.shape[0]):
        st, x, nst, s = track_core(slots, eq, c_start, c_target, gamma,
                                   starts[p].copy(), opts)
        r = np.inf
        flag = 0
        cond = np.inf
        if st == CONVERGED:
            x_end = x
            x, ok, r, linear, cond = refine_core(slots, eq, c_target, x,
                                                 refine_tol, refine_iter)
            # a large polishing move means the final corrector accepted a
            # point outside the basin of the endpoint it was tracking
            if not ok or maxabs(x - x_end) > JUMP_TOL * (1.0 + maxabs(x_end)):
                st = STEP_FAILURE
            if linear or cond > SINGULAR_COND:
                flag = 1
        status[p] = st
        ends[p] = x
        steps[p] = nst
        resid[p] = r
        flags[p] = flag
        conds[p] = cond

"""Rectangular polynomial form of the parameterized power-flow equations.

Voltages are written as ``V = vset (c + j s)`` on generator buses, with the
identity ``c**2 + s**2 - 1 = 0`` added for every non-slack generator, and as
``V = e + j f`` on load buses. Every balance equation is then a polynomial of
degree at most two whose coefficients are affine in the injection
parameters.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import kernels
from .netmodel import Network, branch_admittance

VAR_KINDS = ("slack_p", "slack_q", "pv_q", "pv_cos", "pv_sin", "pq_vcos", "pq_vsin")


@dataclass(frozen=True)
class Var:
    kind: str
    bus: int

    @property
    def name(self) -> str:
        return f"{self.kind}[{self.bus}]"


@dataclass(frozen=True)
class Term:
    """Monomial ``prod x**exps`` with coefficient ``coeff0 + sum lam_k coeff_per_param[k]``."""

    exps: tuple[int, ...]
    coeff0: complex
    coeff_per_param: tuple[complex, ...] = ()

    @property
    def degree(self) -> int:
        return sum(self.exps)


def _grlex_key(term: Term):
    return (-term.degree, tuple(-e for e in term.exps))


def _to_slots(exps_list: Sequence[tuple[int, ...]], n_vars: int) -> np.ndarray:
    deg = max([1] + [sum(e) for e in exps_list])
    slots = np.full((len(exps_list), deg), n_vars, dtype=np.int64)
    for t, exps in enumerate(exps_list):
        k = 0
        for v, e in enumerate(exps):
            for _ in range(e):
                slots[t, k] = v
                k += 1
    return slots


class FixedSystem:
    """Polynomial system with fixed complex coefficients.

    ``equations`` is a list of ``{exponent tuple: coefficient}`` dicts.
    """

    def __init__(self, equations: Sequence[dict], n_vars: int,
                 var_names: Sequence[str] | None = None):
        self.n_vars = n_vars
        self.var_names = list(var_names) if var_names is not None else [
            f"x{i}" for i in range(n_vars)]
        eqs = []
        for poly in equations:
            clean = {}
            for exps, c in poly.items():
                exps = tuple(int(e) for e in exps)
                if len(exps) != n_vars:
                    raise ValueError("exponent vector length does not match n_vars")
                if c != 0:
                    clean[exps] = clean.get(exps, 0j) + complex(c)
            eqs.append(clean)
        self.equations = eqs
        exps_list, eq_idx, coef = [], [], []
        for i, poly in enumerate(eqs):
            for exps in sorted(poly, key=lambda e: (-sum(e), tuple(-v for v in e))):
                exps_list.append(exps)
                eq_idx.append(i)
                coef.append(poly[exps])
        self.slots = _to_slots(exps_list, n_vars)
        self.eq = np.asarray(eq_idx, dtype=np.int64)
        self.coef = np.asarray(coef, dtype=np.complex128)

    @classmethod
    def from_arrays(cls, slots, eq, coef, n_eq, n_vars, var_names=None):
        obj = cls.__new__(cls)
        obj.n_vars = n_vars
        obj.var_names = list(var_names) if var_names is not None else [
            f"x{i}" for i in range(n_vars)]
        obj.slots = np.ascontiguousarray(slots, dtype=np.int64)
        obj.eq = np.ascontiguousarray(eq, dtype=np.int64)
        obj.coef = np.ascontiguousarray(coef, dtype=np.complex128)
        eqs = [dict() for _ in range(n_eq)]
        for t in range(len(obj.eq)):
            exps = [0] * n_vars
            for v in obj.slots[t]:
                if v < n_vars:
                    exps[v] += 1
            key = tuple(exps)
            eqs[obj.eq[t]][key] = eqs[obj.eq[t]].get(key, 0j) + obj.coef[t]
        obj.equations = eqs
        return obj

    @property
    def n_eqs(self) -> int:
        return len(self.equations)

    @property
    def degrees(self) -> list[int]:
        return [max((sum(e) for e in p), default=0) for p in self.equations]

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.complex128)
        if x.shape != (self.n_vars,):
            raise ValueError(f"expected {self.n_vars} values, got {x.shape}")
        f, _, _, _ = kernels.eval2(x, self.slots, self.eq, self.coef,
                                np.zeros_like(self.coef), self.n_eqs)
        return f

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.complex128)
        if x.shape != (self.n_vars,):
            raise ValueError(f"expected {self.n_vars} values, got {x.shape}")
        _, _, jac, _ = kernels.eval2(x, self.slots, self.eq, self.coef,
                                  np.zeros_like(self.coef), self.n_eqs)
        return jac

    def row_scales(self) -> np.ndarray:
        """Per-equation factors making the largest coefficient magnitude 1."""
        big = np.zeros(self.n_eqs)
        np.maximum.at(big, self.eq, np.abs(self.coef))
        big[big == 0] = 1.0
        return 1.0 / big

    def scaled(self, row_scale) -> "FixedSystem":
        row_scale = np.asarray(row_scale, dtype=float)
        return FixedSystem.from_arrays(self.slots, self.eq, self.coef * row_scale[self.eq],
                                       self.n_eqs, self.n_vars, self.var_names)

    def is_real(self) -> bool:
        return bool(np.all(self.coef.imag == 0))

    def dump(self) -> str:
        return "\n".join(_format_poly(p, self.var_names) for p in self.equations) + "\n"


def _format_coeff(c: complex) -> str:
    c = complex(c)
    if c.imag == 0:
        return repr(c.real)
    return f"({c.real!r}{c.imag:+}j)"


def _format_monomial(exps, names) -> str:
    parts = []
    for v, e in enumerate(exps):
        if e == 1:
            parts.append(names[v])
        elif e > 1:
            parts.append(f"{names[v]}^{e}")
    return "*".join(parts)


def _format_poly(poly: dict, names) -> str:
    if not poly:
        return "0"
    out = []
    for exps in sorted(poly, key=lambda e: (-sum(e), tuple(-v for v in e))):
        c = poly[exps]
        if isinstance(c, str):
            coef = c
        else:
            coef = _format_coeff(c)
        mono = _format_monomial(exps, names)
        out.append(f"{coef}*{mono}" if mono else coef)
    return " + ".join(out)


@dataclass(frozen=True)
class BoundsReport:
    naive_cbb: int
    degree_product: int
    binomial: int | None


@dataclass(frozen=True)
class ParamPolySystem:
    """Square polynomial system with coefficients affine in the parameters."""

    vars: tuple[Var, ...]
    params: tuple[str, ...]
    equations: tuple[tuple[Term, ...], ...]
    n_buses: int | None = None
    labels: tuple[str, ...] = field(default=(), compare=False)

    @property
    def n_vars(self) -> int:
        return len(self.vars)

    @property
    def n_eqs(self) -> int:
        return len(self.equations)

    @property
    def var_names(self) -> list[str]:
        return [v.name for v in self.vars]

    @property
    def degrees(self) -> list[int]:
        return [max((t.degree for t in eq), default=0) for eq in self.equations]

    @cached_property
    def _arrays(self):
        exps_list, eq_idx, c0, cp = [], [], [], []
        m = len(self.params)
        for i, eq in enumerate(self.equations):
            for t in eq:
                exps_list.append(t.exps)
                eq_idx.append(i)
                c0.append(t.coeff0)
                cp.append(tuple(t.coeff_per_param) or (0j,) * m)
        slots = _to_slots(exps_list, self.n_vars)
        c0 = np.asarray(c0, dtype=np.complex128)
        cp = np.asarray(cp, dtype=np.complex128).reshape(len(c0), m)
        return slots, np.asarray(eq_idx, dtype=np.int64), c0, cp

    def coefficients(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=np.complex128).reshape(-1)
        if lam.shape[0] != len(self.params):
            raise ValueError(
                f"parameter vector has length {lam.shape[0]}, system has {len(self.params)}")
        _, _, c0, cp = self._arrays
        return c0 + cp @ lam

    def row_scales(self) -> np.ndarray:
        """Row factors from the lambda-independent coefficient magnitudes."""
        _, eq, c0, cp = self._arrays
        mag = np.abs(c0)
        if cp.shape[1]:
            mag = np.maximum(mag, np.abs(cp).max(axis=1))
        big = np.zeros(self.n_eqs)
        np.maximum.at(big, eq, mag)
        big[big == 0] = 1.0
        return 1.0 / big

    @cached_property
    def system_hash(self) -> int:
        h = hashlib.blake2b(digest_size=8)
        h.update(b"vars:")
        for v in self.vars:
            h.update(v.name.encode() + b";")
        h.update(b"params:")
        for p in self.params:
            h.update(p.encode() + b";")
        for eq in self.equations:
            h.update(b"eq:")
            for t in sorted(eq, key=_grlex_key):
                h.update(struct.pack(f"<{len(t.exps)}q", *t.exps))
                for c in (t.coeff0, *t.coeff_per_param):
                    h.update(struct.pack("<dd", c.real, c.imag))
        return int.from_bytes(h.digest(), "little")

    def dump(self) -> str:
        names = self.var_names
        lines = []
        for eq in self.equations:
            poly = {}
            for t in eq:
                parts = [_format_coeff(t.coeff0)] if t.coeff0 != 0 else []
                for name, c in zip(self.params, t.coeff_per_param):
                    if c != 0:
                        parts.append(f"{_format_coeff(c)}*{name}")
                poly[t.exps] = "(" + " + ".join(parts or ["0"]) + ")"
            lines.append(_format_poly(poly, names))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- building

class _Poly:
    """Accumulator ``{exps: [coeff0, coeff_param_0, ...]}``."""

    def __init__(self, n_vars: int, n_params: int):
        self.n_vars = n_vars
        self.n_params = n_params
        self.terms: dict[tuple[int, ...], np.ndarray] = {}
        self.structural: set[tuple[int, ...]] = set()

    def add(self, exps, c0=0j, param=None, cp=0j):
        exps = tuple(exps)
        acc = self.terms.setdefault(exps, np.zeros(1 + self.n_params, dtype=np.complex128))
        acc[0] += c0
        if param is not None:
            acc[1 + param] += cp

    def part(self, which: str) -> "_Poly":
        out = _Poly(self.n_vars, self.n_params)
        out.structural = set(self.structural)
        for exps, acc in self.terms.items():
            out.terms[exps] = acc.real.astype(np.complex128) if which == "re" \
                else acc.imag.astype(np.complex128)
        return out

    def terms_tuple(self) -> tuple[Term, ...]:
        out = []
        for exps, acc in self.terms.items():
            if np.any(acc != 0) or exps in self.structural:
                out.append(Term(exps, complex(acc[0]),
                                tuple(complex(c) for c in acc[1:])))
        return tuple(sorted(out, key=_grlex_key))


def _unit(n: int, i: int | None, j: int | None = None) -> tuple[int, ...]:
    e = [0] * n
    if i is not None:
        e[i] += 1
    if j is not None:
        e[j] += 1
    return tuple(e)


def polynomialize(net: Network) -> ParamPolySystem:
    """Square quadratic system ``P(x, lam) = 0`` for ``net``.

    Residual convention per bus: ``Re/Im(sum_k V_j conj(V_j - V_k) conj(y_jk))
    + load - generation``.
    """
    params = net.param_names()
    pidx = {p: i for i, p in enumerate(params)}
    slack = net.slack

    vars_: list[Var] = [Var("slack_p", slack.id), Var("slack_q", slack.id)]
    for b in net.buses:
        if b.kind == "pv":
            vars_ += [Var("pv_q", b.id), Var("pv_cos", b.id), Var("pv_sin", b.id)]
        elif b.kind == "pq":
            vars_ += [Var("pq_vcos", b.id), Var("pq_vsin", b.id)]
    index = {(v.kind, v.bus): i for i, v in enumerate(vars_)}
    nv = len(vars_)
    m = len(params)

    def voltage(bus):
        """Linear form of V as [(var or None, complex coefficient)]."""
        if bus.kind == "slack":
            return [(None, complex(bus.vset))]
        if bus.kind == "pv":
            return [(index[("pv_cos", bus.id)], complex(bus.vset)),
                    (index[("pv_sin", bus.id)], 1j * bus.vset)]
        return [(index[("pq_vcos", bus.id)], 1 + 0j), (index[("pq_vsin", bus.id)], 1j)]

    def flow(bus) -> _Poly:
        """sum_k V_j conj(V_j - V_k) conj(y_jk) as a complex polynomial."""
        poly = _Poly(nv, m)
        vj = voltage(bus)
        # |V_j|^2 monomials stay even when their coefficient vanishes (r = 0),
        # so every non-slack balance keeps nominal degree 2
        if bus.kind != "slack":
            for va, _ in vj:
                poly.structural.add(_unit(nv, va, va))
        for k in net.neighbors(bus.id):
            yc = branch_admittance(net, bus.id, k).conjugate()
            diff = list(vj) + [(v, -c) for v, c in voltage(net.bus(k))]
            for va, ca in vj:
                for vb, cb in diff:
                    poly.add(_unit(nv, va, vb), ca * cb.conjugate() * yc)
        return poly

    equations, labels = [], []
    sflow = flow(slack)
    for which, var, load in (("re", "slack_p", slack.pload), ("im", "slack_q", slack.qload)):
        poly = sflow.part(which)
        poly.add(_unit(nv, None), load)
        poly.add(_unit(nv, index[(var, slack.id)]), -1.0)
        equations.append(poly.terms_tuple())
        labels.append(f"{'P' if which == 're' else 'Q'}[{slack.id}]")

    for b in net.buses:
        if b.kind == "slack":
            continue
        bflow = flow(b)
        inj = b.injection
        p_eq = bflow.part("re")
        p_eq.add(_unit(nv, None), b.pload - b.pgen)
        q_eq = bflow.part("im")
        q_eq.add(_unit(nv, None), b.qload)
        if inj is not None:
            p_eq.add(_unit(nv, None), 0j, pidx[inj.param], -inj.unit_p)
            if b.kind == "pq":
                q_eq.add(_unit(nv, None), 0j, pidx[inj.param], -inj.unit_q)
        if b.kind == "pv":
            q_eq.add(_unit(nv, index[("pv_q", b.id)]), -1.0)
        equations += [p_eq.terms_tuple(), q_eq.terms_tuple()]
        labels += [f"P[{b.id}]", f"Q[{b.id}]"]
        if b.kind == "pv":
            ident = _Poly(nv, m)
            ic, is_ = index[("pv_cos", b.id)], index[("pv_sin", b.id)]
            ident.add(_unit(nv, ic, ic), 1.0)
            ident.add(_unit(nv, is_, is_), 1.0)
            ident.add(_unit(nv, None), -1.0)
            equations.append(ident.terms_tuple())
            labels.append(f"circle[{b.id}]")

    return ParamPolySystem(tuple(vars_), tuple(params), tuple(equations),
                           n_buses=net.N, labels=tuple(labels))


def bus_voltages(net: Network, sys: ParamPolySystem, x) -> dict[int, complex]:
    """Complex bus voltages encoded by a full-coordinate point ``x``."""
    x = np.asarray(x)
    idx = {(v.kind, v.bus): i for i, v in enumerate(sys.vars)}
    out = {}
    for b in net.buses:
        if b.kind == "slack":
            out[b.id] = complex(b.vset)
        elif b.kind == "pv":
            out[b.id] = b.vset * (x[idx[("pv_cos", b.id)]] + 1j * x[idx[("pv_sin", b.id)]])
        else:
            out[b.id] = complex(x[idx[("pq_vcos", b.id)]] + 1j * x[idx[("pq_vsin", b.id)]])
    return out


def instantiate(sys: ParamPolySystem, lam) -> FixedSystem:
    """Fix the parameters; monomial structure is unchanged."""
    coef = sys.coefficients(lam)
    slots, eq, _, _ = sys._arrays
    return FixedSystem.from_arrays(slots, eq, coef, sys.n_eqs, sys.n_vars, sys.var_names)


def evaluate(fixed: FixedSystem, x) -> np.ndarray:
    return fixed.evaluate(x)


def jacobian(fixed: FixedSystem, x) -> np.ndarray:
    return fixed.jacobian(x)


def bounds(sys: ParamPolySystem) -> BoundsReport:
    n = sys.n_buses
    binom = math.comb(2 * n - 2, n - 1) if n else None
    return BoundsReport(2 ** sys.n_vars, math.prod(sys.degrees), binom)


# ---------------------------------------------------------------- slack removal

@dataclass(frozen=True)
class BackSubstitution:
    """Recovers the slack powers from a solution of the reduced system."""

    full: ParamPolySystem
    reduced: ParamPolySystem
    keep: tuple[int, ...]
    slack_slots: tuple[int, ...]
    exprs: tuple[ParamPolySystem, ...]

    def __call__(self, x_reduced, lam) -> np.ndarray:
        x_reduced = np.asarray(x_reduced, dtype=np.complex128)
        out = np.zeros(self.full.n_vars, dtype=np.complex128)
        out[list(self.keep)] = x_reduced
        expr = instantiate(self.exprs[0], lam)
        vals = expr.evaluate(x_reduced)
        for slot, v in zip(self.slack_slots, vals):
            out[slot] = v
        return out

    def restrict(self, x_full) -> np.ndarray:
        return np.asarray(x_full, dtype=np.complex128)[list(self.keep)]


def eliminate_slack(sys: ParamPolySystem) -> tuple[ParamPolySystem, BackSubstitution]:
    """Drop the slack power variables and the two equations defining them.

    Each slack power appears linearly, with a constant coefficient, in
    exactly one equation, so it can be recovered afterwards.
    """
    slack_slots = [i for i, v in enumerate(sys.vars) if v.kind in ("slack_p", "slack_q")]
    keep = [i for i in range(sys.n_vars) if i not in slack_slots]
    drop_eqs, exprs = [], []
    for slot in slack_slots:
        rows = [i for i, eq in enumerate(sys.equations)
                if any(t.exps[slot] for t in eq)]
        if len(rows) != 1:
            raise ValueError(f"{sys.vars[slot].name} appears in {len(rows)} equations")
        row = rows[0]
        lead = [t for t in sys.equations[row] if t.exps[slot]]
        if (len(lead) != 1 or lead[0].degree != 1
                or any(c != 0 for c in lead[0].coeff_per_param)):
            raise ValueError(f"{sys.vars[slot].name} is not a constant-coefficient linear term")
        a = lead[0].coeff0
        rest = []
        for t in sys.equations[row]:
            if t is lead[0]:
                continue
            if any(t.exps[s] for s in slack_slots):
                raise ValueError("slack variables are coupled")
            rest.append(Term(tuple(t.exps[i] for i in keep), -t.coeff0 / a,
                             tuple(-c / a for c in t.coeff_per_param)))
        drop_eqs.append(row)
        exprs.append(tuple(sorted(rest, key=_grlex_key)))

    reduced_eqs, labels = [], []
    for i, eq in enumerate(sys.equations):
        if i in drop_eqs:
            continue
        reduced_eqs.append(tuple(sorted(
            (Term(tuple(t.exps[k] for k in keep), t.coeff0, t.coeff_per_param) for t in eq),
            key=_grlex_key)))
        if sys.labels:
            labels.append(sys.labels[i])
    reduced = ParamPolySystem(tuple(sys.vars[i] for i in keep), sys.params,
                              tuple(reduced_eqs), n_buses=sys.n_buses, labels=tuple(labels))
    expr_sys = ParamPolySystem(reduced.vars, sys.params, tuple(exprs), n_buses=None)
    back = BackSubstitution(sys, reduced, tuple(keep), tuple(slack_slots), (expr_sys,))
    return reduced, back

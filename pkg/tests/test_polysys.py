from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfhom.netmodel import load_fixture
from pfhom.paramhom import solve_at
from pfhom.polysys import (
    bounds,
    eliminate_slack,
    evaluate,
    instantiate,
    jacobian,
    polynomialize,
)
from pfhom.tracker import solve_total_degree

import oracles


@pytest.fixture(scope="module")
def two_plain():
    return polynomialize(load_fixture("two_bus"))


def test_sizes(three_sys, ten_sys, two_plain):
    assert (three_sys.n_eqs, three_sys.n_vars) == (8, 8)
    assert (ten_sys.n_eqs, ten_sys.n_vars) == (25, 25)
    assert two_plain.degrees == [1, 1, 2, 2]
    assert max(ten_sys.degrees) == 2
    assert three_sys.params == ("lam1", "lam2")


def test_three_bus_unknowns(three_sys):
    kinds = sorted((v.kind, v.bus) for v in three_sys.vars)
    assert kinds == sorted([("slack_p", 3), ("slack_q", 3), ("pv_q", 1), ("pv_q", 2),
                            ("pv_cos", 1), ("pv_sin", 1), ("pv_cos", 2), ("pv_sin", 2)])


def test_identity_rows_present(ten_sys):
    rows = [l for l in ten_sys.labels if l.startswith("circle")]
    assert len(rows) == 5  # one per non-slack PV bus (n - 1)


@pytest.mark.parametrize("name, expect", [
    ("two_bus", (16, 4, 2)),
    ("three_bus", (256, 64, 6)),
    ("ten_bus", (2 ** 25, 2 ** 23, 48620)),
])
def test_bounds(name, expect):
    b = bounds(polynomialize(load_fixture(name)))
    assert (b.naive_cbb, b.degree_product, b.binomial) == expect
    assert b.binomial <= b.degree_product <= b.naive_cbb


def test_instantiate_affine(three_sys):
    zero = instantiate(three_sys, [0.0, 0.0])
    slots, eq, c0, cp = three_sys._arrays
    np.testing.assert_array_equal(zero.coef, c0)
    assert instantiate(three_sys, [1.3, -0.4]).is_real()
    lam = np.array([0.3 + 0.7j, -0.2 + 0.5j])
    fixed = instantiate(three_sys, lam)
    for bus in (1, 2):
        row = three_sys.labels.index(f"P[{bus}]")
        assert np.any(fixed.coef[fixed.eq == row].imag != 0)
    with pytest.raises(ValueError):
        instantiate(three_sys, [1.0])


def test_evaluate_at_origin_gives_constants(three_sys):
    lam = [0.7, 1.1]
    fixed = instantiate(three_sys, lam)
    f = evaluate(fixed, np.zeros(8))
    const = np.zeros(8, dtype=complex)
    for t, e in enumerate(fixed.eq):
        if np.all(fixed.slots[t] == fixed.n_vars):
            const[e] += fixed.coef[t]
    np.testing.assert_allclose(f, const)
    # the P-balance constants at the PV buses carry the injections
    assert f[three_sys.labels.index("P[1]")] == pytest.approx(-0.7)
    # at the slack the fixed |V|^2 self term joins the load: 2 * Re(1/z) + 2.0
    assert f[three_sys.labels.index("P[3]")] == pytest.approx(2 * (1 / (0.01 + 0.1j)).real + 2.0)


def test_identity_row_zero_on_unit_circle(three_sys):
    fixed = instantiate(three_sys, [0.0, 0.0])
    names = three_sys.var_names
    x = np.random.default_rng(0).normal(size=8).astype(complex)
    x[names.index("pv_cos[1]")] = 1.0
    x[names.index("pv_sin[1]")] = 0.0
    assert evaluate(fixed, x)[three_sys.labels.index("circle[1]")] == 0


def test_jacobian_matches_finite_differences(ten_sys):
    rng = np.random.default_rng(11)
    fixed = instantiate(ten_sys, [0.4 + 0.2j, -0.3 + 0.6j])
    h = 1e-6
    for _ in range(10):
        x = rng.normal(size=25) + 1j * rng.normal(size=25)
        jac = jacobian(fixed, x)
        fd = np.empty_like(jac)
        for k in range(25):
            e = np.zeros(25)
            e[k] = h
            fd[:, k] = (evaluate(fixed, x + e) - evaluate(fixed, x - e)) / (2 * h)
        err = np.abs(jac - fd)
        assert np.all(err <= 1e-5 * np.maximum(np.abs(jac), 1.0))


def test_slack_rows_constant_and_identity_gradient(three_sys):
    fixed = instantiate(three_sys, [0.5, 0.5])
    rng = np.random.default_rng(2)
    x1, x2 = (rng.normal(size=8) + 1j * rng.normal(size=8) for _ in range(2))
    j1, j2 = jacobian(fixed, x1), jacobian(fixed, x2)
    for lab in ("P[3]", "Q[3]"):
        r = three_sys.labels.index(lab)
        np.testing.assert_array_equal(j1[r], j2[r])
    names = three_sys.var_names
    r = three_sys.labels.index("circle[2]")
    expect = np.zeros(8, dtype=complex)
    expect[names.index("pv_cos[2]")] = 2 * x1[names.index("pv_cos[2]")]
    expect[names.index("pv_sin[2]")] = 2 * x1[names.index("pv_sin[2]")]
    np.testing.assert_allclose(j1[r], expect)


def test_no_coupling_without_branch(ten_sys):
    bus_of = [v.bus for v in ten_sys.vars]
    net = load_fixture("ten_bus")
    for eq in ten_sys.equations:
        for t in eq:
            buses = {bus_of[i] for i, e in enumerate(t.exps) if e}
            if len(buses) == 2:
                a, b = sorted(buses)
                assert b in net.neighbors(a)


def test_hash_stable_and_sensitive(three_sys):
    again = polynomialize(load_fixture("three_bus"))
    assert again.system_hash == three_sys.system_hash
    assert polynomialize(load_fixture("two_bus")).system_hash != three_sys.system_hash
    assert 0 <= three_sys.system_hash < 2 ** 64


def test_dump_one_line_per_equation(three_sys):
    text = three_sys.dump()
    assert len(text.strip().splitlines()) == 8


@pytest.mark.parametrize("name, size, dprod", [
    ("two_bus", 2, 4), ("three_bus", 6, 64), ("ten_bus", 23, 2 ** 23)])
def test_eliminate_slack_sizes(name, size, dprod):
    red, _ = eliminate_slack(polynomialize(load_fixture(name)))
    assert red.n_vars == red.n_eqs == size
    assert math.prod(red.degrees) == dprod
    assert max(red.degrees) <= 2


def test_two_bus_reduced_solutions_match_closed_form(two_plain):
    red, back = eliminate_slack(two_plain)
    sols = solve_total_degree(instantiate(red, []), seed=5)
    assert len(sols) == 2
    full = instantiate(two_plain, [])
    mags = []
    for s in sols.solutions:
        x = back(s.point, [])
        assert np.max(np.abs(evaluate(full, x))) < 1e-10
        names = two_plain.var_names
        mags.append(abs(x[names.index("pq_vcos[2]")] + 1j * x[names.index("pq_vsin[2]")]))
        # slack power equals the load plus zero line losses
        assert x[names.index("slack_p[1]")] == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(sorted(mags, reverse=True), oracles.two_bus_vmag(1.0),
                               atol=1e-10)


@pytest.mark.parametrize("name", ["two_bus_load", "three_bus"])
def test_eliminate_slack_preserves_solution_count(name):
    sys = polynomialize(load_fixture(name))
    rng = np.random.default_rng(17)
    m = len(sys.params)
    for _ in range(10):
        lam = rng.uniform(-1, 1, m) + 1j * rng.uniform(-1, 1, m)
        full = solve_total_degree(instantiate(sys, lam), seed=1)
        red = solve_at(sys, lam, seed=1)
        assert len(full) == len(red)


def _random_state(rng, net):
    vm = {b.id: (b.vset if b.kind != "pq" else rng.uniform(0.6, 1.2)) for b in net.buses}
    th = {b.id: (0.0 if b.kind == "slack" else rng.uniform(-np.pi, np.pi)) for b in net.buses}
    return vm, th


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), name=st.sampled_from(["three_bus", "ten_bus"]))
def test_substitution_consistency(seed, name):
    """Polynomial residuals equal the trigonometric balance mismatches."""
    net = load_fixture(name)
    doc = oracles.fixture_doc(name)
    sys = polynomialize(net)
    rng = np.random.default_rng(seed)
    vm, th = _random_state(rng, net)
    lam = dict(zip(sys.params, rng.uniform(0, 1, len(sys.params))))
    x = np.zeros(sys.n_vars)
    for i, v in enumerate(sys.vars):
        if v.kind == "pv_cos":
            x[i] = math.cos(th[v.bus])
        elif v.kind == "pv_sin":
            x[i] = math.sin(th[v.bus])
        elif v.kind == "pq_vcos":
            x[i] = vm[v.bus] * math.cos(th[v.bus])
        elif v.kind == "pq_vsin":
            x[i] = vm[v.bus] * math.sin(th[v.bus])
        else:
            x[i] = rng.normal()
    f = evaluate(instantiate(sys, [lam[p] for p in sys.params]), x).real
    ids = [b.id for b in net.buses]
    p, q = oracles.polar_injections(doc, [vm[i] for i in ids], [th[i] for i in ids])
    names = sys.var_names
    for k, b in enumerate(net.buses):
        p_sched = b.pgen - b.pload
        q_sched = -b.qload
        if b.injection:
            p_sched += lam[b.injection.param] * b.injection.unit_p
        if b.kind == "slack":
            p_sched += x[names.index(f"slack_p[{b.id}]")]
            q_sched += x[names.index(f"slack_q[{b.id}]")]
        elif b.kind == "pv":
            q_sched += x[names.index(f"pv_q[{b.id}]")]
        scale = 1.0 + abs(p[k]) + abs(q[k])
        assert abs(f[sys.labels.index(f"P[{b.id}]")] - (p[k] - p_sched)) < 1e-12 * scale
        assert abs(f[sys.labels.index(f"Q[{b.id}]")] - (q[k] - q_sched)) < 1e-12 * scale

from __future__ import annotations

import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfhom.paramhom import reduced_system
from pfhom.polysys import FixedSystem, instantiate
from pfhom.tracker import (
    GAMMA_BAND,
    LinearHomotopy,
    PathResult,
    Solution,
    SolutionSet,
    TrackOptions,
    assemble,
    classify_real,
    generic_gamma,
    refine,
    solve_total_degree,
    total_degree_start,
    track_path,
    track_paths,
)

import oracles


def univariate(coeffs) -> FixedSystem:
    """Polynomial in one variable from coefficients, highest power first."""
    d = len(coeffs) - 1
    return FixedSystem([{(d - k,): c for k, c in enumerate(coeffs)}], 1)


def test_start_points_square_roots_of_one():
    _, pts = total_degree_start(1, [2], seed=0, b=[1.0])
    got = sorted(pts[i][0].real for i in range(len(pts)))
    assert got == pytest.approx([-1.0, 1.0], abs=1e-15)


@pytest.mark.parametrize("degrees", [[2, 2], [1, 1, 2, 2], [2, 1, 2, 2, 1, 2]])
def test_start_points_solve_start_system(degrees):
    start, pts = total_degree_start(len(degrees), degrees, seed=7)
    assert len(pts) == math.prod(degrees)
    allpts = pts[:]
    assert len({tuple(np.round(p, 12)) for p in allpts}) == len(pts)
    for p in allpts:
        assert np.max(np.abs(start.evaluate(p))) < 1e-14


def test_start_points_lazy_indexing():
    _, pts = total_degree_start(3, [2, 2, 2], seed=1)
    assert pts.digits(5) == [1, 0, 1]
    np.testing.assert_array_equal(pts.take([5]), pts[5][None, :])
    with pytest.raises(IndexError):
        pts[8]


def test_track_sqrt_two():
    hom = LinearHomotopy(univariate([1, 0, -1]), univariate([1, 0, -2]), 1.0)
    for x0, root in ((1.0, math.sqrt(2)), (-1.0, -math.sqrt(2))):
        r = track_path(hom, [x0])
        assert r.status == "converged"
        assert abs(r.endpoint[0] - root) < 1e-10


def test_track_to_imaginary_unit():
    gamma = generic_gamma(np.random.default_rng([3, 1]))
    hom = LinearHomotopy(univariate([1, 0, -1]), univariate([1, 0, 1]), gamma)
    ends = [track_path(hom, [x0]).endpoint[0] for x0 in (1.0, -1.0)]
    assert sorted(e.imag for e in ends) == pytest.approx([-1.0, 1.0], abs=1e-10)


def test_random_quadratics_all_converge():
    rng = np.random.default_rng(2024)
    gamma = generic_gamma(np.random.default_rng([99, 1]))
    start = univariate([1, 0, -1])
    for _ in range(100):
        b, c = rng.normal(size=2) + 1j * rng.normal(size=2)
        hom = LinearHomotopy(start, univariate([1, b, c]), gamma)
        res = track_paths(hom, np.array([[1.0], [-1.0]]))
        assert all(r.status == "converged" for r in res)
        disc = cmath.sqrt(b * b - 4 * c)
        roots = sorted([(-b + disc) / 2, (-b - disc) / 2], key=lambda z: (z.real, z.imag))
        got = sorted((r.endpoint[0] for r in res), key=lambda z: (z.real, z.imag))
        np.testing.assert_allclose(got, roots, atol=1e-9)


def test_circle_hyperbola():
    target = FixedSystem([{(2, 0): 1, (0, 2): 1, (0, 0): -5}, {(1, 1): 1, (0, 0): -2}], 2)
    sols = solve_total_degree(target, seed=3)
    assert len(sols) == 4
    got = sorted((round(p[0].real, 9), round(p[1].real, 9)) for p in sols.points())
    want = [(round(x, 9), round(y, 9)) for x, y in oracles.circle_hyperbola_roots()]
    assert got == want
    assert np.max(np.abs(sols.points().imag)) < 1e-10


def test_linear_single_solution():
    sols = solve_total_degree(univariate([1, -3]))
    assert len(sols) == 1
    assert sols.points()[0, 0] == pytest.approx(3.0, abs=1e-12)


def test_three_bus_reduced_generic(three_sys):
    reduced, _ = reduced_system(three_sys)
    target = instantiate(reduced, [0.3 - 0.4j, -0.5 + 0.2j])
    sols = solve_total_degree(target, seed=11)
    assert sols.n_paths_tracked == 64
    assert len(sols) == 6
    assert sols.n_converged + sols.n_diverged + sols.n_failed == 64
    for p in sols.points():
        assert np.max(np.abs(target.evaluate(p))) < 1e-10


def test_determinism_bitwise(three_sys):
    reduced, _ = reduced_system(three_sys)
    target = instantiate(reduced, [0.3 - 0.4j, -0.5 + 0.2j])
    a = solve_total_degree(target, seed=11).points()
    b = solve_total_degree(target, seed=11).points()
    assert a.tobytes() == b.tobytes()


def test_workers_do_not_change_results(three_sys):
    reduced, _ = reduced_system(three_sys)
    target = instantiate(reduced, [0.3 - 0.4j, -0.5 + 0.2j])
    a = solve_total_degree(target, seed=11, workers=1)
    b = solve_total_degree(target, seed=11, workers=2)
    assert a.points().tobytes() == b.points().tobytes()
    assert (a.n_diverged, a.n_failed) == (b.n_diverged, b.n_failed)


def test_refine_quadratic_convergence():
    r = refine(univariate([1, 0, -2]), [math.sqrt(2) + 1e-6])
    assert r.converged
    assert abs(r.x[0] - math.sqrt(2)) < 1e-12


def test_refine_gives_up_far_from_roots():
    # Newton on x^2 + 1 from a real start never leaves the real line
    r = refine(univariate([1, 0, 1]), [0.3], max_iter=20)
    assert not r.converged


def test_refine_double_root_flagged():
    r = refine(univariate([1, -2, 1]), [1.1])
    assert (not r.converged) or r.suspect_singular


def _set(points):
    return SolutionSet([Solution(np.asarray(p, dtype=complex)) for p in points],
                       len(points), len(points), 0, 0)


def test_classify_real_rules():
    sols = _set([[1.0 + 1e-12j, 2.0 - 1e-13j], [0.5 + 0.3j, 1.0], [0.5 - 0.3j, 1.0],
                 [2.0 + 1e-6j, 0.0]])
    real, nonreal = classify_real(sols, tau_real=1e-6)
    assert len(real) == 1
    np.testing.assert_array_equal(real[0], [1.0, 2.0])
    assert len(nonreal) == 3  # the conjugate pair and the tie at exactly tau


def test_assemble_merges_duplicates():
    x = np.array([1.0 + 0.5j])
    res = [PathResult("converged", x, 10, 0.0), PathResult("diverged", None, 5, 0.0),
           PathResult("converged", x + 1e-12, 10, 0.0),
           PathResult("step_failure", None, 3, 1.0)]
    sols = assemble(res)
    assert len(sols) == 1
    assert sols.solutions[0].hits == 2
    assert sols.solutions[0].multiplicity_flag == "suspect_singular"
    assert (sols.n_converged, sols.n_diverged, sols.n_failed) == (2, 1, 1)


@pytest.mark.parametrize("kwargs", [
    {"dt_min": 0.2}, {"dt_max": 1.0}, {"newton_tol": 0.0}, {"endgame_t": 1.0},
    {"newton_max_iter": 0}])
def test_options_validation(kwargs):
    with pytest.raises(ValueError):
        TrackOptions(**kwargs)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2 ** 63))
def test_generic_gamma_avoids_real_axis(seed):
    g = generic_gamma(np.random.default_rng(seed))
    assert abs(abs(g) - 1.0) < 1e-15
    theta = abs(cmath.phase(g))
    assert min(theta, math.pi - theta) > GAMMA_BAND


@settings(max_examples=30, deadline=None)
@given(re=st.floats(-3, 3), im=st.floats(0.01, 3), sign=st.sampled_from([-1, 1]))
def test_conjugate_parity_on_real_cubics(re, im, sign):
    """Real cubic with a chosen complex root pair: the nonreal solutions come
    in conjugate pairs."""
    r = complex(re, sign * im)
    coeffs = np.poly([r, r.conjugate(), 0.7]).real
    sols = solve_total_degree(univariate(list(coeffs)), seed=5)
    real, nonreal = classify_real(sols, 1e-6)
    assert len(nonreal) % 2 == 0
    for p in nonreal:
        assert any(abs(p[0].conjugate() - q[0]) < 1e-7 for q in nonreal)

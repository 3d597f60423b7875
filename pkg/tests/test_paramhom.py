from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfhom.netmodel import load_fixture
from pfhom.paramhom import (
    StaleCacheError,
    StartCache,
    count_real,
    draw_lambda_star,
    solve_generic,
    track_to,
)
from pfhom.polysys import bus_voltages, polynomialize

import oracles


def test_three_bus_cache(three_sys, three_cache):
    assert len(three_cache.solutions) == 6
    assert three_cache.bound_used == 64
    assert three_cache.system_hash == three_sys.system_hash
    assert three_cache.max_residual(three_sys) < 1e-10
    assert np.all(np.abs(three_cache.lambda_star) <= 1.0)
    assert np.all(three_cache.lambda_star.imag != 0)


def test_two_bus_cache(two_sys, two_cache):
    assert len(two_cache.solutions) == 2
    assert two_cache.bound_used == 4


def test_lambda_star_seeded():
    a = draw_lambda_star(3, 42)
    np.testing.assert_array_equal(a, draw_lambda_star(3, 42))
    assert not np.array_equal(a, draw_lambda_star(3, 43))
    assert np.all(np.abs(a) <= 1.0)


def test_json_format_and_round_trip(three_cache):
    text = three_cache.to_json()
    doc = json.loads(text)
    assert set(doc) == {"lambda_star", "solutions", "seed", "system_hash", "bound_used"}
    assert all(len(pair) == 2 for pair in doc["lambda_star"])
    back = StartCache.from_json(text)
    assert back.to_json() == text
    for a, b in zip(back.solutions, three_cache.solutions):
        assert a.tobytes() == b.tobytes()


def test_replay_after_reload_is_bit_identical(three_sys, three_cache, tmp_path):
    path = tmp_path / "c.json"
    three_cache.save(path)
    reloaded = StartCache.load(path)
    lam = [2.5, 1.5]
    a = track_to(three_sys, three_cache, lam).points()
    b = track_to(three_sys, reloaded, lam).points()
    assert a.tobytes() == b.tobytes()


def test_track_to_lambda_star_is_identity(three_sys, three_cache):
    sols = track_to(three_sys, three_cache, three_cache.lambda_star)
    assert len(sols) == 6
    for x in three_cache.solutions:
        assert min(np.max(np.abs(p - x)) for p in sols.points()) < 1e-10


def test_stale_cache_rejected(two_sys, three_cache):
    with pytest.raises(StaleCacheError):
        track_to(two_sys, three_cache, [1.0])


def test_count_real_rejects_complex(three_sys, three_cache):
    with pytest.raises(ValueError):
        count_real(three_sys, three_cache, [1.0 + 0.5j, 1.0])


@pytest.mark.parametrize("p, expect", [(1.0, 2), (4.9, 2), (5.1, 0), (6.0, 0)])
def test_two_bus_counts_follow_discriminant(two_sys, two_cache, p, expect):
    assert (oracles.two_bus_discriminant(p) > 0) == (expect == 2)
    assert count_real(two_sys, two_cache, [p]).k_real == expect


def test_two_bus_voltages_match_closed_form(two_net, two_sys, two_cache):
    res = count_real(two_sys, two_cache, [1.0])
    mags = sorted((abs(bus_voltages(two_net, two_sys, x)[2]) for x in res.real), reverse=True)
    np.testing.assert_allclose(mags, oracles.two_bus_vmag(1.0), atol=1e-10)


@pytest.mark.parametrize("lam", [(1.0, 2.0), (0.0, 0.0), (7.0, 6.0), (6.0, 5.0), (4.0, 6.0)])
def test_count_matches_multistart_oracle(three_sys, three_cache, lam):
    doc = oracles.fixture_doc("three_bus")
    want = oracles.multistart_real_count(doc, dict(zip(three_sys.params, lam)))
    assert count_real(three_sys, three_cache, list(lam)).k_real == want


@settings(max_examples=30, deadline=None)
@given(l1=st.floats(-10, 10), l2=st.floats(-10, 10))
def test_real_count_bookkeeping(three_sys, three_cache, l1, l2):
    res = count_real(three_sys, three_cache, [l1, l2])
    assert len(res.nonreal) % 2 == 0
    total = res.k_real + len(res.nonreal) + res.set.n_diverged + res.set.n_failed
    assert total == len(three_cache.solutions)
    assert 0 <= res.k_real <= 6


def test_targets_independent_of_order(three_sys, three_cache):
    pts = [[1.0, 1.0], [6.5, 5.5], [3.0, 0.2]]
    fwd = [track_to(three_sys, three_cache, p).points().tobytes() for p in pts]
    rev = [track_to(three_sys, three_cache, p).points().tobytes() for p in reversed(pts)]
    assert fwd == rev[::-1]


def test_optional_gamma_gives_same_solutions(three_sys, three_cache):
    lam = [2.0, 3.0]
    a = track_to(three_sys, three_cache, lam).points()
    b = track_to(three_sys, three_cache, lam, gamma_seed=7).points()
    assert len(a) == len(b)
    for p in a:
        assert min(np.max(np.abs(p - q)) for q in b) < 1e-8


def test_checkpoint_resume_after_torn_write(three_sys, tmp_path):
    fresh = solve_generic(three_sys, seed=42).to_json()
    ckpt = tmp_path / "run.ckpt"
    assert solve_generic(three_sys, seed=42, checkpoint=ckpt).to_json() == fresh
    lines = ckpt.read_text().splitlines(keepends=True)
    assert len(lines) == 65
    # keep the header and 20 records, then half of the next record
    ckpt.write_text("".join(lines[:21]) + lines[21][: len(lines[21]) // 2])
    assert solve_generic(three_sys, seed=42, checkpoint=ckpt).to_json() == fresh
    assert len(ckpt.read_text().splitlines()) == 65


def test_checkpoint_from_other_system_is_refused(three_sys, tmp_path):
    ckpt = tmp_path / "run.ckpt"
    other = polynomialize(load_fixture("two_bus_load"))
    solve_generic(other, seed=42, checkpoint=ckpt)
    with pytest.raises(StaleCacheError):
        solve_generic(three_sys, seed=42, checkpoint=ckpt)


def test_checkpoint_with_other_seed_is_refused(three_sys, tmp_path):
    ckpt = tmp_path / "run.ckpt"
    solve_generic(three_sys, seed=1, checkpoint=ckpt)
    with pytest.raises(ValueError, match="different settings"):
        solve_generic(three_sys, seed=2, checkpoint=ckpt)

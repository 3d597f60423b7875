from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from pfhom.netmodel import load_fixture  # noqa: E402
from pfhom.paramhom import solve_generic  # noqa: E402
from pfhom.polysys import polynomialize  # noqa: E402


@pytest.fixture(scope="session")
def three_net():
    return load_fixture("three_bus")


@pytest.fixture(scope="session")
def three_sys(three_net):
    return polynomialize(three_net)


@pytest.fixture(scope="session")
def three_cache(three_sys):
    return solve_generic(three_sys, seed=42)


@pytest.fixture(scope="session")
def grid_50():
    from pfhom.sweep import ParameterGrid, SweepDim

    return ParameterGrid((SweepDim("lam1", 0.0, 7.0, 50), SweepDim("lam2", 0.0, 6.0, 50)))


@pytest.fixture(scope="session")
def sweep_50(three_sys, three_cache, grid_50):
    from pfhom.sweep import run_sweep

    return run_sweep(three_sys, three_cache, grid_50, workers=1)


def outer_seed(sys, cache, guess: float, lam2: float = 0.0):
    """Fold point with ``lam2`` fixed, found by Newton from the real power-flow
    solution closest to singular at ``(guess, lam2)``."""
    import numpy as np

    from pfhom.hiskens import augmented, find_initial_boundary_point, initial_guess, min_singular
    from pfhom.paramhom import count_real, reduced_system

    lam = [guess, lam2]
    aug = augmented(sys, ["lam1"], lam)
    _, back = reduced_system(sys)
    pts = [back.restrict(x).real for x in count_real(sys, cache, lam).real]
    x = min(pts, key=lambda p: min_singular(aug.power_flow(p, np.array(lam))[1])[0])
    return aug, find_initial_boundary_point(aug, initial_guess(aug, x, guess))


@pytest.fixture(scope="session")
def outer_traces(three_sys, three_cache):
    """Closed traces from the two outer-boundary seeds on the lam2 = 0 line."""
    import numpy as np

    from pfhom.hiskens import augmented, trace_boundary

    out = []
    for guess in (19.0, -13.0):
        aug1, z = outer_seed(three_sys, three_cache, guess)
        lam1 = aug1.lam(z)[0]
        aug2 = augmented(three_sys, ["lam1", "lam2"], [lam1, 0.0])
        out.append((aug2, trace_boundary(aug2, np.append(z, 0.0), 0.02)))
    return out


@pytest.fixture(scope="session")
def two_net():
    return load_fixture("two_bus_load")


@pytest.fixture(scope="session")
def two_sys(two_net):
    return polynomialize(two_net)


@pytest.fixture(scope="session")
def two_cache(two_sys):
    return solve_generic(two_sys, seed=42)


@pytest.fixture(scope="session")
def ten_net():
    return load_fixture("ten_bus")


@pytest.fixture(scope="session")
def ten_sys(ten_net):
    return polynomialize(ten_net)


# ---------------------------------------------------------------- acceptance summary

_OUTCOMES: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = _OUTCOMES.setdefault(n, {"title": title, "states": [], "notes": []})
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry["states"].append((item.name, rep.outcome))


@pytest.fixture
def note(request):
    """Attach a measured value to the criterion summary line."""
    mark = request.node.get_closest_marker("criterion")

    def add(text: str):
        n, title = mark.args
        entry = _OUTCOMES.setdefault(n, {"title": title, "states": [], "notes": []})
        entry["notes"].append(text)
        print(text)

    return add


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        entry = _OUTCOMES[n]
        states = [s for _, s in entry["states"]]
        if "failed" in states:
            verdict = "FAIL"
        elif "passed" in states:
            verdict = "PASS"
        else:
            verdict = "SKIP"
        detail = ", ".join(f"{name}={s}" for name, s in entry["states"])
        tr.write_line(f"criterion {n}: {verdict}  {entry['title']}  [{detail}]")
        for text in entry["notes"]:
            tr.write_line(f"    {text}")

import functools

import pytest

from dynprice.demand import DemandModel, ProblemSpec
from dynprice.hjb import SimilarityGrid, solve_value_pde

Q1, C = 1.5, 0.5


def example_spec(sigma: float) -> ProblemSpec:
    return ProblemSpec(DemandModel.linear(Q1), C, sigma)


@functools.lru_cache(maxsize=None)
def cached_solution(sigma: float, n_xi: int = 2001, xi_max: float | None = None):
    spec = example_spec(sigma)
    return solve_value_pde(spec, SimilarityGrid.default(spec, n_xi=n_xi, xi_max=xi_max))


@pytest.fixture(scope="session")
def hjb():
    """hjb(sigma, n_xi=2001, xi_max=None) -> HjbSolution, solved once per session."""
    return cached_solution


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): acceptance criterion n")
    config._acceptance = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        item.config._acceptance.append((mark.args[0], mark.args[1], item.name, rep.outcome, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = getattr(config, "_acceptance", [])
    if not rows:
        return
    by_n = {}
    for n, title, name, outcome, detail in rows:
        by_n.setdefault(n, (title, []))[1].append((name, outcome, detail))
    terminalreporter.section("acceptance criteria")
    for n in sorted(by_n):
        title, items = by_n[n]
        ok = all(outcome == "passed" for _, outcome, _ in items)
        parts = [f"{name} {outcome}" + (f" ({detail})" if detail else "") for name, outcome, detail in sorted(items)]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {status} criterion {n} ({title}) :: " + " | ".join(parts))

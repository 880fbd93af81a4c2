import pytest

CRITERIA = {
    1: "local submission overhead",
    2: "wrapped overhead ordering",
    3: "Pareto sampler",
    4: "state-machine stationary distribution",
    5: "round-robin store oracle equivalence",
    6: "wire round-trip and mutation rejection",
    7: "attribution without ramp-up",
    8: "transient filter",
    9: "monitoring footprint",
    10: "end-to-end integration",
}

_results_key = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record a criterion's outcome, print it, and fail the test if it did not pass."""
    results = request.config.stash.setdefault(_results_key, {})

    def check(n, ok, detail):
        line = f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'} {CRITERIA[n]}: {detail}"
        results[n] = line
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_results_key, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in CRITERIA:
        terminalreporter.write_line(
            results.get(n, f"ACCEPTANCE {n:>2} FAIL {CRITERIA[n]}: no result (errored or not run)"))

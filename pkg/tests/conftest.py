import pytest

from tradepack.synth import SynthConfig, generate_market

_acceptance: dict[int, tuple[str, list[str]]] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    number, title = marker
    entry = _acceptance.setdefault(number, (title, []))
    if report.when == "call" or report.outcome != "passed":
        entry[1].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is not None:
        report.acceptance = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, outcomes = _acceptance[number]
        ok = outcomes and all(o == "passed" for o in outcomes)
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def small_market():
    cfg = SynthConfig(seed=11, n_stocks=2, n_days=5, packages_per_stock=40,
                      noise_traders_per_day=15, impact_A=5e-5, jump_b=5e-4)
    records, truth = generate_market(cfg)
    return cfg, records, truth

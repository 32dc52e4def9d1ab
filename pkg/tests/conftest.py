import os

from hypothesis import HealthCheck, settings

import registry

MIN_PROPERTY_CASES = 1000

settings.register_profile(
    "msba",
    max_examples=MIN_PROPERTY_CASES,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much, HealthCheck.data_too_large],
    print_blob=True,
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "msba"))


def pytest_collection_modifyitems(config, items):
    # acceptance checks run last so the property re-run can reuse module results
    items.sort(key=lambda item: item.fspath.basename == "test_acceptance.py")


def pytest_runtest_logreport(report):
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        registry.OUTCOMES[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if registry.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in registry.ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

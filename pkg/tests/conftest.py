import sys
from pathlib import Path

from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "acceptance_results", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, text in sorted(results):
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {text}")

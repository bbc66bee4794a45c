import pytest
import torch

from fundus_screen.dataset import generate_fixture_dataset

torch.set_num_threads(1)

_criteria: list[tuple[int, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture(scope="session")
def fixture_data(tmp_path_factory):
    """16 training images (8/class) plus 8-image validation and test splits."""
    root = tmp_path_factory.mktemp("fixture")
    splits = generate_fixture_dataset(root, n_per_class=8, image_size=64, seed=1, eval_n_per_class=4)
    return root, splits


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = report.user_properties and dict(report.user_properties).get("criterion")
    if marker:
        number, title = marker
        _criteria.append((number, title, report.outcome.upper(), report.nodeid))


def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m:
        item.user_properties.append(("criterion", tuple(m.args)))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome, _ in sorted(_criteria):
        terminalreporter.write_line(f"criterion {number:>2}  {outcome:<7} {title}")

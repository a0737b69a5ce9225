import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile("default", max_examples=25, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def clean_dirs(tmp_path_factory):
    """Eight procedural training images and four held-out ones, 96x96."""
    from mepsnet.samples import write_clean_set

    root = tmp_path_factory.mktemp("clean")
    write_clean_set(root / "train", 8, 96, seed=1, prefix="tr")
    write_clean_set(root / "test", 4, 96, seed=2, prefix="te")
    return root


@pytest.fixture(scope="session")
def mini_shdd(clean_dirs, tmp_path_factory):
    from mepsnet.shdd import generate_dataset

    out = tmp_path_factory.mktemp("shdd") / "moderate"
    generate_dataset(out, "moderate", 7, {"train": clean_dirs / "train", "test": clean_dirs / "test"})
    return out


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record and print a one-line acceptance verdict, then assert it."""
    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import pytest

from fineehr.harness import load_config

# (criterion, passed, detail) appended by the acceptance tests
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []

# tiny end-to-end config: seconds, not minutes
SMALL_OVERRIDES = [
    "data.synthetic={n_admissions: 60, categories: ["
    "{name: A, presence_probability: 1.0, signal_strength: 0.5}, "
    "{name: B, presence_probability: 0.8, signal_strength: 0.0}]}",
    "word2vec.dim=8",
    "word2vec.epochs=2",
    "siamese.epochs=2",
    "weighting.epochs=5",
    "classifiers.logreg.epochs=50",
    "classifiers.mlp.epochs=20",
    "classifiers.mlp.hidden=8",
]


@pytest.fixture
def small_config():
    def make(extra=(), **kw):
        return load_config(None, SMALL_OVERRIDES + list(extra), **kw)
    return make


@pytest.fixture
def record_criterion():
    def record(name, passed, detail=""):
        ACCEPTANCE_RESULTS.append((name, bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        line = f"{'PASS' if passed else 'FAIL'}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)

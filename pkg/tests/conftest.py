import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthetic import SYNTH_HYPERPARAMS, SYNTH_TOKENIZER, simple_corpus

_ACCEPTANCE_FILE = "test_acceptance.py"


def pytest_runtest_logreport(report):
    """One pass/fail line per acceptance criterion."""
    if report.when != "call" or _ACCEPTANCE_FILE not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    outcome = "PASS" if report.passed else "FAIL"
    print(f"\nACCEPTANCE {name}: {outcome}", flush=True)


@pytest.fixture(scope="session")
def simple_model():
    """Classifier trained on the trivially separable corpus, plus its test split."""
    from sfw_guard.model import train

    train_set, test_set = simple_corpus()
    clf = train(train_set, SYNTH_TOKENIZER, SYNTH_HYPERPARAMS)
    return clf, train_set, test_set

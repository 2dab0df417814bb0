import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pacrf.episodes import SyntheticConfig, generate_synthetic  # noqa: E402
from pacrf.encoder import build_vocabulary  # noqa: E402
from pacrf.labelspace import build_label_set  # noqa: E402

SMALL_SYNTH = SyntheticConfig(vocab_size=40, num_types=8, test_types=3, lexicon_size=2,
                              continuation_size=2, p_multi=0.8, min_length=5, max_length=8,
                              sentences_per_type=14, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpora():
    """(train, test) synthetic corpora small enough for second-scale training."""
    return generate_synthetic(SMALL_SYNTH)


@pytest.fixture(scope="session")
def small_vocab(small_corpora):
    train, test = small_corpora
    return build_vocabulary(list(train.sentences) + list(test.sentences))


@pytest.fixture
def two_types():
    return build_label_set(["Attack", "Marry"])


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance criteria verdicts at the end of the run."""
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])

import pytest

from malobf.dataset import Dataset, SyntheticConfig, generate_synthetic, shuffle_split
from malobf.feature_vocab import build_vocabulary

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_corpus():
    cfg = SyntheticConfig(n_benign=200, n_malicious=100, n_benign_features=120, n_malware_features=30, seed=7)
    return generate_synthetic(cfg)[0]


@pytest.fixture(scope="session")
def small_split(small_corpus):
    vocab = build_vocabulary(small_corpus)
    return shuffle_split(Dataset.from_samples(small_corpus, vocab), 0.3, seed=1)

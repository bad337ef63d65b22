import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rep.amr.extract import Document, Mention  # noqa: E402
from rep.amr.graph import parse_penman  # noqa: E402
from rep.amr.synthetic import SyntheticConfig, generate_synthetic  # noqa: E402

TITANIC_TOKENS = "Jack and Rose see the boat striking an iceberg and sinking .".split()

TITANIC_PENMAN = """
(s / see-01
   :ARG0 (a / and
            :op1 (p / person :name (n / name :op1 "Jack"))
            :op2 (p2 / person :name (n2 / name :op1 "Rose")))
   :ARG1 (a2 / and
            :op1 (s2 / strike-01
                     :ARG0 (b / boat)
                     :ARG1 (i / iceberg))
            :op2 (s3 / sink-01 :ARG1 b)))
"""

TITANIC_ALIGN = {"s": [3], "a": [1], "p": [0], "p2": [2], "a2": [9], "s2": [6], "b": [5], "i": [8], "s3": [10]}


def titanic_document() -> Document:
    g = parse_penman(TITANIC_PENMAN, TITANIC_ALIGN)
    coref = [[Mention(0, 0, 0)], [Mention(2, 2, 2)], [Mention(4, 5, 5)], [Mention(7, 8, 8)]]
    return Document("titanic", list(TITANIC_TOKENS), [(0, len(TITANIC_TOKENS))], [g], coref, penman=[TITANIC_PENMAN])


@pytest.fixture
def titanic():
    return titanic_document()


@pytest.fixture(scope="session")
def small_corpus():
    cfg = SyntheticConfig(n_scripts=5, n_docs=80, seed=11)
    return cfg, generate_synthetic(cfg)


@pytest.fixture(scope="session")
def small_dataset(small_corpus):
    """Train/dev/test instances and the train vocabulary for the small corpus."""
    from rep.amr.extract import extract_corpus
    from rep.amr.rewrite import ExtractionConfig
    from rep.train import build_dataset

    _, docs = small_corpus
    res = extract_corpus(docs, ExtractionConfig())
    return build_dataset(res.chains, res.events, ExtractionConfig(seed=3, per_chain_cap=2), (0.6, 0.2, 0.2))


# ------------------------------------------------------------- acceptance log


def pytest_configure(config):
    config.rep_acceptance = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "rep_acceptance", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

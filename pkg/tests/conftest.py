from importlib import resources

import pytest

from clozelm.model import ModelConfig, ModelParams
from clozelm.pretrain import Corpus
from clozelm.tokenizer import build_vocab


@pytest.fixture(scope="session")
def toy_text() -> str:
    return resources.files("clozelm").joinpath("data/toy_corpus.txt").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def toy_vocab(toy_text):
    return build_vocab(toy_text, 200)


@pytest.fixture(scope="session")
def toy_corpus(toy_text, toy_vocab):
    return Corpus.from_lines(toy_text.splitlines(), toy_vocab)


@pytest.fixture
def tiny_config():
    return ModelConfig(n_layers=2, d_model=16, n_heads=2, d_ff=32, vocab_size=50, max_len=24, dropout=0.0)


@pytest.fixture
def tiny_params(tiny_config):
    return ModelParams.init(tiny_config, seed=3)


# --- acceptance report ------------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def report_criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        _ACCEPTANCE[number] = (passed, detail)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

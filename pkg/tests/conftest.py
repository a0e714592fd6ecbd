import logging
import time

import pytest

from callgram.experiment import ExperimentConfig, run_experiment

ACCEPTANCE_SEED = 0

# criterion number -> (description, passed, detail)
CRITERIA = {}


def record(number, description, passed, detail=""):
    CRITERIA[number] = (description, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        description, passed, detail = CRITERIA[number]
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:>2} {status}  {description}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


def _run(tmp_path_factory, ngram):
    logging.getLogger("callgram").setLevel(logging.WARNING)
    out = tmp_path_factory.mktemp(f"run_n{ngram}")
    cfg = ExperimentConfig(ngram=ngram, seed=ACCEPTANCE_SEED)
    start = time.perf_counter()
    state = run_experiment(cfg, out, threads=4)
    state["elapsed"] = time.perf_counter() - start
    state["out"] = out
    state["config"] = cfg
    return state


@pytest.fixture(scope="session")
def bigram_run(tmp_path_factory):
    return _run(tmp_path_factory, 2)


@pytest.fixture(scope="session")
def trigram_run(tmp_path_factory):
    return _run(tmp_path_factory, 3)

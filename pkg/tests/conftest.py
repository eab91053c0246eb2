import functools
import time

import numpy as np
import pytest

from gridvgae.config import model_preset
from gridvgae.graph import Graph, synthetic_corpus
from gridvgae.train import train

ACCEPTANCE_SEEDS = (1, 2, 3)


@functools.lru_cache(maxsize=None)
def trained(decoder: str, seed: int, preset: str = "homogeneous"):
    """Engage-like training run shared between test modules.

    Returns ``(corpus, checkpoint, records, seconds)``.
    """
    t0 = time.perf_counter()
    corpus = synthetic_corpus(preset, 300, seed)
    ckpt, records = train(corpus, model_preset("engage-like", decoder=decoder), seed=seed)
    return corpus, ckpt, records, time.perf_counter() - t0


def random_graph(rng: np.random.Generator, n: int, p: float) -> Graph:
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return Graph(n, frozenset(zip(iu[keep].tolist(), ju[keep].tolist())))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# one summary line per acceptance criterion

_acceptance: dict[int, list] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    props = dict(report.user_properties)
    if "acceptance" not in props:
        return
    entry = _acceptance.setdefault(props["acceptance"], [props.get("title", ""), True, []])
    entry[1] = entry[1] and report.passed
    if props.get("detail"):
        entry[2].append(props["detail"])


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_acceptance):
        title, ok, details = _acceptance[k]
        line = f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if details:
            line += "  [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)

import numpy as np
import pytest

from msmcvq.cli import main

SMALL_CONFIG = """\
stages:
  rates: [1, 4]
  geometries:
    - {heads: 2, codewords: 16, head_dim: 8}
    - {heads: 2, codewords: 16, head_dim: 8}
associate:
  codewords: 64
ema:
  epochs: 10
"""


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """A zero-residual 10-utterance corpus trained with a small geometry."""
    root = tmp_path_factory.mktemp("small")
    cfg = root / "cfg.yaml"
    cfg.write_text(SMALL_CONFIG)
    argv = ["synth", str(root / "corpus"), "--dim", "16", "--std", "0", "--segment-multiple", "4", "--utterances", "10", "--frames", "64"]
    assert main(argv) == 0
    assert main(["train", str(root / "corpus"), str(root / "art"), "--config", str(cfg)]) == 0
    assert main(["encode", str(root / "corpus"), "--artifacts", str(root / "art"), "--out", str(root / "tok")]) == 0
    return root


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record a one-line pass/fail verdict for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])

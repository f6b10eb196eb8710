import pytest

from variance_tts.dsp import AudioConfig
from variance_tts.features import extract_corpus
from variance_tts.synthetic import SYMBOLS, make_corpus


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """10 synthetic utterances: (corpus dir, manifest path, extract result)."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = make_corpus(root, n_utts=10, seed=0)
    res = extract_corpus(manifest, SYMBOLS, AudioConfig(), root / "cache")
    return root, manifest, res


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, text = RESULTS[n]
        tag = "INFO" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"[{tag}] criterion {n:2d}: {text}")

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from variance_tts.alignment import (
    PhonemeAlignment, boundary_diff, durations_to_frames, format_alignment,
    parse_alignment, parse_alignment_text,
)
from variance_tts.dsp import AudioConfig
from variance_tts.errors import DataError, ParseError

CFG = AudioConfig()
P = CFG.frame_period


def test_single_line():
    a = parse_alignment_text("AH0\t0.000\t0.120\n")
    assert a.entries == [("AH0", 0.0, 0.12)]


def test_overlap_rejected_with_line_number():
    with pytest.raises(ParseError) as err:
        parse_alignment_text("# header\nA\t0.000\t0.120\nB\t0.100\t0.200\n")
    assert err.value.line == 3


def test_non_monotonic_rejected():
    with pytest.raises(ParseError):
        parse_alignment_text("A\t0.2000\t0.1000\n")


def test_unknown_symbol_rejected():
    with pytest.raises(ParseError, match="unknown phoneme"):
        parse_alignment_text("A\t0.0\t0.1\nZZ\t0.1\t0.2\n", vocab={"A"})


def test_three_entry_fixture(tmp_path):
    path = tmp_path / "a.tsv"
    path.write_text("# utt1\nsil\t0.0000\t0.0500\nHH\t0.0500\t0.1250\nAY1\t0.1250\t0.3000\n", encoding="utf-8")
    a = parse_alignment(path, vocab={"sil", "HH", "AY1"})
    assert a.phonemes == ["sil", "HH", "AY1"]
    assert a.entries[1] == ("HH", 0.05, 0.125)


def test_missing_file():
    with pytest.raises(DataError):
        parse_alignment("/nonexistent/file.tsv")


def test_parse_serialize_parse_idempotent():
    text = "sil\t0.000000\t0.050000\nA\t0.050000\t0.123457\nB\t0.123457\t0.400000\n"
    a = parse_alignment_text(text)
    b = parse_alignment_text(format_alignment(a))
    assert a.entries == b.entries
    assert format_alignment(b) == text


def test_single_phoneme_whole_utterance():
    a = PhonemeAlignment([("A", 0.0, 37 * P)])
    assert list(durations_to_frames(a, CFG, 37)) == [37]


def test_two_equal_phonemes():
    a = PhonemeAlignment([("A", 0.0, 5 * P), ("B", 5 * P, 10 * P)])
    assert list(durations_to_frames(a, CFG, 10)) == [5, 5]


def test_residual_goes_to_last_phoneme():
    # boundaries round to 4 and 9 frames; T = 10 leaves one frame
    a = PhonemeAlignment([("A", 0.0, 4.2 * P), ("B", 4.2 * P, 8.8 * P)])
    assert list(durations_to_frames(a, CFG, 10)) == [4, 6]


def test_negative_residual_spills_backwards():
    a = PhonemeAlignment([("A", 0.0, 6 * P), ("B", 6 * P, 7 * P)])
    assert list(durations_to_frames(a, CFG, 5)) == [5, 0]


def test_too_few_frames():
    a = PhonemeAlignment([("A", 0.0, P), ("B", P, 2 * P), ("C", 2 * P, 3 * P)])
    with pytest.raises(DataError):
        durations_to_frames(a, CFG, 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.001, 0.3), min_size=1, max_size=15), st.integers(-5, 5))
def test_durations_sum_to_T(lengths, slack):
    t = np.concatenate([[0], np.cumsum(lengths)])
    a = PhonemeAlignment([(f"p{i}", float(t[i]), float(t[i + 1])) for i in range(len(lengths))])
    T = max(len(lengths), int(round(t[-1] / P)) + slack)
    d = durations_to_frames(a, CFG, T)
    assert d.sum() == T
    assert np.all(d >= 0)


def shifted(a, deltas):
    bounds = [a.entries[0][1]] + [e[2] for e in a.entries]
    for i, dlt in enumerate(deltas, start=1):
        bounds[i] += dlt
    return PhonemeAlignment([(e[0], bounds[i], bounds[i + 1]) for i, e in enumerate(a.entries)])


BASE = PhonemeAlignment([(s, 0.1 * i, 0.1 * (i + 1)) for i, s in enumerate("ABCDE")])


def test_boundary_diff_identity_and_shift():
    assert boundary_diff(BASE, BASE) == 0.0
    assert boundary_diff(BASE, shifted(BASE, [0.010] * 4)) == pytest.approx(0.010, abs=1e-12)


def test_boundary_diff_fixture():
    b = shifted(BASE, [0.005, -0.010, 0.015, -0.020])
    assert boundary_diff(BASE, b) == pytest.approx(0.0125, abs=1e-12)


def test_boundary_diff_count_mismatch():
    with pytest.raises(DataError):
        boundary_diff(BASE, PhonemeAlignment(BASE.entries[:3]))


def test_boundary_diff_symmetric_and_triangle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x, y, z = (shifted(BASE, rng.uniform(-0.04, 0.04, 4)) for _ in range(3))
        assert boundary_diff(x, y) == boundary_diff(y, x)
        assert boundary_diff(x, z) <= boundary_diff(x, y) + boundary_diff(y, z) + 1e-15

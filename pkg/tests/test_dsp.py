import numpy as np
import pytest

from variance_tts.dsp import (
    LOG_FLOOR, AudioConfig, MelSpectrogram, Waveform, energy_from_stft, extract_mel,
    griffin_lim, hann_window, istft, mel_filterbank, read_wav, stft, write_wav,
)
from variance_tts.errors import ConfigError, DataError
from variance_tts.pitch import estimate_f0
from variance_tts.synthetic import make_utterance

CFG = AudioConfig()


def tone(freq, seconds=1.0, amp=0.5, sr=22050):
    t = np.arange(int(seconds * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


def test_config_validation():
    with pytest.raises(ConfigError):
        AudioConfig(hop_size=2048)
    with pytest.raises(ConfigError):
        AudioConfig(fmax=20000)
    with pytest.raises(ConfigError):
        AudioConfig(n_mels=0)


def test_stft_silence():
    assert np.all(np.abs(stft(Waveform(np.zeros(5000), 22050), CFG)) == 0)


def test_stft_frame_count():
    assert stft(Waveform(np.zeros(22050), 22050), CFG).shape == (87, 513)
    assert stft(Waveform(np.zeros(1), 22050), CFG).shape[0] == 1


def test_stft_empty_rejected():
    with pytest.raises(DataError):
        stft(np.zeros(0), CFG)


def test_stft_bin_center_peak_matches_direct_dft():
    k = 40
    w = tone(k * CFG.sample_rate / CFG.frame_size)
    spec = np.abs(stft(w, CFG))
    interior = spec[4:-4]
    assert np.all(np.argmax(interior, axis=1) == k)
    # direct DFT of one interior frame as oracle
    t = 10
    seg = np.pad(w.samples, 512, mode="reflect")[t * 256 : t * 256 + 1024] * hann_window(1024)
    n = np.arange(1024)
    direct = np.array([abs(np.sum(seg * np.exp(-2j * np.pi * b * n / 1024))) for b in range(513)])
    assert np.allclose(spec[t], direct, rtol=1e-9, atol=1e-9)


def test_istft_inverts_stft():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(5000) * 0.1
    y = istft(stft(x, CFG), CFG, length=x.size)
    assert np.allclose(x, y, atol=1e-10)


def direct_filterbank(cfg):
    """Per-filter, per-bin loop construction of the same triangles."""
    def mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def hz(m):
        return 700.0 * (10 ** (m / 2595.0) - 1.0)

    lo_m, hi_m = mel(cfg.fmin), mel(cfg.fmax)
    pts = [hz(lo_m + (hi_m - lo_m) * i / (cfg.n_mels + 1)) for i in range(cfg.n_mels + 2)]
    fb = np.zeros((cfg.n_mels, cfg.frame_size // 2 + 1))
    for m in range(cfg.n_mels):
        a, b, c = pts[m], pts[m + 1], pts[m + 2]
        for k in range(fb.shape[1]):
            f = k * cfg.sample_rate / cfg.frame_size
            if a < f <= b:
                fb[m, k] = (f - a) / (b - a)
            elif b < f < c:
                fb[m, k] = (c - f) / (c - b)
        fb[m] *= 2.0 / (c - a)
    return fb


def test_filterbank_shape_properties():
    fb = mel_filterbank(CFG)
    freqs = np.arange(513) * CFG.sample_rate / CFG.frame_size
    assert fb.shape == (80, 513)
    assert np.all(fb >= 0)
    assert np.all(fb[:, freqs > CFG.fmax] == 0)
    for row in fb:
        nz = np.nonzero(row)[0]
        assert nz.size > 0
        seg = row[nz[0] : nz[-1] + 1]
        peak = int(np.argmax(seg))
        assert np.all(np.diff(seg[: peak + 1]) >= 0)
        assert np.all(np.diff(seg[peak:]) <= 0)


def test_mel_silence_is_log_floor():
    m = extract_mel(Waveform(np.zeros(4000), 22050), CFG)
    assert m.frames.shape == (16, 80)
    assert np.all(m.frames == np.log(LOG_FLOOR))


def test_mel_white_noise_energy_matches_direct_filterbank():
    rng = np.random.default_rng(3)
    w = Waveform(rng.uniform(-0.5, 0.5, 22050), 22050)
    mel = np.exp(extract_mel(w, CFG).frames)
    oracle = np.abs(stft(w, CFG)) @ direct_filterbank(CFG).T
    assert abs(mel.sum() - oracle.sum()) / oracle.sum() <= 0.05


def test_energy_closed_forms():
    assert energy_from_stft(np.zeros((1, 513)))[0] == 0.0
    assert energy_from_stft(np.ones((1, 513)))[0] == np.sqrt(513)


def test_energy_random_frame_direct_sum():
    rng = np.random.default_rng(4)
    frames = rng.standard_normal((5, 513)) + 1j * rng.standard_normal((5, 513))
    oracle = [np.sqrt(sum(abs(v) ** 2 for v in row)) for row in frames]
    assert np.allclose(energy_from_stft(frames), oracle, rtol=1e-9, atol=0)


def test_energy_nonnegative_and_zero_only_for_silence():
    w = Waveform(np.concatenate([np.zeros(3000), tone(300, 0.2).samples, np.zeros(3000)]), 22050)
    e = energy_from_stft(stft(w, CFG))
    assert np.all(e >= 0)
    assert np.all((e == 0) == (np.abs(stft(w, CFG)).max(axis=1) == 0))


def test_frame_count_consistency():
    for n in [300, 4096, 22050, 22051]:
        w = tone(150, n / 22050)
        T = stft(w, CFG).shape[0]
        assert extract_mel(w, CFG).n_frames == T
        assert len(estimate_f0(w, CFG)) == T
        assert energy_from_stft(stft(w, CFG)).size == T


def test_wav_roundtrip(tmp_path):
    w = tone(200, 0.1)
    write_wav(tmp_path / "a.wav", w)
    back = read_wav(tmp_path / "a.wav", 22050)
    assert np.max(np.abs(back.samples - w.samples)) <= 1 / 32768 + 1e-12
    with pytest.raises(DataError):
        read_wav(tmp_path / "a.wav", 16000)


def test_griffin_lim_silence():
    m = MelSpectrogram(np.full((20, 80), np.log(LOG_FLOOR)), CFG)
    assert np.max(np.abs(griffin_lim(m, 10).samples)) <= 1e-3


def test_griffin_lim_zero_iterations_is_zero_phase_istft():
    w = tone(220, 0.3)
    m = extract_mel(w, CFG)
    mag = np.maximum(np.exp(m.frames) @ np.linalg.pinv(mel_filterbank(CFG)).T, 0)
    expected = np.clip(istft(mag.astype(complex), CFG, CFG.hop_size * (mag.shape[0] - 1)), -1, 1)
    assert np.array_equal(griffin_lim(m, 0).samples, expected)


def test_griffin_lim_round_trip_correlation():
    utt = make_utterance("gl", np.random.default_rng(0), CFG)
    m = extract_mel(utt.waveform, CFG)
    back = extract_mel(griffin_lim(m, 60), CFG)
    assert back.n_frames == m.n_frames
    # correlation is meaningless on silent frames sitting at the log floor
    informative = m.frames.max(axis=1) > np.log(LOG_FLOOR) + 1.0
    corr = [np.corrcoef(a, b)[0, 1] for a, b in zip(m.frames[informative], back.frames[informative])]
    assert np.mean(corr) >= 0.9

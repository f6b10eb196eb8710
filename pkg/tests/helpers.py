"""Small fixtures shared by model, training and acceptance tests."""

import numpy as np

from variance_tts.features import UtteranceFeatures
from variance_tts.model import AcousticModel, CorpusStats, ModelConfig, QuantizerSpec
from variance_tts.pitch import N_SCALES


def grad_config(**kw) -> ModelConfig:
    """d=8, one block per stack, 64-bit: small enough for finite differences."""
    base = dict(encoder_layers=1, decoder_layers=1, hidden=8, heads=2, conv_kernels=(3, 1), conv_filter=12,
                predictor_filter=6, predictor_dropout=0.0, enc_dec_dropout=0.0, n_bins=16, n_mels=5,
                vocab_size=7, dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def toy_stats(n_mels=5, n_bins=16) -> CorpusStats:
    return CorpusStats(
        pitch=QuantizerSpec("log_scale_pitch", 80.0, 300.0, n_bins),
        energy=QuantizerSpec("uniform_energy", 0.0, 20.0, n_bins),
        mel_mean=np.linspace(-4, -2, n_mels),
        mel_std=np.linspace(1.0, 2.0, n_mels),
        pitch_spec_std=np.full(N_SCALES, 0.5),
    )


def toy_model(seed=0, **kw) -> AcousticModel:
    cfg = grad_config(**kw)
    return AcousticModel(cfg, toy_stats(cfg.n_mels, cfg.n_bins), seed=seed)


def random_features(rng, uid="u", n_phonemes=None, n_mels=5, vocab=7, max_dur=4) -> UtteranceFeatures:
    N = int(n_phonemes or rng.integers(1, 6))
    d = rng.integers(1, max_dur + 1, N).astype(np.int64)
    T = int(d.sum())
    f0 = rng.uniform(90, 250, T)
    f0[rng.random(T) < 0.3] = 0.0
    return UtteranceFeatures(
        id=uid,
        phoneme_ids=rng.integers(0, vocab, N).astype(np.int64),
        durations=d,
        mel=rng.normal(-3, 1, (T, n_mels)),
        energy=rng.uniform(0, 20, T),
        f0=f0,
        pitch=np.where(f0 > 0, f0, 150.0),
        pitch_spec=rng.normal(0, 0.3, (T, N_SCALES)),
        pitch_mean=float(rng.normal(5, 0.2)),
        pitch_std=float(rng.uniform(0.05, 0.3)),
    )

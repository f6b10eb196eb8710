import csv

import numpy as np
import pytest

from variance_tts import pipeline
from variance_tts.cli import main
from variance_tts.config import build_config, load_config, parse_config_text
from variance_tts.errors import ConfigError, DataError
from variance_tts.model import VarianceControls
from variance_tts.training import load_checkpoint


@pytest.fixture(scope="module")
def trained(toy_corpus, tmp_path_factory):
    root, _, _ = toy_corpus
    run = tmp_path_factory.mktemp("run")
    (run / "run.cfg").write_text("steps = 4\nbatch_size = 5\nwarmup_steps = 10\n")
    assert main(["--config", str(run / "run.cfg"), "train", "--cache", str(root / "cache"), "--out", str(run)]) == 0
    return root, run


def test_config_parsing():
    vals = parse_config_text("# comment\nhidden = 32\nconv_kernels = (3, 1)\npreset = tiny\nw_mel = 2.0\n")
    cfg = build_config(vals)
    assert cfg.model.hidden == 32 and cfg.model.conv_kernels == (3, 1)
    assert cfg.loss.mel == 2.0 and cfg.optimizer.d_model == 32


def test_config_full_preset():
    cfg = build_config({"preset": "full"})
    assert cfg.model.hidden == 256 and cfg.model.encoder_layers == 4 and cfg.optimizer.warmup_steps == 4000


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key"):
        build_config({"hiden": 3})
    with pytest.raises(ConfigError):
        parse_config_text("novalue\n")
    with pytest.raises(ConfigError):
        build_config({"beta1": 2.0})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_usage_errors_exit_1(capsys):
    assert main(["nonsense"]) == 1
    assert main(["synth"]) == 1
    assert main(["--help"]) == 0


def test_bad_config_exits_1(tmp_path, toy_corpus):
    (tmp_path / "bad.cfg").write_text("hidden = 7\nheads = 2\n")
    root, _, _ = toy_corpus
    assert main(["--config", str(tmp_path / "bad.cfg"), "train", "--cache", str(root / "cache"),
                 "--out", str(tmp_path / "r")]) == 1


def test_extract_cli(tmp_path, toy_corpus, capsys):
    root, manifest, _ = toy_corpus
    code = main(["extract", "--manifest", str(manifest), "--symbols", str(root / "symbols.txt"),
                 "--out", str(tmp_path / "c")])
    assert code == 0
    assert "extracted 10" in capsys.readouterr().out
    assert (tmp_path / "c" / "features" / "utt000.vtf").read_bytes() == (root / "cache" / "features" / "utt000.vtf").read_bytes()


def test_extract_cli_failure_exit_2(tmp_path, capsys):
    assert main(["toy-corpus", "--out", str(tmp_path), "--n", "2"]) == 0
    (tmp_path / "wav" / "utt001.wav").write_bytes(b"not a wav")
    code = main(["extract", "--manifest", str(tmp_path / "manifest.jsonl"), "--symbols",
                 str(tmp_path / "symbols.txt"), "--out", str(tmp_path / "c")])
    assert code == 2
    err = capsys.readouterr().err
    assert "FAILED utt001" in err
    assert (tmp_path / "c" / "features" / "utt000.vtf").exists()


def test_missing_cache_exit_2(tmp_path):
    assert main(["train", "--cache", str(tmp_path / "none"), "--out", str(tmp_path / "r")]) == 2


def test_train_cli_writes_checkpoint_and_log(trained):
    _, run = trained
    ck = load_checkpoint(run / "checkpoint.vtc")
    assert ck.step == 4 and ck.symbols[0] == "sil"
    with open(run / "train_log.csv") as f:
        assert len(list(csv.reader(f))) == 5


def test_train_cli_resume(trained, tmp_path):
    root, run = trained
    import shutil

    shutil.copytree(run, tmp_path / "r")
    args = ["--config", str(run / "run.cfg"), "train", "--cache", str(root / "cache"), "--out", str(tmp_path / "r"),
            "--steps", "6", "--resume"]
    assert main(args) == 0
    assert load_checkpoint(tmp_path / "r" / "checkpoint.vtc").step == 6


def test_synth_cli(trained, tmp_path, capsys):
    _, run = trained
    out = tmp_path / "m.vtm"
    code = main(["synth", "--checkpoint", str(run / "checkpoint.vtc"), "--phonemes", "sil AA M sil",
                 "--out", str(out), "--csv", str(tmp_path / "m.csv"), "--wav", str(tmp_path / "a.wav"),
                 "--gl-iters", "2"])
    assert code == 0
    printed = capsys.readouterr().out
    mel = pipeline.load_mel(out)["mel"]
    assert f"frames: {mel.shape[0]}" in printed and "seconds:" in printed
    assert (tmp_path / "a.wav").stat().st_size > 44
    with open(tmp_path / "m.csv") as f:
        assert len(list(csv.reader(f))) == mel.shape[0] + 1


def test_synth_unknown_phoneme_exit_2(trained, tmp_path, capsys):
    _, run = trained
    code = main(["synth", "--checkpoint", str(run / "checkpoint.vtc"), "--phonemes", "sil QX sil",
                 "--out", str(tmp_path / "m.vtm")])
    assert code == 2
    assert "QX" in capsys.readouterr().err


def test_synth_bad_multiplier_exit_1(trained, tmp_path):
    _, run = trained
    assert main(["synth", "--checkpoint", str(run / "checkpoint.vtc"), "--phonemes", "sil AA sil",
                 "--out", str(tmp_path / "m.vtm"), "--pitch-mult", "-1"]) == 1


def test_synth_corrupt_checkpoint_exit_2(trained, tmp_path):
    _, run = trained
    buf = bytearray((run / "checkpoint.vtc").read_bytes())
    buf[100] ^= 0xFF
    (tmp_path / "c.vtc").write_bytes(bytes(buf))
    assert main(["synth", "--checkpoint", str(tmp_path / "c.vtc"), "--phonemes", "AA", "--out", str(tmp_path / "m")]) == 2


def test_synth_duration_multiplier_total(trained):
    _, run = trained
    ck = load_checkpoint(run / "checkpoint.vtc")
    phon = "sil AA IY M EH sil".split()
    base = pipeline.synthesize_text(ck, phon)
    slow = pipeline.synthesize_text(ck, phon, VarianceControls(duration_mult=2.0))
    assert slow.n_frames == int(np.floor(base.durations_raw * 2.0 + 0.5).clip(min=0).sum())


def test_synth_default_controls_bitwise(trained):
    _, run = trained
    ck = load_checkpoint(run / "checkpoint.vtc")
    a = pipeline.synthesize_text(ck, ["sil", "OW", "L", "sil"])
    b = pipeline.synthesize_text(ck, ["sil", "OW", "L", "sil"], VarianceControls(1.0, 1.0, 1.0))
    assert np.array_equal(a.mel.frames, b.mel.frames)


def test_eval_cli_rows(trained, tmp_path):
    root, run = trained
    assert main(["eval", "--checkpoint", str(run / "checkpoint.vtc"), "--cache", str(root / "cache"),
                 "--out", str(tmp_path), "--gl-iters", "4"]) == 0
    with open(tmp_path / "report.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 11 and rows[-1]["id"] == "mean"
    emae = [float(r["energy_mae"]) for r in rows[:-1]]
    assert float(rows[-1]["energy_mae"]) == pytest.approx(np.mean(emae), rel=1e-12)
    assert (tmp_path / "report.txt").exists()


def test_eval_model_source(trained):
    root, run = trained
    from variance_tts.features import load_cache

    rep = pipeline.run_eval(load_checkpoint(run / "checkpoint.vtc"), load_cache(root / "cache").features[:2], "model")
    assert rep.count == 2
    with pytest.raises(DataError):
        pipeline.run_eval(load_checkpoint(run / "checkpoint.vtc"), [], "nope")


def test_eval_reference_is_zero(toy_corpus, tmp_path):
    root, _, _ = toy_corpus
    assert main(["eval", "--reference", "--cache", str(root / "cache"), "--out", str(tmp_path)]) == 0
    with open(tmp_path / "report.csv") as f:
        mean = list(csv.DictReader(f))[-1]
    assert float(mean["dtw"]) == 0.0 and float(mean["energy_mae"]) == 0.0


def test_eval_needs_checkpoint(toy_corpus, tmp_path):
    root, _, _ = toy_corpus
    assert main(["eval", "--cache", str(root / "cache"), "--out", str(tmp_path)]) == 1


def test_dump_pitch_from_cache(toy_corpus, tmp_path):
    root, _, res = toy_corpus
    out = tmp_path / "p.csv"
    assert main(["dump-pitch", "--cache", str(root / "cache"), "--id", "utt002", "--out", str(out)]) == 0
    frames, f0 = pipeline.read_pitch_csv(out)
    u = res.features[2]
    assert frames.size == int(u.voiced.sum())
    assert np.array_equal(f0, u.f0[frames])


def test_dump_pitch_all_unvoiced(tmp_path):
    assert pipeline.write_pitch_csv(tmp_path / "p.csv", np.zeros(12)) == 0
    assert (tmp_path / "p.csv").read_text().strip() == "frame,f0"


def test_dump_pitch_from_synthesis(trained, tmp_path):
    _, run = trained
    out = tmp_path / "p.csv"
    assert main(["dump-pitch", "--checkpoint", str(run / "checkpoint.vtc"), "--phonemes", "sil AA sil",
                 "--out", str(out)]) == 0
    ck = load_checkpoint(run / "checkpoint.vtc")
    pitch = pipeline.synthesize_text(ck, ["sil", "AA", "sil"]).pitch
    assert np.array_equal(pipeline.read_pitch_csv(out)[1], pitch)


def test_dump_pitch_usage(toy_corpus, tmp_path):
    root, _, _ = toy_corpus
    assert main(["dump-pitch", "--cache", str(root / "cache"), "--out", str(tmp_path / "p.csv")]) == 1


def test_mel_file_round_trip(trained, tmp_path):
    _, run = trained
    r = pipeline.synthesize_text(load_checkpoint(run / "checkpoint.vtc"), ["sil", "IY", "sil"])
    pipeline.save_mel(tmp_path / "m.vtm", r)
    back = pipeline.load_mel(tmp_path / "m.vtm")
    assert back["mel"].tobytes() == r.mel.frames.tobytes()
    assert np.array_equal(back["durations"], r.durations)

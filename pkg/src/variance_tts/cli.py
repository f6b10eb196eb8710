"""Command line: extract, train, synth, eval, dump-pitch, toy-corpus.

Exit codes: 0 success, 1 usage/config, 2 data, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import load_config
from .dsp import griffin_lim, write_wav
from .errors import VarianceTTSError
from .features import extract_corpus, load_cache, read_symbols
from .model import AcousticModel, VarianceControls
from .synthetic import make_corpus
from .training import TrainConfig, load_checkpoint, train

log = logging.getLogger("variance_tts")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="variance-tts", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    s = sub.add_parser("extract", help="compute the feature cache for a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--symbols", required=True)
    s.add_argument("--out", required=True, help="cache directory")
    s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("train", help="train on a feature cache")
    s.add_argument("--cache", required=True)
    s.add_argument("--out", required=True, help="run directory (checkpoint + log)")
    s.add_argument("--steps", type=int)
    s.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.vtc")

    s = sub.add_parser("synth", help="synthesize a mel spectrogram from phonemes")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--phonemes", required=True, help="space-separated symbols")
    s.add_argument("--out", required=True, help="mel output file")
    s.add_argument("--csv", help="also write the mel as CSV")
    s.add_argument("--wav", help="also write Griffin-Lim audio")
    s.add_argument("--gl-iters", type=int, default=60)
    s.add_argument("--pitch-mult", type=float, default=1.0)
    s.add_argument("--energy-mult", type=float, default=1.0)
    s.add_argument("--duration-mult", type=float, default=1.0)

    s = sub.add_parser("eval", help="objective prosody metrics against the ground truth")
    s.add_argument("--checkpoint", help="required unless --reference")
    s.add_argument("--cache", required=True)
    s.add_argument("--out", required=True, help="report directory")
    s.add_argument("--source", choices=("audio", "model"), default="audio")
    s.add_argument("--gl-iters", type=int, default=60)
    s.add_argument("--reference", action="store_true", help="score ground truth against itself")

    s = sub.add_parser("dump-pitch", help="voiced frame,f0 CSV for a cached or synthesized utterance")
    s.add_argument("--out", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--cache", help="feature cache directory (with --id)")
    src.add_argument("--checkpoint", help="synthesize from --phonemes")
    s.add_argument("--id")
    s.add_argument("--phonemes")
    s.add_argument("--pitch-mult", type=float, default=1.0)

    s = sub.add_parser("toy-corpus", help="write a synthetic corpus with known alignments")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=10)
    return p


def _controls(a) -> VarianceControls:
    return VarianceControls(a.pitch_mult, getattr(a, "energy_mult", 1.0), getattr(a, "duration_mult", 1.0))


def cmd_extract(a, cfg) -> int:
    symbols = read_symbols(a.symbols)
    res = extract_corpus(a.manifest, symbols, cfg.audio, a.out, workers=max(1, a.workers))
    print(f"extracted {len(res.features)} utterance(s) into {a.out}")
    for uid, err in res.failures:
        print(f"FAILED {uid}: {err}", file=sys.stderr)
    if res.failures:
        print(f"{len(res.failures)} utterance(s) failed", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_train(a, cfg) -> int:
    cache = load_cache(a.cache)
    out = Path(a.out)
    mcfg = cfg.model
    if mcfg.vocab_size < len(cache.symbols):
        raise VarianceTTSError(f"vocab_size {mcfg.vocab_size} is smaller than the symbol set ({len(cache.symbols)})")
    tcfg = cfg.train if a.steps is None else TrainConfig(**{**cfg.train.__dict__, "steps": a.steps})
    resume = load_checkpoint(out / "checkpoint.vtc") if a.resume else None
    model = AcousticModel(mcfg, cache.stats, seed=tcfg.seed)
    audio = {k: getattr(cache.audio, k) for k in ("sample_rate", "frame_size", "hop_size", "n_mels", "fmin", "fmax")}
    res = train(cache.features, model, cfg.optimizer, cfg.loss, tcfg, out, resume=resume,
                symbols=cache.symbols, audio=audio)
    last = res.history[-1] if res.history else None
    msg = f"step {res.checkpoint.step}"
    if last:
        msg += f" total {last['total']:.5f} mel {last['mel']:.5f}"
    print(msg)
    return EXIT_OK


def cmd_synth(a, cfg) -> int:
    ck = load_checkpoint(a.checkpoint)
    r = pipeline.synthesize_text(ck, a.phonemes.split(), _controls(a))
    pipeline.save_mel(a.out, r)
    if a.csv:
        pipeline.write_mel_csv(a.csv, r.mel.frames)
    if a.wav:
        write_wav(a.wav, griffin_lim(r.mel, a.gl_iters))
    print(f"frames: {r.n_frames}")
    print(f"seconds: {r.seconds():.4f}")
    return EXIT_OK


def cmd_eval(a, cfg) -> int:
    cache = load_cache(a.cache)
    if not a.reference and not a.checkpoint:
        raise _UsageError("eval needs --checkpoint (or --reference)")
    if a.reference:
        report = pipeline.reference_report(cache.features, (cache.stats.energy.lo, cache.stats.energy.hi))
    else:
        report = pipeline.run_eval(load_checkpoint(a.checkpoint), cache.features, a.source, a.gl_iters)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    text = report.to_text()
    (out / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_dump_pitch(a, cfg) -> int:
    if a.cache:
        if not a.id:
            raise _UsageError("dump-pitch --cache needs --id")
        matches = [u for u in load_cache(a.cache).features if u.id == a.id]
        if not matches:
            raise VarianceTTSError(f"utterance {a.id!r} not in cache")
        f0 = matches[0].f0
    else:
        if not a.phonemes:
            raise _UsageError("dump-pitch --checkpoint needs --phonemes")
        ck = load_checkpoint(a.checkpoint)
        f0 = pipeline.synthesize_text(ck, a.phonemes.split(), VarianceControls(pitch_mult=a.pitch_mult)).pitch
    n = pipeline.write_pitch_csv(a.out, f0)
    print(f"wrote {n} voiced frame(s) to {a.out}")
    return EXIT_OK


def cmd_toy_corpus(a, cfg) -> int:
    seed = cfg.train.seed
    manifest = make_corpus(a.out, a.n, seed, cfg.audio)
    print(f"manifest: {manifest}")
    print(f"symbols: {Path(a.out) / 'symbols.txt'}")
    return EXIT_OK


COMMANDS = {
    "extract": cmd_extract, "train": cmd_train, "synth": cmd_synth, "eval": cmd_eval,
    "dump-pitch": cmd_dump_pitch, "toy-corpus": cmd_toy_corpus,
}


def main(argv=None) -> int:
    try:
        a = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = {} if a.seed is None else {"seed": a.seed}
        cfg = load_config(a.config, overrides)
        return COMMANDS[a.verb](a, cfg)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except VarianceTTSError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (ArithmeticError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

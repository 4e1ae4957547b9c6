"""Command-line surface: synth-data, train, attack, sweep, simulate.

All commands share one flat JSON configuration format; flags override
config values. Randomness flows from a single --seed through named
sub-streams so reruns with the same config and seed reproduce CSV and
WAV artifacts byte for byte. Every run writes a run_manifest.json with
the resolved configuration and SHA-256 checksums of its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from offsetadv import corpus as corpus_mod
from offsetadv.attack import AttackJob, run_attack
from offsetadv.audio import DistortionBound, distortion_db, load_wav, save_wav
from offsetadv.corpus import CorpusSpec, generate_corpus, write_corpus, load_corpus
from offsetadv.ctc import Alphabet
from offsetadv.evaluate import (
    ChannelConfig,
    channel_evaluation,
    edit_distance,
    emit_report,
    offset_sweep,
)
from offsetadv.frontend import FrontendConfig
from offsetadv.model import TrainConfig, initialize_model, load_model, save_model, train, transcribe

OUT_DIR_ENV = "OFFSETADV_OUT_DIR"

_FRONTEND_KEYS = ("frame_length", "hop_size", "sample_rate", "num_mel_filters",
                  "num_ceps", "log_floor")


class CliError(Exception):
    """Configuration or input problem reported as a one-line error."""


def derive_seed(seed: int, stream: str) -> int:
    """Deterministic per-purpose seed derived from the command seed."""
    digest = hashlib.sha256(f"{seed}/{stream}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_config(args) -> dict:
    config = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(config, dict):
            raise CliError("config file must contain a flat JSON object")
    # flags win over config
    for key, value in vars(args).items():
        if key in ("command", "config", "func") or value is None:
            continue
        config[key.replace("-", "_")] = value
    config.setdefault("seed", 0)
    config.setdefault(
        "out_dir", os.environ.get(OUT_DIR_ENV, ".")
    )
    return config


def _frontend_from(config: dict) -> FrontendConfig:
    kwargs = {k: config[k] for k in _FRONTEND_KEYS if k in config}
    return FrontendConfig(**kwargs)


def _out_dir(config: dict) -> Path:
    out = Path(config["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, config: dict, sub_seeds: dict,
                    inputs: list, outputs: list, started: float) -> None:
    manifest = {
        "command": command,
        "config": {k: v for k, v in sorted(config.items())},
        "seed": config["seed"],
        "sub_seeds": sub_seeds,
        "inputs": [str(p) for p in inputs],
        "outputs": {p.name: _sha256(p) for p in outputs},
        "duration_s": round(time.monotonic() - started, 3),
    }
    with open(out / "run_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_synth_data(args) -> int:
    started = time.monotonic()
    config = _load_config(args)
    out = _out_dir(config)
    freq = config.get("char_frequencies", dict(corpus_mod.DEFAULT_CHAR_FREQUENCIES))
    spec = CorpusSpec(
        seed=derive_seed(config["seed"], "corpus"),
        num_utterances=config.get("num_utterances", 500),
        chars_per_utterance=(config.get("chars_min", 3), config.get("chars_max", 8)),
        char_duration=config.get("char_duration", 3200),
        noise_level=config.get("noise_level", 0.02),
        char_frequencies=freq,
    )
    data = generate_corpus(spec)
    manifest = write_corpus(data, out)
    outputs = sorted(out.glob("wavs/*.wav")) + [manifest]
    _write_manifest(out, "synth-data", config, {"corpus": spec.seed},
                    [], outputs, started)
    print(f"synth-data: {len(data.train)} train + {len(data.heldout)} held-out "
          f"utterances in {out}")
    return 0


def cmd_train(args) -> int:
    started = time.monotonic()
    config = _load_config(args)
    if "corpus_dir" not in config:
        raise CliError("train requires --corpus-dir")
    out = _out_dir(config)
    frontend = _frontend_from(config)
    data = load_corpus(config["corpus_dir"])
    spec_alphabet = "".join(sorted({c for _, t in data.all_entries for c in t}))
    alphabet = Alphabet(config.get("alphabet", "abcdefghij "))
    missing = set(spec_alphabet) - set(alphabet.symbols)
    if missing:
        raise CliError(f"corpus contains characters outside the alphabet: {missing}")
    init_seed = derive_seed(config["seed"], "init")
    train_seed = derive_seed(config["seed"], "train")
    model = initialize_model(
        alphabet,
        num_ceps=frontend.num_ceps,
        hidden_size=config.get("hidden_size", 64),
        seed=init_seed,
    )
    cfg = TrainConfig(
        learning_rate=config.get("learning_rate", TrainConfig.learning_rate),
        epochs=config.get("epochs", TrainConfig.epochs),
        batch_size=config.get("batch_size", TrainConfig.batch_size),
        seed=train_seed,
        silence_pad_max=config.get("silence_pad_max", TrainConfig.silence_pad_max),
    )
    model, history = train(model, data.train, cfg, frontend, heldout=data.heldout)
    ckpt = out / "model.ckpt"
    save_model(model, ckpt)
    metrics = out / "metrics.csv"
    with open(metrics, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,train_loss,heldout_exact_match\n")
        for row in history:
            fh.write(f"{row.epoch},{row.train_loss!r},{row.heldout_exact_match!r}\n")
    _write_manifest(out, "train", config,
                    {"init": init_seed, "train": train_seed},
                    [config["corpus_dir"]], [ckpt, metrics], started)
    best = max((h.heldout_exact_match for h in history), default=0.0)
    print(f"train: {cfg.epochs} epochs, best held-out exact match {best:.3f}, "
          f"checkpoint {ckpt}")
    return 0


def cmd_attack(args) -> int:
    started = time.monotonic()
    config = _load_config(args)
    for key in ("model", "original", "target"):
        if key not in config:
            raise CliError(f"attack requires --{key}")
    out = _out_dir(config)
    frontend = _frontend_from(config)
    model = load_model(config["model"])
    original = load_wav(config["original"])
    job = AttackJob(
        original=original,
        target=config["target"],
        bound=DistortionBound(config.get("max_db", 66.02)),
        iterations=config.get("iterations", 1000),
        batch_size=config.get("batch_size", 8),
        mode=config.get("mode", "offset_training"),
        learning_rate=config.get("learning_rate", 10.0),
        seed=derive_seed(config["seed"], "attack"),
        hop=config.get("hop", frontend.hop_size),
    )
    result = run_attack(job, model, frontend)

    adv_path = out / "adversarial.wav"
    delta_path = out / "perturbation.wav"
    save_wav(result.adversarial, adv_path)
    save_wav(result.perturbation, delta_path)
    loss_path = out / "loss.csv"
    with open(loss_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration,ctc_loss\n")
        for i, loss in enumerate(result.loss_history):
            fh.write(f"{i},{loss!r}\n")
    decoded = transcribe(model, result.adversarial, frontend)
    summary = {
        "mode": job.mode,
        "target": job.target,
        "target_length": len(job.target),
        "max_db": job.bound.max_db,
        "achieved_db": result.achieved_db,
        "iterations_run": result.iterations_run,
        "final_decode": decoded,
        "edit_distance_at_offset_0": edit_distance(decoded, job.target),
    }
    summary_path = out / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, "attack", config, {"attack": job.seed},
                    [config["model"], config["original"]],
                    [adv_path, delta_path, loss_path, summary_path], started)
    print(f"attack: mode={job.mode} achieved_db={result.achieved_db:.2f} "
          f"decode={decoded!r} distance={summary['edit_distance_at_offset_0']}")
    return 0


def cmd_sweep(args) -> int:
    started = time.monotonic()
    config = _load_config(args)
    for key in ("model", "wav", "target"):
        if key not in config:
            raise CliError(f"sweep requires --{key}")
    out = _out_dir(config)
    frontend = _frontend_from(config)
    model = load_model(config["model"])
    adv = load_wav(config["wav"])
    report = offset_sweep(
        adv, model, frontend, config["target"],
        max_offset=config.get("max_offset", 800),
        step=config.get("step", 1),
    )
    sweep_path = out / "sweep.csv"
    emit_report(report, sweep_path)
    _write_manifest(out, "sweep", config, {}, [config["model"], config["wav"]],
                    [sweep_path], started)
    worst = max(report.distances)
    zero = sum(1 for d in report.distances if d == 0)
    print(f"sweep: {len(report.offsets)} offsets, max_distance={worst}, "
          f"zero_distance_offsets={zero}, target_length={len(report.target)}")
    return 0


def cmd_simulate(args) -> int:
    started = time.monotonic()
    config = _load_config(args)
    for key in ("model", "wav", "target"):
        if key not in config:
            raise CliError(f"simulate requires --{key}")
    out = _out_dir(config)
    frontend = _frontend_from(config)
    model = load_model(config["model"])
    adv = load_wav(config["wav"])
    snr = config.get("snr_db", 20.0)
    if isinstance(snr, str):
        snr = float(snr)
    bandpass = None
    if config.get("bandpass_low") is not None or config.get("bandpass_high") is not None:
        bandpass = (config.get("bandpass_low", 100.0), config.get("bandpass_high", 7500.0))
    elif not config.get("no_bandpass", False):
        bandpass = (100.0, 7500.0)
    channel = ChannelConfig(
        noise_snr_db=snr if not config.get("no_noise", False) else math.inf,
        random_offset_range=config.get("offset_range", 800),
        bandpass=bandpass,
        trials=config.get("trials", 20),
        seed=derive_seed(config["seed"], "channel"),
    )
    report = channel_evaluation(adv, model, frontend, config["target"], channel)
    channel_path = out / "channel.csv"
    emit_report(report, channel_path)
    _write_manifest(out, "simulate", config, {"channel": channel.seed},
                    [config["model"], config["wav"]], [channel_path], started)
    print(f"simulate: trials={len(report.trials)} "
          f"mean_edit_distance={report.mean_distance!r} "
          f"target_length={len(report.target)}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat JSON configuration file")
    parser.add_argument("--seed", type=int, help="root seed for all sub-streams")
    parser.add_argument("--out-dir", dest="out_dir",
                        help=f"output directory (default ${OUT_DIR_ENV} or .)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="offsetadv",
        description="Generate and evaluate offset-resistant audio adversarial examples.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the synthetic tone corpus")
    _add_common(p)
    p.add_argument("--num-utterances", dest="num_utterances", type=int)
    p.add_argument("--chars-min", dest="chars_min", type=int)
    p.add_argument("--chars-max", dest="chars_max", type=int)
    p.add_argument("--noise-level", dest="noise_level", type=float)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the victim recognizer on a corpus")
    _add_common(p)
    p.add_argument("--corpus-dir", dest="corpus_dir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--hidden-size", dest="hidden_size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run the adversarial perturbation search")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--original")
    p.add_argument("--target")
    p.add_argument("--mode", choices=["baseline", "offset_training"])
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-db", dest="max_db", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="edit distance vs prepended-silence offset")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--wav")
    p.add_argument("--target", required=True)
    p.add_argument("--max-offset", dest="max_offset", type=int)
    p.add_argument("--step", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="evaluate under the simulated channel")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--wav")
    p.add_argument("--target", required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--snr-db", dest="snr_db", type=float)
    p.add_argument("--offset-range", dest="offset_range", type=int)
    p.add_argument("--bandpass-low", dest="bandpass_low", type=float)
    p.add_argument("--bandpass-high", dest="bandpass_high", type=float)
    p.add_argument("--no-noise", dest="no_noise", action="store_true", default=None)
    p.add_argument("--no-bandpass", dest="no_bandpass", action="store_true", default=None)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

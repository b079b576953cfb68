#!/usr/bin/env python3
"""Command-line entry point for uniedit pipelines.

Machine-readable results go to stdout (one JSON document) or to the
output files named on the command line; logs go to stderr.
"""

import argparse
import json
import logging
import sys
from typing import Optional

import numpy as np

from audio_io import load_manifest, read_wav, write_wav
from compressor import CompressorConfig, compress, compressed_frame_rate
from config import RunConfig, create_config_from_args
from dsp import frame_waveform, istft_synthesize, snr_db, stft
from edit_forge import (
    COUNT_TABLES,
    BenchmarkManifest,
    EditsetBuilder,
    TaskDistribution,
    expected_counts_from_json,
    generate_benchmark,
    load_expected_counts,
    validate_benchmark,
)
from errors import AudioIOError, UniEditError
from flow_head import FlowDemoConfig, GuidanceConfig, train_toy_flow
from instruction_parser import BASIC_STYLE, FULL_STYLE
from metrics import evaluate, load_embeddings, load_hypotheses, write_report
from vae import ToyFrameEncoder, UnifiedSequence, latent_stats


def setup_logging(log_file: str = None, verbose: bool = False):
    """Setup logging configuration.

    Args:
        log_file: Optional file path for logging
        verbose: If True, enable debug logging
    """
    log_level = logging.DEBUG if verbose else logging.INFO
    log_format = "[%(asctime)s] %(levelname)s: %(message)s"
    date_format = "%Y-%m-%d %H:%M:%S"

    # Console handler on stderr; stdout carries results
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(logging.Formatter(log_format, datefmt=date_format))

    handlers = [console_handler]

    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(log_level)
        file_handler.setFormatter(logging.Formatter(log_format, datefmt=date_format))
        handlers.append(file_handler)

    logging.basicConfig(level=log_level, handlers=handlers, force=True)


def emit(result: dict) -> None:
    print(json.dumps(result, ensure_ascii=False, sort_keys=True))


def write_json(path, result: dict) -> None:
    try:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(result, handle, ensure_ascii=False, indent=2, sort_keys=True)
            handle.write("\n")
    except OSError as e:
        raise AudioIOError(f"Cannot write {path}: {e}") from e


def parse_arguments(argv: Optional[list[str]] = None):
    """Parse command line arguments.

    Returns:
        Parsed arguments
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Root random seed (or set UNIEDIT_SEED)")
    common.add_argument("--jobs", type=int, help="Worker threads for per-item work (default: 1)")
    common.add_argument("--config", type=str, help="JSON config file (or set UNIEDIT_CONFIG); flags win")
    common.add_argument("--log-file", type=str, help="Log file path (in addition to stderr)")
    common.add_argument("--verbose", "-v", action="store_true", help="Enable verbose (debug) logging")

    parser = argparse.ArgumentParser(
        description="Build, validate and evaluate instruction-driven speech edits",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Frame a clip and report toy latent statistics
  python uniedit.py tokenize clip.wav clip.frames

  # STFT -> iSTFT round trip with SNR report
  python uniedit.py reconstruct clip.wav clip_rt.wav --fft-size 640 --hop-size 160

  # Build a training edit set
  python uniedit.py build-editset sources.jsonl out/ --noise-dir musan/ --seed 7 --jobs 4

  # Generate and validate a basic semantic benchmark
  python uniedit.py generate-bench sources.jsonl bench.jsonl --seed 7 --counts basic
  python uniedit.py validate-bench bench.jsonl basic

  # Score hypothesis transcripts
  python uniedit.py eval bench.jsonl hyps.jsonl report.json --embeddings emb.jsonl

  # Toy flow-matching training and guided sampling
  python uniedit.py flow-demo flow.json --seed 7 --steps 2000
        """,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    tokenize = subparsers.add_parser("tokenize", parents=[common], help="Frame audio and report latent stats")
    tokenize.add_argument("input_path", help="Input 16 kHz WAV")
    tokenize.add_argument("output_path", help="Output frames file (npz)")
    tokenize.add_argument("--compress-factor", type=int, help="Pooling factor for the compressed rate (default: 5)")

    reconstruct = subparsers.add_parser("reconstruct", parents=[common], help="STFT/iSTFT round trip")
    reconstruct.add_argument("input_path", help="Input 16 kHz WAV")
    reconstruct.add_argument("output_path", help="Output WAV")
    reconstruct.add_argument("--fft-size", type=int, help="FFT size (default: 640)")
    reconstruct.add_argument("--hop-size", type=int, help="Hop size (default: 160)")
    reconstruct.add_argument("--window", type=str, help="scipy window name (default: hann)")

    build = subparsers.add_parser("build-editset", parents=[common], help="Construct training edit pairs")
    build.add_argument("manifest", help="Source manifest (JSON lines)")
    build.add_argument("out_dir", help="Output directory")
    build.add_argument("--noise-dir", type=str, help="Directory of noise WAV files (or set UNIEDIT_NOISE_DIR)")
    build.add_argument("--tasks", dest="task_distribution", type=str, help="Task weights, e.g. deletion=2,speed=1")
    build.add_argument("--edit-weight", type=float, help="Loss weight inside edited regions (default: 2.0)")
    build.add_argument("--max-span-tokens", type=int, help="Longest edited span in tokens (default: 3)")
    build.add_argument("--style", dest="instruction_style", choices=[BASIC_STYLE, FULL_STYLE])
    build.add_argument("--snr-min-db", type=float, help="Lowest sampled SNR (default: 0)")
    build.add_argument("--snr-max-db", type=float, help="Highest sampled SNR (default: 20)")

    bench = subparsers.add_parser("generate-bench", parents=[common], help="Generate a text-only benchmark")
    bench.add_argument("manifest", help="Source manifest (JSON lines)")
    bench.add_argument("output_path", help="Benchmark manifest to write")
    bench.add_argument("--tasks", dest="task_distribution", type=str, help="Task weights when --counts is absent")
    bench.add_argument("--counts", dest="count_table", type=str, help="Forced counts: basic, full, acoustic or JSON")
    bench.add_argument("--style", dest="instruction_style", choices=[BASIC_STYLE, FULL_STYLE])
    bench.add_argument("--max-span-tokens", type=int, help="Longest edited span in tokens (default: 3)")

    check = subparsers.add_parser("validate-bench", parents=[common], help="Compare benchmark tallies")
    check.add_argument("manifest", help="Benchmark manifest (JSON lines)")
    check.add_argument("expected", help="Expected counts: basic, full, acoustic or a JSON file")

    ev = subparsers.add_parser("eval", parents=[common], help="Score hypotheses against a manifest")
    ev.add_argument("manifest", help="Edit-set or benchmark manifest")
    ev.add_argument("hypotheses", help="Hypotheses (JSON lines)")
    ev.add_argument("report", help="Report JSON to write")
    ev.add_argument("--embeddings", type=str, help="Speaker embeddings (JSON lines)")
    ev.add_argument("--audio-root", type=str, help="Base directory of relative source paths")

    flow = subparsers.add_parser("flow-demo", parents=[common], help="Toy flow-matching training")
    flow.add_argument("output_path", help="Metrics JSON to write")
    flow.add_argument("--steps", dest="flow_steps", type=int, help="Training steps (default: 2000)")
    flow.add_argument("--sampler-steps", type=int, help="Euler steps (default: 32)")
    flow.add_argument("--cfg-weight", type=float, help="Guidance weight (default: 2.0)")

    return parser.parse_args(argv)


def _expected_counts(spec: str) -> dict:
    if spec in COUNT_TABLES:
        return expected_counts_from_json(spec)
    return load_expected_counts(spec)


def cmd_tokenize(config: RunConfig, logger: logging.Logger) -> int:
    wave = read_wav(config.input_path)
    frames = frame_waveform(wave)
    dist = ToyFrameEncoder(config.seed if config.seed is not None else 0).encode(frames)
    compressor_config = CompressorConfig(factor=config.compress_factor)
    compressed = compress(UnifiedSequence(dist.mean), compressor_config)
    logger.info(f"{config.input_path}: {frames.num_frames} frames at {frames.frame_rate:g} Hz")

    try:
        with open(config.output_path, "wb") as handle:
            np.savez(
                handle,
                frames=frames.frames,
                latent_mean=dist.mean,
                latent_logvar=dist.logvar,
                compressed=compressed.values,
            )
    except OSError as e:
        raise AudioIOError(f"Cannot write {config.output_path}: {e}") from e

    stats = latent_stats(dist)
    stats["weighted_kl"] = config.loss_weights.lambda_kl * stats["kl"]
    emit(
        {
            "frames": frames.num_frames,
            "frame_rate": frames.frame_rate,
            "compressed_frames": compressed.length,
            "compressed_rate": compressed_frame_rate(frames.frame_rate, compressor_config),
            "latent": stats,
        }
    )
    return 0


def cmd_reconstruct(config: RunConfig, logger: logging.Logger) -> int:
    wave = read_wav(config.input_path)
    spec = stft(wave, config.fft_size, config.hop_size, config.window, require_cola=True)
    rebuilt = istft_synthesize(spec)
    snr = snr_db(wave.samples, rebuilt.samples)
    write_wav(rebuilt, config.output_path)
    logger.info(f"Round trip SNR: {snr:.1f} dB")
    emit(
        {
            "samples": wave.num_samples,
            "fft_size": config.fft_size,
            "hop_size": config.hop_size,
            "window": config.window,
            "snr_db": snr if np.isfinite(snr) else None,
            "exact": bool(np.isinf(snr) and snr > 0),
        }
    )
    return 0


def cmd_build_editset(config: RunConfig, logger: logging.Logger) -> int:
    logger.info(f"Building edit set from {config.manifest} into {config.out_dir}")
    builder = EditsetBuilder(config, logger)
    stats = builder.build(config.manifest, config.out_dir, config.noise_dir)

    logger.info("=" * 60)
    logger.info("Build completed!")
    logger.info(f"  Created:  {stats['created']}")
    logger.info(f"  Skipped:  {stats['skipped']}")
    logger.info(f"  Errors:   {stats['errors']}")
    logger.info("=" * 60)
    emit(stats)
    return 1 if stats["errors"] > 0 else 0


def cmd_generate_bench(config: RunConfig, logger: logging.Logger) -> int:
    entries = load_manifest(config.manifest)
    counts = _expected_counts(config.count_table) if config.count_table else None
    if counts is not None:
        distribution = TaskDistribution.from_counts(counts)
    else:
        distribution = TaskDistribution.from_weights(config.task_distribution)
    manifest = generate_benchmark(
        entries,
        distribution,
        np.random.default_rng(config.seed),
        style=config.instruction_style,
        counts=counts,
        max_span_tokens=config.max_span_tokens,
        logger=logger,
    )
    manifest.save(config.output_path)
    emit({"created": len(manifest.entries), "skipped": len(manifest.skipped)})
    return 0


def cmd_validate_bench(config: RunConfig, logger: logging.Logger) -> int:
    manifest = BenchmarkManifest.load(config.manifest)
    report = validate_benchmark(manifest, _expected_counts(config.expected))
    for mismatch in report.mismatches:
        logger.warning(f"Count mismatch: {mismatch.describe()}")
    if report.passed:
        logger.info(f"All cells match ({report.total} entries)")
    emit(report.to_dict())
    return 0 if report.passed else 1


def cmd_eval(config: RunConfig, logger: logging.Logger) -> int:
    manifest = BenchmarkManifest.load(config.manifest)
    hypotheses = load_hypotheses(config.hypotheses)
    embeddings = load_embeddings(config.embeddings) if config.embeddings else None
    audio_root = config.audio_root or config.manifest.parent
    report = evaluate(manifest.entries, hypotheses, embeddings, audio_root)
    write_report(report, config.report)
    for task, summary in report.aggregates().items():
        logger.info(f"{task}: wer={summary['wer']} acc={summary['acc']} n={summary['count']}")
    emit({"scored": len(report.rows), "missing": len(report.missing)})
    return 0


def cmd_flow_demo(config: RunConfig, logger: logging.Logger) -> int:
    demo = FlowDemoConfig(
        train_steps=config.flow_steps,
        guidance=GuidanceConfig(cfg_weight=config.cfg_weight, steps=config.sampler_steps),
    )
    result = train_toy_flow(demo, np.random.default_rng(config.seed), logger)
    write_json(config.output_path, result)
    emit({"initial_loss": result["initial_loss"], "final_loss": result["final_loss"]})
    return 0


COMMAND_HANDLERS = {
    "tokenize": cmd_tokenize,
    "reconstruct": cmd_reconstruct,
    "build-editset": cmd_build_editset,
    "generate-bench": cmd_generate_bench,
    "validate-bench": cmd_validate_bench,
    "eval": cmd_eval,
    "flow-demo": cmd_flow_demo,
}


def main(argv: Optional[list[str]] = None) -> int:
    """Main entry point."""
    args = parse_arguments(argv)
    config = create_config_from_args(args)

    setup_logging(config.log_file, config.verbose)
    logger = logging.getLogger(__name__)

    try:
        return COMMAND_HANDLERS[config.command](config, logger)
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130
    except UniEditError as e:
        logger.error(f"{config.command} failed: {e}", exc_info=config.verbose)
        return 1
    except Exception as e:
        logger.error(f"{config.command} failed unexpectedly: {type(e).__name__}: {e}", exc_info=config.verbose)
        return 1


if __name__ == "__main__":
    sys.exit(main())

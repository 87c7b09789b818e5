"""
Command-line interface.

Every subcommand runs the cached stages up to the one it names, so
``evaluate`` after ``train-g2p`` only computes the evaluation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from ..config.loader import PRESETS, RuntimeSettings, get_runtime_settings, load_config
from ..config.settings import PipelineConfig, ToyLanguageSpec
from ..exceptions import UnitG2PError
from ..g2p import load_g2p, transcribe_lines
from ..synthlang import generate_corpus, toy_lexicon, write_corpus
from .ingest import DatasetManifest, ingest_ljspeech, write_cmudict
from .runner import PipelineRunner, ablate_k, format_ablation, run_full_pipeline, run_lexicon_baseline

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str) -> None:
    logging.basicConfig(format=LOG_FORMAT, level=level.upper(), stream=sys.stderr, force=True)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config tree merged over the preset")
    common.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    common.add_argument("--seed", type=int, help="derive every seed from this base seed")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. encoder.n_layers=2 (repeatable)")
    common.add_argument("--log-level", help="overrides UNITG2P_LOG_LEVEL")
    common.add_argument("--env-file", type=Path, help=".env file with UNITG2P_* settings")
    common.add_argument("--force", action="store_true", help="recompute stages even when cached")
    return common


def _corpus_options(parser: argparse.ArgumentParser, labeled_required: bool = True) -> None:
    parser.add_argument("--labeled", type=Path, required=labeled_required,
                        help="S_l: metadata.csv, a corpus directory, or a saved manifest (.yaml)")
    parser.add_argument("--unlabeled", type=Path,
                        help="S_u: audio used only for pre-training (same accepted forms)")


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="unitg2p", description="Lexicon-free grapheme-to-unit pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", parents=[common], help="write a synthetic toy-language corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--words", type=int, default=300)
    p.add_argument("--words-per-utterance", type=int, default=5)
    p.add_argument("--unlabeled-words", type=int, default=0,
                   help="also write an unlabeled corpus of this many words (different seed)")
    p.add_argument("--cmudict", type=Path, help="export the corpus vocabulary as a CMU-format lexicon")

    p = sub.add_parser("pretrain", parents=[common], help="extract features and pre-train the encoder")
    _corpus_options(p, labeled_required=False)

    p = sub.add_parser("gen-targets", parents=[common], help="generate phone targets for S_l")
    _corpus_options(p)

    for name, text in (("train-g2p", "train the G2P model"), ("evaluate", "evaluate the G2P model")):
        p = sub.add_parser(name, parents=[common], help=text)
        _corpus_options(p, labeled_required=False)
        p.add_argument("--lexicon", type=Path, help="lexicon mode: CMU-format dictionary instead of audio")
        p.add_argument("--max-words", type=int, help="lexicon mode: seeded subset size")

    p = sub.add_parser("transcribe", parents=[common], help="transcribe newline-delimited text")
    p.add_argument("--model", type=Path, required=True, help="directory written by train-g2p")
    p.add_argument("--input", type=Path, help="input text (default: stdin)")
    p.add_argument("--output", type=Path, help="output TSV (default: stdout)")
    p.add_argument("--mode", choices=("greedy", "beam"))

    p = sub.add_parser("ablate-k", parents=[common], help="sweep the phone-target k")
    _corpus_options(p)
    p.add_argument("--k", type=int, nargs="+", default=[50, 100, 150])
    p.add_argument("--output", type=Path, help="also write the comparison table here")

    p = sub.add_parser("run-all", parents=[common], help="pre-train, targets, G2P and evaluation")
    _corpus_options(p)
    return parser


def load_manifest(path: Optional[Path], cfg: PipelineConfig) -> Optional[DatasetManifest]:
    if path is None:
        return None
    if path.suffix in (".yaml", ".yml"):
        return DatasetManifest.load(path)
    if path.is_dir():
        path = path / "metadata.csv"
    return ingest_ljspeech(path, fractions=cfg.split_fractions, seed=cfg.seeds.split)


def _synth_corpus(args, cfg: PipelineConfig) -> None:
    spec = cfg.synth or ToyLanguageSpec(seed=cfg.seeds.corpus, sample_rate=cfg.framing.sample_rate)
    framing = cfg.framing.model_copy(update={"sample_rate": spec.sample_rate})
    corpus = generate_corpus(spec, args.words, args.words_per_utterance, framing)
    print(write_corpus(corpus, args.out / "labeled", spec))
    if args.unlabeled_words > 0:
        other = spec.model_copy(update={"seed": spec.seed + 1})
        extra = generate_corpus(other, args.unlabeled_words, args.words_per_utterance, framing)
        print(write_corpus(extra, args.out / "unlabeled", other))
    if args.cmudict is not None:
        write_cmudict(toy_lexicon(corpus, spec), args.cmudict)
        print(args.cmudict)


def _transcribe(args) -> None:
    model = load_g2p(args.model)
    source = open(args.input, encoding="utf-8") if args.input else sys.stdin
    try:
        rows = transcribe_lines(model, source, args.mode)
    finally:
        if args.input:
            source.close()
    text = "".join(f"{row}\n" for row in rows)
    if args.output:
        args.output.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dispatch(args, cfg: PipelineConfig, settings: RuntimeSettings) -> None:
    command = args.command
    if command == "synth-corpus":
        return _synth_corpus(args, cfg)
    if command == "transcribe":
        return _transcribe(args)

    if command in ("train-g2p", "evaluate") and args.lexicon is not None:
        result = run_lexicon_baseline(cfg, args.lexicon, args.max_words, settings, args.force)
        print(result.report.to_text() if command == "evaluate" else settings.artifact_dir / "lexicon" / result.key)
        return

    labeled = load_manifest(args.labeled, cfg)
    unlabeled = load_manifest(args.unlabeled, cfg)
    if command == "ablate-k":
        table = format_ablation(ablate_k(cfg, args.k, unlabeled, labeled, settings, args.force))
        if args.output:
            args.output.write_text(table + "\n", encoding="utf-8")
        print(table)
        return
    if command == "run-all":
        print(run_full_pipeline(cfg, unlabeled, labeled, settings, args.force).report.to_text())
        return

    runner = PipelineRunner(cfg, settings, args.force)
    if command == "pretrain":
        pre = runner.pretrained(unlabeled, labeled)
        print(settings.artifact_dir / runner.pretrain.name / pre.key)
        return
    if labeled is None:
        raise UnitG2PError(f"{command} needs --labeled (or --lexicon)")
    targets = runner.phone_targets(unlabeled, labeled)
    if command == "gen-targets":
        print(settings.artifact_dir / runner.targets.name / targets.key)
        return
    fs = runner.labeled_features(labeled)
    g2p = runner.g2p(targets, fs)
    if command == "train-g2p":
        print(settings.artifact_dir / runner.g2p.name / g2p.key / "model")
        return
    print(runner.evaluate(g2p, targets, fs).to_text())


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point of the ``unitg2p`` command.

    Returns:
        0 when the invoked stage completed, 1 on any pipeline error
    """
    args = build_parser().parse_args(argv)
    try:
        settings = get_runtime_settings(args.env_file)
        configure_logging(args.log_level or settings.log_level)
        cfg = load_config(args.config, args.preset, args.overrides, args.seed)
        _dispatch(args, cfg, settings)
    except (UnitG2PError, OSError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""
Per-utterance work shared by the pipeline stages: feature extraction,
phone-target generation, G2P pair assembly and scoring.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import torch

from ..config.settings import FramingConfig, PipelineConfig
from ..dsp import CmvnStats, FeatureSequence, apply_cmvn, compute_mfcc, resample
from ..encoder import EncoderModel, evaluating, extract_layer_features
from ..eval import (
    EvalReport,
    corpus_per,
    majority_baseline,
    map_units,
    nmi,
    purity,
    unit_label_map,
    wer,
)
from ..exceptions import DomainError
from ..g2p import G2PModel, decode, normalize_text, train_g2p, transcribe_sentence
from ..nn.io import load_tensors, save_tensors
from ..synthlang import load_gold_labels
from ..units import ClusterModel, UnitSequence, assign_units, collapse_runs, encoder_layer_tag
from .ingest import DatasetManifest, ManifestEntry, ingest_cmudict, read_pcm16, split_lexicon

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """Apply ``fn`` to every item on a thread pool, keeping input order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def extract_mfcc(entry: ManifestEntry, framing: FramingConfig) -> FeatureSequence:
    """Read, resample to the framing rate and featurize one utterance."""
    samples, rate = read_pcm16(entry.audio_path)
    samples, rate = resample(samples, rate, framing.sample_rate)
    return compute_mfcc(samples, rate, framing)


def save_cmvn(path: Union[str, Path], stats: CmvnStats) -> None:
    save_tensors(path, {"mean": torch.from_numpy(stats.mean), "std": torch.from_numpy(stats.std)})


def load_cmvn(path: Union[str, Path]) -> CmvnStats:
    tensors = load_tensors(path)
    return CmvnStats(mean=tensors["mean"].numpy(), std=tensors["std"].numpy())


def write_unit_table(path: Union[str, Path], table: Dict[str, UnitSequence]) -> None:
    """``id<TAB>space-joined units`` per utterance."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, seq in table.items():
            fh.write(f"{utt_id}\t{' '.join(str(u) for u in seq.tolist())}\n")


def read_unit_table(path: Union[str, Path], k: int) -> Dict[str, UnitSequence]:
    table: Dict[str, UnitSequence] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            utt_id, _, units = line.rstrip("\n").partition("\t")
            table[utt_id] = UnitSequence(np.array([int(u) for u in units.split()], dtype=np.int64), k)
    return table


def encoder_layer_outputs(model: EncoderModel, manifest: DatasetManifest, framing: FramingConfig,
                          cmvn: Optional[CmvnStats] = None,
                          features: Optional[Mapping[str, FeatureSequence]] = None,
                          workers: int = 1) -> Dict[str, np.ndarray]:
    """
    Feature-layer outputs of ``model`` for every utterance of ``manifest``.

    MFCCs come from ``features`` when given (keyed by utterance id) and are
    otherwise extracted from the audio. The model is held in eval mode for
    the whole batch so worker threads never toggle it.
    """
    layer = model.cfg.feature_layer_index

    def work(entry: ManifestEntry) -> np.ndarray:
        seq = features[entry.utt_id] if features is not None else extract_mfcc(entry, framing)
        if cmvn is not None:
            seq = apply_cmvn(seq, cmvn)
        return extract_layer_features(model, seq, layer).data

    with evaluating(model):
        outputs = parallel_map(work, manifest.entries, workers)
    return dict(zip(manifest.ids, outputs))


def generate_phone_targets(model: EncoderModel, cluster: ClusterModel, manifest: DatasetManifest,
                           framing: FramingConfig, cmvn: Optional[CmvnStats] = None, collapse: bool = True,
                           expected_k: Optional[int] = None, workers: int = 1,
                           features: Optional[Mapping[str, FeatureSequence]] = None,
                           layer_outputs: Optional[Mapping[str, np.ndarray]] = None,
                           ) -> List[Tuple[str, UnitSequence]]:
    """
    Frame-level phone targets for every utterance of ``manifest``.

    Each utterance is featurized (or taken from ``features``), normalized
    with ``cmvn``, passed through the encoder up to its feature layer and
    quantized with ``cluster``.

    Args:
        model: Pre-trained encoder
        cluster: Phone-target cluster model fitted on the encoder's feature layer
        manifest: Utterances to process
        framing: MFCC framing
        cmvn: Normalization statistics the encoder was trained with
        collapse: Merge consecutive duplicate units
        expected_k: When given, the cluster model must have exactly this many centroids
        workers: Thread count
        features: Precomputed raw MFCCs keyed by utterance id
        layer_outputs: Precomputed feature-layer outputs keyed by utterance id;
            skips the encoder pass entirely

    Returns:
        (utterance id, UnitSequence) in manifest order

    Raises:
        DomainError: The cluster model was not fitted on the encoder's feature
            layer, or has the wrong k
    """
    layer = model.cfg.feature_layer_index
    if cluster.source_tag != encoder_layer_tag(layer):
        raise DomainError(f"cluster model was fitted on {cluster.source_tag!r}, "
                          f"the encoder exports {encoder_layer_tag(layer)!r}")
    if expected_k is not None and cluster.k != expected_k:
        raise DomainError(f"cluster model has k={cluster.k}, expected {expected_k}")
    if layer_outputs is None:
        layer_outputs = encoder_layer_outputs(model, manifest, framing, cmvn, features, workers)

    rows = []
    for utt_id in manifest.ids:
        z = assign_units(layer_outputs[utt_id], cluster)
        rows.append((utt_id, collapse_runs(z) if collapse else z))
    return rows


def prepare_g2p_targets(frame_targets: Dict[str, UnitSequence], collapse: bool) -> Dict[str, UnitSequence]:
    return {i: collapse_runs(z) if collapse else z for i, z in frame_targets.items()}


def unit_pairs(manifest: DatasetManifest, split: str, targets: Dict[str, UnitSequence],
               keep: str = "'") -> List[Tuple[str, List[str]]]:
    """(normalized transcript, unit symbols) for every utterance of ``split``."""
    return [(normalize_text(e.transcript, keep), [str(u) for u in targets[e.utt_id].tolist()])
            for e in manifest.split(split)]


def gold_labels_for(manifest: DatasetManifest) -> Optional[Dict[str, np.ndarray]]:
    """Gold frame labels when the manifest comes from a single labeled toy corpus."""
    roots = {Path(e.audio_path).parent.parent for e in manifest.entries}
    if len(roots) != 1:
        return None
    root = roots.pop()
    if not (root / "labels").is_dir():
        return None
    return load_gold_labels(root, manifest.ids)


def _aligned(ids: Sequence[str], frame_targets: Dict[str, UnitSequence],
             gold: Dict[str, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    units, labels = [], []
    for i in ids:
        if len(frame_targets[i]) != len(gold[i]):
            logger.warning("%s: %d targets vs %d gold labels; skipped", i, len(frame_targets[i]), len(gold[i]))
            continue
        units.append(frame_targets[i].units)
        labels.append(gold[i])
    if not units:
        raise DomainError("no utterance has targets aligned with its gold labels")
    return np.concatenate(units), np.concatenate(labels)


def evaluate_unit_g2p(model: G2PModel, targets: Dict[str, UnitSequence], frame_targets: Dict[str, UnitSequence],
                      manifest: DatasetManifest, workers: int = 1) -> Tuple[EvalReport, List[Tuple[str, str, str]]]:
    """
    Score unit-mode predictions on the test split against the audio-derived targets.

    When gold frame labels are available, units are also mapped onto gold
    labels (majority vote over training frames) to score against the
    generative phoneme sequence, and the frame targets' NMI and purity are
    reported.

    Returns:
        (report, rows of (id, predicted units, reference units))
    """
    test = manifest.split("test")
    if not test:
        raise DomainError("the labeled set has no test utterances")
    preds = parallel_map(lambda e: list(transcribe_sentence(model, e.transcript).joined.symbols), test, workers)
    refs = [[[str(u) for u in targets[e.utt_id].tolist()]] for e in test]
    per_value, distances = corpus_per(preds, refs)
    report = EvalReport(per=per_value, wer=wer(preds, refs), n_items=len(test), per_item_distances=distances)

    train_ids = [e.utt_id for e in manifest.split("train")]
    if train_ids:
        baseline = majority_baseline([[str(u) for u in targets[i].tolist()] for i in train_ids])
        report.baseline_per, _ = corpus_per([baseline] * len(test), refs)

    gold = gold_labels_for(manifest)
    if gold is not None:
        units, labels = _aligned(manifest.ids, frame_targets, gold)
        report.nmi = nmi(units, labels)
        report.purity = purity(units, labels)
        mapping = unit_label_map(*_aligned(train_ids or manifest.ids, frame_targets, gold))
        oracle_preds = [map_units([int(s) for s in p], mapping) for p in preds]
        oracle_refs = [[collapse_runs(UnitSequence(gold[e.utt_id], int(gold[e.utt_id].max()) + 1)).tolist()]
                       for e in test]
        report.oracle_per, _ = corpus_per(oracle_preds, oracle_refs)
        report.oracle_wer = wer(oracle_preds, oracle_refs)

    logger.info("evaluation on %d test utterances: PER %.4f WER %.4f", len(test), report.per, report.wer)
    rows = [(e.utt_id, " ".join(p), " ".join(r[0])) for e, p, r in zip(test, preds, refs)]
    return report, rows


def train_and_score_lexicon(cfg: PipelineConfig, dict_path: Union[str, Path], max_words: Optional[int] = None,
                            workers: int = 1) -> Tuple[G2PModel, EvalReport, List[str]]:
    """
    Per-word G2P on a pronunciation dictionary.

    Every pronunciation of a training word is a training pair; test words are
    scored against all their pronunciations with the minimum-distance rule.

    Returns:
        (model, report, test words in report order)
    """
    lexicon = ingest_cmudict(dict_path)
    parts = split_lexicon(lexicon, cfg.split_fractions, cfg.seeds.split, max_words)
    train = [(w, p) for w, prons in parts["train"].items() for p in prons]
    val = [(w, prons[0]) for w, prons in parts["val"].items()]
    test_words = sorted(parts["test"])
    if not train or not test_words:
        raise DomainError("the dictionary is too small for a train/test split")
    g2p_cfg = cfg.g2p.model_copy(update={"mode": "lexicon"})
    model = train_g2p(train, g2p_cfg, seed=cfg.seeds.g2p, val_pairs=val or None, optim_cfg=cfg.optimizer)

    preds = parallel_map(lambda w: list(decode(model, w).symbols), test_words, workers)
    refs = [parts["test"][w] for w in test_words]
    per_value, distances = corpus_per(preds, refs)
    baseline = majority_baseline([prons[0] for prons in parts["train"].values()])
    report = EvalReport(per=per_value, wer=wer(preds, refs), n_items=len(test_words),
                        per_item_distances=distances,
                        baseline_per=corpus_per([baseline] * len(test_words), refs)[0])
    logger.info("lexicon G2P on %d test words: PER %.4f WER %.4f (majority baseline PER %.4f)",
                len(test_words), report.per, report.wer, report.baseline_per)
    return model, report, test_words

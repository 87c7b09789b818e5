"""
Orchestration of the full lexicon-free pipeline, the k ablation and the
lexicon baseline on top of the cached stages.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from ..config.loader import RuntimeSettings, config_hash, get_runtime_settings
from ..config.settings import PipelineConfig
from ..config.store import configure_store
from ..eval import EvalReport
from ..exceptions import DomainError
from .ingest import DatasetManifest
from .stages import (
    EvaluateStage,
    FeatureSet,
    FeatureStage,
    G2PArtifacts,
    G2PStage,
    LexiconArtifacts,
    LexiconStage,
    PretrainArtifacts,
    PretrainStage,
    TargetArtifacts,
    TargetStage,
)

logger = logging.getLogger(__name__)


@dataclass
class PipelineArtifacts:
    pretrain: PretrainArtifacts
    targets: TargetArtifacts
    g2p: G2PArtifacts
    report: EvalReport
    stage_keys: Dict[str, str] = field(default_factory=dict)


class PipelineRunner:
    """
    Holds one handler per stage over a shared artifact root and registry.

    Stages are invoked in order and each one resumes from the registry when
    its cache key has a completed run.
    """

    def __init__(self, cfg: PipelineConfig, settings: Optional[RuntimeSettings] = None, force: bool = False,
                 forced: Optional[set] = None):
        self.cfg = cfg
        self.settings = settings or get_runtime_settings()
        self.settings.artifact_dir.mkdir(parents=True, exist_ok=True)
        configure_store(self.settings.store_url)
        args = (cfg, self.settings.artifact_dir, self.settings.workers, force, set() if forced is None else forced)
        self.features = FeatureStage(*args)
        self.pretrain = PretrainStage(*args)
        self.targets = TargetStage(*args)
        self.g2p = G2PStage(*args)
        self.evaluate = EvaluateStage(*args)
        self.lexicon = LexiconStage(*args)

    def pretrained(self, unlabeled: Optional[DatasetManifest], labeled: Optional[DatasetManifest]) -> PretrainArtifacts:
        """
        Pre-train on S_u (all of it); S_l's training split joins when
        ``merge_labeled_into_pretraining`` is set or when no S_u is given.
        """
        sources, keys = [], []
        if unlabeled is not None:
            if not len(unlabeled):
                raise DomainError("the unlabeled set is empty")
            fs = self.features(unlabeled)
            sources.extend(fs.select(fs.manifest.ids))
            keys.append([fs.key, fs.manifest.ids])
        if labeled is not None and (unlabeled is None or self.cfg.merge_labeled_into_pretraining):
            fs = self.features(labeled)
            train_ids = fs.manifest.splits.get("train", fs.manifest.ids)
            sources.extend(fs.select(train_ids))
            keys.append([fs.key, train_ids])
            if unlabeled is None:
                logger.info("no unlabeled set given; pre-training on the labeled training split")
        if not sources:
            raise DomainError("pre-training needs an unlabeled or a labeled set")
        return self.pretrain(sources, config_hash(*keys))

    def labeled_features(self, labeled: DatasetManifest) -> FeatureSet:
        if not len(labeled):
            raise DomainError("the labeled set is empty")
        return self.features(labeled)

    def phone_targets(self, unlabeled: Optional[DatasetManifest], labeled: DatasetManifest) -> TargetArtifacts:
        pre = self.pretrained(unlabeled, labeled)
        return self.targets(pre, self.labeled_features(labeled))

    def run(self, unlabeled: Optional[DatasetManifest], labeled: DatasetManifest) -> PipelineArtifacts:
        fs = self.labeled_features(labeled)
        pre = self.pretrained(unlabeled, labeled)
        targets = self.targets(pre, fs)
        g2p = self.g2p(targets, fs)
        report = self.evaluate(g2p, targets, fs)
        keys = {"features": fs.key, "pretrain": pre.key, "targets": targets.key, "g2p": g2p.key}
        return PipelineArtifacts(pre, targets, g2p, report, keys)


def run_full_pipeline(cfg: PipelineConfig, unlabeled: Optional[DatasetManifest], labeled: DatasetManifest,
                      settings: Optional[RuntimeSettings] = None, force: bool = False) -> PipelineArtifacts:
    """
    Pre-train -> phone targets -> G2P -> evaluation on S_l's test split.

    Args:
        cfg: Pipeline configuration
        unlabeled: S_u, audio used only for pre-training (None: use S_l's training split)
        labeled: S_l, audio with transcripts, split train/val/test
        settings: Artifact root, registry URL and worker count (default: from the environment)
        force: Recompute every stage even when a completed run is recorded

    Returns:
        PipelineArtifacts with every stage's output and the EvalReport

    Raises:
        DomainError: Empty S_u or S_l
        StageError: A stage failed; names the stage and its persisted partial artifacts
    """
    artifacts = PipelineRunner(cfg, settings, force).run(unlabeled, labeled)
    logger.info("pipeline complete: PER %.4f WER %.4f", artifacts.report.per, artifacts.report.wer)
    return artifacts


@dataclass(frozen=True)
class AblationRow:
    k: int
    nmi: Optional[float]
    purity: Optional[float]
    per: float
    wer: float
    oracle_per: Optional[float]


def ablate_k(cfg: PipelineConfig, k_values: Sequence[int], unlabeled: Optional[DatasetManifest],
             labeled: DatasetManifest, settings: Optional[RuntimeSettings] = None,
             force: bool = False) -> List[AblationRow]:
    """
    Repeat target generation, G2P training and evaluation for every phone-target k.

    Pre-training does not depend on k, so it runs (or resumes) once.

    Raises:
        DomainError: Empty or non-positive k values
    """
    if not k_values:
        raise DomainError("ablate_k needs at least one k")
    if any(k < 1 for k in k_values):
        raise DomainError("every k must be >= 1")
    rows = []
    forced: set = set()
    for k in k_values:
        cfg_k = cfg.model_copy(update={"units": cfg.units.model_copy(update={"phone_target_k": int(k)})})
        report = PipelineRunner(cfg_k, settings, force, forced).run(unlabeled, labeled).report
        rows.append(AblationRow(int(k), report.nmi, report.purity, report.per, report.wer, report.oracle_per))
        logger.info("ablation k=%d: PER %.4f NMI %s", k, report.per, report.nmi)
    return rows


def format_ablation(rows: Sequence[AblationRow]) -> str:
    """Tab-separated comparison table, one row per k."""

    def fmt(value: Optional[float]) -> str:
        return "-" if value is None else f"{value:.4f}"

    lines = ["k\tnmi\tpurity\tper\twer\toracle_per"]
    for r in rows:
        lines.append("\t".join([str(r.k), fmt(r.nmi), fmt(r.purity), fmt(r.per), fmt(r.wer), fmt(r.oracle_per)]))
    return "\n".join(lines)


def run_lexicon_baseline(cfg: PipelineConfig, dict_path: Union[str, Path], max_words: Optional[int] = None,
                         settings: Optional[RuntimeSettings] = None, force: bool = False) -> LexiconArtifacts:
    """
    Train and score a lexicon-mode G2P on a CMU-format dictionary.

    Args:
        cfg: Pipeline configuration (g2p, optimizer, split fractions and seeds are used)
        dict_path: Dictionary file
        max_words: Optional seeded subset size before splitting
        settings: Artifact root and registry (default: from the environment)
        force: Recompute even when a completed run is recorded
    """
    return PipelineRunner(cfg, settings, force).lexicon(Path(dict_path), max_words)

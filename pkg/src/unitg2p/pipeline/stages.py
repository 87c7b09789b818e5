"""
Cached pipeline stages.

Every stage is a handler object: it derives a cache key from the config
subtree it depends on plus its upstream keys, reuses a completed run recorded
in the stage registry, and otherwise produces its artifacts under
``<artifact_root>/<stage>/<key>/`` and records the run.
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import yaml

from ..config.loader import config_hash
from ..config.settings import PipelineConfig
from ..dsp import CmvnStats, FeatureSequence, apply_cmvn, compute_cmvn, read_features, write_features
from ..encoder import EncoderModel, load_encoder, pretrain, save_encoder
from ..eval import EvalReport
from ..exceptions import DomainError, StageError
from ..g2p import G2PModel, load_g2p, save_g2p, train_g2p
from ..models.stage_run import StageRunRecord
from ..units import ClusterModel, UnitSequence, encoder_layer_tag, kmeans_fit, \
    load_cluster_model, save_cluster_model
from .ingest import DatasetManifest, ManifestEntry
from .tasks import (
    encoder_layer_outputs,
    evaluate_unit_g2p,
    extract_mfcc,
    generate_phone_targets,
    load_cmvn,
    parallel_map,
    prepare_g2p_targets,
    read_unit_table,
    save_cmvn,
    train_and_score_lexicon,
    unit_pairs,
    write_unit_table,
)

logger = logging.getLogger(__name__)


def manifest_fingerprint(manifest: DatasetManifest) -> Dict[str, Any]:
    return {
        "entries": [[e.utt_id, e.audio_path, e.transcript] for e in manifest.entries],
        "splits": manifest.splits,
    }


class Stage:
    """
    Base handler for one cached pipeline stage.

    Subclasses implement ``_cache_key``, ``_produce`` (writes artifacts into a
    fresh directory and returns a detail dict for the registry) and ``_load``.
    """

    name: str = ""

    def __init__(self, cfg: PipelineConfig, artifact_root: Path, workers: int = 1, force: bool = False,
                 forced: Optional[set] = None):
        """
        Initialize the stage handler.

        Args:
            cfg: Validated pipeline configuration
            artifact_root: Root directory of all stage artifacts
            workers: Thread count for per-utterance work
            force: Recompute (once per key) even if a completed run is recorded
            forced: Keys already recomputed under ``force``; shared between handlers of one invocation
        """
        self.cfg = cfg
        self.artifact_root = Path(artifact_root)
        self.workers = workers
        self.force = force
        self._forced = forced if forced is not None else set()

    def _cache_key(self, *inputs) -> str:
        raise NotImplementedError

    def _produce(self, out_dir: Path, *inputs) -> Optional[Dict[str, Any]]:
        raise NotImplementedError

    def _load(self, out_dir: Path, key: str, *inputs):
        raise NotImplementedError

    def lookup(self, key: str) -> Optional[Path]:
        """Artifact directory of a completed run for ``key``, if one exists."""
        record = StageRunRecord.find({"stage": self.name, "config_hash": key, "status": "complete"})
        if record is None:
            return None
        out_dir = Path(record.artifact_dir)
        if not out_dir.is_dir():
            logger.warning("%s: registry points at missing directory %s; recomputing", self.name, out_dir)
            return None
        return out_dir

    def _record(self, key: str, out_dir: Path, status: str, detail: Dict[str, Any]) -> None:
        StageRunRecord.delete({"stage": self.name, "config_hash": key})
        StageRunRecord.create({
            "stage": self.name,
            "config_hash": key,
            "artifact_dir": str(out_dir),
            "status": status,
            "detail": json.dumps(detail, sort_keys=True, default=str),
        })

    def __call__(self, *inputs):
        """
        Load the stage's artifacts from cache or produce them.

        Raises:
            StageError: Any failure while producing; carries the stage name and
                the files already written
        """
        key = self._cache_key(*inputs)
        if self.force and key not in self._forced:
            self._forced.add(key)
            StageRunRecord.delete({"stage": self.name, "config_hash": key})
        else:
            cached = self.lookup(key)
            if cached is not None:
                logger.info("%s: cache hit %s", self.name, key)
                return self._load(cached, key, *inputs)

        out_dir = self.artifact_root / self.name / key
        logger.info("%s: computing into %s", self.name, out_dir)
        if out_dir.exists():
            shutil.rmtree(out_dir)
        out_dir.mkdir(parents=True)
        try:
            detail = self._produce(out_dir, *inputs) or {}
        except Exception as e:
            partial = sorted(str(p) for p in out_dir.rglob("*") if p.is_file())
            self._record(key, out_dir, "failed", {"error": f"{type(e).__name__}: {e}"})
            raise StageError(self.name, f"{type(e).__name__}: {e}", partial) from e
        self._record(key, out_dir, "complete", detail)
        return self._load(out_dir, key, *inputs)


@dataclass
class FeatureSet:
    key: str
    manifest: DatasetManifest
    features: Dict[str, FeatureSequence]

    def select(self, ids: Iterable[str]) -> List[FeatureSequence]:
        return [self.features[i] for i in ids]


class FeatureStage(Stage):
    """Raw MFCCs for every utterance of a manifest."""

    name = "features"

    def _cache_key(self, manifest: DatasetManifest) -> str:
        return config_hash(self.name, self.cfg.framing, manifest_fingerprint(manifest))

    def _produce(self, out_dir: Path, manifest: DatasetManifest):
        manifest.save(out_dir / "manifest.yaml")
        feats_dir = out_dir / "feats"
        feats_dir.mkdir()

        def work(entry: ManifestEntry) -> int:
            seq = extract_mfcc(entry, self.cfg.framing)
            write_features(feats_dir / f"{entry.utt_id}.ugpf", seq)
            return seq.n_frames

        counts = parallel_map(work, manifest.entries, self.workers)
        logger.info("features: %d utterances, %d frames", len(counts), sum(counts))
        return {"n_utterances": len(counts), "n_frames": int(sum(counts))}

    def _load(self, out_dir: Path, key: str, *inputs) -> FeatureSet:
        manifest = DatasetManifest.load(out_dir / "manifest.yaml", check_files=False)
        features = {i: read_features(out_dir / "feats" / f"{i}.ugpf") for i in manifest.ids}
        return FeatureSet(key, manifest, features)


@dataclass
class PretrainArtifacts:
    key: str
    model: EncoderModel
    cluster_models: List[ClusterModel]
    cmvn: Optional[CmvnStats]
    losses: List[List[float]] = field(default_factory=list)


class PretrainStage(Stage):
    """Iterative masked-prediction pre-training on the unlabeled features."""

    name = "pretrain"

    def _cache_key(self, features: Sequence[FeatureSequence], source_key: str) -> str:
        units = self.cfg.units.model_dump(include={"max_iters", "rel_tol", "max_frames", "normalize"})
        return config_hash(self.name, source_key, self.cfg.encoder, self.cfg.optimizer, units,
                           self.cfg.seeds.encoder, self.cfg.seeds.kmeans)

    def _produce(self, out_dir: Path, features: Sequence[FeatureSequence], source_key: str):
        cmvn = compute_cmvn(features) if self.cfg.units.normalize else None
        if cmvn is not None:
            save_cmvn(out_dir / "cmvn.ugpt", cmvn)
            features = [apply_cmvn(f, cmvn) for f in features]
        result = pretrain(features, self.cfg.encoder, self.cfg.units, self.cfg.optimizer,
                          seed=self.cfg.seeds.encoder, kmeans_seed=self.cfg.seeds.kmeans)
        clusters_dir = out_dir / "clusters"
        clusters_dir.mkdir()
        for i, cluster in enumerate(result.cluster_models, start=1):
            save_cluster_model(clusters_dir / f"iter{i}.ugpk", cluster)
        save_encoder(out_dir / "encoder.ugpt", result.model)
        with open(out_dir / "losses.yaml", "w", encoding="utf-8") as fh:
            yaml.safe_dump({"losses": result.losses}, fh)
        return {"final_losses": [curve[-1] for curve in result.losses],
                "k_schedule": [c.k for c in result.cluster_models]}

    def _load(self, out_dir: Path, key: str, *inputs) -> PretrainArtifacts:
        clusters = sorted((out_dir / "clusters").glob("iter*.ugpk"), key=lambda p: int(p.stem[4:]))
        cmvn_path = out_dir / "cmvn.ugpt"
        with open(out_dir / "losses.yaml", encoding="utf-8") as fh:
            losses = yaml.safe_load(fh)["losses"]
        return PretrainArtifacts(
            key=key,
            model=load_encoder(out_dir / "encoder.ugpt"),
            cluster_models=[load_cluster_model(p) for p in clusters],
            cmvn=load_cmvn(cmvn_path) if cmvn_path.is_file() else None,
            losses=losses,
        )


@dataclass
class TargetArtifacts:
    key: str
    phone_cluster: ClusterModel
    frame_targets: Dict[str, UnitSequence]
    targets: Dict[str, UnitSequence]


class TargetStage(Stage):
    """Phone-target clustering of the encoder's feature layer on the labeled audio."""

    name = "targets"

    def _cache_key(self, pre: PretrainArtifacts, labeled: FeatureSet) -> str:
        units = self.cfg.units.model_dump(include={"phone_target_k", "collapse_for_g2p", "max_iters",
                                                   "rel_tol", "max_frames"})
        return config_hash(self.name, pre.key, labeled.key, units, self.cfg.seeds.kmeans)

    def _produce(self, out_dir: Path, pre: PretrainArtifacts, labeled: FeatureSet):
        manifest = labeled.manifest
        layers = encoder_layer_outputs(pre.model, manifest, self.cfg.framing, pre.cmvn,
                                       features=labeled.features, workers=self.workers)
        fit_ids = [i for i in manifest.splits.get("train", manifest.ids) if len(layers[i])] or manifest.ids
        cluster = kmeans_fit(
            np.concatenate([layers[i] for i in fit_ids if len(layers[i])], axis=0),
            self.cfg.units.phone_target_k, seed=self.cfg.seeds.kmeans,
            max_iters=self.cfg.units.max_iters, rel_tol=self.cfg.units.rel_tol,
            source_tag=encoder_layer_tag(pre.model.cfg.feature_layer_index),
            max_frames=self.cfg.units.max_frames,
        )
        save_cluster_model(out_dir / "phone_clusters.ugpk", cluster)
        frame_targets = dict(generate_phone_targets(pre.model, cluster, manifest, self.cfg.framing, pre.cmvn,
                                                    collapse=False, layer_outputs=layers))
        write_unit_table(out_dir / "frame_targets.tsv", frame_targets)
        targets = prepare_g2p_targets(frame_targets, self.cfg.units.collapse_for_g2p)
        write_unit_table(out_dir / "targets.tsv", targets)
        return {"k": cluster.k, "n_utterances": len(manifest), "inertia": cluster.inertia}

    def _load(self, out_dir: Path, key: str, *inputs) -> TargetArtifacts:
        cluster = load_cluster_model(out_dir / "phone_clusters.ugpk")
        return TargetArtifacts(
            key=key,
            phone_cluster=cluster,
            frame_targets=read_unit_table(out_dir / "frame_targets.tsv", cluster.k),
            targets=read_unit_table(out_dir / "targets.tsv", cluster.k),
        )


@dataclass
class G2PArtifacts:
    key: str
    model: G2PModel


class G2PStage(Stage):
    """Unit-mode G2P training on (transcript, phone targets) of the labeled set."""

    name = "g2p"

    def _cache_key(self, targets: TargetArtifacts, labeled: FeatureSet) -> str:
        return config_hash(self.name, targets.key, labeled.key, self.cfg.g2p, self.cfg.optimizer,
                           self.cfg.seeds.g2p)

    def _produce(self, out_dir: Path, targets: TargetArtifacts, labeled: FeatureSet):
        train = unit_pairs(labeled.manifest, "train", targets.targets, self.cfg.g2p.keep_punctuation)
        val = unit_pairs(labeled.manifest, "val", targets.targets, self.cfg.g2p.keep_punctuation)
        if not train:
            raise DomainError("the labeled set has no training utterances")
        g2p_cfg = self.cfg.g2p.model_copy(update={"mode": "unit"})
        model = train_g2p(train, g2p_cfg, seed=self.cfg.seeds.g2p, val_pairs=val or None,
                          optim_cfg=self.cfg.optimizer)
        save_g2p(out_dir / "model", model)
        history = model.history
        with open(out_dir / "history.yaml", "w", encoding="utf-8") as fh:
            yaml.safe_dump({"train_losses": history.train_losses,
                            "val_losses": [list(v) for v in history.val_losses],
                            "best_step": history.best_step}, fh)
        return {"n_train": len(train), "n_val": len(val), "final_loss": history.train_losses[-1],
                "best_step": history.best_step}

    def _load(self, out_dir: Path, key: str, *inputs) -> G2PArtifacts:
        return G2PArtifacts(key, load_g2p(out_dir / "model"))


class EvaluateStage(Stage):
    """PER/WER of the G2P on the labeled test split, plus clustering diagnostics."""

    name = "evaluate"

    def _cache_key(self, g2p: G2PArtifacts, targets: TargetArtifacts, labeled: FeatureSet) -> str:
        return config_hash(self.name, g2p.key, targets.key, labeled.key)

    def _produce(self, out_dir: Path, g2p: G2PArtifacts, targets: TargetArtifacts, labeled: FeatureSet):
        report, rows = evaluate_unit_g2p(g2p.model, targets.targets, targets.frame_targets, labeled.manifest,
                                         self.workers)
        test_ids = [r[0] for r in rows]
        report.save(out_dir / "report.yaml", test_ids, out_dir / "distances.tsv")
        with open(out_dir / "predictions.tsv", "w", encoding="utf-8") as fh:
            for utt_id, pred, ref in rows:
                fh.write(f"{utt_id}\t{pred}\t{ref}\n")
        (out_dir / "report.txt").write_text(report.to_text() + "\n", encoding="utf-8")
        return report.metrics()

    def _load(self, out_dir: Path, key: str, *inputs) -> EvalReport:
        return EvalReport.load(out_dir / "report.yaml", out_dir / "distances.tsv")


@dataclass
class LexiconArtifacts:
    key: str
    model: G2PModel
    report: EvalReport


class LexiconStage(Stage):
    """Lexicon-mode G2P trained and scored on a pronunciation dictionary."""

    name = "lexicon"

    def _cache_key(self, dict_path: Path, max_words: Optional[int]) -> str:
        stat = Path(dict_path).stat()
        return config_hash(self.name, str(Path(dict_path).resolve()), stat.st_size, int(stat.st_mtime),
                           max_words, self.cfg.g2p, self.cfg.optimizer, self.cfg.split_fractions,
                           self.cfg.seeds.split, self.cfg.seeds.g2p)

    def _produce(self, out_dir: Path, dict_path: Path, max_words: Optional[int]):
        model, report, test_words = train_and_score_lexicon(self.cfg, dict_path, max_words, self.workers)
        save_g2p(out_dir / "model", model)
        report.save(out_dir / "report.yaml", test_words, out_dir / "distances.tsv")
        (out_dir / "report.txt").write_text(report.to_text() + "\n", encoding="utf-8")
        return report.metrics()

    def _load(self, out_dir: Path, key: str, *inputs) -> LexiconArtifacts:
        return LexiconArtifacts(key, load_g2p(out_dir / "model"),
                                EvalReport.load(out_dir / "report.yaml", out_dir / "distances.tsv"))

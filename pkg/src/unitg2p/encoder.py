"""
Masked-prediction encoder.

Frames are linearly projected to the model width, spans chosen by the mask
policy are replaced with a learned mask embedding, and a post-LN transformer
predicts each masked frame's cluster target. Pre-training runs for several
iterations, re-clustering an intermediate layer's output after the first.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config.settings import EncoderConfig, OptimizerConfig, UnitConfig
from .dsp import FeatureSequence
from .exceptions import DomainError
from .nn.io import load_module_state, save_module
from .nn.layers import EncoderLayer, PositionalEncoding, padding_mask, xavier_init_
from .nn.optim import adam_step, build_optimizer
from .units import (
    MFCC_TAG,
    ClusterModel,
    UnitSequence,
    assign_units,
    encoder_layer_tag,
    kmeans_fit,
)

logger = logging.getLogger(__name__)

HEAD_INIT_GAIN = 0.1
IGNORE_INDEX = -100


@dataclass(frozen=True)
class MaskSpec:
    n_frames: int
    start_fraction: float
    span_length: int
    seed: int
    starts: np.ndarray
    indices: np.ndarray

    def as_bool(self) -> np.ndarray:
        mask = np.zeros(self.n_frames, dtype=bool)
        mask[self.indices] = True
        return mask

    @classmethod
    def from_indices(cls, n_frames: int, indices: Sequence[int]) -> "MaskSpec":
        """A mask over an explicit index set (no sampling policy attached)."""
        idx = np.unique(np.asarray(indices, dtype=np.int64))
        if len(idx) and (idx[0] < 0 or idx[-1] >= n_frames):
            raise DomainError(f"mask indices must lie in [0, {n_frames})")
        return cls(n_frames, 0.0, 1, 0, idx.copy(), idx)


def sample_mask(n_frames: int, p: float, span: int, seed: int) -> MaskSpec:
    """
    Draw max(1, round(p * T)) distinct start frames uniformly and mask ``span``
    frames from each (truncated at T); overlapping spans merge.

    Raises:
        DomainError: T < 1, p outside (0, 1) or span < 1
    """
    if n_frames < 1:
        raise DomainError("cannot mask an empty sequence")
    if not 0 < p < 1 or span < 1:
        raise DomainError("require 0 < p < 1 and span >= 1")
    rng = np.random.default_rng(seed)
    n_starts = min(n_frames, max(1, int(round(p * n_frames))))
    starts = np.sort(rng.choice(n_frames, size=n_starts, replace=False))
    mask = np.zeros(n_frames, dtype=bool)
    for s in starts:
        mask[s:min(s + span, n_frames)] = True
    return MaskSpec(n_frames, p, span, seed, starts, np.flatnonzero(mask))


class EncoderModel(nn.Module):
    """
    Transformer encoder with a learned mask embedding and one softmax head.

    The head is replaced (``new_head``) whenever the target vocabulary
    changes between pre-training iterations; the trunk is carried over.
    """

    def __init__(self, cfg: EncoderConfig, input_dim: int, n_classes: int, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.input_dim = input_dim
        self.input_proj = nn.Linear(input_dim, cfg.d_model)
        self.mask_embedding = nn.Parameter(torch.empty(cfg.d_model))
        self.positions = PositionalEncoding(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(
            EncoderLayer(cfg.d_model, cfg.n_heads, cfg.ffn_dim, cfg.dropout) for _ in range(cfg.n_layers)
        )
        self.head = nn.Linear(cfg.d_model, n_classes)

        gen = torch.Generator().manual_seed(seed)
        xavier_init_(self, gen)
        nn.init.uniform_(self.mask_embedding, -1.0, 1.0, generator=gen)
        self._init_head(gen)

    def _init_head(self, gen: torch.Generator) -> None:
        nn.init.xavier_uniform_(self.head.weight, gain=HEAD_INIT_GAIN, generator=gen)
        nn.init.zeros_(self.head.bias)

    @property
    def n_classes(self) -> int:
        return self.head.out_features

    def new_head(self, n_classes: int, seed: int) -> None:
        """Replace the output head with a fresh one over ``n_classes`` targets."""
        ref = self.head.weight
        self.head = nn.Linear(self.cfg.d_model, n_classes).to(device=ref.device, dtype=ref.dtype)
        self._init_head(torch.Generator().manual_seed(seed))

    def project(self, x: torch.Tensor) -> torch.Tensor:
        return self.input_proj(x)

    def corrupt_projected(self, h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return torch.where(mask.unsqueeze(-1), self.mask_embedding.to(h.dtype), h)

    def forward(self, x: torch.Tensor, lengths: Optional[torch.Tensor] = None,
                mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        """
        Args:
            x: (B, T, input_dim) features
            lengths: (B,) valid frame counts; None means all T frames are valid
            mask: Optional (B, T) boolean set of frames to replace with the mask embedding

        Returns:
            (logits of shape (B, T, n_classes), per-layer outputs each (B, T, d_model))
        """
        b, t, _ = x.shape
        h = self.project(x)
        if mask is not None:
            h = self.corrupt_projected(h, mask)
        h = self.dropout(self.positions(h))
        attn_mask = None
        if lengths is not None:
            attn_mask = padding_mask(lengths, t).unsqueeze(1).expand(b, t, t)
        hidden = []
        for layer in self.layers:
            h = layer(h, attn_mask)
            hidden.append(h)
        return self.head(h), hidden


def _as_tensor(seq: FeatureSequence, like: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(seq.data, dtype=like.dtype, device=like.device)


def corrupt(X: FeatureSequence, m: MaskSpec, model: EncoderModel) -> FeatureSequence:
    """
    Projected features with every row in M replaced by the mask embedding.

    Rows outside M equal ``model.project(X)`` exactly.

    Raises:
        DomainError: If the mask was drawn for a different length
    """
    if X.n_frames != m.n_frames:
        raise DomainError(f"mask covers {m.n_frames} frames, features have {X.n_frames}")
    with torch.no_grad():
        h = model.project(_as_tensor(X, model.input_proj.weight))
        out = model.corrupt_projected(h, torch.as_tensor(m.as_bool()))
    return FeatureSequence(out.cpu().numpy().astype(np.float64), X.frame_rate_hz, X.source_duration_s)


def masked_ce_loss(model: EncoderModel, X: FeatureSequence, m: MaskSpec, Z: UnitSequence) -> torch.Tensor:
    """
    Mean over t in M of -log p(z_t | corrupted X, t).

    Raises:
        DomainError: Length mismatches, an empty mask set, or targets outside the head
    """
    if len(Z) != X.n_frames or m.n_frames != X.n_frames:
        raise DomainError(f"lengths differ: features {X.n_frames}, targets {len(Z)}, mask {m.n_frames}")
    if len(m.indices) == 0:
        raise DomainError("masked loss is undefined for an empty mask set")
    if Z.k > model.n_classes:
        raise DomainError(f"targets over {Z.k} classes but the head predicts {model.n_classes}")
    x = _as_tensor(X, model.input_proj.weight).unsqueeze(0)
    logits, _ = model(x, mask=torch.as_tensor(m.as_bool()).unsqueeze(0))
    idx = torch.as_tensor(m.indices)
    return F.cross_entropy(logits[0, idx], torch.as_tensor(Z.units[m.indices]))


@contextmanager
def evaluating(model: nn.Module) -> Iterator[nn.Module]:
    """Hold ``model`` in eval mode for the block, restoring its previous mode after."""
    was_training = model.training
    model.eval()
    try:
        yield model
    finally:
        model.train(was_training)


def extract_layer_features(model: EncoderModel, X: FeatureSequence, layer: int) -> FeatureSequence:
    """
    Output of encoder layer ``layer`` (0-based) on the uncorrupted input, dropout off.

    A model already in eval mode is left untouched, so callers sharing one
    model across threads should enter ``evaluating`` once around the batch.

    Raises:
        DomainError: Layer index out of range
    """
    if not 0 <= layer < len(model.layers):
        raise DomainError(f"layer {layer} out of range for a {len(model.layers)}-layer encoder")
    if X.n_frames == 0:
        return FeatureSequence(np.zeros((0, model.cfg.d_model)), X.frame_rate_hz, X.source_duration_s)
    if model.training:
        with evaluating(model):
            return extract_layer_features(model, X, layer)
    with torch.no_grad():
        _, hidden = model(_as_tensor(X, model.input_proj.weight).unsqueeze(0))
    data = hidden[layer][0].cpu().numpy().astype(np.float64)
    return FeatureSequence(data, X.frame_rate_hz, X.source_duration_s)


@dataclass
class PretrainResult:
    model: EncoderModel
    cluster_models: List[ClusterModel]
    losses: List[List[float]] = field(default_factory=list)
    targets: List[List[UnitSequence]] = field(default_factory=list)


def _collate(features: Sequence[FeatureSequence], targets: Sequence[UnitSequence], batch: Sequence[int],
             cfg: EncoderConfig, rng: np.random.Generator):
    lengths = [features[i].n_frames for i in batch]
    t_max = max(lengths)
    dim = features[batch[0]].dim
    x = np.zeros((len(batch), t_max, dim), dtype=np.float32)
    masks = np.zeros((len(batch), t_max), dtype=bool)
    y = np.full((len(batch), t_max), IGNORE_INDEX, dtype=np.int64)
    for row, i in enumerate(batch):
        t = lengths[row]
        x[row, :t] = features[i].data
        spec = sample_mask(t, cfg.mask_prob, cfg.mask_length, int(rng.integers(2 ** 63)))
        masks[row, spec.indices] = True
        y[row, spec.indices] = targets[i].units[spec.indices]
    return torch.from_numpy(x), torch.tensor(lengths), torch.from_numpy(masks), torch.from_numpy(y)


def _train_iteration(model: EncoderModel, features: Sequence[FeatureSequence], targets: Sequence[UnitSequence],
                     cfg: EncoderConfig, optim_cfg: OptimizerConfig, rng: np.random.Generator,
                     iteration: int) -> List[float]:
    state = build_optimizer(model.parameters(), optim_cfg, cfg.steps_per_iteration)
    model.train()
    usable = [i for i, f in enumerate(features) if f.n_frames > 0]
    curve: List[float] = []
    for step in range(1, cfg.steps_per_iteration + 1):
        batch = rng.choice(usable, size=min(cfg.batch_size, len(usable)), replace=False)
        x, lengths, masks, y = _collate(features, targets, batch, cfg, rng)
        logits, _ = model(x, lengths, masks)
        loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), y.reshape(-1), ignore_index=IGNORE_INDEX)
        state.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        lr = adam_step(state.params, None, state)
        curve.append(float(loss.item()))
        if step % cfg.log_every == 0 or step == 1:
            logger.info("pretrain iter %d step %d/%d loss %.4f lr %.2e",
                        iteration + 1, step, cfg.steps_per_iteration, curve[-1], lr)
    model.eval()
    return curve


def pretrain(features: Sequence[FeatureSequence], cfg: EncoderConfig, unit_cfg: UnitConfig,
             optim_cfg: OptimizerConfig, seed: int, kmeans_seed: Optional[int] = None) -> PretrainResult:
    """
    Iterative masked-prediction pre-training.

    Iteration 1 clusters the input (MFCC) frames with k = k_schedule[0];
    every later iteration clusters the previous model's
    ``feature_layer_index`` output with its own k, attaches a fresh head and
    continues training the same trunk.

    Args:
        features: Per-utterance input features (already normalized if desired)
        cfg: Architecture, iteration count and k schedule
        unit_cfg: k-means settings
        optim_cfg: Adam/schedule settings (restarted every iteration)
        seed: Seed for initialization, batching, masking and dropout
        kmeans_seed: Seed for clustering (defaults to ``seed``)

    Returns:
        PretrainResult with the final model, every iteration's ClusterModel,
        per-step loss curves and the frame targets each iteration trained on

    Raises:
        DomainError: Empty corpus or a corpus without any frames
    """
    usable = [f for f in features if f.n_frames > 0]
    if not usable:
        raise DomainError("pre-training needs at least one utterance with frames")
    kmeans_seed = seed if kmeans_seed is None else kmeans_seed
    input_dim = usable[0].dim
    rng = np.random.default_rng(seed)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = EncoderModel(cfg, input_dim, cfg.k_schedule[0], seed)
        result = PretrainResult(model=model, cluster_models=[])
        for it, k in enumerate(cfg.k_schedule):
            if it == 0:
                sources = [f.data for f in features]
                tag = MFCC_TAG
            else:
                with evaluating(model):
                    sources = [extract_layer_features(model, f, cfg.feature_layer_index).data for f in features]
                tag = encoder_layer_tag(cfg.feature_layer_index)
                model.new_head(k, seed + it)
            cluster = kmeans_fit(np.concatenate([s for s in sources if len(s)], axis=0), k,
                                 seed=kmeans_seed + it, max_iters=unit_cfg.max_iters,
                                 rel_tol=unit_cfg.rel_tol, source_tag=tag, max_frames=unit_cfg.max_frames)
            targets = [assign_units(s, cluster) for s in sources]
            curve = _train_iteration(model, features, targets, cfg, optim_cfg, rng, it)
            result.cluster_models.append(cluster)
            result.targets.append(targets)
            result.losses.append(curve)
            logger.info("pretrain iteration %d/%d (k=%d, %s): loss %.4f -> %.4f",
                        it + 1, cfg.n_iterations, k, tag, curve[0], curve[-1])
    return result


def save_encoder(path: Union[str, Path], model: EncoderModel) -> None:
    config = {"encoder": model.cfg.model_dump(mode="json"), "input_dim": model.input_dim,
              "n_classes": model.n_classes}
    save_module(path, model, config)


def load_encoder(path: Union[str, Path]) -> EncoderModel:
    state, config = load_module_state(path)
    if config is None:
        raise DomainError(f"{path} carries no encoder config")
    model = EncoderModel(EncoderConfig.model_validate(config["encoder"]), config["input_dim"], config["n_classes"])
    model.load_state_dict(state)
    model.eval()
    return model

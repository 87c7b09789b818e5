"""
Validated configuration models for every pipeline component.

All configs are frozen pydantic models; the invariants each component
relies on are enforced here so that the numerical code can assume them.
"""

from __future__ import annotations

import math
import string
from typing import Annotated, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

# seeds are stored as unsigned 64-bit integers in the binary containers
Seed = Annotated[int, Field(ge=0, lt=2**64)]


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class FramingConfig(_Frozen):
    """
    Framing and MFCC parameters.

    Attributes:
        frame_length_ms: Analysis window length in milliseconds
        hop_ms: Hop between successive frames in milliseconds
        pre_emphasis: First-order pre-emphasis coefficient (0 disables)
        n_mel_filters: Number of triangular mel filters
        n_cepstra: Number of static cepstral coefficients kept after the DCT
        log_floor: Floor applied to filterbank energies before the log
        sample_rate: Expected audio sample rate in Hz
        delta_window: Regression half-window for deltas
    """

    frame_length_ms: float = 25.0
    hop_ms: float = 10.0
    pre_emphasis: float = 0.97
    n_mel_filters: int = 26
    n_cepstra: int = 13
    log_floor: float = 1e-10
    sample_rate: int = 16000
    delta_window: int = 2

    @model_validator(mode="after")
    def _check(self) -> "FramingConfig":
        if not 0 < self.hop_ms <= self.frame_length_ms:
            raise ValueError("require 0 < hop_ms <= frame_length_ms")
        if not 1 <= self.n_cepstra <= self.n_mel_filters:
            raise ValueError("require 1 <= n_cepstra <= n_mel_filters")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be > 0")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be > 0")
        if self.delta_window < 1:
            raise ValueError("delta_window must be >= 1")
        if self.hop_samples < 1:
            raise ValueError("hop is shorter than one sample")
        return self

    @property
    def frame_samples(self) -> int:
        return int(round(self.sample_rate * self.frame_length_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def nfft(self) -> int:
        return 1 << max(0, math.ceil(math.log2(self.frame_samples)))

    @property
    def frame_rate_hz(self) -> float:
        return self.sample_rate / self.hop_samples

    @property
    def feature_dim(self) -> int:
        return 3 * self.n_cepstra


class ToyLanguageSpec(_Frozen):
    """
    Definition of a synthetic toy language.

    When ``grapheme_map`` is omitted, phoneme ``i`` is written with the
    ``i``-th lowercase letter (inventories above 26 use two-letter graphemes).
    """

    inventory_size: int = 8
    grapheme_map: Dict[str, int] = Field(default_factory=dict)
    segment_duration_ms: Tuple[float, float] = (80.0, 160.0)
    sample_rate: int = 16000
    seed: Seed = 0
    bijective: bool = True
    crossfade_ms: float = 10.0
    phonemes_per_word: Tuple[int, int] = (2, 5)

    @model_validator(mode="before")
    @classmethod
    def _default_graphemes(cls, data):
        if isinstance(data, dict) and not data.get("grapheme_map"):
            size = int(data.get("inventory_size", 8))
            data = dict(data)
            data["grapheme_map"] = {default_grapheme(i): i for i in range(size)}
        return data

    @model_validator(mode="after")
    def _check(self) -> "ToyLanguageSpec":
        if self.inventory_size < 2:
            raise ValueError("inventory_size must be >= 2")
        lo, hi = self.segment_duration_ms
        if not 0 < lo <= hi:
            raise ValueError("segment_duration_ms must satisfy 0 < min <= max")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be > 0")
        if self.crossfade_ms < 0 or self.crossfade_ms > lo:
            raise ValueError("crossfade_ms must lie in [0, min segment duration]")
        pmin, pmax = self.phonemes_per_word
        if not 1 <= pmin <= pmax:
            raise ValueError("phonemes_per_word must satisfy 1 <= min <= max")
        ids = list(self.grapheme_map.values())
        if any(not 0 <= i < self.inventory_size for i in ids):
            raise ValueError("grapheme_map refers to phoneme ids outside the inventory")
        if any(not g or any(c.isspace() for c in g) for g in self.grapheme_map):
            raise ValueError("graphemes must be non-empty and contain no whitespace")
        if set(ids) != set(range(self.inventory_size)):
            raise ValueError("grapheme_map must give every phoneme id at least one grapheme")
        if self.bijective and sorted(ids) != list(range(self.inventory_size)):
            raise ValueError("bijective grapheme_map must cover every phoneme id exactly once")
        return self


def default_grapheme(index: int) -> str:
    letters = string.ascii_lowercase
    if index < len(letters):
        return letters[index]
    return letters[index // len(letters) - 1] + letters[index % len(letters)]


class UnitConfig(_Frozen):
    """
    k-means and target preparation settings.

    Attributes:
        phone_target_k: Cluster count used for the final G2P targets
        max_iters: Lloyd iteration cap
        rel_tol: Relative inertia improvement below which Lloyd stops
        max_frames: Uniform subsampling cap for fitting
        normalize: Apply global mean/variance normalization before clustering
        collapse_for_g2p: Merge consecutive duplicate units in G2P targets
    """

    phone_target_k: int = 100
    max_iters: int = 100
    rel_tol: float = 1e-4
    max_frames: int = 200_000
    normalize: bool = True
    collapse_for_g2p: bool = True

    @model_validator(mode="after")
    def _check(self) -> "UnitConfig":
        if self.phone_target_k < 1 or self.max_iters < 1 or self.max_frames < 1:
            raise ValueError("phone_target_k, max_iters and max_frames must be >= 1")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be >= 0")
        return self


class EncoderConfig(_Frozen):
    """Masked-prediction encoder architecture and training schedule."""

    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    ffn_dim: int = 256
    dropout: float = 0.1
    feature_layer_index: int = 2
    n_iterations: int = 3
    k_schedule: List[int] = Field(default_factory=lambda: [100, 500, 500])
    mask_prob: float = 0.08
    mask_length: int = 10
    steps_per_iteration: int = 2000
    batch_size: int = 8
    log_every: int = 100

    @model_validator(mode="after")
    def _check(self) -> "EncoderConfig":
        if min(self.n_layers, self.d_model, self.n_heads, self.ffn_dim) < 1:
            raise ValueError("layer counts and dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0 <= self.feature_layer_index < self.n_layers:
            raise ValueError("feature_layer_index must be < n_layers")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if len(self.k_schedule) != self.n_iterations or min(self.k_schedule) < 1:
            raise ValueError("k_schedule needs one positive k per iteration")
        if not 0 < self.mask_prob < 1 or self.mask_length < 1:
            raise ValueError("require 0 < mask_prob < 1 and mask_length >= 1")
        if self.steps_per_iteration < 1 or self.batch_size < 1 or self.log_every < 1:
            raise ValueError("steps_per_iteration, batch_size and log_every must be >= 1")
        return self


class OptimizerConfig(_Frozen):
    """Adam settings with warmup and linear decay."""

    peak_lr: float = 5e-4
    warmup_fraction: float = 0.08
    betas: Tuple[float, float] = (0.9, 0.98)
    epsilon: float = 1e-8
    clip_norm: float = 1.0
    schedule: Literal["linear", "constant"] = "linear"

    @model_validator(mode="after")
    def _check(self) -> "OptimizerConfig":
        if self.peak_lr <= 0 or self.epsilon <= 0:
            raise ValueError("peak_lr and epsilon must be > 0")
        if not 0 <= self.warmup_fraction <= 1:
            raise ValueError("warmup_fraction must lie in [0, 1]")
        if not all(0 <= b < 1 for b in self.betas):
            raise ValueError("betas must lie in [0, 1)")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        return self


class G2PConfig(_Frozen):
    """Transformer G2P architecture, training and decoding settings."""

    d_model: int = 128
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_dim: int = 256
    n_heads: int = 4
    dropout: float = 0.1
    lr: float = 1e-3
    warmup_fraction: float = 0.05
    max_steps: int = 3000
    batch_size: int = 32
    eval_every: int = 200
    log_every: int = 100
    max_decode_ratio: float = 4.0
    beam_width: int = 4
    decode_mode: Literal["greedy", "beam"] = "greedy"
    mode: Literal["unit", "lexicon"] = "unit"
    keep_punctuation: str = "'"
    word_boundary: str = "|"

    @model_validator(mode="after")
    def _check(self) -> "G2PConfig":
        dims = (self.d_model, self.enc_layers, self.dec_layers, self.ffn_dim, self.n_heads,
                self.max_steps, self.batch_size, self.eval_every, self.log_every, self.beam_width)
        if min(dims) < 1 or self.lr <= 0:
            raise ValueError("all sizes and the learning rate must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0 <= self.warmup_fraction <= 1:
            raise ValueError("warmup_fraction must lie in [0, 1]")
        if self.max_decode_ratio < 1:
            raise ValueError("max_decode_ratio must be >= 1")
        return self


class SeedConfig(_Frozen):
    """Every seed the pipeline consumes; nothing else draws randomness."""

    split: Seed = 0
    kmeans: Seed = 0
    encoder: Seed = 0
    g2p: Seed = 0
    corpus: Seed = 0

    @classmethod
    def from_base(cls, base: int) -> "SeedConfig":
        return cls(split=base, kmeans=base + 1, encoder=base + 2, g2p=base + 3, corpus=base + 4)


class PipelineConfig(_Frozen):
    """Root of the configuration tree."""

    framing: FramingConfig = Field(default_factory=FramingConfig)
    units: UnitConfig = Field(default_factory=UnitConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    g2p: G2PConfig = Field(default_factory=G2PConfig)
    seeds: SeedConfig = Field(default_factory=SeedConfig)
    synth: Optional[ToyLanguageSpec] = None
    target_sample_rate: int = 16000
    split_fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    merge_labeled_into_pretraining: bool = False

    @model_validator(mode="after")
    def _check(self) -> "PipelineConfig":
        if self.target_sample_rate != self.framing.sample_rate:
            raise ValueError("target_sample_rate must equal framing.sample_rate")
        if any(f < 0 for f in self.split_fractions) or not math.isclose(sum(self.split_fractions), 1.0):
            raise ValueError("split_fractions must be non-negative and sum to 1")
        return self

import math

import numpy as np
import pytest
import torch
from scipy.stats import chisquare

from unitg2p.config import EncoderConfig, OptimizerConfig, UnitConfig
from unitg2p.dsp import FeatureSequence
from unitg2p.encoder import (
    EncoderModel,
    MaskSpec,
    corrupt,
    extract_layer_features,
    load_encoder,
    masked_ce_loss,
    pretrain,
    sample_mask,
    save_encoder,
)
from unitg2p.exceptions import DomainError
from unitg2p.nn import grad_check
from unitg2p.units import MFCC_TAG, UnitSequence, encoder_layer_tag


def _small_cfg(**overrides) -> EncoderConfig:
    base = dict(n_layers=2, d_model=16, n_heads=2, ffn_dim=32, dropout=0.0, feature_layer_index=1,
                n_iterations=1, k_schedule=[5], steps_per_iteration=5, batch_size=3, log_every=5)
    base.update(overrides)
    return EncoderConfig(**base)


def _features(t: int, dim: int = 39, seed: int = 0) -> FeatureSequence:
    return FeatureSequence(np.random.default_rng(seed).standard_normal((t, dim)), 100.0, t / 100.0)


def test_mask_policy_at_hundred_frames():
    m = sample_mask(100, 0.08, 10, seed=0)
    assert len(m.starts) == 8
    assert 10 <= len(m.indices) <= 80
    expected = sorted({i for s in m.starts for i in range(s, min(s + 10, 100))})
    assert m.indices.tolist() == expected


def test_mask_policy_on_short_sequence():
    m = sample_mask(5, 0.08, 10, seed=3)
    assert len(m.starts) == 1
    assert m.indices.tolist() == list(range(int(m.starts[0]), 5))


def test_mask_starts_are_uniform():
    counts = np.zeros(100)
    for seed in range(10_000):
        counts[sample_mask(100, 0.08, 10, seed).starts] += 1
    assert chisquare(counts).pvalue > 0.01


def test_mask_rejects_bad_arguments():
    with pytest.raises(DomainError):
        sample_mask(0, 0.08, 10, 0)
    with pytest.raises(DomainError):
        sample_mask(10, 1.5, 10, 0)


def test_corrupt_with_empty_mask_is_projection():
    model = EncoderModel(_small_cfg(), 39, 5, seed=0)
    x = _features(12)
    out = corrupt(x, MaskSpec.from_indices(12, []), model)
    with torch.no_grad():
        expected = model.project(torch.as_tensor(x.data, dtype=torch.float32)).numpy()
    assert np.array_equal(out.data, expected.astype(np.float64))


def test_corrupt_with_full_mask():
    model = EncoderModel(_small_cfg(), 39, 5, seed=0)
    out = corrupt(_features(6), MaskSpec.from_indices(6, range(6)), model)
    emb = model.mask_embedding.detach().numpy().astype(np.float64)
    assert all(np.array_equal(row, emb) for row in out.data)


def test_corrupt_leaves_unmasked_rows():
    model = EncoderModel(_small_cfg(), 39, 5, seed=0)
    x = _features(40, seed=1)
    m = sample_mask(40, 0.1, 4, seed=2)
    clean = corrupt(x, MaskSpec.from_indices(40, []), model).data
    dirty = corrupt(x, m, model).data
    keep = ~m.as_bool()
    assert np.array_equal(dirty[keep], clean[keep])
    assert not np.array_equal(dirty[~keep], clean[~keep])


def test_corrupt_length_mismatch():
    model = EncoderModel(_small_cfg(), 39, 5, seed=0)
    with pytest.raises(DomainError):
        corrupt(_features(10), sample_mask(11, 0.1, 2, 0), model)


def test_uniform_predictions_give_log_c():
    model = EncoderModel(_small_cfg(), 39, 100, seed=0).double()
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.zero_()
    x = _features(30)
    z = UnitSequence(np.random.default_rng(0).integers(0, 100, size=30), 100)
    loss = masked_ce_loss(model, x, sample_mask(30, 0.1, 5, 1), z)
    assert abs(float(loss) - math.log(100)) < 1e-6


def test_confident_predictions_give_zero_loss():
    model = EncoderModel(_small_cfg(), 39, 10, seed=0).double()
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.zero_()
        model.head.bias[3] = 60.0
    z = UnitSequence(np.full(20, 3), 10)
    assert float(masked_ce_loss(model, _features(20), sample_mask(20, 0.2, 3, 0), z)) < 1e-12


def test_unmasked_targets_do_not_matter():
    model = EncoderModel(_small_cfg(), 39, 5, seed=0).double().eval()
    x = _features(25)
    m = sample_mask(25, 0.1, 3, seed=4)
    rng = np.random.default_rng(5)
    z = rng.integers(0, 5, size=25)
    other = z.copy()
    keep = ~m.as_bool()
    other[keep] = (z[keep] + 1) % 5
    a = masked_ce_loss(model, x, m, UnitSequence(z, 5))
    b = masked_ce_loss(model, x, m, UnitSequence(other, 5))
    assert float(a) == float(b)


def test_initial_loss_is_near_log_c():
    model = EncoderModel(EncoderConfig(), 39, 100, seed=0).eval()
    x = _features(80, seed=6)
    z = UnitSequence(np.random.default_rng(7).integers(0, 100, size=80), 100)
    loss = float(masked_ce_loss(model, x, sample_mask(80, 0.08, 10, 8), z))
    assert abs(loss - math.log(100)) < 0.05 * math.log(100)


def test_masked_loss_preconditions():
    model = EncoderModel(_small_cfg(), 39, 5, seed=0)
    x = _features(10)
    z = UnitSequence(np.zeros(10, dtype=np.int64), 5)
    with pytest.raises(DomainError):
        masked_ce_loss(model, x, MaskSpec.from_indices(10, []), z)
    with pytest.raises(DomainError):
        masked_ce_loss(model, x, sample_mask(10, 0.1, 2, 0), UnitSequence(np.zeros(9, dtype=np.int64), 5))
    with pytest.raises(DomainError):
        masked_ce_loss(model, x, sample_mask(10, 0.1, 2, 0), UnitSequence(np.zeros(10, dtype=np.int64), 50))


def test_masked_loss_gradients():
    cfg = _small_cfg(n_layers=1, d_model=8, ffn_dim=16, feature_layer_index=0)
    model = EncoderModel(cfg, 6, 5, seed=1).double()
    x = _features(12, dim=6, seed=2)
    m = MaskSpec.from_indices(12, [2, 3, 7, 10])
    z = UnitSequence(np.random.default_rng(3).integers(0, 5, size=12), 5)
    err = grad_check(lambda: masked_ce_loss(model, x, m, z), list(model.parameters()))
    assert err < 1e-4


def test_layer_features_are_deterministic():
    model = EncoderModel(_small_cfg(dropout=0.3), 39, 5, seed=0)
    model.train()
    x = _features(15)
    a = extract_layer_features(model, x, 1)
    b = extract_layer_features(model, x, 1)
    assert a.data.shape == (15, 16)
    assert np.array_equal(a.data, b.data)
    assert model.training


def test_layer_features_with_zeroed_parameters():
    model = EncoderModel(_small_cfg(), 39, 5, seed=0)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    out = extract_layer_features(model, _features(9), 0).data
    assert np.all(np.isfinite(out))
    assert all(np.array_equal(row, out[0]) for row in out)


def test_layer_index_out_of_range():
    model = EncoderModel(_small_cfg(), 39, 5, seed=0)
    with pytest.raises(DomainError):
        extract_layer_features(model, _features(4), 2)


def _corpus(n: int = 6, t: int = 30):
    return [_features(t + i, seed=i) for i in range(n)]


def test_single_iteration_uses_mfcc_targets():
    result = pretrain(_corpus(), _small_cfg(), UnitConfig(), OptimizerConfig(), seed=0)
    assert [c.source_tag for c in result.cluster_models] == [MFCC_TAG]
    assert len(result.losses) == 1 and len(result.losses[0]) == 5
    assert result.model.n_classes == 5


def test_later_iterations_cluster_the_feature_layer():
    cfg = _small_cfg(n_iterations=3, k_schedule=[4, 6, 7])
    result = pretrain(_corpus(), cfg, UnitConfig(), OptimizerConfig(), seed=0)
    assert [c.source_tag for c in result.cluster_models] == [MFCC_TAG] + [encoder_layer_tag(1)] * 2
    assert [c.k for c in result.cluster_models] == [4, 6, 7]
    assert result.model.n_classes == 7
    assert all(t.k == 7 for t in result.targets[-1])


def test_pretraining_is_reproducible():
    cfg = _small_cfg(n_iterations=2, k_schedule=[4, 4], dropout=0.1)
    a = pretrain(_corpus(), cfg, UnitConfig(), OptimizerConfig(), seed=3)
    b = pretrain(_corpus(), cfg, UnitConfig(), OptimizerConfig(), seed=3)
    assert a.losses == b.losses
    for pa, pb in zip(a.model.parameters(), b.model.parameters()):
        assert torch.equal(pa, pb)


def test_pretraining_needs_frames():
    with pytest.raises(DomainError):
        pretrain([_features(0)], _small_cfg(), UnitConfig(), OptimizerConfig(), seed=0)


def test_encoder_round_trip(tmp_path):
    result = pretrain(_corpus(), _small_cfg(), UnitConfig(), OptimizerConfig(), seed=0)
    save_encoder(tmp_path / "encoder.ugpt", result.model)
    back = load_encoder(tmp_path / "encoder.ugpt")
    sample = _features(20, seed=9)
    for layer in range(2):
        assert np.array_equal(extract_layer_features(back, sample, layer).data,
                              extract_layer_features(result.model, sample, layer).data)

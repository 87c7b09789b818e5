import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from unitg2p.config import OptimizerConfig
from unitg2p.exceptions import ContainerFormatError, DomainError
from unitg2p.nn import (
    DecoderLayer,
    EncoderLayer,
    PositionalEncoding,
    adam_step,
    build_optimizer,
    causal_mask,
    grad_check,
    load_tensors,
    lr_at,
    save_tensors,
    scaled_dot_attention,
    sinusoidal_table,
    softmax,
)


def test_softmax_uniform():
    assert softmax(torch.zeros(4)).tolist() == [0.25, 0.25, 0.25, 0.25]


def test_softmax_matches_formula():
    logits = torch.randn(10, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    expected = torch.exp(logits) / torch.exp(logits).sum()
    torch.testing.assert_close(softmax(logits), expected, rtol=1e-12, atol=1e-12)


def test_softmax_rows_sum_to_one():
    probs = softmax(torch.randn(50, 7) * 30)
    torch.testing.assert_close(probs.sum(dim=-1), torch.ones(50), rtol=0, atol=1e-6)


def test_softmax_of_empty_vector():
    with pytest.raises(DomainError):
        softmax(torch.zeros(0))


def test_attention_single_key():
    q = torch.randn(3, 4)
    k = torch.randn(1, 4)
    v = torch.randn(1, 5)
    out = scaled_dot_attention(q, k, v)
    torch.testing.assert_close(out, v.expand(3, 5))


def test_attention_causal_first_row():
    q, k, v = torch.randn(3, 4), torch.randn(3, 4), torch.randn(3, 6)
    out = scaled_dot_attention(q, k, v, causal_mask(3))
    torch.testing.assert_close(out[0], v[0])


def test_attention_matches_loops():
    gen = torch.Generator().manual_seed(1)
    q, k, v = (torch.randn(4, 8, dtype=torch.float64, generator=gen) for _ in range(3))
    mask = torch.rand(4, 4, generator=gen) > 0.3
    mask[:, 0] = True
    out = scaled_dot_attention(q, k, v, mask)
    expected = torch.zeros(4, 8, dtype=torch.float64)
    for i in range(4):
        scores = [float(q[i] @ k[j]) / math.sqrt(8) if mask[i, j] else -math.inf for j in range(4)]
        top = max(scores)
        weights = [math.exp(s - top) for s in scores]
        total = sum(weights)
        for j in range(4):
            expected[i] += weights[j] / total * v[j]
    torch.testing.assert_close(out, expected, rtol=1e-6, atol=1e-6)


def test_attention_shape_mismatch():
    with pytest.raises(DomainError):
        scaled_dot_attention(torch.randn(2, 4), torch.randn(3, 5), torch.randn(3, 4))


def test_lr_schedule():
    assert lr_at(5, 1.0, 10, 100) == pytest.approx(0.5)
    assert lr_at(10, 1.0, 10, 100) == pytest.approx(1.0)
    assert lr_at(55, 1.0, 10, 100) == pytest.approx(0.5)
    assert lr_at(100, 1.0, 10, 100) == 0.0
    assert lr_at(150, 1.0, 10, 100) == 0.0
    assert lr_at(60, 1.0, 10, 100, schedule="constant") == 1.0


def test_adam_zero_gradient_leaves_parameters():
    p = torch.nn.Parameter(torch.randn(5, dtype=torch.float64))
    before = p.detach().clone()
    state = build_optimizer([p], OptimizerConfig(), total_steps=10)
    for _ in range(3):
        adam_step([p], [torch.zeros(5, dtype=torch.float64)], state)
    assert torch.equal(p.detach(), before)
    assert state.step_count == 3


def test_adam_first_step_moves_by_lr():
    p = torch.nn.Parameter(torch.tensor([2.0], dtype=torch.float64))
    cfg = OptimizerConfig(peak_lr=1e-3, warmup_fraction=0.0, schedule="constant")
    state = build_optimizer([p], cfg, total_steps=10)
    lr = adam_step([p], [torch.tensor([0.5], dtype=torch.float64)], state)
    assert lr == pytest.approx(1e-3)
    assert abs(abs(float(p) - 2.0) - lr) < 1e-6


def test_adam_follows_warmup():
    p = torch.nn.Parameter(torch.zeros(1))
    state = build_optimizer([p], OptimizerConfig(peak_lr=1.0, warmup_fraction=0.5), total_steps=4)
    lrs = [adam_step([p], [torch.ones(1)], state) for _ in range(4)]
    assert lrs == pytest.approx([0.5, 1.0, 0.5, 0.0])


def test_adam_gradient_shape_mismatch():
    p = torch.nn.Parameter(torch.zeros(3))
    state = build_optimizer([p], OptimizerConfig(), total_steps=1)
    with pytest.raises(DomainError):
        adam_step([p], [torch.zeros(4)], state)


def test_grad_check_sum_of_squares():
    x = torch.randn(6, dtype=torch.float64, requires_grad=True)
    assert grad_check(lambda: (x ** 2).sum(), [x]) < 1e-7


def test_grad_check_constant_function():
    x = torch.randn(4, dtype=torch.float64, requires_grad=True)
    f = lambda: (x * 0.0).sum() + 3.0  # noqa: E731
    (grad,) = torch.autograd.grad(f(), [x])
    assert torch.all(grad.abs() < 1e-8)
    assert grad_check(f, [x]) < 1e-8


def test_grad_check_encoder_layer():
    torch.manual_seed(0)
    layer = EncoderLayer(8, 2, 16, 0.0).double()
    x = torch.randn(1, 5, 8, dtype=torch.float64)
    targets = torch.randint(0, 8, (5,))
    params = list(layer.parameters())
    assert grad_check(lambda: F.cross_entropy(layer(x)[0], targets), params) < 1e-4


def test_grad_check_decoder_layer():
    torch.manual_seed(1)
    layer = DecoderLayer(8, 2, 16, 0.0).double()
    y = torch.randn(1, 4, 8, dtype=torch.float64)
    memory = torch.randn(1, 6, 8, dtype=torch.float64)
    memory_mask = torch.ones(1, 4, 6, dtype=torch.bool)
    memory_mask[..., 5] = False
    targets = torch.randint(0, 8, (4,))
    params = list(layer.parameters())

    def loss():
        out = layer(y, memory, causal_mask(4).unsqueeze(0), memory_mask)
        return F.cross_entropy(out[0], targets)

    assert grad_check(loss, params) < 1e-4


def test_layer_outputs_are_normalized():
    torch.manual_seed(2)
    x = torch.randn(2, 7, 16, dtype=torch.float64) * 5 + 3
    for out in (EncoderLayer(16, 4, 32, 0.0).double()(x),
                DecoderLayer(16, 4, 32, 0.0).double()(x, torch.randn(2, 3, 16, dtype=torch.float64))):
        torch.testing.assert_close(out.mean(dim=-1), torch.zeros(2, 7, dtype=torch.float64), rtol=0, atol=1e-9)
        torch.testing.assert_close(out.var(dim=-1, unbiased=False), torch.ones(2, 7, dtype=torch.float64),
                                   rtol=0, atol=1e-3)


def test_dropout_only_acts_in_training():
    torch.manual_seed(3)
    noisy = EncoderLayer(8, 2, 16, 0.5).double()
    clean = EncoderLayer(8, 2, 16, 0.0).double()
    clean.load_state_dict(noisy.state_dict())
    x = torch.randn(1, 5, 8, dtype=torch.float64)
    torch.testing.assert_close(noisy.eval()(x), clean.eval()(x), rtol=0, atol=0)

    noisy.train()
    ones = torch.ones(200_000, dtype=torch.float64)
    dropped = noisy.dropout(ones)
    assert set(torch.unique(dropped).tolist()) == {0.0, 2.0}
    assert float(dropped.mean()) == pytest.approx(1.0, abs=0.01)


def test_positional_encoding_matches_formula():
    d_model = 6
    pe = PositionalEncoding(d_model, max_len=4)
    out = pe(torch.zeros(1, 10, d_model, dtype=torch.float64))[0]
    for pos in range(10):
        for i in range(0, d_model, 2):
            angle = pos / 10000 ** (i / d_model)
            assert float(out[pos, i]) == pytest.approx(math.sin(angle), abs=1e-12)
            assert float(out[pos, i + 1]) == pytest.approx(math.cos(angle), abs=1e-12)
    # longer inputs do not replace the stored table
    assert pe.pe.shape == (4, d_model)
    torch.testing.assert_close(sinusoidal_table(10, d_model)[:4], pe.pe)


def test_tensor_container_round_trip(tmp_path):
    tensors = {
        "w": torch.randn(3, 4),
        "d": torch.randn(2, dtype=torch.float64),
        "i": torch.arange(5),
        "b": torch.tensor([True, False]),
        "s": torch.tensor(1.5),
    }
    save_tensors(tmp_path / "t.ugpt", tensors)
    back = load_tensors(tmp_path / "t.ugpt")
    assert list(back) == list(tensors)
    for name, value in tensors.items():
        assert back[name].dtype == value.dtype
        assert torch.equal(back[name], value)


def test_tensor_container_rejects_trailing_bytes(tmp_path):
    path = tmp_path / "t.ugpt"
    save_tensors(path, {"x": torch.zeros(2)})
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ContainerFormatError):
        load_tensors(path)


def test_tensor_container_rejects_bad_magic(tmp_path):
    path = tmp_path / "t.ugpt"
    path.write_bytes(b"NOPE" + np.zeros(8, dtype=np.uint8).tobytes())
    with pytest.raises(ContainerFormatError):
        load_tensors(path)

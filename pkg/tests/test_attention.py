import math

import pytest
import torch

from models.attention import LinformerSelfAttention, masked_softmax


def full_causal_attention(layer: LinformerSelfAttention, x: torch.Tensor) -> torch.Tensor:
    """ Standard causal multi-head attention with the weights of the layer. """
    batch_size, length, _ = x.shape
    heads, d_key, d_value = layer.nb_heads, layer.d_key, layer.d_value
    query = layer.w_query(x).view(batch_size, length, heads, d_key).transpose(1, 2)
    key = layer.w_key(x).view(batch_size, length, heads, d_key).transpose(1, 2)
    value = layer.w_value(x).view(batch_size, length, heads, d_value).transpose(1, 2)

    scores = query @ key.transpose(-1, -2) / math.sqrt(d_key)
    future = torch.triu(torch.ones(length, length, dtype=torch.bool), diagonal=1)
    attention = torch.softmax(scores.masked_fill(future, float('-inf')), dim=-1)
    output = (attention @ value).transpose(1, 2).reshape(batch_size, length, heads * d_value)
    return layer.w_out(output)


def test_identity_projection_is_full_attention():
    torch.manual_seed(0)
    layer = LinformerSelfAttention(d_model=6, nb_heads=2, d_key=3, d_value=3, projection_length=5,
                                   max_seq_len=5).double()
    with torch.no_grad():
        layer.e_projection.copy_(torch.eye(5))
        layer.f_projection.copy_(torch.eye(5))
    x = torch.randn(2, 5, 6, dtype=torch.float64)

    assert torch.allclose(layer(x), full_causal_attention(layer, x), atol=1e-12)


def test_attention_is_causal():
    torch.manual_seed(0)
    layer = LinformerSelfAttention(d_model=8, nb_heads=2, d_key=4, d_value=4, projection_length=3,
                                   max_seq_len=10).double()
    x = torch.randn(1, 10, 8, dtype=torch.float64)
    changed = x.clone()
    changed[0, 6:] += 1.0

    before, after = layer(x), layer(changed)
    assert torch.allclose(before[0, :6], after[0, :6], atol=1e-12)
    assert not torch.allclose(before[0, 6:], after[0, 6:])


def test_memory_is_linear_in_the_length():
    layer = LinformerSelfAttention(d_model=8, nb_heads=2, d_key=4, d_value=4, projection_length=4,
                                   max_seq_len=256)
    layer(torch.randn(1, 64, 8))
    short = layer.peak_elements
    layer(torch.randn(1, 128, 8))
    assert layer.peak_elements == 2 * short


def test_masked_softmax():
    scores = torch.tensor([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
    visible = torch.tensor([[True, True, False], [False, False, False]])
    weights = masked_softmax(scores, visible)

    assert weights[0].tolist() == pytest.approx(torch.softmax(torch.tensor([1.0, 2.0]), 0).tolist() + [0.0])
    assert weights[1].tolist() == [0.0, 0.0, 0.0]

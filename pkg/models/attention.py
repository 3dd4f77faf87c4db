"""
Causal multi-head self-attention with low-rank (Linformer) key and value projections, and the transformer block.

The sequence axis of the keys and values is projected on k slots by E and F (k x max_seq_len). To keep the attention
causal, the query at position j only sees the prefix projection
    K'_j = Σ_{i <= j} E[:, i] ⊗ K_i        V'_j = Σ_{i <= j} F[:, i] ⊗ V_i
computed with a cumulative sum, so the memory grows linearly with the sequence length at fixed k.
"""
import math

import torch
import torch.nn as nn


def masked_softmax(scores: torch.Tensor, visible: torch.Tensor) -> torch.Tensor:
    """
    Softmax over the last axis restricted to the visible entries. A row without visible entry gives zeros.
    """
    scores = scores.masked_fill(~visible, float('-inf'))
    peak = scores.amax(dim=-1, keepdim=True).detach()
    peak = torch.where(torch.isfinite(peak), peak, torch.zeros_like(peak))
    weights = torch.exp(scores - peak)
    total = weights.sum(dim=-1, keepdim=True)
    return weights / torch.where(total > 0, total, torch.ones_like(total))


class LinformerSelfAttention(nn.Module):
    """ Multi-head causal self-attention, the projections E and F are shared by the heads. """

    def __init__(self, d_model: int, nb_heads: int, d_key: int, d_value: int, projection_length: int,
                 max_seq_len: int):
        super().__init__()
        self.nb_heads = nb_heads
        self.d_key = d_key
        self.d_value = d_value

        self.w_query = nn.Linear(d_model, nb_heads * d_key, bias=False)
        self.w_key = nn.Linear(d_model, nb_heads * d_key, bias=False)
        self.w_value = nn.Linear(d_model, nb_heads * d_value, bias=False)
        self.w_out = nn.Linear(nb_heads * d_value, d_model)

        self.e_projection = nn.Parameter(torch.empty(projection_length, max_seq_len))
        self.f_projection = nn.Parameter(torch.empty(projection_length, max_seq_len))

        for weight in (self.w_query.weight, self.w_key.weight, self.w_value.weight, self.w_out.weight,
                       self.e_projection, self.f_projection):
            nn.init.xavier_uniform_(weight)

        # Number of elements of the largest intermediate tensor of the last forward
        self.peak_elements = 0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """
        :param x: The input sequence (B, L, d_model).
        :return: The attention output (B, L, d_model), position j only depends on positions <= j.
        """
        batch_size, length, _ = x.shape
        query = self.w_query(x).view(batch_size, length, self.nb_heads, self.d_key)
        key = self.w_key(x).view(batch_size, length, self.nb_heads, self.d_key)
        value = self.w_value(x).view(batch_size, length, self.nb_heads, self.d_value)

        e_projection = self.e_projection[:, :length]
        f_projection = self.f_projection[:, :length]

        # (B, L, k, heads, d): prefix projections seen by each query position
        prefix_keys = torch.cumsum(torch.einsum('ri,bihd->birhd', e_projection, key), dim=1)
        prefix_values = torch.cumsum(torch.einsum('ri,bihd->birhd', f_projection, value), dim=1)

        scores = torch.einsum('bjhd,bjrhd->bjhr', query, prefix_keys) / math.sqrt(self.d_key)
        # A slot is empty until one of its projection weights is non-zero
        visible = (torch.cumsum(e_projection.abs(), dim=1) > 0).transpose(0, 1)
        attention = masked_softmax(scores, visible[None, :, None, :])

        output = torch.einsum('bjhr,bjrhd->bjhd', attention, prefix_values)
        self.peak_elements = max(prefix_keys.numel(), prefix_values.numel())
        return self.w_out(output.reshape(batch_size, length, self.nb_heads * self.d_value))


class EncoderLayer(nn.Module):
    """ Attention then position-wise ReLU feed-forward, each with a residual connection and layer normalization. """

    def __init__(self, d_model: int, d_inner: int, nb_heads: int, d_key: int, d_value: int, projection_length: int,
                 max_seq_len: int):
        super().__init__()
        self.self_attention = LinformerSelfAttention(d_model, nb_heads, d_key, d_value, projection_length,
                                                     max_seq_len)
        self.attention_norm = nn.LayerNorm(d_model, eps=1e-6)
        self.feed_forward = nn.Sequential(
            nn.Linear(d_model, d_inner),
            nn.ReLU(),
            nn.Linear(d_inner, d_model),
        )
        self.feed_forward_norm = nn.LayerNorm(d_model, eps=1e-6)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.attention_norm(x + self.self_attention(x))
        return self.feed_forward_norm(x + self.feed_forward(x))

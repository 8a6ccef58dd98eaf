"""Shared transformer encoder and decoder stacks plus decoding search.

Pre-norm residual layout, sinusoidal positions, multi-head attention with
boolean masks (True = may attend). The same encoder object serves image and
text feature sequences; decoders carry their own token embeddings. Decoding
recomputes the full prefix each step, which keeps the search trivially
correct at the scales this package targets.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn

from .encoders import FeatureSequence, TextEncoder
from .vocab import PAD


@dataclass
class TransformerConfig:
    d_model: int = 512
    heads: int = 8
    layers_enc: int = 6
    layers_dec: int = 6
    ffn: int = 2048
    dropout: float = 0.1
    max_len: int = 512

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")


def desk_transformer_config(**overrides):
    """Small preset used by tests and desk-scale experiments."""
    base = dict(d_model=64, heads=4, layers_enc=2, layers_dec=2, ffn=128, dropout=0.1, max_len=128)
    base.update(overrides)
    return TransformerConfig(**base)


def sinusoidal_positions(max_len, d_model):
    if d_model % 2 != 0:
        raise ValueError("d_model must be even for sinusoidal positions")
    pos = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64) * (-math.log(10000.0) / d_model))
    pe = torch.zeros(max_len, d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)
    return pe


class PositionalEncoding(nn.Module):
    def __init__(self, d_model, dropout, max_len):
        super().__init__()
        self.max_len = max_len
        self.dropout = nn.Dropout(dropout)
        self.register_buffer("pe", sinusoidal_positions(max_len, d_model))

    def forward(self, x):
        L = x.shape[1]
        if L > self.max_len:
            raise ValueError(f"sequence length {L} exceeds positional table ({self.max_len})")
        return self.dropout(x + self.pe[:L].to(x.dtype))


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model, heads, dropout):
        super().__init__()
        self.heads = heads
        self.d_k = d_model // heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, query, key, value, mask=None):
        """mask broadcasts to B x heads x Lq x Lk, True where attending is allowed."""
        B, Lq, D = query.shape
        Lk = key.shape[1]
        q = self.q_proj(query).view(B, Lq, self.heads, self.d_k).transpose(1, 2)
        k = self.k_proj(key).view(B, Lk, self.heads, self.d_k).transpose(1, 2)
        v = self.v_proj(value).view(B, Lk, self.heads, self.d_k).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_k)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        weights = self.dropout(torch.softmax(scores, dim=-1))
        out = (weights @ v).transpose(1, 2).reshape(B, Lq, D)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model, ffn, dropout):
        super().__init__()
        self.lin1 = nn.Linear(d_model, ffn)
        self.lin2 = nn.Linear(ffn, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.lin2(self.dropout(torch.relu(self.lin1(x))))


class Sublayer(nn.Module):
    """Pre-norm residual wrapper: x + dropout(f(norm(x)))."""

    def __init__(self, d_model, dropout):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, f):
        return x + self.dropout(f(self.norm(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.ff = FeedForward(cfg.d_model, cfg.ffn, cfg.dropout)
        self.sub1 = Sublayer(cfg.d_model, cfg.dropout)
        self.sub2 = Sublayer(cfg.d_model, cfg.dropout)

    def forward(self, x, mask):
        x = self.sub1(x, lambda h: self.attn(h, h, h, mask))
        return self.sub2(x, self.ff)


class DecoderLayer(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.ff = FeedForward(cfg.d_model, cfg.ffn, cfg.dropout)
        self.sub1 = Sublayer(cfg.d_model, cfg.dropout)
        self.sub2 = Sublayer(cfg.d_model, cfg.dropout)
        self.sub3 = Sublayer(cfg.d_model, cfg.dropout)

    def forward(self, x, memory, self_mask, memory_mask):
        x = self.sub1(x, lambda h: self.self_attn(h, h, h, self_mask))
        x = self.sub2(x, lambda h: self.cross_attn(h, memory, memory, memory_mask))
        return self.sub3(x, self.ff)


def causal_mask(L, device=None):
    return torch.ones(L, L, dtype=torch.bool, device=device).tril()


class TransformerEncoder(nn.Module):
    """Self-attention stack over a FeatureSequence; adds positions itself."""

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.cfg = cfg
        self.positional = PositionalEncoding(cfg.d_model, cfg.dropout, cfg.max_len)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers_enc))
        self.final_norm = nn.LayerNorm(cfg.d_model)

    def forward(self, seq: FeatureSequence) -> FeatureSequence:
        if seq.dim != self.cfg.d_model:
            raise ValueError(f"feature dim {seq.dim} does not match d_model {self.cfg.d_model}")
        mask = seq.padding_mask()[:, None, None, :]
        x = self.positional(seq.features)
        for layer in self.layers:
            x = layer(x, mask)
        return FeatureSequence(self.final_norm(x), seq.lengths)


class TransformerDecoder(nn.Module):
    """Causal decoder with its own token embedding; returns hidden states."""

    def __init__(self, cfg: TransformerConfig, vocab_size, pad_id=PAD):
        super().__init__()
        self.cfg = cfg
        self.embed = TextEncoder(vocab_size, cfg.d_model, pad_id=pad_id)
        self.positional = PositionalEncoding(cfg.d_model, cfg.dropout, cfg.max_len)
        self.layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.layers_dec))
        self.final_norm = nn.LayerNorm(cfg.d_model)

    def forward(self, prefix_ids, memory: FeatureSequence):
        emb = self.embed(prefix_ids)
        T = prefix_ids.shape[1]
        self_mask = causal_mask(T, prefix_ids.device)[None, None] & emb.padding_mask()[:, None, None, :]
        memory_mask = memory.padding_mask()[:, None, None, :]
        x = self.positional(emb.features)
        for layer in self.layers:
            x = layer(x, memory.features, self_mask, memory_mask)
        return self.final_norm(x)


def greedy_decode(step_fn, batch_size, bos, eos, max_len, device=None, pad=PAD):
    """Batched argmax decoding.

    step_fn maps a B x T prefix (starting with BOS) to B x V next-token
    log-probs. Returns generated ids (B x <=max_len) including the final EOS,
    PAD-filled after a row finishes.
    """
    prefix = torch.full((batch_size, 1), bos, dtype=torch.long, device=device)
    finished = torch.zeros(batch_size, dtype=torch.bool, device=device)
    steps = []
    for _ in range(max_len):
        logprobs = step_fn(prefix)
        nxt = logprobs.argmax(dim=-1)
        nxt = torch.where(finished, torch.full_like(nxt, pad), nxt)
        steps.append(nxt)
        finished = finished | (nxt == eos)
        prefix = torch.cat([prefix, nxt.unsqueeze(1)], dim=1)
        if bool(finished.all()):
            break
    return torch.stack(steps, dim=1)


def beam_decode(step_fn, bos, eos, max_len, beam, length_normalize=True):
    """Beam search for a single example.

    step_fn maps an N x T prefix batch to N x V next-token log-probs. Scores
    accumulate log-probabilities; final ranking divides by generated length
    when length_normalize is set. beam=1 reproduces greedy decoding.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    live = [(0.0, [bos])]
    done = []
    for _ in range(max_len):
        if not live:
            break
        prefix = torch.tensor([tokens for _, tokens in live], dtype=torch.long)
        logprobs = step_fn(prefix)
        candidates = []
        for (score, tokens), row in zip(live, logprobs):
            for tok, lp in enumerate(row.tolist()):
                candidates.append((score + lp, tokens + [tok]))
        candidates.sort(key=lambda c: c[0], reverse=True)
        live = []
        for score, tokens in candidates[:beam]:
            if tokens[-1] == eos:
                done.append((score, tokens))
            else:
                live.append((score, tokens))
    done.extend(live)  # truncated hypotheses compete too

    def ranking(entry):
        score, tokens = entry
        n = len(tokens) - 1  # generated tokens, BOS excluded
        return score / n if length_normalize and n > 0 else score

    best = max(done, key=ranking)
    return best[1][1:]  # drop BOS; EOS kept when present

"""Decoder-only transformer over holistic token sequences (PyTorch)."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..errors import EmptyCorpus, SequenceTooLong, TokenOutOfVocab
from .base import NextTokenModel

IGNORE = -100


@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 4
    d: int = 64
    ff: int = 256
    t_max: int = 1024
    dropout: float = 0.0
    lr: float = 3e-3
    weight_decay: float = 1e-2
    optimizer: str = "adamw"
    momentum: float = 0.9
    batch_size: int = 16
    schedule: str = "cosine"
    warmup_steps: int = 20

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"embedding dim {self.d} is not divisible by {self.heads} heads")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError("optimizer must be 'adamw' or 'sgd'")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError("schedule must be 'constant' or 'cosine'")

    @classmethod
    def paper_scale(cls, vocab_size: int, **kw) -> "TransformerConfig":
        return cls(vocab_size, layers=8, heads=8, d=256, ff=1024, lr=1e-3, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.heads = cfg.heads
        self.qkv = nn.Linear(cfg.d, 3 * cfg.d)
        self.proj = nn.Linear(cfg.d, cfg.d)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, past=None):
        """Attend over ``past`` keys/values (if any) plus ``x``; returns ``(y, (k, v))``."""
        b, t, c = x.shape
        q, k, v = self.qkv(x).split(c, dim=2)
        q, k, v = (z.view(b, t, self.heads, c // self.heads).transpose(1, 2) for z in (q, k, v))
        if past is not None:
            k = torch.cat([past[0], k], dim=2)
            v = torch.cat([past[1], v], dim=2)
        n_past = k.shape[2] - t
        att = (q @ k.transpose(-2, -1)) / math.sqrt(c // self.heads)
        mask = torch.ones(t, k.shape[2], dtype=torch.bool, device=x.device).triu(n_past + 1)
        att = att.masked_fill(mask, float("-inf"))
        att = self.drop(F.softmax(att, dim=-1))
        y = (att @ v).transpose(1, 2).reshape(b, t, c)
        return self.proj(y), (k, v)


class Block(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d)
        self.attn = CausalSelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d)
        self.mlp = nn.Sequential(nn.Linear(cfg.d, cfg.ff), nn.GELU(), nn.Linear(cfg.ff, cfg.d), nn.Dropout(cfg.dropout))

    def forward(self, x, past=None):
        a, kv = self.attn(self.ln1(x), past)
        x = x + a
        return x + self.mlp(self.ln2(x)), kv


class DecoderOnlyTransformer(nn.Module):
    """Token + learned absolute position embeddings, pre-norm blocks, linear head."""

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d)
        self.pos_emb = nn.Embedding(cfg.t_max, cfg.d)
        self.drop = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.layers))
        self.ln_f = nn.LayerNorm(cfg.d)
        self.head = nn.Linear(cfg.d, cfg.vocab_size)
        self.apply(self._init)

    @staticmethod
    def _init(mod):
        if isinstance(mod, nn.Linear):
            nn.init.normal_(mod.weight, std=0.02)
            nn.init.zeros_(mod.bias)
        elif isinstance(mod, nn.Embedding):
            nn.init.normal_(mod.weight, std=0.02)

    def forward(self, idx):
        return self.forward_cached(idx)[0]

    def forward_cached(self, idx, past=None):
        """Logits for ``idx`` continuing a cached prefix; returns ``(logits, cache)``."""
        t = idx.shape[1]
        start = 0 if past is None else past[0][0].shape[2]
        if start + t > self.cfg.t_max:
            raise SequenceTooLong(f"input of {start + t} tokens exceeds t_max={self.cfg.t_max}")
        pos = torch.arange(start, start + t, device=idx.device)
        x = self.drop(self.tok_emb(idx) + self.pos_emb(pos)[None])
        cache = []
        for i, blk in enumerate(self.blocks):
            x, kv = blk(x, None if past is None else past[i])
            cache.append(kv)
        return self.head(self.ln_f(x)), cache


def sequence_loss(net: DecoderOnlyTransformer, inputs, targets) -> torch.Tensor:
    """Mean next-token cross-entropy over non-padding targets."""
    logits = net(inputs)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=IGNORE)


def make_batch(seqs, pad: int = 0):
    """Teacher-forcing tensors: inputs ``s[:-1]`` and targets ``s[1:]``, right-padded."""
    width = max(len(s) for s in seqs) - 1
    inputs = torch.full((len(seqs), width), pad, dtype=torch.long)
    targets = torch.full((len(seqs), width), IGNORE, dtype=torch.long)
    for i, s in enumerate(seqs):
        s = torch.as_tensor(s, dtype=torch.long)
        inputs[i, :len(s) - 1] = s[:-1]
        targets[i, :len(s) - 1] = s[1:]
    return inputs, targets


def _softmax64(logits) -> np.ndarray:
    probs = torch.softmax(logits.double(), dim=-1).numpy()
    return probs / probs.sum(axis=1, keepdims=True)


class TransformerModel(NextTokenModel):
    def __init__(self, net: DecoderOnlyTransformer, end_token: int | None = None):
        self.net = net.eval()
        self.vocab_size = net.cfg.vocab_size
        self.max_len = net.cfg.t_max
        self.end_token = end_token

    @property
    def cfg(self) -> TransformerConfig:
        return self.net.cfg

    @torch.no_grad()
    def next_token_dists(self, contexts) -> np.ndarray:
        ctx = [list(c)[-self.max_len:] for c in contexts]
        width = max(len(c) for c in ctx)
        idx = torch.zeros((len(ctx), width), dtype=torch.long)
        for i, c in enumerate(ctx):
            idx[i, :len(c)] = torch.as_tensor(c, dtype=torch.long)
        logits = self.net(idx)
        last = torch.as_tensor([len(c) - 1 for c in ctx])
        return _softmax64(logits[torch.arange(len(ctx)), last])

    def next_token_dist(self, context) -> np.ndarray:
        return self.next_token_dists([context])[0]

    # Incremental decoding: ``begin`` runs equal-length prompts once, ``advance``
    # feeds one new token per kept row and reuses cached keys/values.

    @torch.no_grad()
    def begin(self, prompts):
        idx = torch.as_tensor([list(p) for p in prompts], dtype=torch.long)
        logits, cache = self.net.forward_cached(idx)
        return cache, _softmax64(logits[:, -1])

    @torch.no_grad()
    def advance(self, cache, rows, tokens):
        rows = torch.as_tensor(rows, dtype=torch.long)
        cache = [(k[rows], v[rows]) for k, v in cache]
        idx = torch.as_tensor(tokens, dtype=torch.long)[:, None]
        logits, cache = self.net.forward_cached(idx, cache)
        return cache, _softmax64(logits[:, -1])

    @torch.no_grad()
    def loss(self, sequences) -> float:
        inputs, targets = make_batch([list(s) for s in sequences])
        return float(sequence_loss(self.net, inputs, targets))


def _check_corpus(cfg, seqs):
    if not seqs:
        raise EmptyCorpus("transformer training needs at least one sequence")
    for s in seqs:
        if len(s) < 2:
            raise EmptyCorpus("every training sequence needs at least two tokens")
        if len(s) - 1 > cfg.t_max:
            raise SequenceTooLong(f"sequence of {len(s)} tokens exceeds t_max={cfg.t_max}")
        if min(s) < 0 or max(s) >= cfg.vocab_size:
            raise TokenOutOfVocab(f"token outside vocabulary of {cfg.vocab_size}")


def train_transformer(cfg: TransformerConfig, sequences, epochs: int, seed: int = 0,
                      end_token: int | None = None, log=None) -> tuple[TransformerModel, list[dict]]:
    """Minimize next-token cross-entropy under teacher forcing.

    Returns the model and a history whose first entry (epoch 0) is the loss
    before any update; later entries are the token-weighted mean training
    loss of each epoch. ``log`` is called with every history entry.
    """
    seqs = [[int(t) for t in s] for s in sequences]
    _check_corpus(cfg, seqs)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    net = DecoderOnlyTransformer(cfg)
    n_batches = math.ceil(len(seqs) / cfg.batch_size)
    total_steps = max(1, epochs * n_batches)
    if cfg.optimizer == "adamw":
        opt = torch.optim.AdamW(net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    else:
        opt = torch.optim.SGD(net.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)

    def lr_at(step):
        if cfg.warmup_steps and step < cfg.warmup_steps:
            return (step + 1) / cfg.warmup_steps
        if cfg.schedule == "cosine":
            frac = (step - cfg.warmup_steps) / max(1, total_steps - cfg.warmup_steps)
            return 0.1 + 0.9 * 0.5 * (1 + math.cos(math.pi * min(1.0, frac)))
        return 1.0

    sched = torch.optim.lr_scheduler.LambdaLR(opt, lr_at)
    history = []
    with torch.no_grad():
        net.eval()
        tot, count = 0.0, 0
        for start in range(0, len(seqs), cfg.batch_size):
            inputs, targets = make_batch(seqs[start:start + cfg.batch_size])
            n_tok = int((targets != IGNORE).sum())
            tot += float(sequence_loss(net, inputs, targets)) * n_tok
            count += n_tok
    entry = {"epoch": 0, "loss": tot / count, "tokens_per_sec": 0.0}
    history.append(entry)
    if log:
        log(entry)
    for epoch in range(1, epochs + 1):
        net.train()
        tic = time.perf_counter()
        tot, count = 0.0, 0
        perm = rng.permutation(len(seqs))
        for start in range(0, len(seqs), cfg.batch_size):
            inputs, targets = make_batch([seqs[i] for i in perm[start:start + cfg.batch_size]])
            loss = sequence_loss(net, inputs, targets)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(net.parameters(), 1.0)
            opt.step()
            sched.step()
            n_tok = int((targets != IGNORE).sum())
            tot += loss.item() * n_tok
            count += n_tok
        elapsed = time.perf_counter() - tic
        entry = {"epoch": epoch, "loss": tot / count, "tokens_per_sec": count / max(elapsed, 1e-9)}
        history.append(entry)
        if log:
            log(entry)
    return TransformerModel(net.eval(), end_token), history

"""Decoder-only transformer over event tables, in float64 torch."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..timedist import EPS_RATE
from .config import ModelConfig
from .tokens import PAD, Batch

torch.set_default_dtype(torch.float64)

_LOG_HALFNORM = 0.5 * math.log(2.0 / math.pi)


class ShapeMismatch(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


def _sinusoid(pos: torch.Tensor, d: int) -> torch.Tensor:
    i = torch.arange((d + 1) // 2, dtype=torch.float64)
    freq = torch.exp(-math.log(10000.0) * 2.0 * i / d)
    ang = pos[:, None].to(torch.float64) * freq[None, :]
    out = torch.zeros(len(pos), d)
    out[:, 0::2] = torch.sin(ang)
    out[:, 1::2] = torch.cos(ang[:, : d // 2])
    return out


def positional_encoding(length: int, cfg: ModelConfig) -> torch.Tensor:
    """Step-index sinusoid plus slot-within-step sinusoid, ``(length, d_model)``."""
    p = torch.arange(length)
    return _sinusoid(p // cfg.period, cfg.d_model) + _sinusoid(p % cfg.period, cfg.d_model)


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.ln1 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.ln2 = nn.LayerNorm(d)
        self.fc1 = nn.Linear(d, cfg.d_hidden)
        self.fc2 = nn.Linear(cfg.d_hidden, d)

    def forward(self, x: torch.Tensor, past: tuple | None = None, keep: list | None = None) -> torch.Tensor:
        """``past`` holds cached keys and values of earlier positions; the new
        key/value pair is appended to ``keep`` when given."""
        B, L, d = x.shape
        H = self.n_heads
        q, k, v = self.qkv(self.ln1(x)).split(d, dim=-1)
        q, k, v = (t.view(B, L, H, d // H).transpose(1, 2) for t in (q, k, v))
        if past is None:
            a = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        else:
            L0 = past[0].shape[2]
            k = torch.cat([past[0], k], dim=2)
            v = torch.cat([past[1], v], dim=2)
            allowed = torch.arange(L0 + L)[None, :] <= (L0 + torch.arange(L))[:, None]
            a = F.scaled_dot_product_attention(q, k, v, attn_mask=allowed)
        if keep is not None:
            keep.append((k, v))
        x = x + self.proj(a.transpose(1, 2).reshape(B, L, d))
        return x + self.fc2(F.gelu(self.fc1(self.ln2(x))))


@dataclass
class HeadOutputs:
    """Head outputs aligned with event steps: entry ``[b, k]`` is the
    prediction for step ``k`` of sequence ``b``."""

    time: torch.Tensor
    event: torch.Tensor
    cls: torch.Tensor | None


@dataclass
class LossParts:
    total: torch.Tensor
    event: torch.Tensor
    cls: torch.Tensor
    time: torch.Tensor
    n_steps: int

    def as_floats(self) -> dict:
        return {k: float(v.detach()) for k, v in
                (("total", self.total), ("event", self.event), ("class", self.cls), ("time", self.time))}


class SeqModel(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.bos = nn.Parameter(torch.zeros(d))
        if cfg.use_state_token:
            self.state_proj = nn.Linear(cfg.state_dim, d)
        if cfg.use_policy_token:
            self.policy_c = nn.Sequential(nn.Linear(1, d), nn.ReLU(), nn.Linear(d, d))
            self.policy_n = nn.Embedding(cfg.max_policy_n + 1, d)
        self.event_emb = nn.Embedding(cfg.n_event_types, d)
        if cfg.has_classes:
            self.class_emb = nn.Embedding(cfg.n_classes + 1, d)
        if cfg.time_head == "exponential":
            # Time2Vec: one linear feature and d - 1 periodic ones
            self.t2v_w = nn.Parameter(torch.zeros(d))
            self.t2v_b = nn.Parameter(torch.zeros(d))
        else:
            self.bin_emb = nn.Embedding(cfg.riemann_bins, d)
        if cfg.positional == "learned":
            self.pos_emb = nn.Embedding(cfg.max_seq_len, d)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.Identity() if cfg.toy_linear else nn.LayerNorm(d)
        self.event_head = nn.Linear(d, cfg.n_event_types)
        if cfg.has_classes:
            self.class_head = nn.Linear(d, cfg.n_classes)
        n_time = 1 if cfg.time_head == "exponential" else cfg.riemann_bins
        self.time_head = nn.Linear(d, n_time)
        self.register_buffer("pe", positional_encoding(cfg.max_seq_len, cfg), persistent=False)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int):
        g = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
        std = self.cfg.init_std
        for name, p in self.named_parameters():
            with torch.no_grad():
                if name.startswith("t2v_"):
                    # frequencies and phases on the unit scale, else sin(wt) ~ wt
                    p.copy_(torch.randn(p.shape, generator=g))
                elif name.endswith(".bias"):
                    p.zero_()
                elif ".ln" in name or name.startswith("ln_f"):
                    p.fill_(1.0)
                else:
                    p.copy_(torch.randn(p.shape, generator=g) * std)

    # ------------------------------------------------------------------
    def _time_features(self, dts: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if cfg.time_head == "exponential":
            z = dts[..., None] * self.t2v_w + self.t2v_b
            if cfg.toy_linear:
                return z
            return torch.cat([z[..., :1], torch.sin(z[..., 1:])], dim=-1)
        idx = torch.clamp(torch.floor(dts / cfg.riemann_width), max=cfg.riemann_bins - 1).long()
        return self.bin_emb(idx)

    def _prefix(self, batch: Batch) -> torch.Tensor:
        B = batch.size
        cfg = self.cfg
        if cfg.use_state_token:
            first = self.state_proj(batch.state)
        else:
            first = self.bos.expand(B, -1)
        toks = [first]
        if cfg.use_policy_token:
            n = torch.clamp(batch.policy_n, 0, cfg.max_policy_n)
            toks.append(self.policy_c(batch.policy_c[:, None]) + self.policy_n(n))
        return torch.stack(toks, dim=1)

    def stream(self, batch: Batch) -> torch.Tensor:
        """Input embeddings ``(B, n_prefix + period * n, d)``."""
        cfg = self.cfg
        B, n = batch.dts.shape
        parts = [self._time_features(batch.dts), self.event_emb(batch.events)]
        if cfg.has_classes:
            parts.append(self.class_emb(batch.classes))
        body = torch.stack(parts, dim=2).reshape(B, n * cfg.period, cfg.d_model)
        return torch.cat([self._prefix(batch), body], dim=1)

    def _positions(self, start: int, end: int) -> torch.Tensor:
        if end > self.cfg.max_seq_len:
            raise ShapeMismatch(f"sequence of {end} tokens exceeds max_seq_len {self.cfg.max_seq_len}")
        if self.cfg.positional == "learned":
            return self.pos_emb.weight[start:end]
        return self.pe[start:end]

    def hidden(self, batch: Batch, length: int | None = None) -> torch.Tensor:
        x = self.stream(batch)
        if length is not None:
            x = x[:, :length]
        x = x + self._positions(0, x.shape[1])
        for blk in self.blocks:
            x = blk(x)
        return self.ln_f(x)

    def hidden_step(self, batch: Batch, start: int, end: int, cache: list) -> torch.Tensor:
        """Hidden states of stream positions ``[start, end)`` given a cache of
        all earlier positions; ``cache`` (one entry per layer, empty at
        first) is updated in place."""
        x = self.stream(batch)[:, start:end] + self._positions(start, end)
        for i, blk in enumerate(self.blocks):
            keep: list = []
            x = blk(x, cache[i] if i < len(cache) else None, keep)
            if i < len(cache):
                cache[i] = keep[0]
            else:
                cache.append(keep[0])
        return self.ln_f(x)

    def forward(self, batch: Batch) -> HeadOutputs:
        cfg = self.cfg
        if batch.events.shape != batch.dts.shape or batch.classes.shape != batch.dts.shape:
            raise ShapeMismatch("dts, events and classes must share a shape")
        n = batch.n_events
        P, p = cfg.n_prefix, cfg.period
        h = self.hidden(batch)
        t_pos = P - 1 + p * torch.arange(n)
        out_t = self.time_head(h[:, t_pos])
        out_e = self.event_head(h[:, t_pos + 1])
        out_c = self.class_head(h[:, t_pos + 2]) if cfg.has_classes else None
        if cfg.time_head == "exponential":
            out_t = out_t[..., 0]
        return HeadOutputs(out_t, out_e, out_c)

    # ------------------------------------------------------------------
    def rate(self, raw: torch.Tensor) -> torch.Tensor:
        return F.softplus(raw) + EPS_RATE

    def time_nll(self, raw: torch.Tensor, dts: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if cfg.time_head == "exponential":
            r = self.rate(raw)
            return -torch.log(r) + r * dts
        logp = F.log_softmax(raw, dim=-1)
        n, w = cfg.riemann_bins, cfg.riemann_width
        k = torch.clamp(torch.floor(dts / w), max=n - 1).long()
        lp = torch.gather(logp, -1, k[..., None])[..., 0]
        s = cfg.tail_scale or w
        x = dts - (n - 1) * w
        tail = _LOG_HALFNORM - math.log(s) - 0.5 * (x / s) ** 2
        return -(lp + torch.where(k == n - 1, tail, torch.full_like(lp, -math.log(w))))

    def loss(self, batch: Batch) -> LossParts:
        out = self(batch)
        m = batch.mask
        count = int(m.sum())
        denom = max(count, 1)
        cfg = self.cfg
        et = batch.event_targets
        ct = batch.class_targets
        if cfg.toy_linear:
            onehot = F.one_hot(torch.clamp(et, min=0), cfg.n_event_types).to(out.event.dtype)
            ev = (((out.event - onehot) ** 2).sum(-1) * m).sum() / denom
            tm = (((out.time - batch.dts) ** 2) * m).sum() / denom
            if cfg.has_classes:
                cm = ct != PAD
                oh = F.one_hot(torch.clamp(ct, min=0), cfg.n_classes).to(out.cls.dtype)
                cl = (((out.cls - oh) ** 2).sum(-1) * cm).sum() / denom
            else:
                cl = tm.new_zeros(())
        else:
            ev = F.cross_entropy(out.event.reshape(-1, cfg.n_event_types), et.reshape(-1),
                                 ignore_index=PAD, reduction="sum") / denom
            if cfg.has_classes:
                cl = F.cross_entropy(out.cls.reshape(-1, cfg.n_classes), ct.reshape(-1),
                                     ignore_index=PAD, reduction="sum") / denom
            else:
                cl = ev.new_zeros(())
            tm = (self.time_nll(out.time, batch.dts) * m).sum() / denom
        return LossParts(ev + cl + tm, ev, cl, tm, count)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def grad(model: SeqModel, batch: Batch) -> dict[str, torch.Tensor]:
    """Reverse-mode gradient of the batch loss for every named parameter."""
    model.zero_grad(set_to_none=False)
    model.loss(batch).total.backward()
    out = {}
    for name, p in model.named_parameters():
        g = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(name)
        out[name] = g
    return out


def grad_check(model: SeqModel, batch: Batch, n_coords: int = 200, h: float = 1e-4, seed: int = 0) -> float:
    """Relative disagreement between the autograd gradient and central finite
    differences on ``n_coords`` random coordinates.

    The error is ``max_i |fd_i - ad_i| / max_i max(|fd_i|, |ad_i|)``, i.e.
    relative to the largest sampled gradient component. A per-coordinate
    ratio would be dominated by the finite-difference round-off
    (``eps * |loss| / h``, about 1e-12) on coordinates whose gradient is
    nearly zero.
    """
    g = grad(model, batch)
    names = [n for n, _ in model.named_parameters()]
    params = dict(model.named_parameters())
    sizes = np.array([params[n].numel() for n in names])
    rng = np.random.default_rng(seed)
    flat = rng.choice(int(sizes.sum()), size=min(n_coords, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    err, scale = 0.0, 0.0
    with torch.no_grad():
        for f in sorted(flat):
            k = int(np.searchsorted(offsets, f, side="right") - 1)
            name = names[k]
            p = params[name].view(-1)
            i = int(f - offsets[k])
            old = float(p[i])
            p[i] = old + h
            up = float(model.loss(batch).total)
            p[i] = old - h
            down = float(model.loss(batch).total)
            p[i] = old
            fd = (up - down) / (2 * h)
            ad = float(g[name].view(-1)[i])
            err = max(err, abs(fd - ad))
            scale = max(scale, abs(fd), abs(ad))
    return err / scale if scale > 0 else err


def toy_linear_config(n_event_types: int = 2, n_classes: int = 1, d_model: int = 8) -> ModelConfig:
    return ModelConfig(n_event_types=n_event_types, n_classes=n_classes, d_model=d_model,
                       d_hidden=d_model, n_heads=1, n_layers=0, toy_linear=True, max_events=64)

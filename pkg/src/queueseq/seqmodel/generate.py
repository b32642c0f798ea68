"""Autoregressive simulation with a trained model.

Each step draws the inter-event time, then the event given the time, then
the class given both, so the sampling order matches the factorization the
heads were trained on. A history prefix, if given, is fed in verbatim
before sampling starts.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import ndtri

from ..events import EventRecord, EventSchema, SystemState, Trajectory
from ..rng import Stream, child_seed
from .model import SeqModel
from .tokens import Batch, CapacityExceeded


def _pick(probs: np.ndarray, rs: Stream, temperature: float) -> int:
    if temperature == 0:
        return int(np.argmax(probs))
    return rs.choice(probs.tolist())


@torch.no_grad()
def generate_many(model: SeqModel, inits: Sequence[SystemState], n_events: int, seeds: Sequence[int],
                  histories: Sequence[Sequence[EventRecord]] | None = None,
                  policies: Sequence[tuple[float, int] | None] | None = None,
                  schema: EventSchema | None = None, temperature: float = 1.0) -> list[Trajectory]:
    """Generate one trajectory per entry of ``inits`` in a single batch.

    Every trajectory draws from its own stream. Batched matrix products can
    round differently for different batch sizes, so byte-identical output
    needs the same batch size as well as the same seeds. With ``temperature=0`` the
    most likely event and class are taken and times are set to the
    predicted mean (exponential head) or the centre of the most likely bin.
    """
    cfg = model.cfg
    model.eval()
    B = len(inits)
    if n_events < 1:
        raise ValueError("n_events must be >= 1")
    histories = histories or [()] * B
    policies = policies or [None] * B
    h_len = [len(h) for h in histories]
    n_tot = max(h_len) + n_events
    if n_tot > cfg.max_events:
        raise CapacityExceeded(f"{n_tot} events exceed the model capacity of {cfg.max_events}")
    if len(set(h_len)) > 1:
        # unequal prefixes: fall back to one batch per history length
        out: list[Trajectory | None] = [None] * B
        for L in sorted(set(h_len)):
            idx = [i for i in range(B) if h_len[i] == L]
            sub = generate_many(model, [inits[i] for i in idx], n_events, [seeds[i] for i in idx],
                                [histories[i] for i in idx], [policies[i] for i in idx], schema, temperature)
            for i, t in zip(idx, sub):
                out[i] = t
        return out  # type: ignore[return-value]

    H = h_len[0]
    K = cfg.n_classes
    dts = torch.zeros(B, n_tot)
    ev = torch.zeros(B, n_tot, dtype=torch.int64)
    cl = torch.full((B, n_tot), K, dtype=torch.int64)
    for b, hist in enumerate(histories):
        for k, r in enumerate(hist):
            dts[b, k] = r.dt
            ev[b, k] = r.event
            cl[b, k] = K if r.cls is None else r.cls
    state = policy_c = policy_n = None
    if cfg.use_state_token:
        state = torch.tensor(np.stack([s.encode(cfg.max_queue) for s in inits]))
    if cfg.use_policy_token:
        if any(p is None for p in policies):
            raise ValueError("policy-conditioned model needs a policy for every trajectory")
        policy_c = torch.tensor([float(p[0]) for p in policies])
        policy_n = torch.tensor([int(p[1]) for p in policies], dtype=torch.int64)
    batch = Batch(dts, ev, cl, ev, cl, torch.ones(B, n_tot, dtype=torch.bool), state, policy_c, policy_n)
    streams = [Stream(s) for s in seeds]
    P, p = cfg.n_prefix, cfg.period
    bearing = schema.class_bearing if schema is not None else None

    cache: list = []
    pos = 0

    def advance(end: int) -> torch.Tensor:
        nonlocal pos
        h = model.hidden_step(batch, pos, end, cache)[:, -1]
        pos = end
        return h

    for k in range(H, n_tot):
        base = P + p * k
        # time from everything before step k
        h = advance(base)
        raw = model.time_head(h)
        if cfg.time_head == "exponential":
            rate = model.rate(raw[:, 0]).tolist()
            for b in range(B):
                dts[b, k] = 1.0 / rate[b] if temperature == 0 else -math.log1p(-streams[b].uniform()) / rate[b]
        else:
            probs = F.softmax(raw, dim=-1).numpy()
            w, n = cfg.riemann_width, cfg.riemann_bins
            s = cfg.tail_scale or w
            for b in range(B):
                j = _pick(probs[b], streams[b], temperature)
                if j < n - 1:
                    dts[b, k] = (j + (0.5 if temperature == 0 else streams[b].uniform())) * w
                else:
                    u = 0.5 if temperature == 0 else streams[b].uniform()
                    dts[b, k] = (n - 1) * w + s * float(ndtri(0.5 * (1.0 + u)))
        # event given the time
        h = advance(base + 1)
        probs = F.softmax(model.event_head(h), dim=-1).numpy()
        for b in range(B):
            ev[b, k] = _pick(probs[b], streams[b], temperature)
        if cfg.has_classes:
            h = advance(base + 2)
            probs = F.softmax(model.class_head(h), dim=-1).numpy()
            for b in range(B):
                e = int(ev[b, k])
                if bearing is not None and not bearing[e]:
                    cl[b, k] = K
                else:
                    cl[b, k] = _pick(probs[b], streams[b], temperature)

    out = []
    for b in range(B):
        recs = [
            EventRecord(float(dts[b, k]), int(ev[b, k]), None if int(cl[b, k]) == K else int(cl[b, k]))
            for k in range(n_tot)
        ]
        meta = {"generator": "seqmodel", "seed": int(seeds[b]), "history_length": H}
        if policies[b] is not None:
            meta["policy"] = {"c": float(policies[b][0]), "N": int(policies[b][1])}
        out.append(Trajectory(inits[b].copy(), recs, meta))
    return out


def generate(model: SeqModel, init: SystemState, n_events: int, seed: int,
             history: Sequence[EventRecord] | None = None, policy: tuple[float, int] | None = None,
             schema: EventSchema | None = None, temperature: float = 1.0) -> Trajectory:
    """One trajectory: plain simulation without ``history``, continuation of
    the given prefix with it."""
    return generate_many(model, [init], n_events, [seed], [history or ()], [policy], schema, temperature)[0]


def generate_batch(model: SeqModel, init: SystemState, K: int, n_events: int, seed: int,
                   history: Sequence[EventRecord] | None = None, policy: tuple[float, int] | None = None,
                   schema: EventSchema | None = None, temperature: float = 1.0,
                   batch_size: int = 100) -> list[Trajectory]:
    """``K`` trajectories sharing a start (and prefix, and policy); trajectory
    ``i`` uses child seed ``i`` of ``seed``."""
    out = []
    for s in range(0, K, batch_size):
        m = min(K, s + batch_size) - s
        seeds = [child_seed(seed, i) for i in range(s, s + m)]
        out.extend(generate_many(model, [init] * m, n_events, seeds, [history or ()] * m, [policy] * m,
                                 schema, temperature))
    return out

"""Event tables as token streams.

A sequence is one prefix token (the initial-state token, or BOS when the
model is not state-conditioned), an optional policy token, then for every
event the tokens ``time, event, class`` (``time, event`` for single-class
systems). Targets are attached to the position *before* the token they
describe, so the time of step n is predicted from everything up to step
n - 1, the event from that plus the time, and the class from both.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from ..events import EventRecord, EventSchema, SystemState, Trajectory
from .config import ModelConfig

PAD = -100


class CapacityExceeded(ValueError):
    pass


@dataclass
class TokenSequence:
    dts: np.ndarray
    events: np.ndarray
    # class id, or n_classes for events that carry none
    classes: np.ndarray
    class_targets: np.ndarray
    state: np.ndarray | None
    policy: tuple[float, int] | None
    initial_state: SystemState

    def __len__(self) -> int:
        return len(self.dts)

    def n_tokens(self, cfg: ModelConfig) -> int:
        return cfg.n_prefix + cfg.period * len(self)


def encode_trajectory(traj: Trajectory, schema: EventSchema, cfg: ModelConfig,
                      policy: tuple[float, int] | None = None) -> TokenSequence:
    n = len(traj.records)
    if n > cfg.max_events:
        raise CapacityExceeded(f"{n} events exceed the model capacity of {cfg.max_events}")
    K = cfg.n_classes
    events = np.array([r.event for r in traj.records], dtype=np.int64)
    if np.any(events < 0) or np.any(events >= cfg.n_event_types):
        raise ValueError("event id outside the model vocabulary")
    classes = np.array([K if r.cls is None else r.cls for r in traj.records], dtype=np.int64)
    ctarget = np.where(classes == K, PAD, classes)
    state = traj.initial_state.encode(cfg.max_queue) if cfg.use_state_token else None
    if cfg.use_policy_token and policy is None:
        p = traj.meta.get("policy")
        if p is None:
            raise ValueError("policy-conditioned model needs a policy for every trajectory")
        policy = (float(p["c"]), int(p["N"]))
    return TokenSequence(
        traj.dts.astype(float), events, classes, ctarget, state,
        policy if cfg.use_policy_token else None, traj.initial_state.copy(),
    )


def decode(seq: TokenSequence, cfg: ModelConfig, meta: dict | None = None) -> Trajectory:
    K = cfg.n_classes
    recs = [
        EventRecord(float(t), int(e), None if c == K else int(c))
        for t, e, c in zip(seq.dts, seq.events, seq.classes)
    ]
    m = dict(meta or {})
    if seq.policy is not None:
        m.setdefault("policy", {"c": seq.policy[0], "N": seq.policy[1]})
    return Trajectory(seq.initial_state.copy(), recs, m)


@dataclass
class Batch:
    """Padded tensors for ``B`` sequences of up to ``n`` events."""

    dts: torch.Tensor
    events: torch.Tensor
    classes: torch.Tensor
    event_targets: torch.Tensor
    class_targets: torch.Tensor
    mask: torch.Tensor
    state: torch.Tensor | None
    policy_c: torch.Tensor | None
    policy_n: torch.Tensor | None

    @property
    def size(self) -> int:
        return self.dts.shape[0]

    @property
    def n_events(self) -> int:
        return self.dts.shape[1]


def collate(seqs: Sequence[TokenSequence], cfg: ModelConfig, n: int | None = None) -> Batch:
    B = len(seqs)
    n = max(len(s) for s in seqs) if n is None else n
    dts = np.zeros((B, n))
    ev = np.zeros((B, n), dtype=np.int64)
    cl = np.full((B, n), cfg.n_classes, dtype=np.int64)
    et = np.full((B, n), PAD, dtype=np.int64)
    ct = np.full((B, n), PAD, dtype=np.int64)
    mask = np.zeros((B, n), dtype=bool)
    for b, s in enumerate(seqs):
        m = len(s)
        dts[b, :m] = s.dts
        ev[b, :m] = s.events
        cl[b, :m] = s.classes
        et[b, :m] = s.events
        ct[b, :m] = s.class_targets
        mask[b, :m] = True
    state = policy_c = policy_n = None
    if cfg.use_state_token:
        state = torch.tensor(np.stack([s.state for s in seqs]))
    if cfg.use_policy_token:
        policy_c = torch.tensor([s.policy[0] for s in seqs], dtype=torch.float64)
        policy_n = torch.tensor([s.policy[1] for s in seqs], dtype=torch.int64)
    return Batch(
        torch.tensor(dts), torch.tensor(ev), torch.tensor(cl), torch.tensor(et),
        torch.tensor(ct), torch.tensor(mask), state, policy_c, policy_n,
    )

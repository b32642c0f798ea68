from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from ..rng import child_seed
from .config import ModelConfig, TrainConfig
from .model import SeqModel
from .tokens import TokenSequence, collate

log = logging.getLogger(__name__)


class DivergenceDetected(FloatingPointError):
    def __init__(self, msg: str, last_good: dict | None = None):
        super().__init__(msg)
        self.last_good = last_good


def lr_at(u: float, total: float, cfg: TrainConfig) -> float:
    """Learning rate after ``u`` schedule units out of ``total``."""
    if cfg.warmup > 0 and u < cfg.warmup:
        return cfg.lr_start + (cfg.lr - cfg.lr_start) * u / cfg.warmup
    span = max(total - cfg.warmup, 1)
    frac = min(max((u - cfg.warmup) / span, 0.0), 1.0)
    return cfg.lr_end + 0.5 * (cfg.lr - cfg.lr_end) * (1.0 + math.cos(math.pi * frac))


@dataclass
class TrainState:
    model: SeqModel
    optimizer: torch.optim.Optimizer
    epoch: int = 0
    step: int = 0
    history: list[dict] = field(default_factory=list)


def make_state(mcfg: ModelConfig, tcfg: TrainConfig) -> TrainState:
    model = SeqModel(mcfg, seed=child_seed(tcfg.seed, 0))
    opt = torch.optim.AdamW(model.parameters(), lr=tcfg.lr, betas=tcfg.betas, eps=tcfg.eps,
                            weight_decay=tcfg.weight_decay)
    return TrainState(model, opt)


def _snapshot(state: TrainState) -> dict:
    return {
        "model": {k: v.detach().clone() for k, v in state.model.state_dict().items()},
        "epoch": state.epoch,
        "step": state.step,
    }


@torch.no_grad()
def evaluate_loss(model: SeqModel, seqs: Sequence[TokenSequence], batch_size: int = 64) -> dict:
    tot = {"total": 0.0, "event": 0.0, "class": 0.0, "time": 0.0}
    n = 0
    for i in range(0, len(seqs), batch_size):
        lp = model.loss(collate(seqs[i:i + batch_size], model.cfg))
        for k, v in lp.as_floats().items():
            tot[k] += v * lp.n_steps
        n += lp.n_steps
    return {k: v / max(n, 1) for k, v in tot.items()}


def train(seqs: Sequence[TokenSequence], mcfg: ModelConfig, tcfg: TrainConfig,
          val_seqs: Sequence[TokenSequence] | None = None, state: TrainState | None = None,
          on_epoch: Callable[[TrainState], None] | None = None) -> TrainState:
    """Minimize the summed event, class and time losses with AdamW.

    Shuffling uses a child seed per epoch, so a run resumed from a saved
    ``TrainState`` continues exactly as the uninterrupted run would.
    """
    if not seqs:
        raise ValueError("empty training set")
    torch.set_num_threads(tcfg.threads)
    if state is None:
        state = make_state(mcfg, tcfg)
    model, opt = state.model, state.optimizer
    K = len(seqs)
    bs = tcfg.batch_size
    per_epoch = math.ceil(K / bs)
    total = tcfg.epochs if tcfg.schedule_unit == "epoch" else tcfg.epochs * per_epoch
    t0 = time.monotonic()
    last_good = _snapshot(state)
    while state.epoch < tcfg.epochs:
        perm = np.random.Generator(np.random.Philox(child_seed(tcfg.seed, 1 + state.epoch))).permutation(K)
        model.train()
        run, run_n = 0.0, 0
        for b in range(per_epoch):
            u = state.epoch if tcfg.schedule_unit == "epoch" else state.step
            lr = lr_at(u, total, tcfg)
            for g in opt.param_groups:
                g["lr"] = lr
            batch = collate([seqs[i] for i in perm[b * bs:(b + 1) * bs]], mcfg)
            lp = model.loss(batch)
            if not torch.isfinite(lp.total):
                raise DivergenceDetected(f"non-finite loss at epoch {state.epoch} step {state.step}", last_good)
            opt.zero_grad(set_to_none=True)
            lp.total.backward()
            if tcfg.clip_norm:
                torch.nn.utils.clip_grad_norm_(model.parameters(), tcfg.clip_norm)
            opt.step()
            state.step += 1
            run += float(lp.total.detach()) * lp.n_steps
            run_n += lp.n_steps
        state.epoch += 1
        rec = {"epoch": state.epoch, "step": state.step, "lr": lr, "train_loss": run / max(run_n, 1)}
        if val_seqs:
            model.eval()
            v = evaluate_loss(model, val_seqs)
            rec.update({f"val_{k}": x for k, x in v.items()})
        elapsed = time.monotonic() - t0
        state.history.append(rec)
        log.info("epoch %d (%.0f s) %s", state.epoch, elapsed,
                 {k: round(x, 5) for k, x in rec.items() if k != "epoch"})
        last_good = _snapshot(state)
        if on_epoch is not None:
            on_epoch(state)
        if tcfg.time_budget is not None and elapsed > tcfg.time_budget:
            log.warning("time budget of %.0f s reached after epoch %d", tcfg.time_budget, state.epoch)
            break
    return state


_FIRST_COLUMNS = ("epoch", "step", "lr", "train_loss")


def history_csv(history: Sequence[dict]) -> str:
    seen = {k for rec in history for k in rec}
    keys = [k for k in _FIRST_COLUMNS if k in seen] + sorted(seen - set(_FIRST_COLUMNS))
    lines = [",".join(keys)]
    for rec in history:
        lines.append(",".join("" if k not in rec else f"{rec[k]:.10g}" for k in keys))
    return "\n".join(lines) + "\n"

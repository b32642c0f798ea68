"""Metrics for comparing models, simulators and oracles."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.stats import wasserstein_distance

from .events import EventSchema, Trajectory, first_violation
from .oracle import StepTerms, mean_terms
from .queuesim import NETWORK_EVENTS
from .seqmodel.model import SeqModel
from .seqmodel.tokens import PAD, collate, encode_trajectory

KL_BINS = 50
KL_ALPHA = 1.0
MIN_SAMPLES = 100


class TooFewSamples(ValueError):
    pass


@dataclass
class LossReport:
    event_loss: float
    time_loss: float
    class_loss: float
    n_steps: int
    event_se: float
    time_se: float
    class_se: float
    # time negative log-likelihood, reported alongside the squared metric
    time_nll: float
    time_nll_se: float

    def to_dict(self) -> dict:
        return asdict(self)


class ModelPredictor:
    """Teacher-forced per-step terms from a trained ``SeqModel``."""

    def __init__(self, model: SeqModel, schema: EventSchema, batch_size: int = 64):
        self.model = model
        self.schema = schema
        self.batch_size = batch_size

    @torch.no_grad()
    def step_terms_many(self, trajs: Sequence[Trajectory]) -> list[StepTerms]:
        m = self.model
        cfg = m.cfg
        m.eval()
        out = []
        for s in range(0, len(trajs), self.batch_size):
            chunk = trajs[s:s + self.batch_size]
            batch = collate([encode_trajectory(t, self.schema, cfg) for t in chunk], cfg)
            heads = m(batch)
            ev = -torch.gather(F.log_softmax(heads.event, -1), -1,
                               torch.clamp(batch.event_targets, min=0)[..., None])[..., 0]
            if cfg.has_classes:
                ct = batch.class_targets
                cl = -torch.gather(F.log_softmax(heads.cls, -1), -1, torch.clamp(ct, min=0)[..., None])[..., 0]
                cl = torch.where(ct == PAD, torch.zeros_like(cl), cl)
            else:
                cl = torch.zeros_like(ev)
            nll = m.time_nll(heads.time, batch.dts)
            if cfg.time_head == "exponential":
                mean = 1.0 / m.rate(heads.time)
            else:
                p = F.softmax(heads.time, -1)
                w, n = cfg.riemann_width, cfg.riemann_bins
                s_tail = cfg.tail_scale or w
                mids = (torch.arange(n, dtype=torch.float64) + 0.5) * w
                mids[-1] = (n - 1) * w + s_tail * math.sqrt(2.0 / math.pi)
                mean = p @ mids
            for b, t in enumerate(chunk):
                k = len(t.records)
                out.append(StepTerms(ev[b, :k].numpy().copy(), cl[b, :k].numpy().copy(),
                                     mean[b, :k].numpy().copy(), nll[b, :k].numpy().copy(), t.dts))
        return out


def _se(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else float("nan")


def model_losses(predictor, test_set: Sequence[Trajectory], schema: EventSchema | None = None) -> LossReport:
    """Average teacher-forced losses over all steps of ``test_set``.

    ``predictor`` is a ``SeqModel`` (wrapped with ``schema``) or any object
    with ``step_terms_many(trajs)``, such as the exact oracle.
    """
    if isinstance(predictor, SeqModel):
        if schema is None:
            raise ValueError("a schema is needed to tokenize trajectories for a model")
        predictor = ModelPredictor(predictor, schema)
    arr = mean_terms(predictor.step_terms_many(test_set))
    return LossReport(
        float(arr["event"].mean()), float(arr["time"].mean()), float(arr["class"].mean()),
        len(arr["event"]), _se(arr["event"]), _se(arr["time"]), _se(arr["class"]),
        float(arr["time_nll"].mean()), _se(arr["time_nll"]),
    )


def _check(x: np.ndarray, name: str):
    if len(x) < MIN_SAMPLES:
        raise TooFewSamples(f"{name} has {len(x)} samples, need at least {MIN_SAMPLES}")


def kl_binned(samples_p, samples_q, bins: int = KL_BINS, alpha: float = KL_ALPHA) -> float:
    """KL(p || q) between histograms on shared equal-width bins.

    Bins span the pooled range of both samples; every bin gets ``alpha``
    pseudo-counts before normalizing.
    """
    p = np.asarray(samples_p, dtype=float)
    q = np.asarray(samples_q, dtype=float)
    _check(p, "samples_p")
    _check(q, "samples_q")
    lo = min(p.min(), q.min())
    hi = max(p.max(), q.max())
    if hi <= lo:
        return 0.0
    edges = np.linspace(lo, hi, bins + 1)
    cp = np.histogram(p, edges)[0] + alpha
    cq = np.histogram(q, edges)[0] + alpha
    pp = cp / cp.sum()
    qq = cq / cq.sum()
    return float(max(np.sum(pp * np.log(pp / qq)), 0.0))


def wasserstein1(samples_a, samples_b) -> float:
    a = np.sort(np.asarray(samples_a, dtype=float))
    b = np.sort(np.asarray(samples_b, dtype=float))
    if len(a) == len(b):
        return float(np.mean(np.abs(a - b)))
    # integral of |F_a - F_b|, equal to the quantile-function integral
    return float(wasserstein_distance(a, b))


def valid_fraction(trajs: Sequence[Trajectory], schema: EventSchema) -> float:
    if not trajs:
        return float("nan")
    return sum(first_violation(t, schema) is None for t in trajs) / len(trajs)


def classify_network(traj: Trajectory | Iterable[int]) -> int | None:
    """The three-node topology (1..4) whose permitted events cover every
    observed event, or ``None`` when zero or several topologies qualify."""
    seen = {r.event for r in traj.records} if isinstance(traj, Trajectory) else set(traj)
    fits = [k for k, allowed in NETWORK_EVENTS.items() if seen <= allowed]
    return fits[0] if len(fits) == 1 else None


def positive(samples) -> np.ndarray:
    """Drop zeros, for positive-waiting-time comparisons."""
    x = np.asarray(samples, dtype=float)
    return x[x > 0]


def uq_compare(model_f_samples, bootstrap_f_samples, bins: int = KL_BINS) -> dict:
    """KL (model relative to bootstrap) and W1 between two metric samples."""
    a = np.asarray(model_f_samples, dtype=float)
    b = np.asarray(bootstrap_f_samples, dtype=float)
    a = a[np.isfinite(a)]
    b = b[np.isfinite(b)]
    return {
        "kl": kl_binned(a, b, bins),
        "w1": wasserstein1(a, b),
        "bins": bins,
        "alpha": KL_ALPHA,
        "n_model": int(len(a)),
        "n_bootstrap": int(len(b)),
    }


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def write_columns(path, columns: dict[str, Sequence]):
    """CSV with one column per key; shorter columns are padded with blanks."""
    names = list(columns)
    n = max((len(v) for v in columns.values()), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([_cell(columns[k][i]) if i < len(columns[k]) else "" for k in names])


def _cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)

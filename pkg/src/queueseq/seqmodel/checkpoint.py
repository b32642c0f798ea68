"""Checkpoint container.

Layout: the 4-byte magic ``QSCK``, a little-endian uint64 header length,
a UTF-8 JSON header, then every tensor as raw little-endian float64 in
header order. The header carries the format version, both configs, the
training position and loss history, and each tensor's name, shape and
byte offset.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .model import SeqModel
from .train import TrainState

MAGIC = b"QSCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _optimizer_tensors(state: TrainState) -> dict[str, torch.Tensor]:
    out = {}
    names = {id(p): n for n, p in state.model.named_parameters()}
    for p, st in state.optimizer.state.items():
        for k in ("exp_avg", "exp_avg_sq"):
            if k in st:
                out[f"optim/{names[id(p)]}/{k}"] = st[k]
    return out


def save(path, state: TrainState, tcfg: TrainConfig | None = None, extra: dict | None = None):
    """Write ``state``; ``extra`` is free-form JSON metadata (e.g. the data schema)."""
    tensors = {f"param/{k}": v for k, v in state.model.state_dict().items()}
    tensors.update(_optimizer_tensors(state))
    steps = {n: int(state.optimizer.state[p]["step"]) for n, p in state.model.named_parameters()
             if p in state.optimizer.state}
    entries, blobs, off = [], [], 0
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy().astype("<f8", copy=False)
        entries.append({"name": name, "shape": list(arr.shape), "offset": off})
        b = arr.tobytes(order="C")
        blobs.append(b)
        off += len(b)
    header = {
        "format": "queueseq-checkpoint",
        "version": VERSION,
        "model_config": state.model.cfg.to_dict(),
        "train_config": tcfg.to_dict() if tcfg is not None else None,
        "epoch": state.epoch,
        "step": state.step,
        "optimizer_steps": steps,
        "history": state.history,
        "tensors": entries,
        "extra": extra or {},
    }
    h = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(h)))
        fh.write(h)
        for b in blobs:
            fh.write(b)


def read_raw(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hl,) = struct.unpack("<Q", data[4:12])
    header = json.loads(data[12:12 + hl])
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    base = 12 + hl
    arrays = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        arrays[e["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=start).reshape(e["shape"])
    return header, arrays


def load(path, with_optimizer: bool = True) -> tuple[TrainState, TrainConfig | None, dict]:
    header, arrays = read_raw(path)
    mcfg = ModelConfig.from_dict(header["model_config"])
    tcfg = TrainConfig.from_dict(header["train_config"]) if header["train_config"] else None
    model = SeqModel(mcfg)
    sd = {k[len("param/"):]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith("param/")}
    model.load_state_dict(sd)
    t = tcfg or TrainConfig()
    opt = torch.optim.AdamW(model.parameters(), lr=t.lr, betas=t.betas, eps=t.eps, weight_decay=t.weight_decay)
    if with_optimizer:
        for n, p in model.named_parameters():
            if n in header["optimizer_steps"]:
                opt.state[p] = {
                    "step": torch.tensor(float(header["optimizer_steps"][n])),
                    "exp_avg": torch.from_numpy(arrays[f"optim/{n}/exp_avg"].copy()),
                    "exp_avg_sq": torch.from_numpy(arrays[f"optim/{n}/exp_avg_sq"].copy()),
                }
    state = TrainState(model, opt, header["epoch"], header["step"], header["history"])
    return state, tcfg, header.get("extra", {})

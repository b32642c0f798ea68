"""``queueseq`` command line: simulate, train, generate, evaluate, uq, counterfactual.

Every command reads a JSON config (``--config``), writes into ``--out``,
and drops ``resolved_config.json`` (defaults filled in, seed included) next
to its outputs. Exit codes: 0 success, 2 configuration error, 3 numeric
divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import functools
import json
import logging
import multiprocessing as mp
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .events import (
    EventSchema,
    SystemState,
    Trajectory,
    customer_metrics,
    hourly_average,
    mmn_schema,
    read_jsonl_pairs,
    write_jsonl,
)
from .evaluation import model_losses, positive, uq_compare, valid_fraction, write_columns, write_json
from .oracle import (
    GridPosterior,
    MmnOracle,
    bayesian_bootstrap,
    mm1_optimal_losses,
    performance_metric,
    posterior_update,
)
from .queuesim import (
    COUNTERFACTUAL_PROFILE,
    CallCenterConfig,
    Dist,
    MmnConfig,
    MtMnConfig,
    PolicyParams,
    PriorConfig,
    ThreeNodeConfig,
    counterfactual_config,
    simulate_callcenter,
    simulate_counterfactual,
    simulate_gg1,
    simulate_mmn,
    simulate_mt_mn,
    simulate_threenode,
    threenode_schema,
)
from .rng import Stream, child_seed
from .seqmodel import checkpoint
from .seqmodel.config import ConfigError, ModelConfig, TrainConfig
from .seqmodel.generate import generate_many
from .seqmodel.tokens import encode_trajectory
from .seqmodel.train import DivergenceDetected, history_csv, train

log = logging.getLogger("queueseq")

CONFIG_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


# --------------------------------------------------------------------------
# config helpers


def _keys(d: dict, allowed: set[str], where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where} is missing {key!r}")
    return d[key]


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    v = cfg.get("version", CONFIG_VERSION)
    if v != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {v}")
    return cfg


def _write_resolved(out: Path, command: str, cfg: dict, seed: int):
    resolved = dict(cfg)
    resolved.update(version=CONFIG_VERSION, command=command, seed=seed, queueseq_version=__version__)
    write_json(out / "resolved_config.json", resolved)


def parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    """Ordered map; the result does not depend on ``jobs``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(jobs, mp_context=mp.get_context("fork")) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


# --------------------------------------------------------------------------
# systems

SYSTEM_KEYS = {
    "mm1": {"kind", "lambda", "nu", "prior"},
    "mmn": {"kind", "lambdas", "nus", "n_servers", "priority"},
    "gg1": {"kind", "interarrival", "service"},
    "mt_mn": {"kind", "hourly_rates", "nu", "n_servers", "hour_len"},
    "counterfactual": {"kind", "c", "N", "c_ranges", "N_values", "hourly_rates", "nu", "hour_len"},
    "callcenter": {"kind"} | {f.name for f in fields(CallCenterConfig)} - {"vru_service", "agent_service"},
    "threenode": {"kind", "network_id", "network_ids", "arrival_rates", "service_rates"},
}


def _simulate_one(system: dict, n_events: int, seed: int) -> Trajectory:
    """Trajectory for child ``seed``: parameters drawn from child 0, the
    simulation driven by child 1."""
    kind = system["kind"]
    draw = Stream(child_seed(seed, 0))
    sim_seed = child_seed(seed, 1)
    if kind == "mm1":
        if "prior" in system:
            prior = PriorConfig(**system["prior"])
            th = prior.sample(draw)
            t = simulate_mmn(MmnConfig([th["lambda"]], [th["nu"]]), n_events, sim_seed)
        else:
            t = simulate_mmn(MmnConfig([system["lambda"]], [system["nu"]]), n_events, sim_seed)
        return t
    if kind == "mmn":
        cfg = MmnConfig(system["lambdas"], system["nus"], system.get("n_servers", 1), system.get("priority"))
        return simulate_mmn(cfg, n_events, sim_seed)
    if kind == "gg1":
        return simulate_gg1(Dist.from_dict(system["interarrival"]), Dist.from_dict(system["service"]),
                            n_events, sim_seed)
    if kind == "mt_mn":
        cfg = MtMnConfig(system["hourly_rates"], system["nu"], system["n_servers"], system.get("hour_len", 1.0))
        return simulate_mt_mn(cfg, n_events, sim_seed)
    if kind == "counterfactual":
        if "c_ranges" in system:
            ranges = system["c_ranges"]
            widths = [hi - lo for lo, hi in ranges]
            k = draw.choice(widths)
            c = draw.uniform_range(*ranges[k])
        else:
            c = float(system["c"])
        if "N_values" in system:
            vals = system["N_values"]
            N = int(vals[draw.integer(len(vals))])
        else:
            N = int(system["N"])
        return simulate_counterfactual(PolicyParams(c, N), n_events, sim_seed, _cf_base(system, N))
    if kind == "callcenter":
        return simulate_callcenter(_callcenter_cfg(system), n_events, sim_seed)
    if kind == "threenode":
        ids = system.get("network_ids", [system.get("network_id", 1)])
        nid = int(ids[draw.integer(len(ids))])
        tc = ThreeNodeConfig(
            tuple(system["arrival_rates"]) if "arrival_rates" in system else None,
            tuple(system.get("service_rates", (3.0, 3.0, 3.0))),
        )
        return simulate_threenode(nid, n_events, sim_seed, tc)
    raise ConfigError(f"unknown system kind {kind!r}")


def _cf_base(system: dict, N: int) -> MtMnConfig | None:
    if "hourly_rates" not in system and "nu" not in system:
        return None
    return MtMnConfig(system.get("hourly_rates", list(COUNTERFACTUAL_PROFILE)), system.get("nu", 3.5), N,
                      system.get("hour_len", 1.0))


def _callcenter_cfg(system: dict) -> CallCenterConfig:
    kw = {k: v for k, v in system.items() if k != "kind"}
    if "high_priority_classes" in kw:
        kw["high_priority_classes"] = tuple(kw["high_priority_classes"])
    return CallCenterConfig(**kw)


def system_schema(system: dict) -> EventSchema:
    kind = _need(system, "kind", "system")
    if kind not in SYSTEM_KEYS:
        raise ConfigError(f"unknown system kind {kind!r}; expected one of {sorted(SYSTEM_KEYS)}")
    _keys(system, SYSTEM_KEYS[kind], f"system ({kind})")
    try:
        if kind == "mm1":
            if "prior" not in system:
                _need(system, "lambda", "system")
                _need(system, "nu", "system")
            else:
                PriorConfig(**system["prior"])
            return mmn_schema(1, 1)
        if kind == "mmn":
            return MmnConfig(system["lambdas"], system["nus"], system.get("n_servers", 1),
                             system.get("priority")).schema()
        if kind == "gg1":
            Dist.from_dict(system["interarrival"])
            Dist.from_dict(system["service"])
            return mmn_schema(1, 1)
        if kind == "mt_mn":
            return MtMnConfig(system["hourly_rates"], system["nu"], system["n_servers"]).schema()
        if kind == "counterfactual":
            if "c" not in system and "c_ranges" not in system:
                raise ConfigError("counterfactual system needs 'c' or 'c_ranges'")
            if "N" not in system and "N_values" not in system:
                raise ConfigError("counterfactual system needs 'N' or 'N_values'")
            ns = system.get("N_values", [system.get("N")])
            return mmn_schema(max(int(n) for n in ns), 1)
        if kind == "callcenter":
            return _callcenter_cfg(system).schema()
        return threenode_schema()
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"bad system config: {e}") from e


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg: dict, out: Path, seed: int, jobs: int) -> int:
    _keys(cfg, {"version", "system", "n_trajectories", "n_events"}, "simulate config")
    system = _need(cfg, "system", "simulate config")
    schema = system_schema(system)
    K = int(_need(cfg, "n_trajectories", "simulate config"))
    n = int(_need(cfg, "n_events", "simulate config"))
    if K < 1 or n < 1:
        raise ConfigError("n_trajectories and n_events must be >= 1")
    fn = functools.partial(_simulate_one, system, n)
    trajs = parallel_map(fn, [child_seed(seed, j) for j in range(K)], jobs)
    if system["kind"] == "counterfactual":
        # staffing differs per table, and so does the schema
        schemas = [mmn_schema(len(t.initial_state.servers), 1) for t in trajs]
    else:
        schemas = [schema] * K
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "data.jsonl", trajs, schemas)
    _write_resolved(out, "simulate", cfg, seed)
    log.info("wrote %d trajectories of %d events to %s", K, n, out / "data.jsonl")
    return EXIT_OK


# --------------------------------------------------------------------------
# train


def _model_config(section: dict, schema: EventSchema) -> ModelConfig:
    d = dict(section)
    d.setdefault("n_event_types", schema.n_events)
    d.setdefault("n_classes", schema.num_classes)
    if d.get("use_state_token"):
        d.setdefault("state_dim", len(schema.empty_state().encode(d.get("max_queue", 100))))
    try:
        return ModelConfig.from_dict(d)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def _read_data(path) -> tuple[list[Trajectory], EventSchema]:
    """Trajectories and the widest schema among them (the model vocabulary)."""
    pairs = read_jsonl_pairs(path)
    if not pairs:
        raise ConfigError(f"{path}: no trajectories")
    widest = max((s for _, s in pairs), key=lambda s: s.n_events)
    return [t for t, _ in pairs], widest


def _schemas(path) -> list[EventSchema]:
    return [s for _, s in read_jsonl_pairs(path)]


def _valid_mask(trajs: Sequence[Trajectory], schemas: Sequence[EventSchema]) -> list[bool]:
    return [valid_fraction([t], s) == 1.0 for t, s in zip(trajs, schemas)]


def cmd_train(cfg: dict, out: Path, seed: int, jobs: int) -> int:
    _keys(cfg, {"version", "data", "val_data", "model", "train", "resume"}, "train config")
    trajs, schema = _read_data(_need(cfg, "data", "train config"))
    mcfg = _model_config(cfg.get("model", {}), schema)
    tsec = dict(cfg.get("train", {}))
    tsec["seed"] = seed
    tsec.setdefault("threads", jobs)
    if tsec.get("time_budget") is not None:
        raise ConfigError("time_budget makes runs irreproducible; set epochs instead")
    tcfg = TrainConfig.from_dict(tsec)
    seqs = [encode_trajectory(t, schema, mcfg) for t in trajs]
    val = None
    if "val_data" in cfg:
        vt, _ = _read_data(cfg["val_data"])
        val = [encode_trajectory(t, schema, mcfg) for t in vt]
    state = None
    if "resume" in cfg:
        state, _, _ = checkpoint.load(cfg["resume"])
        if state.model.cfg != mcfg:
            raise ConfigError("resume checkpoint was trained with a different model config")
    out.mkdir(parents=True, exist_ok=True)
    extra = {"schema": schema.to_dict()}
    try:
        state = train(seqs, mcfg, tcfg, val, state)
    except DivergenceDetected as e:
        if e.last_good is not None:
            log.error("%s; last good epoch %d", e, e.last_good["epoch"])
        raise
    checkpoint.save(out / "model.ckpt", state, tcfg, extra)
    (out / "loss.csv").write_text(history_csv(state.history))
    resolved = dict(cfg)
    resolved["model"] = mcfg.to_dict()
    resolved["train"] = tcfg.to_dict()
    _write_resolved(out, "train", resolved, seed)
    return EXIT_OK


# --------------------------------------------------------------------------
# generate

_WORKER_MODEL: dict = {}


def _load_model(path: str):
    if path not in _WORKER_MODEL:
        state, _, extra = checkpoint.load(path, with_optimizer=False)
        _WORKER_MODEL[path] = (state.model, EventSchema.from_dict(extra["schema"]))
    return _WORKER_MODEL[path]


def _generate_chunk(ckpt: str, n_events: int, temperature: float, job: tuple) -> list[Trajectory]:
    model, schema = _load_model(ckpt)
    inits, seeds, hists, pols = job
    return generate_many(model, inits, n_events, seeds, hists, pols, schema, temperature)


def _parse_policy(spec: Sequence[str] | dict | None) -> tuple[float, int] | None:
    if spec is None:
        return None
    if isinstance(spec, dict):
        _keys(spec, {"c", "N"}, "policy")
        return float(_need(spec, "c", "policy")), int(_need(spec, "N", "policy"))
    kv = {}
    for item in spec:
        if "=" not in item:
            raise ConfigError(f"--policy expects key=value pairs, got {item!r}")
        k, v = item.split("=", 1)
        kv[k] = v
    return _parse_policy(kv)


def model_trajectories(ckpt: str, n_traj: int, n_events: int, seed: int, jobs: int,
                       histories: Sequence[Trajectory] | None = None, policy=None,
                       temperature: float = 1.0, batch_size: int = 100,
                       initial_state: SystemState | None = None) -> list[Trajectory]:
    """``n_traj`` model trajectories; trajectory ``i`` uses child seed ``i``
    and, if given, continues ``histories[i % len(histories)]``."""
    model, schema = _load_model(ckpt)
    init0 = initial_state or schema.empty_state()
    jobs_list = []
    for s in range(0, n_traj, batch_size):
        idx = range(s, min(n_traj, s + batch_size))
        if histories:
            hs = [histories[i % len(histories)] for i in idx]
            inits = [h.initial_state for h in hs]
            recs = [h.records for h in hs]
        else:
            inits = [init0] * len(idx)
            recs = [()] * len(idx)
        jobs_list.append((inits, [child_seed(seed, i) for i in idx], recs, [policy] * len(idx)))
    fn = functools.partial(_generate_chunk, ckpt, n_events, temperature)
    return [t for chunk in parallel_map(fn, jobs_list, jobs) for t in chunk]


def cmd_generate(cfg: dict, out: Path, seed: int, jobs: int, history: str | None = None,
                 policy: Sequence[str] | None = None) -> int:
    _keys(cfg, {"version", "checkpoint", "n_trajectories", "n_events", "history", "history_length",
                "policy", "temperature", "batch_size", "initial_state"}, "generate config")
    ckpt = _need(cfg, "checkpoint", "generate config")
    n_traj = int(cfg.get("n_trajectories", 100))
    n_events = int(cfg.get("n_events", 200))
    hist_path = history or cfg.get("history")
    hists = None
    if hist_path:
        hists, _ = _read_data(hist_path)
        if "history_length" in cfg:
            hists = [h.prefix(int(cfg["history_length"])) for h in hists]
    pol = _parse_policy(policy) if policy else _parse_policy(cfg.get("policy"))
    init = SystemState.from_dict(cfg["initial_state"]) if "initial_state" in cfg else None
    model, schema = _load_model(ckpt)
    if bool(pol) != model.cfg.use_policy_token:
        raise ConfigError("a policy is required exactly when the model was trained with a policy token")
    trajs = model_trajectories(ckpt, n_traj, n_events, seed, jobs, hists, pol,
                               float(cfg.get("temperature", 1.0)), int(cfg.get("batch_size", 100)), init)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "generated.jsonl", trajs, schema)
    resolved = dict(cfg)
    resolved.update(n_trajectories=n_traj, n_events=n_events)
    if hist_path:
        resolved["history"] = hist_path
    if pol:
        resolved["policy"] = {"c": pol[0], "N": pol[1]}
    _write_resolved(out, "generate", resolved, seed)
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluate


def _metric_samples(trajs: Sequence[Trajectory], schema: EventSchema) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {"interarrival": [], "service": [], "waiting": []}
    for t in trajs:
        m = customer_metrics(t, schema)
        out["interarrival"].extend(m.interarrival)
        out["service"].extend(m.service)
        out["waiting"].extend(m.waiting)
    return out


def cmd_evaluate(cfg: dict, out: Path, seed: int, jobs: int) -> int:
    _keys(cfg, {"version", "checkpoint", "test_data", "oracle", "generated"}, "evaluate config")
    test, schema = _read_data(_need(cfg, "test_data", "evaluate config"))
    rows = []
    summary: dict = {"n_test_trajectories": len(test)}
    if "checkpoint" in cfg:
        model, _ = _load_model(cfg["checkpoint"])
        rep = model_losses(model, test, schema)
        rows.append(("transformer", rep))
        summary["transformer"] = rep.to_dict()
    if "oracle" in cfg:
        o = cfg["oracle"]
        _keys(o, {"lambdas", "nus"}, "oracle")
        lam, nus = _need(o, "lambdas", "oracle"), _need(o, "nus", "oracle")
        rep = model_losses(MmnOracle(lam, nus, schema), test)
        rows.append(("oracle_empirical", rep))
        summary["oracle_empirical"] = rep.to_dict()
        if len(lam) == 1 and schema.stations[0].n_servers == 1:
            ev, tm = mm1_optimal_losses(lam[0], nus[0])
            summary["oracle_closed_form"] = {"event_loss": ev, "time_loss": tm}
    if "generated" in cfg:
        gen, _ = _read_data(cfg["generated"])
        ok = _valid_mask(gen, _schemas(cfg["generated"]))
        summary["valid_fraction"] = sum(ok) / len(ok)
        valid = [g for g, v in zip(gen, ok) if v]
        a = _metric_samples(valid, schema)
        b = _metric_samples(test, schema)
        dist = {}
        for k in a:
            x, y = np.asarray(a[k]), np.asarray(b[k])
            if k == "waiting":
                x, y = positive(x), positive(y)
            try:
                dist[k] = uq_compare(x, y)
            except ValueError as e:
                dist[k] = {"error": str(e)}
        summary["distributions"] = dist
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", summary)
    write_columns(out / "losses.csv", {
        "source": [r[0] for r in rows],
        "event_loss": [r[1].event_loss for r in rows],
        "time_loss": [r[1].time_loss for r in rows],
        "class_loss": [r[1].class_loss for r in rows],
        "event_se": [r[1].event_se for r in rows],
        "time_se": [r[1].time_se for r in rows],
        "n_steps": [r[1].n_steps for r in rows],
    })
    _write_resolved(out, "evaluate", cfg, seed)
    return EXIT_OK


# --------------------------------------------------------------------------
# uq


def _bootstrap_part(history: Trajectory, prior: PriorConfig, N: int, f: str, mode: str, job: tuple) -> list[float]:
    seed, J = job
    return bayesian_bootstrap(history, prior, J, N, f, seed, mode)


def cmd_uq(cfg: dict, out: Path, seed: int, jobs: int) -> int:
    _keys(cfg, {"version", "prior", "history", "J", "N", "metric", "mode", "checkpoint", "grid_size"}, "uq config")
    prior = PriorConfig(**cfg.get("prior", {}))
    h = _need(cfg, "history", "uq config")
    if isinstance(h, str):
        hist = _read_data(h)[0][0]
    else:
        _keys(h, {"lambda", "nu", "n"}, "history")
        hist = simulate_mmn(MmnConfig([h["lambda"]], [h["nu"]]), int(h["n"]), child_seed(seed, 0))
    n = len(hist.records)
    J = int(cfg.get("J", 1000))
    N = int(cfg.get("N", 2 * n))
    f = cfg.get("metric", "waiting")
    mode = cfg.get("mode", "per_step")
    if N <= n:
        raise ConfigError("N must exceed the history length")
    # one replica block per job; block k covers child seeds of child_seed(seed, 1 + k)
    blocks = 10
    per = [J // blocks + (1 if k < J % blocks else 0) for k in range(blocks)]
    fn = functools.partial(_bootstrap_part, hist, prior, N, f, mode)
    parts = parallel_map(fn, [(child_seed(seed, 1 + k), m) for k, m in enumerate(per) if m], jobs)
    boot = [x for p in parts for x in p]
    post = posterior_update(GridPosterior.from_prior(prior, int(cfg.get("grid_size", 101))), hist)
    out.mkdir(parents=True, exist_ok=True)
    post.to_csv(out / "posterior.csv")
    cols = {"bootstrap": boot}
    summary: dict = {"history_length": n, "N": N, "J": J, "metric": f, "mode": mode,
                     "posterior_mean": list(post.mean())}
    if "checkpoint" in cfg:
        gen = model_trajectories(cfg["checkpoint"], J, N - n, child_seed(seed, 2), jobs, [hist])
        model_f = [performance_metric(t, n, f) for t in gen]
        cols["model"] = model_f
        summary["comparison"] = uq_compare(model_f, boot)
    write_columns(out / "samples.csv", cols)
    write_json(out / "summary.json", summary)
    _write_resolved(out, "uq", cfg, seed)
    return EXIT_OK


# --------------------------------------------------------------------------
# counterfactual


def _cf_one(c: float, N: int, n_events: int, seed: int) -> Trajectory:
    return simulate_counterfactual(PolicyParams(c, N), n_events, seed)


def cmd_counterfactual(cfg: dict, out: Path, seed: int, jobs: int) -> int:
    _keys(cfg, {"version", "c", "N_values", "n_trajectories", "n_events", "hours", "checkpoint"},
          "counterfactual config")
    c = float(cfg.get("c", 2.0))
    Ns = [int(x) for x in cfg.get("N_values", [2, 5, 10])]
    K = int(cfg.get("n_trajectories", 200))
    n = int(cfg.get("n_events", 1500))
    hours = int(cfg.get("hours", 12))
    rows: dict[str, list] = {"source": [], "N": [], "hour": [], "mean_wait": []}
    summary: dict = {"c": c, "N_values": Ns, "hours": hours}
    if "checkpoint" in cfg and not _load_model(cfg["checkpoint"])[0].cfg.use_policy_token:
        raise ConfigError("counterfactual generation needs a model trained with a policy token")
    for N in Ns:
        counterfactual_config(PolicyParams(c, N))  # validates c and N
        base = child_seed(seed, N)
        fn = functools.partial(_cf_one, c, N, n)
        trajs = parallel_map(fn, [child_seed(base, j) for j in range(K)], jobs)
        sources = [("simulator", trajs)]
        if "checkpoint" in cfg:
            gen = model_trajectories(cfg["checkpoint"], K, n, child_seed(base, 1 << 20), jobs,
                                     policy=(c, N), initial_state=mmn_schema(N, 1).empty_state())
            sources.append(("transformer", gen))
        sch = mmn_schema(N, 1)
        for name, ts in sources:
            valid = [t for t in ts if valid_fraction([t], sch) == 1.0]
            hw = dict(hourly_average(valid, sch, "waiting"))
            for hr in range(hours):
                rows["source"].append(name)
                rows["N"].append(N)
                rows["hour"].append(hr)
                rows["mean_wait"].append(hw.get(hr, float("nan")))
            summary[f"{name}_N{N}_valid_fraction"] = len(valid) / len(ts)
    out.mkdir(parents=True, exist_ok=True)
    write_columns(out / "hourly_waits.csv", rows)
    write_json(out / "summary.json", summary)
    _write_resolved(out, "counterfactual", cfg, seed)
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point

COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "uq": cmd_uq,
    "counterfactual": cmd_counterfactual,
}


def _u64(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="queueseq", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=_u64, default=None, help="master seed (overrides the config)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")
        if name == "generate":
            sp.add_argument("--history", help="JSONL file of prefixes to continue")
            sp.add_argument("--policy", nargs="+", metavar="KEY=VALUE", help="policy token, e.g. c=2 N=5")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("QUEUESEQ_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.pop("seed", 0))
        cfg.pop("seed", None)
        cfg.pop("command", None)
        cfg.pop("queueseq_version", None)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out = Path(args.out)
        kw = {}
        if args.command == "generate":
            kw = {"history": args.history, "policy": args.policy}
        return COMMANDS[args.command](cfg, out, seed, args.jobs, **kw)
    except ConfigError as e:
        print(f"queueseq: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceDetected as e:
        print(f"queueseq: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as e:
        print(f"queueseq: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (KeyError, TypeError, ValueError) as e:
        print(f"queueseq: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

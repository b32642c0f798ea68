"""Discrete-event simulators that emit event tables.

Each simulator is a pure function of ``(config, n_events, seed)`` and returns
a ``Trajectory`` whose records replay cleanly under the matching schema. The
simulator also tags every record with the serial of the customer involved
(``meta["serials"]``) so per-customer metrics can be read back exactly.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from .events import (
    EventRecord,
    EventSchema,
    StationSpec,
    SystemState,
    Trajectory,
    Transition,
    mmn_schema,
)
from .rng import Stream, child_seed

log = logging.getLogger(__name__)


class UnknownNetwork(ValueError):
    pass


# --------------------------------------------------------------------------
# distributions


@dataclass(frozen=True)
class Dist:
    """Inter-arrival or service distribution.

    ``kind`` is one of ``exponential`` (``rate``), ``uniform`` (``a``, ``b``),
    ``empirical`` (``samples``, sampled through the linearly interpolated
    empirical quantile function) or ``deterministic`` (``value``).
    """

    kind: str
    rate: float = 1.0
    a: float = 0.0
    b: float = 1.0
    value: float = 0.0
    samples: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "exponential" and not self.rate > 0:
            raise ValueError("exponential rate must be positive")
        if self.kind == "uniform" and not self.a < self.b:
            raise ValueError("uniform needs a < b")
        if self.kind == "empirical":
            if not self.samples or min(self.samples) < 0:
                raise ValueError("empirical distribution needs nonnegative samples")
            object.__setattr__(self, "samples", tuple(sorted(self.samples)))
        if self.kind not in ("exponential", "uniform", "empirical", "deterministic"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def exponential(cls, rate: float) -> "Dist":
        return cls("exponential", rate=rate)

    @classmethod
    def uniform(cls, a: float, b: float) -> "Dist":
        return cls("uniform", a=a, b=b)

    @classmethod
    def deterministic(cls, value: float) -> "Dist":
        return cls("deterministic", value=value)

    @classmethod
    def empirical(cls, samples: Sequence[float]) -> "Dist":
        return cls("empirical", samples=tuple(float(s) for s in samples))

    def sample(self, rs: Stream) -> float:
        k = self.kind
        if k == "exponential":
            return rs.exponential(self.rate)
        if k == "uniform":
            return rs.uniform_range(self.a, self.b)
        if k == "deterministic":
            return self.value
        xs = self.samples
        if len(xs) == 1:
            return xs[0]
        pos = rs.uniform() * (len(xs) - 1)
        i = int(pos)
        return xs[i] + (pos - i) * (xs[i + 1] - xs[i])

    @property
    def mean(self) -> float:
        k = self.kind
        if k == "exponential":
            return 1.0 / self.rate
        if k == "uniform":
            return 0.5 * (self.a + self.b)
        if k == "deterministic":
            return self.value
        # mean of the interpolated quantile function
        xs = np.asarray(self.samples)
        return float(np.mean(0.5 * (xs[:-1] + xs[1:]))) if len(xs) > 1 else float(xs[0])

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "exponential":
            d["rate"] = self.rate
        elif self.kind == "uniform":
            d.update(a=self.a, b=self.b)
        elif self.kind == "deterministic":
            d["value"] = self.value
        else:
            d["samples"] = list(self.samples)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Dist":
        k = d["kind"]
        if k == "exponential":
            return cls.exponential(d["rate"])
        if k == "uniform":
            return cls.uniform(d["a"], d["b"])
        if k == "deterministic":
            return cls.deterministic(d["value"])
        if k == "empirical":
            if "samples_file" in d:
                with open(d["samples_file"]) as fh:
                    return cls.empirical(json.load(fh))
            return cls.empirical(d["samples"])
        raise ValueError(f"unknown distribution kind {k!r}")


# --------------------------------------------------------------------------
# configs


@dataclass
class MmnConfig:
    lambdas: list[float]
    nus: list[float]
    n_servers: int = 1
    # None = FIFO, else classes from highest to lowest priority
    priority: list[int] | None = None

    def __post_init__(self):
        if len(self.lambdas) != len(self.nus):
            raise ValueError("lambdas and nus need one entry per class")
        if min(self.lambdas) <= 0 or min(self.nus) <= 0:
            raise ValueError("rates must be positive")
        if self.priority is not None and sorted(self.priority) != list(range(len(self.lambdas))):
            raise ValueError("priority must be a permutation of the classes")

    @property
    def num_classes(self) -> int:
        return len(self.lambdas)

    def schema(self) -> EventSchema:
        return mmn_schema(self.n_servers, self.num_classes, self.priority)


@dataclass
class MtMnConfig:
    hourly_rates: list[float]
    nu: float
    n_servers: int
    hour_len: float = 1.0

    def __post_init__(self):
        if min(self.hourly_rates) < 0 or max(self.hourly_rates) <= 0:
            raise ValueError("hourly rates must be >= 0 with at least one positive")
        if self.nu <= 0 or self.n_servers < 1:
            raise ValueError("need nu > 0 and at least one server")

    def rate_at(self, t: float) -> float:
        """Arrival rate at time ``t``; the last hour's rate holds past the profile."""
        h = int(t // self.hour_len)
        return self.hourly_rates[min(h, len(self.hourly_rates) - 1)] / self.hour_len

    def schema(self) -> EventSchema:
        return mmn_schema(self.n_servers, 1)


MT_PROFILE_17H = [8, 8, 8, 8, 8, 14, 15, 16, 17, 18, 19, 18, 17, 16, 15, 11, 11]
COUNTERFACTUAL_PROFILE = [8, 8, 8, 8, 8, 14, 15, 16, 17, 18, 19, 18]


@dataclass
class PriorConfig:
    lambda_range: tuple[float, float] = (1.5, 2.5)
    nu_range: tuple[float, float] = (3.0, 6.0)

    def __post_init__(self):
        for lo, hi in (self.lambda_range, self.nu_range):
            if not (0 < lo < hi):
                raise ValueError("prior ranges need 0 < lo < hi")

    def sample(self, rs: Stream) -> dict:
        return {
            "lambda": rs.uniform_range(*self.lambda_range),
            "nu": rs.uniform_range(*self.nu_range),
        }


@dataclass
class PolicyParams:
    c: float
    N: int

    def __post_init__(self):
        if not 1 <= self.N:
            raise ValueError("need at least one server")


# --------------------------------------------------------------------------
# M/M/n, multi-class, FIFO or non-preemptive priority


def simulate_mmn(cfg: MmnConfig, n_events: int, seed: int, initial: SystemState | None = None) -> Trajectory:
    """Competing-clock simulation of a multi-class M/M/n queue.

    Arriving customers take the lowest-index idle server, otherwise they
    wait; a freed server takes the next waiting customer (FIFO, or highest
    priority class first and FIFO within a class).
    """
    if n_events < 1:
        raise ValueError("n_events must be >= 1")
    schema = cfg.schema()
    state = initial.copy() if initial is not None else schema.empty_state()
    init = state.copy()
    rs = Stream(seed)
    lambdas = list(cfg.lambdas)
    nus = list(cfg.nus)
    lam_tot = float(sum(lambdas))
    K = len(lambdas)
    n = cfg.n_servers
    ranks = schema.stations[0].priority
    servers = list(state.servers)  # codes
    queue = list(state.queue)
    # initial customers get negative serials, queue first, as in the replay engine
    q_ser: list[int] = [-1 - i for i in range(len(queue))]
    s_ser: list[int | None] = [None] * n
    nxt = -len(queue) - 1
    for j in range(n):
        if servers[j]:
            s_ser[j] = nxt
            nxt -= 1
    busy_rate = sum(nus[c - 1] for c in servers if c)
    records: list[EventRecord] = []
    serials: list[int] = []
    serial = 0
    bearing = K > 1
    for _ in range(n_events):
        r = lam_tot + busy_rate
        dt = rs.exponential(r)
        u = rs.uniform() * r
        if u < lam_tot or busy_rate <= 0.0:
            # arrival: class by rate
            v = rs.uniform() * lam_tot
            c = 0
            acc = lambdas[0]
            while v >= acc and c < K - 1:
                c += 1
                acc += lambdas[c]
            ser = serial
            serial += 1
            try:
                j = servers.index(0)
            except ValueError:
                queue.append(c)
                q_ser.append(ser)
            else:
                servers[j] = c + 1
                s_ser[j] = ser
                busy_rate += nus[c]
            records.append(EventRecord(dt, 0, c if bearing else None))
            serials.append(ser)
        else:
            u -= lam_tot
            j = 0
            acc = 0.0
            last_busy = -1
            for k in range(n):
                code = servers[k]
                if code:
                    acc += nus[code - 1]
                    last_busy = k
                    if u < acc:
                        j = k
                        break
            else:
                j = last_busy
            c = servers[j] - 1
            ser = s_ser[j]
            busy_rate -= nus[c]
            servers[j] = 0
            s_ser[j] = None
            if queue:
                if ranks is None:
                    k = 0
                else:
                    k = 0
                    best = ranks[queue[0]]
                    for i in range(1, len(queue)):
                        if ranks[queue[i]] < best:
                            k, best = i, ranks[queue[i]]
                c2 = queue.pop(k)
                servers[j] = c2 + 1
                s_ser[j] = q_ser.pop(k)
                busy_rate += nus[c2]
            records.append(EventRecord(dt, j + 1, c if bearing else None))
            serials.append(ser)
        # keep the running sum from drifting
        if not any(servers):
            busy_rate = 0.0
    meta = {
        "generator": "mmn",
        "seed": int(seed),
        "theta": {"lambdas": lambdas, "nus": nus},
        "n_servers": n,
        "priority": cfg.priority,
        "serials": serials,
    }
    return Trajectory(init, records, meta)


def mm1_generator(lam: float | None = None, nu: float | None = None) -> Callable:
    """Generator for ``sample_dataset``: M/M/1 with fixed or prior-drawn rates."""

    def gen(theta: dict | None, n_events: int, seed: int) -> Trajectory:
        la = theta["lambda"] if theta else lam
        mu = theta["nu"] if theta else nu
        t = simulate_mmn(MmnConfig([la], [mu], 1), n_events, seed)
        t.meta["theta"] = {"lambda": la, "nu": mu}
        return t

    return gen


# --------------------------------------------------------------------------
# G/G/1


def simulate_gg1(inter: Dist, service: Dist, n_events: int, seed: int) -> Trajectory:
    """FIFO single-server queue with general inter-arrival and service laws.

    Simultaneous arrival and departure are ordered departure first.
    """
    if n_events < 1:
        raise ValueError("n_events must be >= 1")
    schema = mmn_schema(1, 1)
    rs_a = Stream(child_seed(seed, 0))
    rs_s = Stream(child_seed(seed, 1))
    t = 0.0
    next_arr = inter.sample(rs_a)
    next_dep = math.inf
    in_sys = 0
    records: list[EventRecord] = []
    serials: list[int] = []
    arr_serial = 0
    dep_serial = 0
    services: list[float] = []
    inters: list[float] = [next_arr]
    while len(records) < n_events:
        if next_dep <= next_arr:
            records.append(EventRecord(next_dep - t, 1, None))
            serials.append(dep_serial)
            dep_serial += 1
            t = next_dep
            in_sys -= 1
            if in_sys > 0:
                s = service.sample(rs_s)
                services.append(s)
                next_dep = t + s
            else:
                next_dep = math.inf
        else:
            records.append(EventRecord(next_arr - t, 0, None))
            serials.append(arr_serial)
            arr_serial += 1
            t = next_arr
            in_sys += 1
            if in_sys == 1:
                s = service.sample(rs_s)
                services.append(s)
                next_dep = t + s
            a = inter.sample(rs_a)
            inters.append(a)
            next_arr = t + a
    meta = {
        "generator": "gg1",
        "seed": int(seed),
        "inter": inter.to_dict(),
        "service": service.to_dict(),
        "serials": serials,
    }
    return Trajectory(schema.empty_state(), records, meta)


# --------------------------------------------------------------------------
# M_t/M/n


def _simulate_piecewise(rate_at: Callable[[float], float], lam_max: float, nu: float, n: int,
                        n_events: int, rs: Stream) -> tuple[list[EventRecord], list[int]]:
    """Thinning against ``lam_max`` for arrivals, exponential services."""
    t = 0.0
    last = 0.0
    done = [math.inf] * n  # completion time per server
    s_ser: list[int | None] = [None] * n
    queue: list[int] = []
    records: list[EventRecord] = []
    serials: list[int] = []
    serial = 0
    cand = t + rs.exponential(lam_max) if lam_max > 0 else math.inf
    while len(records) < n_events:
        jmin = min(range(n), key=done.__getitem__)
        tdep = done[jmin]
        if tdep <= cand:
            if tdep == math.inf:
                break  # nothing can happen anymore
            t = tdep
            records.append(EventRecord(t - last, jmin + 1, None))
            serials.append(s_ser[jmin])
            last = t
            if queue:
                s_ser[jmin] = queue.pop(0)
                done[jmin] = t + rs.exponential(nu)
            else:
                s_ser[jmin] = None
                done[jmin] = math.inf
            continue
        t = cand
        cand = t + rs.exponential(lam_max)
        if rs.uniform() * lam_max >= rate_at(t):
            continue
        ser = serial
        serial += 1
        records.append(EventRecord(t - last, 0, None))
        serials.append(ser)
        last = t
        try:
            j = s_ser.index(None)
        except ValueError:
            queue.append(ser)
        else:
            s_ser[j] = ser
            done[j] = t + rs.exponential(nu)
    return records, serials


def simulate_mt_mn(cfg: MtMnConfig, n_events: int, seed: int) -> Trajectory:
    """Non-homogeneous Poisson arrivals (hourly piecewise-constant rate) to
    ``n`` exponential servers, FIFO. Time is in units of ``hour_len``.

    Stops early if no further event is possible (all later rates zero and
    the system empty).
    """
    if n_events < 1:
        raise ValueError("n_events must be >= 1")
    rs = Stream(seed)
    lam_max = max(cfg.hourly_rates) / cfg.hour_len
    records, serials = _simulate_piecewise(cfg.rate_at, lam_max, cfg.nu, cfg.n_servers, n_events, rs)
    meta = {
        "generator": "mt_mn",
        "seed": int(seed),
        "hourly_rates": list(cfg.hourly_rates),
        "nu": cfg.nu,
        "n_servers": cfg.n_servers,
        "hour_len": cfg.hour_len,
        "serials": serials,
    }
    return Trajectory(cfg.schema().empty_state(), records, meta)


def counterfactual_config(policy: PolicyParams, base: MtMnConfig | None = None) -> MtMnConfig:
    """Shift the hourly profile by ``c`` (clipped at zero) and staff ``N`` servers."""
    if base is None:
        base = MtMnConfig(list(COUNTERFACTUAL_PROFILE), 3.5, policy.N)
    rates = [max(0.0, policy.c + r) for r in base.hourly_rates]
    if any(policy.c + r < 0 for r in base.hourly_rates):
        log.info("clipped negative hourly rates at zero for c=%s", policy.c)
    if max(rates) <= 0:
        raise ValueError(f"c={policy.c} leaves no positive arrival rate")
    return MtMnConfig(rates, base.nu, policy.N, base.hour_len)


def simulate_counterfactual(policy: PolicyParams, n_events: int, seed: int,
                            base: MtMnConfig | None = None) -> Trajectory:
    cfg = counterfactual_config(policy, base)
    traj = simulate_mt_mn(cfg, n_events, seed)
    traj.meta["generator"] = "counterfactual"
    traj.meta["policy"] = {"c": policy.c, "N": policy.N}
    return traj


# --------------------------------------------------------------------------
# call center


def _default_service_samples() -> dict:
    with resources.files("queueseq.data").joinpath("callcenter_service_samples.json").open() as fh:
        return json.load(fh)


@dataclass
class CallCenterConfig:
    """Two-stage call center: VRU pool, then a priority queue in front of agents.

    Times are in seconds. ``vru_service`` / ``agent_service`` default to the
    bundled synthetic empirical samples (one list per class).
    """

    class_props: list[float] = field(default_factory=lambda: [0.50, 0.20, 0.10, 0.05, 0.05, 0.10])
    # calibrated so that about 15% of callers abandon
    total_arrival_rate: float = 1.0 / 29.0
    vru_servers: int = 1000
    vru_service: list[Dist] | None = None
    agent_service: list[Dist] | None = None
    patience_means_sec: list[float] = field(default_factory=lambda: [521.0, 644.0, 528.0, 703.0, 647.0, 491.0])
    n_agents: int = 6
    # 0-based class ids; customer types 2 and 5 in 1-based numbering
    high_priority_classes: tuple[int, ...] = (1, 4)

    def __post_init__(self):
        if abs(sum(self.class_props) - 1.0) > 1e-9:
            raise ValueError("class proportions must sum to 1")
        if min(self.patience_means_sec) <= 0:
            raise ValueError("patience means must be positive")
        if self.vru_service is None or self.agent_service is None:
            data = _default_service_samples()
            if self.vru_service is None:
                self.vru_service = [Dist.empirical(s) for s in data["vru"]]
            if self.agent_service is None:
                self.agent_service = [Dist.empirical(s) for s in data["agent"]]

    @property
    def num_classes(self) -> int:
        return len(self.class_props)

    def schema(self) -> EventSchema:
        K = self.num_classes
        ranks = tuple(0 if c in self.high_priority_classes else 1 for c in range(K))
        names = ["arrival", "vru_completion", "abandonment"] + [f"departure_agent{j + 1}" for j in range(self.n_agents)]
        trans = [
            Transition(("external",), ("station", 0)),
            Transition(("pool", 0), ("station", 1)),
            Transition(("queue", 1), ("exit",)),
        ] + [Transition(("server", 1, j), ("exit",)) for j in range(self.n_agents)]
        return EventSchema(
            tuple(names), K, tuple(trans), tuple([True] * len(names)),
            (StationSpec("vru", self.vru_servers, None, pooled=True), StationSpec("agents", self.n_agents, ranks)),
            name="callcenter",
        )


def simulate_callcenter(cfg: CallCenterConfig, n_events: int, seed: int) -> Trajectory:
    """Event-driven call-center simulation.

    Callers arrive as a Poisson stream, are served by the VRU pool, then join
    the agent queue (high-priority classes first, FIFO within a tier). While
    waiting each caller carries an exponential patience clock, cancelled when
    an agent picks the call up.
    """
    if n_events < 1:
        raise ValueError("n_events must be >= 1")
    schema = cfg.schema()
    ranks = schema.stations[1].priority
    rs_arr = Stream(child_seed(seed, 0))
    rs_vru = Stream(child_seed(seed, 1))
    rs_agent = Stream(child_seed(seed, 2))
    rs_pat = Stream(child_seed(seed, 3))
    patience_rates = [0.0 if math.isinf(m) else 1.0 / m for m in cfg.patience_means_sec]

    # heap entries: (time, seq, kind, payload); seq breaks ties deterministically
    heap: list = []
    seq = 0

    def push(t, kind, payload):
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, payload))
        seq += 1

    vru_busy = 0
    vru_wait: list[tuple[int, int]] = []  # (serial, class) beyond VRU capacity
    agents: list[int | None] = [None] * cfg.n_agents
    waiting: list[tuple[int, int]] = []  # (serial, class) in arrival order to the agent queue
    cls_of: dict[int, int] = {}
    records: list[EventRecord] = []
    serials: list[int] = []
    t_last = 0.0
    serial = 0
    push(rs_arr.exponential(cfg.total_arrival_rate), "arrival", None)

    def start_vru(ser, c, t):
        nonlocal vru_busy
        vru_busy += 1
        push(t + cfg.vru_service[c].sample(rs_vru), "vru", ser)

    def start_agent(j, ser, c, t):
        agents[j] = ser
        push(t + cfg.agent_service[c].sample(rs_agent), "agent", (j, ser))

    while len(records) < n_events and heap:
        t, _, kind, payload = heapq.heappop(heap)
        if kind == "arrival":
            c = rs_arr.choice(cfg.class_props)
            ser = serial
            serial += 1
            cls_of[ser] = c
            records.append(EventRecord(t - t_last, 0, c))
            serials.append(ser)
            t_last = t
            if vru_busy < cfg.vru_servers:
                start_vru(ser, c, t)
            else:
                vru_wait.append((ser, c))
            push(t + rs_arr.exponential(cfg.total_arrival_rate), "arrival", None)
        elif kind == "vru":
            ser = payload
            c = cls_of[ser]
            records.append(EventRecord(t - t_last, 1, c))
            serials.append(ser)
            t_last = t
            vru_busy -= 1
            if vru_wait:
                s2, c2 = vru_wait.pop(0)
                start_vru(s2, c2, t)
            try:
                j = agents.index(None)
            except ValueError:
                waiting.append((ser, c))
                if patience_rates[c] > 0:
                    push(t + rs_pat.exponential(patience_rates[c]), "abandon", ser)
            else:
                start_agent(j, ser, c, t)
        elif kind == "abandon":
            ser = payload
            k = next((i for i, (s, _) in enumerate(waiting) if s == ser), None)
            if k is None:
                continue  # already picked up: clock cancelled
            _, c = waiting.pop(k)
            records.append(EventRecord(t - t_last, 2, c))
            serials.append(ser)
            t_last = t
        else:
            j, ser = payload
            c = cls_of.pop(ser)
            records.append(EventRecord(t - t_last, 3 + j, c))
            serials.append(ser)
            t_last = t
            agents[j] = None
            if waiting:
                k = 0
                best = ranks[waiting[0][1]]
                for i in range(1, len(waiting)):
                    r = ranks[waiting[i][1]]
                    if r < best:
                        k, best = i, r
                s2, c2 = waiting.pop(k)
                start_agent(j, s2, c2, t)
    meta = {"generator": "callcenter", "seed": int(seed), "serials": serials}
    return Trajectory(schema.empty_state(), records, meta)


# --------------------------------------------------------------------------
# three-node networks

THREENODE_EVENTS = ("arr1", "arr2", "arr3", "route12", "route13", "route23", "dep1", "dep2", "dep3")

# permitted event ids per topology
NETWORK_EVENTS: dict[int, frozenset[int]] = {
    1: frozenset({0, 3, 5, 8}),  # tandem 1 -> 2 -> 3
    2: frozenset({0, 3, 4, 7, 8}),  # split 1 -> {2, 3}
    3: frozenset({0, 1, 2, 6, 7, 8}),  # three parallel single-node lines
    4: frozenset({0, 1, 4, 5, 8}),  # merge {1, 2} -> 3
}

# routing[network][node] = list of (probability, event id) for a service completion
_ROUTING = {
    1: {0: [(1.0, 3)], 1: [(1.0, 5)], 2: [(1.0, 8)]},
    2: {0: [(0.5, 3), (0.5, 4)], 1: [(1.0, 7)], 2: [(1.0, 8)]},
    3: {0: [(1.0, 6)], 1: [(1.0, 7)], 2: [(1.0, 8)]},
    4: {0: [(1.0, 4)], 1: [(1.0, 5)], 2: [(1.0, 8)]},
}

_EXTERNAL = {1: (1.0, 0.0, 0.0), 2: (1.0, 0.0, 0.0), 3: (1.0, 1.0, 1.0), 4: (1.0, 1.0, 0.0)}

_ROUTE_TARGET = {3: 1, 4: 2, 5: 2}


@dataclass
class ThreeNodeConfig:
    """Rates for the three-node demo networks. Defaults are illustrative
    choices; external rates of zero switch a node's arrival stream off."""

    arrival_rates: tuple[float, float, float] | None = None
    service_rates: tuple[float, float, float] = (3.0, 3.0, 3.0)


def threenode_schema() -> EventSchema:
    trans = [Transition(("external",), ("station", k)) for k in range(3)]
    trans += [
        Transition(("server", 0, 0), ("station", 1)),
        Transition(("server", 0, 0), ("station", 2)),
        Transition(("server", 1, 0), ("station", 2)),
    ]
    trans += [Transition(("server", k, 0), ("exit",)) for k in range(3)]
    return EventSchema(
        THREENODE_EVENTS, 1, tuple(trans), tuple([False] * 9),
        tuple(StationSpec(f"node{k + 1}", 1) for k in range(3)), name="threenode",
    )


def simulate_threenode(network_id: int, n_events: int, seed: int, cfg: ThreeNodeConfig | None = None) -> Trajectory:
    """Markovian simulation of one of the four three-node topologies
    (single exponential server per node, FIFO)."""
    if network_id not in NETWORK_EVENTS:
        raise UnknownNetwork(f"network_id must be 1..4, got {network_id}")
    cfg = cfg or ThreeNodeConfig()
    ext = cfg.arrival_rates if cfg.arrival_rates is not None else _EXTERNAL[network_id]
    mus = cfg.service_rates
    routing = _ROUTING[network_id]
    rs = Stream(seed)
    counts = [0, 0, 0]
    queues: list[list[int]] = [[], [], []]
    records: list[EventRecord] = []
    serials: list[int] = []
    serial = 0
    for _ in range(n_events):
        rates = list(ext) + [mus[k] if counts[k] else 0.0 for k in range(3)]
        r = sum(rates)
        dt = rs.exponential(r)
        k = rs.choice(rates)
        if k < 3:
            ev = k
            ser = serial
            serial += 1
            counts[k] += 1
            queues[k].append(ser)
        else:
            node = k - 3
            opts = routing[node]
            ev = opts[rs.choice([p for p, _ in opts])][1] if len(opts) > 1 else opts[0][1]
            counts[node] -= 1
            ser = queues[node].pop(0)
            if ev in _ROUTE_TARGET:
                tgt = _ROUTE_TARGET[ev]
                counts[tgt] += 1
                queues[tgt].append(ser)
        records.append(EventRecord(dt, ev, None))
        serials.append(ser)
    meta = {"generator": "threenode", "network_id": network_id, "seed": int(seed), "serials": serials}
    return Trajectory(threenode_schema().empty_state(), records, meta)


# --------------------------------------------------------------------------
# datasets


def sample_dataset(generator: Callable[[dict | None, int, int], Trajectory], K: int, n_events: int,
                   seed: int, prior: PriorConfig | None = None) -> list[Trajectory]:
    """``K`` trajectories with child seeds split from ``seed``.

    With a prior, each trajectory draws its own ``(lambda, nu)`` and the
    generator receives it as ``theta``; without one it receives ``None``.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    out = []
    for j in range(K):
        cs = child_seed(seed, j)
        theta = prior.sample(Stream(child_seed(cs, 0))) if prior is not None else None
        traj = generator(theta, n_events, child_seed(cs, 1))
        if theta is not None:
            traj.meta["theta"] = dict(theta)
        out.append(traj)
    return out

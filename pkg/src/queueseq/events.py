"""Event tables, the state machine they drive, and metric extraction.

An event table is an initial ``SystemState`` plus an ordered list of
``EventRecord`` rows ``(dt, event, class)``. The ``EventSchema`` says what each
event id does to the state: a customer moves from a *source* (outside, a given
server, any busy server of a pooled station, or the waiting line) to a *target*
(a station or the outside). Replaying the rows through the schema recovers
the jump process; a row that cannot happen (a departure from an idle server,
say) raises ``SchemaViolation``.

Class ids in records and queues are 0-based. Server occupancy codes follow
the usual state encoding: 0 idle, ``c + 1`` serving a class-``c`` customer.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

DEFAULT_MAX_QUEUE = 100


class SchemaViolation(Exception):
    """A record cannot be applied to the current state."""

    def __init__(self, index: int, reason: str = ""):
        self.index = index
        self.reason = reason
        super().__init__(f"record {index}: {reason}" if reason else f"record {index}")


class UnsupportedDiscipline(Exception):
    pass


# --------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class StationSpec:
    name: str
    n_servers: int
    # per-class service rank, lower served first; None means FIFO
    priority: tuple[int, ...] | None = None
    pooled: bool = False


@dataclass(frozen=True)
class Transition:
    """Where the customer of an event comes from and goes to.

    ``source`` is one of ``("external",)``, ``("server", station, j)``,
    ``("pool", station)`` or ``("queue", station)``; ``target`` is
    ``("station", s)`` or ``("exit",)``.
    """

    source: tuple
    target: tuple

    @property
    def is_arrival(self) -> bool:
        return self.source[0] == "external"

    @property
    def is_exit(self) -> bool:
        return self.target[0] == "exit"


@dataclass(frozen=True)
class EventSchema:
    event_names: tuple[str, ...]
    num_classes: int
    transitions: tuple[Transition, ...]
    class_bearing: tuple[bool, ...]
    stations: tuple[StationSpec, ...]
    name: str = "custom"

    def __post_init__(self):
        n = len(self.event_names)
        if len(self.transitions) != n or len(self.class_bearing) != n:
            raise ValueError("event_names, transitions and class_bearing must align")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")

    @property
    def n_events(self) -> int:
        return len(self.event_names)

    @property
    def arrival_events(self) -> tuple[int, ...]:
        return tuple(i for i, t in enumerate(self.transitions) if t.is_arrival)

    @property
    def exit_events(self) -> tuple[int, ...]:
        return tuple(i for i, t in enumerate(self.transitions) if t.is_exit)

    @property
    def strict_classes(self) -> bool:
        # with abandonment, which same-class waiter leaves is not in the record
        return not any(t.source[0] == "queue" for t in self.transitions)

    def is_single_server_fifo(self) -> bool:
        return (
            len(self.stations) == 1
            and self.stations[0].n_servers == 1
            and self.stations[0].priority is None
            and self.strict_classes
        )

    def empty_state(self) -> "SystemState":
        return SystemState([StationState([], [0] * s.n_servers) for s in self.stations])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "event_names": list(self.event_names),
            "num_classes": self.num_classes,
            "class_bearing": list(self.class_bearing),
            "transitions": [
                {"source": list(t.source), "target": list(t.target)} for t in self.transitions
            ],
            "stations": [
                {
                    "name": s.name,
                    "n_servers": s.n_servers,
                    "priority": None if s.priority is None else list(s.priority),
                    "pooled": s.pooled,
                }
                for s in self.stations
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EventSchema":
        return cls(
            event_names=tuple(d["event_names"]),
            num_classes=int(d["num_classes"]),
            class_bearing=tuple(bool(b) for b in d["class_bearing"]),
            transitions=tuple(
                Transition(tuple(t["source"]), tuple(t["target"])) for t in d["transitions"]
            ),
            stations=tuple(
                StationSpec(
                    s["name"],
                    int(s["n_servers"]),
                    None if s.get("priority") is None else tuple(s["priority"]),
                    bool(s.get("pooled", False)),
                )
                for s in d["stations"]
            ),
            name=d.get("name", "custom"),
        )


def mmn_schema(n_servers: int = 1, num_classes: int = 1, priority: Sequence[int] | None = None) -> EventSchema:
    """Single-station multi-server schema: event 0 is an arrival, event ``j + 1``
    a departure from server ``j``.

    ``priority`` lists classes from highest to lowest priority (non-preemptive);
    ``None`` is FIFO.
    """
    ranks = None
    if priority is not None:
        if sorted(priority) != list(range(num_classes)):
            raise ValueError("priority order must be a permutation of the classes")
        ranks = tuple(int(np.argsort(priority)[c]) for c in range(num_classes))
    names = ["arrival"] + (
        ["departure"] if n_servers == 1 else [f"departure_s{j + 1}" for j in range(n_servers)]
    )
    trans = [Transition(("external",), ("station", 0))] + [
        Transition(("server", 0, j), ("exit",)) for j in range(n_servers)
    ]
    bearing = [num_classes > 1] * len(names)
    tag = "mm1" if (n_servers == 1 and num_classes == 1) else f"mmn{n_servers}x{num_classes}"
    return EventSchema(
        tuple(names), num_classes, tuple(trans), tuple(bearing),
        (StationSpec("queue", n_servers, ranks),), name=tag,
    )


# --------------------------------------------------------------------------
# state and records


@dataclass
class StationState:
    queue: list[int]
    servers: list[int]

    @property
    def busy(self) -> int:
        return sum(1 for s in self.servers if s)

    @property
    def n_in_station(self) -> int:
        return len(self.queue) + self.busy


@dataclass
class SystemState:
    """Queue contents and server occupancy of every station, plus the clock."""

    stations: list[StationState]
    clock: float = 0.0

    @property
    def queue(self) -> list[int]:
        return self.stations[0].queue

    @property
    def servers(self) -> list[int]:
        return self.stations[0].servers

    @property
    def n_in_system(self) -> int:
        return sum(s.n_in_station for s in self.stations)

    def copy(self) -> "SystemState":
        return SystemState([StationState(list(s.queue), list(s.servers)) for s in self.stations], self.clock)

    def to_dict(self) -> dict:
        return {
            "stations": [{"queue": list(s.queue), "servers": list(s.servers)} for s in self.stations],
            "clock": self.clock,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemState":
        return cls(
            [StationState(list(s["queue"]), list(s["servers"])) for s in d["stations"]],
            float(d.get("clock", 0.0)),
        )

    def encode(self, max_queue: int = DEFAULT_MAX_QUEUE) -> np.ndarray:
        """Flat vector: per station, server codes then a ``max_queue`` queue
        vector (0 empty, ``c + 1`` for class ``c``). Longer queues are cut."""
        parts = []
        for st in self.stations:
            parts.extend(st.servers)
            q = [c + 1 for c in st.queue[:max_queue]]
            parts.extend(q + [0] * (max_queue - len(q)))
        return np.asarray(parts, dtype=float)


def state_with_customers(schema: EventSchema, classes: Sequence[int], station: int = 0) -> SystemState:
    """State where the given customers (in order) entered ``station`` of an
    otherwise empty system: the first ones occupy servers, the rest wait."""
    st = schema.empty_state()
    s = st.stations[station]
    for c in classes:
        if 0 in s.servers:
            s.servers[s.servers.index(0)] = c + 1
        else:
            s.queue.append(c)
    return st


@dataclass(frozen=True)
class EventRecord:
    dt: float
    event: int
    cls: int | None = None


@dataclass
class Trajectory:
    initial_state: SystemState
    records: list[EventRecord]
    meta: dict[str, Any] = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    @property
    def dts(self) -> np.ndarray:
        return np.fromiter((r.dt for r in self.records), float, len(self.records))

    @property
    def event_ids(self) -> np.ndarray:
        return np.fromiter((r.event for r in self.records), int, len(self.records))

    def times(self) -> np.ndarray:
        """Absolute time of each event, starting from the initial clock."""
        return self.initial_state.clock + np.cumsum(self.dts)

    def prefix(self, n: int) -> "Trajectory":
        meta = dict(self.meta)
        if "serials" in meta:
            meta["serials"] = meta["serials"][:n]
        return Trajectory(self.initial_state.copy(), self.records[:n], meta)


# --------------------------------------------------------------------------
# replay engine


@dataclass
class CustomerRecord:
    serial: int
    cls: int
    arrival: float
    service_start: float | None = None
    end: float | None = None
    abandoned: bool = False
    # event index at which the customer arrived
    arrival_index: int = -1


class _Replayer:
    """Mutable replay of a trajectory; tracks customer serials alongside the state.

    When the trajectory carries simulator serials (``meta["serials"]``), a
    same-class abandonment removes exactly the customer that left; otherwise
    the oldest waiting customer of that class is removed.
    """

    def __init__(self, traj: Trajectory, schema: EventSchema, track: bool = False):
        self.schema = schema
        self.state = traj.initial_state.copy()
        if len(self.state.stations) != len(schema.stations):
            raise ValueError("initial state does not match schema stations")
        for st, spec in zip(self.state.stations, schema.stations):
            if len(st.servers) != spec.n_servers:
                raise ValueError("initial state server count does not match schema")
        self.serials = traj.meta.get("serials")
        if self.serials is not None and len(self.serials) != len(traj.records):
            self.serials = None
        self.track = track
        self.customers: dict[int, CustomerRecord] = {}
        # serial bookkeeping mirrors queue/servers; initial customers get negative serials
        self.q_ser: list[list[int]] = []
        self.s_ser: list[list[int | None]] = []
        nxt = -1
        for st in self.state.stations:
            qs = []
            for _ in st.queue:
                qs.append(nxt)
                nxt -= 1
            ss: list[int | None] = []
            for code in st.servers:
                if code:
                    ss.append(nxt)
                    nxt -= 1
                else:
                    ss.append(None)
            self.q_ser.append(qs)
            self.s_ser.append(ss)
        self._auto_serial = 0

    def _next_from_queue(self, s: int) -> int:
        q = self.state.stations[s].queue
        ranks = self.schema.stations[s].priority
        if ranks is None:
            return 0
        best, best_rank = 0, ranks[q[0]]
        for i in range(1, len(q)):
            r = ranks[q[i]]
            if r < best_rank:
                best, best_rank = i, r
        return best

    def _free_server(self, s: int, j: int, clock: float):
        st = self.state.stations[s]
        st.servers[j] = 0
        self.s_ser[s][j] = None
        if st.queue:
            k = self._next_from_queue(s)
            c = st.queue.pop(k)
            ser = self.q_ser[s].pop(k)
            st.servers[j] = c + 1
            self.s_ser[s][j] = ser
            if self.track and ser in self.customers:
                self.customers[ser].service_start = clock

    def _enter(self, s: int, c: int, ser: int, clock: float):
        st = self.state.stations[s]
        if 0 in st.servers:
            j = st.servers.index(0)
            st.servers[j] = c + 1
            self.s_ser[s][j] = ser
            if self.track and ser in self.customers and self.customers[ser].service_start is None:
                self.customers[ser].service_start = clock
        else:
            st.queue.append(c)
            self.q_ser[s].append(ser)

    def apply(self, i: int, rec: EventRecord):
        schema = self.schema
        if not (0 <= rec.event < schema.n_events):
            raise SchemaViolation(i, f"unknown event id {rec.event}")
        if not (rec.dt >= 0.0) or math.isinf(rec.dt):
            raise SchemaViolation(i, f"invalid inter-event time {rec.dt}")
        bearing = schema.class_bearing[rec.event]
        if bearing:
            if rec.cls is None or not (0 <= rec.cls < schema.num_classes):
                raise SchemaViolation(i, f"event {rec.event} needs a class in range, got {rec.cls}")
        elif rec.cls is not None:
            raise SchemaViolation(i, f"event {rec.event} carries no class, got {rec.cls}")
        c = rec.cls if rec.cls is not None else 0
        self.state.clock += rec.dt
        clock = self.state.clock
        given = self.serials[i] if self.serials is not None else None
        tr = schema.transitions[rec.event]
        src = tr.source
        kind = src[0]
        if kind == "external":
            if given is not None:
                ser = given
            else:
                ser = self._auto_serial
                self._auto_serial += 1
            if self.track:
                self.customers[ser] = CustomerRecord(ser, c, clock, arrival_index=i)
            # one station may feed many: resolve after source
        elif kind == "server":
            s, j = src[1], src[2]
            st = self.state.stations[s]
            if not (0 <= j < len(st.servers)) or st.servers[j] == 0:
                raise SchemaViolation(i, f"{schema.event_names[rec.event]} from idle server")
            here = st.servers[j] - 1
            if bearing and schema.strict_classes and here != c:
                raise SchemaViolation(i, f"class {c} departs but server holds class {here}")
            c = here if not bearing else c
            ser = self.s_ser[s][j]
            self._free_server(s, j, clock)
        elif kind == "pool":
            s = src[1]
            st = self.state.stations[s]
            code = c + 1
            j = -1
            if given is not None and given in self.s_ser[s]:
                j = self.s_ser[s].index(given)
                if st.servers[j] != code:
                    j = -1
            if j < 0:
                try:
                    j = st.servers.index(code)
                except ValueError:
                    raise SchemaViolation(i, f"no class-{c} customer in service at {schema.stations[s].name}") from None
            ser = self.s_ser[s][j]
            self._free_server(s, j, clock)
        elif kind == "queue":
            s = src[1]
            st = self.state.stations[s]
            k = -1
            if given is not None and given in self.q_ser[s]:
                k = self.q_ser[s].index(given)
                if st.queue[k] != c:
                    k = -1
            if k < 0:
                try:
                    k = st.queue.index(c)
                except ValueError:
                    raise SchemaViolation(i, f"no class-{c} customer waiting at {schema.stations[s].name}") from None
            st.queue.pop(k)
            ser = self.q_ser[s].pop(k)
            if self.track and ser in self.customers:
                self.customers[ser].abandoned = True
        else:
            raise ValueError(f"unknown source kind {kind}")

        if tr.target[0] == "station":
            self._enter(tr.target[1], c, ser, clock)
        elif self.track and ser in self.customers:
            self.customers[ser].end = clock


def replay(traj: Trajectory, schema: EventSchema) -> Iterator[SystemState]:
    """Yield the (shared, mutated) state after each record."""
    r = _Replayer(traj, schema)
    for i, rec in enumerate(traj.records):
        r.apply(i, rec)
        yield r.state


def reconstruct_states(traj: Trajectory, schema: EventSchema) -> list[SystemState]:
    """State after each event; element ``k`` is the initial state with the
    first ``k + 1`` records applied."""
    return [s.copy() for s in replay(traj, schema)]


def system_counts(traj: Trajectory, schema: EventSchema) -> list[int]:
    return [s.n_in_system for s in replay(traj, schema)]


def is_valid(traj: Trajectory, schema: EventSchema) -> bool:
    try:
        for _ in replay(traj, schema):
            pass
    except SchemaViolation:
        return False
    return True


def first_violation(traj: Trajectory, schema: EventSchema) -> SchemaViolation | None:
    try:
        for _ in replay(traj, schema):
            pass
    except SchemaViolation as exc:
        return exc
    return None


def customer_log(traj: Trajectory, schema: EventSchema) -> list[CustomerRecord]:
    """Per-customer arrival / service-start / end times from replay bookkeeping.

    Only customers that arrived during the table are listed, in arrival order.
    """
    r = _Replayer(traj, schema, track=True)
    for i, rec in enumerate(traj.records):
        r.apply(i, rec)
    return sorted(r.customers.values(), key=lambda cr: (cr.arrival_index, cr.serial))


# --------------------------------------------------------------------------
# metric extraction


def _arrival_indices(traj: Trajectory, schema: EventSchema, cls: int | None) -> list[int]:
    arr = set(schema.arrival_events)
    out = []
    for i, rec in enumerate(traj.records):
        if rec.event in arr and (cls is None or rec.cls == cls):
            out.append(i)
    return out


def extract_interarrival_times(traj: Trajectory, schema: EventSchema, cls: int | None = None) -> list[float]:
    """Sum of inter-event times between consecutive (optionally same-class) arrivals."""
    idx = _arrival_indices(traj, schema, cls)
    if len(idx) < 2:
        return []
    csum = np.concatenate([[0.0], np.cumsum(traj.dts)])
    # record i (0-based) ends at csum[i + 1]
    return [float(csum[b + 1] - csum[a + 1]) for a, b in zip(idx[:-1], idx[1:])]


def _require_single_fifo(schema: EventSchema):
    if not schema.is_single_server_fifo():
        raise UnsupportedDiscipline(
            "index formulas need a single-server FIFO system; use customer_metrics instead"
        )


def extract_service_times(traj: Trajectory, schema: EventSchema) -> list[float]:
    """Service times of departing customers on a single-server FIFO table.

    The service of the customer leaving at departure ``D_{j+1}`` starts at the
    previous departure ``D_j``, or, if the system emptied in between, at the
    arrival that ended the idle spell. The first departure counts only when
    the table started with an idle server.
    """
    _require_single_fifo(schema)
    n0 = traj.initial_state.n_in_system
    dep = set(schema.exit_events)
    csum = np.concatenate([[0.0], np.cumsum(traj.dts)])
    counts = system_counts(traj, schema)
    out = []
    # start marker: index (in csum coordinates) where the current service began
    start, start_known = None, False
    prev_count = n0
    for i, rec in enumerate(traj.records):
        if prev_count == 0 and counts[i] == 1:
            # arrival into an empty system starts service now
            start, start_known = i + 1, True
        if rec.event in dep:
            if start_known:
                out.append(float(csum[i + 1] - csum[start]))
            start, start_known = i + 1, True
            if counts[i] == 0:
                start, start_known = None, False
        prev_count = counts[i]
    return out


def extract_waiting_times(traj: Trajectory, schema: EventSchema, q0: int | None = None) -> list[float]:
    """Delay from arrival to service start for each arriving customer.

    ``q0`` is the number of customers waiting in line at the start (default:
    read from the initial state); a customer in service at the start counts
    as one more predecessor. Customers whose service never starts inside the
    table are skipped.
    """
    _require_single_fifo(schema)
    init = traj.initial_state
    in_service = init.stations[0].busy
    if q0 is None:
        q0 = len(init.queue)
    dep = set(schema.exit_events)
    arr = set(schema.arrival_events)
    csum = np.concatenate([[0.0], np.cumsum(traj.dts)])
    arrivals, departures = [], []
    for i, rec in enumerate(traj.records):
        if rec.event in arr:
            arrivals.append(i)
        elif rec.event in dep:
            departures.append(i)
    ahead = q0 + in_service
    out = []
    for j, a in enumerate(arrivals):
        k = ahead + j  # departures needed before this customer can start
        if k == 0:
            start = a
        else:
            if k - 1 >= len(departures):
                continue
            start = max(a, departures[k - 1])
        out.append(float(csum[start + 1] - csum[a + 1]))
    return out


@dataclass
class CustomerMetrics:
    interarrival: list[float]
    service: list[float]
    waiting: list[float]
    # (start time, value) pairs for time bucketing
    timed: dict[str, list[tuple[float, float]]]


def customer_metrics(traj: Trajectory, schema: EventSchema, cls: int | None = None,
                     station: int | None = None) -> CustomerMetrics:
    """Inter-arrival, service and waiting times from replay bookkeeping.

    Works for any schema. Service times are measured at the last station a
    customer was served at (``end - service_start``), which for the two-stage
    call center is the agent stage. Waiting time counts from the arrival to the
    table until service start at that stage; abandoning customers have no
    waiting time.
    """
    log = customer_log(traj, schema)
    if cls is not None:
        log = [c for c in log if c.cls == cls]
    arr_times = [c.arrival for c in log]
    ia = [b - a for a, b in zip(arr_times[:-1], arr_times[1:])]
    timed = {"interarrival": list(zip(arr_times[:-1], ia)), "service": [], "waiting": []}
    service, waiting = [], []
    for c in log:
        if c.abandoned or c.service_start is None:
            continue
        w = c.service_start - c.arrival
        waiting.append(w)
        timed["waiting"].append((c.arrival, w))
        if c.end is not None:
            s = c.end - c.service_start
            service.append(s)
            timed["service"].append((c.service_start, s))
    return CustomerMetrics(ia, service, waiting, timed)


def hourly_average(trajs: Iterable[Trajectory], schema: EventSchema, metric: str,
                   hour_len: float = 1.0, cls: int | None = None) -> list[tuple[int, float]]:
    """Mean of a per-customer metric bucketed by the time the sample begins.

    Inter-arrival samples begin at the earlier arrival, service samples at
    service start, waits at arrival. Empty buckets are omitted.
    """
    if metric not in ("interarrival", "service", "waiting"):
        raise ValueError(f"unknown metric {metric!r}")
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for traj in trajs:
        for t0, v in customer_metrics(traj, schema, cls).timed[metric]:
            h = int(math.floor(t0 / hour_len))
            sums[h] = sums.get(h, 0.0) + v
            counts[h] = counts.get(h, 0) + 1
    return [(h, sums[h] / counts[h]) for h in sorted(sums)]


def lindley_waits(interarrivals: Sequence[float], services: Sequence[float]) -> list[float]:
    """FIFO single-server waits W_{j+1} = max(0, W_j + S_j - A_{j+1}), W_1 = 0."""
    w = [0.0]
    for s, a in zip(services, interarrivals):
        w.append(max(0.0, w[-1] + s - a))
    return w


# --------------------------------------------------------------------------
# JSONL


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trajectory_header(traj: Trajectory, schema: EventSchema) -> dict:
    return {"schema": schema.to_dict(), "initial_state": traj.initial_state.to_dict(), "meta": traj.meta}


def dumps_trajectory(traj: Trajectory, schema: EventSchema) -> str:
    lines = [json.dumps(trajectory_header(traj, schema), sort_keys=False)]
    for r in traj.records:
        c = "null" if r.cls is None else str(int(r.cls))
        lines.append(f'{{"dt": {_fmt(r.dt)}, "e": {int(r.event)}, "c": {c}}}')
    return "\n".join(lines) + "\n"


def loads_trajectory(text: str) -> tuple[Trajectory, EventSchema]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = json.loads(lines[0])
    schema = EventSchema.from_dict(head["schema"])
    recs = []
    for ln in lines[1:]:
        d = json.loads(ln)
        recs.append(EventRecord(float(d["dt"]), int(d["e"]), None if d["c"] is None else int(d["c"])))
    return Trajectory(SystemState.from_dict(head["initial_state"]), recs, head.get("meta") or {}), schema


def write_jsonl(path, trajs: Sequence[Trajectory], schema: EventSchema | Sequence[EventSchema]):
    """Write trajectories back to back; each starts with its own header line.

    ``schema`` is shared, or one per trajectory.
    """
    schemas = [schema] * len(trajs) if isinstance(schema, EventSchema) else list(schema)
    with open(path, "w") as fh:
        for t, s in zip(trajs, schemas):
            fh.write(dumps_trajectory(t, s))


def read_jsonl_pairs(path) -> list[tuple[Trajectory, EventSchema]]:
    """Every trajectory with the schema from its own header."""
    out = []
    block: list[str] = []
    with open(path) as fh:
        for ln in fh:
            if not ln.strip():
                continue
            if ln.lstrip().startswith('{"schema"'):
                if block:
                    out.append(loads_trajectory("\n".join(block)))
                block = [ln]
            else:
                block.append(ln)
    if block:
        out.append(loads_trajectory("\n".join(block)))
    return out


def read_jsonl(path) -> tuple[list[Trajectory], EventSchema | None]:
    """Trajectories and the schema of the last one."""
    pairs = read_jsonl_pairs(path)
    return [t for t, _ in pairs], (pairs[-1][1] if pairs else None)


def deepcopy_traj(traj: Trajectory) -> Trajectory:
    return copy.deepcopy(traj)

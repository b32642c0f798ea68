"""Exact next-event laws for Markovian queues, optimal losses, and the
Bayesian bootstrap baseline for M/M/1 with uncertain rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .events import (
    EventRecord,
    EventSchema,
    SystemState,
    Trajectory,
    extract_service_times,
    extract_waiting_times,
    mmn_schema,
    replay,
)
from .queuesim import PriorConfig
from .rng import Stream, child_seed


class InvalidState(ValueError):
    pass


class NonPositiveRate(ValueError):
    pass


class DegeneratePosterior(RuntimeError):
    pass


# --------------------------------------------------------------------------
# M/M/n conditionals


@dataclass
class OracleConditional:
    event_probs: np.ndarray
    # row e: class distribution given event e
    class_probs_given_event: np.ndarray
    rate: float


def mmn_conditional(state: SystemState, lambdas: Sequence[float], nus: Sequence[float]) -> OracleConditional:
    """Next-event law of a multi-class M/M/n queue in ``state``.

    Event 0 is an arrival, event ``j + 1`` a departure from server ``j``.
    """
    K = len(lambdas)
    servers = state.servers
    lam = float(sum(lambdas))
    busy = np.zeros(len(servers))
    cls_rows = np.zeros((len(servers) + 1, K))
    cls_rows[0] = np.asarray(lambdas, dtype=float) / lam
    for j, code in enumerate(servers):
        if not 0 <= code <= K:
            raise InvalidState(f"server {j} has occupancy code {code}, expected 0..{K}")
        if code:
            busy[j] = nus[code - 1]
            cls_rows[j + 1, code - 1] = 1.0
        else:
            cls_rows[j + 1] = 1.0 / K  # unreachable event; any valid distribution
    r = lam + busy.sum()
    probs = np.concatenate([[lam], busy]) / r
    return OracleConditional(probs, cls_rows, float(r))


def mm1_optimal_losses(lam: float, nu: float) -> tuple[float, float]:
    """Long-run optimal (event log-loss, squared inter-event time error) for M/M/1.

    ``lam == nu`` falls in the saturated branch; the finite-horizon value at
    that boundary is noticeably lower than this limit.
    """
    if lam <= 0 or nu <= 0:
        raise NonPositiveRate("rates must be positive")
    s = lam + nu
    if lam < nu:
        event = -0.5 * ((lam / nu) * math.log(lam / s) + math.log(nu / s))
        time = nu / (2.0 * lam**2 * s)
    else:
        event = -(lam / s) * math.log(lam / s) - (nu / s) * math.log(nu / s)
        time = 1.0 / s**2
    return event, time


@dataclass
class StepTerms:
    """Per-step teacher-forced quantities for one trajectory."""

    event_nll: np.ndarray
    class_nll: np.ndarray
    # predicted mean of the inter-event time
    pred_mean: np.ndarray
    time_nll: np.ndarray
    dt: np.ndarray

    @property
    def time_sq(self) -> np.ndarray:
        return (self.pred_mean - self.dt) ** 2

    @classmethod
    def from_rates(cls, event_nll, class_nll, rate, dt) -> "StepTerms":
        rate = np.asarray(rate, dtype=float)
        dt = np.asarray(dt, dtype=float)
        return cls(np.asarray(event_nll), np.asarray(class_nll), 1.0 / rate, -(np.log(rate) - rate * dt), dt)


def mean_terms(terms: Sequence[StepTerms]) -> dict[str, np.ndarray]:
    """Concatenated per-step arrays; every average loss reduces from these."""
    return {
        "event": np.concatenate([t.event_nll for t in terms]),
        "class": np.concatenate([t.class_nll for t in terms]),
        "time": np.concatenate([t.time_sq for t in terms]),
        "time_nll": np.concatenate([t.time_nll for t in terms]),
    }


class MmnOracle:
    """The exact M/M/n predictor, usable wherever a trained model is."""

    def __init__(self, lambdas: Sequence[float], nus: Sequence[float], schema: EventSchema):
        self.lambdas = [float(x) for x in lambdas]
        self.nus = [float(x) for x in nus]
        self.schema = schema

    def step_terms(self, traj: Trajectory) -> StepTerms:
        n = len(traj.records)
        ev = np.empty(n)
        cl = np.zeros(n)
        rate = np.empty(n)
        lam = sum(self.lambdas)
        lam_frac = [x / lam for x in self.lambdas]
        nus = self.nus
        # walk states: the state *before* record i is the previous yield
        state = traj.initial_state.copy()
        gen = replay(traj, self.schema)
        for i, rec in enumerate(traj.records):
            servers = state.servers
            busy = 0.0
            for code in servers:
                if code:
                    busy += nus[code - 1]
            r = lam + busy
            rate[i] = r
            if rec.event == 0:
                ev[i] = -math.log(lam / r)
                if rec.cls is not None:
                    cl[i] = -math.log(lam_frac[rec.cls])
            else:
                code = servers[rec.event - 1]
                # an idle server here makes replay raise on the next line
                ev[i] = -math.log(nus[code - 1] / r) if code else math.inf
            state = next(gen)
        return StepTerms.from_rates(ev, cl, rate, traj.dts)

    def step_terms_many(self, trajs: Sequence[Trajectory]) -> list[StepTerms]:
        return [self.step_terms(t) for t in trajs]


def empirical_optimal_losses(trajs: Sequence[Trajectory], lambdas: Sequence[float], nus: Sequence[float],
                             schema: EventSchema | None = None) -> tuple[float, float, float]:
    """Average oracle (event, time, class) losses over every step of every table.

    Without ``schema``, a FIFO M/M/n schema is built with the server count of
    the first table's initial state.
    """
    if schema is None:
        n = len(trajs[0].initial_state.servers) if trajs else 1
        schema = mmn_schema(n, len(lambdas))
    arr = mean_terms(MmnOracle(lambdas, nus, schema).step_terms_many(trajs))
    return float(arr["event"].mean()), float(arr["time"].mean()), float(arr["class"].mean())


# --------------------------------------------------------------------------
# grid posterior for M/M/1


@dataclass
class MM1Stats:
    """Sufficient statistics of an M/M/1 path: the log-likelihood is
    ``A log(lam) + D log(nu) - lam * T - nu * B``."""

    arrivals: int = 0
    departures: int = 0
    total_time: float = 0.0
    busy_time: float = 0.0
    n_in_system: int = 0

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "MM1Stats":
        st = cls(n_in_system=traj.initial_state.n_in_system)
        st.add(traj.records)
        return st

    def add(self, records: Sequence[EventRecord]):
        for rec in records:
            self.step(rec.dt, rec.event)

    def step(self, dt: float, event: int):
        self.total_time += dt
        if self.n_in_system > 0:
            self.busy_time += dt
        if event == 0:
            self.arrivals += 1
            self.n_in_system += 1
        else:
            if self.n_in_system == 0:
                raise InvalidState("departure from an empty M/M/1 system")
            self.departures += 1
            self.n_in_system -= 1


@dataclass
class GridPosterior:
    """Posterior over (lambda, nu) on a rectangular grid.

    Grid points are cell midpoints of the prior box, so every point lies
    inside the prior support. The prior is uniform and independent, hence
    the posterior factorizes into a lambda marginal and a nu marginal;
    ``log_weights`` is their outer sum.
    """

    lambda_grid: np.ndarray
    nu_grid: np.ndarray
    log_lam: np.ndarray
    log_nu: np.ndarray
    normalized: bool = False
    stats: MM1Stats = field(default_factory=MM1Stats)

    @classmethod
    def from_prior(cls, prior: PriorConfig, size: int = 101) -> "GridPosterior":
        def mids(lo, hi):
            h = (hi - lo) / size
            return lo + h * (np.arange(size) + 0.5)

        lg = mids(*prior.lambda_range)
        ng = mids(*prior.nu_range)
        post = cls(lg, ng, np.zeros(size), np.zeros(size))
        post.normalize()
        return post

    @classmethod
    def point(cls, lam: float, nu: float) -> "GridPosterior":
        post = cls(np.array([lam]), np.array([nu]), np.zeros(1), np.zeros(1))
        post.normalize()
        return post

    @property
    def log_weights(self) -> np.ndarray:
        return self.log_lam[:, None] + self.log_nu[None, :]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def normalize(self):
        for name in ("log_lam", "log_nu"):
            v = getattr(self, name)
            m = np.max(v)
            if not np.isfinite(m):
                raise DegeneratePosterior("all posterior weights underflowed")
            z = m + np.log(np.sum(np.exp(v - m)))
            setattr(self, name, v - z)
        self.normalized = True

    def copy(self) -> "GridPosterior":
        return GridPosterior(self.lambda_grid.copy(), self.nu_grid.copy(), self.log_lam.copy(),
                             self.log_nu.copy(), self.normalized, MM1Stats(**vars(self.stats)))

    def mean(self) -> tuple[float, float]:
        return (float(np.exp(self.log_lam) @ self.lambda_grid), float(np.exp(self.log_nu) @ self.nu_grid))

    def argmax(self) -> tuple[float, float]:
        return float(self.lambda_grid[np.argmax(self.log_lam)]), float(self.nu_grid[np.argmax(self.log_nu)])

    def sample(self, rs: Stream) -> tuple[float, float]:
        i = _sample_log(self.log_lam, rs)
        j = _sample_log(self.log_nu, rs)
        return float(self.lambda_grid[i]), float(self.nu_grid[j])

    def to_csv(self, path):
        w = self.weights
        with open(path, "w") as fh:
            fh.write("lambda,nu,weight\n")
            for i, la in enumerate(self.lambda_grid):
                for j, nu in enumerate(self.nu_grid):
                    fh.write(f"{la:.17g},{nu:.17g},{w[i, j]:.17g}\n")


def _sample_log(logp: np.ndarray, rs: Stream) -> int:
    p = np.exp(logp - logp.max())
    c = np.cumsum(p)
    i = int(np.searchsorted(c, rs.uniform() * c[-1], side="right"))
    return min(i, len(p) - 1)


def _loglik_terms(post: GridPosterior, a: int, d: int, t: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    lg, ng = post.lambda_grid, post.nu_grid
    return a * np.log(lg) - lg * t, d * np.log(ng) - ng * b


def posterior_update(post: GridPosterior, history: Trajectory | Sequence[EventRecord],
                     n_in_system: int | None = None) -> GridPosterior:
    """Add the exact M/M/1 path log-likelihood of ``history`` and renormalize.

    ``history`` is either a trajectory (its initial state supplies the
    occupancy) or records continuing from the occupancy the posterior last
    saw (``n_in_system`` overrides it).
    """
    out = post.copy()
    if isinstance(history, Trajectory):
        records = history.records
        start = history.initial_state.n_in_system
    else:
        records = list(history)
        start = out.stats.n_in_system
    if n_in_system is not None:
        start = n_in_system
    st = MM1Stats(n_in_system=start)
    st.add(records)
    dl, dn = _loglik_terms(out, st.arrivals, st.departures, st.total_time, st.busy_time)
    out.log_lam = out.log_lam + dl
    out.log_nu = out.log_nu + dn
    out.stats = MM1Stats(
        out.stats.arrivals + st.arrivals,
        out.stats.departures + st.departures,
        out.stats.total_time + st.total_time,
        out.stats.busy_time + st.busy_time,
        st.n_in_system,
    )
    out.normalize()
    return out


# --------------------------------------------------------------------------
# Bayesian bootstrap


def _mm1_step(lam: float, nu: float, q: int, rs: Stream) -> tuple[float, int]:
    r = lam + (nu if q > 0 else 0.0)
    dt = rs.exponential(r)
    ev = 0 if rs.uniform() * r < lam else 1
    return dt, ev


def performance_metric(traj: Trajectory, n_hist: int, f: str) -> float:
    """Trajectory-level average of ``f`` over the part after the first
    ``n_hist`` records (inter-arrival gaps ending, services ending, or
    customers arriving in the continuation)."""
    schema = mmn_schema(1, 1)
    if f == "interarrival":
        arr = [i for i, r in enumerate(traj.records) if r.event == 0]
        csum = np.concatenate([[0.0], np.cumsum(traj.dts)])
        vals = [csum[b + 1] - csum[a + 1] for a, b in zip(arr[:-1], arr[1:]) if b >= n_hist]
    elif f == "service":
        deps = [i for i, r in enumerate(traj.records) if r.event != 0]
        svc = extract_service_times(traj, schema)
        # extract_service_times skips the first departure only if the table
        # started busy; align from the end
        deps = deps[len(deps) - len(svc):]
        vals = [s for s, i in zip(svc, deps) if i >= n_hist]
    elif f == "waiting":
        arr = [i for i, r in enumerate(traj.records) if r.event == 0]
        waits = extract_waiting_times(traj, schema)
        vals = [w for w, i in zip(waits, arr) if i >= n_hist]
    else:
        raise ValueError(f"unknown performance metric {f!r}")
    return float(np.mean(vals)) if len(vals) else float("nan")


def bayesian_bootstrap(history: Trajectory, prior: PriorConfig | GridPosterior, J: int, N: int, f: str,
                       seed: int, mode: str = "per_step", grid_size: int = 101,
                       return_trajectories: bool = False):
    """Posterior-predictive samples of a performance metric for M/M/1.

    ``mode="per_step"`` re-draws the rates from the posterior on the growing
    history before every new event; ``mode="block"`` draws them once from
    the posterior given the history and simulates the rest with them. Both
    target the same predictive law.

    Returns a list of ``J`` metric values (and the trajectories if asked).
    """
    n = len(history.records)
    if J < 1:
        raise ValueError("J must be >= 1")
    if N <= n:
        raise ValueError("N must exceed the history length")
    if mode not in ("per_step", "block"):
        raise ValueError(f"unknown mode {mode!r}")
    base = prior if isinstance(prior, GridPosterior) else GridPosterior.from_prior(prior, grid_size)
    post0 = posterior_update(base, history)
    s0 = post0.stats
    lg, ng = post0.lambda_grid, post0.nu_grid
    log_lg, log_ng = np.log(lg), np.log(ng)
    prior_l = base.log_lam
    prior_n = base.log_nu
    out, trajs = [], []
    for j in range(J):
        rs = Stream(child_seed(seed, j))
        a, d, T, B, q = s0.arrivals, s0.departures, s0.total_time, s0.busy_time, s0.n_in_system
        recs: list[EventRecord] = []
        if mode == "block":
            lam, nu = post0.sample(rs)
        for _ in range(N - n):
            if mode == "per_step":
                i = _sample_log(prior_l + a * log_lg - lg * T, rs)
                k = _sample_log(prior_n + d * log_ng - ng * B, rs)
                lam, nu = float(lg[i]), float(ng[k])
            dt, ev = _mm1_step(lam, nu, q, rs)
            T += dt
            if q > 0:
                B += dt
            if ev == 0:
                a += 1
                q += 1
            else:
                d += 1
                q -= 1
            recs.append(EventRecord(dt, ev, None))
        full = Trajectory(history.initial_state.copy(), list(history.records) + recs, {"generator": f"bootstrap_{mode}"})
        out.append(performance_metric(full, n, f))
        if return_trajectories:
            trajs.append(full)
    return (out, trajs) if return_trajectories else out

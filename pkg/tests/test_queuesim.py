import math

import numpy as np
import pytest
from scipy import stats

from queueseq.events import (
    customer_log,
    customer_metrics,
    dumps_trajectory,
    extract_interarrival_times,
    hourly_average,
    is_valid,
    mmn_schema,
    replay,
)
from queueseq.queuesim import (
    NETWORK_EVENTS,
    CallCenterConfig,
    Dist,
    MmnConfig,
    MtMnConfig,
    PolicyParams,
    PriorConfig,
    UnknownNetwork,
    counterfactual_config,
    mm1_generator,
    sample_dataset,
    simulate_callcenter,
    simulate_counterfactual,
    simulate_gg1,
    simulate_mmn,
    simulate_mt_mn,
    simulate_threenode,
    threenode_schema,
)


def test_mm1_empty_fraction():
    t = simulate_mmn(MmnConfig([0.5], [1.0]), 200_000, 1)
    sch = mmn_schema(1, 1)
    occupied = np.fromiter((s.n_in_system > 0 for s in replay(t, sch)), bool, len(t))
    # time-average occupancy, weighting the state before each record by its dt
    before = np.concatenate([[False], occupied[:-1]])
    frac_empty = t.dts[~before].sum() / t.dts.sum()
    assert frac_empty == pytest.approx(0.5, abs=0.01)


def test_priority_class_waits_less():
    cfg = MmnConfig([0.35, 0.35], [1.0, 1.0], 1, priority=[0, 1])
    t = simulate_mmn(cfg, 100_000, 2)
    sch = cfg.schema()
    w0 = np.mean(customer_metrics(t, sch, cls=0).waiting)
    w1 = np.mean(customer_metrics(t, sch, cls=1).waiting)
    assert w0 < w1


def test_simulators_are_deterministic():
    cfg = MmnConfig([0.2, 0.4], [1.0, 0.8], 3)
    a = dumps_trajectory(simulate_mmn(cfg, 2000, 9), cfg.schema())
    b = dumps_trajectory(simulate_mmn(cfg, 2000, 9), cfg.schema())
    assert a == b
    assert a != dumps_trajectory(simulate_mmn(cfg, 2000, 10), cfg.schema())


def test_work_conservation():
    for cfg in (MmnConfig([1.0, 1.5], [1.0, 1.0], 3), MmnConfig([1.0, 1.5], [1.0, 1.0], 3, priority=[1, 0])):
        t = simulate_mmn(cfg, 5000, 4)
        for s in replay(t, cfg.schema()):
            assert not (s.queue and 0 in s.servers)


def test_mm1_interarrivals_exponential():
    t = simulate_mmn(MmnConfig([0.5], [1.0]), 200_000, 3)
    ia = extract_interarrival_times(t, mmn_schema(1, 1))
    assert len(ia) > 90_000
    assert stats.kstest(ia, "expon", args=(0, 2.0)).pvalue > 0.01


def test_gg1_utilization():
    t = simulate_gg1(Dist.uniform(3, 6), Dist.uniform(2, 4), 200_000, 5)
    m = customer_metrics(t, mmn_schema(1, 1))
    assert sum(m.service) / t.dts.sum() == pytest.approx(2 / 3, abs=0.01)


def test_dd1_underload_never_waits():
    t = simulate_gg1(Dist.deterministic(2.0), Dist.deterministic(1.0), 1000, 0)
    assert max(customer_metrics(t, mmn_schema(1, 1)).waiting) == 0.0


def test_gg1_valid():
    t = simulate_gg1(Dist.uniform(0.5, 1.5), Dist.uniform(0.5, 1.4), 5000, 1)
    assert is_valid(t, mmn_schema(1, 1))


def test_distribution_validation():
    with pytest.raises(ValueError):
        Dist.exponential(0.0)
    with pytest.raises(ValueError):
        Dist.uniform(2, 1)
    with pytest.raises(ValueError):
        Dist.empirical([])
    d = Dist.empirical([3.0, 1.0, 2.0])
    assert d.samples == (1.0, 2.0, 3.0)
    assert Dist.from_dict(d.to_dict()) == d


def test_mt_mn_hourly_interarrival():
    cfg = MtMnConfig([8, 8, 8, 8, 8, 14, 15, 16, 17, 18, 19, 18, 17, 16, 15, 11, 11], 1.6, 11)
    trajs = [simulate_mt_mn(cfg, 180, s) for s in range(200)]
    prof = dict(hourly_average(trajs, cfg.schema(), "interarrival"))
    assert prof[5] == pytest.approx(1 / 14, rel=0.15)
    assert prof[0] == pytest.approx(1 / 8, rel=0.15)


def test_constant_profile_matches_mmn():
    n = 3
    a = simulate_mt_mn(MtMnConfig([2.0] * 4, 1.0, n), 40_000, 1)
    b = simulate_mmn(MmnConfig([2.0], [1.0], n), 40_000, 2)
    sch = mmn_schema(n, 1)
    wa = customer_metrics(a, sch).waiting
    wb = customer_metrics(b, sch).waiting
    assert stats.ks_2samp(wa[:5000], wb[:5000]).pvalue > 0.01


def test_zero_rate_hour_has_no_arrivals():
    cfg = MtMnConfig([5.0, 0.0, 5.0], 20.0, 2)
    t = simulate_mt_mn(cfg, 400, 3)
    times = t.times()
    arr = times[t.event_ids == 0]
    assert not np.any((arr >= 1.0) & (arr < 2.0))


def test_counterfactual_c0_is_mt_mn():
    base = MtMnConfig([3.0, 4.0, 5.0], 3.5, 4)
    a = simulate_counterfactual(PolicyParams(0.0, 4), 300, 7, base)
    b = simulate_mt_mn(base, 300, 7)
    assert a.records == b.records
    assert a.meta["policy"] == {"c": 0.0, "N": 4}


def test_counterfactual_clipping():
    base = MtMnConfig([3.0, 1.0, 5.0], 3.5, 2)
    cfg = counterfactual_config(PolicyParams(-1.0, 2), base)
    assert cfg.hourly_rates == [2.0, 0.0, 4.0]
    t = simulate_counterfactual(PolicyParams(-1.0, 2), 400, 1, base)
    arr = t.times()[t.event_ids == 0]
    assert not np.any((arr >= 1.0) & (arr < 2.0))


def test_counterfactual_staffing_ordering():
    def mean_wait(N):
        sch = mmn_schema(N, 1)
        w = [x for s in range(40) for x in customer_metrics(simulate_counterfactual(PolicyParams(2.0, N), 1500, s), sch).waiting]
        return np.mean(w)

    assert mean_wait(2) > mean_wait(10)


def test_callcenter_infinite_patience():
    cfg = CallCenterConfig(patience_means_sec=[math.inf] * 6, total_arrival_rate=1 / 20)
    t = simulate_callcenter(cfg, 20_000, 1)
    assert 2 not in set(t.event_ids.tolist())


def test_callcenter_valid_and_abandon_only_waiting():
    cfg = CallCenterConfig()
    t = simulate_callcenter(cfg, 20_000, 2)
    sch = cfg.schema()
    assert is_valid(t, sch)
    # serials waiting for an agent: joined after the VRU, not yet picked up
    waiting, seen_abandon = set(), 0
    log = {c.serial: c for c in customer_log(t, sch)}
    for rec, ser in zip(t.records, t.meta["serials"]):
        if rec.event == 1:
            waiting.add(ser)
        elif rec.event == 2:
            assert ser in waiting
            assert log[ser].abandoned
            waiting.discard(ser)
            seen_abandon += 1
        elif rec.event >= 3:
            waiting.discard(ser)
    assert seen_abandon > 0


def test_callcenter_priority_serves_high_first():
    cfg = CallCenterConfig(total_arrival_rate=1 / 25)
    t = simulate_callcenter(cfg, 60_000, 3)
    sch = cfg.schema()
    hi = np.mean([w for c in cfg.high_priority_classes for w in customer_metrics(t, sch, cls=c).waiting])
    lo = np.mean([w for c in (0, 2, 3, 5) for w in customer_metrics(t, sch, cls=c).waiting])
    assert hi < lo


@pytest.mark.parametrize("nid", [1, 2, 3, 4])
def test_threenode_respects_topology(nid):
    t = simulate_threenode(nid, 3000, nid)
    assert set(t.event_ids.tolist()) <= NETWORK_EVENTS[nid]
    assert is_valid(t, threenode_schema())
    assert t.meta["network_id"] == nid


def test_tandem_has_no_1_to_3_routing():
    t = simulate_threenode(1, 5000, 0)
    assert 4 not in set(t.event_ids.tolist())


def test_threenode_marginals_differ():
    counts = np.array([np.bincount(simulate_threenode(k, 4000, k).event_ids, minlength=9) for k in (1, 2, 3, 4)])
    counts = counts[:, counts.sum(0) > 0]
    assert stats.chi2_contingency(counts).pvalue < 0.01


def test_unknown_network():
    with pytest.raises(UnknownNetwork):
        simulate_threenode(5, 10, 0)


def test_dataset_without_prior_shares_theta():
    ds = sample_dataset(mm1_generator(0.5, 1.0), 5, 20, 0)
    assert {(t.meta["theta"]["lambda"], t.meta["theta"]["nu"]) for t in ds} == {(0.5, 1.0)}
    assert len({tuple(t.records) for t in ds}) == 5


def test_dataset_prior_mean():
    ds = sample_dataset(mm1_generator(), 10_000, 1, 4, PriorConfig())
    lam = np.array([t.meta["theta"]["lambda"] for t in ds])
    nu = np.array([t.meta["theta"]["nu"] for t in ds])
    assert lam.mean() == pytest.approx(2.0, abs=0.02)
    assert nu.min() >= 3.0 and nu.max() <= 6.0


def test_prior_validation():
    with pytest.raises(ValueError):
        PriorConfig(lambda_range=(2.0, 1.0))

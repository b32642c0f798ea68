import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from queueseq.events import (
    EventRecord,
    SchemaViolation,
    Trajectory,
    UnsupportedDiscipline,
    customer_metrics,
    dumps_trajectory,
    extract_interarrival_times,
    extract_service_times,
    extract_waiting_times,
    first_violation,
    hourly_average,
    is_valid,
    lindley_waits,
    loads_trajectory,
    mmn_schema,
    read_jsonl,
    reconstruct_states,
    state_with_customers,
    system_counts,
    write_jsonl,
)
from queueseq.queuesim import MmnConfig, simulate_mmn

ARR, DEP = 0, 1
MM1 = mmn_schema(1, 1)


def table(events, dts=None, init=None):
    dts = dts or [1.0] * len(events)
    st0 = init if init is not None else MM1.empty_state()
    return Trajectory(st0, [EventRecord(t, e) for t, e in zip(dts, events)])


def test_counts_from_two_customers():
    init = state_with_customers(MM1, [0, 0])
    assert system_counts(table([ARR, DEP, DEP], init=init), MM1) == [3, 2, 1]


def test_departure_from_empty_system_is_a_violation():
    with pytest.raises(SchemaViolation) as exc:
        reconstruct_states(table([DEP]), MM1)
    assert exc.value.index == 0


def test_hand_replay_counts():
    assert system_counts(table([ARR, ARR, DEP, ARR, DEP, DEP]), MM1) == [1, 2, 1, 2, 1, 0]


def test_violation_reported_at_first_bad_record():
    t = table([ARR, DEP, DEP, ARR])
    assert not is_valid(t, MM1)
    assert first_violation(t, MM1).index == 2


def test_states_are_snapshots():
    states = reconstruct_states(table([ARR, ARR, DEP]), MM1)
    assert [s.servers for s in states] == [[1], [1], [1]]
    assert [list(s.queue) for s in states] == [[], [0], []]
    assert states[-1].clock == pytest.approx(3.0)


def test_interarrival_sum_between_arrivals():
    assert extract_interarrival_times(table([ARR, ARR, DEP], [1.0, 0.5, 0.3]), MM1) == [0.5]


def test_interarrival_single_arrival():
    assert extract_interarrival_times(table([ARR, DEP]), MM1) == []


def test_interarrival_filtered_by_class():
    sch = mmn_schema(2, 2)
    recs = [EventRecord(1.0, 0, 1), EventRecord(0.7, 0, 0), EventRecord(0.8, 0, 1)]
    t = Trajectory(sch.empty_state(), recs)
    assert extract_interarrival_times(t, sch, cls=1) == [pytest.approx(1.5)]


def test_service_excludes_idle_gap():
    # arrivals at 0 and 3, departures at 1 and 4
    t = table([ARR, DEP, ARR, DEP], [0.0, 1.0, 2.0, 1.0])
    assert extract_service_times(t, MM1) == [pytest.approx(1.0), pytest.approx(1.0)]


def test_service_back_to_back():
    svc = extract_service_times(table([ARR, ARR, DEP, DEP]), MM1)
    assert svc[1] == pytest.approx(1.0)


def test_service_without_departures():
    assert extract_service_times(table([ARR, ARR]), MM1) == []


def test_service_needs_single_fifo_server():
    sch = mmn_schema(2, 1)
    with pytest.raises(UnsupportedDiscipline):
        extract_service_times(Trajectory(sch.empty_state(), []), sch)


def test_wait_zero_on_empty_arrival():
    assert extract_waiting_times(table([ARR, DEP]), MM1) == [0.0]


def test_second_customer_waits():
    # arrivals at 0 and 1, departures at 2 and 3
    w = extract_waiting_times(table([ARR, ARR, DEP, DEP], [0.0, 1.0, 1.0, 1.0]), MM1)
    assert w == [0.0, pytest.approx(1.0)]


def test_wait_behind_initial_queue():
    # one in service, one waiting; the newcomer arrives at 0.5 and starts at 3.5
    init = state_with_customers(MM1, [0, 0])
    t = table([ARR, DEP, DEP], [0.5, 1.0, 2.0], init=init)
    assert extract_waiting_times(t, MM1, q0=1) == [pytest.approx(3.5 - 0.5)]


def test_wait_skipped_when_service_never_starts():
    assert extract_waiting_times(table([ARR, ARR, DEP]), MM1) == [0.0, pytest.approx(1.0)]
    assert extract_waiting_times(table([ARR, ARR]), MM1) == [0.0]


def test_index_formulas_match_bookkeeping():
    t = simulate_mmn(MmnConfig([0.8], [1.0]), 4000, 11)
    m = customer_metrics(t, MM1)
    np.testing.assert_allclose(extract_waiting_times(t, MM1), m.waiting, atol=1e-9)
    np.testing.assert_allclose(extract_service_times(t, MM1), m.service, atol=1e-9)
    np.testing.assert_allclose(extract_interarrival_times(t, MM1), m.interarrival, atol=1e-9)


def test_waits_follow_lindley():
    t = simulate_mmn(MmnConfig([0.7], [1.0]), 6000, 5)
    ia = extract_interarrival_times(t, MM1)
    svc = extract_service_times(t, MM1)
    waits = extract_waiting_times(t, MM1)
    k = min(len(svc), len(waits))
    ref = lindley_waits(ia[:k - 1], svc[:k - 1])
    np.testing.assert_allclose(waits[:k], ref[:k], atol=1e-9)


def test_sum_of_dts_is_final_clock():
    t = simulate_mmn(MmnConfig([0.5], [1.0]), 500, 3)
    assert reconstruct_states(t, MM1)[-1].clock == pytest.approx(t.dts.sum(), abs=1e-9)


def test_hourly_single_sample():
    t = table([ARR, ARR, DEP, DEP], [1.5, 0.7, 0.1, 0.1])
    out = hourly_average([t], MM1, "interarrival", hour_len=1.0)
    assert out == [(1, pytest.approx(0.7))]


def test_hourly_flat_under_constant_rate():
    trajs = [simulate_mmn(MmnConfig([2.0], [4.0]), 400, s) for s in range(40)]
    prof = dict(hourly_average(trajs, MM1, "interarrival", hour_len=20.0))
    vals = [prof[h] for h in range(4)]
    assert max(vals) - min(vals) < 0.06
    assert np.mean(vals) == pytest.approx(0.5, rel=0.05)


def test_hourly_rejects_unknown_metric():
    with pytest.raises(ValueError):
        hourly_average([], MM1, "sojourn")


def test_jsonl_layout():
    t = table([ARR, DEP], [0.1, 1 / 3])
    lines = dumps_trajectory(t, MM1).splitlines()
    head = json.loads(lines[0])
    assert list(head) == ["schema", "initial_state", "meta"]
    assert lines[2] == '{"dt": 0.33333333333333331, "e": 1, "c": null}'


def test_jsonl_round_trip_replays_identically(tmp_path):
    cfg = MmnConfig([0.3, 0.4], [1.0, 1.2], 2, priority=[1, 0])
    trajs = [simulate_mmn(cfg, 300, s) for s in range(3)]
    write_jsonl(tmp_path / "d.jsonl", trajs, cfg.schema())
    back, sch = read_jsonl(tmp_path / "d.jsonl")
    assert sch == cfg.schema()
    for a, b in zip(trajs, back):
        assert a.records == b.records
        assert reconstruct_states(a, sch) == reconstruct_states(b, sch)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1e6, allow_nan=False), st.sampled_from([ARR, DEP])), max_size=40))
def test_text_round_trip_is_exact(rows):
    t = table([e for _, e in rows], [d for d, _ in rows])
    back, _ = loads_trajectory(dumps_trajectory(t, MM1))
    assert back.records == t.records
    assert all(math.copysign(1, a.dt) == math.copysign(1, b.dt) for a, b in zip(t.records, back.records))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from([ARR, DEP]), max_size=60))
def test_validity_matches_running_count(events):
    n, ok = 0, True
    for e in events:
        n += 1 if e == ARR else -1
        if n < 0:
            ok = False
            break
    assert is_valid(table(events), MM1) == ok

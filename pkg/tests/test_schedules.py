"""Schedule policies against their closed forms and published constants."""

import math

import numpy as np
import pytest

from capstrain.schedules import (
    ADABATCH,
    CONSTANT,
    EXP_DECAY,
    FIXED,
    ONE_CYCLE,
    WARM_ADABATCH,
    WARM_RESTARTS,
    BatchPolicy,
    LrPolicy,
    ScheduleState,
    batch_adabatch,
    lr_exp_decay,
    lr_fixed,
    lr_one_cycle,
    lr_warm_restarts,
    policy_preset,
    schedule_trace,
    wab_cycle_steps,
    warm_adabatch,
)

LR_MIN, LR_MAX = 1e-4, 1e-3


# ---------------------------------------------------------------------------
# fixed and exponential decay
# ---------------------------------------------------------------------------


def test_fixed_rate():
    assert lr_fixed(LrPolicy(variant=FIXED)) == 1e-3
    assert lr_fixed(LrPolicy(variant=FIXED)) == lr_fixed(LrPolicy(variant=FIXED))
    assert lr_fixed(LrPolicy(variant=FIXED, lr_max=5e-4)) == 5e-4


def test_exp_decay_values():
    assert lr_exp_decay(1e-3, 0.96, 2000, 0) == 1e-3
    assert lr_exp_decay(1e-3, 0.96, 2000, 2000) == pytest.approx(0.00096, rel=1e-12)
    assert lr_exp_decay(1e-3, 0.96, 2000, 4000) == pytest.approx(1e-3 * 0.96**2, rel=1e-12)


def test_exp_decay_is_continuous_and_decreasing():
    values = [lr_exp_decay(1e-3, 0.96, 2000, s) for s in range(0, 5000, 7)]
    assert all(a > b for a, b in zip(values, values[1:]))
    # non-staircase: strictly smaller within one decay period too
    assert lr_exp_decay(1e-3, 0.96, 2000, 1) < 1e-3


# ---------------------------------------------------------------------------
# one-cycle
# ---------------------------------------------------------------------------


def test_one_cycle_endpoints():
    ts_total = 10_000
    assert lr_one_cycle(LR_MIN, LR_MAX, ts_total, 0) == pytest.approx(1e-4, rel=1e-12)
    assert lr_one_cycle(LR_MIN, LR_MAX, ts_total, 0.45 * ts_total) == pytest.approx(1e-3, rel=1e-12)
    assert lr_one_cycle(LR_MIN, LR_MAX, ts_total, ts_total) == pytest.approx(1e-5, rel=1e-12)


def test_one_cycle_boundary_continuity():
    ts_total = 7_777
    for boundary in (0.45 * ts_total, 0.9 * ts_total):
        below = lr_one_cycle(LR_MIN, LR_MAX, ts_total, np.nextafter(boundary, 0))
        above = lr_one_cycle(LR_MIN, LR_MAX, ts_total, np.nextafter(boundary, ts_total))
        assert abs(below - above) < 1e-15


def test_one_cycle_phase_boundary_value():
    # at 90% of the run both the falling and annealing formulas give lr_min
    ts_total = 1_000
    assert lr_one_cycle(LR_MIN, LR_MAX, ts_total, 0.9 * ts_total) == pytest.approx(LR_MIN, rel=1e-12)


def test_one_cycle_range_error():
    with pytest.raises(ValueError):
        lr_one_cycle(LR_MIN, LR_MAX, 100, -1)
    with pytest.raises(ValueError):
        lr_one_cycle(LR_MIN, LR_MAX, 100, 101)


# ---------------------------------------------------------------------------
# warm restarts
# ---------------------------------------------------------------------------


def test_warm_restarts_anchor_values():
    t_i = 1000
    lr, _ = lr_warm_restarts(LR_MIN, LR_MAX, ScheduleState(t_curr=0), t_i)
    assert lr == pytest.approx(1e-3, rel=1e-12)
    lr, _ = lr_warm_restarts(LR_MIN, LR_MAX, ScheduleState(t_curr=t_i // 2), t_i)
    assert lr == pytest.approx(0.00055, rel=1e-12)
    lr, state = lr_warm_restarts(LR_MIN, LR_MAX, ScheduleState(t_curr=t_i), t_i)
    assert lr == pytest.approx(1e-4, rel=1e-12)
    assert state.t_curr == 0


def test_warm_restarts_periodicity():
    # one restart consumes t_curr = 0..T_i inclusive, so the period is T_i + 1
    t_i = 50
    state = ScheduleState()
    values = []
    for _ in range(2 * (t_i + 1)):
        lr, state = lr_warm_restarts(LR_MIN, LR_MAX, state, t_i)
        values.append(lr)
    for k in range(t_i + 1):
        assert abs(values[k] - values[k + t_i + 1]) < 1e-15


def test_warm_restarts_state_advances_global_step():
    _, state = lr_warm_restarts(LR_MIN, LR_MAX, ScheduleState(), 10)
    assert state.global_step == 1 and state.t_curr == 1


# ---------------------------------------------------------------------------
# adaptive batch size
# ---------------------------------------------------------------------------


def test_adabatch_published_values():
    assert batch_adabatch(4, 2) == 1
    assert batch_adabatch(4, 5) == 16
    assert batch_adabatch(4, 10) == 32
    assert batch_adabatch(4, 20) == 64


def test_adabatch_full_table():
    expected = [1] * 3 + [16] * 5 + [32] * 5 + [64] * 17
    assert [batch_adabatch(4, e) for e in range(1, 31)] == expected


@pytest.mark.parametrize("p", [0, 2, 4, 6])
def test_adabatch_monotone_powers_of_two(p):
    sizes = [batch_adabatch(p, e) for e in range(1, 31)]
    assert all(a <= b for a, b in zip(sizes, sizes[1:]))
    assert all(s == 1 or (s & (s - 1)) == 0 for s in sizes)


# ---------------------------------------------------------------------------
# combined warm restarts + adaptive batch
# ---------------------------------------------------------------------------


def test_wab_cycle_lengths_at_full_scale():
    assert wab_cycle_steps(1, 60_000, 16, 30) == 180_000
    assert wab_cycle_steps(4, 60_000, 16, 30) == 101_250


def test_wab_first_step():
    lr, batch, state = warm_adabatch(LR_MIN, LR_MAX, 1, ScheduleState(), 60_000, 16)
    assert lr == pytest.approx(1e-3, rel=1e-12)
    assert batch == 1
    assert state.t_curr == 1


def test_wab_second_cycle_restarts_at_max():
    state = ScheduleState(t_curr=180_000, epoch=3)  # cursor after the warmup cycle
    lr, batch, state = warm_adabatch(LR_MIN, LR_MAX, 4, state, 60_000, 16)
    assert lr == pytest.approx(1e-3, rel=1e-12)
    assert batch == 16
    assert state.t_curr == 1 and state.epoch == 4


def test_wab_last_step_anneals_to_lr_min():
    # the final executed step has t_curr = T_i - 1; the cosine is within
    # (pi/T_i)^2/2 of its endpoint, far below 1e-9 here
    t_i = wab_cycle_steps(30, 60_000, 16, 30)
    state = ScheduleState(t_curr=t_i - 1, epoch=30)
    lr, _, _ = warm_adabatch(LR_MIN, LR_MAX, 30, state, 60_000, 16)
    assert lr == pytest.approx(1e-4, abs=1e-9)


# ---------------------------------------------------------------------------
# full traces
# ---------------------------------------------------------------------------


def test_trace_fixed_is_constant():
    trace = schedule_trace(LrPolicy(variant=FIXED), BatchPolicy(base_batch=4), epochs=2, train_set_size=10)
    assert len(trace) == 2 * 3
    assert np.all(trace.lr == 1e-3)
    assert np.all(trace.batch == 4)


def test_trace_warm_restarts_one_cycle_per_epoch():
    epochs, n, batch = 3, 200, 2  # 100 steps per epoch
    trace = schedule_trace(
        LrPolicy(variant=WARM_RESTARTS), BatchPolicy(base_batch=batch), epochs=epochs, train_set_size=n
    )
    maxima = np.isclose(trace.lr, 1e-3, rtol=1e-12).sum()
    assert maxima == epochs


def test_trace_wab_extremes():
    epochs, n, b = 30, 48, 16
    trace = schedule_trace(
        LrPolicy(variant=WARM_ADABATCH), BatchPolicy(base_batch=b), epochs=epochs, train_set_size=n
    )
    warmup_steps = 3 * n
    assert len(trace) == warmup_steps + 27 * (n // b)
    assert list(trace.batch[:warmup_steps]) == [1] * warmup_steps
    assert set(trace.batch[warmup_steps:].tolist()) == {b}
    # maxima open each cycle; minima close each cycle
    assert trace.lr[0] == pytest.approx(1e-3, rel=1e-12)
    assert trace.lr[warmup_steps] == pytest.approx(1e-3, rel=1e-12)
    assert trace.lr[warmup_steps - 1] == min(trace.lr[:warmup_steps])
    assert trace.lr[-1] == min(trace.lr[warmup_steps:])


def test_trace_length_matches_batch_plan():
    policy = LrPolicy(variant=FIXED)
    batch = BatchPolicy(variant=ADABATCH, base_batch=16)
    n, epochs = 103, 17
    trace = schedule_trace(policy, batch, epochs=epochs, train_set_size=n)
    expected = sum(-(-n // batch_adabatch(4, e)) for e in range(1, epochs + 1))
    assert len(trace) == expected
    # steps column is the global 0-based index
    assert trace.step[0] == 0 and trace.step[-1] == expected - 1


@pytest.mark.parametrize("name", ["fixed", "expdecay", "ocp", "warmrestarts", "adabatch", "wab"])
def test_trace_lr_bounds(name):
    lr_policy, batch_policy = policy_preset(name, base_batch=8)
    trace = schedule_trace(lr_policy, batch_policy, epochs=16, train_set_size=64)
    assert np.all(trace.lr > 0)
    assert np.all(trace.lr <= 1e-3 + 1e-18)
    assert np.all(trace.lr >= 0.1 * 1e-4 - 1e-18)


def test_trace_expdecay_matches_pure_function():
    trace = schedule_trace(LrPolicy(variant=EXP_DECAY), BatchPolicy(base_batch=1), epochs=2, train_set_size=50)
    for _, step, lr, _ in trace:
        assert lr == pytest.approx(lr_exp_decay(1e-3, 0.96, 2000, step), rel=1e-15)


def test_trace_csv_round_trip(tmp_path):
    trace = schedule_trace(LrPolicy(variant=ONE_CYCLE), BatchPolicy(base_batch=4), epochs=2, train_set_size=20)
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,step,lr,batch_size"
    assert len(lines) == len(trace) + 1
    first = lines[1].split(",")
    assert int(first[0]) == 1 and int(first[1]) == 0
    assert float(first[2]) == trace.lr[0]


# ---------------------------------------------------------------------------
# presets and validation
# ---------------------------------------------------------------------------


def test_policy_preset_adabatch_pairs_fixed_lr():
    lr_policy, batch_policy = policy_preset("adabatch")
    assert lr_policy.variant == FIXED
    assert batch_policy.variant == ADABATCH


def test_policy_preset_unknown_name():
    with pytest.raises(ValueError, match="fixed"):
        policy_preset("nosuch")


def test_policy_validation():
    with pytest.raises(ValueError):
        LrPolicy(variant="bogus")
    with pytest.raises(ValueError):
        LrPolicy(lr_min=0.0)
    with pytest.raises(ValueError):
        LrPolicy(lr_min=2e-3, lr_max=1e-3)
    with pytest.raises(ValueError):
        BatchPolicy(base_batch=0)

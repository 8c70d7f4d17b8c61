from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from centaurhpo.core import random_propose
from centaurhpo.metrics import (
    SUMMARY_COLUMNS,
    aggregate_by_trial,
    aggregate_seeds,
    cells,
    diversity,
    format_csv,
    format_table,
    group_by_method,
    incumbent_trace,
    mean_std,
    pairwise,
    spread,
    step,
    successful_points,
    summary_row,
)
from centaurhpo.runner import StudyHeader, StudyLog
from centaurhpo.space import denormalize, normalize

from conftest import make_record


def log_of(records, space, method="random", seed=0):
    header = StudyHeader(method=method, seed=seed, space=space, budget_seconds=1e9, penalty=100.0)
    return StudyLog(header, tuple(records))


def random_log(space, rng, n, fail_rate=0.2):
    out = []
    for i in range(1, n + 1):
        config = random_propose(space, rng)
        y = None if rng.random() < fail_rate else float(rng.random())
        out.append(make_record(i, y, config=config, train_seconds=float(rng.integers(1, 400))))
    return out


# Brute-force oracles written without numpy vectorization.


def oracle_points(records, space):
    idx = space.continuous_indices
    pts = []
    for r in records:
        if r.status == "ok":
            u = normalize(r.config, space)
            pts.append([float(u[i]) for i in idx])
    return pts


def oracle_pairwise(pts):
    dists = [math.dist(a, b) for a, b in itertools.combinations(pts, 2)]
    return math.fsum(dists) / len(dists) if dists else None


def oracle_step(pts):
    dists = [math.dist(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]
    return math.fsum(dists) / len(dists) if dists else None


def oracle_cells(pts):
    seen = set()
    for p in pts:
        seen.add(tuple(min(4, int(v * 5)) for v in p))
    return len(seen)


def oracle_spread(pts):
    if not pts:
        return None
    stds = []
    for col in zip(*pts):
        mu = math.fsum(col) / len(col)
        stds.append(math.sqrt(math.fsum((v - mu) ** 2 for v in col) / len(col)))
    return math.fsum(stds) / len(stds)


def close(a, b):
    if a is None or b is None:
        return a is b
    return a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_brute_force_oracles_on_random_logs(space):
    rng = np.random.default_rng(0)
    for _ in range(200):
        records = random_log(space, rng, int(rng.integers(0, 51)))
        pts = oracle_points(records, space)
        rep = diversity(records, space)
        assert rep.n_successful == len(pts)
        assert close(rep.pairwise, oracle_pairwise(pts))
        assert close(rep.step, oracle_step(pts))
        assert close(rep.spread, oracle_spread(pts))
        assert rep.cells == oracle_cells(pts)


def test_identical_configs_degenerate(space):
    recs = [make_record(i, 0.5, config=space.defaults()) for i in range(1, 4)]
    rep = diversity(recs, space)
    assert (rep.spread, rep.pairwise, rep.step, rep.cells) == (0.0, 0.0, 0.0, 1)


def test_two_config_worked_example(space):
    u = normalize(space.defaults(), space)
    a, b = u.copy(), u.copy()
    # MATRIX_LR is continuous; take it from one end of the range to the other.
    k = space.names.index("MATRIX_LR")
    a[k], b[k] = 0.0, 1.0
    recs = [make_record(1, 0.5, config=denormalize(a, space)), make_record(2, 0.4, config=denormalize(b, space))]
    rep = diversity(recs, space)
    assert rep.pairwise == pytest.approx(1.0, abs=1e-12)
    assert rep.step == pytest.approx(1.0, abs=1e-12)
    assert rep.spread == pytest.approx(0.5 / 13, abs=1e-12)


def test_too_few_points_absent(space):
    rep = diversity([make_record(1, 0.5, config=space.defaults())], space)
    assert rep.pairwise is None and rep.step is None and rep.cells == 1
    empty = diversity([], space)
    assert empty.spread is None and empty.cells == 0 and empty.oom_rate == 0.0


def test_oom_rate_and_step_skip_failures(space):
    rng = np.random.default_rng(1)
    configs = [random_propose(space, rng) for _ in range(3)]
    recs = [
        make_record(1, 0.5, config=configs[0]),
        make_record(2, None, config=configs[1]),
        make_record(3, 0.4, config=configs[2]),
    ]
    rep = diversity(recs, space)
    assert rep.oom_rate == pytest.approx(1 / 3)
    pts = successful_points(recs, space)
    assert rep.step == pytest.approx(float(np.linalg.norm(pts[1] - pts[0])))


def test_space_mismatch_rejected(space):
    from centaurhpo.synthetic import branin_space

    log = log_of([], branin_space())
    with pytest.raises(ValueError):
        diversity(log, space)
    with pytest.raises(ValueError):
        diversity([])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 30))
def test_permutation_property(seed, n):
    from centaurhpo.space import nanochat_space

    space = nanochat_space()
    rng = np.random.default_rng(seed)
    pts = successful_points(random_log(space, rng, n, fail_rate=0.0), space)
    perm = pts[rng.permutation(len(pts))]
    assert pairwise(perm) == pytest.approx(pairwise(pts), rel=1e-12)
    assert spread(perm) == pytest.approx(spread(pts), rel=1e-12)
    assert cells(perm) == cells(pts)
    # Step depends on order: reversing keeps it, a swap generally does not.
    assert step(pts[::-1]) == pytest.approx(step(pts), rel=1e-12)


def test_step_not_permutation_invariant():
    pts = np.array([[0.0], [1.0], [0.5]])
    assert step(pts) == 0.75
    assert step(pts[[0, 2, 1]]) == 0.5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_categorical_never_read(seed):
    from centaurhpo.space import nanochat_space

    space = nanochat_space()
    rng = np.random.default_rng(seed)
    recs = random_log(space, rng, 12)
    choices = space["WINDOW_PATTERN"].choices
    swapped = [
        make_record(r.trial_id, r.objective if r.ok else None, config=dict(r.config, WINDOW_PATTERN=choices[int(rng.integers(len(choices)))]))
        for r in recs
    ]
    a, b = diversity(recs, space), diversity(swapped, space)
    assert (a.spread, a.pairwise, a.step, a.cells) == (b.spread, b.pairwise, b.step, b.cells)


def test_cells_bin_edges():
    pts = np.array([[0.0, 0.19999], [0.2, 0.99], [1.0, 1.0]])
    # 1.0 falls in the top bin, 0.2 opens the second.
    assert cells(pts) == 3
    assert cells(np.array([[0.99], [1.0]])) == 1


# --------------------------------------------------------------------------
# Incumbent traces


def test_trace_example():
    recs = [make_record(i, y, train_seconds=10.0) for i, y in enumerate([3, 2, 2, 1], start=1)]
    trace = incumbent_trace(recs)
    assert [p.best_so_far for p in trace] == [3, 2, 2, 1]
    assert [p.trial_id for p in trace if p.incumbent] == [1, 2, 4]
    assert [p.cumulative_train_seconds for p in trace] == [10, 20, 30, 40]


def test_trace_all_failures_flat():
    trace = incumbent_trace([make_record(i, None) for i in range(1, 6)])
    assert {p.best_so_far for p in trace} == {100.0}


def test_trace_matches_fold(space):
    rng = np.random.default_rng(2)
    recs = random_log(space, rng, 40, fail_rate=0.3)
    best, fold = math.inf, []
    for r in recs:
        best = min(best, r.objective)
        fold.append(best)
    assert [p.best_so_far for p in incumbent_trace(recs)] == fold


# --------------------------------------------------------------------------
# Aggregation


def bests_log(space, finals, seed, n=3):
    recs = [make_record(1, 1.5, train_seconds=100.0)]
    recs += [make_record(i, finals if i == n else 1.2, train_seconds=100.0) for i in range(2, n + 1)]
    return log_of(recs, space, seed=seed)


def test_identical_logs_zero_std(space):
    logs = [bests_log(space, 0.9, s) for s in range(3)]
    curve = aggregate_seeds(logs)
    assert np.all(curve.std == 0)
    assert list(curve.x) == [100.0, 200.0, 300.0]


def test_final_mean_std_example(space):
    logs = [bests_log(space, v, s) for s, v in enumerate([0.97, 0.98, 0.99])]
    curve = aggregate_seeds(logs)
    assert curve.final_mean == pytest.approx(0.98)
    assert curve.final_std == pytest.approx(math.sqrt(2 / 3) * 0.01)
    assert curve.summary() == "0.9800±0.0082"
    assert mean_std([0.97, 0.98, 0.99]) == "0.9800±0.0082"


def test_aggregate_union_grid_step_interpolation(space):
    a = log_of([make_record(1, 2.0, train_seconds=10.0), make_record(2, 1.0, train_seconds=30.0)], space, seed=0)
    b = log_of([make_record(1, 3.0, train_seconds=20.0), make_record(2, 0.0, train_seconds=5.0)], space, seed=1)
    curve = aggregate_seeds([a, b])
    # Grid starts at the later first event (20), union of events after that.
    assert list(curve.x) == [20.0, 25.0, 40.0]
    np.testing.assert_allclose(curve.mean, [(2 + 3) / 2, (2 + 0) / 2, (1 + 0) / 2])
    np.testing.assert_allclose(curve.std, [0.5, 1.0, 0.5])


def test_aggregate_errors(space):
    with pytest.raises(ValueError):
        aggregate_seeds([])
    with pytest.raises(ValueError):
        aggregate_seeds([log_of([make_record(1, 1.0)], space, method="a"), log_of([make_record(1, 1.0)], space, method="b")])
    with pytest.raises(ValueError):
        aggregate_seeds([log_of([], space)])


def test_aggregate_by_trial_cap(space):
    recs = [make_record(i, 1.0 / i) for i in range(1, 351)]
    curve = aggregate_by_trial([log_of(recs, space)])
    assert len(curve.x) == 300 and curve.x[-1] == 300
    assert curve.finals == (1.0 / 300,)


def test_aggregate_by_trial_carries_short_seeds(space):
    a = log_of([make_record(1, 2.0), make_record(2, 1.0)], space, seed=0)
    b = log_of([make_record(i, 3.0) for i in range(1, 5)], space, seed=1)
    curve = aggregate_by_trial([a, b])
    np.testing.assert_allclose(curve.mean, [2.5, 2.0, 2.0, 2.0])


# --------------------------------------------------------------------------
# Tables


def test_summary_row_consistent(space):
    rng = np.random.default_rng(3)
    logs = [log_of(random_log(space, rng, 20), space, seed=s) for s in range(3)]
    row = summary_row(logs)
    assert set(row) == set(SUMMARY_COLUMNS)
    reps = [diversity(log) for log in logs]
    assert row["pairwise"] == round(float(np.mean([r.pairwise for r in reps])), 3)
    assert row["oom_pct"] == round(100 * float(np.mean([r.oom_rate for r in reps])), 1)
    assert row["best"] == mean_std([log.best().objective for log in logs])
    assert row["seeds"] == 3 and row["trials"] == "20±0"


def test_format_table_and_csv():
    rows = [{"method": "cmaes", "best": "0.9800±0.0082", "cells": None}, {"method": "tpe", "best": "1.0", "cells": 3.0}]
    table = format_table(rows, ("method", "best", "cells"))
    lines = table.splitlines()
    assert lines[0].split() == ["method", "best", "cells"]
    assert set(lines[1].replace(" ", "")) == {"-"}
    assert lines[2].split() == ["cmaes", "0.9800±0.0082", "-"]
    assert format_csv(rows, ("method", "cells")) == "method,cells\ncmaes,\ntpe,3.0\n"


def test_group_by_method_sorts_seeds(space):
    logs = [log_of([], space, "b", 2), log_of([], space, "a", 1), log_of([], space, "b", 0)]
    groups = group_by_method(logs)
    assert sorted(groups) == ["a", "b"]
    assert [log.header.seed for log in groups["b"]] == [0, 2]

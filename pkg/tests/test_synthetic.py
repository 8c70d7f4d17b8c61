from __future__ import annotations

import math

import numpy as np
import pytest

from centaurhpo.core import random_propose
from centaurhpo.runner import OK, OOM, TrialLimits, execute_trial, materialize_trial_script
from centaurhpo.space import CATEGORICAL, REAL, HyperparameterDef, SearchSpace, denormalize, nanochat_source
from centaurhpo.synthetic import (
    BRANIN_MINIMUM,
    OBJECTIVES,
    branin,
    branin2,
    branin_space,
    infeasible_halfspace,
    sphere,
    sphere14,
)

# Normalized preset defaults, computed by hand from the bounds.
HAND_DEFAULTS = [
    (8 - 4) / 20,
    (64 - 32) / 96,
    math.log(2) / math.log(4),
    math.log(4) / math.log(8),
    math.log(8) / math.log(32),
    math.log(60) / math.log(200),
    math.log(8) / math.log(100),
    math.log(8) / math.log(40),
    math.log(10) / math.log(40),
    0.2 / 0.5,
    0.0,
    0.4 / 0.7,
    0.0,
]


def test_sphere_optimum():
    space = SearchSpace((
        HyperparameterDef("A", REAL, low=0.0, high=10.0, default=1.0),
        HyperparameterDef("B", REAL, low=1e-3, high=1e-1, log_scale=True, default=1e-2),
        HyperparameterDef("C", CATEGORICAL, choices=("x", "y"), default="x"),
    ))
    config = denormalize([0.7, 0.7, 0.9], space)
    assert sphere(config, space) == pytest.approx(0.0, abs=1e-28)


def test_sphere_near_optimum_on_nanochat(space):
    config = denormalize(np.full(14, 0.7), space)
    # Integer parameters round away from 0.7 by at most half a grid step.
    assert 0 < sphere14(config) < 1e-3


def test_sphere_defaults_hand_sum(space):
    expect = math.fsum((v - 0.7) ** 2 for v in HAND_DEFAULTS)
    assert sphere14(space.defaults()) == pytest.approx(expect, rel=1e-12)


def test_sphere_ignores_categorical(space):
    a = space.defaults()
    b = dict(a, WINDOW_PATTERN="LLLL")
    assert sphere14(a) == sphere14(b)


def test_sphere_monotone_toward_target(space):
    rng = np.random.default_rng(0)
    for _ in range(200):
        config = random_propose(space, rng)
        name = space.names[rng.integers(13)]
        p = space[name]
        u = p.to_unit(config[name])
        moved = dict(config)
        moved[name] = p.from_unit(u + 0.5 * (0.7 - u))
        assert sphere14(moved) <= sphere14(config) + 1e-15


def test_infeasible_corner_is_oom(space):
    config = dict(space.defaults(), DEPTH=24, DEVICE_BATCH_SIZE=256)
    assert infeasible_halfspace(config) == (OOM, None)


def test_infeasible_defaults_ok(space):
    d = space.defaults()
    assert HAND_DEFAULTS[0] + HAND_DEFAULTS[3] < 1.2
    assert infeasible_halfspace(d) == (OK, sphere14(d))


def test_infeasible_integer_boundary(space):
    depth, batch = space["DEPTH"], space["DEVICE_BATCH_SIZE"]
    edge = max(b for b in range(32, 257) if depth.to_unit(16) + batch.to_unit(b) <= 1.2)
    config = dict(space.defaults(), DEPTH=16)
    assert infeasible_halfspace(dict(config, DEVICE_BATCH_SIZE=edge))[0] == OK
    assert infeasible_halfspace(dict(config, DEVICE_BATCH_SIZE=edge + 1))[0] == OOM


def test_infeasible_exact_boundary_rule(monkeypatch):
    # A sum of exactly 1.2 is feasible (strict inequality).
    import centaurhpo.synthetic as syn

    class Unit:
        def __init__(self, u):
            self.u = u

        def to_unit(self, value):
            return self.u

    fake = {"DEPTH": Unit(0.5), "DEVICE_BATCH_SIZE": Unit(0.7)}
    assert 0.5 + 0.7 == 1.2
    monkeypatch.setattr(syn, "_nanochat", lambda: fake)
    monkeypatch.setattr(syn, "sphere14", lambda config: 0.25)
    assert syn.infeasible_halfspace({"DEPTH": 0, "DEVICE_BATCH_SIZE": 0}) == (OK, 0.25)
    fake["DEVICE_BATCH_SIZE"] = Unit(0.7000001)
    assert syn.infeasible_halfspace({"DEPTH": 0, "DEVICE_BATCH_SIZE": 0})[0] == OOM


def test_infeasible_region_has_positive_measure(space):
    rng = np.random.default_rng(0)
    statuses = [infeasible_halfspace(random_propose(space, rng))[0] for _ in range(2000)]
    assert 0 < statuses.count(OOM) < 2000


@pytest.mark.parametrize("point", [(math.pi, 2.275), (-math.pi, 12.275), (9.42478, 2.475)])
def test_branin_minimizers(point):
    assert branin(*point) == pytest.approx(0.397887, abs=1e-5)


def test_branin_minimum_constant():
    # The closed-form minimum is 5 / (4 * pi).
    assert BRANIN_MINIMUM == pytest.approx(5 / (4 * math.pi), abs=1e-15)


def test_branin_positive_and_finite():
    rng = np.random.default_rng(0)
    space = branin_space()
    for _ in range(1000):
        v = branin2(random_propose(space, rng))
        assert math.isfinite(v) and v > 0


def test_objectives_are_pure(space):
    rng = np.random.default_rng(0)
    for _ in range(50):
        config = random_propose(space, rng)
        for name in ("sphere14", "infeasible_halfspace"):
            assert OBJECTIVES[name](config) == OBJECTIVES[name](config)


def test_standalone_script_subprocess(space, tmp_path):
    config = dict(space.defaults(), DEPTH=12, MATRIX_LR=0.02)
    script = materialize_trial_script(nanochat_source(), config)
    out = execute_trial(script, TrialLimits(workdir=tmp_path))
    assert out.status == OK
    assert out.objective == pytest.approx(sphere14(config), rel=1e-12)


def test_standalone_script_oom(space, tmp_path):
    config = dict(space.defaults(), DEPTH=24, DEVICE_BATCH_SIZE=256)
    script = materialize_trial_script(nanochat_source(), config)
    out = execute_trial(script, TrialLimits(workdir=tmp_path), {"HPO_SYNTHETIC_OBJECTIVE": "infeasible_halfspace"})
    assert out.status == OOM

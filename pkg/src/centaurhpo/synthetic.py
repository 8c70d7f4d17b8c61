"""Cheap deterministic objectives that stand in for GPU training runs."""
from __future__ import annotations

import math
from functools import lru_cache
from typing import Any, Mapping

import numpy as np

from .runner import OK, OOM
from .space import REAL, HyperparameterDef, SearchSpace, normalize, nanochat_space

SPHERE_TARGET = 0.7
INFEASIBLE_THRESHOLD = 1.2
BRANIN_MINIMUM = 0.39788735772973816


@lru_cache(maxsize=1)
def _nanochat() -> SearchSpace:
    return nanochat_space()


def sphere(config: Mapping[str, Any], space: SearchSpace, target: float = SPHERE_TARGET) -> float:
    """Squared distance to ``target`` in unit coordinates, over numeric params only."""
    u = normalize(config, space)[space.continuous_indices]
    return float(np.sum((u - target) ** 2))


def sphere14(config: Mapping[str, Any]) -> float:
    return sphere(config, _nanochat())


def infeasible_halfspace(config: Mapping[str, Any]) -> tuple[str, float | None]:
    """sphere14, except jointly large DEPTH and DEVICE_BATCH_SIZE run out of memory."""
    space = _nanochat()
    load = space["DEVICE_BATCH_SIZE"].to_unit(config["DEVICE_BATCH_SIZE"]) + space["DEPTH"].to_unit(config["DEPTH"])
    if load > INFEASIBLE_THRESHOLD:
        return OOM, None
    return OK, sphere14(config)


def branin(x1: float, x2: float) -> float:
    b = 5.1 / (4 * math.pi**2)
    c = 5 / math.pi
    t = 1 / (8 * math.pi)
    return (x2 - b * x1**2 + c * x1 - 6) ** 2 + 10 * (1 - t) * math.cos(x1) + 10


def branin_space() -> SearchSpace:
    return SearchSpace((
        HyperparameterDef("X1", REAL, low=-5.0, high=10.0, default=2.5),
        HyperparameterDef("X2", REAL, low=0.0, high=15.0, default=7.5),
    ))


def branin2(config: Mapping[str, Any]) -> float:
    return branin(config["X1"], config["X2"])


OBJECTIVES = {
    "sphere14": lambda c: (OK, sphere14(c)),
    "infeasible_halfspace": infeasible_halfspace,
    "branin2": lambda c: (OK, branin2(c)),
}

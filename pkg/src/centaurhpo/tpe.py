"""Tree-structured Parzen Estimator over a flat search space.

Each parameter gets its own density in unit coordinates (no tree
conditioning, the space is flat). Numeric parameters use a mixture of a
uniform prior and Gaussian kernels truncated to ``[0, 1]``; categoricals use
Laplace-smoothed choice frequencies.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .core import CLASSICAL, RANDOM, Optimizer, RngStreams, random_propose
from .runner import TrialRecord
from .space import SearchSpace, canonical_config, denormalize, normalize

GAMMA = 0.25
N_STARTUP = 10
N_CANDIDATES = 24
MIN_BANDWIDTH = 0.05

_SQRT_2PI = math.sqrt(2 * math.pi)


def n_good(n: int, gamma: float) -> int:
    return max(1, math.ceil(round(gamma * n, 9)))


def tpe_split(history: Sequence[TrialRecord], gamma: float = GAMMA) -> tuple[list[TrialRecord], list[TrialRecord]]:
    """Split into the best ``ceil(gamma * n)`` trials and the rest.

    Failed trials always land in the bad group unless every trial failed.
    Sorting is stable, so ties keep trial order.
    """
    if not history:
        raise ValueError("cannot split an empty history")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    ranked = sorted(history, key=lambda r: r.objective)
    k = n_good(len(ranked), gamma)
    ok = [r for r in ranked if r.ok]
    good = (ok or ranked)[:k]
    chosen = {id(r) for r in good}
    bad = [r for r in ranked if id(r) not in chosen]
    return good, bad


@dataclass(frozen=True)
class NumericParzen:
    centers: np.ndarray
    bandwidth: float

    @classmethod
    def fit(cls, values: np.ndarray) -> NumericParzen:
        values = np.asarray(values, dtype=float)
        n = values.size
        bw = MIN_BANDWIDTH
        if n > 0:
            bw = max(float(np.std(values)) * n ** (-1 / 5), MIN_BANDWIDTH)
        return cls(values, bw)

    def _mass(self) -> np.ndarray:
        c, h = self.centers, self.bandwidth
        return ndtr((1 - c) / h) - ndtr(-c / h)

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        inside = ((x >= 0) & (x <= 1)).astype(float)
        n = self.centers.size
        total = inside.copy()
        if n:
            h = self.bandwidth
            k = np.exp(-0.5 * ((x[:, None] - self.centers[None, :]) / h) ** 2) / (h * _SQRT_2PI)
            total += inside * (k / self._mass()[None, :]).sum(axis=1)
        return total / (n + 1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        n = self.centers.size
        comp = rng.integers(0, n + 1, size=size)
        u = rng.random(size)
        out = u.copy()
        kern = comp > 0
        if kern.any():
            c = self.centers[comp[kern] - 1]
            h = self.bandwidth
            lo, hi = ndtr(-c / h), ndtr((1 - c) / h)
            out[kern] = c + h * ndtri(lo + u[kern] * (hi - lo))
        return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class CategoricalParzen:
    probs: np.ndarray

    @classmethod
    def fit(cls, indices: Sequence[int], n_choices: int) -> CategoricalParzen:
        counts = np.bincount(np.asarray(indices, dtype=int), minlength=n_choices).astype(float) + 1
        return cls(counts / counts.sum())

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(self.probs.size, size=size, p=self.probs)


@dataclass(frozen=True)
class ParzenModel:
    space: SearchSpace
    parts: tuple

    def log_density(self, units: np.ndarray) -> np.ndarray:
        """Sum over parameters of log density, for candidate rows in unit coordinates."""
        units = np.atleast_2d(units)
        total = np.zeros(units.shape[0])
        for j, (p, part) in enumerate(zip(self.space, self.parts)):
            if isinstance(part, CategoricalParzen):
                k = part.probs.size
                idx = np.minimum(k - 1, np.floor(units[:, j] * k).astype(int))
                total += np.log(part.probs[idx])
            else:
                total += np.log(part.pdf(units[:, j]))
        return total


def tpe_build(group: Sequence[TrialRecord], space: SearchSpace) -> ParzenModel:
    units = np.array([normalize(r.config, space) for r in group]).reshape(len(group), space.total_dims)
    parts = []
    for j, p in enumerate(space):
        if p.is_numeric:
            parts.append(NumericParzen.fit(units[:, j]))
        else:
            k = len(p.choices)
            idx = np.minimum(k - 1, np.floor(units[:, j] * k).astype(int))
            parts.append(CategoricalParzen.fit(idx, k))
    return ParzenModel(space, tuple(parts))


def tpe_propose(
    history: Sequence[TrialRecord],
    space: SearchSpace,
    rng: np.random.Generator,
    n_candidates: int = N_CANDIDATES,
    gamma: float = GAMMA,
    n_startup: int = N_STARTUP,
) -> tuple[dict, str]:
    """Return ``(config, source_tag)``; random search until ``n_startup`` trials exist."""
    history = [r for r in history if r.config is not None]
    if len(history) < n_startup:
        return random_propose(space, rng), RANDOM
    good, bad = tpe_split(history, gamma)
    l_model, g_model = tpe_build(good, space), tpe_build(bad, space)
    cand = np.empty((n_candidates, space.total_dims))
    for j, (p, part) in enumerate(zip(space, l_model.parts)):
        if isinstance(part, CategoricalParzen):
            cand[:, j] = (part.sample(rng, n_candidates) + 0.5) / part.probs.size
        else:
            cand[:, j] = part.sample(rng, n_candidates)
    score = l_model.log_density(cand) - g_model.log_density(cand)
    best = int(np.argmax(score))
    return canonical_config(denormalize(cand[best], space), space), CLASSICAL


class TpeOptimizer(Optimizer):
    name = "tpe"

    def __init__(
        self,
        space: SearchSpace,
        streams: RngStreams,
        gamma: float = GAMMA,
        n_startup: int = N_STARTUP,
        n_candidates: int = N_CANDIDATES,
    ):
        super().__init__(space, streams)
        self.gamma = gamma
        self.n_startup = n_startup
        self.n_candidates = n_candidates

    def _ask(self, history):
        config, tag = tpe_propose(
            history, self.space, self.streams.sampler, self.n_candidates, self.gamma, self.n_startup
        )
        return self._proposal(tag, config=config)

"""CMA-ES on the unit cube, with state export for LLM prompting.

The strategy follows the standard (mu/mu_w, lambda) CMA-ES with cumulative
step-size adaptation and rank-one plus rank-mu covariance updates. Samples
are clamped to ``[0, 1]^d``. When the evaluated configuration is the
decoding of the strategy's own sample, the clamped sample itself enters the
update; any other evaluated configuration (the baseline trial, LLM
overrides) enters as its normalized coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import CLASSICAL, Optimizer, ProtocolError, RngStreams
from .space import REAL, SearchSpace, canonical_config, denormalize, normalize

DEFAULT_SIGMA0 = 0.3
EIGEN_FLOOR = 1e-14  # relative to the largest eigenvalue
EIGEN_ABS_FLOOR = 1e-11


def default_popsize(dim: int) -> int:
    return 4 + int(math.floor(3 * math.log(dim)))


def recombination_weights(popsize: int) -> np.ndarray:
    """Positive log-rank weights for the best ``popsize // 2`` points, summing to 1."""
    mu = popsize // 2
    w = math.log((popsize + 1) / 2) - np.log(np.arange(1, mu + 1))
    return w / w.sum()


@dataclass(frozen=True)
class StateSummary:
    mean_config: dict
    sigma: float
    covariance: np.ndarray
    labels: tuple[str, ...]

    def covariance_rows(self) -> list[tuple[str, list[float]]]:
        return [(label, list(row)) for label, row in zip(self.labels, self.covariance)]


def round_sig(x: float, digits: int = 4) -> float:
    return float(f"{x:.{digits}g}")


class CmaState:
    """Mutable CMA-ES internals for a ``dim``-dimensional unit cube."""

    def __init__(self, mean: Sequence[float], sigma0: float = DEFAULT_SIGMA0, popsize: int | None = None):
        mean = np.asarray(mean, dtype=float)
        if mean.ndim != 1 or mean.size < 1:
            raise ValueError("mean must be a non-empty vector")
        if not sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        d = mean.size
        self.dim = d
        self.mean = mean.copy()
        self.sigma = float(sigma0)
        self.popsize = popsize or default_popsize(d)
        if self.popsize < 2:
            raise ValueError("population size must be at least 2")
        self.weights = recombination_weights(self.popsize)
        self.mu = self.weights.size
        self.mueff = 1.0 / float(np.sum(self.weights**2))

        self.cs = (self.mueff + 2) / (d + self.mueff + 5)
        self.damps = 1 + 2 * max(0.0, math.sqrt((self.mueff - 1) / (d + 1)) - 1) + self.cs
        self.cc = (4 + self.mueff / d) / (d + 4 + 2 * self.mueff / d)
        self.c1 = 2 / ((d + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((d + 2) ** 2 + self.mueff))
        self.chi_n = math.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d**2))
        # Mahalanobis length cap for each step, as recommended for injected solutions.
        self.step_cap = math.sqrt(d) + 2 * d / (d + 2)

        self.path_sigma = np.zeros(d)
        self.path_c = np.zeros(d)
        self.covariance = np.eye(d)
        self.generation = 0
        self.pending: list[tuple[np.ndarray, float]] = []
        self._eigen_generation = -1
        self._refresh_eigen()

    def _refresh_eigen(self) -> None:
        if self._eigen_generation == self.generation:
            return
        C = (self.covariance + self.covariance.T) / 2
        vals, vecs = np.linalg.eigh(C)
        floor = max(EIGEN_FLOOR * vals.max(), EIGEN_ABS_FLOOR)
        if vals.min() < floor:
            C = C + (floor - vals.min()) * np.eye(self.dim)
            vals, vecs = np.linalg.eigh(C)
        self.covariance = C
        self.B = vecs
        self.D = np.sqrt(vals)
        self.invsqrt = (vecs / self.D) @ vecs.T
        self._eigen_generation = self.generation

    def sample_raw(self, rng: np.random.Generator) -> np.ndarray:
        """One unclamped draw from N(mean, sigma^2 C)."""
        self._refresh_eigen()
        z = rng.standard_normal(self.dim)
        return self.mean + self.sigma * (self.B @ (self.D * z))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.clip(self.sample_raw(rng), 0.0, 1.0)

    def add(self, x: Sequence[float], objective: float) -> bool:
        """Buffer an evaluated point; runs :meth:`update` once a generation is full.

        Returns True when an update fired.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a {self.dim}-vector")
        if not math.isfinite(objective):
            raise ValueError("objective must be finite")
        self.pending.append((x.copy(), float(objective)))
        if len(self.pending) == self.popsize:
            generation, self.pending = self.pending, []
            self.update(generation)
            return True
        return False

    def update(self, generation: Sequence[tuple[Sequence[float], float]]) -> None:
        if len(generation) != self.popsize:
            raise ProtocolError(f"generation has {len(generation)} points, expected {self.popsize}")
        self._refresh_eigen()
        d = self.dim
        xs = np.array([np.asarray(x, dtype=float) for x, _ in generation])
        fs = np.array([f for _, f in generation], dtype=float)
        order = np.argsort(fs, kind="stable")
        selected = xs[order[: self.mu]]

        old_mean = self.mean
        self.mean = self.weights @ selected

        y = (selected - old_mean) / self.sigma
        z = y @ self.invsqrt.T
        lengths = np.linalg.norm(z, axis=1)
        scale = np.minimum(1.0, self.step_cap / np.maximum(lengths, 1e-300))
        y = y * scale[:, None]
        z = z * scale[:, None]
        y_w = self.weights @ y
        z_w = self.weights @ z

        self.path_sigma = (1 - self.cs) * self.path_sigma + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * z_w
        ps_norm = float(np.linalg.norm(self.path_sigma))
        decay = 1 - (1 - self.cs) ** (2 * (self.generation + 1))
        hsig = ps_norm / math.sqrt(decay) / self.chi_n < 1.4 + 2 / (d + 1)
        self.path_c = (1 - self.cc) * self.path_c + hsig * math.sqrt(self.cc * (2 - self.cc) * self.mueff) * y_w

        c1a = self.c1 * (1 - (1 - hsig) * self.cc * (2 - self.cc))
        rank_mu = (y * self.weights[:, None]).T @ y
        self.covariance = (
            (1 - c1a - self.cmu) * self.covariance
            + self.c1 * np.outer(self.path_c, self.path_c)
            + self.cmu * rank_mu
        )
        self.sigma *= math.exp((self.cs / self.damps) * (ps_norm / self.chi_n - 1))
        self.generation += 1
        self._refresh_eigen()

    def export(self, space: SearchSpace, digits: int = 4) -> StateSummary:
        """Mean as a configuration, sigma, and C labeled by parameter name, rounded to ``digits`` significant digits."""
        self._refresh_eigen()
        C = (self.covariance + self.covariance.T) / 2
        rounded = np.vectorize(lambda v: round_sig(v, digits))(C)
        mean = canonical_config(denormalize(self.mean, space), space)
        for p in space:
            if p.kind == REAL:
                mean[p.name] = round_sig(mean[p.name], digits)
        return StateSummary(
            mean_config=mean,
            sigma=round_sig(self.sigma, digits),
            covariance=rounded,
            labels=tuple(space.names),
        )


def cma_init(space: SearchSpace, sigma0: float = DEFAULT_SIGMA0, popsize: int | None = None) -> CmaState:
    """Start at the normalized defaults with C = I."""
    return CmaState(normalize(space.defaults(), space), sigma0, popsize)


def minimize_unit(
    f: Callable[[np.ndarray], float],
    state: CmaState,
    rng: np.random.Generator,
    max_evals: int,
    target: float = -math.inf,
) -> tuple[float, int]:
    """Plain ask/tell loop on the unit cube.

    Returns ``(best value, evaluations used)``; stops as soon as ``target`` is reached.
    """
    best = math.inf
    for n in range(1, max_evals + 1):
        x = state.sample(rng)
        fx = float(f(x))
        best = min(best, fx)
        if best <= target:
            return best, n
        state.add(x, fx)
    return best, max_evals


class SampledConfigs:
    """Draws configurations from a :class:`CmaState` and feeds evaluations back.

    Remembers the last clamped sample so that rounding integer or
    categorical coordinates does not leak into the update.
    """

    def __init__(self, state: CmaState, space: SearchSpace):
        self.state = state
        self.space = space
        self.last: tuple[dict, np.ndarray] | None = None

    def sample(self, rng: np.random.Generator) -> dict:
        u = self.state.sample(rng)
        config = canonical_config(denormalize(u, self.space), self.space)
        self.last = (config, u)
        return config

    def add(self, config: dict, objective: float) -> bool:
        if self.last is not None and self.last[0] == config:
            x = self.last[1]
        else:
            x = normalize(config, self.space)
        self.last = None
        return self.state.add(x, objective)


class CmaEsOptimizer(Optimizer):
    """CMA-ES over a :class:`SearchSpace`; asks one individual at a time."""

    name = "cmaes"

    def __init__(self, space: SearchSpace, streams: RngStreams, sigma0: float = DEFAULT_SIGMA0, popsize: int | None = None):
        super().__init__(space, streams)
        self.state = cma_init(space, sigma0, popsize)
        self.sampler = SampledConfigs(self.state, space)

    def sample_config(self) -> dict:
        return self.sampler.sample(self.streams.sampler)

    def _ask(self, history):
        return self._proposal(CLASSICAL, config=self.sample_config())

    def _tell(self, proposal, objective):
        self.sampler.add(proposal.config, objective)

"""Ask/tell contract shared by every optimizer, seeded RNG streams, random search."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .runner import TrialRecord
from .space import SearchSpace, canonical_config, denormalize

STREAM_NAMES = ("turn_selection", "sampler", "llm_fallback")

CLASSICAL = "classical"
LLM = "llm"
RANDOM = "random"


class ProtocolError(RuntimeError):
    """Raised when ask/tell calls are out of order or mismatched."""


class ReplayMismatch(ProtocolError):
    """A persisted trial does not match what the optimizer proposes on replay."""


def stream_seed(seed: int, name: str) -> int:
    """First 8 bytes (big-endian) of SHA-256 over ``"<seed>/<name>"``."""
    return int.from_bytes(hashlib.sha256(f"{seed}/{name}".encode()).digest()[:8], "big")


class RngStreams:
    """Independent generators derived from one study seed.

    Draws from one stream never shift another, so an optimizer that only
    sometimes consults ``turn_selection`` still sees the same ``sampler``
    sequence.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self._gens = {name: np.random.default_rng(stream_seed(seed, name)) for name in STREAM_NAMES}

    def __getitem__(self, name: str) -> np.random.Generator:
        return self._gens[name]

    @property
    def turn_selection(self) -> np.random.Generator:
        return self._gens["turn_selection"]

    @property
    def sampler(self) -> np.random.Generator:
        return self._gens["sampler"]

    @property
    def llm_fallback(self) -> np.random.Generator:
        return self._gens["llm_fallback"]


@dataclass(frozen=True)
class Proposal:
    id: int
    source_tag: str
    config: dict | None = None
    source: str | None = None
    metadata: dict = field(default_factory=dict)
    llm_seconds: float = 0.0

    def __post_init__(self) -> None:
        if (self.config is None) == (self.source is None):
            raise ValueError("a proposal carries exactly one of config or source")


def random_propose(space: SearchSpace, rng: np.random.Generator) -> dict[str, Any]:
    """Uniform draw: log-uniform on log-scale params, uniform over categorical choices."""
    return canonical_config(denormalize(rng.random(space.total_dims), space), space)


def history_records(history: Iterable[TrialRecord] | None) -> Sequence[TrialRecord]:
    if history is None:
        return ()
    if hasattr(history, "sources"):
        return history
    return tuple(history)


class Optimizer:
    """Base class enforcing strict ask/tell alternation.

    Subclasses implement ``_ask(history) -> Proposal`` and
    ``_tell(proposal, objective)``. ``observe`` feeds in trials the optimizer
    did not propose (the baseline run of the defaults); ``replay`` re-feeds a
    persisted trial when a study is resumed.
    """

    name = "optimizer"

    def __init__(self, space: SearchSpace, streams: RngStreams):
        self.space = space
        self.streams = streams
        self._counter = 0
        self._pending: Proposal | None = None

    def _proposal(self, source_tag: str, **kwargs) -> Proposal:
        return Proposal(self._counter, source_tag, **kwargs)

    def baseline_proposal(self) -> Proposal:
        return Proposal(0, CLASSICAL, config=self.space.defaults(), metadata={"baseline": True})

    def ask(self, history: Iterable[TrialRecord] | None = None) -> Proposal:
        if self._pending is not None:
            raise ProtocolError(f"ask called while proposal {self._pending.id} awaits tell")
        self._counter += 1
        self._pending = self._ask(history_records(history))
        return self._pending

    def tell(self, proposal: Proposal, objective: float) -> None:
        if self._pending is None:
            raise ProtocolError("tell called before ask")
        if proposal.id != self._pending.id:
            raise ProtocolError(f"tell for proposal {proposal.id}, but {self._pending.id} is pending")
        self._pending = None
        self._tell(proposal, float(objective))

    def observe(self, proposal: Proposal, objective: float) -> None:
        self._tell(proposal, float(objective))

    def replay(self, record: TrialRecord, history: Iterable[TrialRecord]) -> None:
        if self._pending is not None:
            raise ProtocolError("replay while a proposal is pending")
        self._counter += 1
        self._pending = self._replay_proposal(record, history_records(history))
        self.tell(self._pending, record.objective)

    def _replay_proposal(self, record: TrialRecord, history: Sequence[TrialRecord]) -> Proposal:
        proposal = self._ask(history)
        if proposal.config != record.config or proposal.source_tag != record.proposal_source:
            raise ReplayMismatch(f"trial {record.trial_id} does not match the replayed proposal")
        return proposal

    def _ask(self, history: Sequence[TrialRecord]) -> Proposal:
        raise NotImplementedError

    def _tell(self, proposal: Proposal, objective: float) -> None:
        pass


class RandomSearch(Optimizer):
    name = "random"

    def _ask(self, history):
        return self._proposal(RANDOM, config=random_propose(self.space, self.streams.sampler))

"""CMA-ES that hands some of its turns to an LLM reading the optimizer state.

On each turn a uniform draw from the ``turn_selection`` stream decides
whether the LLM is consulted (probability ``r``). Either way CMA-ES samples
its own proposal from the ``sampler`` stream, so the sampler sequence does
not depend on ``r``. On an LLM turn the model sees the CMA-ES mean, step
size, covariance, the best and most recent trials, and the CMA-ES proposal,
and may keep or override it. Whatever gets evaluated is fed back to CMA-ES.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Sequence

from .cmaes import DEFAULT_SIGMA0, SampledConfigs, StateSummary, cma_init
from .core import CLASSICAL, LLM, Optimizer, ReplayMismatch, RngStreams
from .llm import (
    CONFIG_INSTRUCTION,
    LAST_N,
    SYSTEM_PROMPT,
    TOP_K,
    ChatClient,
    ask_for_config,
    describe_space,
    format_config_block,
    format_trial,
    select_window,
)
from .runner import StudyLog, TrialRecord
from .space import SearchSpace, canonical_config

DEFAULT_RATIO = 0.3


@dataclass(frozen=True)
class CentaurConfig:
    ratio: float = DEFAULT_RATIO
    top_k: int = TOP_K
    last_n: int = LAST_N
    digits: int = 4
    sigma0: float = DEFAULT_SIGMA0
    popsize: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"LLM ratio must lie in [0, 1], got {self.ratio}")


def format_covariance(summary: StateSummary, digits: int = 4) -> str:
    width = max(len(label) for label in summary.labels)
    header = " " * width + " " + " ".join(f"{label:>{max(10, len(label))}}" for label in summary.labels)
    rows = [header]
    for label, row in summary.covariance_rows():
        cells = " ".join(f"{v:>{max(10, len(col))}.{digits}g}" for v, col in zip(row, summary.labels))
        rows.append(f"{label:<{width}} {cells}")
    return "\n".join(rows)


def build_state_prompt(
    summary: StateSummary,
    history: Sequence[TrialRecord],
    space: SearchSpace,
    proposal: dict,
    top_k: int = TOP_K,
    last_n: int = LAST_N,
    digits: int = 4,
) -> list[dict]:
    """Chat messages exposing the CMA-ES state and its pending proposal.

    The proposal is the only fenced block in the prompt.
    """
    top, last = select_window(history, top_k, last_n)
    mean_lines = "\n".join(f"- {name}: {json.dumps(value)}" for name, value in summary.mean_config.items())
    ranked = "\n".join(f"- rank {k}: {format_trial(r)[2:]}" for k, r in enumerate(top, start=1))
    parts = [
        "## Search space",
        describe_space(space),
        "## CMA-ES state",
        "The optimizer works in unit coordinates: each parameter is mapped to [0, 1] "
        "(log-scaled where marked), categoricals by choice index.",
        "Distribution mean, as a configuration:",
        mean_lines,
        f"Step size sigma: {summary.sigma:.{digits}g}",
        "Covariance matrix C (unit coordinates; rows and columns labeled by parameter):",
        format_covariance(summary, digits),
        f"## Best {len(top)} trials",
        ranked or "(none yet)",
        f"## Last {len(last)} trials",
        "\n".join(format_trial(r) for r in last) or "(none yet)",
        "## CMA-ES proposal for the next trial",
        format_config_block(proposal),
        "## Task",
        "Keep the proposal if you think it is good, or return an improved configuration. " + CONFIG_INSTRUCTION,
    ]
    return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": "\n\n".join(parts)}]


class Centaur(Optimizer):
    name = "centaur"

    def __init__(self, space: SearchSpace, streams: RngStreams, client: ChatClient | None, config: CentaurConfig | None = None):
        super().__init__(space, streams)
        self.config = config or CentaurConfig()
        if client is None and self.config.ratio > 0:
            raise ValueError("Centaur with a non-zero LLM ratio needs an LLM client")
        self.client = client
        self.state = cma_init(space, self.config.sigma0, self.config.popsize)
        self.sampler = SampledConfigs(self.state, space)
        self.llm_turns = 0
        self.overrides = 0

    def _draws(self) -> tuple[bool, dict]:
        llm_turn = bool(self.streams.turn_selection.random() < self.config.ratio)
        x0 = self.sampler.sample(self.streams.sampler)
        return llm_turn, x0

    def _ask(self, history):
        llm_turn, x0 = self._draws()
        if not llm_turn:
            return self._proposal(CLASSICAL, config=x0, metadata={"llm_turn": False})
        self.llm_turns += 1
        summary = self.state.export(self.space, self.config.digits)
        messages = build_state_prompt(
            summary, history, self.space, x0, self.config.top_k, self.config.last_n, self.config.digits
        )
        config, seconds = ask_for_config(self.client, messages, self.space)
        if config is None:
            return self._proposal(CLASSICAL, config=x0, metadata={"llm_turn": True, "llm_failed": True}, llm_seconds=seconds)
        config = canonical_config(config, self.space)
        overridden = config != x0
        self.overrides += overridden
        return self._proposal(LLM, config=config, metadata={"llm_turn": True, "overridden": overridden}, llm_seconds=seconds)

    def _tell(self, proposal, objective):
        self.sampler.add(proposal.config, objective)

    def _replay_proposal(self, record, history):
        llm_turn, x0 = self._draws()
        if llm_turn != bool(record.metadata.get("llm_turn", False)):
            raise ReplayMismatch(f"trial {record.trial_id}: turn selection disagrees with the study file")
        if not llm_turn and record.config != x0:
            raise ReplayMismatch(f"trial {record.trial_id} does not match the replayed CMA-ES sample")
        self.llm_turns += llm_turn
        self.overrides += bool(record.metadata.get("overridden", False))
        return self._proposal(record.proposal_source, config=record.config, metadata=dict(record.metadata))


def is_llm_turn(record: TrialRecord) -> bool:
    return bool(record.metadata.get("llm_turn", record.proposal_source == LLM))


def incumbent_improvements(records: Sequence[TrialRecord]) -> list[TrialRecord]:
    """Trials after the first whose objective beats every earlier trial."""
    out = []
    best = None
    for r in records:
        if best is not None and r.objective < best:
            out.append(r)
        best = r.objective if best is None else min(best, r.objective)
    return out


def centaur_report(log: StudyLog | Sequence[TrialRecord], method: str | None = None) -> dict[str, Any]:
    """Share of LLM turns, how often the LLM overrode CMA-ES, and who improved the incumbent."""
    records = list(log)
    if method is None and isinstance(log, StudyLog):
        method = log.header.method
    turns = [r for r in records if is_llm_turn(r)]
    overrides = [r for r in turns if r.metadata.get("overridden", r.proposal_source == LLM)]
    improvements = incumbent_improvements(records)
    by_source: dict[str, int] = {}
    for r in improvements:
        by_source[r.proposal_source] = by_source.get(r.proposal_source, 0) + 1
    n = len(records)
    return {
        "n_trials": n,
        "llm_turns": len(turns),
        "llm_turn_fraction": len(turns) / n if n else 0.0,
        "override_rate": len(overrides) / len(turns) if turns else 0.0,
        "incumbent_improvements": len(improvements),
        "incumbent_improvements_by_source": by_source,
        "llm_improvement_share": by_source.get(LLM, 0) / len(improvements) if improvements else 0.0,
        "warning": None if method in (None, "centaur") else f"study method is {method!r}, not centaur",
    }

"""The study loop: baseline trial, then ask, evaluate, penalize, tell, append.

Evaluators turn a :class:`Proposal` into a :class:`TrialOutcome`. The
synthetic evaluator runs a pure objective in-process and charges a fixed
number of training seconds per trial; the script evaluator materializes and
runs the real training script through :func:`execute_trial`.
"""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .centaur import Centaur, CentaurConfig
from .cmaes import CmaEsOptimizer
from .core import Optimizer, Proposal, RandomSearch, RngStreams
from .llm import LLAMBO_VARIANTS, Agent14, ChatClient, CodeAgent, Llambo, LlamboToggles
from .runner import (
    DEFAULT_COMMAND,
    DEFAULT_OOM_EXIT_CODES,
    DEFAULT_OOM_MARKERS,
    OK,
    PENALTY,
    RUNTIME_ERROR,
    SEED_ENV,
    CorruptStudyError,
    StudyHeader,
    StudyLog,
    TrialLimits,
    TrialOutcome,
    TrialRecord,
    append_trial,
    apply_penalty,
    budget_remaining,
    create_study,
    execute_trial,
    load_study,
    materialize_trial_script,
    source_digest,
)
from .space import SearchSpace, SpaceError, check_config, parse_script_hyperparameters
from .tpe import TpeOptimizer


class StudyConfigError(ValueError):
    """The method spec or study settings are unusable."""


# --------------------------------------------------------------------------
# Evaluators

Objective = Callable[[Mapping[str, Any]], "tuple[str, float | None]"]


@dataclass
class SyntheticEvaluator:
    """In-process objective; every trial costs ``ok_seconds`` (or ``fail_seconds`` when it fails).

    Code proposals are read back through the space's assignment grammar, so
    a script that breaks a hyperparameter literal becomes a runtime error.
    """

    objective: Objective
    space: SearchSpace
    ok_seconds: float = 300.0
    fail_seconds: float = 20.0

    def config_of(self, proposal: Proposal) -> dict | None:
        if proposal.config is not None:
            return proposal.config
        try:
            found = {p.name: p.default for p in parse_script_hyperparameters(proposal.source)}
            config = {name: found[name] for name in self.space.names}
            check_config(config, self.space)
        except (KeyError, SpaceError, SyntaxError, ValueError):
            return None
        return config

    def __call__(self, proposal: Proposal, trial_id: int, seed: int) -> TrialOutcome:
        config = self.config_of(proposal)
        if config is None:
            return TrialOutcome(RUNTIME_ERROR, None, self.fail_seconds)
        status, value = self.objective(config)
        return TrialOutcome(status, value, self.ok_seconds if status == OK else self.fail_seconds)


@dataclass
class ScriptEvaluator:
    """Materializes the base script (or takes an edited one) and runs it as a subprocess."""

    base_source: str
    limits: TrialLimits = field(default_factory=TrialLimits)
    command: str = DEFAULT_COMMAND
    env: Mapping[str, str] = field(default_factory=dict)
    oom_exit_codes: tuple = DEFAULT_OOM_EXIT_CODES
    oom_markers: tuple = DEFAULT_OOM_MARKERS

    def __call__(self, proposal: Proposal, trial_id: int, seed: int) -> TrialOutcome:
        if proposal.config is not None:
            script = materialize_trial_script(self.base_source, proposal.config)
        else:
            script = proposal.source
        env = {**self.env, SEED_ENV: str(seed)}
        return execute_trial(
            script,
            self.limits,
            env,
            command=self.command,
            oom_exit_codes=self.oom_exit_codes,
            oom_markers=self.oom_markers,
        )


Evaluator = Callable[[Proposal, int, int], TrialOutcome]


# --------------------------------------------------------------------------
# Method registry

@dataclass(frozen=True)
class MethodSpec:
    name: str
    params: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, obj: MethodSpec | str | Mapping[str, Any]) -> MethodSpec:
        if isinstance(obj, MethodSpec):
            return obj
        if isinstance(obj, str):
            return cls(obj)
        if not isinstance(obj, Mapping) or "name" not in obj:
            raise StudyConfigError("method spec needs a 'name'")
        extra = set(obj) - {"name", "params"}
        if extra:
            raise StudyConfigError(f"unknown method spec keys: {', '.join(sorted(extra))}")
        return cls(str(obj["name"]), dict(obj.get("params") or {}))

    def to_dict(self) -> dict:
        return {"name": self.name, "params": self.params}


LLM_METHODS = ("agent14", "llambo", "llambo_paper", "llambo_optuna", "code_agent", "centaur")
METHODS = ("random", "cmaes", "tpe") + LLM_METHODS


def needs_llm(spec: MethodSpec) -> bool:
    if spec.name == "centaur":
        return float(spec.params.get("ratio", spec.params.get("r", CentaurConfig.ratio))) > 0
    return spec.name in LLM_METHODS


def build_optimizer(
    spec: MethodSpec | str | Mapping[str, Any],
    space: SearchSpace,
    seed: int,
    client: ChatClient | None = None,
    base_source: str | None = None,
) -> Optimizer:
    """Instantiate a registered optimizer with seed-derived RNG streams."""
    spec = MethodSpec.parse(spec)
    streams = RngStreams(seed)
    params = dict(spec.params)
    if needs_llm(spec) and client is None:
        raise StudyConfigError(f"method {spec.name!r} needs an LLM endpoint or mock")
    try:
        if spec.name == "random":
            return RandomSearch(space, streams, **params)
        if spec.name == "cmaes":
            return CmaEsOptimizer(space, streams, **params)
        if spec.name == "tpe":
            return TpeOptimizer(space, streams, **params)
        if spec.name == "agent14":
            return Agent14(space, streams, client, **params)
        if spec.name in ("llambo", "llambo_paper", "llambo_optuna"):
            variant = params.pop("variant", spec.name.partition("_")[2] or "paper")
            if variant not in LLAMBO_VARIANTS:
                raise StudyConfigError(f"unknown LLAMBO variant {variant!r}")
            toggles = dataclasses.asdict(LLAMBO_VARIANTS[variant])
            for key in list(toggles):
                if key in params:
                    toggles[key] = bool(params.pop(key))
            return Llambo(space, streams, client, variant=variant, toggles=LlamboToggles(**toggles), **params)
        if spec.name == "code_agent":
            if not base_source:
                raise StudyConfigError("code_agent needs the base training script")
            return CodeAgent(space, streams, client, base_source, **params)
        if spec.name == "centaur":
            if "r" in params:
                params["ratio"] = params.pop("r")
            return Centaur(space, streams, client, CentaurConfig(**params))
    except TypeError as exc:
        raise StudyConfigError(f"bad parameters for {spec.name}: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, StudyConfigError):
            raise
        raise StudyConfigError(f"bad parameters for {spec.name}: {exc}") from exc
    raise StudyConfigError(f"unknown method {spec.name!r}; choose from {', '.join(METHODS)}")


# --------------------------------------------------------------------------
# Study loop

def _record(
    proposal: Proposal,
    outcome: TrialOutcome,
    trial_id: int,
    method: str,
    seed: int,
    penalty: float,
    started: float,
) -> tuple[TrialRecord, str | None]:
    source = proposal.source
    record = TrialRecord(
        trial_id=trial_id,
        method=method,
        seed=seed,
        proposal_source=proposal.source_tag,
        status=outcome.status,
        objective=apply_penalty(outcome, penalty),
        train_seconds=outcome.train_seconds,
        config=proposal.config,
        code_digest=source_digest(source) if source is not None else None,
        metadata=proposal.metadata,
        started_at=started,
        ended_at=time.time(),
        llm_seconds=proposal.llm_seconds,
    )
    return record, source


def _check_resumable(log: StudyLog, header: StudyHeader) -> None:
    old = log.header
    for attr in ("method", "seed", "space_digest", "penalty", "method_params"):
        if getattr(old, attr) != getattr(header, attr):
            raise CorruptStudyError(f"cannot resume: study file has a different {attr}")


def run_study(
    method: MethodSpec | str | Mapping[str, Any],
    space: SearchSpace,
    evaluator: Evaluator,
    *,
    budget_seconds: float,
    seed: int,
    max_trials: int | None = None,
    penalty: float = PENALTY,
    path: str | Path | None = None,
    resume: bool = False,
    client: ChatClient | None = None,
    base_source: str | None = None,
    on_trial: Callable[[TrialRecord, StudyLog], None] | None = None,
    until: Callable[[StudyLog], bool] | None = None,
) -> StudyLog:
    """Run (or continue) one study and return its final snapshot.

    Trial 1 evaluates the space defaults (or the base script for the code
    agent) and is shown to the optimizer without an ask. The loop stops once
    the training budget is spent or ``max_trials`` trials exist; LLM
    inference time is never charged to the budget. ``until`` is an extra
    stopping rule checked after every trial.
    """
    spec = MethodSpec.parse(method)
    if max_trials is not None and max_trials < 0:
        raise StudyConfigError("max_trials must be >= 0")
    optimizer = build_optimizer(spec, space, seed, client, base_source)
    header = StudyHeader(
        method=spec.name,
        seed=seed,
        space=space,
        budget_seconds=float(budget_seconds),
        penalty=float(penalty),
        max_trials=max_trials,
        method_params=spec.params,
    )

    if resume and path is not None and Path(path).exists():
        stored = load_study(path, space)
        _check_resumable(stored, header)
        for i, record in enumerate(stored.records):
            prefix = StudyLog(stored.header, stored.records[:i], stored.path, stored.sources)
            if i == 0:
                optimizer.observe(optimizer.baseline_proposal(), record.objective)
            else:
                optimizer.replay(record, prefix)
        log = stored
    else:
        log = create_study(header, path)

    def done() -> bool:
        if until is not None and len(log) and until(log):
            return True
        if max_trials is not None and len(log) >= max_trials:
            return True
        return budget_remaining(log, budget_seconds) <= 0

    while not done():
        trial_id = len(log) + 1
        started = time.time()
        baseline = trial_id == 1
        proposal = optimizer.baseline_proposal() if baseline else optimizer.ask(log)
        if proposal.metadata.get("generation_failed"):
            outcome = TrialOutcome(RUNTIME_ERROR, None, 0.0)
        else:
            outcome = evaluator(proposal, trial_id, seed)
        record, source = _record(proposal, outcome, trial_id, spec.name, seed, penalty, started)
        if baseline:
            optimizer.observe(proposal, record.objective)
        else:
            optimizer.tell(proposal, record.objective)
        log = append_trial(log, record, source)
        if on_trial is not None:
            on_trial(record, log)
    return log

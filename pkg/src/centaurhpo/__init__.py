"""Hyperparameter optimization benchmark: classical, LLM-prompted and hybrid CMA-ES/LLM optimizers."""
from .centaur import Centaur, CentaurConfig, build_state_prompt, centaur_report
from .cmaes import CmaEsOptimizer, CmaState, cma_init
from .core import Optimizer, Proposal, RandomSearch, RngStreams, random_propose
from .runner import (
    PENALTY,
    StudyLog,
    TrialLimits,
    TrialOutcome,
    TrialRecord,
    apply_penalty,
    budget_remaining,
    content_digest,
    execute_trial,
    load_study,
    materialize_trial_script,
    trajectory_digest,
)
from .space import (
    HyperparameterDef,
    SearchSpace,
    build_search_space,
    denormalize,
    load_ranges,
    normalize,
    parse_script_hyperparameters,
    nanochat_space,
    validate,
)
from .study import MethodSpec, ScriptEvaluator, SyntheticEvaluator, build_optimizer, run_study
from .tpe import TpeOptimizer

__version__ = "0.1.0"

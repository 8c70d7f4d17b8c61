"""Centaur: CMA-ES proposes, an LLM may override on a fraction of turns, CMA-ES learns from all trials."""
from centaurhpo.centaur import centaur_report
from centaurhpo.llm import make_mock
from centaurhpo.runner import trajectory_digest
from centaurhpo.space import nanochat_space
from centaurhpo.study import SyntheticEvaluator, run_study
from centaurhpo.synthetic import OBJECTIVES

space = nanochat_space()


def study(method, seed, mock=None, **kw):
    client = make_mock(mock, space) if mock else None
    return run_study(method, space, SyntheticEvaluator(OBJECTIVES["sphere14"], space), budget_seconds=1e12, seed=seed, client=client, **kw)


# An LLM that always keeps the CMA-ES proposal leaves the trajectory untouched.
cma = study("cmaes", 0, max_trials=60)
same = study("centaur", 0, "identity", max_trials=60)
print("identity LLM keeps the CMA-ES trajectory:", trajectory_digest(cma) == trajectory_digest(same))

# An LLM that knows the optimum pulls the search there within a few turns.
for seed in range(3):
    a = study("cmaes", seed, max_trials=2000, until=lambda l: l.records[-1].objective <= 1e-3)
    b = study("centaur", seed, "oracle-sphere", max_trials=2000, until=lambda l: l.records[-1].objective <= 1e-3)
    print(f"seed {seed}: evaluations to 1e-3, CMA-ES {len(a)} vs Centaur {len(b)}")

# Turn and attribution accounting for one longer study.
log = study({"name": "centaur", "params": {"ratio": 0.3}}, 1, "oracle-sphere", max_trials=100)
rep = centaur_report(log)
print({k: rep[k] for k in ("llm_turns", "llm_turn_fraction", "override_rate", "incumbent_improvements_by_source")})

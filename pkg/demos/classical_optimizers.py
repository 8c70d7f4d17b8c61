"""Random search, CMA-ES and TPE on the objective with an infeasible region."""
from centaurhpo.metrics import diversity, format_table, summary_row
from centaurhpo.space import nanochat_space
from centaurhpo.study import SyntheticEvaluator, run_study
from centaurhpo.synthetic import OBJECTIVES

space = nanochat_space()
objective = OBJECTIVES["infeasible_halfspace"]

rows = []
for method in ("random", "cmaes", "tpe"):
    logs = [
        run_study(method, space, SyntheticEvaluator(objective, space), budget_seconds=1e12, seed=seed, max_trials=200)
        for seed in range(3)
    ]
    rows.append(summary_row(logs))
    # How often did the last 50 proposals land in the infeasible region?
    late = [sum(not r.ok for r in log.records[-50:]) / 50 for log in logs]
    print(f"{method:<7} late failure rate per seed: {late}")

print()
print(format_table(rows, ("method", "best", "oom_pct", "spread", "pairwise", "step", "cells")))

# Diversity of a single study, on the 13 numeric parameters of successful trials.
log = run_study("cmaes", space, SyntheticEvaluator(objective, space), budget_seconds=1e12, seed=0, max_trials=200)
print(diversity(log))

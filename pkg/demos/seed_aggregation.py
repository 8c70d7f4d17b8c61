"""Aggregate best-so-far curves across seeds, by training time and by trial."""
from centaurhpo.metrics import aggregate_by_trial, aggregate_seeds, format_csv
from centaurhpo.space import nanochat_space
from centaurhpo.study import SyntheticEvaluator, run_study
from centaurhpo.synthetic import OBJECTIVES

space = nanochat_space()

# Failures cost less wall time than full runs, so seeds drift apart on the time axis.
evaluator = SyntheticEvaluator(OBJECTIVES["infeasible_halfspace"], space, ok_seconds=300, fail_seconds=40)
logs = [run_study("cmaes", space, evaluator, budget_seconds=6 * 3600, seed=s) for s in range(3)]
print("trials per seed:", [len(log) for log in logs])

curve = aggregate_seeds(logs)
print("final best, mean±std over seeds:", curve.summary())
print(format_csv(curve.rows()[-5:], (curve.axis, "mean", "std")))

by_trial = aggregate_by_trial(logs)
print("trial-indexed curve length:", len(by_trial.x))

"""Run one trial in a subprocess and see how outcomes are classified."""
import tempfile
from pathlib import Path

from centaurhpo.runner import TrialLimits, apply_penalty, execute_trial, materialize_trial_script
from centaurhpo.space import nanochat_source, nanochat_space

space = nanochat_space()
workdir = Path(tempfile.mkdtemp())

# A trial is the base script with its constants rewritten in place.
config = dict(space.defaults(), DEPTH=12, MATRIX_LR=0.02)
script = materialize_trial_script(nanochat_source(), config)
print([line for line in script.splitlines() if line.startswith(("DEPTH", "MATRIX_LR"))])

# The bundled script scores itself with a synthetic objective instead of training a model.
out = execute_trial(script, TrialLimits(workdir=workdir))
print("sphere objective:", out.status, out.objective, apply_penalty(out))

# Jointly large depth and batch size fall in the infeasible region and report an OOM.
big = materialize_trial_script(nanochat_source(), dict(space.defaults(), DEPTH=24, DEVICE_BATCH_SIZE=256))
out = execute_trial(big, TrialLimits(workdir=workdir), {"HPO_SYNTHETIC_OBJECTIVE": "infeasible_halfspace"})
print("infeasible corner:", out.status, "-> logged objective", apply_penalty(out))

# Timeouts and crashes are penalized the same way.
slow = "import time\ntime.sleep(10)\n"
out = execute_trial(slow, TrialLimits(wall_timeout_seconds=0.5, workdir=workdir))
print("slow script:", out.status, apply_penalty(out))

"""Desk-scale stand-in for a small language-model training script.

The ALL_CAPS literal assignments below are the tunable knobs; everything
else is ordinary code. Run as a trial, the script reads its own constants,
scores them with a synthetic objective and writes the result file named by
HPO_RESULT_FILE.
"""
import json
import os
import sys

# ---------------------------------------------------------------------------
# Model architecture

DEPTH = 8  # number of transformer layers
ASPECT_RATIO = 64  # model_dim = DEPTH * ASPECT_RATIO
HEAD_DIM = 128
DEVICE_BATCH_SIZE = 128
TOTAL_BATCH_SIZE = 524288  # tokens per optimizer step

# ---------------------------------------------------------------------------
# Optimization

EMBEDDING_LR = 0.6
UNEMBEDDING_LR = 0.004
MATRIX_LR = 0.04
SCALAR_LR = 0.5
WEIGHT_DECAY = 0.2
WARMUP_RATIO = 0.0
WARMDOWN_RATIO = 0.5
FINAL_LR_FRAC = 0.0
WINDOW_PATTERN = "SSSL"  # S = short (local) window, L = long (full) window

# Not extracted: computed values and lowercase names.
DATA_DIR = os.path.join(os.path.expanduser("~"), ".cache", "fineweb")
max_seq_len = 2048


def lr_multiplier(progress):
    if progress < WARMUP_RATIO:
        return (progress + 1e-8) / WARMUP_RATIO
    if progress < 1.0 - WARMDOWN_RATIO:
        return 1.0
    cooldown = (1.0 - progress) / WARMDOWN_RATIO
    return cooldown + (1 - cooldown) * FINAL_LR_FRAC


def main():
    from centaurhpo.space import nanochat_space
    from centaurhpo.synthetic import OBJECTIVES

    space = nanochat_space()
    config = {name: globals()[name] for name in space.names}
    objective = OBJECTIVES[os.environ.get("HPO_SYNTHETIC_OBJECTIVE", "sphere14")]
    status, value = objective(config)
    result = {"status": status}
    if value is not None:
        result["objective"] = value
    with open(os.environ["HPO_RESULT_FILE"], "w", encoding="utf-8") as fh:
        json.dump(result, fh)
    print(f"val_bpb: {value}" if value is not None else f"status: {status}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Build the 14-parameter search space from a training script and map configs to the unit cube."""
import numpy as np

from centaurhpo.space import (
    build_search_space,
    denormalize,
    load_ranges,
    normalize,
    parse_script_hyperparameters,
    nanochat_source,
)
from importlib import resources

# The training script declares its hyperparameters as top-level ALL_CAPS constants.
source = nanochat_source()
extracted = parse_script_hyperparameters(source)
print(f"{len(extracted)} constants found:", ", ".join(e.name for e in extracted))

# Ranges live in a sidecar file; the script only supplies names and defaults.
ranges = load_ranges((resources.files("centaurhpo") / "data" / "nanochat_ranges.json").read_text())
space = build_search_space(extracted, ranges)
for p in space:
    rng = p.choices if p.choices else (p.low, p.high)
    print(f"  {p.name:<18} {p.kind:<12} {str(rng):<28} log={p.log_scale!s:<5} default={p.default}")

# Every optimizer works on [0, 1]^14. Log-scaled parameters are spaced evenly in log space.
u = normalize(space.defaults(), space)
print("defaults in the unit cube:", np.round(u, 3))

# Decoding rounds integers half-up and picks a categorical by its slot.
print("centre of the cube:", denormalize(np.full(len(space), 0.5), space))

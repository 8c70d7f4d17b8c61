from __future__ import annotations

from pathlib import Path

import pytest

from centaurhpo.runner import PENALTY, TrialRecord
from centaurhpo.space import nanochat_space

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def space():
    return nanochat_space()


def make_record(trial_id, objective, *, config=None, status=None, source="classical", metadata=None, train_seconds=300.0):
    """A TrialRecord with penalty coupling handled: objective None means a failure."""
    if status is None:
        status = "ok" if objective is not None else "oom"
    if status != "ok":
        objective = PENALTY
    return TrialRecord(
        trial_id=trial_id,
        method="test",
        seed=0,
        proposal_source=source,
        status=status,
        objective=float(objective),
        train_seconds=train_seconds,
        config=config if config is not None else {"X": trial_id},
        metadata=metadata or {},
    )


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")

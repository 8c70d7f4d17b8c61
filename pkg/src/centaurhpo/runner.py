"""Trial materialization, sandboxed execution and the append-only study file.

Study files are JSON Lines: one header line followed by one line per trial.
Wall-clock data (``started_at``, ``ended_at``, ``llm_seconds``) lives under a
separate ``timing`` key which is left out of every digest, so two runs of a
deterministic method produce identical digests.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import resource
import shlex
import signal
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .space import SearchSpace, iter_assignments

PENALTY = 100.0

OK = "ok"
OOM = "oom"
RUNTIME_ERROR = "runtime_error"
TIMEOUT = "timeout"
STATUSES = (OK, OOM, RUNTIME_ERROR, TIMEOUT)

SOURCES = ("classical", "llm", "random", "resume")

DEFAULT_COMMAND = "{python} {script}"
DEFAULT_OOM_EXIT_CODES = (-signal.SIGKILL, 128 + signal.SIGKILL)
DEFAULT_OOM_MARKERS = ("out of memory", "OOM", "MemoryError")

RESULT_ENV = "HPO_RESULT_FILE"
SEED_ENV = "HPO_TRIAL_SEED"


class MaterializationError(ValueError):
    pass


class RunnerAbort(RuntimeError):
    """An environment problem that must stop the whole study."""


class CorruptStudyError(ValueError):
    pass


# --------------------------------------------------------------------------
# Materialization

def _format_literal(value: Any, original: str) -> str:
    if isinstance(value, str):
        if original[:1] == "'":
            return repr(value)
        return json.dumps(value)
    if isinstance(value, bool):
        raise MaterializationError(f"boolean values are not supported: {value!r}")
    if isinstance(value, int) or (hasattr(value, "dtype") and value.dtype.kind in "iu"):
        return str(int(value))
    return repr(float(value))


def materialize_trial_script(base_source: str, config: Mapping[str, Any]) -> str:
    """Rewrite the literal of every top-level assignment named in ``config``.

    All other text, including comments on rewritten lines, is left untouched.
    """
    lines = base_source.splitlines(keepends=True)
    seen = set()
    for i, m in iter_assignments(base_source):
        name = m["name"]
        if name not in config:
            continue
        seen.add(name)
        literal = _format_literal(config[name], m["literal"])
        lines[i] = f"{m['lhs']}{literal}{m['rest']}{m['eol'] or ''}"
    missing = [n for n in config if n not in seen]
    if missing:
        raise MaterializationError(f"no assignment for {', '.join(missing)}")
    return "".join(lines)


# --------------------------------------------------------------------------
# Execution

@dataclass(frozen=True)
class TrialLimits:
    wall_timeout_seconds: float = 600.0
    memory_limit_bytes: int = 8 * 1024**3
    workdir: Path = Path("trial")

    def __post_init__(self) -> None:
        if not self.wall_timeout_seconds > 0 or not self.memory_limit_bytes > 0:
            raise ValueError("trial limits must be strictly positive")
        object.__setattr__(self, "workdir", Path(self.workdir))


@dataclass(frozen=True)
class TrialOutcome:
    status: str
    objective: float | None = None
    train_seconds: float = 0.0
    stdout: str = ""
    stderr: str = ""
    returncode: int | None = None

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")


def apply_penalty(outcome: TrialOutcome, penalty: float = PENALTY) -> float:
    """Objective to report: the measured value for ok trials, ``penalty`` otherwise."""
    if outcome.status == OK:
        return float(outcome.objective)
    return float(penalty)


def _read_result(path: Path) -> dict | None:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return None
    return data if isinstance(data, dict) else None


def classify(
    result: dict | None,
    returncode: int | None,
    stderr: str,
    timed_out: bool,
    oom_exit_codes: Iterable[int] = DEFAULT_OOM_EXIT_CODES,
    oom_markers: Iterable[str] = DEFAULT_OOM_MARKERS,
) -> tuple[str, float | None]:
    """Map a finished subprocess onto exactly one status."""
    if timed_out:
        return TIMEOUT, None
    if result is not None:
        status = result.get("status")
        if status == OK:
            value = result.get("objective")
            if isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value):
                return OK, float(value)
            return RUNTIME_ERROR, None
        if status == OOM:
            return OOM, None
        if status == RUNTIME_ERROR:
            return RUNTIME_ERROR, None
    if returncode in tuple(oom_exit_codes):
        return OOM, None
    if any(marker in stderr for marker in oom_markers):
        return OOM, None
    return RUNTIME_ERROR, None


def execute_trial(
    script: str,
    limits: TrialLimits,
    env: Mapping[str, str] | None = None,
    *,
    command: str = DEFAULT_COMMAND,
    oom_exit_codes: Iterable[int] = DEFAULT_OOM_EXIT_CODES,
    oom_markers: Iterable[str] = DEFAULT_OOM_MARKERS,
    script_name: str = "train.py",
) -> TrialOutcome:
    """Run one trial script in ``limits.workdir`` and classify how it ended.

    ``command`` is a template with placeholders ``{python}``, ``{script}``,
    ``{workdir}``, ``{result_file}`` and ``{memory_limit}``. Independently of
    the template, the child's address space is capped at
    ``limits.memory_limit_bytes``.
    """
    workdir = limits.workdir.resolve()
    script_path = workdir / script_name
    result_file = workdir / "result.json"
    try:
        workdir.mkdir(parents=True, exist_ok=True)
        script_path.write_text(script, encoding="utf-8")
        if result_file.exists():
            result_file.unlink()
    except OSError as exc:
        raise RunnerAbort(f"cannot prepare trial workdir {workdir}: {exc}") from exc

    argv = shlex.split(
        command.format(
            python=shlex.quote(sys.executable),
            script=shlex.quote(str(script_path)),
            workdir=shlex.quote(str(workdir)),
            result_file=shlex.quote(str(result_file)),
            memory_limit=limits.memory_limit_bytes,
        )
    )
    child_env = dict(os.environ)
    child_env.update(env or {})
    child_env[RESULT_ENV] = str(result_file)
    child_env.setdefault(SEED_ENV, "0")

    mem = limits.memory_limit_bytes

    def _limit_memory() -> None:
        resource.setrlimit(resource.RLIMIT_AS, (mem, mem))

    start = time.perf_counter()
    proc = subprocess.Popen(
        argv,
        cwd=workdir,
        env=child_env,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
        start_new_session=True,
        preexec_fn=_limit_memory,
    )
    timed_out = False
    try:
        stdout, stderr = proc.communicate(timeout=limits.wall_timeout_seconds)
    except subprocess.TimeoutExpired:
        timed_out = True
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        stdout, stderr = proc.communicate()
    elapsed = time.perf_counter() - start

    result = None if timed_out else _read_result(result_file)
    status, objective = classify(result, proc.returncode, stderr, timed_out, oom_exit_codes, oom_markers)
    train_seconds = elapsed
    if result is not None and isinstance(result.get("train_seconds"), (int, float)):
        train_seconds = float(result["train_seconds"])
    return TrialOutcome(status, objective, max(0.0, train_seconds), stdout, stderr, proc.returncode)


# --------------------------------------------------------------------------
# Study persistence

@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    method: str
    seed: int
    proposal_source: str
    status: str
    objective: float
    train_seconds: float
    config: dict | None = None
    code_digest: str | None = None
    code_path: str | None = None
    metadata: dict = field(default_factory=dict)
    started_at: float | None = None
    ended_at: float | None = None
    llm_seconds: float = 0.0

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.proposal_source not in SOURCES:
            raise ValueError(f"unknown proposal source {self.proposal_source!r}")
        if (self.config is None) == (self.code_digest is None):
            raise ValueError("a trial carries exactly one of config or code_digest")
        if self.train_seconds < 0:
            raise ValueError("train_seconds must be >= 0")

    @property
    def ok(self) -> bool:
        return self.status == OK

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "kind": "trial",
            "trial_id": self.trial_id,
            "method": self.method,
            "seed": self.seed,
            "proposal_source": self.proposal_source,
        }
        if self.config is not None:
            d["config"] = self.config
        else:
            d["code"] = {"sha256": self.code_digest, "path": self.code_path}
        d.update(
            status=self.status,
            objective=self.objective,
            train_seconds=self.train_seconds,
            metadata=self.metadata,
            timing={"started_at": self.started_at, "ended_at": self.ended_at, "llm_seconds": self.llm_seconds},
        )
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TrialRecord:
        code = d.get("code") or {}
        timing = d.get("timing") or {}
        return cls(
            trial_id=d["trial_id"],
            method=d["method"],
            seed=d["seed"],
            proposal_source=d["proposal_source"],
            status=d["status"],
            objective=d["objective"],
            train_seconds=d["train_seconds"],
            config=d.get("config"),
            code_digest=code.get("sha256"),
            code_path=code.get("path"),
            metadata=d.get("metadata", {}),
            started_at=timing.get("started_at"),
            ended_at=timing.get("ended_at"),
            llm_seconds=timing.get("llm_seconds", 0.0),
        )


@dataclass(frozen=True)
class StudyHeader:
    method: str
    seed: int
    space: SearchSpace
    budget_seconds: float
    penalty: float = PENALTY
    max_trials: int | None = None
    method_params: dict = field(default_factory=dict)
    created_at: float | None = None

    @property
    def space_digest(self) -> str:
        return self.space.digest()

    def to_dict(self) -> dict:
        return {
            "kind": "header",
            "method": self.method,
            "method_params": self.method_params,
            "seed": self.seed,
            "space_digest": self.space_digest,
            "space": self.space.to_dict(),
            "budget_seconds": self.budget_seconds,
            "penalty": self.penalty,
            "max_trials": self.max_trials,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> StudyHeader:
        space = SearchSpace.from_dict(d["space"])
        if space.digest() != d["space_digest"]:
            raise CorruptStudyError("header space digest does not match the embedded space")
        return cls(
            method=d["method"],
            seed=d["seed"],
            space=space,
            budget_seconds=d["budget_seconds"],
            penalty=d["penalty"],
            max_trials=d.get("max_trials"),
            method_params=d.get("method_params", {}),
            created_at=d.get("created_at"),
        )


@dataclass(frozen=True)
class StudyLog:
    """Immutable snapshot of a study; :func:`append_trial` returns a new one."""

    header: StudyHeader
    records: tuple[TrialRecord, ...] = ()
    path: Path | None = None
    sources: Mapping[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def space(self) -> SearchSpace:
        return self.header.space

    @property
    def cumulative_train_seconds(self) -> float:
        total = 0.0
        for r in self.records:
            total += r.train_seconds
        return total

    def best(self) -> TrialRecord | None:
        best = None
        for r in self.records:
            if best is None or r.objective < best.objective:
                best = r
        return best

    def source_of(self, record: TrialRecord) -> str:
        return self.sources[record.code_digest]


def check_record(record: TrialRecord, penalty: float) -> None:
    if record.status == OK:
        if not (math.isfinite(record.objective) and record.objective < penalty):
            raise CorruptStudyError(f"trial {record.trial_id}: ok trial with objective {record.objective}")
    elif record.objective != penalty:
        raise CorruptStudyError(
            f"trial {record.trial_id}: {record.status} trial must carry the penalty {penalty}, got {record.objective}"
        )


def _dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, allow_nan=False)


def source_digest(source: str) -> str:
    return hashlib.sha256(source.encode("utf-8")).hexdigest()


def create_study(header: StudyHeader, path: str | os.PathLike | None = None) -> StudyLog:
    """Start an empty study; with a path, write the header line (the file must not exist)."""
    if header.created_at is None:
        header = dataclasses.replace(header, created_at=time.time())
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "x", encoding="utf-8") as fh:
            fh.write(_dumps(header.to_dict()) + "\n")
    return StudyLog(header, (), path, {})


def append_trial(log: StudyLog, record: TrialRecord, source: str | None = None) -> StudyLog:
    expected = len(log.records) + 1
    if record.trial_id != expected:
        raise CorruptStudyError(f"trial id {record.trial_id} does not follow {expected - 1}")
    check_record(record, log.header.penalty)
    sources = log.sources
    if record.code_digest is not None:
        if source is None and record.code_digest not in sources:
            raise ValueError("code trials need their source text")
        if source is not None:
            if source_digest(source) != record.code_digest:
                raise ValueError("source text does not match the record digest")
            sources = {**sources, record.code_digest: source}
            if log.path is not None:
                rel = f"{log.path.stem}.sources/{record.code_digest}.py"
                target = log.path.parent / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                if not target.exists():
                    target.write_text(source, encoding="utf-8")
                record = dataclasses.replace(record, code_path=rel)
    if log.path is not None:
        with open(log.path, "a", encoding="utf-8") as fh:
            fh.write(_dumps(record.to_dict()) + "\n")
    return StudyLog(log.header, log.records + (record,), log.path, sources)


def load_study(path: str | os.PathLike, space: SearchSpace | None = None) -> StudyLog:
    """Read a study file back; ``space`` (if given) must match the header's digest."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise CorruptStudyError(f"{path}: empty study file")
    try:
        rows = [json.loads(line) for line in lines if line.strip()]
    except ValueError as exc:
        raise CorruptStudyError(f"{path}: unreadable line ({exc})") from exc
    if rows[0].get("kind") != "header":
        raise CorruptStudyError(f"{path}: first line is not a header")
    header = StudyHeader.from_dict(rows[0])
    if space is not None and space.digest() != header.space_digest:
        raise CorruptStudyError(f"{path}: search space differs from the study header")
    records = []
    sources = {}
    for i, row in enumerate(rows[1:], start=1):
        if row.get("kind") != "trial":
            raise CorruptStudyError(f"{path}: line {i + 1} is not a trial")
        record = TrialRecord.from_dict(row)
        if record.trial_id != i:
            raise CorruptStudyError(f"{path}: trial id gap, expected {i}, found {record.trial_id}")
        check_record(record, header.penalty)
        if record.code_digest is not None and record.code_path:
            sources[record.code_digest] = (path.parent / record.code_path).read_text(encoding="utf-8")
        records.append(record)
    return StudyLog(header, tuple(records), path, sources)


def budget_remaining(log: StudyLog, budget_seconds: float) -> float:
    """Training seconds left; LLM inference time is never charged."""
    return budget_seconds - log.cumulative_train_seconds


def _canonical(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def content_digest(log: StudyLog) -> str:
    """SHA-256 over every non-timestamp field of header and records.

    The stopping limits (``budget_seconds``, ``max_trials``) are left out too,
    since a resumed study may extend them without changing its trials.
    """
    h = hashlib.sha256()
    header = log.header.to_dict()
    for key in ("created_at", "budget_seconds", "max_trials"):
        header.pop(key)
    h.update(_canonical(header))
    for r in log.records:
        d = r.to_dict()
        d.pop("timing")
        if "code" in d:
            d["code"] = {"sha256": d["code"]["sha256"]}
        h.update(_canonical(d))
    return h.hexdigest()


def trajectory_digest(log: StudyLog) -> str:
    """SHA-256 over what was evaluated and what came back, ignoring who proposed it.

    Two studies with the same trajectory digest evaluated the same sequence
    of configurations (or sources) with the same outcomes.
    """
    h = hashlib.sha256()
    for r in log.records:
        payload = r.config if r.config is not None else r.code_digest
        h.update(_canonical([r.trial_id, payload, r.status, r.objective, r.train_seconds]))
    return h.hexdigest()


"""Command-line entry point: extract-space, run, report, ablate-ratio.

Exit codes: 0 success, 1 user or configuration error, 2 runtime abort.

A study config is one JSON document; relative paths resolve against the
config file's directory::

    {
      "method": {"name": "centaur", "params": {"ratio": 0.3}},
      "space": {"script": "train.py", "ranges": "ranges.json"},
      "evaluator": {"kind": "synthetic", "objective": "sphere14"},
      "budget_seconds": 86400,
      "max_trials": 300,
      "seeds": [0, 1, 2],
      "endpoint": {"base_url": "http://localhost:8000/v1", "model": "Qwen/Qwen3.5-27B"},
      "output_dir": "runs/centaur"
    }

``space`` may also be ``{"file": "space.json"}`` or the string ``"nanochat"``
(the bundled preset). ``evaluator`` is either synthetic (``objective``,
``ok_seconds``, ``fail_seconds``) or ``{"kind": "script", ...}`` with
``command``, ``wall_timeout_seconds``, ``memory_limit_bytes``, ``workdir``,
``env``, in which case ``space`` must name a script. ``endpoint`` may be an
inline object or a path to a JSON file holding one.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence, TextIO

from .centaur import centaur_report
from .core import ProtocolError
from .llm import MOCKS, ChatClient, HttpChatClient, LlmEndpointConfig, LlmFailure, make_mock
from .metrics import (
    SUMMARY_COLUMNS,
    aggregate_by_trial,
    aggregate_seeds,
    format_csv,
    format_table,
    mean_std,
    summary_row,
)
from .runner import (
    DEFAULT_COMMAND,
    PENALTY,
    CorruptStudyError,
    MaterializationError,
    RunnerAbort,
    StudyLog,
    TrialLimits,
    TrialRecord,
    load_study,
)
from .space import (
    SearchSpace,
    SpaceError,
    build_search_space,
    load_ranges,
    nanochat_source,
    nanochat_space,
    parse_script_hyperparameters,
)
from .study import MethodSpec, ScriptEvaluator, StudyConfigError, SyntheticEvaluator, run_study
from .synthetic import OBJECTIVES, branin_space

EXIT_OK = 0
EXIT_USER = 1
EXIT_ABORT = 2

DEFAULT_RATIOS = (0.1, 0.2, 0.3, 0.5, 0.8)
DEFAULT_MAX_TRIALS = 300

SPACE_COLUMNS = ("name", "kind", "range", "log", "default")
ABLATION_COLUMNS = ("ratio", "seeds", "best", "llm_turn_fraction", "override_rate", "llm_improvement_share")


class UserError(Exception):
    pass


# --------------------------------------------------------------------------
# Study config

@dataclass(frozen=True)
class StudyConfig:
    method: MethodSpec
    space: SearchSpace
    evaluator: dict
    budget_seconds: float
    seeds: tuple[int, ...]
    output_dir: Path
    max_trials: int | None = DEFAULT_MAX_TRIALS
    penalty: float = PENALTY
    endpoint: LlmEndpointConfig | None = None
    base_source: str | None = None

    @classmethod
    def load(cls, path: str | Path) -> StudyConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise UserError(f"cannot read study config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise UserError(f"{path}: invalid JSON (line {exc.lineno}: {exc.msg})") from exc
        return cls.from_dict(data, path.parent)

    @classmethod
    def from_dict(cls, data: dict, base: Path = Path(".")) -> StudyConfig:
        if not isinstance(data, dict):
            raise UserError("study config must be a JSON object")
        known = {"method", "space", "evaluator", "budget_seconds", "seeds", "output_dir", "max_trials", "penalty", "endpoint"}
        unknown = set(data) - known
        if unknown:
            raise UserError(f"unknown study config keys: {', '.join(sorted(unknown))}")
        for key in ("method", "budget_seconds", "seeds", "output_dir"):
            if key not in data:
                raise UserError(f"study config is missing {key!r}")
        seeds = data["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise UserError("seeds must be a non-empty list of integers")
        space, base_source = _resolve_space(data.get("space", "nanochat"), base)
        evaluator = dict(data.get("evaluator") or {"kind": "synthetic", "objective": "sphere14"})
        if evaluator.get("kind", "synthetic") == "script" and base_source is None:
            raise UserError("a script evaluator needs the space to be extracted from a script")
        endpoint = data.get("endpoint")
        if isinstance(endpoint, str):
            endpoint = json.loads(_read(base / endpoint))
        try:
            endpoint = LlmEndpointConfig.from_dict(endpoint) if endpoint is not None else None
        except (TypeError, ValueError) as exc:
            raise UserError(f"bad endpoint config: {exc}") from exc
        max_trials = data.get("max_trials", DEFAULT_MAX_TRIALS)
        return cls(
            method=MethodSpec.parse(data["method"]),
            space=space,
            evaluator=evaluator,
            budget_seconds=float(data["budget_seconds"]),
            seeds=tuple(seeds),
            output_dir=base / data["output_dir"],
            max_trials=None if max_trials is None else int(max_trials),
            penalty=float(data.get("penalty", PENALTY)),
            endpoint=endpoint,
            base_source=base_source,
        )

    def study_path(self, seed: int) -> Path:
        return self.output_dir / f"{self.method.name}-seed{seed}.jsonl"

    def make_evaluator(self):
        ev = dict(self.evaluator)
        kind = ev.pop("kind", "synthetic")
        try:
            if kind == "synthetic":
                name = ev.pop("objective", "sphere14")
                if name not in OBJECTIVES:
                    raise UserError(f"unknown synthetic objective {name!r}; choose from {', '.join(OBJECTIVES)}")
                return SyntheticEvaluator(OBJECTIVES[name], self.space, **ev)
            if kind == "script":
                limits = TrialLimits(
                    wall_timeout_seconds=float(ev.pop("wall_timeout_seconds", TrialLimits.wall_timeout_seconds)),
                    memory_limit_bytes=int(ev.pop("memory_limit_bytes", TrialLimits.memory_limit_bytes)),
                    workdir=self.output_dir / ev.pop("workdir", "trial"),
                )
                return ScriptEvaluator(
                    self.base_source, limits, command=ev.pop("command", DEFAULT_COMMAND), env=ev.pop("env", {}), **ev
                )
        except TypeError as exc:
            raise UserError(f"bad evaluator settings: {exc}") from exc
        raise UserError(f"unknown evaluator kind {kind!r}")


def _read(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UserError(f"cannot read {path}: {exc.strerror}") from exc


def _resolve_space(spec: Any, base: Path) -> tuple[SearchSpace, str | None]:
    if spec == "nanochat":
        return nanochat_space(), nanochat_source()
    if spec == "branin2":
        return branin_space(), None
    if not isinstance(spec, dict):
        raise UserError("space must be 'nanochat', 'branin2', {'file': ...} or {'script': ..., 'ranges': ...}")
    if "file" in spec:
        space = SearchSpace.from_json(_read(base / spec["file"]))
        source = _read(base / spec["script"]) if "script" in spec else None
        return space, source
    if "script" in spec and "ranges" in spec:
        source = _read(base / spec["script"])
        space = build_search_space(parse_script_hyperparameters(source), load_ranges(_read(base / spec["ranges"])))
        return space, source
    raise UserError("space needs 'file' or both 'script' and 'ranges'")


def make_client(config: StudyConfig, llm_mock: str | None) -> ChatClient | None:
    if llm_mock is not None:
        return make_mock(llm_mock, config.space)
    if config.endpoint is not None:
        return HttpChatClient(config.endpoint)
    return None


# --------------------------------------------------------------------------
# Commands

def space_rows(space: SearchSpace) -> list[dict]:
    rows = []
    for p in space:
        rng = "{" + ", ".join(p.choices) + "}" if p.choices else f"[{p.low}, {p.high}]"
        rows.append({"name": p.name, "kind": p.kind, "range": rng, "log": "yes" if p.log_scale else "", "default": p.default})
    return rows


def cmd_extract_space(script: str | Path, ranges: str | Path, out: str | Path, stdout: TextIO = sys.stdout) -> SearchSpace:
    source = _read(Path(script))
    extracted = parse_script_hyperparameters(source)
    if not extracted:
        raise UserError(f"warning: {script} has no top-level ALL_CAPS literal assignments; nothing to extract")
    space = build_search_space(extracted, load_ranges(_read(Path(ranges))))
    Path(out).write_text(space.to_json(), encoding="utf-8")
    stdout.write(format_table(space_rows(space), SPACE_COLUMNS))
    return space


def progress_line(record: TrialRecord, log: StudyLog) -> str:
    return (
        f"trial {record.trial_id:>4}  {record.proposal_source:<9}  {record.status:<13}  "
        f"y={record.objective:<12.6g}  best={log.best().objective:<12.6g}  "
        f"train={log.cumulative_train_seconds:.0f}s"
    )


def run_config(
    config: StudyConfig,
    *,
    resume: bool = False,
    llm_mock: str | None = None,
    stdout: TextIO = sys.stdout,
) -> list[StudyLog]:
    """Run every seed of ``config`` in turn, one study file per seed."""
    client = make_client(config, llm_mock)
    evaluator = config.make_evaluator()
    logs = []
    for seed in config.seeds:
        path = config.study_path(seed)
        if path.exists() and not resume:
            raise UserError(f"{path} exists; pass --resume to continue it")
        stdout.write(f"# {config.method.name} seed {seed} -> {path}\n")
        log = run_study(
            config.method,
            config.space,
            evaluator,
            budget_seconds=config.budget_seconds,
            seed=seed,
            max_trials=config.max_trials,
            penalty=config.penalty,
            path=path,
            resume=resume,
            client=client,
            base_source=config.base_source,
            on_trial=lambda r, log: stdout.write(progress_line(r, log) + "\n"),
        )
        logs.append(log)
    return logs


def study_label(log: StudyLog) -> str:
    params = log.header.method_params
    if not params:
        return log.header.method
    inner = ",".join(f"{k}={params[k]}" for k in sorted(params))
    return f"{log.header.method}[{inner}]"


def load_dir(directory: str | Path) -> list[StudyLog]:
    directory = Path(directory)
    paths = sorted(directory.rglob("*.jsonl"))
    if not paths:
        raise UserError(f"no study files under {directory}")
    logs = [load_study(p) for p in paths]
    if len({log.header.space_digest for log in logs}) > 1:
        raise UserError(f"studies under {directory} use different search spaces")
    return logs


def report_rows(logs: Sequence[StudyLog]) -> list[dict]:
    groups: dict[str, list[StudyLog]] = {}
    for log in logs:
        groups.setdefault(study_label(log), []).append(log)
    rows = []
    for label in sorted(groups):
        group = sorted(groups[label], key=lambda log: log.header.seed)
        row = summary_row(group)
        row["method"] = label
        rows.append(row)
    return rows


def cmd_report(directory: str | Path, fmt: str = "table", stdout: TextIO = sys.stdout) -> list[dict]:
    """Summary row per method on stdout; convergence curves written under ``<dir>/report``."""
    directory = Path(directory)
    logs = load_dir(directory)
    rows = report_rows(logs)
    if fmt == "csv":
        stdout.write(format_csv(rows, SUMMARY_COLUMNS))
    else:
        stdout.write(format_table(rows, SUMMARY_COLUMNS))
    out = directory / "report"
    out.mkdir(exist_ok=True)
    groups: dict[str, list[StudyLog]] = {}
    for log in logs:
        groups.setdefault(study_label(log), []).append(log)
    for label, group in groups.items():
        for name, curve in (("time", aggregate_seeds(group)), ("trial", aggregate_by_trial(group))):
            (out / f"{label}.{name}.csv").write_text(format_csv(curve.rows(), (curve.axis, "mean", "std")), encoding="utf-8")
    return rows


def ablation_row(ratio: float, logs: Sequence[StudyLog]) -> dict:
    reports = [centaur_report(log) for log in logs]
    turns = sum(r["llm_turns"] for r in reports)
    overrides = sum(r["override_rate"] * r["llm_turns"] for r in reports)
    improvements = sum(r["incumbent_improvements"] for r in reports)
    from_llm = sum(r["incumbent_improvements_by_source"].get("llm", 0) for r in reports)
    n = sum(r["n_trials"] for r in reports)
    return {
        "ratio": ratio,
        "seeds": len(logs),
        "best": mean_std([log.best().objective for log in logs]),
        "llm_turn_fraction": round(turns / n, 3) if n else 0.0,
        "override_rate": round(overrides / turns, 3) if turns else 0.0,
        "llm_improvement_share": round(from_llm / improvements, 3) if improvements else 0.0,
    }


def cmd_ablate_ratio(
    config: StudyConfig,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    *,
    resume: bool = False,
    llm_mock: str | None = None,
    stdout: TextIO = sys.stdout,
) -> list[dict]:
    if config.method.name != "centaur":
        raise UserError(f"ratio ablation needs method centaur, config has {config.method.name!r}")
    bad = [r for r in ratios if not 0.0 <= r <= 1.0]
    if bad:
        raise UserError(f"LLM ratios must lie in [0, 1]; got {', '.join(map(str, bad))}")
    rows = []
    for ratio in ratios:
        params = {k: v for k, v in config.method.params.items() if k != "r"}
        method = MethodSpec("centaur", {**params, "ratio": ratio})
        sub = dataclasses.replace(config, method=method, output_dir=config.output_dir / f"ratio-{ratio:g}")
        logs = run_config(sub, resume=resume, llm_mock=llm_mock, stdout=stdout)
        rows.append(ablation_row(ratio, logs))
    stdout.write(format_table(rows, ABLATION_COLUMNS))
    return rows


# --------------------------------------------------------------------------
# Entry point

def _ratios(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="centaurhpo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-space", help="build a search-space file from a training script and a ranges file")
    p.add_argument("--script", required=True)
    p.add_argument("--ranges", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="run every seed of a study config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--llm-mock", choices=MOCKS)

    p = sub.add_parser("report", help="summarize the studies in a directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--format", choices=("table", "csv"), default="table")

    p = sub.add_parser("ablate-ratio", help="run a centaur config at several LLM ratios")
    p.add_argument("--config", required=True)
    p.add_argument("--ratios", type=_ratios, default=list(DEFAULT_RATIOS))
    p.add_argument("--resume", action="store_true")
    p.add_argument("--llm-mock", choices=MOCKS)
    return parser


def main(argv: Sequence[str] | None = None, stdout: TextIO | None = None, stderr: TextIO | None = None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USER
    try:
        if args.command == "extract-space":
            cmd_extract_space(args.script, args.ranges, args.out, stdout)
        elif args.command == "run":
            run_config(StudyConfig.load(args.config), resume=args.resume, llm_mock=args.llm_mock, stdout=stdout)
        elif args.command == "report":
            cmd_report(args.dir, args.format, stdout)
        elif args.command == "ablate-ratio":
            config = StudyConfig.load(args.config)
            cmd_ablate_ratio(config, args.ratios, resume=args.resume, llm_mock=args.llm_mock, stdout=stdout)
    except (UserError, SpaceError, StudyConfigError, CorruptStudyError, MaterializationError) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_USER
    except (RunnerAbort, ProtocolError, LlmFailure, OSError) as exc:
        stderr.write(f"aborted: {exc}\n")
        return EXIT_ABORT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

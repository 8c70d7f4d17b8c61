"""Search-space definition, script extraction and unit-cube encoding.

A :class:`SearchSpace` is an ordered tuple of :class:`HyperparameterDef`.
Configurations are plain ``dict`` objects mapping parameter names to values
(``int`` for integer, ``float`` for real, ``str`` for categorical). The
optimizers work on the unit cube: every parameter, categoricals included,
occupies exactly one coordinate in ``[0, 1]``.
"""
from __future__ import annotations

import ast
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterable, Mapping, NamedTuple

import numpy as np

INTEGER = "integer"
REAL = "real"
CATEGORICAL = "categorical"
KINDS = (INTEGER, REAL, CATEGORICAL)


class SpaceError(ValueError):
    """Base class for search-space problems."""


class ConfigurationError(SpaceError):
    """Raised when a range config or parameter definition is inconsistent."""


class ValidationError(SpaceError):
    """Raised when a configuration does not satisfy its search space."""

    def __init__(self, report: list[Violation]):
        self.report = report
        super().__init__("; ".join(str(v) for v in report))


class Violation(NamedTuple):
    param: str
    message: str

    def __str__(self) -> str:
        return f"{self.param}: {self.message}"


class ExtractedParam(NamedTuple):
    name: str
    kind: str
    default: Any


@dataclass(frozen=True)
class HyperparameterDef:
    """One tunable parameter.

    Numeric kinds carry ``low``/``high`` (inclusive) and an optional
    ``log_scale`` flag; categoricals carry ``choices`` instead.
    """

    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    log_scale: bool = False
    choices: tuple[str, ...] = ()
    default: Any = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigurationError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            object.__setattr__(self, "choices", tuple(self.choices))
            if not self.choices:
                raise ConfigurationError(f"{self.name}: categorical needs at least one choice")
            if len(set(self.choices)) != len(self.choices):
                raise ConfigurationError(f"{self.name}: duplicate choices")
            if self.default not in self.choices:
                raise ConfigurationError(
                    f"{self.name}: default {self.default!r} not among choices {list(self.choices)}"
                )
            return
        if self.low is None or self.high is None:
            raise ConfigurationError(f"{self.name}: numeric parameter needs low and high")
        if not self.low < self.high:
            raise ConfigurationError(f"{self.name}: low ({self.low}) must be < high ({self.high})")
        if self.log_scale and self.low <= 0:
            raise ConfigurationError(f"{self.name}: log scale requires low > 0")
        if self.kind == INTEGER:
            if not (float(self.low).is_integer() and float(self.high).is_integer()):
                raise ConfigurationError(f"{self.name}: integer parameter needs integer bounds")
            object.__setattr__(self, "low", int(self.low))
            object.__setattr__(self, "high", int(self.high))
        else:
            object.__setattr__(self, "low", float(self.low))
            object.__setattr__(self, "high", float(self.high))
        problem = self.check(self.default)
        if problem:
            raise ConfigurationError(f"{self.name}: default {self.default!r} {problem}")
        if self.kind == REAL:
            object.__setattr__(self, "default", float(self.default))

    @property
    def is_numeric(self) -> bool:
        return self.kind != CATEGORICAL

    def check(self, value: Any) -> str | None:
        """Return a short description of why ``value`` is invalid, or None."""
        if self.kind == CATEGORICAL:
            if not isinstance(value, str):
                return f"is not a string (got {type(value).__name__})"
            if value not in self.choices:
                return f"not one of {list(self.choices)}"
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
            return f"is not a number (got {type(value).__name__})"
        if self.kind == INTEGER and not isinstance(value, (int, np.integer)):
            return "is not an integer"
        if not math.isfinite(value):
            return "is not finite"
        if value < self.low:
            return f"below lower bound {self.low}"
        if value > self.high:
            return f"above upper bound {self.high}"
        return None

    def to_unit(self, value: Any) -> float:
        if self.kind == CATEGORICAL:
            return (self.choices.index(value) + 0.5) / len(self.choices)
        if self.log_scale:
            lo, hi = math.log(self.low), math.log(self.high)
            return (math.log(value) - lo) / (hi - lo)
        return (value - self.low) / (self.high - self.low)

    def from_unit(self, u: float) -> Any:
        u = min(1.0, max(0.0, float(u)))
        if self.kind == CATEGORICAL:
            k = len(self.choices)
            return self.choices[min(k - 1, math.floor(u * k))]
        if self.log_scale:
            lo, hi = math.log(self.low), math.log(self.high)
            x = math.exp(lo + u * (hi - lo))
        else:
            x = self.low + u * (self.high - self.low)
        if self.kind == INTEGER:
            return min(self.high, max(self.low, math.floor(x + 0.5)))
        return min(self.high, max(self.low, x))

    def describe(self) -> str:
        if self.kind == CATEGORICAL:
            return f"{self.name}: categorical, one of {list(self.choices)}, default {self.default!r}"
        scale = ", log scale" if self.log_scale else ""
        return f"{self.name}: {self.kind} in [{self.low}, {self.high}]{scale}, default {self.default!r}"

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == CATEGORICAL:
            d["choices"] = list(self.choices)
        else:
            d.update(low=self.low, high=self.high, log=self.log_scale)
        d["default"] = self.default
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> HyperparameterDef:
        return cls(
            name=d["name"],
            kind=d["kind"],
            low=d.get("low"),
            high=d.get("high"),
            log_scale=bool(d.get("log", False)),
            choices=tuple(d.get("choices", ())),
            default=d["default"],
        )


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[HyperparameterDef, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", tuple(self.params))
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigurationError("duplicate parameter names")
        object.__setattr__(self, "_index", {p.name: i for i, p in enumerate(self.params)})

    def __len__(self) -> int:
        return len(self.params)

    def __iter__(self):
        return iter(self.params)

    def __getitem__(self, name: str) -> HyperparameterDef:
        return self.params[self._index[name]]

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        return self._index[name]

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def total_dims(self) -> int:
        return len(self.params)

    @property
    def continuous_dims(self) -> int:
        return sum(p.is_numeric for p in self.params)

    @property
    def continuous_indices(self) -> list[int]:
        return [i for i, p in enumerate(self.params) if p.is_numeric]

    def defaults(self) -> dict[str, Any]:
        return {p.name: p.default for p in self.params}

    def to_dict(self) -> dict:
        return {"params": [p.to_dict() for p in self.params]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> SearchSpace:
        return cls(tuple(HyperparameterDef.from_dict(p) for p in d["params"]))

    @classmethod
    def from_json(cls, text: str) -> SearchSpace:
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


# --------------------------------------------------------------------------
# Extraction

_NAME = r"[A-Z][A-Z0-9_]*"
_DIGITS = r"\d(?:_?\d)*"
_EXP = r"[eE][+-]?\d(?:_?\d)*"
_FLOAT = rf"(?:{_DIGITS}\.(?:{_DIGITS})?(?:{_EXP})?|\.{_DIGITS}(?:{_EXP})?|{_DIGITS}{_EXP})"
_INT = r"(?:0+|[1-9](?:_?\d)*)"
_STRING = r"(?:'(?:[^'\\\n]|\\.)*'|\"(?:[^\"\\\n]|\\.)*\")"
_LITERAL = rf"(?:[+-]?{_FLOAT}|[+-]?{_INT}|{_STRING})"
ASSIGNMENT_RE = re.compile(
    rf"^(?P<lhs>(?P<name>{_NAME})[ \t]*=[ \t]*)(?P<literal>{_LITERAL})(?P<rest>[ \t]*(?:#[^\r\n]*)?)(?P<eol>\r?\n)?$"
)


def iter_assignments(source: str):
    """Yield ``(line_index, match)`` for every top-level ALL_CAPS literal assignment."""
    for i, line in enumerate(source.splitlines(keepends=True)):
        m = ASSIGNMENT_RE.match(line)
        if m:
            yield i, m


def _literal_kind(value: Any) -> str:
    if isinstance(value, str):
        return CATEGORICAL
    if isinstance(value, int):
        return INTEGER
    return REAL


def parse_script_hyperparameters(source: str) -> list[ExtractedParam]:
    """Collect ``NAME = literal`` statements written at column 0.

    Names must match ``[A-Z][A-Z0-9_]*`` and the right-hand side must be an
    integer, float or quoted string literal (optionally followed by a comment).
    Results keep the order of first appearance; a repeated name takes the
    value of its last assignment, as the interpreter would.
    """
    if not isinstance(source, str):
        raise TypeError(f"source must be text, got {type(source).__name__}")
    found: dict[str, ExtractedParam] = {}
    for _, m in iter_assignments(source):
        value = ast.literal_eval(m["literal"])
        found[m["name"]] = ExtractedParam(m["name"], _literal_kind(value), value)
    return list(found.values())


# --------------------------------------------------------------------------
# Range merge

_RANGE_KEYS = {"low", "high", "log", "choices", "kind"}


def load_ranges(text: str) -> dict[str, dict]:
    """Parse and schema-check a range-config document."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"ranges file is not valid JSON (line {exc.lineno}: {exc.msg})") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("ranges file must be an object keyed by parameter name")
    for name, spec in data.items():
        if not isinstance(spec, dict):
            raise ConfigurationError(f"{name}: range entry must be an object")
        unknown = set(spec) - _RANGE_KEYS
        if unknown:
            raise ConfigurationError(f"{name}: unknown range fields {sorted(unknown)}")
        if "choices" in spec:
            if {"low", "high", "log"} & set(spec):
                raise ConfigurationError(f"{name}: give either choices or low/high, not both")
            if not isinstance(spec["choices"], list) or not all(isinstance(c, str) for c in spec["choices"]):
                raise ConfigurationError(f"{name}: choices must be a list of strings")
        elif not {"low", "high"} <= set(spec):
            raise ConfigurationError(f"{name}: range entry needs low and high (or choices)")
    return data


def build_search_space(extracted: Iterable[ExtractedParam], ranges: Mapping[str, Mapping]) -> SearchSpace:
    """Merge extracted defaults with manual ranges into a SearchSpace."""
    extracted = list(extracted)
    names = {e.name for e in extracted}
    unknown = [n for n in ranges if n not in names]
    if unknown:
        raise ConfigurationError(f"ranges given for parameters not in the script: {', '.join(unknown)}")
    params = []
    for name, kind, default in extracted:
        if name not in ranges:
            raise ConfigurationError(f"{name}: no range configured for extracted parameter")
        spec = ranges[name]
        if "choices" in spec:
            if kind != CATEGORICAL:
                raise ConfigurationError(f"{name}: choices given for a numeric default {default!r}")
            params.append(HyperparameterDef(name, CATEGORICAL, choices=tuple(spec["choices"]), default=default))
            continue
        if kind == CATEGORICAL:
            raise ConfigurationError(f"{name}: string default {default!r} needs choices, not bounds")
        kind = spec.get("kind", kind)
        if kind == INTEGER and isinstance(default, float):
            if not default.is_integer():
                raise ConfigurationError(f"{name}: integer parameter has fractional default {default}")
            default = int(default)
        params.append(
            HyperparameterDef(
                name, kind, low=spec["low"], high=spec["high"], log_scale=bool(spec.get("log", False)), default=default
            )
        )
    return SearchSpace(tuple(params))


def nanochat_source() -> str:
    return resources.files("centaurhpo.data").joinpath("train_sample.py").read_text(encoding="utf-8")


def nanochat_ranges_text() -> str:
    return resources.files("centaurhpo.data").joinpath("nanochat_ranges.json").read_text(encoding="utf-8")


def nanochat_space() -> SearchSpace:
    """The 14-parameter language-model search space shipped with the package."""
    return build_search_space(parse_script_hyperparameters(nanochat_source()), load_ranges(nanochat_ranges_text()))


# --------------------------------------------------------------------------
# Configurations

def validate(config: Mapping[str, Any], space: SearchSpace) -> list[Violation]:
    """Return one :class:`Violation` per problem; empty means valid."""
    report = []
    for p in space:
        if p.name not in config:
            report.append(Violation(p.name, "missing parameter"))
            continue
        problem = p.check(config[p.name])
        if problem:
            report.append(Violation(p.name, problem))
    for name in config:
        if name not in space:
            report.append(Violation(name, "unknown parameter"))
    return report


def check_config(config: Mapping[str, Any], space: SearchSpace) -> None:
    report = validate(config, space)
    if report:
        raise ValidationError(report)


def normalize(config: Mapping[str, Any], space: SearchSpace) -> np.ndarray:
    check_config(config, space)
    return np.array([p.to_unit(config[p.name]) for p in space], dtype=float)


def denormalize(u: Iterable[float], space: SearchSpace) -> dict[str, Any]:
    """Decode a unit vector; coordinates outside ``[0, 1]`` are clamped."""
    u = np.asarray(u, dtype=float)
    if u.shape != (space.total_dims,):
        raise ValueError(f"expected {space.total_dims} coordinates, got shape {u.shape}")
    return {p.name: p.from_unit(x) for p, x in zip(space, u)}


def canonical_config(config: Mapping[str, Any], space: SearchSpace) -> dict[str, Any]:
    """Plain-Python values in space order (numpy scalars unwrapped)."""
    out = {}
    for p in space:
        v = config[p.name]
        if p.kind == INTEGER:
            v = int(v)
        elif p.kind == REAL:
            v = float(v)
        out[p.name] = v
    return out

"""Chat-completion client, scripted mocks, and the prompt-based optimizers.

Optimizers here never let an LLM failure abort a study: fixed-space agents
fall back to random proposals, the code agent turns a failed generation
into a penalized trial.
"""
from __future__ import annotations

import json
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import requests

from .core import CLASSICAL, LLM, RANDOM, Optimizer, Proposal, RngStreams, random_propose
from .runner import TrialRecord
from .space import (
    CATEGORICAL,
    INTEGER,
    REAL,
    SearchSpace,
    ValidationError,
    canonical_config,
    denormalize,
    normalize,
    validate,
)

FIXED_SPACE_MAX_TOKENS = 2048
CODE_MAX_TOKENS = 16384
TOP_K = 5
LAST_N = 20


class LlmFailure(RuntimeError):
    inference_seconds = 0.0


class LlmUnavailable(LlmFailure):
    """Transport failure or timeout on every attempt."""


class LlmError(LlmFailure):
    """The endpoint answered with a non-success status or an unreadable body."""

    def __init__(self, message: str, status: int | None = None, body: str = ""):
        super().__init__(message)
        self.status = status
        self.body = body


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = "Qwen/Qwen3.5-27B"
    temperature: float = 0.7
    max_tokens: int = FIXED_SPACE_MAX_TOKENS
    timeout_seconds: float = 120.0
    retries: int = 2
    token_env: str = "HPO_LLM_TOKEN"
    backoff_seconds: float = 1.0
    extra_body: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> LlmEndpointConfig:
        return cls(**d)


@dataclass
class LlmExchange:
    messages: list
    text: str
    attempts: int = 1
    inference_seconds: float = 0.0
    parsed: Any = None


class ChatClient:
    """Something that turns chat messages into an :class:`LlmExchange`."""

    max_tokens = FIXED_SPACE_MAX_TOKENS

    def complete(self, messages: list[dict], *, max_tokens: int | None = None) -> LlmExchange:
        raise NotImplementedError

    def chat(self, messages: list[dict], *, max_tokens: int | None = None) -> str:
        return self.complete(messages, max_tokens=max_tokens).text


class HttpChatClient(ChatClient):
    """POSTs to ``<base_url>/chat/completions`` and reads ``choices[0].message.content``."""

    def __init__(self, endpoint: LlmEndpointConfig, session: requests.Session | None = None):
        self.endpoint = endpoint
        self.max_tokens = endpoint.max_tokens
        self.session = session or requests.Session()

    def request_body(self, messages: list[dict], max_tokens: int | None = None) -> dict:
        body = {
            "model": self.endpoint.model,
            "messages": messages,
            "temperature": self.endpoint.temperature,
            "max_tokens": max_tokens or self.endpoint.max_tokens,
        }
        body.update(self.endpoint.extra_body)
        return body

    def complete(self, messages, *, max_tokens=None):
        ep = self.endpoint
        url = ep.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(ep.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = self.request_body(messages, max_tokens)
        start = time.perf_counter()
        last: LlmFailure | None = None
        for attempt in range(1, ep.retries + 2):
            try:
                resp = self.session.post(url, json=body, headers=headers, timeout=ep.timeout_seconds)
            except requests.RequestException as exc:
                last = LlmUnavailable(f"{type(exc).__name__} talking to {url}")
            else:
                if resp.status_code == 200:
                    try:
                        text = resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise LlmError(f"unreadable response body ({exc})", 200, resp.text[:2000]) from exc
                    return LlmExchange(messages, text or "", attempt, time.perf_counter() - start)
                last = LlmError(f"HTTP {resp.status_code}", resp.status_code, resp.text[:2000])
                if resp.status_code < 500 and resp.status_code != 429:
                    break
            if attempt <= ep.retries and ep.backoff_seconds > 0:
                time.sleep(ep.backoff_seconds * 2 ** (attempt - 1))
        last.inference_seconds = time.perf_counter() - start
        raise last


def chat(endpoint: LlmEndpointConfig, messages: list[dict]) -> str:
    return HttpChatClient(endpoint).chat(messages)


# --------------------------------------------------------------------------
# Mocks

Responder = Callable[[int, list], Any]


class ScriptedChat(ChatClient):
    """In-process responder keyed by request ordinal (0-based).

    ``script`` is a list of replies or a callable ``(ordinal, messages) ->
    reply``. A reply that is an exception instance is raised. ``latency`` is
    reported as inference time for every call without actually sleeping.
    """

    def __init__(self, script: Sequence[Any] | Responder, latency: float = 0.0, max_tokens: int = FIXED_SPACE_MAX_TOKENS):
        self.script = script
        self.latency = latency
        self.max_tokens = max_tokens
        self.calls: list[dict] = []

    def complete(self, messages, *, max_tokens=None):
        ordinal = len(self.calls)
        self.calls.append({"messages": list(messages), "max_tokens": max_tokens or self.max_tokens})
        if callable(self.script):
            reply = self.script(ordinal, messages)
        elif ordinal < len(self.script):
            reply = self.script[ordinal]
        else:
            reply = LlmUnavailable("scripted responses exhausted")
        if isinstance(reply, BaseException):
            reply.inference_seconds = self.latency
            raise reply
        return LlmExchange(list(messages), str(reply), 1, self.latency)


def last_fenced_block(text: str) -> tuple[str, str] | None:
    """``(language, body)`` of the last fenced code block in ``text``."""
    blocks = re.findall(r"```[ \t]*([\w+-]*)[ \t]*\r?\n(.*?)```", text, flags=re.DOTALL)
    return blocks[-1] if blocks else None


def identity_responder(ordinal: int, messages: list) -> str:
    """Echo the last fenced block of the last message (the optimizer's own proposal)."""
    block = last_fenced_block(messages[-1]["content"])
    if block is None:
        return "I have no proposal to keep."
    lang, body = block
    return f"Keeping the proposal.\n```{lang}\n{body}```"


def oracle_config(space: SearchSpace, target: float = 0.7) -> dict:
    u = np.full(space.total_dims, target)
    for j in range(space.total_dims):
        if not space.params[j].is_numeric:
            u[j] = space.params[j].to_unit(space.params[j].default)
    return canonical_config(denormalize(u, space), space)


def oracle_responder(space: SearchSpace, target: float = 0.7) -> Responder:
    """Always answers with the configuration sitting at ``target`` in every numeric coordinate."""
    block = format_config_block(oracle_config(space, target))

    def respond(ordinal, messages):
        return f"Moving every parameter to its sweet spot.\n{block}"

    return respond


def always_fail_responder(ordinal: int, messages: list) -> str:
    raise LlmUnavailable("mock endpoint is down")


MOCKS = ("identity", "oracle-sphere", "always-fail")


def make_mock(name: str, space: SearchSpace, latency: float = 0.0) -> ScriptedChat:
    if name == "identity":
        return ScriptedChat(identity_responder, latency)
    if name == "oracle-sphere":
        return ScriptedChat(oracle_responder(space), latency)
    if name == "always-fail":
        return ScriptedChat(always_fail_responder, latency)
    raise ValueError(f"unknown mock {name!r}; choose from {', '.join(MOCKS)}")


class _QuietServer(ThreadingHTTPServer):
    daemon_threads = True

    def handle_error(self, request, client_address):
        pass  # clients that time out hang up mid-reply


class MockChatServer:
    """Local HTTP server speaking the chat-completion wire format.

    The responder gets ``(ordinal, request_body)`` and returns either the
    assistant text, which is wrapped in a completion body, or a ``(status,
    raw_body)`` pair sent as is. Use as a context manager; ``base_url`` is
    valid inside the block.
    """

    def __init__(self, responder: Callable[[int, dict], Any]):
        self.responder = responder
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with outer._lock:
                    ordinal = len(outer.requests)
                    outer.requests.append({"path": self.path, "body": body, "headers": dict(self.headers)})
                if not self.path.endswith("/chat/completions"):
                    reply = (404, "not found")
                else:
                    reply = outer.responder(ordinal, body)
                if isinstance(reply, tuple):
                    status, payload = reply
                else:
                    status = 200
                    payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": reply}}]})
                data = payload.encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._server = _QuietServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def __enter__(self) -> MockChatServer:
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()


# --------------------------------------------------------------------------
# Prompt pieces

def format_config_block(config: Mapping[str, Any]) -> str:
    return "```json\n" + json.dumps(dict(config), indent=1) + "\n```"


def describe_space(space: SearchSpace, exclude: Sequence[str] = ()) -> str:
    return "\n".join(f"- {p.describe()}" for p in space if p.name not in exclude)


def _without(config: Mapping[str, Any], exclude: Sequence[str]) -> dict:
    return {k: v for k, v in config.items() if k not in exclude}


def format_trial(record: TrialRecord, exclude: Sequence[str] = ()) -> str:
    cfg = json.dumps(_without(record.config, exclude)) if record.config is not None else f"code {record.code_digest[:12]}"
    return f"- trial {record.trial_id}: status={record.status}, val_bpb={record.objective:.6g}, config={cfg}"


def select_window(history: Sequence[TrialRecord], top_k: int = TOP_K, last_n: int = LAST_N):
    """``(top, last)``: best ``top_k`` successful trials and the ``last_n`` most recent ones."""
    records = list(history)
    top = sorted((r for r in records if r.ok), key=lambda r: r.objective)[:top_k]
    last = records[-last_n:] if last_n > 0 else []
    return top, last


def _coerce(value: Any, kind: str) -> Any:
    if kind == CATEGORICAL:
        return str(value).strip().strip("'\"")
    if isinstance(value, str):
        value = value.strip().replace("_", "")
        value = float(value)
    if isinstance(value, bool):
        raise ValueError("boolean given for a number")
    if kind == INTEGER:
        value = float(value)
        if not math.isfinite(value):
            raise ValueError("not finite")
        return int(math.floor(value + 0.5))
    return float(value)


def _decode_pairs(body: str) -> dict:
    try:
        data = json.loads(body)
    except ValueError:
        data = {}
        for line in body.splitlines():
            m = re.match(r"^\s*[\"']?([A-Za-z_][A-Za-z0-9_]*)[\"']?\s*[:=]\s*(.+?)\s*,?\s*$", line)
            if m:
                data[m[1]] = m[2]
        if not data:
            raise ParseError("block holds neither JSON nor key/value pairs")
    if not isinstance(data, dict):
        raise ParseError("block is not a key/value mapping")
    return data


def parse_config_response(text: str, space: SearchSpace) -> dict:
    """Configuration from the last fenced block of an LLM reply.

    Unknown keys are ignored; missing or invalid parameters raise :class:`ParseError`.
    """
    block = last_fenced_block(text or "")
    if block is None:
        raise ParseError("no fenced block in response")
    data = _decode_pairs(block[1])
    config = {}
    problems = []
    for p in space:
        if p.name not in data:
            problems.append(f"{p.name}: missing parameter")
            continue
        try:
            config[p.name] = _coerce(data[p.name], p.kind)
        except (TypeError, ValueError):
            problems.append(f"{p.name}: cannot read {data[p.name]!r} as {p.kind}")
    if problems:
        raise ParseError("; ".join(problems))
    report = validate(config, space)
    if report:
        raise ParseError(str(ValidationError(report)))
    return config


def extract_source(text: str) -> str:
    block = last_fenced_block(text or "")
    if block is None or not block[1].strip():
        raise ParseError("no fenced code block in response")
    return block[1]


SYSTEM_PROMPT = (
    "You are an expert in training small decoder-only transformer language models. "
    "You tune hyperparameters to minimize validation bits-per-byte (val_bpb; lower is better). "
    "Failed runs (out of memory or crashes) are reported with val_bpb = 100.0."
)

CONFIG_INSTRUCTION = (
    "Reply with exactly one fenced ```json block holding a value for every parameter listed above, "
    "inside its range."
)


def _retry_message(error: Exception) -> dict:
    return {"role": "user", "content": f"That reply could not be used ({error}). {CONFIG_INSTRUCTION}"}


def ask_for_config(client: ChatClient, messages: list[dict], space: SearchSpace) -> tuple[dict | None, float]:
    """Two attempts at a valid configuration; returns ``(config or None, inference seconds)``."""
    seconds = 0.0
    for attempt in range(2):
        try:
            exchange = client.complete(messages)
        except LlmFailure as exc:
            return None, seconds + exc.inference_seconds
        seconds += exchange.inference_seconds
        try:
            exchange.parsed = parse_config_response(exchange.text, space)
            return exchange.parsed, seconds
        except ParseError as exc:
            messages = messages + [{"role": "assistant", "content": exchange.text}, _retry_message(exc)]
    return None, seconds


# --------------------------------------------------------------------------
# Karpathy-style agent over the fixed space

class Agent14(Optimizer):
    """The LLM reads the trial history and proposes the next configuration directly."""

    name = "agent14"

    def __init__(self, space: SearchSpace, streams: RngStreams, client: ChatClient, top_k: int = TOP_K, last_n: int = LAST_N):
        super().__init__(space, streams)
        self.client = client
        self.top_k = top_k
        self.last_n = last_n

    def build_messages(self, history: Sequence[TrialRecord]) -> list[dict]:
        top, last = select_window(history, self.top_k, self.last_n)
        parts = [
            "## Search space",
            describe_space(self.space),
            f"## Best {len(top)} configurations so far",
            "\n".join(format_trial(r) for r in top) or "(none yet)",
            f"## Last {len(last)} trials",
            "\n".join(format_trial(r) for r in last) or "(none yet)",
            "## Task",
            "Propose the next configuration to train. " + CONFIG_INSTRUCTION,
        ]
        return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": "\n\n".join(parts)}]

    def _ask(self, history):
        config, seconds = ask_for_config(self.client, self.build_messages(history), self.space)
        if config is not None:
            return self._proposal(LLM, config=config, llm_seconds=seconds)
        fallback = random_propose(self.space, self.streams.llm_fallback)
        return self._proposal(RANDOM, config=fallback, metadata={"fallback": True}, llm_seconds=seconds)

    def _replay_proposal(self, record, history):
        if record.proposal_source == RANDOM:
            random_propose(self.space, self.streams.llm_fallback)
        return self._proposal(record.proposal_source, config=record.config, metadata=dict(record.metadata))


# --------------------------------------------------------------------------
# LLAMBO

@dataclass(frozen=True)
class LlamboToggles:
    binary_labels: bool
    hide_categoricals: bool
    hide_failures: bool


LLAMBO_VARIANTS = {
    "paper": LlamboToggles(binary_labels=False, hide_categoricals=False, hide_failures=False),
    "optuna": LlamboToggles(binary_labels=True, hide_categoricals=True, hide_failures=True),
}


def top_fraction_ids(history: Sequence[TrialRecord], fraction: float = 0.2) -> set[int]:
    """Trial ids of the best ``ceil(fraction * n_ok)`` successful trials."""
    ok = sorted((r for r in history if r.ok), key=lambda r: r.objective)
    if not ok:
        return set()
    k = max(1, math.ceil(round(fraction * len(ok), 9)))
    return {r.trial_id for r in ok[:k]}


class Llambo(Optimizer):
    """The LLM acts as a surrogate scoring candidate configurations.

    Candidates are ``n_perturb`` Gaussian perturbations (in unit
    coordinates) of the best three configurations plus ``n_random`` fresh
    random draws. The ``paper`` variant asks for predicted val_bpb and
    takes the minimum; the ``optuna`` variant asks for the probability
    of landing in the top 20% and takes the maximum.
    """

    name = "llambo"

    def __init__(
        self,
        space: SearchSpace,
        streams: RngStreams,
        client: ChatClient,
        variant: str = "paper",
        toggles: LlamboToggles | None = None,
        n_perturb: int = 5,
        n_random: int = 5,
        n_parents: int = 3,
        perturb_scale: float = 0.1,
        top_fraction: float = 0.2,
        top_k: int = TOP_K,
        last_n: int = LAST_N,
    ):
        super().__init__(space, streams)
        if toggles is None:
            toggles = LLAMBO_VARIANTS[variant]
        self.client = client
        self.variant = variant
        self.toggles = toggles
        self.n_perturb = n_perturb
        self.n_random = n_random
        self.n_parents = n_parents
        self.perturb_scale = perturb_scale
        self.top_fraction = top_fraction
        self.top_k = top_k
        self.last_n = last_n

    @property
    def hidden(self) -> list[str]:
        if not self.toggles.hide_categoricals:
            return []
        return [p.name for p in self.space if p.kind == CATEGORICAL]

    def candidates(self, history: Sequence[TrialRecord]) -> list[dict]:
        rng = self.streams.sampler
        ok = sorted((r for r in history if r.ok and r.config is not None), key=lambda r: r.objective)
        parents = [r.config for r in ok[: self.n_parents]] or [self.space.defaults()]
        out = []
        for i in range(self.n_perturb):
            u = normalize(parents[i % len(parents)], self.space)
            u = u + rng.normal(0.0, self.perturb_scale, size=u.size)
            out.append(canonical_config(denormalize(u, self.space), self.space))
        out.extend(random_propose(self.space, rng) for _ in range(self.n_random))
        for name in self.hidden:
            choices = self.space[name].choices
            for cand in out:
                cand[name] = choices[int(rng.integers(len(choices)))]
        return out

    def exemplars(self, history: Sequence[TrialRecord]) -> list[tuple[TrialRecord, float]]:
        """Window trials paired with the label the surrogate sees."""
        records = [r for r in history if r.config is not None]
        if self.toggles.hide_failures:
            records = [r for r in records if r.ok]
        top, last = select_window(records, self.top_k, self.last_n)
        ids = {r.trial_id for r in top} | {r.trial_id for r in last}
        window = [r for r in records if r.trial_id in ids]
        if self.toggles.binary_labels:
            positives = top_fraction_ids(history, self.top_fraction)
            return [(r, 1.0 if r.trial_id in positives else 0.0) for r in window]
        return [(r, r.objective) for r in window]

    def build_messages(self, history: Sequence[TrialRecord], candidates: Sequence[dict]) -> list[dict]:
        hidden = self.hidden
        if self.toggles.binary_labels:
            label_help = f"label 1 means the trial is in the top {self.top_fraction:.0%} of successful trials, 0 otherwise"
            ask = (
                "For each candidate, estimate the probability (0 to 1) that it would be labeled 1. "
                'Reply with one fenced ```json block of the form {"scores": [p0, p1, ...]}.'
            )
        else:
            label_help = "the label is the measured val_bpb (lower is better)"
            ask = (
                "For each candidate, predict its val_bpb. "
                'Reply with one fenced ```json block of the form {"scores": [v0, v1, ...]}.'
            )
        lines = [
            f"- {json.dumps(_without(r.config, hidden))} -> {label:.6g}" for r, label in self.exemplars(history)
        ]
        cands = [f"- candidate {i}: {json.dumps(_without(c, hidden))}" for i, c in enumerate(candidates)]
        parts = [
            "## Search space",
            describe_space(self.space, exclude=hidden),
            f"## Observed trials ({label_help})",
            "\n".join(lines) or "(none yet)",
            "## Candidates",
            "\n".join(cands),
            "## Task",
            ask,
        ]
        return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": "\n\n".join(parts)}]

    def parse_scores(self, text: str, n: int) -> dict[int, float]:
        block = last_fenced_block(text or "")
        if block is None:
            raise ParseError("no fenced block in response")
        try:
            data = json.loads(block[1])
        except ValueError as exc:
            raise ParseError(f"scores are not JSON ({exc})") from exc
        if isinstance(data, dict) and "scores" in data:
            data = data["scores"]
        items = enumerate(data) if isinstance(data, list) else data.items() if isinstance(data, dict) else None
        if items is None:
            raise ParseError("scores must be a list or mapping")
        scores = {}
        for k, v in items:
            try:
                i, s = int(k), float(v)
            except (TypeError, ValueError):
                continue
            if 0 <= i < n and math.isfinite(s):
                scores[i] = s
        if not scores:
            raise ParseError("no usable scores")
        return scores

    def _ask(self, history):
        cands = self.candidates(history)
        seconds = 0.0
        try:
            exchange = self.client.complete(self.build_messages(history, cands))
            seconds = exchange.inference_seconds
            scores = self.parse_scores(exchange.text, len(cands))
        except (LlmFailure, ParseError) as exc:
            seconds += getattr(exc, "inference_seconds", 0.0)
            return self._proposal(RANDOM, config=cands[self.n_perturb], metadata={"fallback": True}, llm_seconds=seconds)
        pick = max if self.toggles.binary_labels else min
        best = pick(sorted(scores), key=lambda i: scores[i])
        return self._proposal(LLM, config=cands[best], metadata={"candidate": best}, llm_seconds=seconds)

    def _replay_proposal(self, record, history):
        self.candidates(history)
        return self._proposal(record.proposal_source, config=record.config, metadata=dict(record.metadata))


# --------------------------------------------------------------------------
# Code-editing agent

CODE_INSTRUCTION = (
    "Return the complete modified training script in exactly one fenced ```python block. "
    "Change whatever you believe will lower val_bpb within the fixed time budget."
)


class CodeAgent(Optimizer):
    """The LLM edits the training script itself, starting from the best script so far."""

    name = "code_agent"

    def __init__(
        self,
        space: SearchSpace,
        streams: RngStreams,
        client: ChatClient,
        base_source: str,
        last_k: int = LAST_N,
        max_tokens: int = CODE_MAX_TOKENS,
    ):
        super().__init__(space, streams)
        if not base_source:
            raise ValueError("the code agent needs a non-empty base script")
        self.client = client
        self.base_source = base_source
        self.last_k = last_k
        self.max_tokens = max_tokens

    def baseline_proposal(self) -> Proposal:
        return Proposal(0, CLASSICAL, source=self.base_source, metadata={"baseline": True})

    def incumbent_source(self, history) -> str:
        best = None
        for r in history:
            if r.code_digest is not None and (best is None or r.objective < best.objective):
                best = r
        if best is None:
            return self.base_source
        return history.source_of(best)

    def build_messages(self, history, current_source: str) -> list[dict]:
        last = list(history)[-self.last_k :] if self.last_k > 0 else []
        summary = "\n".join(
            f"- trial {r.trial_id}: status={r.status}, val_bpb={r.objective:.6g}, script sha256={(r.code_digest or '')[:12]}"
            for r in last
        )
        parts = [
            "## Current best training script",
            f"```python\n{current_source}```",
            f"## Last {len(last)} trials",
            summary or "(none yet)",
            "## Task",
            CODE_INSTRUCTION,
        ]
        return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": "\n\n".join(parts)}]

    def _ask(self, history):
        messages = self.build_messages(history, self.incumbent_source(history))
        seconds = 0.0
        for attempt in range(2):
            try:
                exchange = self.client.complete(messages, max_tokens=self.max_tokens)
            except LlmFailure as exc:
                seconds += exc.inference_seconds
                break
            seconds += exchange.inference_seconds
            try:
                source = extract_source(exchange.text)
            except ParseError as exc:
                messages = messages + [
                    {"role": "assistant", "content": exchange.text},
                    {"role": "user", "content": f"That reply could not be used ({exc}). {CODE_INSTRUCTION}"},
                ]
                continue
            return self._proposal(LLM, source=source, llm_seconds=seconds)
        return self._proposal(LLM, source="", metadata={"generation_failed": True}, llm_seconds=seconds)

    def _replay_proposal(self, record, history):
        source = history.sources.get(record.code_digest, "") if hasattr(history, "sources") else ""
        return self._proposal(record.proposal_source, source=source, metadata=dict(record.metadata))

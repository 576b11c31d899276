"""Decision policies: prompt assembly, structured-output parsing, and the
policies themselves.

``ChatPolicy`` talks to a chat-style HTTP endpoint and retries malformed
outputs. ``OraclePolicy`` and ``ForgetfulPolicy`` are scripted over a task's
ground truth; the forgetful one can only recall values that are visible in the
history block it was given, which makes the history representation the only
thing separating its scores across modes.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol

import httpx

from .domain import (
    Action,
    ActionKind,
    AnchorType,
    CausalLink,
    Direction,
    DistanceHint,
    LinkRelation,
    Task,
    UiState,
    validate_action,
)
from .memory import AnchorProposal, HistoryContext, HistoryMode, normalize_content
from .metrics import values_equal
from .prompts import CORRECTION_NOTE, HISTORY_HEADERS, system_prompt
from .records import Usage
from .tokens import estimate_tokens

logger = logging.getLogger(__name__)

UNKNOWN_VALUE = "UNKNOWN"


@dataclass(frozen=True)
class PolicyDecision:
    action: Action
    summary_text: Optional[str] = None
    anchor_proposal: Optional[AnchorProposal] = None
    # set when the policy gave up and fell back to ``wait``
    failure: Optional[str] = None


@dataclass(frozen=True)
class PromptBundle:
    messages: tuple[dict, ...]
    mode: HistoryMode
    token_estimate: int
    step_index: int = 0
    context: Optional[HistoryContext] = None
    state: Optional[UiState] = None


def current_state_digest(state: UiState) -> str:
    lines = [f"App: {state.app}", f"Screenshot: {state.screenshot_ref}"]
    if state.elements:
        lines.append("Elements:")
        for e in state.elements:
            label = e.text or ""
            role = f" ({e.role})" if e.role else ""
            lines.append(f"- [{e.bbox[0]},{e.bbox[1]},{e.bbox[2]},{e.bbox[3]}]{role} {label}".rstrip())
    return "\n".join(lines)


def build_prompt(mode: HistoryMode, instruction: str, context: HistoryContext, state: UiState) -> PromptBundle:
    if context.mode is not mode:
        raise ValueError(f"context mode {context.mode.value} does not match {mode.value}")
    system = system_prompt(mode)
    user = (
        f"Instruction: {instruction}\n\n"
        f"Current screen:\n{current_state_digest(state)}\n\n"
        f"{HISTORY_HEADERS[mode]}\n{context.rendered_text or '(none)'}"
    )
    messages = ({"role": "system", "content": system}, {"role": "user", "content": user})
    return PromptBundle(
        messages=messages,
        mode=mode,
        token_estimate=sum(estimate_tokens(m["content"]) for m in messages),
        step_index=state.step_index,
        context=context,
        state=state,
    )


# ---------------------------------------------------------------------------
# structured output parsing


class ParseError(ValueError):
    cause = "parse"


class NoJsonFound(ParseError):
    cause = "no_json"


class SchemaViolation(ParseError):
    cause = "schema"


class ActionInvalid(ParseError):
    cause = "action"


_KIND_ALIASES = {k.value: k for k in ActionKind}
# the prompt's action listing uses these spellings
_KIND_ALIASES.update({"text": ActionKind.INPUT_TEXT, "swipe_two_point": ActionKind.SWIPE_TWO_POINTS})

_USES_START = {ActionKind.TAP, ActionKind.LONG_PRESS, ActionKind.SWIPE_TWO_POINTS, ActionKind.SWIPE}
_USES_VALUE = {ActionKind.INPUT_TEXT, ActionKind.OPEN_APP}


def extract_json_object(text: str) -> dict:
    """First balanced ``{...}`` in ``text`` that decodes to a JSON object."""
    start = text.find("{")
    while start != -1:
        depth, in_str, esc = 0, False, False
        for i in range(start, len(text)):
            c = text[i]
            if in_str:
                if esc:
                    esc = False
                elif c == "\\":
                    esc = True
                elif c == '"':
                    in_str = False
            elif c == '"':
                in_str = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start : i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj
                    break
        start = text.find("{", start + 1)
    raise NoJsonFound("no JSON object found")


def _coerce_int(v: Any, name: str) -> int:
    if isinstance(v, bool):
        raise SchemaViolation(f"field action.{name} must be a number")
    if isinstance(v, int):
        return v
    if isinstance(v, float):
        if v != v or v in (float("inf"), float("-inf")):
            raise SchemaViolation(f"field action.{name} must be finite")
        return int(round(v))
    if isinstance(v, str):
        try:
            return int(round(float(v.strip())))
        except ValueError:
            pass
    if v is None:
        return 0
    raise SchemaViolation(f"field action.{name} must be a number")


def _opt_str(obj: dict, key: str, where: str) -> Optional[str]:
    v = obj.get(key)
    if v is None:
        return None
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return str(v)
    if not isinstance(v, str):
        raise SchemaViolation(f"field {where}{key} must be a string")
    return v


def _parse_action_obj(obj: Any) -> Action:
    if not isinstance(obj, dict):
        raise SchemaViolation("field action must be an object")
    kind_raw = obj.get("action")
    if not isinstance(kind_raw, str):
        raise SchemaViolation("field action.action must be a string")
    kind = _KIND_ALIASES.get(kind_raw.strip().lower())
    if kind is None:
        raise SchemaViolation("action kind not in action space")
    coords = {n: _coerce_int(obj.get(n, 0), n) for n in ("x", "y", "x_end", "y_end")}
    if kind not in _USES_START:
        coords["x"] = coords["y"] = 0
    if kind is not ActionKind.SWIPE_TWO_POINTS:
        coords["x_end"] = coords["y_end"] = 0
    value = _opt_str(obj, "value", "action.") or ""
    if kind not in _USES_VALUE:
        value = ""
    direction = distance = None
    if kind is ActionKind.SWIPE:
        d = _opt_str(obj, "direction", "action.")
        try:
            direction = Direction((d or "").strip().lower())
        except ValueError:
            raise SchemaViolation("field action.direction must be up|down|left|right") from None
        dist = (_opt_str(obj, "distance", "action.") or "").strip().lower()
        distance = DistanceHint(dist) if dist in {h.value for h in DistanceHint} else None
    action = Action(kind, value=value, direction=direction, distance_hint=distance, **coords)
    problems = validate_action(action)
    if problems:
        raise ActionInvalid("; ".join(problems))
    return action


_TAG = re.compile(r"^\s*\[([A-Za-z_ ]+)\]\s*(.*)$", re.S)


def _parse_anchor_fields(obj: dict) -> Optional[AnchorProposal]:
    content = _opt_str(obj, "content_en", "") or ""
    invalidate = _opt_str(obj, "invalidate", "")
    if not content.strip() and not invalidate:
        return None
    atype = None
    explicit = _opt_str(obj, "anchor_type", "")
    m = _TAG.match(content)
    if m:
        explicit = explicit or m.group(1)
        content = m.group(2).strip()
    if content.strip():
        if not explicit:
            raise SchemaViolation("field content_en must carry a category tag")
        try:
            atype = AnchorType(explicit.strip().upper().replace(" ", "_"))
        except ValueError:
            raise SchemaViolation("anchor category not in taxonomy") from None
    links: tuple[CausalLink, ...] = ()
    link = obj.get("causal_link")
    if link is not None:
        if not isinstance(link, dict):
            raise SchemaViolation("field causal_link must be an object")
        src = _opt_str(link, "source", "causal_link.")
        rel = _opt_str(link, "relation", "causal_link.")
        if src and src.strip():
            try:
                relation = LinkRelation((rel or "").strip().lower())
            except ValueError:
                raise SchemaViolation("causal_link.relation not in link types") from None
            links = (CausalLink(src.strip(), relation),)
    return AnchorProposal(
        content=content.strip(),
        type=atype,
        description=_opt_str(obj, "description_en", "") or "",
        links=links,
        invalidate=invalidate.strip() if invalidate else None,
        extracted_value=_opt_str(obj, "extracted_value", ""),
    )


def parse_decision(raw_text: str, mode: HistoryMode = HistoryMode.RAW) -> PolicyDecision:
    """Parse a model response into a fully validated decision.

    Raises NoJsonFound, SchemaViolation or ActionInvalid (all ParseError).
    """
    obj = extract_json_object(raw_text)
    if "action" not in obj:
        raise SchemaViolation("missing field: action")
    action = _parse_action_obj(obj["action"])
    summary = None
    proposal = None
    if mode is HistoryMode.SUMMARY:
        summary = obj.get("summary_en")
        if not isinstance(summary, str):
            raise SchemaViolation("field summary_en must be a string")
    elif mode is HistoryMode.ASM:
        proposal = _parse_anchor_fields(obj)
    return PolicyDecision(action, summary, proposal)


def decision_to_json(d: PolicyDecision) -> str:
    a = d.action
    out: dict[str, Any] = {
        "action": {"action": a.kind.value, "x": a.x, "y": a.y, "value": a.value, "x_end": a.x_end, "y_end": a.y_end}
    }
    if a.direction is not None:
        out["action"]["direction"] = a.direction.value
    if d.summary_text is not None:
        out["summary_en"] = d.summary_text
    p = d.anchor_proposal
    if p is not None and p.type is not None:
        out["content_en"] = f"[{p.type.value.lower()}] {p.content}"
        out["description_en"] = p.description
        if p.links:
            out["causal_link"] = {"source": p.links[0].source_anchor_id, "relation": p.links[0].relation.value}
    return json.dumps(out, ensure_ascii=False)


# ---------------------------------------------------------------------------
# policies


class Policy(Protocol):
    name: str

    def decide(self, bundle: PromptBundle, task: Optional[Task] = None) -> tuple[PolicyDecision, Usage]: ...


def decide(policy: Policy, bundle: PromptBundle, task: Optional[Task] = None) -> tuple[PolicyDecision, Usage]:
    return policy.decide(bundle, task)


def _gt_proposal(task: Task, t: int) -> Optional[AnchorProposal]:
    anchors = task.steps[t].gt_anchors
    if not anchors:
        return None
    a = anchors[0]
    ev = next((e for e in a.evidence if e.step_index == t), a.evidence[-1] if a.evidence else None)
    return AnchorProposal(
        content=a.content,
        type=a.type,
        description=a.description,
        links=a.links,
        extracted_value=ev.extracted_value if ev else None,
        element_bbox=ev.element_bbox if ev else None,
        anchor_id=a.id,
    )


def _scripted_usage(bundle: PromptBundle, decision: PolicyDecision) -> Usage:
    return Usage(bundle.token_estimate, estimate_tokens(decision_to_json(decision)), 0.0, True)


class OraclePolicy:
    """Emits the ground-truth action and the ground-truth anchor of each step."""

    name = "oracle"
    history_window: Optional[int] = None

    def decide(self, bundle: PromptBundle, task: Optional[Task] = None) -> tuple[PolicyDecision, Usage]:
        if task is None:
            raise ValueError("scripted policies need the task")
        t = bundle.step_index
        step = task.steps[t]
        d = PolicyDecision(step.action, summary_text=step.summary, anchor_proposal=_gt_proposal(task, t))
        return d, _scripted_usage(bundle, d)


class ForgetfulPolicy:
    """Oracle that must recall earlier-observed text values from its context.

    Whenever the ground-truth action types a value that is not on the current
    screen, the policy looks for that value in the history it was shown:
    retrieved anchors' extracted values in asm mode, the rendered text
    otherwise. If it is not there the policy types ``UNKNOWN``. In raw mode
    the run loop shows it only the last ``window`` steps.
    """

    def __init__(self, window: int = 5):
        if window < 0:
            raise ValueError("window must be >= 0")
        self.window = window
        self.history_window = window
        self.name = f"forgetful:window={window}"

    def _recall(self, value: str, context: Optional[HistoryContext]) -> Optional[str]:
        if context is None:
            return None
        if context.mode is HistoryMode.ASM:
            for a in reversed(context.anchors):
                for ev in a.evidence:
                    if ev.extracted_value and values_equal(ev.extracted_value, value):
                        return ev.extracted_value
            return None
        m = re.search(r"(?<!\w)" + re.escape(value) + r"(?!\w)", context.rendered_text, re.IGNORECASE)
        return m.group(0) if m else None

    def decide(self, bundle: PromptBundle, task: Optional[Task] = None) -> tuple[PolicyDecision, Usage]:
        if task is None:
            raise ValueError("scripted policies need the task")
        t = bundle.step_index
        step = task.steps[t]
        action = step.action
        if action.kind is ActionKind.INPUT_TEXT:
            on_screen = any(
                normalize_content(action.value) in normalize_content(x) for x in step.state.element_texts()
            )
            if not on_screen:
                recalled = self._recall(action.value, bundle.context)
                action = Action(ActionKind.INPUT_TEXT, value=recalled if recalled is not None else UNKNOWN_VALUE)
        d = PolicyDecision(action, summary_text=step.summary, anchor_proposal=_gt_proposal(task, t))
        return d, _scripted_usage(bundle, d)


@dataclass
class InferenceEndpointConfig:
    base_url: str
    model: str
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    api_key: Optional[str] = None
    backoff: float = 1.0
    max_inflight: int = 4

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")

    @classmethod
    def from_env(cls, **overrides) -> "InferenceEndpointConfig":
        values = {
            "base_url": os.environ.get("ASMB_ENDPOINT"),
            "model": os.environ.get("ASMB_MODEL"),
            "api_key": os.environ.get("ASMB_API_KEY"),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        if not values.get("base_url") or not values.get("model"):
            raise ValueError("endpoint URL and model are required (ASMB_ENDPOINT, ASMB_MODEL)")
        return cls(**values)


def _response_text(payload: Any) -> str:
    if isinstance(payload, dict):
        choices = payload.get("choices")
        if isinstance(choices, list) and choices:
            c = choices[0]
            if isinstance(c, dict):
                msg = c.get("message")
                if isinstance(msg, dict) and isinstance(msg.get("content"), str):
                    return msg["content"]
                if isinstance(c.get("text"), str):
                    return c["text"]
        for key in ("text", "content", "output"):
            if isinstance(payload.get(key), str):
                return payload[key]
    raise ValueError("response carries no generated text")


class TransportError(RuntimeError):
    pass


class ChatPolicy:
    """Policy backed by a chat-completions style HTTP endpoint."""

    def __init__(
        self,
        config: InferenceEndpointConfig,
        client: Optional[httpx.Client] = None,
        trace: Optional[list] = None,
        sleep=time.sleep,
    ):
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout)
        self.trace = trace
        self.sleep = sleep
        self.name = f"chat:model={config.model}"
        self.history_window: Optional[int] = None
        self.writes_summary = True
        self._inflight = threading.BoundedSemaphore(max(1, config.max_inflight))
        self.calls = 0

    @property
    def url(self) -> str:
        base = self.config.base_url.rstrip("/")
        return base if base.endswith("/chat/completions") else base + "/chat/completions"

    def _post(self, messages: list[dict]) -> tuple[str, Optional[dict]]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        body = {"model": self.config.model, "messages": messages, "temperature": self.config.temperature}
        self.calls += 1
        with self._inflight:
            try:
                resp = self.client.post(self.url, json=body, headers=headers, timeout=self.config.timeout)
                resp.raise_for_status()
                payload = resp.json()
                text = _response_text(payload)
            except (httpx.HTTPError, ValueError) as e:
                raise TransportError(str(e) or type(e).__name__) from e
        usage = payload.get("usage") if isinstance(payload, dict) else None
        return text, usage if isinstance(usage, dict) else None

    def decide(self, bundle: PromptBundle, task: Optional[Task] = None) -> tuple[PolicyDecision, Usage]:
        messages = [dict(m) for m in bundle.messages]
        prompt_tokens = completion_tokens = 0
        estimated = False
        last_error = ""
        started = time.perf_counter()
        transport_failures = 0
        for attempt in range(1 + self.config.max_retries):
            try:
                text, usage = self._post(messages)
            except TransportError as e:
                last_error = f"transport_failure: {e}"
                transport_failures += 1
                logger.warning("step %d attempt %d: %s", bundle.step_index, attempt, last_error)
                if attempt < self.config.max_retries:
                    self.sleep(self.config.backoff * (2**attempt))
                continue
            if usage and isinstance(usage.get("prompt_tokens"), int) and isinstance(usage.get("completion_tokens"), int):
                prompt_tokens += usage["prompt_tokens"]
                completion_tokens += usage["completion_tokens"]
            else:
                estimated = True
                prompt_tokens += sum(estimate_tokens(m["content"]) for m in messages)
                completion_tokens += estimate_tokens(text)
            if self.trace is not None:
                self.trace.append(
                    {
                        "task_id": task.id if task else None,
                        "step_index": bundle.step_index,
                        "attempt": attempt,
                        "messages": list(messages),
                        "response": text,
                    }
                )
            try:
                decision = parse_decision(text, bundle.mode)
            except ParseError as e:
                last_error = f"parse_failure[{e.cause}]: {e}"
                logger.info("step %d attempt %d: %s", bundle.step_index, attempt, last_error)
                messages.append({"role": "assistant", "content": text})
                messages.append({"role": "user", "content": CORRECTION_NOTE.format(error=e)})
                continue
            usage_out = Usage(prompt_tokens, completion_tokens, time.perf_counter() - started, estimated)
            return decision, usage_out
        if prompt_tokens == 0 and completion_tokens == 0:
            estimated = True
            prompt_tokens = bundle.token_estimate
        usage_out = Usage(prompt_tokens, completion_tokens, time.perf_counter() - started, estimated)
        fallback = PolicyDecision(Action(ActionKind.WAIT), failure=last_error or "decision_failure")
        return fallback, usage_out


def parse_policy_spec(spec: str, endpoint: Optional[InferenceEndpointConfig] = None, **chat_kwargs) -> Policy:
    """Build a policy from ``oracle``, ``forgetful:window=5`` or ``chat[:model=...]``."""
    name, _, rest = spec.strip().partition(":")
    params: dict[str, str] = {}
    for part in filter(None, rest.split(",")):
        key, eq, val = part.partition("=")
        if not eq:
            raise ValueError(f"bad policy parameter {part!r} in {spec!r}")
        params[key.strip()] = val.strip()
    if name == "oracle":
        if params:
            raise ValueError("oracle takes no parameters")
        return OraclePolicy()
    if name == "forgetful":
        unknown = set(params) - {"window"}
        if unknown:
            raise ValueError(f"unknown forgetful parameters: {sorted(unknown)}")
        return ForgetfulPolicy(int(params.get("window", 5)))
    if name == "chat":
        cfg = endpoint or InferenceEndpointConfig.from_env()
        if "model" in params:
            cfg = InferenceEndpointConfig(**{**cfg.__dict__, "model": params.pop("model")})
        if params:
            raise ValueError(f"unknown chat parameters: {sorted(params)}")
        return ChatPolicy(cfg, **chat_kwargs)
    raise ValueError(f"unknown policy {name!r}")

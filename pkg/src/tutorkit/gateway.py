"""LLM gateway: the one seam between the pipeline and any language model.

Two implementations ship: ScriptedGateway replays canned responses from a
script file for bit-exact tests and offline development, LiveGateway talks
to an OpenAI-style chat-completion endpoint. Selection is by environment
(GATEWAY_MODE=live|scripted) or explicit construction.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path
from typing import Optional

from .errors import GatewayError, ParseError

# Role tags: one per agent role plus the offline prompt optimizer
ROLE_FILTER = "filter"
ROLE_JUDGE = "judge"
ROLE_RESPONDER = "responder"
ROLE_FACILITATOR = "facilitator"
ROLE_RUBRIC_OPT = "rubric_opt"
ROLE_TAGS = (ROLE_FILTER, ROLE_JUDGE, ROLE_RESPONDER, ROLE_FACILITATOR, ROLE_RUBRIC_OPT)


@dataclass
class LlmRequest:
    role_tag: str
    system_prompt: str
    transcript: list[dict]  # {"speaker": ..., "text": ...}, oldest first
    temperature: float = 0.0
    seed: Optional[int] = None

    def last_user_text(self) -> str:
        for entry in reversed(self.transcript):
            if entry.get("speaker") == "user":
                return entry.get("text", "")
        return ""

    def digest(self) -> str:
        doc = {
            "role_tag": self.role_tag,
            "system_prompt": self.system_prompt,
            "transcript": self.transcript,
            "temperature": self.temperature,
            "seed": self.seed,
        }
        blob = json.dumps(doc, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return sha256(blob).hexdigest()[:16]


@dataclass
class LlmResponse:
    text: str


class LlmGateway:
    """Interface: complete() must be safe for concurrent calls."""

    def complete(self, request: LlmRequest) -> LlmResponse:
        raise NotImplementedError


@dataclass
class ScriptRule:
    role: str
    match: str  # regex applied to the last user text, "" matches everything
    response: str = ""
    error: bool = False


class ScriptedGateway(LlmGateway):
    """Deterministic replay gateway.

    Rules are applied in file order; the first rule whose role matches the
    request's role_tag and whose pattern is found in the last user text
    wins. A rule with ``error: true`` raises GatewayError, which is how
    tests simulate an outage. No matching rule also raises, so scripts are
    always explicit about what they answer.
    """

    def __init__(self, rules: list[ScriptRule]):
        self.rules = list(rules)
        self.calls: list[LlmRequest] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedGateway":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read gateway script {path}: {exc}") from exc
        return cls.from_doc(doc)

    @classmethod
    def from_doc(cls, doc) -> "ScriptedGateway":
        if not isinstance(doc, list):
            raise ParseError("gateway script must be a JSON array of rules")
        rules = []
        for i, entry in enumerate(doc):
            if not isinstance(entry, dict) or "role" not in entry:
                raise ParseError(f"gateway script rule {i} must be an object with a 'role'")
            if entry["role"] not in ROLE_TAGS:
                raise ParseError(f"gateway script rule {i}: unknown role {entry['role']!r}")
            rules.append(
                ScriptRule(
                    role=entry["role"],
                    match=entry.get("match", ""),
                    response=entry.get("response", ""),
                    error=bool(entry.get("error", False)),
                )
            )
        return cls(rules)

    def complete(self, request: LlmRequest) -> LlmResponse:
        self.calls.append(request)
        text = request.last_user_text()
        for rule in self.rules:
            if rule.role != request.role_tag:
                continue
            if re.search(rule.match, text, re.IGNORECASE | re.DOTALL):
                if rule.error:
                    raise GatewayError(f"scripted failure for role {rule.role}")
                return LlmResponse(text=rule.response)
        raise GatewayError(f"no script rule matched role={request.role_tag!r} text={text[:80]!r}")


class LiveGateway(LlmGateway):
    """OpenAI-style chat completion client over HTTP."""

    def __init__(self, endpoint: str, api_key: str, model: str, timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout = timeout

    def complete(self, request: LlmRequest) -> LlmResponse:
        import httpx

        messages = [{"role": "system", "content": request.system_prompt}]
        for entry in request.transcript:
            role = "user" if entry.get("speaker") == "user" else "assistant"
            messages.append({"role": role, "content": entry.get("text", "")})
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        try:
            response = httpx.post(
                f"{self.endpoint}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
            response.raise_for_status()
            doc = response.json()
            return LlmResponse(text=doc["choices"][0]["message"]["content"])
        except Exception as exc:
            raise GatewayError(f"live gateway call failed: {exc}") from exc


def gateway_from_env(environ: Optional[dict] = None) -> LlmGateway:
    """Build the gateway named by GATEWAY_MODE (default scripted).

    Scripted mode reads the script file at GATEWAY_SCRIPT. Live mode needs
    GATEWAY_ENDPOINT, GATEWAY_API_KEY, and GATEWAY_MODEL.
    """
    env = os.environ if environ is None else environ
    mode = env.get("GATEWAY_MODE", "scripted")
    if mode == "scripted":
        script = env.get("GATEWAY_SCRIPT")
        if not script:
            raise GatewayError("GATEWAY_MODE=scripted requires GATEWAY_SCRIPT")
        return ScriptedGateway.from_file(script)
    if mode == "live":
        try:
            return LiveGateway(
                endpoint=env["GATEWAY_ENDPOINT"],
                api_key=env["GATEWAY_API_KEY"],
                model=env["GATEWAY_MODEL"],
            )
        except KeyError as exc:
            raise GatewayError(f"live gateway missing env var {exc}") from exc
    raise GatewayError(f"unknown GATEWAY_MODE {mode!r}")

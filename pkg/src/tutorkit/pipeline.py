"""One dialogue round: Filter -> Judge(s) -> Responder -> Facilitator.

The pipeline is stateless between turns. Every sub-result lands in the
event log before run_turn returns, and the facilitator decision is applied
to the session atomically with that append, so an injected failure at any
step leaves the pre-turn state intact.
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from typing import Optional

from . import engine
from . import events as ev
from .content import Activity, ContentPack, Stage, get_activity
from .engine import SessionState, SessionRepo, apply_decision
from .errors import GatewayError, SchemaError, SessionCompleted, SessionNotFound
from .events import EventStore
from .gateway import (
    ROLE_FILTER,
    ROLE_JUDGE,
    ROLE_RESPONDER,
    LlmGateway,
    LlmRequest,
    LlmResponse,
)
from .prompting import PromptLibrary, render

logger = logging.getLogger(__name__)

# Intent kinds
ANSWER_ATTEMPT = "AnswerAttempt"
QUESTION = "Question"
TOOL_RESULT = "ToolResult"
OFF_TOPIC = "OffTopic"
PROGRESS_COMMAND = "ProgressCommand"

# Verdict aggregation rules
UNION = "Union"
MAJORITY = "Majority"

_INTENT_TOKENS = [
    ("ANSWER", ANSWER_ATTEMPT),
    ("QUESTION", QUESTION),
    ("OFFTOPIC", OFF_TOPIC),
    ("PROGRESS", PROGRESS_COMMAND),
]

_COVERED_LINE = re.compile(r"^\s*covered\s*:\s*(.*?)\s*$", re.IGNORECASE)
_EVIDENCE_LINE = re.compile(r"^\s*evidence\s+(\S+)\s*:\s*(.*?)\s*$", re.IGNORECASE)


@dataclass
class PipelineConfig:
    n_judges: int = 3
    aggregation_rule: str = UNION
    context_window: int = 12  # most recent turns shown to the agents
    skip_threshold: int = 3  # consecutive non-covering turns before SkipStage
    filter_temperature: float = 0.0
    judge_temperature: float = 0.0
    responder_temperature: float = 0.7
    seed: Optional[int] = None


@dataclass
class UserMessage:
    session_id: str
    text: str
    attached_tool_result: Optional[dict] = None
    client_timestamp: Optional[int] = None

    def validate(self) -> None:
        if not self.text and self.attached_tool_result is None:
            raise SchemaError("user message needs text or an attached tool result")


@dataclass
class Intent:
    kind: str
    confidence_note: str = ""


@dataclass
class JudgeVerdict:
    judge_index: int
    covered: set[str] = field(default_factory=set)
    evidence: dict[str, str] = field(default_factory=dict)


@dataclass
class AggregatedVerdict:
    covered: set[str]
    per_judge: list[JudgeVerdict]
    rule: str


@dataclass
class ResponderOutput:
    text: str
    tool_directives: list[dict] = field(default_factory=list)  # {tool_id, trigger_reason}
    image_refs: list[str] = field(default_factory=list)


@dataclass
class FacilitatorDecision:
    action: str
    message: str = ""


@dataclass
class PipelineTrace:
    intent: Optional[Intent] = None
    verdict: Optional[AggregatedVerdict] = None
    responder_outputs: list[ResponderOutput] = field(default_factory=list)
    decision: Optional[FacilitatorDecision] = None
    gateway_calls: list[dict] = field(default_factory=list)  # {role_tag, request_digest, latency_ms}


def aggregate_verdicts(per_judge: list[JudgeVerdict], rule: str) -> AggregatedVerdict:
    """Merge judges: Union keeps anything any judge credited, Majority keeps
    expectations credited by strictly more than half the judges."""
    if rule == UNION:
        covered = set()
        for verdict in per_judge:
            covered |= verdict.covered
    elif rule == MAJORITY:
        n = len(per_judge)
        counts: dict[str, int] = {}
        for verdict in per_judge:
            for eid in verdict.covered:
                counts[eid] = counts.get(eid, 0) + 1
        covered = {eid for eid, c in counts.items() if c > n / 2}
    else:
        raise ValueError(f"unknown aggregation rule {rule!r}")
    return AggregatedVerdict(covered=covered, per_judge=list(per_judge), rule=rule)


def parse_intent_token(text: str) -> Optional[str]:
    """Map the filter's output to an intent kind; None when no token found."""
    upper = text.upper()
    best: tuple[int, str] | None = None
    for token, kind in _INTENT_TOKENS:
        pos = upper.find(token)
        if pos >= 0 and (best is None or pos < best[0]):
            best = (pos, kind)
    return best[1] if best else None


def parse_judge_output(text: str, candidates: set[str]) -> Optional[JudgeVerdict]:
    """Extract the terminal COVERED line (last one wins) and evidence spans.

    Returns None when no COVERED line exists, which triggers the repair
    retry. Ids outside the candidate set are dropped and logged: a gateway
    may hallucinate ids but they never reach a verdict.
    """
    covered_value = None
    evidence: dict[str, str] = {}
    for line in text.splitlines():
        match = _COVERED_LINE.match(line)
        if match:
            covered_value = match.group(1)
            continue
        match = _EVIDENCE_LINE.match(line)
        if match:
            evidence[match.group(1)] = match.group(2)
    if covered_value is None:
        return None
    covered: set[str] = set()
    if covered_value.strip().lower() not in ("", "none"):
        for raw in covered_value.split(","):
            eid = raw.strip()
            if not eid:
                continue
            if eid in candidates:
                covered.add(eid)
            else:
                logger.warning("judge credited unknown expectation id %r; dropped", eid)
    return JudgeVerdict(judge_index=0, covered=covered, evidence={e: evidence.get(e, "") for e in covered})


def _format_expectations(stage: Stage, only_ids: Optional[set[str]] = None) -> str:
    lines = []
    for exp in stage.expectations:
        if only_ids is not None and exp.id not in only_ids:
            continue
        lines.append(f"- {exp.id}: {exp.statement}\n  rubric: {exp.rubric}")
    return "\n".join(lines) if lines else "(none)"


def serialize_tool_result(tool_id: str, data: dict) -> str:
    """Render a tool submission as dialogue text the judges can read."""
    if tool_id == "fill_table":
        rows = data.get("cells", [])
        body = "; ".join("(" + ", ".join("_" if c is None else str(c) for c in row) + ")" for row in rows)
        return f"[fill_table submission] rows: {body}"
    if tool_id == "two_line":
        lines = []
        for key in ("line1", "line2"):
            params = data.get(key, {})
            lines.append(f"{key}: slope={params.get('slope')}, intercept={params.get('intercept')}")
        return "[two_line submission] " + "; ".join(lines)
    if tool_id == "notebook":
        return f"[notebook note] {data.get('text', '')}"
    return f"[{tool_id} submission] {data}"


class Pipeline:
    """Binds gateway, prompt library, and config for the four agent roles."""

    def __init__(self, gateway: LlmGateway, prompts: Optional[PromptLibrary] = None,
                 config: Optional[PipelineConfig] = None):
        self.gateway = gateway
        self.prompts = prompts or PromptLibrary.load()
        self.config = config or PipelineConfig()

    # -- gateway plumbing --

    def _call(self, request: LlmRequest, trace: Optional[PipelineTrace]) -> LlmResponse:
        start = time.perf_counter()
        try:
            response = self.gateway.complete(request)
        finally:
            if trace is not None:
                trace.gateway_calls.append(
                    {
                        "role_tag": request.role_tag,
                        "request_digest": request.digest(),
                        "latency_ms": round((time.perf_counter() - start) * 1000, 3),
                    }
                )
        return response

    def _transcript_with(self, ctx: list[dict], msg: UserMessage) -> list[dict]:
        window = list(ctx[-self.config.context_window:])
        window.append({"speaker": "user", "text": msg.text})
        return window

    # -- filter --

    def classify_intent(
        self,
        msg: UserMessage,
        ctx: list[dict],
        activity: Activity,
        stage: Stage,
        trace: Optional[PipelineTrace] = None,
    ) -> Intent:
        """Detect what the user is doing; tool submissions skip the gateway."""
        if msg.attached_tool_result is not None:
            return Intent(kind=TOOL_RESULT, confidence_note="attached tool result")
        system = render(
            self.prompts.get(ROLE_FILTER),
            question=activity.question_text,
            expectations=_format_expectations(stage),
        )
        request = LlmRequest(
            role_tag=ROLE_FILTER,
            system_prompt=system,
            transcript=self._transcript_with(ctx, msg),
            temperature=self.config.filter_temperature,
            seed=self.config.seed,
        )
        response = self._call(request, trace)
        kind = parse_intent_token(response.text)
        if kind is None:
            # Treat unparseable filter output as an answer attempt: the
            # judging path is the safe default for on-task messages.
            return Intent(kind=ANSWER_ATTEMPT, confidence_note=f"unparsed filter output: {response.text[:60]}")
        return Intent(kind=kind, confidence_note=response.text.strip()[:120])

    # -- judges --

    def judge_expectations(
        self,
        msg: UserMessage,
        activity: Activity,
        stage: Stage,
        ctx: list[dict],
        n_judges: Optional[int] = None,
        candidate_ids: Optional[set[str]] = None,
        trace: Optional[PipelineTrace] = None,
    ) -> AggregatedVerdict:
        """Run the judge panel over the still-unmet expectations and merge.

        Each judge gets one repair retry on unparseable output; a judge
        that still fails contributes an empty verdict rather than sinking
        the turn.
        """
        n = self.config.n_judges if n_judges is None else n_judges
        if n < 1:
            raise ValueError("n_judges must be >= 1")
        candidates = set(stage.expectation_ids()) if candidate_ids is None else set(candidate_ids)
        exemplars = "\n".join(
            f"- {ans}" for exp in stage.expectations if exp.id in candidates for ans in exp.exemplar_answers
        )
        system = render(
            self.prompts.get(ROLE_JUDGE),
            question=activity.question_text,
            expectations=_format_expectations(stage, only_ids=candidates),
            exemplars=exemplars or "(none)",
        )
        transcript = self._transcript_with(ctx, msg)

        verdicts = []
        for index in range(n):
            request = LlmRequest(
                role_tag=ROLE_JUDGE,
                system_prompt=system,
                transcript=transcript,
                temperature=self.config.judge_temperature,
                seed=self.config.seed,
            )
            response = self._call(request, trace)
            verdict = parse_judge_output(response.text, candidates)
            if verdict is None:
                repair = LlmRequest(
                    role_tag=ROLE_JUDGE,
                    system_prompt=system
                    + "\n\nYour previous reply could not be parsed. Reply again and end "
                    "with the required 'COVERED: ...' line.",
                    transcript=transcript,
                    temperature=self.config.judge_temperature,
                    seed=self.config.seed,
                )
                response = self._call(repair, trace)
                verdict = parse_judge_output(response.text, candidates)
            if verdict is None:
                logger.warning("judge %d output unparseable after retry; counting as empty", index)
                verdict = JudgeVerdict(judge_index=index)
            else:
                verdict.judge_index = index
            verdicts.append(verdict)
        result = aggregate_verdicts(verdicts, self.config.aggregation_rule)
        if trace is not None:
            trace.verdict = result
        return result

    # -- responder --

    def generate_response(
        self,
        intent: Intent,
        verdict: Optional[AggregatedVerdict],
        state: SessionState,
        activity: Activity,
        stage: Stage,
        ctx: list[dict],
        msg: UserMessage,
        trace: Optional[PipelineTrace] = None,
    ) -> ResponderOutput:
        """Produce the tutor's reply; never fails.

        Gateway trouble (one retry) falls back to the next authored hint
        that has not yet appeared in the visible transcript, verbatim.
        """
        met_ids = state.met_ids()
        open_ids = {e for e in stage.expectation_ids() if state.expectation_status.get(e) == engine.UNMET}
        situation = {
            ANSWER_ATTEMPT: "the learner attempted an answer",
            TOOL_RESULT: "the learner submitted work through an interactive tool",
            QUESTION: "the learner asked a side question; answer it before steering back",
            OFF_TOPIC: "the learner drifted off topic; gently redirect to the activity",
            PROGRESS_COMMAND: "the learner asked about progress; acknowledge and encourage",
        }.get(intent.kind, "continue the dialogue")
        if verdict is not None:
            missed = sorted(open_ids - verdict.covered)
            situation += f"; newly covered: {sorted(verdict.covered) or 'nothing'}; still open: {missed or 'nothing'}"
        system = render(
            self.prompts.get(ROLE_RESPONDER),
            question=activity.question_text,
            expectations=_format_expectations(stage, only_ids=open_ids),
            met="\n".join(f"- {e}" for e in sorted(met_ids)) or "(none yet)",
            situation=situation,
            hints="\n".join(f"- {h}" for h in stage.hint_templates) or "(none)",
        )
        request = LlmRequest(
            role_tag=ROLE_RESPONDER,
            system_prompt=system,
            transcript=self._transcript_with(ctx, msg),
            temperature=self.config.responder_temperature,
            seed=self.config.seed,
        )
        text = None
        for _ in range(2):
            try:
                text = self._call(request, trace).text
                break
            except GatewayError:
                logger.warning("responder gateway call failed; will retry once then fall back")
        if not text:
            text = self._fallback_hint(stage, ctx)

        directives = []
        if verdict is not None:
            missed_ids = open_ids - verdict.covered
            if missed_ids:
                for binding in stage.tool_bindings:
                    if binding.trigger == "on_judge_miss":
                        directives.append({"tool_id": binding.tool_id, "trigger_reason": "on_judge_miss"})
        output = ResponderOutput(text=text, tool_directives=directives, image_refs=[])
        if trace is not None:
            trace.responder_outputs.append(output)
        return output

    def _fallback_hint(self, stage: Stage, ctx: list[dict]) -> str:
        seen = {entry.get("text", "") for entry in ctx if entry.get("speaker") == "system"}
        for hint in stage.hint_templates:
            if hint not in seen:
                return hint
        if stage.hint_templates:
            return stage.hint_templates[-1]
        return "Take another look at the question and describe what you notice."

    # -- facilitator --

    def facilitate(self, verdict: Optional[AggregatedVerdict], intent: Intent, state: SessionState,
                   activity: Activity, trace: Optional[PipelineTrace] = None) -> FacilitatorDecision:
        """Pure decision table over (verdict, intent, state, config); no gateway."""
        decision = self._decide(verdict, intent, state, activity)
        if trace is not None:
            trace.decision = decision
        return decision

    def _decide(self, verdict, intent, state, activity) -> FacilitatorDecision:
        msgs = self.prompts.message_for
        if state.lifecycle == engine.COMPLETED:
            return FacilitatorDecision(engine.ACKNOWLEDGE_AND_STAY, msgs(engine.ACKNOWLEDGE_AND_STAY))
        if intent.kind == QUESTION:
            return FacilitatorDecision(engine.ANSWER_SIDE_QUESTION, msgs(engine.ANSWER_SIDE_QUESTION))
        if intent.kind == OFF_TOPIC:
            return FacilitatorDecision(engine.REDIRECT_OFF_TOPIC, msgs(engine.REDIRECT_OFF_TOPIC))
        if intent.kind == PROGRESS_COMMAND:
            return FacilitatorDecision(engine.ACKNOWLEDGE_AND_STAY, msgs(engine.ACKNOWLEDGE_AND_STAY))

        # AnswerAttempt / ToolResult
        covered = verdict.covered if verdict is not None else set()
        stage = activity.stages[state.stage_index]
        newly = {
            e for e in covered
            if e in stage.expectation_ids() and state.expectation_status.get(e) == engine.UNMET
        }
        if newly:
            statements = {e.id: e.statement for e in activity.all_expectations()}
            covered_text = "; ".join(statements[e] for e in sorted(newly))
            resolved_after = {
                e: (engine.MET if e in newly else s) for e, s in state.expectation_status.items()
            }
            if all(s in (engine.MET, engine.SKIPPED) for s in resolved_after.values()):
                return FacilitatorDecision(engine.COMPLETE_ACTIVITY, msgs(engine.COMPLETE_ACTIVITY, covered=covered_text))
            return FacilitatorDecision(engine.ADVANCE_EXPECTATION, msgs(engine.ADVANCE_EXPECTATION, covered=covered_text))
        if state.consecutive_misses >= self.config.skip_threshold:
            return FacilitatorDecision(engine.SKIP_STAGE, msgs(engine.SKIP_STAGE))
        return FacilitatorDecision(engine.SEND_HINT, msgs(engine.SEND_HINT))


@dataclass
class TurnResult:
    reply: ResponderOutput
    decision: FacilitatorDecision
    trace: PipelineTrace
    state: SessionState
    event_ids: list[int] = field(default_factory=list)


@dataclass
class TurnDeps:
    pack: ContentPack
    gateway: LlmGateway
    store: EventStore
    sessions: SessionRepo
    config: PipelineConfig = field(default_factory=PipelineConfig)
    prompts: Optional[PromptLibrary] = None


def run_turn(session_id: str, msg: UserMessage, deps: TurnDeps) -> TurnResult:
    """Execute one full dialogue round and persist it atomically.

    On GatewayError the turn is rolled back: the only record left behind is
    a TurnFailed event and the session state is untouched.
    """
    msg.validate()
    state = deps.sessions.get(session_id)
    if state is None:
        raise SessionNotFound(f"no session {session_id!r}")
    if state.lifecycle == engine.COMPLETED:
        deps.store.append(
            state.user_id,
            ev.TURN_FAILED,
            {"reason": "session_completed"},
            session_id=session_id,
        )
        raise SessionCompleted(f"session {session_id!r} is completed; use review mode")

    pipeline = Pipeline(deps.gateway, deps.prompts, deps.config)
    activity = get_activity(deps.pack, state.activity_id)
    stage = activity.stages[state.stage_index]
    ctx = deps.store.recent_dialogue(session_id, deps.config.context_window)
    trace = PipelineTrace()

    try:
        intent = pipeline.classify_intent(msg, ctx, activity, stage, trace)
        trace.intent = intent
        verdict = None
        if intent.kind in (ANSWER_ATTEMPT, TOOL_RESULT):
            candidates = set(state.unmet_in_stage(activity))
            verdict = pipeline.judge_expectations(
                msg, activity, stage, ctx, candidate_ids=candidates, trace=trace
            )
        reply = pipeline.generate_response(intent, verdict, state, activity, stage, ctx, msg, trace)
        decision = pipeline.facilitate(verdict, intent, state, activity, trace)
        new_state = apply_decision(state, verdict.covered if verdict else set(), decision.action, activity)
    except GatewayError as exc:
        deps.store.append(
            state.user_id,
            ev.TURN_FAILED,
            {"reason": str(exc)},
            session_id=session_id,
        )
        raise

    event_ids: list[int] = []
    with deps.store.db.transaction():
        event_ids.append(
            deps.store.append(
                state.user_id,
                ev.USER_MESSAGE,
                {
                    "text": msg.text,
                    "client_timestamp": msg.client_timestamp,
                    "attached_tool_result": msg.attached_tool_result,
                    "intent": intent.kind,
                },
                session_id=session_id,
            )
        )
        if verdict is not None:
            statements = {e.id: e.statement for e in activity.all_expectations()}
            covered_text = (
                "Covered this turn: " + "; ".join(statements[e] for e in sorted(verdict.covered))
                if verdict.covered
                else "No learning expectation covered this turn."
            )
            event_ids.append(
                deps.store.append(
                    state.user_id,
                    ev.SYSTEM_MESSAGE,
                    {
                        "text": covered_text,
                        "covered": sorted(verdict.covered),
                        "rule": verdict.rule,
                        "per_judge": [
                            {
                                "judge_index": v.judge_index,
                                "covered": sorted(v.covered),
                                "evidence": v.evidence,
                            }
                            for v in verdict.per_judge
                        ],
                    },
                    session_id=session_id,
                    component="Judger",
                )
            )
        event_ids.append(
            deps.store.append(
                state.user_id,
                ev.SYSTEM_MESSAGE,
                {
                    "text": reply.text,
                    "tool_directives": reply.tool_directives,
                    "image_refs": reply.image_refs,
                },
                session_id=session_id,
                component="Responder",
            )
        )
        for directive in reply.tool_directives:
            event_ids.append(
                deps.store.append(
                    state.user_id,
                    ev.TOOL_EVENT,
                    {
                        "tool_id": directive["tool_id"],
                        "action": "directive",
                        "trigger_reason": directive["trigger_reason"],
                    },
                    session_id=session_id,
                    component="Tools",
                )
            )
        if decision.message:
            event_ids.append(
                deps.store.append(
                    state.user_id,
                    ev.SYSTEM_MESSAGE,
                    {"text": decision.message, "action": decision.action},
                    session_id=session_id,
                    component="Facilitator",
                )
            )
        if new_state is not state:
            deps.sessions.save(new_state)
            event_ids.append(
                deps.store.append(
                    state.user_id,
                    ev.STATE_TRANSITION,
                    {
                        "transition": "session_updated",
                        "action": decision.action,
                        "session": new_state.to_dict(),
                    },
                    session_id=session_id,
                )
            )

    return TurnResult(reply=reply, decision=decision, trace=trace, state=new_state, event_ids=event_ids)

"""tutorkit: a self-hosted intelligent tutoring service for math teacher
professional development.

Expert-authored activities run as staged dialogues; a multi-agent pipeline
(filter, judge panel, responder, facilitator) drives each round over an
abstract LLM gateway; every behavior lands in an append-only event log;
an offline harness improves prompts from collected failure cases.
"""

from .content import (
    Activity,
    ContentPack,
    Diagnosis,
    DiagnosisQuestion,
    Expectation,
    Module,
    Stage,
    get_activity,
    get_diagnosis,
    load_content_pack,
    validate_content_pack,
)
from .engine import (
    ProgressView,
    SessionRepo,
    SessionState,
    apply_decision,
    completion_summary,
    progress_view,
    start_or_resume,
)
from .errors import TutorkitError
from .events import EventRecord, EventStore, ExportFilter
from .gateway import LiveGateway, LlmGateway, LlmRequest, LlmResponse, ScriptedGateway
from .pipeline import (
    AggregatedVerdict,
    FacilitatorDecision,
    Intent,
    JudgeVerdict,
    Pipeline,
    PipelineConfig,
    ResponderOutput,
    TurnDeps,
    UserMessage,
    aggregate_verdicts,
    run_turn,
)
from .storage import Database

__version__ = "0.1.0"

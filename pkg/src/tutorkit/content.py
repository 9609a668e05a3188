"""Curriculum data model: content packs, modules, activities, stages, expectations.

A content pack is a directory with a ``manifest.json`` (the full curriculum
tree, field names matching the dataclasses below) and an ``assets/``
directory holding the images the manifest references. Packs are authored
by domain experts and versioned in source control, so everything here is
plain JSON on disk and immutable in memory after load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MissingAsset, NotFound, ParseError, ValidationError

SCHEMA_VERSION = "1"

DOMAINS = ("CK", "PCK")
TOOL_IDS = ("notebook", "two_line", "fill_table")
TOOL_TRIGGERS = ("auto_on_enter", "on_demand", "on_judge_miss")


@dataclass
class Expectation:
    """A single knowledge point a user's response must demonstrably cover."""

    id: str
    statement: str
    rubric: str
    exemplar_answers: list[str] = field(default_factory=list)


@dataclass
class ToolBinding:
    tool_id: str
    trigger: str


@dataclass
class Stage:
    id: str
    expectations: list[Expectation]
    hint_templates: list[str] = field(default_factory=list)
    tool_bindings: list[ToolBinding] = field(default_factory=list)

    def expectation_ids(self) -> list[str]:
        return [e.id for e in self.expectations]


@dataclass
class Activity:
    """One learning task: a question, optional images, and staged expectations."""

    id: str
    title: str
    question_text: str
    stages: list[Stage]
    image_refs: list[str] = field(default_factory=list)
    summary_template: str = ""

    def all_expectations(self) -> list[Expectation]:
        return [e for s in self.stages for e in s.expectations]

    def expectation_ids(self) -> list[str]:
        return [e.id for e in self.all_expectations()]


@dataclass
class DiagnosisOption:
    option_id: str
    text: str


@dataclass
class DiagnosisQuestion:
    id: str
    prompt: str
    options: list[DiagnosisOption]
    multi_select: bool
    correct_option_ids: set[str]

    def option_ids(self) -> list[str]:
        return [o.option_id for o in self.options]


@dataclass
class Diagnosis:
    """End-of-module test, locked until every learning activity is completed."""

    id: str
    questions: list[DiagnosisQuestion]


@dataclass
class Module:
    id: str
    domain: str  # "CK" or "PCK"
    title: str
    activities: list[Activity]
    diagnosis: Diagnosis


@dataclass
class ContentPack:
    schema_version: str
    modules: list[Module]

    def activity_ids(self) -> list[str]:
        return [a.id for m in self.modules for a in m.activities]


@dataclass
class Violation:
    """One invariant violation, naming the offending id."""

    code: str
    subject_id: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}({self.subject_id}): {self.message}"


# --- manifest parsing -------------------------------------------------------

def _expect(cond: bool, msg: str) -> None:
    if not cond:
        raise ParseError(msg)


def _str_field(obj: dict, key: str, where: str, default: str = "") -> str:
    value = obj.get(key, default)
    _expect(isinstance(value, str), f"{where}: field '{key}' must be a string")
    return value


def _id_field(obj: dict, where: str) -> str:
    value = obj.get("id")
    _expect(isinstance(value, str) and value != "", f"{where}: missing or empty 'id'")
    return value


def _list_field(obj: dict, key: str, where: str) -> list:
    value = obj.get(key, [])
    _expect(isinstance(value, list), f"{where}: field '{key}' must be a list")
    return value


def _str_list(obj: dict, key: str, where: str) -> list[str]:
    items = _list_field(obj, key, where)
    _expect(all(isinstance(x, str) for x in items), f"{where}: '{key}' entries must be strings")
    return list(items)


def _parse_expectation(obj: dict) -> Expectation:
    _expect(isinstance(obj, dict), "expectation must be an object")
    eid = _id_field(obj, "expectation")
    return Expectation(
        id=eid,
        statement=_str_field(obj, "statement", f"expectation {eid}"),
        rubric=_str_field(obj, "rubric", f"expectation {eid}"),
        exemplar_answers=_str_list(obj, "exemplar_answers", f"expectation {eid}"),
    )


def _parse_stage(obj: dict) -> Stage:
    _expect(isinstance(obj, dict), "stage must be an object")
    sid = _id_field(obj, "stage")
    bindings = []
    for b in _list_field(obj, "tool_bindings", f"stage {sid}"):
        _expect(isinstance(b, dict), f"stage {sid}: tool binding must be an object")
        bindings.append(
            ToolBinding(
                tool_id=_str_field(b, "tool_id", f"stage {sid} binding"),
                trigger=_str_field(b, "trigger", f"stage {sid} binding"),
            )
        )
    return Stage(
        id=sid,
        expectations=[_parse_expectation(e) for e in _list_field(obj, "expectations", f"stage {sid}")],
        hint_templates=_str_list(obj, "hint_templates", f"stage {sid}"),
        tool_bindings=bindings,
    )


def _parse_activity(obj: dict) -> Activity:
    _expect(isinstance(obj, dict), "activity must be an object")
    aid = _id_field(obj, "activity")
    return Activity(
        id=aid,
        title=_str_field(obj, "title", f"activity {aid}"),
        question_text=_str_field(obj, "question_text", f"activity {aid}"),
        image_refs=_str_list(obj, "image_refs", f"activity {aid}"),
        stages=[_parse_stage(s) for s in _list_field(obj, "stages", f"activity {aid}")],
        summary_template=_str_field(obj, "summary_template", f"activity {aid}"),
    )


def _parse_question(obj: dict) -> DiagnosisQuestion:
    _expect(isinstance(obj, dict), "diagnosis question must be an object")
    qid = _id_field(obj, "diagnosis question")
    options = []
    for o in _list_field(obj, "options", f"question {qid}"):
        _expect(isinstance(o, dict), f"question {qid}: option must be an object")
        options.append(
            DiagnosisOption(
                option_id=_str_field(o, "option_id", f"question {qid} option"),
                text=_str_field(o, "text", f"question {qid} option"),
            )
        )
    multi = obj.get("multi_select", False)
    _expect(isinstance(multi, bool), f"question {qid}: 'multi_select' must be a boolean")
    return DiagnosisQuestion(
        id=qid,
        prompt=_str_field(obj, "prompt", f"question {qid}"),
        options=options,
        multi_select=multi,
        correct_option_ids=set(_str_list(obj, "correct_option_ids", f"question {qid}")),
    )


def _parse_diagnosis(obj: dict, module_id: str) -> Diagnosis:
    _expect(isinstance(obj, dict), f"module {module_id}: 'diagnosis' must be an object")
    did = _id_field(obj, f"module {module_id} diagnosis")
    return Diagnosis(
        id=did,
        questions=[_parse_question(q) for q in _list_field(obj, "questions", f"diagnosis {did}")],
    )


def _parse_module(obj: dict) -> Module:
    _expect(isinstance(obj, dict), "module must be an object")
    mid = _id_field(obj, "module")
    _expect("diagnosis" in obj, f"module {mid}: missing 'diagnosis'")
    return Module(
        id=mid,
        domain=_str_field(obj, "domain", f"module {mid}"),
        title=_str_field(obj, "title", f"module {mid}"),
        activities=[_parse_activity(a) for a in _list_field(obj, "activities", f"module {mid}")],
        diagnosis=_parse_diagnosis(obj["diagnosis"], mid),
    )


def parse_manifest(doc: dict) -> ContentPack:
    """Build a ContentPack from a decoded manifest document.

    Raises ParseError for structural problems (wrong types, missing ids).
    Invariant checking is validate_content_pack's job.
    """
    _expect(isinstance(doc, dict), "manifest must be a JSON object")
    version = _str_field(doc, "schema_version", "manifest")
    _expect(version == SCHEMA_VERSION, f"manifest: unsupported schema_version {version!r}")
    return ContentPack(
        schema_version=version,
        modules=[_parse_module(m) for m in _list_field(doc, "modules", "manifest")],
    )


# --- validation -------------------------------------------------------------

def validate_content_pack(pack: ContentPack) -> list[Violation]:
    """Return every invariant violation in document order; empty means valid."""
    violations: list[Violation] = []
    seen_modules: set[str] = set()
    seen_activities: set[str] = set()
    seen_diagnoses: set[str] = set()

    def bad(code: str, subject: str, message: str) -> None:
        violations.append(Violation(code, subject, message))

    for module in pack.modules:
        if module.id in seen_modules:
            bad("duplicate_module_id", module.id, "module id used more than once")
        seen_modules.add(module.id)
        if module.domain not in DOMAINS:
            bad("bad_domain", module.id, f"domain must be one of {DOMAINS}, got {module.domain!r}")
        if not module.activities:
            bad("no_learning_activities", module.id, "module has no learning activities")

        for activity in module.activities:
            if activity.id in seen_activities:
                bad("duplicate_activity_id", activity.id, "activity id used more than once")
            seen_activities.add(activity.id)
            if not activity.stages:
                bad("no_stages", activity.id, "activity has no stages")
            seen_expectations: set[str] = set()
            for stage in activity.stages:
                if not stage.expectations:
                    bad("no_expectations", stage.id, f"stage in activity {activity.id} has no expectations")
                for exp in stage.expectations:
                    if exp.id in seen_expectations:
                        bad("duplicate_expectation_id", exp.id, f"expectation id reused in activity {activity.id}")
                    seen_expectations.add(exp.id)
                    if not exp.statement:
                        bad("empty_statement", exp.id, "expectation statement is empty")
                    if not exp.rubric:
                        bad("empty_rubric", exp.id, "expectation rubric is empty")
                for binding in stage.tool_bindings:
                    if binding.tool_id not in TOOL_IDS:
                        bad("unknown_tool", stage.id, f"unknown tool_id {binding.tool_id!r}")
                    if binding.trigger not in TOOL_TRIGGERS:
                        bad("unknown_trigger", stage.id, f"unknown trigger {binding.trigger!r}")

        diagnosis = module.diagnosis
        if diagnosis.id in seen_diagnoses:
            bad("duplicate_diagnosis_id", diagnosis.id, "diagnosis id used more than once")
        seen_diagnoses.add(diagnosis.id)
        for question in diagnosis.questions:
            option_ids = question.option_ids()
            if len(option_ids) < 2:
                bad("too_few_options", question.id, "diagnosis question needs at least 2 options")
            if len(set(option_ids)) != len(option_ids):
                bad("duplicate_option_id", question.id, "option ids must be unique within a question")
            unknown = question.correct_option_ids - set(option_ids)
            if unknown:
                bad("unknown_correct_option", question.id, f"correct options {sorted(unknown)} not among options")
            if not question.multi_select and len(question.correct_option_ids) != 1:
                bad(
                    "single_select_correct_count",
                    question.id,
                    f"single-select question must have exactly 1 correct option, got {len(question.correct_option_ids)}",
                )

    return violations


# --- loading and saving -----------------------------------------------------

def load_content_pack(path: str | Path) -> ContentPack:
    """Load and fully validate the pack stored in directory ``path``.

    Raises ParseError, ValidationError, or MissingAsset; on success the
    returned pack has passed every invariant check.
    """
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise ParseError(f"no manifest.json in {root}")
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest.json is not valid JSON: {exc}") from exc

    pack = parse_manifest(doc)
    violations = validate_content_pack(pack)
    if violations:
        raise ValidationError(violations)

    asset_dir = root / "assets"
    for module in pack.modules:
        for activity in module.activities:
            for ref in activity.image_refs:
                if not (asset_dir / ref).is_file():
                    raise MissingAsset(f"activity {activity.id}: image_ref {ref!r} not found under {asset_dir}")
    return pack


def pack_to_manifest(pack: ContentPack) -> dict:
    """Serialize a pack back to its manifest document (inverse of parse)."""
    return {
        "schema_version": pack.schema_version,
        "modules": [
            {
                "id": m.id,
                "domain": m.domain,
                "title": m.title,
                "activities": [
                    {
                        "id": a.id,
                        "title": a.title,
                        "question_text": a.question_text,
                        "image_refs": list(a.image_refs),
                        "stages": [
                            {
                                "id": s.id,
                                "expectations": [
                                    {
                                        "id": e.id,
                                        "statement": e.statement,
                                        "rubric": e.rubric,
                                        "exemplar_answers": list(e.exemplar_answers),
                                    }
                                    for e in s.expectations
                                ],
                                "hint_templates": list(s.hint_templates),
                                "tool_bindings": [
                                    {"tool_id": b.tool_id, "trigger": b.trigger} for b in s.tool_bindings
                                ],
                            }
                            for s in a.stages
                        ],
                        "summary_template": a.summary_template,
                    }
                    for a in m.activities
                ],
                "diagnosis": {
                    "id": m.diagnosis.id,
                    "questions": [
                        {
                            "id": q.id,
                            "prompt": q.prompt,
                            "options": [{"option_id": o.option_id, "text": o.text} for o in q.options],
                            "multi_select": q.multi_select,
                            "correct_option_ids": sorted(q.correct_option_ids),
                        }
                        for q in m.diagnosis.questions
                    ],
                },
            }
            for m in pack.modules
        ],
    }


def write_content_pack(pack: ContentPack, path: str | Path) -> None:
    """Write manifest.json plus empty placeholder files for referenced assets."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(
        json.dumps(pack_to_manifest(pack), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    asset_dir = root / "assets"
    asset_dir.mkdir(exist_ok=True)
    for module in pack.modules:
        for activity in module.activities:
            for ref in activity.image_refs:
                target = asset_dir / ref
                target.parent.mkdir(parents=True, exist_ok=True)
                if not target.exists():
                    target.touch()


# --- lookups ----------------------------------------------------------------

def get_activity(pack: ContentPack, activity_id: str) -> Activity:
    """Fetch a learning activity by id. Diagnoses live in their own namespace."""
    for module in pack.modules:
        for activity in module.activities:
            if activity.id == activity_id:
                return activity
    raise NotFound(f"no learning activity with id {activity_id!r}")


def get_diagnosis(pack: ContentPack, diagnosis_id: str) -> Diagnosis:
    for module in pack.modules:
        if module.diagnosis.id == diagnosis_id:
            return module.diagnosis
    raise NotFound(f"no diagnosis with id {diagnosis_id!r}")


def module_for_activity(pack: ContentPack, activity_id: str) -> Module:
    for module in pack.modules:
        for activity in module.activities:
            if activity.id == activity_id:
                return module
    raise NotFound(f"no learning activity with id {activity_id!r}")


def module_for_diagnosis(pack: ContentPack, diagnosis_id: str) -> Module:
    for module in pack.modules:
        if module.diagnosis.id == diagnosis_id:
            return module
    raise NotFound(f"no diagnosis with id {diagnosis_id!r}")

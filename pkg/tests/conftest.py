import json
from pathlib import Path

import pytest

from tutorkit.content import (
    Activity,
    ContentPack,
    Diagnosis,
    DiagnosisOption,
    DiagnosisQuestion,
    Expectation,
    Module,
    Stage,
    ToolBinding,
    load_content_pack,
)
from tutorkit.engine import SessionRepo
from tutorkit.events import EventStore
from tutorkit.gateway import ScriptedGateway
from tutorkit.storage import Database

REPO_ROOT = Path(__file__).resolve().parent.parent
SAMPLE_PACK_DIR = REPO_ROOT / "sample_pack"


@pytest.fixture(scope="session")
def sample_pack_dir() -> Path:
    return SAMPLE_PACK_DIR


@pytest.fixture(scope="session")
def sample_pack() -> ContentPack:
    return load_content_pack(SAMPLE_PACK_DIR)


@pytest.fixture()
def db() -> Database:
    return Database(":memory:")


@pytest.fixture()
def store(db) -> EventStore:
    return EventStore(db)


@pytest.fixture()
def sessions(db) -> SessionRepo:
    return SessionRepo(db)


# --- programmatic pack building ----------------------------------------------

def make_expectation(eid: str, statement: str = "", rubric: str = "") -> Expectation:
    return Expectation(
        id=eid,
        statement=statement or f"statement for {eid}",
        rubric=rubric or f"rubric for {eid}",
        exemplar_answers=[f"exemplar answer for {eid}"],
    )


def make_stage(sid: str, eids: list[str], hints=None, bindings=None) -> Stage:
    return Stage(
        id=sid,
        expectations=[make_expectation(e) for e in eids],
        hint_templates=list(hints) if hints is not None else [f"hint one for {sid}", f"hint two for {sid}"],
        tool_bindings=[ToolBinding(tool_id=t, trigger=tr) for t, tr in (bindings or [])],
    )


def make_activity(aid: str, stage_eids=None, bindings=None, hints=None) -> Activity:
    stage_eids = stage_eids if stage_eids is not None else [["e1", "e2"], ["e3"]]
    stages = [
        make_stage(f"{aid}-s{i + 1}", eids, hints=hints, bindings=bindings if i == 0 else None)
        for i, eids in enumerate(stage_eids)
    ]
    return Activity(
        id=aid,
        title=f"Activity {aid}",
        question_text=f"Question text for {aid}",
        stages=stages,
        image_refs=[],
        summary_template=f"Summary for {aid}.",
    )


def make_question(qid: str, n_options: int = 3, multi: bool = False, correct=None) -> DiagnosisQuestion:
    option_ids = [chr(ord("a") + i) for i in range(n_options)]
    return DiagnosisQuestion(
        id=qid,
        prompt=f"Prompt for {qid}",
        options=[DiagnosisOption(option_id=o, text=f"option {o}") for o in option_ids],
        multi_select=multi,
        correct_option_ids=set(correct) if correct is not None else {option_ids[0]},
    )


def make_diagnosis(did: str, questions=None) -> Diagnosis:
    return Diagnosis(
        id=did,
        questions=questions or [make_question(f"{did}-q1"), make_question(f"{did}-q2", multi=True, correct={"a", "b"})],
    )


def make_module(mid: str, domain: str = "CK", activities=None, diagnosis=None) -> Module:
    return Module(
        id=mid,
        domain=domain,
        title=f"Module {mid}",
        activities=activities if activities is not None else [make_activity(f"{mid}-1"), make_activity(f"{mid}-2")],
        diagnosis=diagnosis or make_diagnosis(f"{mid}-D"),
    )


def make_pack(modules=None) -> ContentPack:
    return ContentPack(
        schema_version="1",
        modules=modules if modules is not None else [make_module("M1"), make_module("M2", domain="PCK")],
    )


# --- gateways -----------------------------------------------------------------

def scripted(rules: list[dict]) -> ScriptedGateway:
    return ScriptedGateway.from_doc(rules)


class SequenceGateway:
    """Test stub: hands out canned responses per role in call order."""

    def __init__(self, by_role: dict[str, list]):
        self.by_role = {role: list(items) for role, items in by_role.items()}
        self.calls = []

    def complete(self, request):
        from tutorkit.errors import GatewayError
        from tutorkit.gateway import LlmResponse

        self.calls.append(request)
        queue = self.by_role.get(request.role_tag)
        if not queue:
            raise GatewayError(f"no canned response for role {request.role_tag}")
        item = queue.pop(0)
        if isinstance(item, Exception):
            raise item
        return LlmResponse(text=item)


def write_pack_dir(tmp_path: Path, manifest: dict, assets: list[str] = ()) -> Path:
    pack_dir = tmp_path / "pack"
    pack_dir.mkdir(exist_ok=True)
    (pack_dir / "manifest.json").write_text(json.dumps(manifest), encoding="utf-8")
    asset_dir = pack_dir / "assets"
    asset_dir.mkdir(exist_ok=True)
    for name in assets:
        (asset_dir / name).write_text("<svg/>", encoding="utf-8")
    return pack_dir

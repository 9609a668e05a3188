"""Walkthrough: drive one learning session end to end with the scripted
gateway, then show the progress view, the replayed state, and the feedback
table.

Run from the repository root:

    python3 demo/run_session.py
"""

from pathlib import Path

from tutorkit import (
    Database,
    EventStore,
    PipelineConfig,
    ScriptedGateway,
    SessionRepo,
    TurnDeps,
    UserMessage,
    load_content_pack,
    progress_view,
    run_turn,
    start_or_resume,
)
from tutorkit.engine import completion_summary, replay_sessions
from tutorkit.feedback import VOTE_UP, feedback_stats, record_feedback, render_table

ROOT = Path(__file__).resolve().parent.parent

MESSAGES = [
    "The slope tells me the km per hour, the unit rate of each walker.",
    "And Ana's line is steeper, so she must be the faster one.",
    "So the equation is d = 3t for Ana and d = 2t for Ben.",
]


def main() -> None:
    pack = load_content_pack(ROOT / "sample_pack")
    db = Database(":memory:")
    deps = TurnDeps(
        pack=pack,
        gateway=ScriptedGateway.from_file(ROOT / "demo" / "scripted_gateway.json"),
        store=EventStore(db),
        sessions=SessionRepo(db),
        config=PipelineConfig(n_judges=3),
    )

    state = start_or_resume("demo-user", "CKSM1-1", pack, deps.sessions, deps.store)
    print(f"session {state.session_id} on activity CKSM1-1\n")

    for text in MESSAGES:
        result = run_turn(state.session_id, UserMessage(session_id=state.session_id, text=text), deps)
        print(f"you>   {text}")
        print(f"tutor> {result.reply.text}")
        print(f"       [{result.decision.action}] {result.decision.message}\n")
        for event_id in result.event_ids:
            record = deps.store.get(event_id)
            if record.kind == "SystemMessage":
                record_feedback(deps.store, "demo-user", event_id, VOTE_UP)

    final = deps.sessions.get(state.session_id)
    print("--- completion summary ---")
    print(completion_summary(final, pack.modules[0].activities[0]))

    view = progress_view("demo-user", pack, deps.sessions)
    print("\n--- progress ---")
    for activity_id, status in view.activity_status.items():
        print(f"{activity_id}: {status}")
    for module_id, unlocked in view.diagnosis_unlocked.items():
        print(f"{module_id} diagnosis unlocked: {unlocked}")

    replayed = replay_sessions(deps.store.export_stream())[state.session_id]
    print(f"\nreplay from event log matches live state: {replayed == final}")

    print("\n--- feedback table ---")
    print(render_table(feedback_stats(deps.store)))


if __name__ == "__main__":
    main()

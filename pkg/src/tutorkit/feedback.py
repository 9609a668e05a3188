"""Per-bubble feedback votes and the component satisfaction table.

Every system bubble and tool panel is ratable. A user re-voting on the same
target replaces their earlier vote in the statistics, but every click stays
in the event log.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional

from . import events as ev
from .errors import NotFound, SchemaError
from .events import EventStore

VOTE_UP = "Up"
VOTE_DOWN = "Down"

RATABLE_KINDS = (ev.SYSTEM_MESSAGE, ev.TOOL_EVENT)


def record_feedback(
    store: EventStore,
    user_id: str,
    target_event_id: int,
    vote: str,
    note: Optional[str] = None,
) -> int:
    """Append one feedback event; the target's component is copied onto it."""
    if vote not in (VOTE_UP, VOTE_DOWN):
        raise SchemaError(f"vote must be {VOTE_UP!r} or {VOTE_DOWN!r}, got {vote!r}")
    target = store.get(target_event_id)
    if target is None:
        raise NotFound(f"no event {target_event_id}")
    if target.kind not in RATABLE_KINDS:
        raise SchemaError(f"event {target_event_id} has kind {target.kind}; only system bubbles and tool panels are ratable")
    payload = {
        "target_event_id": target_event_id,
        "vote": vote,
        "target_component": target.component or "Tools",
    }
    if note:
        payload["note"] = note
    return store.append(
        user_id,
        ev.FEEDBACK,
        payload,
        session_id=target.session_id,
        component=target.component,
    )


@dataclass
class ComponentStats:
    responses: int = 0
    positive: int = 0
    negative: int = 0

    @property
    def pct_positive(self) -> Optional[float]:
        voted = self.positive + self.negative
        if voted == 0:
            return None
        pct = Decimal(100) * Decimal(self.positive) / Decimal(voted)
        return float(pct.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))

    def to_dict(self) -> dict:
        return {
            "responses": self.responses,
            "positive": self.positive,
            "negative": self.negative,
            "pct_positive": self.pct_positive,
        }


@dataclass
class FeedbackStats:
    per_component: dict[str, ComponentStats] = field(default_factory=dict)
    total: ComponentStats = field(default_factory=ComponentStats)

    def to_dict(self) -> dict:
        return {
            "components": {name: stats.to_dict() for name, stats in self.per_component.items()},
            "total": self.total.to_dict(),
        }


def render_table(stats: FeedbackStats) -> str:
    """Plain-text satisfaction table; components with no votes show an em-dash."""
    def fmt(pct: Optional[float]) -> str:
        return "—" if pct is None else f"{pct:.2f}"

    rows = [("Component", "Responses", "Positive", "Negative", "% Positive")]
    for name, row in stats.per_component.items():
        rows.append((name, str(row.responses), str(row.positive), str(row.negative), fmt(row.pct_positive)))
    total = stats.total
    rows.append(("Total", str(total.responses), str(total.positive), str(total.negative), fmt(total.pct_positive)))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    return "\n".join("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows)


def feedback_stats(store: EventStore) -> FeedbackStats:
    """Tally responses and latest-vote-per-(user, target) by component."""
    stats = FeedbackStats(per_component={name: ComponentStats() for name in ev.COMPONENTS})

    flt = ev.ExportFilter(kinds={ev.SYSTEM_MESSAGE, ev.TOOL_EVENT, ev.FEEDBACK})
    latest_votes: dict[tuple[str, int], tuple[str, str]] = {}  # (user, target) -> (vote, component)
    for record in store.export_stream(flt):
        if record.kind == ev.FEEDBACK:
            key = (record.user_id, record.payload["target_event_id"])
            latest_votes[key] = (record.payload["vote"], record.payload["target_component"])
        elif record.component in stats.per_component:
            stats.per_component[record.component].responses += 1

    for vote, component in latest_votes.values():
        if component not in stats.per_component:
            continue
        if vote == VOTE_UP:
            stats.per_component[component].positive += 1
        else:
            stats.per_component[component].negative += 1

    for component_stats in stats.per_component.values():
        stats.total.responses += component_stats.responses
        stats.total.positive += component_stats.positive
        stats.total.negative += component_stats.negative
    return stats

"""Prompt template loading and rendering.

Templates live as versioned text files, one per role tag, in the packaged
``prompts/`` directory (overridable with a custom directory for
experiments). Rendering substitutes ``{name}`` placeholders only for keys
that are actually supplied, so TeX braces and stray brackets in authored
content pass through untouched.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import ParseError
from .gateway import ROLE_TAGS

_PLACEHOLDER = re.compile(r"\{(\w+)\}")


def render(template: str, **values) -> str:
    def sub(match: re.Match) -> str:
        key = match.group(1)
        return str(values[key]) if key in values else match.group(0)

    return _PLACEHOLDER.sub(sub, template)


class PromptLibrary:
    """All role prompts plus the facilitator's per-action message templates."""

    def __init__(self, templates: dict[str, str]):
        missing = [tag for tag in ROLE_TAGS if tag not in templates]
        if missing:
            raise ParseError(f"prompt directory is missing templates for: {missing}")
        self.templates = templates
        self.facilitator_messages = _parse_facilitator(templates["facilitator"])

    @classmethod
    def load(cls, directory: Optional[str | Path] = None) -> "PromptLibrary":
        templates = {}
        if directory is None:
            base = resources.files("tutorkit") / "prompts"
            for tag in ROLE_TAGS:
                templates[tag] = (base / f"{tag}.txt").read_text(encoding="utf-8")
        else:
            for tag in ROLE_TAGS:
                path = Path(directory) / f"{tag}.txt"
                if not path.is_file():
                    raise ParseError(f"missing prompt template {path}")
                templates[tag] = path.read_text(encoding="utf-8")
        return cls(templates)

    def get(self, role_tag: str) -> str:
        return self.templates[role_tag]

    def message_for(self, action: str, **values) -> str:
        template = self.facilitator_messages.get(action, "")
        return render(template, **values)


def _parse_facilitator(text: str) -> dict[str, str]:
    messages = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" in line:
            action, template = line.split(":", 1)
            messages[action.strip()] = template.strip()
    return messages

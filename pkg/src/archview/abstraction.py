"""Abstract a detailed class model into a core-component view via the LLM.

The selection prompt wraps the class diagram in the tagged layout the model
responds well to, and appends a sentinel-delimited output format so the answer
is machine readable; a token-scan fallback still accepts free-text responses.
Selection runs at temperature 0 so the abstraction is reproducible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .llm import ChatMessage, ChatRequest
from .model import Association, ClassModel, ComponentModel

BEGIN_SENTINEL = "BEGIN_COMPONENTS"
END_SENTINEL = "END_COMPONENTS"

CORE_PROMPT_SYSTEM = """<role>
You are an expert software engineer.
</role>
<goal>
Extract an abstract view from the classes keeping only the most important classes.
</goal>

<description>
You will receive a component diagram in PlantUML format highlighting all classes and their attributes and operations.
Additionally, the relationships between classes are also included in one form of association which is not influential but helps you know which class connected to which class.
</description>"""

CORE_PROMPT_OUTPUT_FORMAT = f"""Answer with the names of the core component classes, one name per line, between a line containing {BEGIN_SENTINEL} and a line containing {END_SENTINEL}."""


class NoCoreComponentsError(ValueError):
    """The response named no class present in the model."""

    def __init__(self, raw: str):
        super().__init__("no core components recognized in response")
        self.raw = raw


@dataclass(frozen=True)
class CoreSelection:
    names: tuple[str, ...]
    raw_response: str
    unmatched: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "unmatched": list(self.unmatched),
            "raw_response": self.raw_response,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CoreSelection":
        return cls(
            names=tuple(data["names"]),
            raw_response=data.get("raw_response", ""),
            unmatched=tuple(data.get("unmatched", ())),
        )


def build_core_prompt(plantuml_text: str, model: str, temperature: float = 0.0) -> ChatRequest:
    if not plantuml_text.strip():
        raise ValueError("plantuml_text must be non-empty")
    user = f"<plantuml>\n{plantuml_text}\n</plantuml>\n\n{CORE_PROMPT_OUTPUT_FORMAT}"
    return ChatRequest(
        messages=(
            ChatMessage("system", CORE_PROMPT_SYSTEM),
            ChatMessage("user", user),
        ),
        model=model,
        temperature=temperature,
    )


_BULLET_RE = re.compile(r"^[\s*\-•]+|^\d+[.)]\s*")


def _clean_line(line: str) -> str:
    line = _BULLET_RE.sub("", line.strip())
    return line.strip().rstrip(",.;").strip("`\"'").strip()


def parse_core_selection(response: str, m: ClassModel) -> CoreSelection:
    """Extract the selected class names; unknown names are kept in `unmatched`
    rather than silently dropped, and no re-filtering is applied to names that
    do exist in the model."""
    model_names = set(m.class_names())
    listed: list[str] = []
    sentinel = re.search(
        rf"{BEGIN_SENTINEL}\s*\n(.*?)\n?\s*{END_SENTINEL}", response, re.DOTALL
    )
    if sentinel:
        for line in sentinel.group(1).splitlines():
            cleaned = _clean_line(line)
            if cleaned and cleaned not in listed:
                listed.append(cleaned)
    else:
        # free-text fallback: scan for exact class-name tokens, quoted or bare
        hits = []
        for name in model_names:
            match = re.search(rf"(?<![\w:]){re.escape(name)}(?![\w:])", response)
            if match:
                hits.append((match.start(), name))
        listed = [name for _, name in sorted(hits)]
    names = tuple(n for n in listed if n in model_names)
    unmatched = tuple(n for n in listed if n not in model_names)
    if not names:
        raise NoCoreComponentsError(response)
    return CoreSelection(names=names, raw_response=response, unmatched=unmatched)


def filter_model(m: ClassModel, sel: CoreSelection) -> ComponentModel:
    """Induced subgraph on the selected names; isolated classes are retained."""
    if not sel.names:
        raise ValueError("selection is empty")
    by_name = {c.name: c for c in m.classes}
    missing = [n for n in sel.names if n not in by_name]
    if missing:
        raise ValueError(f"selection names missing from model: {missing}")
    core = set(sel.names)
    kept: tuple[Association, ...] = tuple(
        a for a in m.associations if a.source in core and a.target in core
    )
    return ComponentModel(
        core=tuple(sel.names),
        model=ClassModel(
            classes=tuple(by_name[n] for n in sel.names),
            associations=kept,
        ),
    )

"""PlantUML text for class diagrams and state machines.

The class-diagram side is emit-only (LLM input). The state-machine side is a
small grammar: fences, `[*]` initial/final markers, `state X { ... }`
composites with `--` orthogonal separators, `state X <<history>>` plus
`[H]`/`[H*]` references, quoted display names with `as` aliases, transition
lines with `trigger [guard] / effect` labels, and `'` line comments. The
parser accepts everything the emitter produces; lines outside the grammar are
skipped with a warning because LLM output tends to carry styling noise, while
structural problems (unbalanced braces, duplicate aliases, text outside the
fences) are hard errors.
"""

from __future__ import annotations

import logging
import re

from .model import (
    ClassModel,
    HISTORY_KINDS,
    Region,
    State,
    StateMachine,
    Transition,
    TriggerLabel,
)

logger = logging.getLogger(__name__)

_VIS_SYMBOL = {"public": "+", "private": "-", "protected": "#"}
_ASSOC_ARROW = {"plain": "--", "aggregation": "o--", "composition": "*--", "dependency": "..>"}


class PumlParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class DiagramNotFoundError(ValueError):
    """No @startuml block in an LLM response; keeps the raw text for diagnostics."""

    def __init__(self, raw: str):
        super().__init__("no diagram found in response")
        self.raw = raw


# ---------------------------------------------------------------------------
# class diagram emission


def emit_class_plantuml(m: ClassModel) -> str:
    lines = ["@startuml"]
    for decl in m.classes:
        if not decl.attributes and not decl.operations:
            lines.append(f"class {decl.name}")
            continue
        lines.append(f"class {decl.name} {{")
        for attr in decl.attributes:
            suffix = f": {attr.type_text}" if attr.type_text else ""
            lines.append(f"    {_VIS_SYMBOL.get(attr.visibility, '+')}{attr.name}{suffix}")
        for op in decl.operations:
            params = ", ".join(_param_text(p.name, p.type_text) for p in op.params)
            lines.append(f"    {_VIS_SYMBOL.get(op.visibility, '+')}{op.name}({params})")
        lines.append("}")
    for assoc in m.associations:
        arrow = _ASSOC_ARROW.get(assoc.kind, "--")
        label = f" : {assoc.label}" if assoc.label else ""
        lines.append(f"{assoc.source} {arrow} {assoc.target}{label}")
    lines.append("@enduml")
    return "\n".join(lines) + "\n"


def _param_text(name: str, type_text: str) -> str:
    if name and type_text:
        return f"{name}: {type_text}"
    return name or type_text


# ---------------------------------------------------------------------------
# state machine grammar

_ID = r"[A-Za-z_][\w.]*"
_ENDPOINT = rf"(\[\*\]|\[H\*?\]|{_ID})"
_ARROW = r"-+(?:(?:left|right|up|down)-+)?>"

_TRANSITION_RE = re.compile(rf"^{_ENDPOINT}\s*{_ARROW}\s*{_ENDPOINT}\s*(?::\s*(.*))?$")
_COMPOSITE_ALIAS_RE = re.compile(rf'^state\s+"([^"]*)"\s+as\s+({_ID})\s*\{{$')
_COMPOSITE_RE = re.compile(rf"^state\s+({_ID})\s*\{{$")
_ALIAS_RE = re.compile(rf'^state\s+"([^"]*)"\s+as\s+({_ID})$')
_STEREO_RE = re.compile(rf"^state\s+({_ID})\s*<<\s*([^>]*?)\s*>>$")
_PLAIN_STATE_RE = re.compile(rf"^state\s+({_ID})$")
_SEPARATOR_RE = re.compile(r"^-{2,}$")


class _StateDraft:
    __slots__ = ("id", "name", "kind", "regions", "provisional")

    def __init__(self, sid: str, name: str, kind: str, provisional: bool = False):
        self.id = sid
        self.name = name
        self.kind = kind
        self.regions: list[_RegionDraft] = []
        self.provisional = provisional


class _RegionDraft:
    __slots__ = ("owner", "states", "transitions")

    def __init__(self, owner: _StateDraft | None):
        self.owner = owner
        self.states: list[_StateDraft] = []
        self.transitions: list[Transition] = []


class _Parser:
    def __init__(self):
        self.root = _RegionDraft(None)
        self.stack: list[_RegionDraft] = [self.root]
        self.by_id: dict[str, _StateDraft] = {}
        self.region_of: dict[str, _RegionDraft] = {}
        self.aliases: set[str] = set()
        self.name = "statemachine"
        self._synth = 0

    # -- state bookkeeping

    def _new_state(self, sid: str, name: str, kind: str, region: _RegionDraft,
                   provisional: bool = False) -> _StateDraft:
        draft = _StateDraft(sid, name, kind, provisional)
        region.states.append(draft)
        self.by_id[sid] = draft
        self.region_of[sid] = region
        return draft

    def _synth_id(self, stem: str) -> str:
        while True:
            sid = f"__{stem}_{self._synth}"
            self._synth += 1
            if sid not in self.by_id:
                return sid

    def declare(self, sid: str, lineno: int, name: str | None = None,
                kind: str | None = None, alias: bool = False) -> _StateDraft:
        if alias:
            if sid in self.aliases:
                raise PumlParseError(lineno, f"duplicate alias {sid!r}")
            self.aliases.add(sid)
        current = self.stack[-1]
        draft = self.by_id.get(sid)
        if draft is None:
            return self._new_state(sid, name if name is not None else sid, kind or "simple", current)
        if draft.provisional:
            self.region_of[sid].states.remove(draft)
            current.states.append(draft)
            self.region_of[sid] = current
            draft.provisional = False
        if name is not None:
            draft.name = name
        if kind == "composite" or kind in HISTORY_KINDS:
            draft.kind = kind
        return draft

    def _get_or_create_pseudo(self, region: _RegionDraft, kind: str, stem: str) -> _StateDraft:
        for draft in region.states:
            if draft.kind == kind:
                return draft
        sid = self._synth_id(stem)
        return self._new_state(sid, sid, kind, region)

    def resolve_endpoint(self, token: str, side: str) -> _StateDraft:
        region = self.stack[-1]
        if token == "[*]":
            if side == "left":
                return self._get_or_create_pseudo(region, "initial", "initial")
            return self._get_or_create_pseudo(region, "final", "final")
        if token == "[H]":
            return self._get_or_create_pseudo(region, "shallow-history", "history")
        if token == "[H*]":
            return self._get_or_create_pseudo(region, "deep-history", "history")
        draft = self.by_id.get(token)
        if draft is None:
            draft = self._new_state(token, token, "simple", region, provisional=True)
        return draft

    # -- line handlers

    def open_composite(self, sid: str, lineno: int, name: str | None = None, alias: bool = False):
        draft = self.declare(sid, lineno, name=name, kind="composite", alias=alias)
        if draft.regions:
            region = draft.regions[-1]
        else:
            region = _RegionDraft(draft)
            draft.regions.append(region)
        self.stack.append(region)

    def close_composite(self, lineno: int):
        if len(self.stack) == 1:
            raise PumlParseError(lineno, "unbalanced '}'")
        self.stack.pop()

    def new_sibling_region(self, lineno: int) -> bool:
        current = self.stack[-1]
        if current.owner is None:
            return False
        region = _RegionDraft(current.owner)
        current.owner.regions.append(region)
        self.stack[-1] = region
        return True

    def add_transition(self, src_token: str, tgt_token: str, label: str | None):
        source = self.resolve_endpoint(src_token, "left")
        target = self.resolve_endpoint(tgt_token, "right")
        trigger, guard, effect = _parse_label(label)
        self.stack[-1].transitions.append(
            Transition(source.id, target.id, trigger=trigger, guard=guard, effect=effect)
        )

    def freeze(self) -> StateMachine:
        def _freeze(region: _RegionDraft) -> Region:
            return Region(
                states=tuple(
                    State(id=s.id, name=s.name, kind=s.kind,
                          regions=tuple(_freeze(r) for r in s.regions))
                    for s in region.states
                ),
                transitions=tuple(region.transitions),
            )

        return StateMachine(name=self.name, root=_freeze(self.root))


def _parse_label(label: str | None):
    if label is None:
        return None, None, None
    text = label.strip()
    if not text:
        return None, None, None
    effect = None
    if "/" in text:
        text, effect_text = text.split("/", 1)
        effect = effect_text.strip() or None
    guard = None
    bracket = re.search(r"\[([^\]]*)\]", text)
    if bracket:
        guard = bracket.group(1).strip() or None
        text = text[: bracket.start()] + text[bracket.end():]
    raw = text.strip()
    trigger = TriggerLabel.from_raw(raw) if raw else None
    return trigger, guard, effect


def parse_state_plantuml(text: str) -> StateMachine:
    parser = _Parser()
    started = False
    finished = False
    last_lineno = 0
    for lineno, raw_line in enumerate(text.split("\n"), 1):
        last_lineno = lineno
        line = raw_line.strip()
        if not line or line.startswith("'"):
            continue
        lowered = line.lower()
        if not started:
            if lowered.startswith("@startuml"):
                started = True
                rest = line[len("@startuml"):].strip()
                if rest:
                    parser.name = rest
                continue
            raise PumlParseError(lineno, "content before @startuml")
        if finished:
            raise PumlParseError(lineno, "content after @enduml")
        if lowered == "@enduml":
            if len(parser.stack) != 1:
                raise PumlParseError(lineno, "unbalanced braces: composite state not closed")
            finished = True
            continue
        if line == "}":
            parser.close_composite(lineno)
            continue
        if _SEPARATOR_RE.match(line):
            if not parser.new_sibling_region(lineno):
                logger.warning("line %d: skipped region separator outside composite", lineno)
            continue
        m = _COMPOSITE_ALIAS_RE.match(line)
        if m:
            parser.open_composite(m.group(2), lineno, name=m.group(1), alias=True)
            continue
        m = _COMPOSITE_RE.match(line)
        if m:
            parser.open_composite(m.group(1), lineno)
            continue
        m = _ALIAS_RE.match(line)
        if m:
            parser.declare(m.group(2), lineno, name=m.group(1), alias=True)
            continue
        m = _STEREO_RE.match(line)
        if m:
            stereo = m.group(2).lower()
            if stereo == "history":
                parser.declare(m.group(1), lineno, kind="shallow-history")
            elif stereo == "history*":
                parser.declare(m.group(1), lineno, kind="deep-history")
            else:
                logger.warning("line %d: skipped unsupported stereotype <<%s>>", lineno, stereo)
            continue
        m = _PLAIN_STATE_RE.match(line)
        if m:
            parser.declare(m.group(1), lineno)
            continue
        m = _TRANSITION_RE.match(line)
        if m:
            parser.add_transition(m.group(1), m.group(2), m.group(3))
            continue
        logger.warning("line %d: skipped unrecognized line: %s", lineno, line)
    if not started:
        raise PumlParseError(last_lineno or 1, "no @startuml fence found")
    if not finished:
        raise PumlParseError(last_lineno or 1, "missing @enduml")
    return parser.freeze()


# ---------------------------------------------------------------------------
# state machine emission


def emit_state_plantuml(sm: StateMachine) -> str:
    """Canonical form: per region, state declarations first, then transitions,
    everything in declaration order; region contents indented two spaces."""
    lines = ["@startuml"]
    _emit_region(sm.root, 0, lines)
    lines.append("@enduml")
    return "\n".join(lines) + "\n"


def _emit_region(region: Region, depth: int, lines: list[str]):
    pad = "  " * depth
    initial = next((s for s in region.states if s.kind == "initial"), None)
    final = next((s for s in region.states if s.kind == "final"), None)
    history_tokens = {
        s.id: "[H*]" if s.kind == "deep-history" else "[H]"
        for s in region.states
        if s.kind in HISTORY_KINDS
    }
    for state in region.states:
        if state.kind in ("initial", "final"):
            continue
        if state.kind in HISTORY_KINDS:
            star = "*" if state.kind == "deep-history" else ""
            lines.append(f"{pad}state {state.id} <<history{star}>>")
            continue
        decl = f"state {state.id}" if state.name == state.id else f'state "{state.name}" as {state.id}'
        if state.kind == "composite":
            lines.append(f"{pad}{decl} {{")
            for i, sub in enumerate(state.regions):
                if i:
                    lines.append(f"{pad}  --")
                _emit_region(sub, depth + 1, lines)
            lines.append(f"{pad}}}")
        else:
            lines.append(f"{pad}{decl}")
    for t in region.transitions:
        if initial is not None and t.source == initial.id:
            src = "[*]"
        else:
            src = history_tokens.get(t.source, t.source)
        if final is not None and t.target == final.id:
            tgt = "[*]"
        else:
            tgt = history_tokens.get(t.target, t.target)
        label = _format_label(t)
        lines.append(f"{pad}{src} --> {tgt}" + (f" : {label}" if label else ""))


def _format_label(t: Transition) -> str:
    parts = []
    if t.trigger is not None and t.trigger.raw:
        parts.append(t.trigger.raw)
    if t.guard:
        parts.append(f"[{t.guard}]")
    if t.effect:
        parts.append(f"/ {t.effect}")
    return " ".join(parts)


# ---------------------------------------------------------------------------
# response handling


def extract_plantuml_block(llm_text: str) -> str:
    """First @startuml..@enduml span of an LLM response, fences included."""
    m = re.search(r"@startuml\b.*?@enduml", llm_text, re.DOTALL | re.IGNORECASE)
    if m is None:
        raise DiagramNotFoundError(llm_text)
    return m.group(0)

"""Domain model shared by every pipeline stage.

Structural side: ClassModel / ClassDecl / Association plus the ComponentModel
restriction to a selected core. Behavioral side: hierarchical StateMachine
(regions, simple/composite states, initial/final/history pseudostates,
transitions). All types are value objects: construction never validates, the
validate_* functions report violations as data, and nothing here mutates a
model after it is built.

Serialization: every type has to_dict()/from_dict() producing JSON documents
with a stable field order; top-level documents carry a "type" discriminator
(class_model, component_model, state_machine).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

VISIBILITIES = ("public", "private", "protected")
ASSOCIATION_KINDS = ("plain", "aggregation", "composition", "dependency")
STATE_KINDS = ("simple", "composite", "initial", "final", "shallow-history", "deep-history")
PSEUDO_KINDS = frozenset({"initial", "final", "shallow-history", "deep-history"})
HISTORY_KINDS = frozenset({"shallow-history", "deep-history"})
TRIGGER_FAMILIES = ("event", "timeout", "completion")

_TIMEOUT_CALL = re.compile(r"^\s*(?:tm|timeout|after)\s*\(\s*(\d+)\s*\)\s*$", re.IGNORECASE)
_TIMEOUT_BARE = re.compile(r"^\s*timeout\s*$", re.IGNORECASE)


class SchemaError(ValueError):
    """A document does not match the model schema; names the first offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class NoEntryPointError(ValueError):
    """Raised when a machine has no initial pseudostate in its root region."""


# ---------------------------------------------------------------------------
# structural view


@dataclass(frozen=True)
class Attribute:
    name: str
    visibility: str = "private"
    type_text: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "visibility": self.visibility, "type": self.type_text}

    @classmethod
    def from_dict(cls, data: object, path: str) -> "Attribute":
        d = _expect_dict(data, path)
        return cls(
            name=_expect_str(d, "name", path),
            visibility=_expect_str(d, "visibility", path),
            type_text=_expect_str(d, "type", path),
        )


@dataclass(frozen=True)
class Param:
    name: str
    type_text: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "type": self.type_text}

    @classmethod
    def from_dict(cls, data: object, path: str) -> "Param":
        d = _expect_dict(data, path)
        return cls(name=_expect_str(d, "name", path), type_text=_expect_str(d, "type", path))


@dataclass(frozen=True)
class Operation:
    name: str
    visibility: str = "public"
    params: tuple[Param, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))

    def signature(self) -> tuple:
        return (self.name, tuple(p.type_text for p in self.params))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "visibility": self.visibility,
            "params": [p.to_dict() for p in self.params],
        }

    @classmethod
    def from_dict(cls, data: object, path: str) -> "Operation":
        d = _expect_dict(data, path)
        params = _expect_list(d, "params", path)
        return cls(
            name=_expect_str(d, "name", path),
            visibility=_expect_str(d, "visibility", path),
            params=tuple(
                Param.from_dict(p, f"{path}.params[{i}]") for i, p in enumerate(params)
            ),
        )


@dataclass(frozen=True)
class ClassDecl:
    name: str
    attributes: tuple[Attribute, ...] = ()
    operations: tuple[Operation, ...] = ()
    source_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "operations", tuple(self.operations))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "attributes": [a.to_dict() for a in self.attributes],
            "operations": [o.to_dict() for o in self.operations],
            "source_path": self.source_path,
        }

    @classmethod
    def from_dict(cls, data: object, path: str) -> "ClassDecl":
        d = _expect_dict(data, path)
        attrs = _expect_list(d, "attributes", path)
        ops = _expect_list(d, "operations", path)
        return cls(
            name=_expect_str(d, "name", path),
            attributes=tuple(
                Attribute.from_dict(a, f"{path}.attributes[{i}]") for i, a in enumerate(attrs)
            ),
            operations=tuple(
                Operation.from_dict(o, f"{path}.operations[{i}]") for i, o in enumerate(ops)
            ),
            source_path=_expect_opt_str(d, "source_path", path),
        )


@dataclass(frozen=True)
class Association:
    source: str
    target: str
    label: str | None = None
    kind: str = "plain"

    def to_dict(self) -> dict:
        return {"source": self.source, "target": self.target, "label": self.label, "kind": self.kind}

    @classmethod
    def from_dict(cls, data: object, path: str) -> "Association":
        d = _expect_dict(data, path)
        return cls(
            source=_expect_str(d, "source", path),
            target=_expect_str(d, "target", path),
            label=_expect_opt_str(d, "label", path),
            kind=_expect_str(d, "kind", path),
        )


@dataclass(frozen=True)
class ClassModel:
    classes: tuple[ClassDecl, ...] = ()
    associations: tuple[Association, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "associations", tuple(self.associations))

    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    def to_dict(self) -> dict:
        return {
            "type": "class_model",
            "classes": [c.to_dict() for c in self.classes],
            "associations": [a.to_dict() for a in self.associations],
        }

    @classmethod
    def from_dict(cls, data: object, path: str = "class_model") -> "ClassModel":
        d = _expect_dict(data, path)
        classes = _expect_list(d, "classes", path)
        assocs = _expect_list(d, "associations", path)
        return cls(
            classes=tuple(
                ClassDecl.from_dict(c, f"{path}.classes[{i}]") for i, c in enumerate(classes)
            ),
            associations=tuple(
                Association.from_dict(a, f"{path}.associations[{i}]") for i, a in enumerate(assocs)
            ),
        )


@dataclass(frozen=True)
class ComponentModel:
    core: tuple[str, ...]
    model: ClassModel

    def __post_init__(self):
        object.__setattr__(self, "core", tuple(self.core))

    def to_dict(self) -> dict:
        return {"type": "component_model", "core": list(self.core), "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, data: object, path: str = "component_model") -> "ComponentModel":
        d = _expect_dict(data, path)
        core = _expect_list(d, "core", path)
        for i, name in enumerate(core):
            if not isinstance(name, str):
                raise SchemaError(f"{path}.core[{i}]", "expected string")
        return cls(core=tuple(core), model=ClassModel.from_dict(d.get("model"), f"{path}.model"))


# ---------------------------------------------------------------------------
# behavioral view


@dataclass(frozen=True)
class TriggerLabel:
    raw: str
    family: str
    timeout_ms: int | None = None

    @classmethod
    def from_raw(cls, raw: str) -> "TriggerLabel":
        """Classify a raw trigger text into event/timeout/completion."""
        m = _TIMEOUT_CALL.match(raw)
        if m:
            return cls(raw=raw, family="timeout", timeout_ms=int(m.group(1)))
        if _TIMEOUT_BARE.match(raw):
            return cls(raw=raw, family="timeout", timeout_ms=None)
        if not raw.strip():
            return cls(raw=raw, family="completion", timeout_ms=None)
        return cls(raw=raw, family="event", timeout_ms=None)

    def to_dict(self) -> dict:
        return {"raw": self.raw, "family": self.family, "timeout_ms": self.timeout_ms}

    @classmethod
    def from_dict(cls, data: object, path: str) -> "TriggerLabel":
        d = _expect_dict(data, path)
        timeout_ms = d.get("timeout_ms")
        if timeout_ms is not None and not isinstance(timeout_ms, int):
            raise SchemaError(f"{path}.timeout_ms", "expected integer or null")
        return cls(
            raw=_expect_str(d, "raw", path),
            family=_expect_str(d, "family", path),
            timeout_ms=timeout_ms,
        )


@dataclass(frozen=True)
class Transition:
    source: str
    target: str
    trigger: TriggerLabel | None = None
    guard: str | None = None
    effect: str | None = None

    @property
    def is_self(self) -> bool:
        return self.source == self.target

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "target": self.target,
            "trigger": self.trigger.to_dict() if self.trigger else None,
            "guard": self.guard,
            "effect": self.effect,
        }

    @classmethod
    def from_dict(cls, data: object, path: str) -> "Transition":
        d = _expect_dict(data, path)
        trig = d.get("trigger")
        return cls(
            source=_expect_str(d, "source", path),
            target=_expect_str(d, "target", path),
            trigger=None if trig is None else TriggerLabel.from_dict(trig, f"{path}.trigger"),
            guard=_expect_opt_str(d, "guard", path),
            effect=_expect_opt_str(d, "effect", path),
        )


@dataclass(frozen=True)
class State:
    id: str
    name: str
    kind: str = "simple"
    regions: tuple["Region", ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "kind": self.kind,
            "regions": [r.to_dict() for r in self.regions],
        }

    @classmethod
    def from_dict(cls, data: object, path: str) -> "State":
        d = _expect_dict(data, path)
        regions = _expect_list(d, "regions", path)
        return cls(
            id=_expect_str(d, "id", path),
            name=_expect_str(d, "name", path),
            kind=_expect_str(d, "kind", path),
            regions=tuple(
                Region.from_dict(r, f"{path}.regions[{i}]") for i, r in enumerate(regions)
            ),
        )


@dataclass(frozen=True)
class Region:
    states: tuple[State, ...] = ()
    transitions: tuple[Transition, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "transitions", tuple(self.transitions))

    def to_dict(self) -> dict:
        return {
            "states": [s.to_dict() for s in self.states],
            "transitions": [t.to_dict() for t in self.transitions],
        }

    @classmethod
    def from_dict(cls, data: object, path: str) -> "Region":
        d = _expect_dict(data, path)
        states = _expect_list(d, "states", path)
        transitions = _expect_list(d, "transitions", path)
        return cls(
            states=tuple(State.from_dict(s, f"{path}.states[{i}]") for i, s in enumerate(states)),
            transitions=tuple(
                Transition.from_dict(t, f"{path}.transitions[{i}]")
                for i, t in enumerate(transitions)
            ),
        )


@dataclass(frozen=True)
class StateMachine:
    name: str
    root: Region

    def to_dict(self) -> dict:
        return {"type": "state_machine", "name": self.name, "root": self.root.to_dict()}

    @classmethod
    def from_dict(cls, data: object, path: str = "state_machine") -> "StateMachine":
        d = _expect_dict(data, path)
        return cls(name=_expect_str(d, "name", path), root=Region.from_dict(d.get("root"), f"{path}.root"))


# ---------------------------------------------------------------------------
# schema helpers


def _expect_dict(data: object, path: str) -> dict:
    if not isinstance(data, dict):
        raise SchemaError(path, f"expected object, got {type(data).__name__}")
    return data


def _expect_str(d: dict, key: str, path: str) -> str:
    value = d.get(key)
    if not isinstance(value, str):
        raise SchemaError(f"{path}.{key}", "expected string")
    return value


def _expect_opt_str(d: dict, key: str, path: str) -> str | None:
    value = d.get(key)
    if value is not None and not isinstance(value, str):
        raise SchemaError(f"{path}.{key}", "expected string or null")
    return value


def _expect_list(d: dict, key: str, path: str) -> list:
    value = d.get(key)
    if not isinstance(value, list):
        raise SchemaError(f"{path}.{key}", "expected array")
    return value


def model_from_dict(data: object) -> ClassModel | ComponentModel | StateMachine:
    """Dispatch on the top-level "type" discriminator."""
    d = _expect_dict(data, "document")
    kind = d.get("type")
    if kind == "class_model":
        return ClassModel.from_dict(d)
    if kind == "component_model":
        return ComponentModel.from_dict(d)
    if kind == "state_machine":
        return StateMachine.from_dict(d)
    raise SchemaError("document.type", f"unknown document type {kind!r}")


# ---------------------------------------------------------------------------
# traversal helpers


def walk_regions(sm: StateMachine):
    """Yield (path, region) depth-first; the root region has path "root"."""

    def _walk(region: Region, path: str):
        yield path, region
        for state in region.states:
            for i, child in enumerate(state.regions):
                yield from _walk(child, f"{state.id}[{i}]")

    yield from _walk(sm.root, "root")


def all_states(sm: StateMachine) -> list[State]:
    out = []
    for _, region in walk_regions(sm):
        out.extend(region.states)
    return out


def state_index(sm: StateMachine) -> dict[str, State]:
    return {s.id: s for s in all_states(sm)}


def parent_map(sm: StateMachine) -> dict[str, tuple[str, State | None]]:
    """Map state id -> (region path, enclosing composite state or None)."""
    out: dict[str, tuple[str, State | None]] = {}

    def _walk(region: Region, path: str, parent: State | None):
        for state in region.states:
            out[state.id] = (path, parent)
            for i, child in enumerate(state.regions):
                _walk(child, f"{state.id}[{i}]", state)

    _walk(sm.root, "root", None)
    return out


def all_transitions(sm: StateMachine) -> list[tuple[str, Transition]]:
    out = []
    for path, region in walk_regions(sm):
        out.extend((path, t) for t in region.transitions)
    return out


def named_states(sm: StateMachine) -> list[State]:
    """Simple and composite states, i.e. everything that is not a pseudostate."""
    return [s for s in all_states(sm) if s.kind not in PSEUDO_KINDS]


# ---------------------------------------------------------------------------
# validation


def validate_class_model(m: ClassModel) -> list[str]:
    """Check ClassModel invariants; an empty list means the model is valid."""
    violations: list[str] = []
    seen: set[str] = set()
    for cls_decl in m.classes:
        if cls_decl.name in seen:
            violations.append(f"duplicate class name: {cls_decl.name}")
        seen.add(cls_decl.name)
        attr_names: set[str] = set()
        for attr in cls_decl.attributes:
            if attr.name in attr_names:
                violations.append(f"class {cls_decl.name}: duplicate attribute {attr.name}")
            attr_names.add(attr.name)
            if attr.visibility not in VISIBILITIES:
                violations.append(
                    f"class {cls_decl.name}: attribute {attr.name}: invalid visibility {attr.visibility!r}"
                )
        op_sigs: set[tuple] = set()
        for op in cls_decl.operations:
            sig = op.signature()
            if sig in op_sigs:
                violations.append(f"class {cls_decl.name}: duplicate operation {op.name}")
            op_sigs.add(sig)
            if op.visibility not in VISIBILITIES:
                violations.append(
                    f"class {cls_decl.name}: operation {op.name}: invalid visibility {op.visibility!r}"
                )
    names = {c.name for c in m.classes}
    seen_assoc: set[tuple] = set()
    for assoc in m.associations:
        for endpoint in (assoc.source, assoc.target):
            if endpoint not in names:
                violations.append(
                    f"association {assoc.source} -> {assoc.target}: unknown class {endpoint}"
                )
        if assoc.kind not in ASSOCIATION_KINDS:
            violations.append(
                f"association {assoc.source} -> {assoc.target}: invalid kind {assoc.kind!r}"
            )
        if assoc.source == assoc.target and assoc.kind != "plain":
            violations.append(
                f"association {assoc.source} -> {assoc.target}: self-association must be plain, got {assoc.kind}"
            )
        key = (assoc.source, assoc.target, assoc.label)
        if key in seen_assoc:
            violations.append(
                f"duplicate association: {assoc.source} -> {assoc.target} (label={assoc.label!r})"
            )
        seen_assoc.add(key)
    return violations


def validate_component_model(cm: ComponentModel) -> list[str]:
    violations = validate_class_model(cm.model)
    model_names = cm.model.class_names()
    if sorted(model_names) != sorted(cm.core):
        violations.append(
            f"component model classes {sorted(model_names)} do not match core {sorted(cm.core)}"
        )
    core = set(cm.core)
    for assoc in cm.model.associations:
        if assoc.source not in core or assoc.target not in core:
            violations.append(
                f"association {assoc.source} -> {assoc.target}: endpoint outside core"
            )
    return violations


def validate_state_machine(sm: StateMachine) -> list[str]:
    """Check StateMachine/Region/State invariants; empty list means valid."""
    violations: list[str] = []
    seen_ids: set[str] = set()

    def _walk(region: Region, path: str):
        initials = 0
        histories = 0
        for state in region.states:
            if state.id in seen_ids:
                violations.append(f"duplicate state id: {state.id}")
            seen_ids.add(state.id)
            if state.kind not in STATE_KINDS:
                violations.append(f"state {state.id}: unknown kind {state.kind!r}")
            if state.kind == "initial":
                initials += 1
            if state.kind in HISTORY_KINDS:
                histories += 1
            if state.kind in PSEUDO_KINDS and state.regions:
                violations.append(f"state {state.id}: {state.kind} state must not contain regions")
            if state.kind == "simple" and state.regions:
                violations.append(f"state {state.id}: simple state must not contain regions")
            if state.kind == "composite" and not state.regions:
                violations.append(f"state {state.id}: composite state must have at least one region")
            for i, child in enumerate(state.regions):
                _walk(child, f"{state.id}[{i}]")
        if initials > 1:
            violations.append(f"region {path}: multiple initial pseudostates")
        if histories > 1:
            violations.append(f"region {path}: multiple history pseudostates")

    _walk(sm.root, "root")

    for path, trans in all_transitions(sm):
        for endpoint in (trans.source, trans.target):
            if endpoint not in seen_ids:
                violations.append(
                    f"transition {trans.source} -> {trans.target}: unknown state id {endpoint}"
                )
        if trans.trigger is not None:
            expected = TriggerLabel.from_raw(trans.trigger.raw)
            if (trans.trigger.family == "timeout") != (expected.family == "timeout"):
                violations.append(
                    f"transition {trans.source} -> {trans.target}: trigger family "
                    f"{trans.trigger.family!r} inconsistent with raw {trans.trigger.raw!r}"
                )
    return violations


# ---------------------------------------------------------------------------
# reachability


def reachable_states(sm: StateMachine) -> set[str]:
    """Ids of non-pseudostates reachable from the machine's entry point.

    Entry is the root region's initial pseudostate. Entering a composite fires
    the initial pseudostate of each of its regions (orthogonal regions are all
    entered); entering any state also enters its enclosing composites. A
    reached history pseudostate conservatively makes every state of its region
    reachable.
    """
    by_id = state_index(sm)
    parents = parent_map(sm)
    region_of: dict[str, Region] = {}
    for _, region in walk_regions(sm):
        for state in region.states:
            region_of[state.id] = region

    root_initial = next((s for s in sm.root.states if s.kind == "initial"), None)
    if root_initial is None:
        raise NoEntryPointError("no entry point: machine has no initial pseudostate at root")

    outgoing: dict[str, list[Transition]] = {}
    for _, trans in all_transitions(sm):
        outgoing.setdefault(trans.source, []).append(trans)

    entered: set[str] = set()
    pending: list[str] = []

    def enter(sid: str):
        if sid in entered or sid not in by_id:
            return
        entered.add(sid)
        pending.append(sid)
        state = by_id[sid]
        if state.kind == "composite":
            for region in state.regions:
                for child in region.states:
                    if child.kind == "initial":
                        enter(child.id)
        if state.kind in HISTORY_KINDS:
            for sibling in region_of[sid].states:
                enter(sibling.id)
        _, parent = parents[sid]
        if parent is not None:
            enter(parent.id)

    enter(root_initial.id)
    while pending:
        sid = pending.pop()
        for trans in outgoing.get(sid, ()):
            enter(trans.target)

    return {sid for sid in entered if by_id[sid].kind not in PSEUDO_KINDS}


# ---------------------------------------------------------------------------
# structural equality


def structurally_equal(a: StateMachine, b: StateMachine) -> bool:
    """Compare two machines up to machine name, in-region ordering, and the
    synthetic ids of pseudostates (initial/final/history carry no identity of
    their own; named states compare by id, kind and display name)."""
    return canonical_form(a) == canonical_form(b)


def canonical_form(sm: StateMachine):
    rename: dict[str, str] = {}

    def _build(region: Region, path: str):
        for state in region.states:
            if state.kind == "initial":
                rename[state.id] = f"<{path}:initial>"
            elif state.kind == "final":
                rename[state.id] = f"<{path}:final>"
            elif state.kind in HISTORY_KINDS:
                rename[state.id] = f"<{path}:{state.kind}>"
            for i, child in enumerate(state.regions):
                _build(child, f"{state.id}[{i}]")

    _build(sm.root, "root")

    def _canon(region: Region, path: str):
        states = sorted(
            (
                rename.get(s.id, s.id),
                s.kind,
                "" if s.kind in PSEUDO_KINDS else s.name,
                tuple(_canon(r, f"{s.id}[{i}]") for i, r in enumerate(s.regions)),
            )
            for s in region.states
        )
        transitions = sorted(
            (
                rename.get(t.source, t.source),
                rename.get(t.target, t.target),
                t.trigger.raw if t.trigger else "",
                t.guard or "",
                t.effect or "",
            )
            for t in region.transitions
        )
        return (tuple(states), tuple(transitions))

    return _canon(sm.root, "root")

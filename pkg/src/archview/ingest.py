"""Produce a ClassModel from a UML XMI export or directly from C++ sources.

The XMI importer targets XMI 2.x UML class exports: packagedElement classes
with ownedAttribute/ownedOperation children plus associations resolved through
memberEnd property references. Unknown elements are ignored, never fatal,
because tool exports carry vendor extensions.

The C++ scanner is declaration-level on purpose: comments and string literals
are masked, class/struct bodies are brace-matched, members are read per access
section. No preprocessing, no template instantiation; the pipeline only needs
names, members and type references. Nested classes are flattened to
`Outer::Inner`. Output ordering is fixed by (file path, declaration offset).
"""

from __future__ import annotations

import json
import logging
import re
import xml.etree.ElementTree as ET
from fnmatch import fnmatch
from pathlib import Path

from .model import (
    Association,
    Attribute,
    ClassDecl,
    ClassModel,
    ComponentModel,
    Operation,
    Param,
    SchemaError,
    StateMachine,
    model_from_dict,
)

logger = logging.getLogger(__name__)

DEFAULT_INCLUDE = ("*.h", "*.hpp", "*.cpp", "*.cc")


class XmiParseError(ValueError):
    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class EmptyModelError(ValueError):
    """The input yielded zero classes."""


# ---------------------------------------------------------------------------
# XMI import


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _attr(element: ET.Element, name: str) -> str | None:
    """Attribute lookup ignoring namespaces (xmi:id and plain id both match)."""
    if name in element.attrib:
        return element.attrib[name]
    for key, value in element.attrib.items():
        if _local(key) == name:
            return value
    return None


def parse_xmi(document: bytes) -> ClassModel:
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        line, column = exc.position
        offset = sum(len(l) + 1 for l in document.split(b"\n")[: line - 1]) + column
        raise XmiParseError(f"malformed XML: {exc}", byte_offset=offset) from exc

    class_elements: dict[str, ET.Element] = {}
    properties: dict[str, ET.Element] = {}
    names_by_id: dict[str, str] = {}
    associations: list[ET.Element] = []

    for element in root.iter():
        tag = _local(element.tag)
        xmi_type = _attr(element, "type") or ""
        eid = _attr(element, "id")
        if eid and _attr(element, "name"):
            names_by_id[eid] = _attr(element, "name")
        if tag == "packagedElement" and xmi_type.endswith("Class"):
            if eid:
                class_elements[eid] = element
        elif tag == "packagedElement" and xmi_type.endswith("Association"):
            associations.append(element)
        if tag in ("ownedAttribute", "ownedEnd") and eid:
            properties[eid] = element

    class_name_by_id = {eid: _attr(el, "name") or eid for eid, el in class_elements.items()}

    def type_text(element: ET.Element) -> str:
        ref = _attr(element, "type")
        if ref is None:
            for child in element:
                if _local(child.tag) == "type":
                    ref = _attr(child, "idref") or _attr(child, "href")
                    break
        if ref is None:
            return ""
        if "#" in ref:
            ref = ref.rsplit("#", 1)[-1]
        return class_name_by_id.get(ref) or names_by_id.get(ref) or ref

    classes: list[ClassDecl] = []
    seen_names: set[str] = set()
    for eid, element in class_elements.items():
        name = class_name_by_id[eid]
        if name in seen_names:
            logger.warning("skipping duplicate class name %r in XMI", name)
            continue
        seen_names.add(name)
        attributes = []
        operations = []
        for child in element:
            tag = _local(child.tag)
            if tag == "ownedAttribute":
                attr_name = _attr(child, "name")
                if not attr_name:
                    continue
                attributes.append(
                    Attribute(
                        name=attr_name,
                        visibility=_attr(child, "visibility") or "private",
                        type_text=type_text(child),
                    )
                )
            elif tag == "ownedOperation":
                op_name = _attr(child, "name")
                if not op_name:
                    continue
                params = []
                for sub in child:
                    if _local(sub.tag) == "ownedParameter" and _attr(sub, "direction") != "return":
                        params.append(Param(name=_attr(sub, "name") or "", type_text=type_text(sub)))
                operations.append(
                    Operation(
                        name=op_name,
                        visibility=_attr(child, "visibility") or "public",
                        params=tuple(params),
                    )
                )
        classes.append(ClassDecl(name=name, attributes=tuple(attributes), operations=tuple(operations)))

    if not classes:
        raise EmptyModelError("empty model: no classes found in XMI document")

    model_assocs: list[Association] = []
    seen_assocs: set[tuple] = set()
    for element in associations:
        ends: list[str] = []
        member_end = _attr(element, "memberEnd")
        if member_end:
            ends = member_end.split()
        else:
            for child in element:
                if _local(child.tag) == "memberEnd":
                    ref = _attr(child, "idref")
                    if ref:
                        ends.append(ref)
        resolved: list[tuple[str, ET.Element]] = []
        for end_id in ends:
            prop = properties.get(end_id)
            ref = _attr(prop, "type") if prop is not None else None
            class_name = class_name_by_id.get(ref) if ref else None
            if prop is None or class_name is None:
                logger.warning("dropping association %s: unresolvable memberEnd %s",
                               _attr(element, "id") or "?", end_id)
                resolved = []
                break
            resolved.append((class_name, prop))
        if len(resolved) != 2:
            if ends and not resolved:
                continue
            logger.warning("dropping association %s: expected 2 member ends, got %d",
                           _attr(element, "id") or "?", len(resolved))
            continue
        (source, source_prop), (target, target_prop) = resolved
        kind = "plain"
        for prop in (source_prop, target_prop):
            aggregation = _attr(prop, "aggregation")
            if aggregation == "shared":
                kind = "aggregation"
            elif aggregation == "composite":
                kind = "composition"
        label = _attr(element, "name") or _attr(target_prop, "name") or _attr(source_prop, "name")
        key = (source, target, label)
        if key in seen_assocs:
            logger.warning("dropping duplicate association %s -> %s", source, target)
            continue
        seen_assocs.add(key)
        model_assocs.append(Association(source=source, target=target, label=label, kind=kind))

    return ClassModel(classes=tuple(classes), associations=tuple(model_assocs))


# ---------------------------------------------------------------------------
# C++ scanner


def _mask_comments_and_strings(text: str) -> str:
    out = list(text)
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "/" and i + 1 < n and text[i + 1] == "/":
            while i < n and text[i] != "\n":
                out[i] = " "
                i += 1
        elif c == "/" and i + 1 < n and text[i + 1] == "*":
            out[i] = out[i + 1] = " "
            i += 2
            while i < n and not (text[i] == "*" and i + 1 < n and text[i + 1] == "/"):
                if text[i] != "\n":
                    out[i] = " "
                i += 1
            if i < n:
                out[i] = " "
            if i + 1 < n:
                out[i + 1] = " "
            i += 2
        elif c in "\"'":
            quote = c
            i += 1
            while i < n and text[i] != quote:
                if text[i] == "\\":
                    out[i] = " "
                    i += 1
                if i < n and text[i] != "\n":
                    out[i] = " "
                i += 1
            i += 1
        else:
            i += 1
    return "".join(out)


_CLASS_DECL_RE = re.compile(
    r"\b(?:(enum)\s+)?(class|struct)\s+([A-Za-z_]\w*)\s*(?:final\s*)?(?::\s*([^{;]*?))?\s*\{"
)
_ACCESS_RE = re.compile(r"\b(public|private|protected)\s*:(?!:)")
_IDENT_RE = re.compile(r"[A-Za-z_]\w*(?:::\w+)*")


def _match_brace(text: str, open_index: int) -> int:
    """Index of the brace closing text[open_index]; -1 if unbalanced."""
    depth = 0
    for i in range(open_index, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return i
    return -1


class _CppClass:
    def __init__(self, full_name: str, kind: str, file_path: str, offset: int,
                 body: str, body_start: int, bases: list[str]):
        self.full_name = full_name
        self.kind = kind
        self.file_path = file_path
        self.offset = offset
        self.body = body
        self.body_start = body_start
        self.bases = bases
        self.nested_spans: list[tuple[int, int]] = []


def _scan_file(text: str, rel_path: str) -> list[_CppClass]:
    masked = _mask_comments_and_strings(text)
    found: list[_CppClass] = []
    for m in _CLASS_DECL_RE.finditer(masked):
        if m.group(1):  # enum class
            continue
        open_index = m.end() - 1
        close_index = _match_brace(masked, open_index)
        if close_index < 0:
            logger.warning("%s: unbalanced braces after %s %s; skipping",
                           rel_path, m.group(2), m.group(3))
            continue
        bases = []
        if m.group(4):
            for part in m.group(4).split(","):
                idents = _IDENT_RE.findall(part)
                if idents:
                    bases.append(idents[-1])
        found.append(
            _CppClass(
                full_name=m.group(3),
                kind=m.group(2),
                file_path=rel_path,
                offset=m.start(),
                body=masked[open_index + 1: close_index],
                body_start=open_index + 1,
                bases=bases,
            )
        )
    # resolve nesting: a class whose declaration sits inside another's body
    for outer in found:
        for inner in found:
            if inner is outer:
                continue
            if outer.body_start <= inner.offset < outer.body_start + len(outer.body):
                inner.full_name = f"{outer.full_name}::{inner.full_name.rsplit('::', 1)[-1]}"
                outer.nested_spans.append(
                    (inner.offset - outer.body_start,
                     inner.body_start + len(inner.body) + 1 - outer.body_start)
                )
    return found


def _member_statements(body: str):
    """Yield top-level statements; function bodies and initializer braces are
    consumed, leaving just the text before them."""
    depth = 0
    buf: list[str] = []
    for c in body:
        if c == "{":
            depth += 1
            if depth == 1:
                yield "".join(buf).strip()
                buf = []
            continue
        if c == "}":
            depth = max(0, depth - 1)
            continue
        if depth:
            continue
        if c == ";":
            yield "".join(buf).strip()
            buf = []
        else:
            buf.append(c)
    tail = "".join(buf).strip()
    if tail:
        yield tail


_SKIP_STATEMENT = re.compile(r"^(using|typedef|friend|static_assert|enum|class|struct|union|template\s*<[^>]*>\s*$)\b")
_MODIFIERS = ("static", "mutable", "inline", "constexpr", "virtual", "explicit", "volatile")


def _first_paren_outside_angles(text: str) -> int:
    angle = 0
    for i, c in enumerate(text):
        if c == "<":
            angle += 1
        elif c == ">":
            angle = max(0, angle - 1)
        elif c == "(" and angle == 0:
            return i
    return -1


def _split_top_level(text: str, sep: str) -> list[str]:
    parts: list[str] = []
    depth = 0
    buf: list[str] = []
    for c in text:
        if c in "<([":
            depth += 1
        elif c in ">)]":
            depth = max(0, depth - 1)
        if c == sep and depth == 0:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(c)
    parts.append("".join(buf))
    return parts


def _parse_params(params_text: str) -> tuple[Param, ...]:
    params_text = params_text.strip()
    if not params_text or params_text == "void":
        return ()
    params = []
    for part in _split_top_level(params_text, ","):
        part = part.split("=", 1)[0].strip()
        if not part:
            continue
        if part == "...":
            params.append(Param(name="", type_text="..."))
            continue
        idents = list(_IDENT_RE.finditer(part))
        if len(idents) >= 2 and idents[-1].end() == len(part.rstrip()):
            name = idents[-1].group(0)
            type_text = part[: idents[-1].start()].strip()
        else:
            name = ""
            type_text = part
        params.append(Param(name=name, type_text=re.sub(r"\s+", " ", type_text)))
    return tuple(params)


def _parse_member(statement: str, visibility: str):
    """Return ("op", Operation) or ("attr", list[Attribute]) or None."""
    statement = statement.strip()
    if not statement or _SKIP_STATEMENT.match(statement):
        return None
    statement = re.sub(r"^template\s*<[^>]*>\s*", "", statement)
    paren = _first_paren_outside_angles(statement)
    if paren != -1:
        head = statement[:paren].strip()
        if "operator" in head:
            op_name = head[head.index("operator"):].replace(" ", "")
        else:
            idents = list(_IDENT_RE.finditer(head))
            if not idents:
                return None
            op_name = idents[-1].group(0)
            if head[: idents[-1].start()].rstrip().endswith("~"):
                op_name = "~" + op_name
        close = statement.find(")", paren)
        params_text = statement[paren + 1: close] if close != -1 else ""
        return ("op", Operation(name=op_name, visibility=visibility, params=_parse_params(params_text)))
    # attribute(s)
    text = statement
    for mod in _MODIFIERS:
        text = re.sub(rf"\b{mod}\b", " ", text)
    declarators = _split_top_level(text, ",")
    first = declarators[0]
    first = first.split("=", 1)[0]
    first = re.sub(r"\[[^\]]*\]", "", first)
    first = re.split(r"(?<!:):(?!:)", first)[0]  # drop bitfield width
    idents = list(_IDENT_RE.finditer(first))
    if len(idents) < 2:
        return None  # not a declaration we understand
    name_match = idents[-1]
    base_type = re.sub(r"\s+", " ", first[: name_match.start()]).strip()
    attrs = [Attribute(name=name_match.group(0), visibility=visibility,
                       type_text=base_type)]
    stripped_base = base_type.rstrip("*& ")
    for extra in declarators[1:]:
        extra = extra.split("=", 1)[0]
        extra = re.sub(r"\[[^\]]*\]", "", extra).strip()
        m = _IDENT_RE.search(extra)
        if not m:
            continue
        prefix = extra[: m.start()].strip()
        attrs.append(Attribute(name=m.group(0), visibility=visibility,
                               type_text=(stripped_base + " " + prefix).strip() if prefix else stripped_base))
    return ("attr", attrs)


def scan_cpp_sources(root, include_globs=None, exclude_globs=None) -> ClassModel:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"source root does not exist: {root}")
    include = tuple(include_globs) if include_globs else DEFAULT_INCLUDE
    exclude = tuple(exclude_globs) if exclude_globs else ()

    def wanted(rel: str, name: str) -> bool:
        if not any(fnmatch(rel, g) or fnmatch(name, g) for g in include):
            return False
        return not any(fnmatch(rel, g) or fnmatch(name, g) for g in exclude)

    files = sorted(
        p for p in root.rglob("*")
        if p.is_file() and wanted(p.relative_to(root).as_posix(), p.name)
    )

    all_classes: list[_CppClass] = []
    for path in files:
        rel = path.relative_to(root).as_posix()
        try:
            text = path.read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            logger.warning("skipping unreadable file %s: %s", rel, exc)
            continue
        all_classes.extend(_scan_file(text, rel))

    all_classes.sort(key=lambda c: (c.file_path, c.offset))
    if not all_classes:
        raise EmptyModelError(f"empty model: no classes found under {root}")

    full_names = {c.full_name for c in all_classes}
    simple_to_full: dict[str, str] = {}
    for c in all_classes:
        simple = c.full_name.rsplit("::", 1)[-1]
        simple_to_full.setdefault(simple, c.full_name)

    def resolve(token: str) -> str | None:
        if token in full_names:
            return token
        return simple_to_full.get(token)

    decls: list[ClassDecl] = []
    assocs: list[Association] = []
    seen_assoc: set[tuple] = set()
    seen_names: set[str] = set()
    for c in all_classes:
        if c.full_name in seen_names:
            logger.warning("duplicate class declaration %s (%s); keeping the first",
                           c.full_name, c.file_path)
            continue
        seen_names.add(c.full_name)
        body = list(c.body)
        for start, end in c.nested_spans:
            for i in range(max(0, start), min(len(body), end)):
                if body[i] != "\n":
                    body[i] = " "
        body_text = "".join(body)

        default_vis = "private" if c.kind == "class" else "public"
        attributes: list[Attribute] = []
        operations: list[Operation] = []
        seen_attr: set[str] = set()
        seen_op: set[tuple] = set()
        segments = _ACCESS_RE.split(body_text)
        visibility = default_vis
        index = 0
        while index < len(segments):
            segment = segments[index]
            if segment in ("public", "private", "protected"):
                visibility = segment
                index += 1
                continue
            for statement in _member_statements(segment):
                parsed = _parse_member(statement, visibility)
                if parsed is None:
                    continue
                kind, value = parsed
                if kind == "op":
                    if value.signature() not in seen_op:
                        seen_op.add(value.signature())
                        operations.append(value)
                else:
                    for attr in value:
                        if attr.name not in seen_attr:
                            seen_attr.add(attr.name)
                            attributes.append(attr)
            index += 1

        decls.append(
            ClassDecl(
                name=c.full_name,
                attributes=tuple(attributes),
                operations=tuple(operations),
                source_path=c.file_path,
            )
        )

        for base in c.bases:
            target = resolve(base)
            if target and target != c.full_name:
                key = (c.full_name, target, None)
                if key not in seen_assoc:
                    seen_assoc.add(key)
                    assocs.append(Association(c.full_name, target, label=None, kind="dependency"))
        for attr in attributes:
            targets_seen: set[str] = set()
            for token in _IDENT_RE.findall(attr.type_text):
                target = resolve(token)
                if target is None or target in targets_seen:
                    continue
                targets_seen.add(target)
                key = (c.full_name, target, attr.name)
                if key not in seen_assoc:
                    seen_assoc.add(key)
                    assocs.append(Association(c.full_name, target, label=attr.name, kind="plain"))

    return ClassModel(classes=tuple(decls), associations=tuple(assocs))


# ---------------------------------------------------------------------------
# model file I/O


def save_model(value: ClassModel | ComponentModel | StateMachine, path) -> None:
    Path(path).write_text(
        json.dumps(value.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def load_model(path) -> ClassModel | ComponentModel | StateMachine:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("document", f"invalid JSON: {exc}") from exc
    return model_from_dict(data)

"""Generate per-component state machines with few-shot prompting.

Examples come in three typologies: general (the bundled toy library), expert
(ground-truth diagrams from another system, user supplied) and domain (the
other core components of the same system). Text diagrams become a user /
assistant example pair; image diagrams are attached to the user message
untouched.

Each request is sampled n times; unparseable samples are dropped with a logged
reason and the survivor closest to all others (medoid under the scoring
matcher, ties to the lowest sample index) is picked as representative.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .llm import Attachment, ChatMessage, ChatRequest
from .model import StateMachine, validate_state_machine
from .plantuml import (
    DiagramNotFoundError,
    PumlParseError,
    extract_plantuml_block,
    parse_state_plantuml,
)
from .scoring import ScoreConfig, structural_distance

logger = logging.getLogger(__name__)

TYPOLOGIES = ("general", "expert", "domain")

SYSTEM_PROMPT = """<Role>
You are an expert software engineer.
</Role>
<Goal>
Generate a state machine diagram for the c++ code in plantuml format.
</Goal>
<Solution Plan>
1. Understand the source code
2. Extract the candidate states
3. Provide small and summarized description of each state
4. Extract the transition from one state to another
5. What is the trigger that triggered the transition
6. Review the examples and how their corresponding state machine diagram
7. Construct the state machine diagram for the passed code
8. Review the order of the states based on normal logic and using the examples
</Solution Plan>
!! Important !!: The Controller example is customized to bring how parallel states are present. Do not use it for any other reason."""

EXAMPLE_PROMPT = "Generate a state machine  for the following code:"


class ExampleLibraryError(ValueError):
    pass


class NoCandidatesError(RuntimeError):
    """Every sample failed to parse; raw responses kept for diagnostics."""

    def __init__(self, responses: list[str]):
        super().__init__(f"no parseable state machine in {len(responses)} samples")
        self.responses = tuple(responses)


@dataclass(frozen=True)
class FewShotExample:
    label: str
    code: str
    diagram: str | bytes
    typology: str
    media_type: str | None = None  # set only for image diagrams


@dataclass(frozen=True)
class GenerationRun:
    component: str
    typology: str
    fingerprint: str
    n_samples: int
    dropped: tuple[str, ...]
    candidates: tuple[StateMachine, ...]
    picked: int

    def picked_machine(self) -> StateMachine:
        return self.candidates[self.picked]

    def to_dict(self) -> dict:
        return {
            "component": self.component,
            "typology": self.typology,
            "fingerprint": self.fingerprint,
            "n_samples": self.n_samples,
            "dropped": list(self.dropped),
            "candidates": [c.to_dict() for c in self.candidates],
            "picked": self.picked,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationRun":
        return cls(
            component=data["component"],
            typology=data["typology"],
            fingerprint=data["fingerprint"],
            n_samples=data["n_samples"],
            dropped=tuple(data.get("dropped", ())),
            candidates=tuple(StateMachine.from_dict(c, f"candidates[{i}]")
                             for i, c in enumerate(data["candidates"])),
            picked=data["picked"],
        )


# ---------------------------------------------------------------------------
# example library


def default_library_dir() -> Path:
    return Path(resources.files("archview") / "library")


def load_example_library(directory=None, typology: str = "general") -> list[FewShotExample]:
    """Read examples from `<dir>/<name>/{code.txt,diagram.puml|png|jpg}`.
    Text diagrams must parse; a broken library entry is a configuration error."""
    directory = Path(directory) if directory is not None else default_library_dir()
    if not directory.is_dir():
        raise ExampleLibraryError(f"example library not found: {directory}")
    examples = []
    for entry in sorted(p for p in directory.iterdir() if p.is_dir()):
        code_path = entry / "code.txt"
        if not code_path.is_file():
            logger.warning("example %s has no code.txt; skipping", entry.name)
            continue
        code = code_path.read_text(encoding="utf-8")
        diagram_path = entry / "diagram.puml"
        if diagram_path.is_file():
            diagram = diagram_path.read_text(encoding="utf-8")
            try:
                parse_state_plantuml(diagram)
            except PumlParseError as exc:
                raise ExampleLibraryError(f"example {entry.name} diagram does not parse: {exc}")
            examples.append(FewShotExample(entry.name, code, diagram, typology))
            continue
        image = next(
            (entry / f"diagram{ext}" for ext in (".png", ".jpg", ".jpeg")
             if (entry / f"diagram{ext}").is_file()),
            None,
        )
        if image is None:
            logger.warning("example %s has no diagram; skipping", entry.name)
            continue
        media = "image/png" if image.suffix == ".png" else "image/jpeg"
        examples.append(FewShotExample(entry.name, code, image.read_bytes(), typology,
                                       media_type=media))
    if not examples:
        raise ExampleLibraryError(f"example library {directory} is empty")
    return examples


def assemble_examples(typology: str, target: str, library: list[FewShotExample],
                      peers: dict[str, tuple[str, str | bytes]] | None = None
                      ) -> list[FewShotExample]:
    """Pick the few-shot set for one generation.

    general: the bundled toy examples. expert: ground-truth examples from the
    other system (user supplied, typed expert). domain: the peer core
    components of the same system, excluding the target itself.
    """
    if typology not in TYPOLOGIES:
        raise ExampleLibraryError(f"unknown typology {typology!r}")
    if typology == "domain":
        peers = peers or {}
        chosen = [
            FewShotExample(name, code, diagram, "domain",
                           media_type=None if isinstance(diagram, str) else "image/png")
            for name, (code, diagram) in sorted(peers.items())
            if name != target
        ]
        if not chosen:
            raise ExampleLibraryError(f"domain typology needs at least one peer besides {target!r}")
        return chosen
    chosen = [e for e in library if e.typology == typology]
    if not chosen:
        raise ExampleLibraryError(f"example library has no {typology!r} entries")
    return chosen


# ---------------------------------------------------------------------------
# prompting and generation


def build_behavior_prompt(code: str, examples: list[FewShotExample], model: str,
                          temperature: float = 0.7,
                          max_tokens: int | None = None) -> ChatRequest:
    if not code.strip():
        raise ValueError("code must be non-empty")
    messages = [ChatMessage("system", SYSTEM_PROMPT)]
    for example in examples:
        if isinstance(example.diagram, bytes):
            messages.append(
                ChatMessage(
                    "user",
                    f"{EXAMPLE_PROMPT}\n{example.code}",
                    attachments=(Attachment(example.media_type or "image/png", example.diagram),),
                )
            )
        else:
            messages.append(ChatMessage("user", f"{EXAMPLE_PROMPT}\n{example.code}"))
            messages.append(ChatMessage("assistant", example.diagram))
    messages.append(ChatMessage("user", f"{EXAMPLE_PROMPT}\n{code}"))
    return ChatRequest(messages=tuple(messages), model=model,
                       temperature=temperature, max_tokens=max_tokens)


def generate_candidates(client, req: ChatRequest, n: int,
                        drop_log: list[str] | None = None) -> list[StateMachine]:
    """Request n samples and parse each; order follows the sample index."""
    if n < 1:
        raise ValueError("n must be >= 1")
    candidates: list[StateMachine] = []
    raw_responses: list[str] = []

    def drop(sample: int, reason: str):
        logger.warning("sample %d dropped: %s", sample, reason)
        if drop_log is not None:
            drop_log.append(f"sample {sample}: {reason}")

    for sample in range(n):
        response = client.complete(req, sample=sample)
        raw_responses.append(response.content)
        try:
            machine = parse_state_plantuml(extract_plantuml_block(response.content))
        except (DiagramNotFoundError, PumlParseError) as exc:
            drop(sample, str(exc))
            continue
        problems = validate_state_machine(machine)
        if problems:
            drop(sample, f"invalid machine: {problems[0]}")
            continue
        candidates.append(machine)
    if not candidates:
        raise NoCandidatesError(raw_responses)
    return candidates


def pick_representative(candidates: list[StateMachine],
                        cfg: ScoreConfig | None = None) -> int:
    """Medoid: the candidate minimizing total structural distance to the rest;
    ties break to the lowest index."""
    if not candidates:
        raise ValueError("no candidates")
    if len(candidates) == 1:
        return 0
    cfg = cfg or ScoreConfig()
    best_index = 0
    best_score = None
    for i, candidate in enumerate(candidates):
        total = sum(
            structural_distance(candidate, other, cfg)
            for j, other in enumerate(candidates)
            if j != i
        )
        if best_score is None or total < best_score:
            best_score = total
            best_index = i
    return best_index


def run_generation(client, component: str, typology: str, code: str,
                   examples: list[FewShotExample], model: str, n: int = 5,
                   temperature: float = 0.7, pick: int | None = None,
                   cfg: ScoreConfig | None = None) -> GenerationRun:
    """One full generation: prompt, sample, parse, pick."""
    from .llm import fingerprint as _fingerprint

    req = build_behavior_prompt(code, examples, model=model, temperature=temperature)
    drop_log: list[str] = []
    candidates = generate_candidates(client, req, n, drop_log=drop_log)
    if pick is None:
        picked = pick_representative(candidates, cfg)
    else:
        if not 0 <= pick < len(candidates):
            raise ValueError(f"--pick {pick} out of range for {len(candidates)} candidates")
        picked = pick
    return GenerationRun(
        component=component,
        typology=typology,
        fingerprint=_fingerprint(req),
        n_samples=n,
        dropped=tuple(drop_log),
        candidates=tuple(candidates),
        picked=picked,
    )

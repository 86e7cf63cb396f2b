"""Command line interface: ingest, emit-uml, abstract, gensm, score, report,
and the one-shot pipeline.

The pipeline persists every intermediate artifact under the output directory
(model JSON, PlantUML texts, selection, runs, picked machines, score cards,
reports, manifest) because inspecting intermediates is the whole point of the
exercise. Under the replay backend two runs produce byte-identical trees.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import abstraction, behavior, ingest, llm, plantuml, scoring
from .model import ClassModel, ComponentModel, StateMachine, validate_class_model

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}")


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _safe_name(name: str) -> str:
    return name.replace("::", "_").replace("/", "_")


def _load_machine(path: Path) -> StateMachine:
    if path.suffix == ".json":
        loaded = ingest.load_model(path)
        if not isinstance(loaded, StateMachine):
            raise ConfigError(f"{path}: expected a state machine document")
        return loaded
    machine = plantuml.parse_state_plantuml(path.read_text(encoding="utf-8"))
    return StateMachine(name=path.stem, root=machine.root)


def _score_config(data: dict | None) -> scoring.ScoreConfig:
    data = data or {}
    return scoring.ScoreConfig(
        min_similarity=data.get("min_similarity", 0.60),
        name_accuracy=data.get("name_accuracy", 0.90),
        lenient_timeout=data.get("lenient_timeout", False),
    )


# ---------------------------------------------------------------------------
# pipeline configuration


@dataclass
class PipelineConfig:
    input_kind: str                 # "cpp" | "xmi"
    input_path: Path
    output_dir: Path
    backend: str = "replay"        # "live" | "record" | "replay"
    cassette_dir: Path | None = None
    model: str = ""
    temperature: float = 0.7
    samples: int = 5
    typology: str = "general"
    example_library: Path | None = None
    ground_truth_dir: Path | None = None
    include: tuple[str, ...] = ()
    exclude: tuple[str, ...] = ()
    scoring_cfg: scoring.ScoreConfig = field(default_factory=scoring.ScoreConfig)

    @classmethod
    def from_file(cls, path: Path, out_dir_override: str | None = None) -> "PipelineConfig":
        raw = _read_json(path)
        base = path.parent

        def resolve(value):
            return (base / value).resolve() if value else None

        input_section = raw.get("input") or {}
        kind = input_section.get("kind")
        if kind not in ("cpp", "xmi"):
            raise ConfigError('input.kind must be "cpp" or "xmi"')
        input_path = resolve(input_section.get("path"))
        if input_path is None or not input_path.exists():
            raise ConfigError(f"input path does not exist: {input_section.get('path')}")
        llm_section = raw.get("llm") or {}
        model = llm_section.get("model") or os.environ.get(llm.MODEL_ENV) or ""
        if not model:
            raise ConfigError(f"llm.model missing and {llm.MODEL_ENV} not set")
        backend = raw.get("backend", "replay")
        if backend not in ("live", "record", "replay"):
            raise ConfigError('backend must be "live", "record" or "replay"')
        cassette_dir = resolve(raw.get("cassette_dir"))
        if backend == "replay" and (cassette_dir is None or not cassette_dir.is_dir()):
            raise ConfigError(f"replay backend requires an existing cassette_dir, got {raw.get('cassette_dir')!r}")
        typology = raw.get("typology", "general")
        if typology not in behavior.TYPOLOGIES:
            raise ConfigError(f"typology must be one of {behavior.TYPOLOGIES}")
        output_dir = Path(out_dir_override) if out_dir_override else resolve(raw.get("output_dir"))
        if output_dir is None:
            raise ConfigError("output_dir missing")
        return cls(
            input_kind=kind,
            input_path=input_path,
            output_dir=Path(output_dir),
            backend=backend,
            cassette_dir=cassette_dir,
            model=model,
            temperature=llm_section.get("temperature", 0.7),
            samples=llm_section.get("samples", 5),
            typology=typology,
            example_library=resolve(raw.get("example_library")),
            ground_truth_dir=resolve(raw.get("ground_truth_dir")),
            include=tuple(raw.get("include", ())),
            exclude=tuple(raw.get("exclude", ())),
            scoring_cfg=_score_config(raw.get("scoring")),
        )


def _make_backend(kind: str, cassette_dir):
    return llm.backend_from_env(kind, cassette_dir)


# ---------------------------------------------------------------------------
# pipeline


def run_pipeline(cfg: PipelineConfig) -> tuple[int, dict]:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    artifacts: list[str] = []
    notices: list[str] = []

    def record(relpath: str):
        artifacts.append(relpath)
        print(f"  wrote {relpath}")

    def fail(stage: str, message: str) -> StageError:
        return StageError(stage, f"{message} (artifacts so far: {sorted(artifacts)})")

    # stage: ingest
    print("[ingest]")
    try:
        if cfg.input_kind == "cpp":
            model = ingest.scan_cpp_sources(cfg.input_path, cfg.include or None,
                                            cfg.exclude or None)
        else:
            model = ingest.parse_xmi(cfg.input_path.read_bytes())
    except (ingest.EmptyModelError, ingest.XmiParseError, OSError) as exc:
        raise fail("ingest", str(exc))
    problems = validate_class_model(model)
    if problems:
        raise fail("ingest", f"extracted model is invalid: {problems[0]}")
    ingest.save_model(model, out / "model.json")
    record("model.json")

    # stage: emit class diagram
    print("[emit-uml]")
    class_puml = plantuml.emit_class_plantuml(model)
    _write_text(out / "class_diagram.puml", class_puml)
    record("class_diagram.puml")

    # stage: abstract
    print("[abstract]")
    try:
        backend = _make_backend(cfg.backend, cfg.cassette_dir)
        request = abstraction.build_core_prompt(class_puml, model=cfg.model)
        response = backend.complete(request)
        selection = abstraction.parse_core_selection(response.content, model)
    except (llm.LlmError, abstraction.NoCoreComponentsError) as exc:
        raise fail("abstract", str(exc))
    _write_json(out / "selection.json", selection.to_dict())
    record("selection.json")
    if selection.unmatched:
        notices.append(f"selection contains unmatched names: {', '.join(selection.unmatched)}")

    component_model = abstraction.filter_model(model, selection)
    ingest.save_model(component_model, out / "component.json")
    record("component.json")
    _write_text(out / "component_diagram.puml",
                plantuml.emit_class_plantuml(component_model.model))
    record("component_diagram.puml")

    # stage: generate state machines per core component
    print("[gensm]")
    by_name = {c.name: c for c in component_model.model.classes}

    def component_code(name: str) -> str | None:
        decl = by_name[name]
        if decl.source_path is None:
            return None
        path = Path(decl.source_path)
        if not path.is_absolute():
            root = cfg.input_path if cfg.input_path.is_dir() else cfg.input_path.parent
            path = root / path
        if not path.is_file():
            return None
        return path.read_text(encoding="utf-8", errors="replace")

    def ground_truth_for(name: str) -> StateMachine | None:
        if cfg.ground_truth_dir is None:
            return None
        path = cfg.ground_truth_dir / f"{_safe_name(name)}.puml"
        if not path.is_file():
            return None
        return _load_machine(path)

    runs: list[behavior.GenerationRun] = []
    for name in component_model.core:
        code = component_code(name)
        if code is None:
            notices.append(f"no source found for component {name}; generation skipped")
            print(f"  note: no source for {name}; skipped")
            continue
        try:
            if cfg.typology == "domain":
                peers: dict[str, tuple[str, str | bytes]] = {}
                for peer in component_model.core:
                    if peer == name:
                        continue
                    peer_code = component_code(peer)
                    peer_gt = cfg.ground_truth_dir and (
                        cfg.ground_truth_dir / f"{_safe_name(peer)}.puml"
                    )
                    if peer_code is None or peer_gt is None or not peer_gt.is_file():
                        continue
                    peers[peer] = (peer_code, peer_gt.read_text(encoding="utf-8"))
                examples = behavior.assemble_examples("domain", name, [], peers=peers)
            else:
                library = behavior.load_example_library(cfg.example_library, cfg.typology)
                examples = behavior.assemble_examples(cfg.typology, name, library)
            run = behavior.run_generation(
                backend, component=name, typology=cfg.typology, code=code,
                examples=examples, model=cfg.model, n=cfg.samples,
                temperature=cfg.temperature, cfg=cfg.scoring_cfg,
            )
        except (llm.LlmError, behavior.ExampleLibraryError,
                behavior.NoCandidatesError) as exc:
            raise fail("gensm", f"component {name}: {exc}")
        runs.append(run)
        stem = f"{_safe_name(name)}.{cfg.typology}"
        _write_json(out / "runs" / f"{stem}.run.json", run.to_dict())
        record(f"runs/{stem}.run.json")
        _write_text(out / "machines" / f"{stem}.puml",
                    plantuml.emit_state_plantuml(run.picked_machine()))
        record(f"machines/{stem}.puml")

    # stage: score against ground truth
    rows = []
    if cfg.ground_truth_dir is None:
        notices.append("ground-truth dir not configured; scoring skipped")
        print("[score] skipped: no ground-truth dir")
    else:
        print("[score]")
        for run in runs:
            gt = ground_truth_for(run.component)
            if gt is None:
                notices.append(f"no ground truth for {run.component}; scoring skipped")
                print(f"  note: no ground truth for {run.component}")
                continue
            card = scoring.score_machines(gt, run.picked_machine(), cfg.scoring_cfg)
            stem = f"{_safe_name(run.component)}.{run.typology}"
            _write_json(out / "cards" / f"{stem}.card.json", {
                "component": run.component,
                "typology": run.typology,
                "card": card.to_dict(),
            })
            record(f"cards/{stem}.card.json")
            rows.append((run.component, run.typology, card))

    # stage: report
    if rows:
        print("[report]")
        _write_text(out / "report.md", scoring.render_report(rows, fmt="markdown"))
        record("report.md")
        _write_text(out / "report.csv", scoring.render_report(rows, fmt="csv"))
        record("report.csv")

    manifest = {"artifacts": sorted(artifacts), "notices": notices}
    _write_json(out / "manifest.json", manifest)
    print(f"pipeline complete: {len(artifacts)} artifacts under {out}")
    return 0, manifest


# ---------------------------------------------------------------------------
# subcommands


def _cmd_ingest(args) -> int:
    if args.format == "cpp":
        model = ingest.scan_cpp_sources(args.input, args.include or None, args.exclude or None)
    else:
        model = ingest.parse_xmi(Path(args.input).read_bytes())
    ingest.save_model(model, args.out)
    print(f"wrote {args.out} ({len(model.classes)} classes, "
          f"{len(model.associations)} associations)")
    return 0


def _cmd_emit_uml(args) -> int:
    model = ingest.load_model(args.model_json)
    if isinstance(model, ComponentModel):
        model = model.model
    if not isinstance(model, ClassModel):
        raise ConfigError(f"{args.model_json}: expected a class model document")
    _write_text(Path(args.out), plantuml.emit_class_plantuml(model))
    print(f"wrote {args.out}")
    return 0


def _cmd_abstract(args) -> int:
    model = ingest.load_model(args.model_json)
    if not isinstance(model, ClassModel):
        raise ConfigError(f"{args.model_json}: expected a class model document")
    selection = None
    if args.selection_json and Path(args.selection_json).is_file():
        selection = abstraction.CoreSelection.from_dict(_read_json(Path(args.selection_json)))
        print(f"reusing cached selection from {args.selection_json}")
    if selection is None:
        model_id = args.model or os.environ.get(llm.MODEL_ENV) or ""
        if not model_id:
            raise ConfigError(f"--model missing and {llm.MODEL_ENV} not set")
        backend = _make_backend(args.backend, args.cassette_dir)
        request = abstraction.build_core_prompt(
            plantuml.emit_class_plantuml(model), model=model_id)
        response = backend.complete(request)
        selection = abstraction.parse_core_selection(response.content, model)
        if args.selection_json:
            _write_json(Path(args.selection_json), selection.to_dict())
    component = abstraction.filter_model(model, selection)
    ingest.save_model(component, args.out)
    print(f"wrote {args.out} (core: {', '.join(component.core)})")
    if selection.unmatched:
        print(f"unmatched names from selection: {', '.join(selection.unmatched)}", file=sys.stderr)
    return 0


def _load_peers_dir(path: Path, target: str) -> dict[str, tuple[str, str | bytes]]:
    peers: dict[str, tuple[str, str | bytes]] = {}
    for entry in sorted(p for p in path.iterdir() if p.is_dir()):
        if entry.name == target:
            continue
        code_path = entry / "code.txt"
        diagram_path = entry / "diagram.puml"
        if code_path.is_file() and diagram_path.is_file():
            peers[entry.name] = (code_path.read_text(encoding="utf-8"),
                                 diagram_path.read_text(encoding="utf-8"))
    return peers


def _cmd_gensm(args) -> int:
    code = Path(args.code).read_text(encoding="utf-8", errors="replace")
    component = args.component or Path(args.code).stem
    model_id = args.model or os.environ.get(llm.MODEL_ENV) or ""
    if not model_id:
        raise ConfigError(f"--model missing and {llm.MODEL_ENV} not set")
    if args.typology == "domain":
        if not args.peers_dir:
            raise ConfigError("domain typology requires --peers-dir")
        peers = _load_peers_dir(Path(args.peers_dir), component)
        examples = behavior.assemble_examples("domain", component, [], peers=peers)
    else:
        library = behavior.load_example_library(args.library, args.typology)
        examples = behavior.assemble_examples(args.typology, component, library)
    backend = _make_backend(args.backend, args.cassette_dir)
    run = behavior.run_generation(
        backend, component=component, typology=args.typology, code=code,
        examples=examples, model=model_id, n=args.n,
        temperature=args.temperature, pick=args.pick,
    )
    _write_json(Path(args.out), run.to_dict())
    print(f"wrote {args.out} ({len(run.candidates)} candidates, picked {run.picked})")
    if args.emit_puml:
        _write_text(Path(args.emit_puml),
                    plantuml.emit_state_plantuml(run.picked_machine()))
        print(f"wrote {args.emit_puml}")
    return 0


def _cmd_score(args) -> int:
    gt = _load_machine(Path(args.gt))
    gen = _load_machine(Path(args.gen))
    cfg = _score_config(_read_json(Path(args.config)) if args.config else None)
    if args.lenient_timeout:
        cfg = scoring.ScoreConfig(cfg.min_similarity, cfg.name_accuracy, True)
    card = scoring.score_machines(gt, gen, cfg, q9_manual=args.q9)
    doc = {"component": args.component, "typology": args.typology, "card": card.to_dict()}
    if args.out:
        _write_json(Path(args.out), doc)
        print(f"wrote {args.out}")
    for label, triple in zip(scoring.QUESTION_LABELS, card.triples()):
        print(f"{label.upper()}: {scoring.format_triple(triple)}")
    return 0


def _cmd_report(args) -> int:
    runs_dir = Path(args.runs)
    rows = []
    for path in sorted(runs_dir.rglob("*.card.json")):
        doc = _read_json(path)
        try:
            card = scoring.ScoreCard.from_dict(doc["card"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: not a score card document ({exc})")
        rows.append((
            doc.get("component", path.stem),
            doc.get("typology", "general"),
            card,
        ))
    text = scoring.render_report(rows, fmt=args.format)
    if args.out:
        _write_text(Path(args.out), text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_pipeline(args) -> int:
    cfg = PipelineConfig.from_file(Path(args.config), args.out_dir)
    status, _ = run_pipeline(cfg)
    return status


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="archview",
        description="Recover component and state-machine views from source code "
                    "and score generated machines against ground truth.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="extract a class model from XMI or C++ sources")
    p.add_argument("--format", choices=("xmi", "cpp"), required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--include", action="append", default=[])
    p.add_argument("--exclude", action="append", default=[])
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("emit-uml", help="emit a class model as PlantUML")
    p.add_argument("--model-json", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_emit_uml)

    p = sub.add_parser("abstract", help="select core components via the LLM and filter")
    p.add_argument("--model-json", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--selection-json", help="cache file; reused when it exists")
    p.add_argument("--backend", choices=("live", "record", "replay"), default="live")
    p.add_argument("--cassette-dir")
    p.add_argument("--model", help=f"model id (default: ${llm.MODEL_ENV})")
    p.set_defaults(func=_cmd_abstract)

    p = sub.add_parser("gensm", help="generate a state machine for one component")
    p.add_argument("--code", required=True)
    p.add_argument("--component", help="component name (default: code file stem)")
    p.add_argument("--typology", choices=behavior.TYPOLOGIES, default="general")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--temperature", type=float, default=0.7)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-puml", help="also write the picked machine as PlantUML")
    p.add_argument("--library", help="few-shot example library dir (default: bundled)")
    p.add_argument("--peers-dir", help="peer components dir for domain typology")
    p.add_argument("--pick", type=int, help="manual candidate pick, overrides the medoid")
    p.add_argument("--backend", choices=("live", "record", "replay"), default="live")
    p.add_argument("--cassette-dir")
    p.add_argument("--model", help=f"model id (default: ${llm.MODEL_ENV})")
    p.set_defaults(func=_cmd_gensm)

    p = sub.add_parser("score", help="score a generated machine against ground truth")
    p.add_argument("--gt", required=True, help="ground truth (.puml or .json)")
    p.add_argument("--gen", required=True, help="generated machine (.puml or .json)")
    p.add_argument("--config", help="scoring config JSON")
    p.add_argument("--lenient-timeout", action="store_true")
    p.add_argument("--q9", type=int, choices=(0, 1), help="manual Q9 judgment")
    p.add_argument("--component", default="component")
    p.add_argument("--typology", default="general")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("report", help="tabulate score cards")
    p.add_argument("--runs", required=True, help="directory containing *.card.json files")
    p.add_argument("--format", choices=("text", "csv", "markdown"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("pipeline", help="run every stage from one config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", help="override the configured output directory")
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, StageError, ingest.EmptyModelError, ingest.XmiParseError,
            llm.LlmError, abstraction.NoCoreComponentsError,
            behavior.ExampleLibraryError, behavior.NoCandidatesError,
            plantuml.PumlParseError, plantuml.DiagramNotFoundError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

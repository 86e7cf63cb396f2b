"""Session fixtures: an offline replay-pipeline setup over the bundled C++
corpus. Cassettes are synthesized from the exact requests the pipeline will
build, so prompt construction and fingerprinting stay in lockstep with the
recorded responses."""

import json
from pathlib import Path

import pytest

from archview.abstraction import build_core_prompt
from archview.behavior import build_behavior_prompt, load_example_library
from archview.ingest import scan_cpp_sources
from archview.llm import fingerprint, write_cassette
from archview.plantuml import emit_class_plantuml

FIXTURES = Path(__file__).parent / "fixtures"

PIPELINE_MODEL_ID = "test-model"
PIPELINE_SAMPLES = 2
CORE_COMPONENTS = ("CoffeeMachine", "Boiler", "Display", "MachineTester", "Controller")

SELECTION_RESPONSE = """Looking at the PlantUML diagram, the architecturally
significant classes are the machine itself, its hardware parts and the
supervisor classes. Auxiliary operation glue like Boiler_boilWater and plain
sensors can be abstracted away.

BEGIN_COMPONENTS
CoffeeMachine
Boiler
Display
MachineTester
Controller
END_COMPONENTS
"""

_COFFEE_0 = """Here is the state machine for the CoffeeMachine class:

```plantuml
@startuml
state Off
state On {
  [*] --> Idle
  Idle --> Brewing : startBrew
  Brewing --> Idle : timeout
}
[*] --> Off
Off --> On : powerOn
On --> Off : powerOff
@enduml
```
"""

_COFFEE_1 = """@startuml
state Off
state On {
  [*] --> Idle
  Idle --> Brewing : startBrew
  Brewing --> Idle : brewComplete
}
[*] --> Off
Off --> On : powerOn
On --> Off : powerOff
@enduml
"""

_BOILER_0 = """The Boiler has a simple heating lifecycle:

@startuml
state Cold
state Heating
[*] --> Cold
Cold --> Heating : heatWater
Heating --> Cold : tempReached
@enduml
"""

_BOILER_1 = """@startuml
state Cold
state Heating
[*] --> Cold
Cold --> Heating : heatWater
Heating --> Cold : tempReached
Heating --> Cold : coolDown
@enduml
"""

_DISPLAY_0 = """@startuml
state Blank
state Showing
[*] --> Blank
Blank --> Showing : show
Showing --> Blank : clear
Showing --> Showing : blink
@enduml
"""

_DISPLAY_1 = """```plantuml
@startuml
skinparam monochrome true
state Blank
state Showing
[*] --> Blank
Blank --> Showing : show
Showing --> Blank : clear
@enduml
```
"""

_TESTER_0 = """@startuml
state Ready
state Testing
[*] --> Ready
Ready --> Testing : runSelfTest
Testing --> Ready : done
@enduml
"""

_TESTER_1 = _TESTER_0

_CONTROLLER_0 = """@startuml
state Stopped
state Dispatching {
  [*] --> Polling
  Polling --> Polling : dispatch
  --
  [*] --> Counting
  Counting --> Counting : tick
}
[*] --> Stopped
Stopped --> Dispatching : start
Dispatching --> Stopped : reset
@enduml
"""

_CONTROLLER_1 = _CONTROLLER_0

BEHAVIOR_RESPONSES = {
    "CoffeeMachine": (_COFFEE_0, _COFFEE_1),
    "Boiler": (_BOILER_0, _BOILER_1),
    "Display": (_DISPLAY_0, _DISPLAY_1),
    "MachineTester": (_TESTER_0, _TESTER_1),
    "Controller": (_CONTROLLER_0, _CONTROLLER_1),
}


def build_pipeline_cassettes(cassette_dir: Path) -> None:
    corpus = FIXTURES / "cpp"
    model = scan_cpp_sources(corpus)
    core_request = build_core_prompt(emit_class_plantuml(model), model=PIPELINE_MODEL_ID)
    fp = fingerprint(core_request)
    write_cassette(cassette_dir / f"{fp}.json", fp, 0, SELECTION_RESPONSE)

    by_name = {c.name: c for c in model.classes}
    library = load_example_library(None, "general")
    for name in CORE_COMPONENTS:
        code = (corpus / by_name[name].source_path).read_text(encoding="utf-8")
        request = build_behavior_prompt(code, library, model=PIPELINE_MODEL_ID,
                                        temperature=0.7)
        fp = fingerprint(request)
        for sample in range(PIPELINE_SAMPLES):
            path = cassette_dir / (f"{fp}.json" if sample == 0 else f"{fp}.{sample}.json")
            write_cassette(path, fp, sample, BEHAVIOR_RESPONSES[name][sample])


@pytest.fixture(scope="session")
def pipeline_setup(tmp_path_factory):
    """Cassette dir + pipeline config for fully offline replay runs."""
    root = tmp_path_factory.mktemp("pipeline")
    cassette_dir = root / "cassettes"
    cassette_dir.mkdir()
    build_pipeline_cassettes(cassette_dir)
    config = {
        "input": {"kind": "cpp", "path": str(FIXTURES / "cpp")},
        "llm": {"model": PIPELINE_MODEL_ID, "temperature": 0.7, "samples": PIPELINE_SAMPLES},
        "typology": "general",
        "ground_truth_dir": str(FIXTURES / "gt"),
        "output_dir": str(root / "out"),
        "backend": "replay",
        "cassette_dir": str(cassette_dir),
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=2))
    return config_path

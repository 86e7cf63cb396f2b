"""Shared builders and oracles for the test suite.

The random machine generator produces valid hierarchical state machines in
which every named state is reachable (patched post-hoc with direct
transitions), the root region always has an initial pseudostate, and nested
regions may or may not have one. Pseudostates are only created in ways the
PlantUML emitter can express, so generated machines round-trip.
"""

from __future__ import annotations

import random

from fractions import Fraction

from archview.model import (
    Association,
    Attribute,
    ClassDecl,
    ClassModel,
    Operation,
    Region,
    State,
    StateMachine,
    Transition,
    TriggerLabel,
    reachable_states,
    walk_regions,
)

TRIGGER_POOL = [None, "evStart", "evStop", "powerOn", "done", "tm(3000)", "tm(500)", "timeout", "after(250)"]
GUARD_POOL = [None, None, None, "count > 0", "isReady"]
EFFECT_POOL = [None, None, None, "reset()", "notify()"]


def trans(source: str, target: str, trigger: str | None = None, guard: str | None = None,
          effect: str | None = None) -> Transition:
    return Transition(
        source=source,
        target=target,
        trigger=TriggerLabel.from_raw(trigger) if trigger else None,
        guard=guard,
        effect=effect,
    )


def simple(sid: str, name: str | None = None) -> State:
    return State(id=sid, name=name if name is not None else sid, kind="simple")


def pseudo(sid: str, kind: str) -> State:
    return State(id=sid, name=sid, kind=kind)


def composite(sid: str, regions, name: str | None = None) -> State:
    return State(id=sid, name=name if name is not None else sid, kind="composite", regions=tuple(regions))


def machine(states, transitions, name: str = "m") -> StateMachine:
    return StateMachine(name=name, root=Region(states=tuple(states), transitions=tuple(transitions)))


TWO_CLASS_MODEL = ClassModel(
    classes=(
        ClassDecl(
            "CoffeeMachine",
            attributes=(Attribute("waterLevel", "private"),),
            operations=(Operation("startBrew", "public"),),
        ),
        ClassDecl(
            "Boiler",
            attributes=(Attribute("temperature", "private"),),
            operations=(Operation("heatWater", "public"),),
        ),
    ),
    associations=(Association("CoffeeMachine", "Boiler"),),
)


def coffee_like_model() -> ClassModel:
    """Five core classes; Controller intentionally isolated."""
    mk_attr = lambda n, t="int": Attribute(name=n, visibility="private", type_text=t)
    mk_op = lambda n: Operation(name=n, visibility="public")
    return ClassModel(
        classes=(
            ClassDecl("CoffeeMachine", (mk_attr("waterLevel"),), (mk_op("startBrew"), mk_op("stopBrew"))),
            ClassDecl("Boiler", (mk_attr("temperature"),), (mk_op("heatWater"),)),
            ClassDecl("Display", (mk_attr("message", "string"),), (mk_op("show"),)),
            ClassDecl("MachineTester", (), (mk_op("runSelfTest"),)),
            ClassDecl("Controller", (), (mk_op("dispatch"),)),
        ),
        associations=(
            Association("CoffeeMachine", "Boiler", "itsBoiler"),
            Association("CoffeeMachine", "Display", "itsDisplay"),
            Association("MachineTester", "CoffeeMachine", "itsMachine"),
        ),
    )


# ---------------------------------------------------------------------------
# independent reachability oracle (flat machines only)


def bfs_reachable_flat(sm: StateMachine) -> set[str]:
    """Plain digraph BFS from the root initial's successors; flat machines only."""
    adj: dict[str, set[str]] = {}
    for t in sm.root.transitions:
        adj.setdefault(t.source, set()).add(t.target)
    start = [s.id for s in sm.root.states if s.kind == "initial"]
    seen: set[str] = set(start)
    frontier = list(start)
    while frontier:
        node = frontier.pop()
        for nxt in adj.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    named = {s.id for s in sm.root.states if s.kind in ("simple", "composite")}
    return seen & named


def closure_reachable_flat(sm: StateMachine) -> set[str]:
    """Adjacency-matrix transitive closure (Warshall); flat machines only."""
    ids = [s.id for s in sm.root.states]
    index = {sid: i for i, sid in enumerate(ids)}
    n = len(ids)
    reach = [[False] * n for _ in range(n)]
    for t in sm.root.transitions:
        reach[index[t.source]][index[t.target]] = True
    for k in range(n):
        for i in range(n):
            if reach[i][k]:
                for j in range(n):
                    if reach[k][j]:
                        reach[i][j] = True
    named = {s.id for s in sm.root.states if s.kind in ("simple", "composite")}
    out: set[str] = set()
    for s in sm.root.states:
        if s.kind == "initial":
            i = index[s.id]
            out.update(ids[j] for j in range(n) if reach[i][j])
    return out & named


def random_flat_machine(rng: random.Random, n_states: int = 10) -> StateMachine:
    states = [pseudo("init", "initial")] + [simple(f"S{i}") for i in range(n_states)]
    transitions = [trans("init", f"S{rng.randrange(n_states)}")]
    for _ in range(rng.randint(n_states // 2, n_states * 2)):
        transitions.append(trans(f"S{rng.randrange(n_states)}", f"S{rng.randrange(n_states)}"))
    return machine(states, transitions)


# ---------------------------------------------------------------------------
# random hierarchical machine generator


class _RegionDraft:
    def __init__(self, depth: int):
        self.depth = depth
        self.states: list[_StateDraft] = []
        self.transitions: list[Transition] = []
        self.final_id: str | None = None
        self.history_id: str | None = None


class _StateDraft:
    def __init__(self, sid: str, name: str, kind: str):
        self.id = sid
        self.name = name
        self.kind = kind
        self.regions: list[_RegionDraft] = []


def random_machine(rng: random.Random, max_states: int = 12, max_depth: int = 3,
                   allow_parallel: bool = True, allow_history: bool = True) -> StateMachine:
    n = rng.randint(2, max_states)
    counters = {"i": 0, "f": 0, "h": 0}
    root = _RegionDraft(0)
    regions = [root]
    named: list[_StateDraft] = []
    region_of: dict[str, _RegionDraft] = {}

    name_styles = [
        lambda i: f"S{i}",
        lambda i: f"Stage {i}",
        lambda i: f"s{i}_work",
        lambda i: f"DoingTask{i}",
    ]

    for i in range(n):
        region = rng.choice(regions)
        sid = f"S{i}"
        name = rng.choice(name_styles)(i)
        if region.depth < max_depth - 1 and rng.random() < 0.25:
            st = _StateDraft(sid, name, "composite")
            n_sub = 2 if (allow_parallel and rng.random() < 0.35) else 1
            for _ in range(n_sub):
                sub = _RegionDraft(region.depth + 1)
                st.regions.append(sub)
                regions.append(sub)
        else:
            st = _StateDraft(sid, name, "simple")
        region.states.append(st)
        region_of[sid] = region
        named.append(st)

    # entry pseudostates; the root always has one, nested regions usually do
    for region in regions:
        named_in = [s for s in region.states if s.kind in ("simple", "composite")]
        if not named_in:
            continue
        if region is root or rng.random() < 0.8:
            iid = f"I{counters['i']}"
            counters["i"] += 1
            region.states.insert(0, _StateDraft(iid, iid, "initial"))
            region_of[iid] = region
            region.transitions.append(Transition(iid, rng.choice(named_in).id))

    if allow_history:
        for region in regions:
            named_in = [s for s in region.states if s.kind in ("simple", "composite")]
            if named_in and region is not root and rng.random() < 0.25:
                hid = f"H{counters['h']}"
                counters["h"] += 1
                kind = "deep-history" if rng.random() < 0.5 else "shallow-history"
                region.states.append(_StateDraft(hid, hid, kind))
                region.history_id = hid
                region_of[hid] = region
                if rng.random() < 0.6:
                    region.transitions.append(Transition(hid, rng.choice(named_in).id))

    for _ in range(rng.randint(0, n + n // 2)):
        src = rng.choice(named)
        src_region = region_of[src.id]
        roll = rng.random()
        if roll < 0.08:
            if src_region.final_id is None:
                fid = f"F{counters['f']}"
                counters["f"] += 1
                src_region.states.append(_StateDraft(fid, fid, "final"))
                src_region.final_id = fid
                region_of[fid] = src_region
            tgt_id = src_region.final_id
        elif roll < 0.16:
            histories = [r.history_id for r in regions if r.history_id]
            tgt_id = rng.choice(histories) if histories else rng.choice(named).id
        else:
            tgt_id = rng.choice(named).id
        raw = rng.choice(TRIGGER_POOL)
        src_region.transitions.append(
            Transition(src.id, tgt_id,
                       TriggerLabel.from_raw(raw) if raw else None,
                       rng.choice(GUARD_POOL), rng.choice(EFFECT_POOL))
        )

    def freeze_region(draft: _RegionDraft) -> Region:
        return Region(
            states=tuple(
                State(id=s.id, name=s.name, kind=s.kind,
                      regions=tuple(freeze_region(r) for r in s.regions))
                for s in draft.states
            ),
            transitions=tuple(draft.transitions),
        )

    # patch until every named state is reachable
    while True:
        sm = StateMachine(name="gen", root=freeze_region(root))
        reached = reachable_states(sm)
        missing = [s for s in named if s.id not in reached]
        if not missing:
            return sm
        target = missing[0]
        source_id = rng.choice(sorted(reached))
        region_of[source_id].transitions.append(Transition(source_id, target.id))


class ScriptedClient:
    """Backend double returning canned responses keyed by sample index."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def complete(self, req, sample=0):
        from archview.llm import ChatResponse

        self.calls.append((req, sample))
        return ChatResponse(content=self.responses[sample], usage=None, backend="scripted")


# ---------------------------------------------------------------------------
# scoring test helpers


def delete_transition(sm: StateMachine, flat_index: int) -> StateMachine:
    """Remove the transition at the given all_transitions() index."""
    offsets: dict[int, int] = {}
    acc = 0
    for _, region in walk_regions(sm):
        offsets[id(region)] = acc
        acc += len(region.transitions)

    def rebuild(region: Region) -> Region:
        base = offsets[id(region)]
        return Region(
            states=tuple(
                State(s.id, s.name, s.kind, tuple(rebuild(r) for r in s.regions))
                for s in region.states
            ),
            transitions=tuple(
                t for k, t in enumerate(region.transitions) if base + k != flat_index
            ),
        )

    return StateMachine(sm.name, rebuild(sm.root))


NAME_POOL = [
    "Idle", "idle state", "Brewing", "brewing coffee", "Heating", "heat",
    "Full", "full tank", "Empty", "drain", "Working", "work done",
]


def random_named_machine(rng: random.Random, max_states: int = 6, prefix: str = "s") -> StateMachine:
    """Flat machine with display names drawn from an overlapping pool, to
    stress fuzzy matching and assignment ties."""
    n = rng.randint(1, max_states)
    states = [pseudo(f"{prefix}_init", "initial")] + [
        State(f"{prefix}{i}", rng.choice(NAME_POOL), "simple") for i in range(n)
    ]
    transitions = [trans(f"{prefix}_init", f"{prefix}0")]
    for _ in range(rng.randint(0, n * 2)):
        transitions.append(
            trans(f"{prefix}{rng.randrange(n)}", f"{prefix}{rng.randrange(n)}",
                  rng.choice(TRIGGER_POOL))
        )
    return machine(states, transitions)


def brute_force_best_weight(gt: StateMachine, gen: StateMachine, cfg) -> Fraction:
    """Exhaustive search over all injective named-state pairings; returns the
    best achievable total similarity with the same candidate threshold the
    matcher uses."""
    from archview.model import named_states
    from archview.scoring import name_similarity

    threshold = cfg.min_similarity_fraction()
    gt_named = named_states(gt)
    gen_named = named_states(gen)
    candidates: list[list[tuple[int, Fraction]]] = []
    for g in gt_named:
        row = []
        for j, h in enumerate(gen_named):
            sim = name_similarity(g.name, h.name)
            if sim >= threshold:
                row.append((j, sim))
        candidates.append(row)

    best = Fraction(0)

    def search(i: int, used: frozenset, total: Fraction):
        nonlocal best
        if total > best:
            best = total
        if i == len(candidates):
            return
        search(i + 1, used, total)
        for j, sim in candidates[i]:
            if j not in used:
                search(i + 1, used | {j}, total + sim)

    search(0, frozenset(), Fraction(0))
    return best

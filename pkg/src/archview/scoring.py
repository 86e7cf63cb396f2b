"""Match a generated state machine against ground truth and score it.

Named states are paired machine-wide by a maximum-weight injective assignment
over name similarity (generated diagrams flatten or nest hierarchy freely, so
location is not trusted). Pseudostates pair only with same-kind pseudostates
in corresponding regions: root with root, and the regions of paired composite
states zipped in declaration order. Transitions pair when both endpoints pair
and direction matches; triggers are judged separately.

The assignment is solved exactly over integers (similarities are rationals
scaled to a common denominator) with a lexicographic tie-break on
(ground-truth name, generated name) encoded as secondary weights, so results
are identical across runs and platforms.

Each question yields matched/total/hallucinated; a card renders in the
``X/Y (Z)`` notation and report tables list one row per (component, example
typology) with columns Q1..Q9.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from difflib import SequenceMatcher
from fractions import Fraction
from math import lcm

from .model import (
    NoEntryPointError,
    Region,
    State,
    StateMachine,
    Transition,
    all_transitions,
    named_states,
    reachable_states,
    state_index,
    walk_regions,
)

QUESTION_LABELS = ("q1", "q2", "q3", "q4", "q5", "q6", "q7", "q8", "q9")
TYPOLOGY_ORDER = {"general": 0, "expert": 1, "domain": 2}


@dataclass(frozen=True)
class ScoreConfig:
    min_similarity: float = 0.60
    name_accuracy: float = 0.90
    lenient_timeout: bool = False

    def min_similarity_fraction(self) -> Fraction:
        return Fraction(str(self.min_similarity))

    def name_accuracy_fraction(self) -> Fraction:
        return Fraction(str(self.name_accuracy))


@dataclass(frozen=True)
class ScoreTriple:
    matched: int
    total: int
    hallucinated: int = 0

    def __post_init__(self):
        if self.matched > self.total:
            raise ValueError(
                f"matched ({self.matched}) exceeds ground-truth total ({self.total})"
            )
        if self.matched < 0 or self.hallucinated < 0:
            raise ValueError("score counts must be non-negative")

    def is_perfect(self) -> bool:
        return self.matched == self.total and self.hallucinated == 0


def format_triple(t: ScoreTriple) -> str:
    return f"{t.matched}/{t.total} ({t.hallucinated})"


@dataclass(frozen=True)
class ScoreCard:
    q1: ScoreTriple
    q2: ScoreTriple
    q3: ScoreTriple
    q4: ScoreTriple
    q5: ScoreTriple
    q6: ScoreTriple
    q7: ScoreTriple
    q8: ScoreTriple
    q9: ScoreTriple
    q9_source: str = "auto"
    notes: str = ""

    def triples(self) -> tuple[ScoreTriple, ...]:
        return (self.q1, self.q2, self.q3, self.q4, self.q5,
                self.q6, self.q7, self.q8, self.q9)

    def is_perfect(self) -> bool:
        return all(t.is_perfect() for t in self.triples())

    def to_dict(self) -> dict:
        doc = {
            label: {"matched": t.matched, "total": t.total, "hallucinated": t.hallucinated}
            for label, t in zip(QUESTION_LABELS, self.triples())
        }
        doc["q9_source"] = self.q9_source
        doc["notes"] = self.notes
        return doc

    @classmethod
    def from_dict(cls, data: dict) -> "ScoreCard":
        triples = {
            label: ScoreTriple(data[label]["matched"], data[label]["total"],
                               data[label]["hallucinated"])
            for label in QUESTION_LABELS
        }
        return cls(**triples, q9_source=data.get("q9_source", "auto"),
                   notes=data.get("notes", ""))


@dataclass(frozen=True)
class StatePair:
    gt_id: str
    gen_id: str
    similarity: float


@dataclass(frozen=True)
class Matching:
    state_pairs: tuple[StatePair, ...]
    transition_pairs: tuple[tuple[int, int], ...]
    unmatched_gt_states: tuple[str, ...]
    unmatched_gen_states: tuple[str, ...]
    unmatched_gt_transitions: tuple[int, ...]
    unmatched_gen_transitions: tuple[int, ...]
    named_weight: Fraction = Fraction(0)

    def pair_map(self) -> dict[str, str]:
        return {p.gt_id: p.gen_id for p in self.state_pairs}

    def unmatched_count(self) -> int:
        return (len(self.unmatched_gt_states) + len(self.unmatched_gen_states)
                + len(self.unmatched_gt_transitions) + len(self.unmatched_gen_transitions))


# ---------------------------------------------------------------------------
# labels and similarity


def normalize_label(text: str) -> str:
    """Lowercase with camel/snake/kebab boundaries as single spaces."""
    s = re.sub(r"(?<=[a-z0-9])(?=[A-Z])", " ", text)
    s = re.sub(r"(?<=[A-Z])(?=[A-Z][a-z])", " ", s)
    s = re.sub(r"[^A-Za-z0-9]+", " ", s)
    return s.lower().strip()


def name_similarity(a: str, b: str) -> Fraction:
    """Exact rational similarity between two display names: 1 for equal
    normalized forms, else the token-level matching ratio."""
    norm_a, norm_b = normalize_label(a), normalize_label(b)
    if norm_a == norm_b:
        return Fraction(1)
    tokens_a, tokens_b = norm_a.split(), norm_b.split()
    if not tokens_a or not tokens_b:
        return Fraction(0)
    matcher = SequenceMatcher(None, tokens_a, tokens_b, autojunk=False)
    matches = sum(block.size for block in matcher.get_matching_blocks())
    return Fraction(2 * matches, len(tokens_a) + len(tokens_b))


# ---------------------------------------------------------------------------
# exact maximum-weight assignment


def _min_cost_assignment(cost: list[list[int]]) -> list[int]:
    """Hungarian algorithm with potentials; rows n <= cols m; exact on ints.
    Returns col index assigned to each row."""
    n, m = len(cost), len(cost[0])
    INF = float("inf")
    u = [0] * (n + 1)
    v = [0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1][j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    result = [-1] * n
    for j in range(1, m + 1):
        if p[j]:
            result[p[j] - 1] = j - 1
    return result


def max_weight_assignment(weights: dict[tuple[int, int], int], n_rows: int,
                          n_cols: int) -> list[tuple[int, int]]:
    """Maximum-weight injective assignment; absent pairs count as weight 0 and
    are dropped from the result."""
    if n_rows == 0 or n_cols == 0 or not weights:
        return []
    transposed = n_rows > n_cols
    if transposed:
        weights = {(j, i): w for (i, j), w in weights.items()}
        n_rows, n_cols = n_cols, n_rows
    cost = [[0] * n_cols for _ in range(n_rows)]
    for (i, j), w in weights.items():
        cost[i][j] = -w
    assignment = _min_cost_assignment(cost)
    pairs = []
    for i, j in enumerate(assignment):
        if j >= 0 and weights.get((i, j), 0) > 0:
            pairs.append((j, i) if transposed else (i, j))
    return sorted(pairs)


def _match_named_states(gt_states: list[State], gen_states: list[State],
                        cfg: ScoreConfig):
    """Pair named states; returns (pairs [(i, j, Fraction sim)], total weight)."""
    threshold = cfg.min_similarity_fraction()
    candidates: list[tuple[tuple, int, int, Fraction]] = []
    for i, gt in enumerate(gt_states):
        for j, gen in enumerate(gen_states):
            sim = name_similarity(gt.name, gen.name)
            if sim < threshold:
                continue
            key = (normalize_label(gt.name), normalize_label(gen.name), gt.id, gen.id)
            candidates.append((key, i, j, sim))
    if not candidates:
        return [], Fraction(0)
    candidates.sort(key=lambda c: c[0])
    denom = lcm(*{c[3].denominator for c in candidates})
    # secondary weights encode the lexicographic preference among ties
    count = len(candidates)
    scale = 1 << count
    weights: dict[tuple[int, int], int] = {}
    sims: dict[tuple[int, int], Fraction] = {}
    for rank, (_, i, j, sim) in enumerate(candidates):
        weights[(i, j)] = (sim.numerator * (denom // sim.denominator)) * scale \
            + (1 << (count - 1 - rank))
        sims[(i, j)] = sim
    assignment = max_weight_assignment(weights, len(gt_states), len(gen_states))
    pairs = [(i, j, sims[(i, j)]) for i, j in assignment]
    total = sum((sims[(i, j)] for i, j in assignment), Fraction(0))
    return pairs, total


# ---------------------------------------------------------------------------
# machine matching


def match_machines(gt: StateMachine, gen: StateMachine,
                   cfg: ScoreConfig | None = None) -> Matching:
    cfg = cfg or ScoreConfig()
    gt_named = named_states(gt)
    gen_named = named_states(gen)
    named_pairs, named_weight = _match_named_states(gt_named, gen_named, cfg)

    state_pairs: list[StatePair] = [
        StatePair(gt_named[i].id, gen_named[j].id, float(sim)) for i, j, sim in named_pairs
    ]
    pair_map = {p.gt_id: p.gen_id for p in state_pairs}
    gen_index = state_index(gen)

    # pseudostates: same kind, corresponding regions only
    def pair_regions(gt_region: Region, gen_region: Region):
        for kind in ("initial", "final", "shallow-history", "deep-history"):
            gt_kind = [s for s in gt_region.states if s.kind == kind]
            gen_kind = [s for s in gen_region.states if s.kind == kind]
            for a, b in zip(gt_kind, gen_kind):
                state_pairs.append(StatePair(a.id, b.id, 1.0))
        for state in gt_region.states:
            if state.kind != "composite":
                continue
            partner_id = pair_map.get(state.id)
            partner = gen_index.get(partner_id) if partner_id else None
            if partner is None or partner.kind != "composite":
                continue
            for sub_gt, sub_gen in zip(state.regions, partner.regions):
                pair_regions(sub_gt, sub_gen)

    pair_regions(gt.root, gen.root)
    full_map = {p.gt_id: p.gen_id for p in state_pairs}

    gt_trans = all_transitions(gt)
    gen_trans = all_transitions(gen)
    gen_by_endpoints: dict[tuple[str, str], list[int]] = {}
    for j, (_, t) in enumerate(gen_trans):
        gen_by_endpoints.setdefault((t.source, t.target), []).append(j)

    def trigger_key(t: Transition) -> str:
        return normalize_label(t.trigger.raw) if t.trigger else ""

    transition_pairs: list[tuple[int, int]] = []
    taken: set[int] = set()
    buckets: dict[tuple[str, str], list[int]] = {}
    for i, (_, t) in enumerate(gt_trans):
        src = full_map.get(t.source)
        tgt = full_map.get(t.target)
        if src is None or tgt is None:
            continue
        buckets.setdefault((src, tgt), []).append(i)
    for endpoints, gt_indexes in buckets.items():
        gen_indexes = gen_by_endpoints.get(endpoints, [])
        remaining_gt = []
        # first pass: same trigger text wins
        for i in gt_indexes:
            want = trigger_key(gt_trans[i][1])
            chosen = next(
                (j for j in gen_indexes
                 if j not in taken and trigger_key(gen_trans[j][1]) == want),
                None,
            )
            if chosen is None:
                remaining_gt.append(i)
            else:
                taken.add(chosen)
                transition_pairs.append((i, chosen))
        for i in remaining_gt:
            chosen = next((j for j in gen_indexes if j not in taken), None)
            if chosen is not None:
                taken.add(chosen)
                transition_pairs.append((i, chosen))
    transition_pairs.sort()

    paired_gt_states = {p.gt_id for p in state_pairs}
    paired_gen_states = {p.gen_id for p in state_pairs}
    paired_gt_trans = {i for i, _ in transition_pairs}

    return Matching(
        state_pairs=tuple(state_pairs),
        transition_pairs=tuple(transition_pairs),
        unmatched_gt_states=tuple(
            s.id for _, r in walk_regions(gt) for s in r.states if s.id not in paired_gt_states
        ),
        unmatched_gen_states=tuple(
            s.id for _, r in walk_regions(gen) for s in r.states if s.id not in paired_gen_states
        ),
        unmatched_gt_transitions=tuple(
            i for i in range(len(gt_trans)) if i not in paired_gt_trans
        ),
        unmatched_gen_transitions=tuple(
            j for j in range(len(gen_trans)) if j not in taken
        ),
        named_weight=named_weight,
    )


# ---------------------------------------------------------------------------
# scoring


def _triggers_equivalent(gt_t: Transition, gen_t: Transition, lenient: bool) -> bool:
    if gt_t.trigger is None or gen_t.trigger is None:
        return False
    a, b = gt_t.trigger, gen_t.trigger
    if normalize_label(a.raw) == normalize_label(b.raw):
        return True
    if a.family == "timeout" and b.family == "timeout":
        if lenient:
            return True
        return a.timeout_ms is not None and a.timeout_ms == b.timeout_ms
    return False


def _orthogonal_composites(sm: StateMachine) -> list[State]:
    return [s for s in named_states(sm) if s.kind == "composite" and len(s.regions) >= 2]


def _all_composite_regions_have_initial(sm: StateMachine) -> bool:
    for state in named_states(sm):
        if state.kind != "composite":
            continue
        for region in state.regions:
            if not any(s.kind == "initial" for s in region.states):
                return False
    return True


def score(gt: StateMachine, gen: StateMachine, m: Matching,
          cfg: ScoreConfig | None = None, q9_manual: int | None = None) -> ScoreCard:
    cfg = cfg or ScoreConfig()
    gt_index = state_index(gt)
    gen_index = state_index(gen)
    gt_named_ids = {s.id for s in named_states(gt)}
    gen_named_ids = {s.id for s in named_states(gen)}
    pair_map = m.pair_map()
    gt_trans = all_transitions(gt)
    gen_trans = all_transitions(gen)

    # Q1: start and end states
    gt_entry_exit = [sid for sid, s in gt_index.items() if s.kind in ("initial", "final")]
    paired_gt = set(pair_map)
    paired_gen = set(pair_map.values())
    q1_total = len(gt_entry_exit)
    q1_matched = sum(1 for sid in gt_entry_exit if sid in paired_gt)
    q1_hall = sum(
        1 for sid, s in gen_index.items()
        if s.kind in ("initial", "final") and sid not in paired_gen
    )
    q1 = ScoreTriple(q1_matched, q1_total, q1_hall)

    # Q2: ground-truth states present
    q2_matched = sum(1 for sid in gt_named_ids if sid in paired_gt)
    q2_hall = sum(1 for sid in gen_named_ids if sid not in paired_gen)
    q2 = ScoreTriple(q2_matched, len(gt_named_ids), q2_hall)

    # Q3: naming accuracy among paired states
    accuracy = cfg.name_accuracy_fraction()
    named_pairs = [p for p in m.state_pairs if p.gt_id in gt_named_ids]
    accurate = sum(
        1 for p in named_pairs
        if name_similarity(gt_index[p.gt_id].name, gen_index[p.gen_id].name) >= accuracy
    )
    q3 = ScoreTriple(accurate, len(gt_named_ids), len(named_pairs) - accurate)

    # Q4: transitions
    q4 = ScoreTriple(len(m.transition_pairs), len(gt_trans), len(m.unmatched_gen_transitions))

    # Q5: triggers on paired transitions
    trigger_pairs = [
        (gt_trans[i][1], gen_trans[j][1])
        for i, j in m.transition_pairs
        if gt_trans[i][1].trigger is not None
    ]
    q5_matched = sum(
        1 for gt_t, gen_t in trigger_pairs
        if _triggers_equivalent(gt_t, gen_t, cfg.lenient_timeout)
    )
    q5_hall = sum(
        1 for i, j in m.transition_pairs
        if gt_trans[i][1].trigger is None and gen_trans[j][1].trigger is not None
    )
    q5 = ScoreTriple(q5_matched, len(trigger_pairs), q5_hall)

    # Q6: no dead generated states
    try:
        reachable = reachable_states(gen) & gen_named_ids
    except NoEntryPointError:
        reachable = set()
    q6 = ScoreTriple(len(reachable), len(gen_named_ids), 0)

    # Q7: self-transitions
    gt_self = {i for i, (_, t) in enumerate(gt_trans) if t.is_self}
    q7_matched = sum(1 for i, _ in m.transition_pairs if i in gt_self)
    gen_self_unmatched = sum(
        1 for j in m.unmatched_gen_transitions if gen_trans[j][1].is_self
    )
    q7 = ScoreTriple(q7_matched, len(gt_self), gen_self_unmatched)

    # Q8: parallel (orthogonal) composites
    gt_orth = _orthogonal_composites(gt)
    gen_orth_ids = {s.id for s in _orthogonal_composites(gen)}
    matched_orth_partners = set()
    q8_matched = 0
    for state in gt_orth:
        partner = pair_map.get(state.id)
        if partner in gen_orth_ids:
            q8_matched += 1
            matched_orth_partners.add(partner)
    q8 = ScoreTriple(q8_matched, len(gt_orth), len(gen_orth_ids - matched_orth_partners))

    # Q9: overall behavioral coherence
    if q9_manual is not None:
        q9 = ScoreTriple(q9_manual, 1, 0)
        q9_source = "manual"
    else:
        coherent = (
            _all_composite_regions_have_initial(gen)
            and q6.matched == q6.total
            and q4.hallucinated == 0
        )
        q9 = ScoreTriple(1 if coherent else 0, 1, 0)
        q9_source = "auto"

    notes = (
        f"min_similarity={cfg.min_similarity}, name_accuracy={cfg.name_accuracy}, "
        f"timeout={'lenient' if cfg.lenient_timeout else 'strict'}"
    )
    return ScoreCard(q1, q2, q3, q4, q5, q6, q7, q8, q9, q9_source=q9_source, notes=notes)


def score_machines(gt: StateMachine, gen: StateMachine,
                   cfg: ScoreConfig | None = None,
                   q9_manual: int | None = None) -> ScoreCard:
    cfg = cfg or ScoreConfig()
    return score(gt, gen, match_machines(gt, gen, cfg), cfg, q9_manual=q9_manual)


def structural_distance(a: StateMachine, b: StateMachine,
                        cfg: ScoreConfig | None = None) -> int:
    """Symmetrized count of unmatched states and transitions between two
    machines; zero for structurally equivalent pairs."""
    cfg = cfg or ScoreConfig()
    return (match_machines(a, b, cfg).unmatched_count()
            + match_machines(b, a, cfg).unmatched_count())


# ---------------------------------------------------------------------------
# reports


def render_report(rows, fmt: str = "text") -> str:
    """rows: iterable of (component, typology, ScoreCard)."""
    header = ["Component", "Example"] + [q.upper() for q in QUESTION_LABELS]
    ordered = sorted(rows, key=lambda r: (r[0], TYPOLOGY_ORDER.get(r[1], 99), r[1]))
    table = [
        [component, typology] + [format_triple(t) for t in card.triples()]
        for component, typology, card in ordered
    ]
    if fmt == "csv":
        return "\n".join(",".join(row) for row in [header] + table) + "\n"
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |",
                 "| " + " | ".join("---" for _ in header) + " |"]
        lines += ["| " + " | ".join(row) + " |" for row in table]
        return "\n".join(lines) + "\n"
    if fmt == "text":
        widths = [max(len(row[i]) for row in [header] + table) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
                 for row in [header] + table]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")

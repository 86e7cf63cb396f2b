import random
from fractions import Fraction

import pytest

from archview.model import Region, State
from archview.scoring import (
    ScoreConfig,
    ScoreTriple,
    format_triple,
    match_machines,
    name_similarity,
    normalize_label,
    render_report,
    score_machines,
)
from support import (
    brute_force_best_weight,
    composite,
    delete_transition,
    machine,
    pseudo,
    random_machine,
    random_named_machine,
    simple,
    trans,
)


class TestNormalizeLabel:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("MakingCoffee", "making coffee"),
            ("", ""),
            ("tm(3000)", "tm 3000"),
            ("brewing_coffee", "brewing coffee"),
            ("power-on", "power on"),
            ("HTTPServer", "http server"),
        ],
    )
    def test_rules(self, raw, expected):
        assert normalize_label(raw) == expected


class TestNameSimilarity:
    def test_equal_normalized_names(self):
        assert name_similarity("Idle", "idle") == Fraction(1)

    def test_token_ratio(self):
        # tokens {brewing} vs {brewing, coffee}: 2 * 1 / (1 + 2)
        assert name_similarity("Brewing", "brewing_coffee") == Fraction(2, 3)

    def test_disjoint(self):
        assert name_similarity("Empty", "Heating") == Fraction(0)


def two_state_pair():
    gt = machine(
        [pseudo("gi", "initial"), State("Idle", "Idle", "simple"), State("Brewing", "Brewing", "simple")],
        [trans("gi", "Idle"), trans("Idle", "Brewing", "startBrew")],
    )
    gen = machine(
        [pseudo("hi", "initial"), State("idle", "idle", "simple"),
         State("brewing_coffee", "brewing_coffee", "simple")],
        [trans("hi", "idle"), trans("idle", "brewing_coffee", "startBrew")],
    )
    return gt, gen


class TestMatchMachines:
    def test_identical_machines_fully_paired(self):
        sm = random_machine(random.Random(3))
        m = match_machines(sm, sm)
        assert m.unmatched_gt_states == ()
        assert m.unmatched_gen_states == ()
        assert m.unmatched_gt_transitions == ()
        assert m.unmatched_gen_transitions == ()
        # identity pairing guaranteed by the id tie-break
        assert all(p.gt_id == p.gen_id for p in m.state_pairs)

    def test_exact_and_fuzzy_pairs(self):
        gt, gen = two_state_pair()
        m = match_machines(gt, gen)
        by_gt = {p.gt_id: p for p in m.state_pairs}
        assert by_gt["Idle"].gen_id == "idle"
        assert by_gt["Idle"].similarity == 1.0
        assert by_gt["Brewing"].gen_id == "brewing_coffee"
        assert by_gt["Brewing"].similarity == pytest.approx(2 / 3)

    def test_below_threshold_pair_discarded(self):
        gt = machine([pseudo("gi", "initial"), State("A", "Grinding", "simple")], [trans("gi", "A")])
        gen = machine([pseudo("hi", "initial"), State("B", "Venting", "simple")], [trans("hi", "B")])
        m = match_machines(gt, gen)
        assert "A" in m.unmatched_gt_states
        assert "B" in m.unmatched_gen_states

    def test_hallucinated_transition_in_unmatched_gen(self):
        gt = machine(
            [pseudo("gi", "initial"), simple("empty"), simple("filling"), simple("full")],
            [trans("gi", "empty"), trans("empty", "filling", "fill"), trans("filling", "full")],
        )
        gen = machine(
            [pseudo("hi", "initial"), simple("empty"), simple("filling"), simple("full"),
             simple("draining")],
            [trans("hi", "empty"), trans("empty", "filling", "fill"), trans("filling", "full"),
             trans("empty", "draining", "drain")],
        )
        m = match_machines(gt, gen)
        from archview.model import all_transitions
        hallucinated = [all_transitions(gen)[j][1] for j in m.unmatched_gen_transitions]
        assert [(t.source, t.target) for t in hallucinated] == [("empty", "draining")]

    def test_pairings_injective_both_sides(self):
        rng = random.Random(11)
        for _ in range(40):
            gt = random_named_machine(rng, prefix="a")
            gen = random_named_machine(rng, prefix="b")
            m = match_machines(gt, gen)
            gt_ids = [p.gt_id for p in m.state_pairs]
            gen_ids = [p.gen_id for p in m.state_pairs]
            assert len(gt_ids) == len(set(gt_ids))
            assert len(gen_ids) == len(set(gen_ids))

    def test_matcher_equals_brute_force_spot_check(self):
        rng = random.Random(17)
        cfg = ScoreConfig()
        for _ in range(40):
            gt = random_named_machine(rng, prefix="a")
            gen = random_named_machine(rng, prefix="b")
            m = match_machines(gt, gen, cfg)
            assert m.named_weight == brute_force_best_weight(gt, gen, cfg)

    def test_deterministic(self):
        gt, gen = two_state_pair()
        assert match_machines(gt, gen) == match_machines(gt, gen)

    def test_equal_weight_ties_break_lexicographically(self):
        # two identically-named states on each side: four candidate pairs of
        # weight 1; the (gt id, gen id) order decides
        gt = machine(
            [pseudo("gi", "initial"), State("X", "alpha", "simple"), State("Y", "alpha", "simple")],
            [trans("gi", "X")],
        )
        gen = machine(
            [pseudo("hi", "initial"), State("P", "alpha", "simple"), State("Q", "alpha", "simple")],
            [trans("hi", "P")],
        )
        m = match_machines(gt, gen)
        named = {p.gt_id: p.gen_id for p in m.state_pairs if p.gt_id in ("X", "Y")}
        assert named == {"X": "P", "Y": "Q"}

    def test_pseudostates_pair_only_in_corresponding_regions(self):
        inner = Region(states=(pseudo("gi2", "initial"), simple("B")),
                       transitions=(trans("gi2", "B"),))
        gt = machine(
            [pseudo("gi", "initial"), composite("On", [inner])],
            [trans("gi", "On")],
        )
        gen = machine(
            [pseudo("hi", "initial"), State("On2", "On", "simple"), State("B2", "B", "simple")],
            [trans("hi", "On2"), trans("On2", "B2")],
        )
        m = match_machines(gt, gen)
        pairs = m.pair_map()
        assert pairs["gi"] == "hi"          # root initials correspond
        assert "gi2" not in pairs           # nested initial has no counterpart region
        assert pairs["On"] == "On2"
        assert pairs["B"] == "B2"           # named states pair machine-wide

    def test_parallel_transitions_prefer_matching_triggers(self):
        gt = machine(
            [pseudo("gi", "initial"), simple("A"), simple("B")],
            [trans("gi", "A"), trans("A", "B", "evX"), trans("A", "B", "evY")],
        )
        gen = machine(
            [pseudo("hi", "initial"), simple("A"), simple("B")],
            [trans("hi", "A"), trans("A", "B", "evY"), trans("A", "B", "evX")],
        )
        card = score_machines(gt, gen)
        assert card.q5 == ScoreTriple(2, 2, 0)


class TestScoreTriple:
    def test_matched_cannot_exceed_total(self):
        with pytest.raises(ValueError):
            ScoreTriple(7, 5, 0)

    @pytest.mark.parametrize(
        "triple,text",
        [
            (ScoreTriple(5, 6, 2), "5/6 (2)"),
            (ScoreTriple(0, 0, 0), "0/0 (0)"),
            (ScoreTriple(14, 16, 3), "14/16 (3)"),
        ],
    )
    def test_format(self, triple, text):
        assert format_triple(triple) == text


def worked_example_pair():
    """GT has 6 transitions; the generated machine has 7 of which 5 pair."""
    gt = machine(
        [pseudo("gi", "initial"), simple("A"), simple("B"), simple("C")],
        [
            trans("gi", "A"),
            trans("A", "B", "evGo"),
            trans("B", "C", "evNext"),
            trans("C", "A", "evBack"),
            trans("A", "A", "evPing"),
            trans("B", "A", "evAbort"),
        ],
    )
    gen = machine(
        [pseudo("hi", "initial"), simple("A"), simple("B"), simple("C")],
        [
            trans("hi", "A"),
            trans("A", "B", "evGo"),
            trans("B", "C", "evNext"),
            trans("C", "A", "evBack"),
            trans("A", "A", "evPing"),
            trans("C", "B", "evOdd"),
            trans("B", "B", "evExtra"),
        ],
    )
    return gt, gen


class TestScore:
    def test_worked_example_q4(self):
        gt, gen = worked_example_pair()
        card = score_machines(gt, gen)
        assert format_triple(card.q4) == "5/6 (2)"

    def test_identical_machines_perfect(self):
        rng = random.Random(23)
        for _ in range(20):
            sm = random_machine(rng)
            card = score_machines(sm, sm)
            for label, triple in zip(("q1", "q2", "q3", "q4", "q5", "q6", "q7", "q8"),
                                     card.triples()):
                assert triple.is_perfect(), f"{label} not perfect: {format_triple(triple)}"

    def test_composite_without_entry_fails_q9_despite_perfect_q2(self):
        inner = Region(states=(simple("Brewing"), simple("Heating")),
                       transitions=(trans("Brewing", "Heating"),))
        sm = machine(
            [pseudo("i", "initial"), simple("Off"), composite("On", [inner])],
            [trans("i", "Off"), trans("Off", "On", "powerOn")],
        )
        card = score_machines(sm, sm)
        assert card.q2.is_perfect()
        assert (card.q9.matched, card.q9.total) == (0, 1)
        assert card.q9_source == "auto"

    def test_q9_manual_override(self):
        gt, gen = worked_example_pair()
        card = score_machines(gt, gen, q9_manual=1)
        assert (card.q9.matched, card.q9_source) == (1, "manual")

    def test_q5_timeout_strict_vs_lenient(self):
        gt = machine(
            [pseudo("gi", "initial"), simple("A"), simple("B")],
            [trans("gi", "A"), trans("A", "B", "tm(3000)")],
        )
        gen = machine(
            [pseudo("hi", "initial"), simple("A"), simple("B")],
            [trans("hi", "A"), trans("A", "B", "timeout")],
        )
        strict = score_machines(gt, gen, ScoreConfig())
        assert (strict.q5.matched, strict.q5.total) == (0, 1)
        lenient = score_machines(gt, gen, ScoreConfig(lenient_timeout=True))
        assert (lenient.q5.matched, lenient.q5.total) == (1, 1)

    def test_q5_equal_durations_match_despite_spelling(self):
        gt = machine([pseudo("gi", "initial"), simple("A"), simple("B")],
                     [trans("gi", "A"), trans("A", "B", "tm(500)")])
        gen = machine([pseudo("hi", "initial"), simple("A"), simple("B")],
                      [trans("hi", "A"), trans("A", "B", "after(500)")])
        card = score_machines(gt, gen)
        assert card.q5 == ScoreTriple(1, 1, 0)

    def test_q5_hallucinated_trigger(self):
        gt = machine([pseudo("gi", "initial"), simple("A"), simple("B")],
                     [trans("gi", "A"), trans("A", "B")])
        gen = machine([pseudo("hi", "initial"), simple("A"), simple("B")],
                      [trans("hi", "A"), trans("A", "B", "evSurprise")])
        card = score_machines(gt, gen)
        assert (card.q5.total, card.q5.hallucinated) == (0, 1)

    def test_q6_counts_reachable_generated_states(self):
        gt = machine([pseudo("gi", "initial"), simple("A")], [trans("gi", "A")])
        gen = machine(
            [pseudo("hi", "initial"), simple("A"), simple("Orphan")],
            [trans("hi", "A")],
        )
        card = score_machines(gt, gen)
        assert (card.q6.matched, card.q6.total, card.q6.hallucinated) == (1, 2, 0)

    def test_q6_zero_when_generated_machine_has_no_entry(self):
        gt = machine([pseudo("gi", "initial"), simple("A")], [trans("gi", "A")])
        gen = machine([simple("A")], [])
        card = score_machines(gt, gen)
        assert (card.q6.matched, card.q6.total) == (0, 1)
        assert card.q9.matched == 0

    def test_q7_self_transitions(self):
        gt = machine(
            [pseudo("gi", "initial"), simple("full"), simple("empty")],
            [trans("gi", "full"), trans("full", "full", "evTick"), trans("full", "empty")],
        )
        gen = machine(
            [pseudo("hi", "initial"), simple("full"), simple("empty")],
            [trans("hi", "full"), trans("full", "empty"), trans("empty", "empty", "evOther")],
        )
        card = score_machines(gt, gen)
        assert (card.q7.matched, card.q7.total, card.q7.hallucinated) == (0, 1, 1)

    def test_q8_orthogonal_composites(self):
        def parallel(prefix):
            r1 = Region(states=(pseudo(f"{prefix}i1", "initial"), simple(f"{prefix}A")),
                        transitions=(trans(f"{prefix}i1", f"{prefix}A"),))
            r2 = Region(states=(pseudo(f"{prefix}i2", "initial"), simple(f"{prefix}B")),
                        transitions=(trans(f"{prefix}i2", f"{prefix}B"),))
            return [r1, r2]

        gt = machine(
            [pseudo("gi", "initial"), State("Busy", "Busy", "composite", tuple(parallel("g")))],
            [trans("gi", "Busy")],
        )
        gen = machine(
            [pseudo("hi", "initial"), State("Busy2", "Busy", "composite", tuple(parallel("h")))],
            [trans("hi", "Busy2")],
        )
        card = score_machines(gt, gen)
        assert card.q8 == ScoreTriple(1, 1, 0)

    def test_q8_not_applicable_is_zero_over_zero(self):
        gt, gen = worked_example_pair()
        card = score_machines(gt, gen)
        assert format_triple(card.q8) == "0/0 (0)"

    def test_deleting_generated_transition_monotonic_q4(self):
        rng = random.Random(31)
        checked = 0
        while checked < 25:
            gt = random_machine(rng)
            gen = random_machine(rng)
            from archview.model import all_transitions
            n_gen = len(all_transitions(gen))
            if n_gen == 0:
                continue
            card = score_machines(gt, gen)
            smaller = delete_transition(gen, rng.randrange(n_gen))
            card2 = score_machines(gt, smaller)
            assert card2.q4.matched <= card.q4.matched
            assert card2.q4.hallucinated >= card.q4.hallucinated - 1
            checked += 1

    def test_score_deterministic(self):
        gt, gen = worked_example_pair()
        assert score_machines(gt, gen) == score_machines(gt, gen)

    def test_notes_record_thresholds(self):
        gt, gen = worked_example_pair()
        card = score_machines(gt, gen)
        assert "min_similarity=0.6" in card.notes
        assert "strict" in card.notes

    def test_card_round_trip(self):
        from archview.scoring import ScoreCard
        gt, gen = worked_example_pair()
        card = score_machines(gt, gen)
        assert ScoreCard.from_dict(card.to_dict()) == card


class TestRenderReport:
    def _card(self):
        gt, gen = worked_example_pair()
        return score_machines(gt, gen)

    def test_empty_rows_header_only(self):
        out = render_report([], fmt="text")
        assert out.splitlines() == ["Component  Example  Q1  Q2  Q3  Q4  Q5  Q6  Q7  Q8  Q9"]

    def test_single_row_layout(self):
        out = render_report([("Boiler", "general", self._card())], fmt="text")
        lines = out.splitlines()
        assert len(lines) == 2
        assert lines[1].startswith("Boiler")
        import re
        assert len(re.findall(r"\d+/\d+ \(\d+\)", lines[1])) == 9

    def test_csv_three_typologies(self):
        card = self._card()
        rows = [("CoffeeMachine", t, card) for t in ("domain", "general", "expert")]
        out = render_report(rows, fmt="csv")
        lines = out.splitlines()
        assert len(lines) == 4
        assert lines[0].startswith("Component,Example,Q1,")
        # deterministic typology order
        assert [l.split(",")[1] for l in lines[1:]] == ["general", "expert", "domain"]

    def test_markdown_structure(self):
        out = render_report([("Boiler", "general", self._card())], fmt="markdown")
        lines = out.splitlines()
        assert lines[0] == "| Component | Example | Q1 | Q2 | Q3 | Q4 | Q5 | Q6 | Q7 | Q8 | Q9 |"
        assert set(lines[1].replace("|", "").split()) == {"---"}
        assert len(lines) == 3

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            render_report([], fmt="rtf")

import pytest
from hypothesis import given, strategies as st

from stigmakit.annotation import (
    Adjudication,
    AnnotationError,
    AnnotationRecord,
    LabelSet,
    adjudicate,
    assign_tasks,
    build_gold,
    cohens_kappa,
    disagreements,
    load_gold,
    pooled_entity_kappa,
    split_gold,
    write_gold,
)
from stigmakit.subscales import SUBSCALES, Subscale

ALL_ABSENT = LabelSet(False, False, False, False)


def labels(*positives):
    return LabelSet.from_mapping({s.value: s in positives for s in SUBSCALES})


def record(sid, annotator, label_set, revision=0):
    return AnnotationRecord(sid, annotator, label_set, timestamp=0.0, revision=revision)


def bool_row(values):
    return LabelSet(*values)


class TestLabelSet:
    def test_partial_mapping_rejected(self):
        with pytest.raises(AnnotationError, match="missing"):
            LabelSet.from_mapping({"personalized_stigma": True})

    def test_unknown_subscale_rejected(self):
        full = {s.value: False for s in SUBSCALES}
        with pytest.raises(AnnotationError, match="unknown"):
            LabelSet.from_mapping({**full, "extra": True})

    def test_roundtrip(self):
        ls = labels(Subscale.DISCLOSURE_CONCERN)
        assert LabelSet.from_mapping(ls.as_dict()) == ls


class TestAssignTasks:
    def test_two_annotators_get_everything(self):
        tasks = assign_tasks(["s1", "s2", "s3", "s4"], ["a", "b"], per_sentence=2)
        per = {}
        for task in tasks:
            per.setdefault(task.annotator_id, []).append(task.sentence_id)
        assert per["a"] == ["s1", "s2", "s3", "s4"]
        assert per["b"] == ["s1", "s2", "s3", "s4"]

    def test_three_annotators_balanced(self):
        tasks = assign_tasks(["s1", "s2", "s3"], ["a", "b", "c"], per_sentence=2)
        loads = {}
        for task in tasks:
            loads[task.annotator_id] = loads.get(task.annotator_id, 0) + 1
        assert loads == {"a": 2, "b": 2, "c": 2}

    def test_each_sentence_two_distinct_annotators(self):
        tasks = assign_tasks([f"s{i}" for i in range(11)], ["a", "b", "c"], per_sentence=2)
        by_sentence = {}
        for task in tasks:
            by_sentence.setdefault(task.sentence_id, []).append(task.annotator_id)
        for sid, annotators in by_sentence.items():
            assert len(annotators) == 2
            assert len(set(annotators)) == 2

    def test_load_balance_within_one(self):
        tasks = assign_tasks([f"s{i}" for i in range(13)], ["a", "b", "c"], per_sentence=2)
        loads = {}
        for task in tasks:
            loads[task.annotator_id] = loads.get(task.annotator_id, 0) + 1
        assert max(loads.values()) - min(loads.values()) <= 1

    def test_too_few_annotators(self):
        with pytest.raises(AnnotationError):
            assign_tasks(["s1"], ["a"], per_sentence=2)


class TestCohensKappa:
    def test_perfect_agreement(self):
        result = cohens_kappa([(True, True), (False, False), (True, True)])
        assert result.kappa == pytest.approx(1.0, abs=1e-12)

    def test_hand_computed_kappa_zero(self):
        # A=[Y,Y,N,N], B=[Y,N,N,Y]: p_o=0.5, marginals 0.5/0.5 -> p_e=0.5
        result = cohens_kappa([(True, True), (True, False), (False, False), (False, True)])
        assert result.p_o == pytest.approx(0.5, abs=1e-12)
        assert result.p_e == pytest.approx(0.5, abs=1e-12)
        assert result.kappa == pytest.approx(0.0, abs=1e-9)

    def test_hand_computed_kappa_half(self):
        # A=[Y,Y,Y,N], B=[Y,Y,N,N]: p_o=0.75, p_e=0.5 -> kappa=0.5
        result = cohens_kappa([(True, True), (True, True), (True, False), (False, False)])
        assert result.p_o == pytest.approx(0.75, abs=1e-12)
        assert result.p_e == pytest.approx(0.5, abs=1e-12)
        assert result.kappa == pytest.approx(0.5, abs=1e-9)

    def test_degenerate_marginals_flagged_not_nan(self):
        result = cohens_kappa([(False, False), (False, False)])
        assert result.undefined
        assert result.kappa is None
        assert result.p_o == 1.0

    def test_empty_input_error(self):
        with pytest.raises(AnnotationError):
            cohens_kappa([])

    pairs = st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60)

    @given(pairs)
    def test_swap_raters_invariant(self, pairs):
        forward = cohens_kappa(pairs)
        backward = cohens_kappa([(b, a) for a, b in pairs])
        if forward.undefined:
            assert backward.undefined
        else:
            assert forward.kappa == pytest.approx(backward.kappa, abs=1e-12)

    @given(pairs)
    def test_global_label_swap_invariant(self, pairs):
        forward = cohens_kappa(pairs)
        flipped = cohens_kappa([(not a, not b) for a, b in pairs])
        if forward.undefined:
            assert flipped.undefined
        else:
            assert forward.kappa == pytest.approx(flipped.kappa, abs=1e-12)

    @given(st.lists(st.booleans(), min_size=1, max_size=60))
    def test_self_agreement_is_one_or_degenerate(self, row):
        result = cohens_kappa([(v, v) for v in row])
        if result.undefined:
            assert len(set(row)) == 1
        else:
            assert result.kappa == pytest.approx(1.0, abs=1e-12)

    @given(pairs)
    def test_kappa_in_range(self, pairs):
        result = cohens_kappa(pairs)
        if not result.undefined:
            assert -1.0 - 1e-9 <= result.kappa <= 1.0 + 1e-9


class TestPooledEntityKappa:
    def test_degenerate_single_sentence(self):
        records = [record("s1", "a", ALL_ABSENT), record("s1", "b", ALL_ABSENT)]
        report = pooled_entity_kappa(records)
        assert report.pooled.p_o == 1.0
        assert report.pooled.undefined

    def test_engineered_marginals_kappa_half(self):
        # 2 sentences x 4 subscales = 8 decisions; both-yes=2, A-only=2,
        # both-no=4 -> p_o=0.75, marginals A 4/8 yes, B 2/8 yes -> p_e=0.5
        a1 = bool_row((True, True, False, False))
        b1 = bool_row((True, False, False, False))
        a2 = bool_row((True, True, False, False))
        b2 = bool_row((True, False, False, False))
        records = [
            record("s1", "a", a1), record("s1", "b", b1),
            record("s2", "a", a2), record("s2", "b", b2),
        ]
        report = pooled_entity_kappa(records)
        assert report.pooled.n == 8
        assert report.pooled.p_o == pytest.approx(0.75, abs=1e-12)
        assert report.pooled.p_e == pytest.approx(0.5, abs=1e-12)
        assert report.pooled.kappa == pytest.approx(0.5, abs=1e-9)

    def test_regression_anchor_near_0286(self):
        # Constructed fixture: 5 sentences x 4 subscales = 20 decisions with
        # contingency (both-yes=3, A-only=3, B-only=3, both-no=11), giving
        # kappa = 2/7 = 0.2857..., which displays as 0.286 at 3 decimals.
        # This anchors the pooled-decision interpretation; it does not claim
        # to reproduce any real annotation data.
        rows = [
            ("s1", (True, True, False, False), (True, False, True, False)),
            ("s2", (True, True, False, False), (True, False, True, False)),
            ("s3", (True, False, False, False), (True, False, False, False)),
            ("s4", (False, True, False, False), (False, False, True, False)),
            ("s5", (False, False, False, False), (False, False, False, False)),
        ]
        records = []
        for sid, a_row, b_row in rows:
            records.append(record(sid, "a", bool_row(a_row)))
            records.append(record(sid, "b", bool_row(b_row)))
        report = pooled_entity_kappa(records)
        assert report.pooled.kappa == pytest.approx(2 / 7, abs=1e-9)
        assert round(report.pooled.kappa, 3) == 0.286

    def test_sentences_without_two_records_excluded(self):
        records = [
            record("s1", "a", ALL_ABSENT), record("s1", "b", labels(Subscale.PUBLIC_ATTITUDES)),
            record("s2", "a", ALL_ABSENT),  # only one record
        ]
        report = pooled_entity_kappa(records)
        assert report.excluded == ["s2"]
        assert report.n_sentences == 1

    def test_per_subscale_reported(self):
        records = [
            record("s1", "a", labels(Subscale.DISCLOSURE_CONCERN)),
            record("s1", "b", labels(Subscale.DISCLOSURE_CONCERN)),
            record("s2", "a", labels(Subscale.DISCLOSURE_CONCERN)),
            record("s2", "b", ALL_ABSENT),
        ]
        report = pooled_entity_kappa(records)
        assert set(report.per_subscale) == set(SUBSCALES)
        assert report.per_subscale[Subscale.DISCLOSURE_CONCERN].n == 2

    def test_supersession_uses_latest_revision(self):
        records = [
            record("s1", "a", ALL_ABSENT),
            record("s1", "a", labels(Subscale.PUBLIC_ATTITUDES), revision=1),
            record("s1", "b", labels(Subscale.PUBLIC_ATTITUDES)),
        ]
        report = pooled_entity_kappa(records)
        assert report.pooled.p_o == 1.0


class TestAdjudication:
    def disagreeing_records(self):
        return [
            record("s1", "a", labels(Subscale.DISCLOSURE_CONCERN)),
            record("s1", "b", ALL_ABSENT),
            record("s2", "a", labels(Subscale.NEGATIVE_SELF_IMAGE)),
            record("s2", "b", labels(Subscale.NEGATIVE_SELF_IMAGE)),
        ]

    def test_disagreement_resolved(self):
        records = self.disagreeing_records()
        assert disagreements(records) == {"s1": [Subscale.DISCLOSURE_CONCERN]}
        adj = adjudicate(records, "s1", labels(Subscale.DISCLOSURE_CONCERN), "expert1")
        assert adj.labels.get(Subscale.DISCLOSURE_CONCERN)

    def test_agreed_sentence_needs_override(self):
        records = self.disagreeing_records()
        with pytest.raises(AnnotationError):
            adjudicate(records, "s2", ALL_ABSENT, "expert1")

    def test_override_on_agreed_sentence_allowed(self):
        records = self.disagreeing_records()
        adj = adjudicate(records, "s2", ALL_ABSENT, "expert1", override=True)
        assert adj.override


class TestBuildGold:
    def make_table1_fixture(self):
        """230 agreed sentences, each with exactly one positive subscale:
        61 / 84 / 52 / 33 across the four."""
        counts = [61, 84, 52, 33]
        records, texts = [], {}
        i = 0
        for subscale, count in zip(SUBSCALES, counts):
            for _ in range(count):
                sid = f"s{i:04d}"
                ls = labels(subscale)
                records.append(record(sid, "a", ls))
                records.append(record(sid, "b", ls))
                texts[sid] = f"sentence {i}"
                i += 1
        return records, texts

    def test_table1_counts_and_percentages(self):
        records, texts = self.make_table1_fixture()
        gold = build_gold(records, [], texts)
        assert len(gold.labels) == 230
        rows = gold.table1_rows()
        assert [row["yes"] for row in rows] == [61, 84, 52, 33]
        assert [round(row["yes_pct"], 1) for row in rows] == [26.5, 36.5, 22.6, 14.3]
        assert [round(row["no_pct"], 1) for row in rows] == [73.5, 63.5, 77.4, 85.7]

    def test_positive_counts_match_brute_force_recount(self):
        records, texts = self.make_table1_fixture()
        gold = build_gold(records, [], texts)
        for subscale in SUBSCALES:
            recount = sum(1 for ls in gold.labels.values() if ls.get(subscale))
            assert gold.positives(subscale) == recount

    def test_unresolved_disagreement_is_error_naming_it(self):
        records = [
            record("s1", "a", labels(Subscale.PUBLIC_ATTITUDES)),
            record("s1", "b", ALL_ABSENT),
        ]
        with pytest.raises(AnnotationError, match="s1"):
            build_gold(records, [], {"s1": "text"})

    def test_adjudicated_labels_become_gold(self):
        records = [
            record("s1", "a", labels(Subscale.PUBLIC_ATTITUDES)),
            record("s1", "b", ALL_ABSENT),
        ]
        adj = Adjudication("s1", "expert1", labels(Subscale.PUBLIC_ATTITUDES), timestamp=0.0)
        gold = build_gold(records, [adj], {"s1": "text"})
        assert gold.labels["s1"].get(Subscale.PUBLIC_ATTITUDES)

    def test_all_absent_excluded_by_default_kept_with_flag(self):
        records = [record("s1", "a", ALL_ABSENT), record("s1", "b", ALL_ABSENT)]
        assert build_gold(records, [], {"s1": "t"}).labels == {}
        gold = build_gold(records, [], {"s1": "t"}, include_negatives=True)
        assert set(gold.labels) == {"s1"}


class TestSplit:
    def make_gold(self, n):
        records, texts = [], {}
        for i in range(n):
            sid = f"s{i:04d}"
            ls = labels(SUBSCALES[i % 4])
            records.append(record(sid, "a", ls))
            records.append(record(sid, "b", ls))
            texts[sid] = f"text {i}"
        return build_gold(records, [], texts)

    def test_230_gives_138_46_46(self):
        gold = self.make_gold(230)
        assignment = split_gold(gold, rng_seed=3)
        sizes = [sum(1 for v in assignment.values() if v == name)
                 for name in ("train", "validation", "test")]
        assert sizes == [138, 46, 46]

    def test_10_gives_6_2_2(self):
        gold = self.make_gold(10)
        assignment = split_gold(gold, rng_seed=3)
        sizes = [sum(1 for v in assignment.values() if v == name)
                 for name in ("train", "validation", "test")]
        assert sizes == [6, 2, 2]

    def test_same_seed_identical(self):
        a = split_gold(self.make_gold(50), rng_seed=9)
        b = split_gold(self.make_gold(50), rng_seed=9)
        assert a == b

    def test_partition(self):
        gold = self.make_gold(37)
        assignment = split_gold(gold, rng_seed=1)
        assert set(assignment) == set(gold.labels)
        assert set(assignment.values()) <= {"train", "validation", "test"}

    def test_too_small_rejected(self):
        with pytest.raises(AnnotationError):
            split_gold(self.make_gold(4))

    def test_split_shared_across_subscales(self):
        gold = self.make_gold(40)
        split_gold(gold, rng_seed=2)
        memberships = []
        for subscale in SUBSCALES:
            ids = [sid for sid, _text, _label in gold.subscale_items(subscale)]
            memberships.append(ids)
        assert all(m == memberships[0] for m in memberships)

    def test_gold_file_roundtrip(self, tmp_path):
        gold = self.make_gold(20)
        split_gold(gold, rng_seed=4)
        write_gold(gold, tmp_path)
        loaded = load_gold(tmp_path)
        assert loaded.labels == gold.labels
        assert loaded.split == gold.split
        assert loaded.texts == gold.texts

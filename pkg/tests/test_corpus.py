import json
from datetime import date
from pathlib import Path

import pytest

from stancelab.corpus import (
    Corpus,
    Document,
    FilterRule,
    IngestConfig,
    MatchMode,
    RuleKind,
    SliceLabel,
    SlicePair,
    apply_rules,
    ingest,
    load_rules,
    phrase_filter,
    rule_matches,
    slice_corpus,
)
from stancelab.errors import DataError
from stancelab.textproc import tokenize

from conftest import make_doc, write_jsonl

FIXTURES = Path(__file__).parent / "fixtures"
PKG_FIXTURES = Path(__file__).parents[1] / "src" / "stancelab" / "fixtures"


def record(i, lang="fa", **kw):
    base = {
        "id": f"r{i}",
        "text": f"متن شماره {i}",
        "author_id": "a1",
        "created_at": "2022-05-01T10:00:00+00:00",
        "language": lang,
    }
    base.update(kw)
    return base


class TestIngest:
    def test_identity_case(self, tmp_path):
        p = write_jsonl(tmp_path / "in.jsonl", [record(i) for i in range(3)])
        res = ingest(p, IngestConfig(language="fa"))
        assert len(res.corpus) == 3
        assert res.dropped_language == 0
        assert res.corpus.ids() == ["r0", "r1", "r2"]  # order preserved

    def test_language_filter_drops_and_counts(self, tmp_path):
        rows = [record(0), record(1, lang="en"), record(2)]
        p = write_jsonl(tmp_path / "in.jsonl", rows)
        res = ingest(p, IngestConfig(language="fa"))
        assert len(res.corpus) == 2
        assert res.dropped_language == 1

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("")
        res = ingest(p, IngestConfig(language="fa"))
        assert len(res.corpus) == 0
        assert res.dropped_language == 0

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            ingest(tmp_path / "nope.jsonl")

    def test_malformed_fatal_by_default(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id": "x"}\n')
        with pytest.raises(DataError, match="bad.jsonl:1"):
            ingest(p)

    def test_malformed_skipped_when_lenient(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        rows = [json.dumps(record(0), ensure_ascii=False), "not json", json.dumps(record(1), ensure_ascii=False)]
        p.write_text("\n".join(rows) + "\n")
        res = ingest(p, IngestConfig(language="fa", lenient=True))
        assert len(res.corpus) == 2
        assert res.skipped_malformed == 1

    def test_duplicate_ids_fatal_unless_lenient(self, tmp_path):
        rows = [record(0), record(0)]
        p = write_jsonl(tmp_path / "dup.jsonl", rows)
        with pytest.raises(DataError, match="duplicate"):
            ingest(p)
        res = ingest(p, IngestConfig(lenient=True))
        assert len(res.corpus) == 1
        assert res.skipped_duplicates == 1

    def test_study_window(self, tmp_path):
        rows = [
            record(0, created_at="2021-12-31T10:00:00+00:00"),
            record(1, created_at="2022-05-01T10:00:00+00:00"),
        ]
        p = write_jsonl(tmp_path / "w.jsonl", rows)
        res = ingest(
            p,
            IngestConfig(study_window=(date(2022, 1, 15), date(2023, 1, 15))),
        )
        assert res.corpus.ids() == ["r1"]
        assert res.dropped_window == 1


class TestDocumentInvariants:
    def test_empty_id_rejected(self):
        with pytest.raises(ValueError):
            Document(id="", text="x")

    def test_hashtag_with_hash_rejected(self):
        with pytest.raises(ValueError):
            Document(id="a", text="x", hashtags=("#tag",))

    def test_duplicate_corpus_ids_rejected(self):
        d = make_doc("same", "x")
        with pytest.raises(ValueError, match="duplicate"):
            Corpus(name="c", documents=(d, make_doc("same", "y")))


class TestApplyRules:
    def test_any_keyword_matches(self):
        rule = FilterRule(RuleKind.ANY_KEYWORD, (("زنان", "دختر"),))
        assert rule_matches(rule, make_doc("d", "حقوق زنان مهم است"))
        assert not rule_matches(rule, make_doc("d", "هوا خوب است"))

    def test_conjunctive_subsets(self):
        rule = FilterRule(
            RuleKind.CONJUNCTIVE_SUBSETS,
            (("دختر", "زن", "خواهر"), ("زندگی", "انقلاب", "حقوق", "آزادی")),
        )
        assert rule_matches(rule, make_doc("d", "دختر و آزادی"))
        assert not rule_matches(rule, make_doc("d", "دختر تنها"))  # one side only
        assert not rule_matches(rule, make_doc("d", "آزادی تنها"))

    def test_no_keywords_no_match(self):
        rule = FilterRule(RuleKind.ANY_KEYWORD, (("زنان",),))
        assert not rule_matches(rule, make_doc("d", "کتاب خوب"))

    def test_token_exact_ignores_compounds(self):
        rule = FilterRule(RuleKind.ANY_KEYWORD, (("زنان",),))
        assert not rule_matches(rule, make_doc("d", "زنانه"))

    def test_substring_mode_catches_clitics(self):
        rule = FilterRule(RuleKind.ANY_KEYWORD, (("جنده",),), MatchMode.SUBSTRING)
        assert rule_matches(rule, make_doc("d", "جندهها"))

    def test_hashtag_exact(self):
        rule = FilterRule(RuleKind.HASHTAG_EXACT, (("مهسا_امینی",),))
        assert rule_matches(rule, make_doc("d", "متن", hashtags=("مهسا_امینی",)))
        assert not rule_matches(rule, make_doc("d", "متن", hashtags=("دیگر",)))

    def test_subset_and_idempotence(self, tiny_corpus):
        rules = [FilterRule(RuleKind.ANY_KEYWORD, (("زنان", "دختر"),))]
        once = apply_rules(tiny_corpus, rules)
        assert set(once.ids()) <= set(tiny_corpus.ids())
        twice = apply_rules(once, rules)
        assert twice.ids() == once.ids()

    def test_empty_rules_rejected(self, tiny_corpus):
        with pytest.raises(ValueError):
            apply_rules(tiny_corpus, [])

    def test_empty_keyword_set_rejected(self):
        with pytest.raises(ValueError, match="empty keyword set"):
            FilterRule(RuleKind.ANY_KEYWORD, ((),))

    def test_conjunctive_needs_two_sets(self):
        with pytest.raises(ValueError):
            FilterRule(RuleKind.CONJUNCTIVE_SUBSETS, (("a",),))

    def test_single_rule_equals_brute_force_scan(self, tiny_corpus):
        keywords = {"زنان", "دختر"}
        rules = [FilterRule(RuleKind.ANY_KEYWORD, (tuple(keywords),))]
        got = set(apply_rules(tiny_corpus, rules).ids())
        want = {
            d.id
            for d in tiny_corpus
            if keywords & set(tokenize(d.text, keep_hashtags=True))
        }
        assert got == want


class TestSlice:
    PAIR = SlicePair.from_dates(
        date(2022, 1, 15), date(2022, 9, 15), date(2022, 9, 16), date(2023, 1, 15)
    )

    def test_before_assignment(self):
        res = slice_corpus(Corpus("c", (make_doc("d", "x", created="2022-05-01T00:00:00+00:00"),)), self.PAIR)
        assert res.before.ids() == ["d"]

    def test_boundary_date_is_before(self):
        res = slice_corpus(
            Corpus("c", (make_doc("d", "x", created="2022-09-15T23:59:59+00:00"),)), self.PAIR
        )
        assert res.before.ids() == ["d"]

    def test_after_assignment(self):
        res = slice_corpus(Corpus("c", (make_doc("d", "x", created="2022-09-16T00:00:00+00:00"),)), self.PAIR)
        assert res.after.ids() == ["d"]

    def test_outside_window_excluded(self):
        res = slice_corpus(Corpus("c", (make_doc("d", "x", created="2021-12-31T00:00:00+00:00"),)), self.PAIR)
        assert res.excluded == 1
        assert len(res.before) == len(res.after) == 0

    def test_partition_property(self, tiny_corpus):
        res = slice_corpus(tiny_corpus, self.PAIR)
        assert len(res.before) + len(res.after) + res.excluded == len(tiny_corpus)

    def test_misordered_pair_rejected(self):
        with pytest.raises(ValueError):
            SlicePair.from_dates(
                date(2022, 1, 15), date(2022, 9, 16), date(2022, 9, 16), date(2023, 1, 15)
            )


class TestPhraseFilter:
    def test_phrase_present(self):
        c = Corpus("c", (make_doc("d", "برای آزادی ایران"),))
        assert phrase_filter(c, "برای").ids() == ["d"]

    def test_phrase_absent(self):
        c = Corpus("c", (make_doc("d", "هوا خوب است"),))
        assert phrase_filter(c, "برای").ids() == []

    def test_phrase_equals_whole_text(self):
        c = Corpus("c", (make_doc("d", "برای آزادی"),))
        assert phrase_filter(c, "برای آزادی").ids() == ["d"]

    def test_multiword_phrase_must_be_contiguous(self):
        c = Corpus("c", (make_doc("d", "برای مردم آزادی"),))
        assert phrase_filter(c, "برای آزادی").ids() == []

    def test_empty_phrase_rejected(self, tiny_corpus):
        with pytest.raises(ValueError):
            phrase_filter(tiny_corpus, "  ")


class TestGenderRuleFixture:
    """The shipped rule set against the hand-built 50-document corpus."""

    def test_apply_rules_equals_hand_list(self):
        rule_set_id, rules = load_rules(PKG_FIXTURES / "rules_gender.json")
        assert rule_set_id == "gender-v1"
        res = ingest(FIXTURES / "gender_fixture_corpus.jsonl", IngestConfig(language="fa"))
        expected = json.loads((FIXTURES / "gender_fixture_expected.json").read_text(encoding="utf-8"))
        got = apply_rules(res.corpus, rules, rule_set_id=rule_set_id)
        assert got.ids() == expected["matched_any"]

    def test_per_rule_matches_equal_hand_lists(self):
        _, rules = load_rules(PKG_FIXTURES / "rules_gender.json")
        res = ingest(FIXTURES / "gender_fixture_corpus.jsonl", IngestConfig(language="fa"))
        expected = json.loads((FIXTURES / "gender_fixture_expected.json").read_text(encoding="utf-8"))
        by_name = {r.name: r for r in rules}
        for rule_name, want_ids in expected["per_rule"].items():
            got = [d.id for d in res.corpus if rule_matches(by_name[rule_name], d)]
            assert got == want_ids, rule_name

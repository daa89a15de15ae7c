import math
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stancelab.analysis import (
    Direction,
    DistributionHistogram,
    Granularity,
    UserSet,
    bhattacharyya,
    creation_histogram,
    divergence_ranking,
    hashtag_movers,
    kl_divergence,
    month_range,
    movers,
    stance_timeseries,
    user_set_from_corpus,
)
from stancelab.corpus import Corpus, SlicePair
from stancelab.errors import DataError
from stancelab.labels import StanceLabel
from stancelab.textproc import ngram_table, tokenize

from conftest import make_doc


def hist(*mass, bins=None):
    bins = bins or tuple(f"2022-{i+1:02d}" for i in range(len(mass)))
    return DistributionHistogram(bins=tuple(bins), mass=tuple(mass))


random_hist_pair = st.integers(min_value=2, max_value=12).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0.01, 10.0), min_size=n, max_size=n),
        st.lists(st.floats(0.01, 10.0), min_size=n, max_size=n),
    )
)


def normalize_pair(raw):
    a, b = raw
    bins = tuple(f"2020-{i+1:02d}" for i in range(len(a)))
    return (
        hist(*(x / sum(a) for x in a), bins=bins),
        hist(*(x / sum(b) for x in b), bins=bins),
    )


class TestKL:
    def test_identity_small_under_default_smoothing(self):
        p = hist(0.5, 0.5)
        assert kl_divergence(p, p) <= 1e-6

    def test_hand_computed_value(self):
        # 0.5*ln(2) + 0.5*ln(2/3)
        got = kl_divergence(hist(0.5, 0.5), hist(0.25, 0.75), epsilon=1e-12)
        assert got == pytest.approx(0.143841, abs=1e-5)

    def test_zero_reference_bin_stays_finite(self):
        got = kl_divergence(hist(0.5, 0.5), hist(1.0, 0.0))
        assert math.isfinite(got) and got > 0

    def test_zero_p_bins_contribute_nothing(self):
        got = kl_divergence(hist(1.0, 0.0), hist(0.5, 0.5), epsilon=1e-12)
        assert got == pytest.approx(math.log(2.0), abs=1e-6)

    def test_misaligned_bins(self):
        with pytest.raises(DataError):
            kl_divergence(hist(1.0, 0.0), hist(0.5, 0.5, bins=("a", "b")))

    def test_asymmetric_on_crafted_pair(self):
        p, q = hist(0.9, 0.1), hist(0.3, 0.7)
        assert kl_divergence(p, q) != pytest.approx(kl_divergence(q, p))

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            kl_divergence(hist(1.0), hist(1.0), epsilon=0.0)

    @given(random_hist_pair)
    @settings(max_examples=300, deadline=None)
    def test_nonnegative_property(self, raw):
        p, q = normalize_pair(raw)
        assert kl_divergence(p, q) >= -1e-12


class TestBhattacharyya:
    def test_identity(self):
        p = hist(0.5, 0.5)
        assert bhattacharyya(p, p) == pytest.approx(0.0, abs=1e-12)

    def test_hand_computed_value(self):
        got = bhattacharyya(hist(0.5, 0.5), hist(0.25, 0.75))
        assert got == pytest.approx(0.034664, abs=1e-5)

    def test_disjoint_supports_infinite(self):
        assert bhattacharyya(hist(1.0, 0.0), hist(0.0, 1.0)) == math.inf

    def test_misaligned(self):
        with pytest.raises(DataError):
            bhattacharyya(hist(1.0), hist(0.5, 0.5))

    @given(random_hist_pair)
    @settings(max_examples=300, deadline=None)
    def test_symmetry_property(self, raw):
        p, q = normalize_pair(raw)
        assert bhattacharyya(p, q) == pytest.approx(bhattacharyya(q, p), abs=1e-12)


class TestHistogram:
    def test_single_month(self):
        h = creation_histogram(UserSet("u", ["2022-09", "2022-09"]))
        assert h.bins == ("2022-09",)
        assert h.mass == (1.0,)

    def test_two_months_even_split(self):
        h = creation_histogram(UserSet("u", ["2022-01", "2022-01", "2022-03", "2022-03"]))
        assert h.bins == ("2022-01", "2022-02", "2022-03")
        assert h.mass == (0.5, 0.0, 0.5)

    def test_mass_always_sums_to_one(self):
        h = creation_histogram(UserSet("u", ["2021-12", "2022-01", "2022-05", "2022-05"]))
        assert abs(sum(h.mass) - 1.0) < 1e-9

    def test_empty_set_rejected(self):
        with pytest.raises(DataError):
            creation_histogram(UserSet("u", []))

    def test_month_range_spans_years(self):
        assert month_range(["2021-11", "2022-02"]) == (
            "2021-11", "2021-12", "2022-01", "2022-02",
        )

    def test_explicit_bins_keep_zero_months(self):
        bins = month_range(["2022-01", "2022-04"])
        h = creation_histogram(UserSet("u", ["2022-02"]), bins)
        assert h.bins == bins
        assert h.mass[1] == 1.0

    def test_unsorted_bins_rejected(self):
        with pytest.raises(ValueError):
            DistributionHistogram(bins=("b", "a"), mass=(0.5, 0.5))

    def test_user_set_from_corpus_counts_missing(self):
        docs = (
            make_doc("d1", "x", account_created_at=None),
            make_doc("d2", "y", author_id="u2",
                     account_created_at=__import__("datetime").datetime(2020, 3, 1, tzinfo=__import__("datetime").timezone.utc)),
        )
        c = Corpus("c", docs)
        us = user_set_from_corpus("c", c)
        assert us.account_creation_months == ["2020-03"]
        assert us.missing_creation == 1


class TestMovers:
    def test_identical_corpora_empty_reports(self):
        t = ngram_table([["a", "b"], ["a", "c"]], n=1)
        before, after = movers(t, t)
        assert before.entries == [] and after.entries == []

    def test_hand_computed_shift(self):
        t_before = ngram_table([["a", "b"], ["a", "c"]], n=1)  # a:.5 b:.25 c:.25
        t_after = ngram_table([["a", "b"], ["b", "b"]], n=1)  # a:.25 b:.75
        before, after = movers(t_before, t_after)
        assert before.entries == [("a", pytest.approx(0.25)), ("c", pytest.approx(0.25))]
        assert after.entries == [("b", pytest.approx(0.5))]

    def test_reports_disjoint(self):
        t_before = ngram_table([["a", "b", "c", "a"]], n=1)
        t_after = ngram_table([["b", "b", "c", "d"]], n=1)
        before, after = movers(t_before, t_after)
        assert not ({t for t, _ in before.entries} & {t for t, _ in after.entries})

    def test_stopwords_dropped(self):
        t_before = ngram_table([["از", "x"]], n=1)
        t_after = ngram_table([["y", "y"]], n=1)
        before, _ = movers(t_before, t_after, stopwords={"از"})
        assert [t for t, _ in before.entries] == ["x"]

    def test_single_side_token_keeps_full_frequency(self):
        t_before = ngram_table([["only", "x"]], n=1)
        t_after = ngram_table([["x", "x"]], n=1)
        before, _ = movers(t_before, t_after)
        assert ("only", pytest.approx(0.5)) in before.entries

    def test_empty_table_rejected(self):
        with pytest.raises(DataError):
            movers(ngram_table([], n=1), ngram_table([["a"]], n=1))

    def test_order_mismatch_rejected(self):
        with pytest.raises(DataError):
            movers(ngram_table([["a"]], n=1), ngram_table([["a", "b"]], n=2))


class TestHashtagMovers:
    def test_no_hashtags_rejected_as_empty(self):
        c = Corpus("c", (make_doc("d1", "x"),))
        before, after = hashtag_movers(c, c)
        assert before.entries == [] and after.entries == []

    def test_planted_shift(self):
        b = Corpus(
            "b",
            tuple(
                make_doc(f"b{i}", "x", hashtags=("قدیمی",) if i < 8 else ("ثابت",))
                for i in range(10)
            ),
        )
        a = Corpus(
            "a",
            tuple(
                make_doc(f"a{i}", "x", hashtags=("مهسا_امینی",) if i < 9 else ("ثابت",))
                for i in range(10)
            ),
        )
        before, after = hashtag_movers(b, a)
        assert after.entries[0][0] == "مهسا_امینی"
        assert after.entries[0][1] == pytest.approx(0.9)
        assert before.entries[0][0] == "قدیمی"


class TestDivergenceRanking:
    def test_identical_set_ranks_closest(self):
        months_base = ["2022-01"] * 5 + ["2022-02"] * 5
        base = UserSet("baseline", months_base)
        same = UserSet("same", list(months_base))
        far = UserSet("far", ["2022-05"] * 10)
        ranking = divergence_ranking([far, same], base)
        assert ranking.ranking_kl[0] == "same"
        assert ranking.ranking_bhattacharyya[0] == "same"

    def test_rankings_match_direct_computation(self):
        rng = np.random.default_rng(5)
        base_months = [f"2022-{m:02d}" for m in rng.integers(1, 7, size=200)]
        sets = []
        for i, shift in enumerate((0, 2, 5)):
            months = [f"2022-{min(12, m + shift):02d}" for m in rng.integers(1, 7, size=200)]
            sets.append(UserSet(f"s{shift}", months))
        base = UserSet("base", base_months)
        ranking = divergence_ranking(sets, base)
        bins = month_range(base_months + [m for s in sets for m in s.account_creation_months])
        base_h = creation_histogram(base, bins)
        direct = sorted(
            sets, key=lambda s: kl_divergence(creation_histogram(s, bins), base_h)
        )
        assert ranking.ranking_kl == [s.name for s in direct]

    def test_empty_sets_rejected(self):
        with pytest.raises(ValueError):
            divergence_ranking([], UserSet("b", ["2022-01"]))


class FixedPredictor:
    """Test oracle: labels supplied per doc id."""

    def __init__(self, labels):
        self.labels = labels

    def predict_corpus(self, corpus):
        ids = corpus.ids()
        return ids, [self.labels[d] for d in ids]


class TestStanceTimeseries:
    PAIR = SlicePair.from_dates(
        date(2022, 1, 15), date(2022, 9, 15), date(2022, 9, 16), date(2023, 1, 15)
    )

    def _corpus(self):
        docs = []
        for i in range(10):
            docs.append(make_doc(f"b{i}", "x", created="2022-05-01T10:00:00+00:00"))
        for i in range(10):
            docs.append(make_doc(f"a{i}", "x", created="2022-10-01T10:00:00+00:00"))
        return Corpus("c", tuple(docs))

    def test_all_positive(self):
        c = self._corpus()
        series = stance_timeseries(
            c, FixedPredictor({d: StanceLabel.POSITIVE for d in c.ids()}), Granularity.MONTH
        )
        assert all(p.positive == 1.0 for p in series.points)

    def test_shares_sum_to_one_per_period(self):
        c = self._corpus()
        labels = {
            d: (StanceLabel.POSITIVE if i % 3 == 0 else StanceLabel.NEUTRAL if i % 3 == 1 else StanceLabel.NEGATIVE)
            for i, d in enumerate(c.ids())
        }
        series = stance_timeseries(c, FixedPredictor(labels), Granularity.MONTH)
        for p in series.points:
            assert abs(p.positive + p.neutral + p.negative - 1.0) < 1e-9

    def test_planted_share_shift_ratio(self):
        docs, labels = [], {}
        for i in range(200):
            doc_id = f"b{i}"
            docs.append(make_doc(doc_id, "x", created="2022-05-01T10:00:00+00:00"))
            labels[doc_id] = StanceLabel.POSITIVE if i < 20 else StanceLabel.NEUTRAL  # 10%
        for i in range(200):
            doc_id = f"a{i}"
            docs.append(make_doc(doc_id, "x", created="2022-10-01T10:00:00+00:00"))
            labels[doc_id] = StanceLabel.POSITIVE if i < 60 else StanceLabel.NEUTRAL  # 30%
        series = stance_timeseries(
            Corpus("c", tuple(docs)), FixedPredictor(labels), Granularity.MONTH, slices=self.PAIR
        )
        assert series.slice_ratios["positive"] == pytest.approx(3.0)

    def test_week_and_day_granularity_keys(self):
        c = self._corpus()
        pred = FixedPredictor({d: StanceLabel.NEUTRAL for d in c.ids()})
        day = stance_timeseries(c, pred, Granularity.DAY)
        week = stance_timeseries(c, pred, Granularity.WEEK)
        assert day.points[0].period == "2022-05-01"
        assert week.points[0].period.startswith("2022-W")

    def test_no_timestamps_rejected(self):
        c = Corpus("c", (make_doc("d", "x", created=None),))
        with pytest.raises(DataError):
            stance_timeseries(c, FixedPredictor({"d": StanceLabel.NEUTRAL}), Granularity.MONTH)

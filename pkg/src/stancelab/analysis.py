"""Corpus-shift analytics: frequency movers, creation-time divergences, and
stance share time series."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from datetime import date, timezone
from enum import Enum

import numpy as np

from .corpus import Corpus, SlicePair
from .errors import DataError
from .labels import STANCE_LABELS, StanceLabel
from .textproc import NgramTable, normalize


class Direction(str, Enum):
    TOWARD_BEFORE = "toward_before"
    TOWARD_AFTER = "toward_after"


@dataclass
class MoversReport:
    """Tokens whose relative frequency shifted toward one time slice."""

    direction: Direction
    entries: list[tuple[str, float]]  # (token, positive frequency delta), delta desc

    def __post_init__(self):
        deltas = [d for _, d in self.entries]
        if any(d <= 0 for d in deltas):
            raise ValueError("movers entries must have strictly positive deltas")
        if deltas != sorted(deltas, reverse=True):
            raise ValueError("movers entries must be sorted by delta descending")


def _mover_entries(
    freq_hi: dict[tuple[str, ...], float],
    freq_lo: dict[tuple[str, ...], float],
    stopwords: frozenset[str] | set[str],
    k: int,
) -> list[tuple[str, float]]:
    deltas = []
    for gram, f in freq_hi.items():
        if stopwords and all(t in stopwords for t in gram):
            continue
        d = f - freq_lo.get(gram, 0.0)
        if d > 0:
            deltas.append((" ".join(gram), d))
    deltas.sort(key=lambda e: (-e[1], e[0]))
    return deltas[:k]


def movers(
    before: NgramTable,
    after: NgramTable,
    stopwords: frozenset[str] | set[str] = frozenset(),
    k: int = 20,
) -> tuple[MoversReport, MoversReport]:
    """Top-k n-grams that moved toward each period.

    Both tables are converted to relative frequencies; an n-gram present in
    only one period keeps its full frequency as the delta. Zero and negative
    deltas are excluded, so identical corpora yield two empty reports.
    """
    if before.n != after.n:
        raise DataError(f"n-gram orders differ: {before.n} vs {after.n}")
    if before.total == 0 or after.total == 0:
        raise DataError("movers requires two non-empty n-gram tables")
    f_b = before.relative_frequencies()
    f_a = after.relative_frequencies()
    return (
        MoversReport(Direction.TOWARD_BEFORE, _mover_entries(f_b, f_a, stopwords, k)),
        MoversReport(Direction.TOWARD_AFTER, _mover_entries(f_a, f_b, stopwords, k)),
    )


def hashtag_movers(
    before: Corpus, after: Corpus, k: int = 10
) -> tuple[MoversReport, MoversReport]:
    """Same shift measure as ``movers`` but over the hashtags field."""

    def freqs(c: Corpus) -> dict[tuple[str, ...], float]:
        counts = Counter((normalize(h),) for d in c for h in d.hashtags)
        total = sum(counts.values())
        return {h: n / total for h, n in counts.items()} if total else {}

    f_b, f_a = freqs(before), freqs(after)
    return (
        MoversReport(Direction.TOWARD_BEFORE, _mover_entries(f_b, f_a, frozenset(), k)),
        MoversReport(Direction.TOWARD_AFTER, _mover_entries(f_a, f_b, frozenset(), k)),
    )


@dataclass(frozen=True)
class DistributionHistogram:
    """Normalized histogram over ordered, unique bin labels."""

    bins: tuple[str, ...]
    mass: tuple[float, ...]

    def __post_init__(self):
        if len(self.bins) != len(self.mass):
            raise ValueError("bins and mass must be parallel")
        if len(set(self.bins)) != len(self.bins):
            raise ValueError("bins must be unique")
        if list(self.bins) != sorted(self.bins):
            raise ValueError("bins must be sorted")
        if any(m < 0 for m in self.mass):
            raise ValueError("mass entries must be non-negative")
        if abs(sum(self.mass) - 1.0) > 1e-9:
            raise ValueError(f"mass must sum to 1, got {sum(self.mass)}")

    @staticmethod
    def from_counts(counts: dict[str, int | float], bins: tuple[str, ...] | None = None) -> "DistributionHistogram":
        if bins is None:
            bins = tuple(sorted(counts))
        total = float(sum(counts.get(b, 0) for b in bins))
        if total <= 0:
            raise DataError("histogram has no mass")
        return DistributionHistogram(
            bins=tuple(bins), mass=tuple(counts.get(b, 0) / total for b in bins)
        )

    def aligned(self, bins: tuple[str, ...]) -> "DistributionHistogram":
        """Re-bin onto a superset bin range, keeping zero-mass bins."""
        lookup = dict(zip(self.bins, self.mass))
        missing = set(self.bins) - set(bins)
        if missing:
            raise DataError(f"target bins drop occupied bins: {sorted(missing)}")
        return DistributionHistogram(bins=tuple(bins), mass=tuple(lookup.get(b, 0.0) for b in bins))


@dataclass
class UserSet:
    """Named multiset of account-creation months ('YYYY-MM')."""

    name: str
    account_creation_months: list[str]
    missing_creation: int = 0


def user_set_from_corpus(name: str, corpus: Corpus) -> UserSet:
    """Collect each unique author's account-creation month from a corpus."""
    months: dict[str, str] = {}
    missing = 0
    seen_missing: set[str] = set()
    for d in corpus:
        if d.author_id in months or d.author_id in seen_missing:
            continue
        if d.account_created_at is None:
            seen_missing.add(d.author_id)
            missing += 1
            continue
        ts = d.account_created_at.astimezone(timezone.utc)
        months[d.author_id] = f"{ts.year:04d}-{ts.month:02d}"
    return UserSet(name=name, account_creation_months=sorted(months.values()), missing_creation=missing)


def month_range(months: list[str]) -> tuple[str, ...]:
    """All calendar months between min(months) and max(months), inclusive."""
    if not months:
        raise DataError("no months to bin")
    lo_y, lo_m = map(int, min(months).split("-"))
    hi_y, hi_m = map(int, max(months).split("-"))
    out = []
    y, m = lo_y, lo_m
    while (y, m) <= (hi_y, hi_m):
        out.append(f"{y:04d}-{m:02d}")
        m += 1
        if m > 12:
            y, m = y + 1, 1
    return tuple(out)


def creation_histogram(
    users: UserSet, bins: tuple[str, ...] | None = None
) -> DistributionHistogram:
    """Month-binned normalized histogram of account-creation times.

    Pass explicit ``bins`` (e.g. the union month range of all compared sets)
    to keep zero-mass months for alignment.
    """
    if not users.account_creation_months:
        raise DataError(f"user set {users.name!r} is empty")
    counts = Counter(users.account_creation_months)
    if bins is None:
        bins = month_range(users.account_creation_months)
    return DistributionHistogram.from_counts(counts, bins)


def kl_divergence(
    p: DistributionHistogram, q: DistributionHistogram, epsilon: float = 1e-9
) -> float:
    """D(p || q) in nats, with additive smoothing on the reference q.

    q is smoothed as (q + eps) / (1 + eps * |bins|) so zero reference bins
    stay finite; terms with p_i = 0 contribute nothing.
    """
    if p.bins != q.bins:
        raise DataError("histograms have misaligned bins")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    pm = np.asarray(p.mass)
    qm = (np.asarray(q.mass) + epsilon) / (1.0 + epsilon * len(q.bins))
    nz = pm > 0
    return float(np.sum(pm[nz] * np.log(pm[nz] / qm[nz])))


def bhattacharyya(p: DistributionHistogram, q: DistributionHistogram) -> float:
    """Bhattacharyya distance -ln sum(sqrt(p*q)); +inf on disjoint supports."""
    if p.bins != q.bins:
        raise DataError("histograms have misaligned bins")
    bc = float(np.sum(np.sqrt(np.asarray(p.mass) * np.asarray(q.mass))))
    if bc <= 0.0:
        return math.inf
    return -math.log(min(bc, 1.0))


@dataclass
class DivergenceRow:
    name: str
    kl: float
    bhattacharyya: float


@dataclass
class DivergenceRanking:
    rows: list[DivergenceRow]  # input order
    ranking_kl: list[str]  # set names, closest to baseline first
    ranking_bhattacharyya: list[str]
    rankings_disagree: bool


def divergence_ranking(
    sets: list[UserSet],
    baseline: UserSet,
    epsilon: float = 1e-9,
    reverse_kl: bool = False,
) -> DivergenceRanking:
    """Per-set KL and Bhattacharyya distance to the baseline, plus rankings.

    KL direction defaults to D(set || baseline); ``reverse_kl`` flips it.
    Histograms are aligned on the union month range of every set involved.
    """
    if not sets:
        raise ValueError("need at least one comparison set")
    all_months = list(baseline.account_creation_months)
    for s in sets:
        all_months.extend(s.account_creation_months)
    bins = month_range(all_months)
    base_hist = creation_histogram(baseline, bins)
    rows = []
    for s in sets:
        h = creation_histogram(s, bins)
        kl = (
            kl_divergence(base_hist, h, epsilon)
            if reverse_kl
            else kl_divergence(h, base_hist, epsilon)
        )
        rows.append(DivergenceRow(name=s.name, kl=kl, bhattacharyya=bhattacharyya(h, base_hist)))
    rank_kl = [r.name for r in sorted(rows, key=lambda r: (r.kl, r.name))]
    rank_bd = [r.name for r in sorted(rows, key=lambda r: (r.bhattacharyya, r.name))]
    return DivergenceRanking(
        rows=rows,
        ranking_kl=rank_kl,
        ranking_bhattacharyya=rank_bd,
        rankings_disagree=rank_kl != rank_bd,
    )


class Granularity(str, Enum):
    DAY = "day"
    WEEK = "week"
    MONTH = "month"


def _period_key(d: date, granularity: Granularity) -> str:
    if granularity is Granularity.DAY:
        return d.isoformat()
    if granularity is Granularity.WEEK:
        y, w, _ = d.isocalendar()
        return f"{y:04d}-W{w:02d}"
    return f"{d.year:04d}-{d.month:02d}"


@dataclass
class StancePoint:
    period: str
    positive: float | None
    neutral: float | None
    negative: float | None
    n: int


@dataclass
class StanceTimeSeries:
    granularity: Granularity
    points: list[StancePoint]
    slice_shares: dict[str, dict[str, float]] | None = None  # 'before'/'after' -> label -> share
    slice_ratios: dict[str, float | None] | None = None  # label -> after/before share ratio


def stance_timeseries(
    corpus: Corpus,
    predictor,
    granularity: Granularity = Granularity.MONTH,
    slices: SlicePair | None = None,
) -> StanceTimeSeries:
    """Per-period stance shares for a corpus under a trained classifier.

    ``predictor`` must expose ``predict_corpus(corpus) -> (ids, labels)`` with
    labels drawn from the three-class stance set (argmax posteriors). When a
    slice pair is given, aggregate before/after shares and the after/before
    ratio per class are attached.
    """
    timestamped = [d for d in corpus if d.created_at is not None]
    if not timestamped:
        raise DataError("corpus has no time-stamped documents")
    ids, labels = predictor.predict_corpus(corpus)
    label_of = dict(zip(ids, labels))

    by_period: dict[str, Counter] = {}
    for d in timestamped:
        key = _period_key(d.created_at.astimezone(timezone.utc).date(), granularity)
        by_period.setdefault(key, Counter())[label_of[d.id]] += 1

    points = []
    for period in sorted(by_period):
        c = by_period[period]
        n = sum(c.values())
        points.append(
            StancePoint(
                period=period,
                positive=c[StanceLabel.POSITIVE] / n if n else None,
                neutral=c[StanceLabel.NEUTRAL] / n if n else None,
                negative=c[StanceLabel.NEGATIVE] / n if n else None,
                n=n,
            )
        )

    slice_shares = slice_ratios = None
    if slices is not None:
        agg = {"before": Counter(), "after": Counter()}
        for d in timestamped:
            lab = slices.label_for(d)
            if lab is not None:
                agg[lab.value][label_of[d.id]] += 1
        slice_shares = {}
        for key, c in agg.items():
            n = sum(c.values())
            slice_shares[key] = {
                sl.value: (c[sl] / n if n else 0.0) for sl in STANCE_LABELS
            }
        slice_ratios = {}
        for sl in STANCE_LABELS:
            b = slice_shares["before"][sl.value]
            a = slice_shares["after"][sl.value]
            slice_ratios[sl.value] = (a / b) if b > 0 else None
    return StanceTimeSeries(
        granularity=granularity, points=points, slice_shares=slice_shares, slice_ratios=slice_ratios
    )


def render_timeseries_chart(series: StanceTimeSeries, path) -> None:
    """Write a static line chart of per-period stance shares (PNG/SVG)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    periods = [p.period for p in series.points]
    fig, ax = plt.subplots(figsize=(10, 4))
    for attr, color in (("positive", "tab:blue"), ("negative", "tab:red")):
        ax.plot(
            periods,
            [getattr(p, attr) for p in series.points],
            marker="o",
            label=attr,
            color=color,
        )
    ax.set_ylabel("share of documents")
    ax.set_xlabel(series.granularity.value)
    ax.legend()
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)

"""Corpus ingestion, keyword/rule filtering, and time slicing.

Documents come in as line-delimited JSON; rule sets are declarative JSON
configs so a corpus definition can be reproduced exactly from a fixture file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DataError
from .textproc import normalize, tokenize


@dataclass(frozen=True)
class Document:
    """One short text with author and timing metadata."""

    id: str
    text: str
    author_id: str = ""
    created_at: datetime | None = None
    account_created_at: datetime | None = None
    language: str = ""
    hashtags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ValueError("document id must be non-empty")
        for h in self.hashtags:
            if "#" in h or any(c.isspace() for c in h):
                raise ValueError(f"invalid hashtag {h!r}: contains '#' or whitespace")


@dataclass(frozen=True)
class Corpus:
    """Named, ordered, id-unique collection of documents."""

    name: str
    documents: tuple[Document, ...] = ()
    rule_set_id: str = ""
    language: str = ""

    def __post_init__(self):
        seen = set()
        for d in self.documents:
            if d.id in seen:
                raise ValueError(f"duplicate document id {d.id!r} in corpus {self.name!r}")
            seen.add(d.id)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def ids(self) -> list[str]:
        return [d.id for d in self.documents]

    def by_id(self, doc_id: str) -> Document:
        for d in self.documents:
            if d.id == doc_id:
                return d
        raise KeyError(doc_id)

    def subset(self, doc_ids: Iterable[str], name: str | None = None) -> "Corpus":
        wanted = set(doc_ids)
        docs = tuple(d for d in self.documents if d.id in wanted)
        return replace(self, name=name or self.name, documents=docs)


class SliceLabel(str, Enum):
    BEFORE = "before"
    AFTER = "after"


@dataclass(frozen=True)
class TimeSlice:
    """Date-inclusive interval tagged before/after the split point."""

    label: SliceLabel
    start: date
    end: date

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"slice {self.label}: start {self.start} > end {self.end}")

    def contains(self, d: date) -> bool:
        return self.start <= d <= self.end


@dataclass(frozen=True)
class SlicePair:
    before: TimeSlice
    after: TimeSlice

    def __post_init__(self):
        if self.before.label is not SliceLabel.BEFORE or self.after.label is not SliceLabel.AFTER:
            raise ValueError("slice pair must be (before, after)")
        if self.before.end >= self.after.start:
            raise ValueError("before.end must precede after.start")

    def label_for(self, d: Document) -> SliceLabel | None:
        if d.created_at is None:
            return None
        day = d.created_at.astimezone(timezone.utc).date()
        if self.before.contains(day):
            return SliceLabel.BEFORE
        if self.after.contains(day):
            return SliceLabel.AFTER
        return None

    @staticmethod
    def from_dates(b_start: date, b_end: date, a_start: date, a_end: date) -> "SlicePair":
        return SlicePair(
            TimeSlice(SliceLabel.BEFORE, b_start, b_end),
            TimeSlice(SliceLabel.AFTER, a_start, a_end),
        )


class RuleKind(str, Enum):
    ANY_KEYWORD = "any_keyword"
    CONJUNCTIVE_SUBSETS = "conjunctive_subsets"
    HASHTAG_EXACT = "hashtag_exact"
    PHRASE_MATCH = "phrase_match"


class MatchMode(str, Enum):
    TOKEN_EXACT = "token"
    SUBSTRING = "substring"


@dataclass(frozen=True)
class FilterRule:
    """One declarative match rule over a document's text or hashtags."""

    kind: RuleKind
    keyword_sets: tuple[tuple[str, ...], ...]
    match_mode: MatchMode = MatchMode.TOKEN_EXACT
    name: str = ""

    def __post_init__(self):
        n_sets = len(self.keyword_sets)
        if self.kind is RuleKind.CONJUNCTIVE_SUBSETS:
            if n_sets != 2 or any(not s for s in self.keyword_sets):
                raise ValueError(f"rule {self.name!r}: conjunctive rule needs two non-empty keyword sets")
        else:
            if n_sets != 1:
                raise ValueError(f"rule {self.name!r}: {self.kind.value} rule needs exactly one keyword set")
            if not self.keyword_sets[0]:
                raise ValueError(f"rule {self.name!r}: empty keyword set")


@dataclass(frozen=True)
class IngestConfig:
    language: str = ""  # empty: keep all languages
    lenient: bool = False
    study_window: tuple[date, date] | None = None


@dataclass
class IngestResult:
    corpus: Corpus
    dropped_language: int = 0
    dropped_window: int = 0
    skipped_malformed: int = 0
    skipped_duplicates: int = 0


def _parse_timestamp(value, where: str) -> datetime | None:
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return datetime.fromtimestamp(value, tz=timezone.utc)
    try:
        ts = datetime.fromisoformat(str(value).replace("Z", "+00:00"))
    except ValueError as exc:
        raise DataError(f"{where}: unparseable timestamp {value!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _parse_record(obj: dict, where: str) -> Document:
    missing = [k for k in ("id", "text", "created_at", "language") if k not in obj]
    if missing:
        raise DataError(f"{where}: missing fields {missing}")
    hashtags = obj.get("hashtags") or []
    if not isinstance(hashtags, list):
        raise DataError(f"{where}: hashtags must be a list")
    try:
        return Document(
            id=str(obj["id"]),
            text=str(obj["text"]),
            author_id=str(obj.get("author_id", "")),
            created_at=_parse_timestamp(obj["created_at"], where),
            account_created_at=_parse_timestamp(obj.get("account_created_at"), where),
            language=str(obj["language"]),
            hashtags=tuple(str(h) for h in hashtags),
        )
    except ValueError as exc:
        raise DataError(f"{where}: {exc}") from exc


def ingest(path, config: IngestConfig = IngestConfig(), name: str = "") -> IngestResult:
    """Read line-delimited JSON documents into a corpus.

    Records failing the language filter or falling outside the study window
    are dropped and counted. Malformed records and duplicate ids are fatal
    unless ``config.lenient`` is set, in which case they are skipped and
    counted. Input order is preserved.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    docs: list[Document] = []
    seen: set[str] = set()
    result = IngestResult(corpus=Corpus(name=name or path.stem))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path.name}:{lineno}"
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise DataError(f"{where}: record is not an object")
                doc = _parse_record(obj, where)
            except (json.JSONDecodeError, DataError) as exc:
                if config.lenient:
                    result.skipped_malformed += 1
                    continue
                if isinstance(exc, DataError):
                    raise
                raise DataError(f"{where}: invalid JSON ({exc})") from exc
            if doc.id in seen:
                if config.lenient:
                    result.skipped_duplicates += 1
                    continue
                raise DataError(f"{where}: duplicate document id {doc.id!r}")
            if config.language and doc.language != config.language:
                result.dropped_language += 1
                continue
            if config.study_window is not None:
                lo, hi = config.study_window
                day = doc.created_at.astimezone(timezone.utc).date() if doc.created_at else None
                if day is None or not (lo <= day <= hi):
                    result.dropped_window += 1
                    continue
            seen.add(doc.id)
            docs.append(doc)
    result.corpus = Corpus(
        name=name or path.stem, documents=tuple(docs), language=config.language
    )
    return result


def write_corpus(corpus: Corpus, path) -> None:
    """Write a corpus back out as line-delimited JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in corpus:
            obj = {
                "id": d.id,
                "text": d.text,
                "author_id": d.author_id,
                "created_at": d.created_at.isoformat() if d.created_at else None,
                "account_created_at": (
                    d.account_created_at.isoformat() if d.account_created_at else None
                ),
                "language": d.language,
                "hashtags": list(d.hashtags),
            }
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


def _is_subsequence(needle: tuple[str, ...], haystack: tuple[str, ...]) -> bool:
    n, m = len(needle), len(haystack)
    if n == 0 or n > m:
        return n == 0
    return any(haystack[i : i + n] == needle for i in range(m - n + 1))


def rule_matches(rule: FilterRule, doc: Document) -> bool:
    """Whether one rule matches one document (normalized-token semantics)."""
    text_norm = normalize(doc.text)
    tokens = set(tokenize(doc.text, keep_hashtags=True))

    def hit(keyword: str) -> bool:
        kw = normalize(keyword)
        if rule.match_mode is MatchMode.SUBSTRING:
            return kw in text_norm
        return kw in tokens

    if rule.kind is RuleKind.ANY_KEYWORD:
        return any(hit(k) for k in rule.keyword_sets[0])
    if rule.kind is RuleKind.CONJUNCTIVE_SUBSETS:
        set_a, set_b = rule.keyword_sets
        return any(hit(k) for k in set_a) and any(hit(k) for k in set_b)
    if rule.kind is RuleKind.HASHTAG_EXACT:
        tags = {normalize(h) for h in doc.hashtags}
        return any(normalize(k).lstrip("#") in tags for k in rule.keyword_sets[0])
    if rule.kind is RuleKind.PHRASE_MATCH:
        doc_toks = tuple(tokenize(doc.text, keep_hashtags=True))
        return any(
            _is_subsequence(tuple(tokenize(k)), doc_toks) for k in rule.keyword_sets[0]
        )
    raise ValueError(f"unknown rule kind {rule.kind}")


def apply_rules(corpus: Corpus, rules: list[FilterRule], rule_set_id: str = "") -> Corpus:
    """Sub-corpus of documents matching at least one rule; order preserved."""
    if not rules:
        raise ValueError("rules must be non-empty")
    docs = tuple(d for d in corpus if any(rule_matches(r, d) for r in rules))
    return Corpus(
        name=corpus.name,
        documents=docs,
        rule_set_id=rule_set_id or corpus.rule_set_id,
        language=corpus.language,
    )


@dataclass
class SliceResult:
    slices: dict[SliceLabel, Corpus]
    excluded: int

    @property
    def before(self) -> Corpus:
        return self.slices[SliceLabel.BEFORE]

    @property
    def after(self) -> Corpus:
        return self.slices[SliceLabel.AFTER]


def slice_corpus(corpus: Corpus, slices: SlicePair) -> SliceResult:
    """Assign each document to at most one slice by UTC calendar date."""
    buckets: dict[SliceLabel, list[Document]] = {SliceLabel.BEFORE: [], SliceLabel.AFTER: []}
    excluded = 0
    for d in corpus:
        label = slices.label_for(d)
        if label is None:
            excluded += 1
        else:
            buckets[label].append(d)
    return SliceResult(
        slices={
            lab: Corpus(
                name=f"{corpus.name}:{lab.value}",
                documents=tuple(ds),
                rule_set_id=corpus.rule_set_id,
                language=corpus.language,
            )
            for lab, ds in buckets.items()
        },
        excluded=excluded,
    )


def phrase_filter(corpus: Corpus, phrase: str) -> Corpus:
    """Documents containing the phrase as a contiguous token subsequence."""
    if not phrase or not phrase.strip():
        raise ValueError("phrase must be non-empty")
    rule = FilterRule(
        kind=RuleKind.PHRASE_MATCH, keyword_sets=((phrase,),), name="phrase"
    )
    docs = tuple(d for d in corpus if rule_matches(rule, d))
    return Corpus(
        name=f"{corpus.name}:phrase",
        documents=docs,
        rule_set_id=corpus.rule_set_id,
        language=corpus.language,
    )


def load_rules(path) -> tuple[str, list[FilterRule]]:
    """Load a declarative rule-set config (JSON)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"rules file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path.name}: invalid JSON ({exc})") from exc
    rules = []
    for i, r in enumerate(obj.get("rules", [])):
        try:
            kind = RuleKind(r["kind"])
            mode = MatchMode(r.get("match_mode", "token"))
            if kind is RuleKind.CONJUNCTIVE_SUBSETS:
                sets = (tuple(r["keywords_a"]), tuple(r["keywords_b"]))
            else:
                sets = (tuple(r["keywords"]),)
            rules.append(
                FilterRule(kind=kind, keyword_sets=sets, match_mode=mode, name=r.get("name", f"rule{i}"))
            )
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path.name}: bad rule #{i}: {exc}") from exc
    if not rules:
        raise DataError(f"{path.name}: no rules defined")
    return str(obj.get("rule_set_id", path.stem)), rules

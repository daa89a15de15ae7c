"""Unicode-aware normalization, tokenization and n-gram counting.

Tuned for Persian-script short documents but script-agnostic: Arabic letter
variants are unified to their Persian forms, the zero-width non-joiner is
preserved inside tokens, and Latin-script text is case-folded.
"""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

URL_TOKEN = "<url>"
MENTION_TOKEN = "<mention>"

# Arabic-presentation letters folded onto Persian codepoints.
_LETTER_MAP = {0x064A: 0x06CC, 0x0643: 0x06A9}  # ي -> ی, ك -> ک

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_MENTION_RE = re.compile(r"@\w+")

# Token alternation, applied to normalized text. Order matters: sentinels and
# hashtags must win before the generic word branch. Underscore splits plain
# words (it is punctuation) but stays inside hashtags.
_EMOJI_RANGE = "←-⇿⌀-➿⬀-⯿️\U0001F000-\U0001FAFF"
_TOKEN_RE = re.compile(
    r"(?P<sentinel><url>|<mention>)"
    r"|(?P<hashtag>#[\w‌]+)"
    r"|(?P<word>(?:[^\W_]|‌)+)"
    rf"|(?P<emoji>[{_EMOJI_RANGE}])"
)


def normalize(text: str) -> str:
    """Canonicalize a raw string for matching and counting.

    NFC form, URLs and @-mentions replaced by sentinel tokens, Arabic letter
    variants mapped to Persian ones, non-Persian scripts case-folded.
    Idempotent: normalize(normalize(x)) == normalize(x).
    """
    s = unicodedata.normalize("NFC", text)
    s = _URL_RE.sub(URL_TOKEN, s)
    s = _MENTION_RE.sub(MENTION_TOKEN, s)
    s = s.translate(_LETTER_MAP)
    s = s.casefold()
    return unicodedata.normalize("NFC", s)


@dataclass(frozen=True)
class TokenStream:
    """Ordered normalized tokens for one source document."""

    tokens: tuple[str, ...]
    source_doc_id: str = ""

    def __post_init__(self):
        for t in self.tokens:
            if not t or any(c.isspace() for c in t):
                raise ValueError(f"invalid token {t!r}: empty or contains whitespace")

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


def tokenize(text: str, keep_hashtags: bool = False, source_doc_id: str = "") -> TokenStream:
    """Split normalized text into tokens.

    Splits on whitespace and punctuation. Hashtags are kept whole (with the
    leading '#' stripped) when ``keep_hashtags`` is set, dropped otherwise.
    Emoji become standalone single-character tokens.
    """
    s = normalize(text)
    tokens: list[str] = []
    for m in _TOKEN_RE.finditer(s):
        kind = m.lastgroup
        if kind == "hashtag":
            if keep_hashtags:
                tokens.append(m.group()[1:])
        else:
            tokens.append(m.group())
    return TokenStream(tuple(tokens), source_doc_id)


@dataclass
class NgramTable:
    """Counts of n-grams (token tuples) over a document collection."""

    n: int
    counts: dict[tuple[str, ...], int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def relative_frequencies(self) -> dict[tuple[str, ...], float]:
        """counts / total; empty table yields an empty map."""
        tot = self.total
        if tot == 0:
            return {}
        return {g: c / tot for g, c in self.counts.items()}

    def top(self, k: int) -> list[tuple[tuple[str, ...], int]]:
        """k most frequent n-grams, count descending, ties broken by n-gram."""
        return sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


def ngram_table(
    docs: Iterable[TokenStream | Sequence[str]],
    n: int,
    stopwords: frozenset[str] | set[str] = frozenset(),
    min_count: int = 1,
    denylist: frozenset[tuple[str, ...]] | set[tuple[str, ...]] = frozenset(),
) -> NgramTable:
    """Count n-grams across documents, windows never crossing doc boundaries.

    N-grams composed entirely of stop words are removed, as are n-grams on the
    denylist; entries with a count below ``min_count`` are dropped.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    counts: Counter[tuple[str, ...]] = Counter()
    for doc in docs:
        toks = tuple(doc.tokens if isinstance(doc, TokenStream) else doc)
        for i in range(len(toks) - n + 1):
            gram = toks[i : i + n]
            if stopwords and all(t in stopwords for t in gram):
                continue
            if gram in denylist:
                continue
            counts[gram] += 1
    kept = {g: c for g, c in counts.items() if c >= min_count}
    return NgramTable(n=n, counts=kept)


def load_wordlist(path) -> frozenset[str]:
    """Read a one-entry-per-line UTF-8 word list, normalizing each entry."""
    with open(path, encoding="utf-8") as fh:
        return frozenset(normalize(line.strip()) for line in fh if line.strip())


def load_ngram_denylist(path, n: int | None = None) -> frozenset[tuple[str, ...]]:
    """Read a one-entry-per-line n-gram denylist; entries are whitespace-joined tokens."""
    out = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            gram = tuple(tokenize(line.strip()))
            if n is not None and len(gram) != n:
                continue
            out.add(gram)
    return frozenset(out)

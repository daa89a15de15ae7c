import json
from datetime import datetime, timezone
from pathlib import Path

import pytest

from stancelab.corpus import Corpus, Document


def make_doc(doc_id, text, created="2022-05-01T12:00:00+00:00", language="fa", **kw):
    return Document(
        id=doc_id,
        text=text,
        created_at=datetime.fromisoformat(created) if created else None,
        language=language,
        **kw,
    )


@pytest.fixture
def tiny_corpus():
    return Corpus(
        name="tiny",
        documents=(
            make_doc("d1", "زنان ایران", created="2022-05-01T12:00:00+00:00"),
            make_doc("d2", "یک روز خوب", created="2022-10-01T12:00:00+00:00"),
            make_doc("d3", "دختر و آزادی", created="2022-09-15T23:00:00+00:00"),
        ),
    )


def write_jsonl(path: Path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


UTC = timezone.utc

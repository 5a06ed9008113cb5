"""Passage/Q&A dataset ingestion, validation, and seeded passage selection.

Two input formats are supported:

* ``canonical`` — UTF-8 JSON Lines, one passage per line::

      {"passage_id": "p1", "title": "...", "body": "...",
       "qa": [{"question": "...", "answer": "...", "kind": "explicit"}]}

* ``fairytaleqa`` — CSV export of the FairytaleQA corpus, one question per
  row with columns ``story_name``, ``content``, ``question``, ``answer1``
  (or ``answer``) and ``ex-or-im`` (or ``ex_or_im``).  Rows are grouped into
  one passage per story; the passage body is the story's distinct section
  texts joined in row order.

Passage selection is a uniform seeded draw over the eligible subset using
``random.Random(seed)`` (Mersenne Twister).  Identical (dataset digest,
min_qa_pairs, seed) triples therefore always yield the same passage within
this implementation.
"""

from __future__ import annotations

import csv
import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class DatasetError(Exception):
    """Base class for dataset ingestion failures."""


class ParseError(DatasetError):
    """A record failed to parse; carries the file and record locus."""

    def __init__(self, source: str, locus: int, message: str) -> None:
        super().__init__(f"{source}:{locus}: {message}")
        self.source = source
        self.locus = locus


class EmptyDataset(DatasetError):
    """The input parsed but produced zero passages."""


class DuplicatePassageId(DatasetError):
    """Two records claim the same passage_id."""


class NoEligiblePassage(DatasetError):
    """No passage satisfies the min_qa_pairs requirement."""


class QuestionKind(str, Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str
    kind: QuestionKind


@dataclass(frozen=True)
class Passage:
    passage_id: str
    title: str
    body: str
    qa_pairs: tuple[QAPair, ...]


@dataclass(frozen=True)
class Dataset:
    name: str
    passages: tuple[Passage, ...]
    source_digest: str
    load_warnings: tuple[str, ...] = ()

    def passage_by_id(self, passage_id: str) -> Passage:
        for passage in self.passages:
            if passage.passage_id == passage_id:
                return passage
        raise KeyError(passage_id)


@dataclass
class ValidationReport:
    """Exhaustive recount of a loaded dataset plus lint warnings."""

    dataset_name: str
    passage_count: int
    question_count: int
    kind_counts: dict[str, int]
    qa_histogram: dict[str, int]
    warnings: list[str] = field(default_factory=list)

    def render(self) -> str:
        lines = [
            f"dataset: {self.dataset_name}",
            f"passages: {self.passage_count}",
            f"questions: {self.question_count}",
            "kinds: "
            + ", ".join(f"{k}={v}" for k, v in sorted(self.kind_counts.items())),
        ]
        for pid, count in self.qa_histogram.items():
            lines.append(f"  {pid}: {count} qa pairs")
        for warning in self.warnings:
            lines.append(f"warning: {warning}")
        return "\n".join(lines)


def _digest_files(paths: list[Path]) -> str:
    h = hashlib.sha256()
    for p in sorted(paths):
        h.update(p.read_bytes())
    return h.hexdigest()


def _parse_kind(raw: object, locus: str, warnings: list[str]) -> QuestionKind:
    text = str(raw).strip().lower()
    if text == "explicit":
        return QuestionKind.EXPLICIT
    if text == "implicit":
        return QuestionKind.IMPLICIT
    warnings.append(f"{locus}: unknown question kind {raw!r}, treated as explicit")
    return QuestionKind.EXPLICIT


def load_canonical(path: Path) -> Dataset:
    source = str(path)
    warnings: list[str] = []
    passages: list[Passage] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                raise ParseError(source, lineno, f"invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise ParseError(source, lineno, "record is not an object")
            passage = _passage_from_record(record, source, lineno, warnings)
            if passage.passage_id in seen_ids:
                raise DuplicatePassageId(
                    f"{source}:{lineno}: duplicate passage_id {passage.passage_id!r}"
                )
            seen_ids.add(passage.passage_id)
            passages.append(passage)
    if not passages:
        raise EmptyDataset(f"{source}: no passages found")
    return Dataset(
        name=path.stem,
        passages=tuple(passages),
        source_digest=_digest_files([path]),
        load_warnings=tuple(warnings),
    )


def _passage_from_record(
    record: dict, source: str, lineno: int, warnings: list[str]
) -> Passage:
    for key in ("passage_id", "title", "body", "qa"):
        if key not in record:
            raise ParseError(source, lineno, f"missing field {key!r}")
    passage_id = str(record["passage_id"]).strip()
    if not passage_id:
        raise ParseError(source, lineno, "empty passage_id")
    body = str(record["body"])
    if not body.strip():
        raise ParseError(source, lineno, f"passage {passage_id!r} has empty body")
    if not isinstance(record["qa"], list):
        raise ParseError(source, lineno, "field 'qa' must be a list")
    pairs: list[QAPair] = []
    for idx, raw in enumerate(record["qa"]):
        if not isinstance(raw, dict):
            raise ParseError(source, lineno, f"qa[{idx}] is not an object")
        for key in ("question", "answer"):
            if key not in raw:
                raise ParseError(source, lineno, f"qa[{idx}] missing field {key!r}")
            if not str(raw[key]).strip():
                raise ParseError(source, lineno, f"qa[{idx}] has empty {key!r}")
        kind = _parse_kind(
            raw.get("kind", "explicit"),
            f"{source}:{lineno} qa[{idx}]",
            warnings,
        )
        pairs.append(
            QAPair(
                question=str(raw["question"]).strip(),
                answer=str(raw["answer"]).strip(),
                kind=kind,
            )
        )
    return Passage(
        passage_id=passage_id,
        title=str(record["title"]).strip(),
        body=body,
        qa_pairs=tuple(pairs),
    )


_SLUG_RE = re.compile(r"[^a-z0-9]+")


def _slug(text: str) -> str:
    return _SLUG_RE.sub("-", text.strip().lower()).strip("-")


def load_fairytaleqa(path: Path) -> Dataset:
    """Group per-question CSV rows into one passage per story.

    ``path`` may be a single CSV file or a directory of CSV files (the full
    corpus ships as several split files; all are merged).
    """
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise EmptyDataset(f"{path}: no CSV files found")
    else:
        files = [path]

    warnings: list[str] = []
    story_order: list[str] = []
    sections: dict[str, list[str]] = {}
    questions: dict[str, list[QAPair]] = {}

    for file in files:
        source = str(file)
        with open(file, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ParseError(source, 1, "missing CSV header")
            fields = set(reader.fieldnames)
            if "story_name" not in fields:
                raise ParseError(source, 1, "missing column 'story_name'")
            answer_col = "answer1" if "answer1" in fields else "answer"
            kind_col = "ex-or-im" if "ex-or-im" in fields else "ex_or_im"
            for key in ("content", "question", answer_col, kind_col):
                if key not in fields:
                    raise ParseError(source, 1, f"missing column {key!r}")
            for rowno, row in enumerate(reader, start=2):
                story = (row.get("story_name") or "").strip()
                if not story:
                    raise ParseError(source, rowno, "empty story_name")
                content = (row.get("content") or "").strip()
                if not content:
                    raise ParseError(source, rowno, "empty content")
                question = (row.get("question") or "").strip()
                if not question:
                    raise ParseError(source, rowno, "empty question")
                answer = (row.get(answer_col) or "").strip()
                if not answer:
                    raise ParseError(source, rowno, f"empty {answer_col}")
                kind = _parse_kind(row.get(kind_col), f"{source}:{rowno}", warnings)
                if story not in sections:
                    story_order.append(story)
                    sections[story] = []
                    questions[story] = []
                if content not in sections[story]:
                    sections[story].append(content)
                questions[story].append(QAPair(question, answer, kind))

    if not story_order:
        raise EmptyDataset(f"{path}: no rows found")

    passages = tuple(
        Passage(
            passage_id=_slug(story),
            title=story,
            body="\n\n".join(sections[story]),
            qa_pairs=tuple(questions[story]),
        )
        for story in story_order
    )
    seen: set[str] = set()
    for passage in passages:
        if passage.passage_id in seen:
            raise DuplicatePassageId(
                f"{path}: story slug collision on {passage.passage_id!r}"
            )
        seen.add(passage.passage_id)
    return Dataset(
        name=path.stem if path.is_file() else path.name,
        passages=passages,
        source_digest=_digest_files(files),
        load_warnings=tuple(warnings),
    )


ADAPTERS = {
    "canonical": load_canonical,
    "fairytaleqa": load_fairytaleqa,
}


def load_dataset(path: str | Path, dataset_format: str = "canonical") -> Dataset:
    try:
        adapter = ADAPTERS[dataset_format]
    except KeyError:
        raise DatasetError(
            f"unknown dataset format {dataset_format!r}; "
            f"known: {', '.join(sorted(ADAPTERS))}"
        ) from None
    try:
        return adapter(Path(path))
    except FileNotFoundError as exc:
        raise DatasetError(f"dataset file not found: {path}") from exc


def eligible_passages(dataset: Dataset, min_qa_pairs: int) -> list[Passage]:
    return [p for p in dataset.passages if len(p.qa_pairs) >= min_qa_pairs]


def select_passage(dataset: Dataset, min_qa_pairs: int, seed: int) -> Passage:
    """Uniform seeded draw over passages with at least ``min_qa_pairs`` pairs."""
    if min_qa_pairs < 1:
        raise ValueError("min_qa_pairs must be >= 1")
    eligible = eligible_passages(dataset, min_qa_pairs)
    if not eligible:
        raise NoEligiblePassage(
            f"no passage in {dataset.name!r} has >= {min_qa_pairs} qa pairs"
        )
    return random.Random(seed).choice(eligible)


def validate_dataset(dataset: Dataset) -> ValidationReport:
    kind_counts = {kind.value: 0 for kind in QuestionKind}
    qa_histogram: dict[str, int] = {}
    warnings = list(dataset.load_warnings)
    question_count = 0
    for passage in dataset.passages:
        qa_histogram[passage.passage_id] = len(passage.qa_pairs)
        question_count += len(passage.qa_pairs)
        if not passage.body.strip():
            warnings.append(f"passage {passage.passage_id!r} has empty body")
        if not passage.qa_pairs:
            warnings.append(f"passage {passage.passage_id!r} has no qa pairs")
        for pair in passage.qa_pairs:
            kind_counts[pair.kind.value] += 1
    return ValidationReport(
        dataset_name=dataset.name,
        passage_count=len(dataset.passages),
        question_count=question_count,
        kind_counts=kind_counts,
        qa_histogram=qa_histogram,
        warnings=warnings,
    )

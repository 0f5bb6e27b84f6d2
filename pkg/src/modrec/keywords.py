"""Slot-structured answer parsing and one-hot attribute encoding.

Generated item descriptions follow a ``[Slot] {Value}`` template with five
slots per domain. The parser is deliberately total and lenient: generation
drifts from the template, and mapping a drifted value to the Other token is
better than dropping the item. Per slot, the top-k most frequent keywords
are retained and everything else folds into Other, so a 5-slot schema with
k=50 yields 5 * 51 = 255 features.
"""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

OTHER_TOKEN = "Other"

_PUNCT = string.punctuation + string.whitespace
_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class PromptSchema:
    """A domain's five attribute slots, in prompt order."""

    domain_name: str
    slots: tuple[str, ...]

    def __post_init__(self):
        if len(self.slots) != 5:
            raise ValueError(f"schema needs exactly 5 slots, got {len(self.slots)}")
        if len(set(self.slots)) != len(self.slots):
            raise ValueError("slot names must be unique")

    @classmethod
    def from_json(cls, path) -> "PromptSchema":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data["domain_name"], tuple(data["slots"]))

    def to_json(self, path) -> None:
        Path(path).write_text(
            json.dumps({"domain_name": self.domain_name, "slots": list(self.slots)}, indent=2),
            encoding="utf-8",
        )


BUILTIN_SCHEMAS = {
    "baby": PromptSchema("baby", ("Category", "Age Group", "Purpose", "Material", "Usage Context")),
    "pets": PromptSchema("pets", ("Category", "Pet Type", "Purpose", "Material", "Usage Context")),
    "clothing": PromptSchema("clothing", ("Type", "Color", "Wear Location", "Material", "Style")),
}


def normalize_keyword(raw: str, synonym_map: dict[str, str] | None = None) -> str:
    """Canonicalize a keyword: case, whitespace, punctuation, plural suffixes.

    Suffix rules apply to the last token: -ies -> -y, -ses -> -s, and a
    trailing -s is stripped when the token is longer than 3 characters.
    The optional synonym map (variant -> canonical) is applied last.
    """
    s = _WS.sub(" ", raw.lower().strip()).strip(_PUNCT)
    if s:
        head, _, last = s.rpartition(" ")
        if last.endswith("ies"):
            last = last[:-3] + "y"
        elif last.endswith("ses"):
            last = last[:-3] + "s"
        elif last.endswith("s") and len(last) > 3:
            last = last[:-1]
        s = f"{head} {last}" if head else last
    if synonym_map:
        s = synonym_map.get(s, s)
    return s


@dataclass
class AttributeRecord:
    """Normalized slot values parsed from one item's generated description."""

    item_id: str
    values: dict[str, str] = field(default_factory=dict)
    parse_failed: bool = False


def _slot_pattern(slot: str) -> re.Pattern:
    words = r"\s+".join(re.escape(w) for w in slot.split())
    # Braced value, or a bare single word when the braces were dropped.
    return re.compile(
        rf"\[\s*{words}\s*\]\s*(?:\{{([^{{}}]*)\}}|([^\s\[{{,.;:]+))", re.IGNORECASE
    )


def parse_structured_answer(
    text: str,
    schema: PromptSchema,
    item_id: str = "",
    synonym_map: dict[str, str] | None = None,
) -> AttributeRecord:
    """Extract ``[Slot] {Value}`` pairs; unmatched slots are marked missing.

    Slot matching is case-insensitive and tolerates reordering, stray
    whitespace, missing braces around single-word values, and trailing
    prose. A record where nothing matched has ``parse_failed`` set.
    """
    values: dict[str, str] = {}
    for slot in schema.slots:
        m = _slot_pattern(slot).search(text or "")
        if not m:
            continue
        raw = m.group(1) if m.group(1) is not None else m.group(2)
        norm = normalize_keyword(raw, synonym_map)
        if norm:
            values[slot] = norm
    return AttributeRecord(item_id=item_id, values=values, parse_failed=not values)


@dataclass
class KeywordVocabulary:
    """Per-slot retained keywords plus an implicit Other token per slot."""

    slots: tuple[str, ...]
    retained: dict[str, list[str]]
    frequencies: dict[str, Counter]
    top_k: int

    @property
    def feature_names(self) -> list[str]:
        names = []
        for slot in self.slots:
            names.extend(f"{slot}={kw}" for kw in self.retained[slot])
            names.append(f"{slot}={OTHER_TOKEN}")
        return names

    @property
    def n_features(self) -> int:
        return sum(len(self.retained[s]) + 1 for s in self.slots)

    def slot_offsets(self) -> dict[str, int]:
        offsets = {}
        pos = 0
        for slot in self.slots:
            offsets[slot] = pos
            pos += len(self.retained[slot]) + 1
        return offsets


def build_vocabulary(
    records: list[AttributeRecord], schema: PromptSchema, top_k: int = 50
) -> KeywordVocabulary:
    """Count keyword frequencies per slot and retain the top_k of each.

    Ordering is by descending frequency with lexicographic tie-break, so the
    result is independent of record order.
    """
    if not records:
        raise ValueError("need at least one record")
    freqs = {slot: Counter() for slot in schema.slots}
    for rec in records:
        for slot, kw in rec.values.items():
            if slot in freqs:
                freqs[slot][kw] += 1
    retained = {
        slot: [kw for kw, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]]
        for slot, counter in freqs.items()
    }
    return KeywordVocabulary(schema.slots, retained, freqs, top_k)


def encode_one_hot(record: AttributeRecord, vocab: KeywordVocabulary) -> np.ndarray:
    """One bit per slot: the retained keyword's position, else the slot's Other bit."""
    vec = np.zeros(vocab.n_features, dtype=np.uint8)
    offsets = vocab.slot_offsets()
    for slot in vocab.slots:
        base = offsets[slot]
        kw = record.values.get(slot)
        retained = vocab.retained[slot]
        if kw is not None and kw in retained:
            vec[base + retained.index(kw)] = 1
        else:
            vec[base + len(retained)] = 1
    return vec


@dataclass
class AttributeMatrix:
    """Binary item-by-feature matrix with ``slot=keyword`` column names."""

    item_ids: list[str]
    matrix: np.ndarray
    feature_names: list[str]

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.uint8)
        if self.matrix.shape != (len(self.item_ids), len(self.feature_names)):
            raise ValueError("matrix shape must be (n_items, n_features)")

    @property
    def n_items(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]

    def to_tsv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write("item_id\t" + ",".join(self.feature_names) + "\n")
            for item_id, row in zip(self.item_ids, self.matrix):
                fh.write(item_id + "\t" + ",".join(str(int(b)) for b in row) + "\n")

    @classmethod
    def from_tsv(cls, path) -> "AttributeMatrix":
        with Path(path).open(encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            _, _, names = header.partition("\t")
            feature_names = names.split(",")
            item_ids = []
            rows = []
            for line in fh:
                if not line.strip():
                    continue
                item_id, _, bits = line.rstrip("\n").partition("\t")
                item_ids.append(item_id)
                rows.append([int(b) for b in bits.split(",")])
        return cls(item_ids, np.asarray(rows, dtype=np.uint8), feature_names)


@dataclass
class EncodingReport:
    n_records: int
    parse_failed: int
    missing_slot_counts: dict[str, int]
    other_hits: dict[str, int]


def build_attribute_matrix(
    records: list[AttributeRecord], vocab: KeywordVocabulary
) -> tuple[AttributeMatrix, EncodingReport]:
    """Encode all records; the report counts parse failures and Other fallbacks."""
    matrix = np.zeros((len(records), vocab.n_features), dtype=np.uint8)
    missing = dict.fromkeys(vocab.slots, 0)
    other = dict.fromkeys(vocab.slots, 0)
    offsets = vocab.slot_offsets()
    for r, rec in enumerate(records):
        matrix[r] = encode_one_hot(rec, vocab)
        for slot in vocab.slots:
            if slot not in rec.values:
                missing[slot] += 1
            if matrix[r, offsets[slot] + len(vocab.retained[slot])]:
                other[slot] += 1
    report = EncodingReport(
        n_records=len(records),
        parse_failed=sum(rec.parse_failed for rec in records),
        missing_slot_counts=missing,
        other_hits=other,
    )
    return AttributeMatrix([r.item_id for r in records], matrix, vocab.feature_names), report


def load_answers_tsv(path) -> list[tuple[str, str]]:
    """Read ``item_id<TAB>raw answer text`` rows."""
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            item_id, _, text = line.rstrip("\n").partition("\t")
            out.append((item_id, text))
    return out


def load_synonym_map(path) -> dict[str, str]:
    """Read ``variant<TAB>canonical`` rows, normalizing both sides."""
    mapping: dict[str, str] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            variant, _, canonical = line.rstrip("\n").partition("\t")
            mapping[normalize_keyword(variant)] = normalize_keyword(canonical)
    return mapping


def parse_answers(
    answers: list[tuple[str, str]],
    schema: PromptSchema,
    synonym_map: dict[str, str] | None = None,
) -> list[AttributeRecord]:
    return [
        parse_structured_answer(text, schema, item_id=item_id, synonym_map=synonym_map)
        for item_id, text in answers
    ]

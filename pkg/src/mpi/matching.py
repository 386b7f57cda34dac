"""Probabilistic record linkage: pairwise scoring with log-likelihood
field weights, match / possible / non-match classification, and the
blocked dedup scan over a registry view.

Agreement on a field contributes log2(m/u); disagreement contributes
log2((1-m)/(1-u)); a field missing on either side contributes nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date
from enum import Enum
from typing import Iterable, Optional, Sequence

from .errors import MalformedInput, SelfComparison, ValidationFailed
from .identity import IdentifierKind, PatientRecord, Sex, StatusKind


class MatchField(str, Enum):
    NIC = "NIC"
    FAMILY_NAME = "FAMILY_NAME"
    GIVEN_NAME = "GIVEN_NAME"
    DOB = "DOB"
    SEX = "SEX"
    ADDRESS = "ADDRESS"


class CompareMethod(str, Enum):
    EXACT = "EXACT"
    JARO_WINKLER = "JARO_WINKLER"
    DATE_PARTS = "DATE_PARTS"


MISSING = None  # sentinel meaning "no evidence either way"


@dataclass(frozen=True)
class ComparatorConfig:
    field: MatchField
    method: CompareMethod
    m: float
    u: float
    threshold: Optional[float] = None  # JARO_WINKLER similarity cutoff

    def __post_init__(self):
        if not (0 < self.m < 1 and 0 < self.u < 1):
            raise ValidationFailed("m and u must lie in (0,1)")
        if self.m <= self.u:
            raise ValidationFailed("m must exceed u (agreement must favor a match)")
        if self.method is CompareMethod.JARO_WINKLER:
            if self.threshold is None or not (0 < self.threshold <= 1):
                raise ValidationFailed("JARO_WINKLER needs a threshold in (0,1]")


@dataclass(frozen=True)
class Thresholds:
    upper: float
    lower: float

    def __post_init__(self):
        if self.upper <= self.lower:
            raise ValidationFailed("upper threshold must exceed lower")


class Decision(str, Enum):
    MATCH = "MATCH"
    POSSIBLE = "POSSIBLE"
    NON_MATCH = "NON_MATCH"


@dataclass(frozen=True)
class FieldComparison:
    field: MatchField
    agreed: Optional[bool]  # None = MISSING
    weight: float


@dataclass(frozen=True)
class MatchResult:
    pair: tuple
    per_field: tuple
    total: float
    decision: Decision

    def sorted_pair(self) -> tuple:
        return tuple(sorted(self.pair))

    def to_dict(self) -> dict:
        return {
            "pair": list(self.pair),
            "per_field": [
                {"field": fc.field.value, "agreed": fc.agreed, "weight": fc.weight}
                for fc in self.per_field
            ],
            "total": self.total,
            "decision": self.decision.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatchResult":
        return cls(
            pair=tuple(d["pair"]),
            per_field=tuple(
                FieldComparison(MatchField(fc["field"]), fc["agreed"], fc["weight"])
                for fc in d["per_field"]
            ),
            total=d["total"],
            decision=Decision(d["decision"]),
        )


# shipped starting point; overridable via comparator config file
DEFAULT_CONFIGS = (
    ComparatorConfig(MatchField.NIC, CompareMethod.EXACT, m=0.95, u=0.001),
    ComparatorConfig(MatchField.FAMILY_NAME, CompareMethod.JARO_WINKLER, m=0.9, u=0.02, threshold=0.92),
    ComparatorConfig(MatchField.GIVEN_NAME, CompareMethod.JARO_WINKLER, m=0.85, u=0.05, threshold=0.92),
    ComparatorConfig(MatchField.DOB, CompareMethod.DATE_PARTS, m=0.9, u=0.01),
    ComparatorConfig(MatchField.SEX, CompareMethod.EXACT, m=0.98, u=0.5),
    ComparatorConfig(MatchField.ADDRESS, CompareMethod.JARO_WINKLER, m=0.7, u=0.1, threshold=0.90),
)
DEFAULT_THRESHOLDS = Thresholds(upper=8.0, lower=0.0)


# --- string similarity ---

def jaro(a: str, b: str) -> float:
    if not a or not b:
        return 0.0
    if a == b:
        return 1.0
    window = max(len(a), len(b)) // 2 - 1
    window = max(window, 0)
    a_flags = [False] * len(a)
    b_flags = [False] * len(b)
    matches = 0
    for i, ch in enumerate(a):
        lo = max(0, i - window)
        hi = min(len(b), i + window + 1)
        for j in range(lo, hi):
            if not b_flags[j] and b[j] == ch:
                a_flags[i] = b_flags[j] = True
                matches += 1
                break
    if matches == 0:
        return 0.0
    transpositions = 0
    j = 0
    for i, ch in enumerate(a):
        if a_flags[i]:
            while not b_flags[j]:
                j += 1
            if ch != b[j]:
                transpositions += 1
            j += 1
    t = transpositions // 2
    m = matches
    return (m / len(a) + m / len(b) + (m - t) / m) / 3


def jaro_winkler(a: str, b: str, prefix_scale: float = 0.1) -> float:
    base = jaro(a, b)
    prefix = 0
    for x, y in zip(a[:4], b[:4]):
        if x != y:
            break
        prefix += 1
    return base + prefix * prefix_scale * (1 - base)


def soundex(name: str) -> str:
    """American Soundex code, used only for blocking."""
    name = "".join(ch for ch in name.upper() if ch.isalpha())
    if not name:
        return ""
    codes = {
        **dict.fromkeys("BFPV", "1"), **dict.fromkeys("CGJKQSXZ", "2"),
        **dict.fromkeys("DT", "3"), "L": "4", **dict.fromkeys("MN", "5"), "R": "6",
    }
    first = name[0]
    out = [first]
    prev = codes.get(first, "")
    for ch in name[1:]:
        code = codes.get(ch, "")
        if code and code != prev:
            out.append(code)
        if ch not in "HW":
            prev = code
    return ("".join(out) + "000")[:4]


# --- field comparison and weights ---

def field_weight(config: ComparatorConfig, agreed: bool) -> float:
    if agreed:
        return math.log2(config.m / config.u)
    return math.log2((1 - config.m) / (1 - config.u))


def _normalize_text(value: str) -> str:
    return " ".join(value.split()).upper()


def compare_field(config: ComparatorConfig, a, b) -> Optional[bool]:
    """True/False agreement, or MISSING (None) when either side is empty."""
    if a is None or b is None or a == "" or b == "":
        return MISSING
    if config.method is CompareMethod.DATE_PARTS:
        if not isinstance(a, date) or not isinstance(b, date):
            raise ValidationFailed("DATE_PARTS compares calendar dates")
        if a == b:
            return True
        # day/month transposition is a common keying error, not a disagreement
        if a.year == b.year and a.month == b.day and a.day == b.month:
            return True
        return False
    a_n, b_n = _normalize_text(str(a)), _normalize_text(str(b))
    if config.method is CompareMethod.EXACT:
        return a_n == b_n
    return jaro_winkler(a_n, b_n) >= (config.threshold or 1.0)


def record_field_value(record: PatientRecord, field: MatchField):
    if field is MatchField.NIC:
        return record.first_identifier(IdentifierKind.NIC)
    if field is MatchField.FAMILY_NAME:
        return record.profile.family_name or None
    if field is MatchField.GIVEN_NAME:
        return " ".join(record.profile.given_names) or None
    if field is MatchField.DOB:
        return record.profile.date_of_birth
    if field is MatchField.SEX:
        return None if record.profile.sex is Sex.U else record.profile.sex.value
    if field is MatchField.ADDRESS:
        return " ".join(record.profile.address_lines) or None
    raise ValidationFailed(f"unknown match field {field}")


def classify(total: float, thresholds: Thresholds) -> Decision:
    if total >= thresholds.upper:
        return Decision.MATCH
    if total < thresholds.lower:
        return Decision.NON_MATCH
    return Decision.POSSIBLE


def score_pair(configs: Sequence[ComparatorConfig], a: PatientRecord, b: PatientRecord,
               thresholds: Thresholds) -> MatchResult:
    if a.phn == b.phn:
        raise SelfComparison(f"cannot compare {a.phn} with itself")
    per_field = []
    total = 0.0
    for config in configs:
        agreed = compare_field(config, record_field_value(a, config.field),
                               record_field_value(b, config.field))
        weight = 0.0 if agreed is MISSING else field_weight(config, agreed)
        per_field.append(FieldComparison(config.field, agreed, weight))
        total += weight
    return MatchResult(
        pair=(a.phn, b.phn),
        per_field=tuple(per_field),
        total=total,
        decision=classify(total, thresholds),
    )


# --- blocking ---

def blocking_keys(record: PatientRecord) -> set:
    keys = set()
    nic = record.first_identifier(IdentifierKind.NIC)
    if nic:
        keys.add(("nic", nic))
    if record.profile.family_name:
        keys.add(("name_yob", soundex(record.profile.family_name),
                  record.profile.date_of_birth.year))
    keys.add(("dob", record.profile.date_of_birth.isoformat()))
    return keys


def _comparable(record: PatientRecord) -> bool:
    return record.status.kind is not StatusKind.RETIRED_MERGED


def find_candidates(records: Iterable[PatientRecord], record: PatientRecord) -> list:
    """Records sharing >= 1 blocking key with ``record``; excludes itself
    and retired records."""
    keys = blocking_keys(record)
    out = []
    for other in records:
        if other.phn == record.phn or not _comparable(other):
            continue
        if keys & blocking_keys(other):
            out.append(other)
    return sorted(out, key=lambda r: r.phn)


def candidate_pairs(records: Sequence[PatientRecord]) -> list:
    """All unordered comparable pairs sharing >= 1 blocking key, each once."""
    index: dict = {}
    live = [r for r in records if _comparable(r)]
    for rec in live:
        for key in blocking_keys(rec):
            index.setdefault(key, []).append(rec)
    seen = set()
    pairs = []
    for bucket in index.values():
        bucket.sort(key=lambda r: r.phn)
        for i in range(len(bucket)):
            for j in range(i + 1, len(bucket)):
                pk = (bucket[i].phn, bucket[j].phn)
                if pk not in seen:
                    seen.add(pk)
                    pairs.append((bucket[i], bucket[j]))
    pairs.sort(key=lambda p: (p[0].phn, p[1].phn))
    return pairs


def dedup_scan(records: Sequence[PatientRecord], configs: Sequence[ComparatorConfig],
               thresholds: Thresholds, excluded: Optional[set] = None) -> list:
    """Score every blocked candidate pair once; return MATCH and POSSIBLE
    results sorted by total descending (ties by pair PHNs ascending)."""
    excluded = excluded or set()
    results = []
    for a, b in candidate_pairs(records):
        if frozenset((a.phn, b.phn)) in excluded:
            continue
        result = score_pair(configs, a, b, thresholds)
        if result.decision is not Decision.NON_MATCH:
            results.append(result)
    results.sort(key=lambda r: (-r.total, r.sorted_pair()))
    return results


# --- comparator configuration file ---

def emit_config(configs: Sequence[ComparatorConfig], thresholds: Thresholds) -> str:
    lines = []
    for c in configs:
        param = "" if c.threshold is None else repr(c.threshold)
        lines.append(f"{c.field.value}\t{c.method.value}\t{param}\t{c.m!r}\t{c.u!r}")
    lines.append(f"THRESHOLDS\t{thresholds.upper!r}\t{thresholds.lower!r}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> tuple:
    """(configs, thresholds) from the line-oriented comparator file."""
    configs = []
    thresholds = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        try:
            if parts[0] == "THRESHOLDS":
                thresholds = Thresholds(upper=float(parts[1]), lower=float(parts[2]))
                continue
            field = MatchField(parts[0])
            method = CompareMethod(parts[1])
            threshold = float(parts[2]) if parts[2] else None
            m, u = float(parts[3]), float(parts[4])
        except (IndexError, ValueError) as exc:
            raise MalformedInput(f"comparator config line {lineno}: {exc}") from exc
        configs.append(ComparatorConfig(field, method, m=m, u=u, threshold=threshold))
    if thresholds is None:
        thresholds = DEFAULT_THRESHOLDS
    if not configs:
        raise MalformedInput("comparator config declares no comparators")
    return configs, thresholds

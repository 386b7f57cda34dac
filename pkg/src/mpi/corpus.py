"""Synthetic patient corpus with ground-truth duplicates, and the
precision/recall evaluation of a linkage run against that truth.

Generation is fully deterministic under a seed: the same CorruptionSpec
yields byte-identical record and truth files.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from datetime import date, timedelta
from importlib import resources
from typing import Iterable, Optional, Sequence

from .errors import MalformedInput
from .identity import (
    DemographicProfile,
    Identifier,
    IdentifierKind,
    PatientRecord,
    RecordStatus,
    Sex,
    phn_for_sequence,
)


@dataclass(frozen=True)
class CorruptionSpec:
    duplicate_rate: float = 0.1
    p_name_typo: float = 0.4
    p_dob_swap: float = 0.25
    p_missing_nic: float = 0.5
    p_address_variation: float = 0.5
    seed: int = 42

    def __post_init__(self):
        for name in ("duplicate_rate", "p_name_typo", "p_dob_swap",
                     "p_missing_nic", "p_address_variation"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise MalformedInput(f"{name} must lie in [0,1], got {value}")


def _pool(name: str) -> list:
    text = resources.files("mpi.data").joinpath(name).read_text(encoding="utf-8")
    return [line for line in text.splitlines() if line]


def _make_nic(rng: random.Random, dob: date, sex: str, serial: int) -> str:
    day_of_year = dob.timetuple().tm_yday + (500 if sex == "F" else 0)
    return f"{dob.year % 100:02d}{day_of_year:03d}{serial % 10000:04d}V"


def _base_record(rng: random.Random, index: int, pools: dict) -> dict:
    sex = rng.choice(["M", "F"])
    given_pool = pools["male"] if sex == "M" else pools["female"]
    dob = date(1930, 1, 1) + timedelta(days=rng.randrange(0, 34000))
    given = [rng.choice(given_pool)]
    if rng.random() < 0.4:
        second = rng.choice(given_pool)
        if second != given[0]:
            given.append(second)
    address = [f"NO {rng.randrange(1, 200)}, {rng.choice(pools['streets'])}",
               rng.choice(pools["towns"])]
    return {
        "id": f"P{index:06d}",
        "profile": {
            "family_name": rng.choice(pools["family"]),
            "given_names": given,
            "date_of_birth": dob.isoformat(),
            "sex": sex,
            "address_lines": address,
            "contact_number": None,
            "anonymity_requested": False,
        },
        "identifiers": [
            {"kind": "NIC", "value": _make_nic(rng, dob, sex, index)},
        ],
    }


def _typo(rng: random.Random, word: str) -> str:
    if len(word) < 3:
        return word + "A"
    pos = rng.randrange(1, len(word) - 1)
    if rng.random() < 0.5:
        # adjacent transposition
        chars = list(word)
        chars[pos], chars[pos + 1] = chars[pos + 1], chars[pos]
        return "".join(chars)
    replacement = rng.choice("AEIOUKLMNRST")
    return word[:pos] + replacement + word[pos + 1:]


def _corrupt(rng: random.Random, base: dict, dup_index: int,
             spec: CorruptionSpec) -> dict:
    dup = json.loads(json.dumps(base))
    dup["id"] = f"D{dup_index:06d}"
    profile = dup["profile"]
    if rng.random() < spec.p_name_typo:
        profile["family_name"] = _typo(rng, profile["family_name"])
    if rng.random() < spec.p_dob_swap:
        dob = date.fromisoformat(profile["date_of_birth"])
        if dob.day <= 12 and dob.day != dob.month:
            profile["date_of_birth"] = dob.replace(month=dob.day,
                                                   day=dob.month).isoformat()
    if rng.random() < spec.p_missing_nic:
        dup["identifiers"] = [i for i in dup["identifiers"] if i["kind"] != "NIC"]
    if rng.random() < spec.p_address_variation:
        lines = profile["address_lines"]
        if lines:
            lines[0] = lines[0].replace("ROAD", "RD").replace("STREET", "ST")
            if rng.random() < 0.5:
                lines[0] = f"NO {rng.randrange(1, 200)}," + lines[0].split(",", 1)[1]
    return dup


def generate_corpus(n: int, spec: CorruptionSpec) -> tuple:
    """n base records plus ceil(n * duplicate_rate) corrupted duplicates.

    Returns (records, truth) where truth lists ground-truth duplicate pairs
    by placeholder id.
    """
    if n < 1:
        raise MalformedInput("corpus size must be >= 1")
    rng = random.Random(spec.seed)
    pools = {
        "family": _pool("family_names.txt"),
        "male": _pool("given_names_male.txt"),
        "female": _pool("given_names_female.txt"),
        "streets": _pool("streets.txt"),
        "towns": _pool("towns.txt"),
    }
    records = [_base_record(rng, i + 1, pools) for i in range(n)]
    n_dups = -(-int(n * spec.duplicate_rate * 1000) // 1000)  # ceil without float drift
    n_dups = min(n_dups, n)
    truth = []
    if n_dups:
        targets = rng.sample(range(n), n_dups)
        for k, idx in enumerate(targets, start=1):
            dup = _corrupt(rng, records[idx], k, spec)
            records.append(dup)
            truth.append(tuple(sorted((records[idx]["id"], dup["id"]))))
    truth.sort()
    return records, truth


def write_corpus(records: Sequence[dict], truth: Sequence[tuple],
                 records_path, truth_path) -> None:
    with open(records_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    with open(truth_path, "w", encoding="utf-8") as fh:
        for a, b in truth:
            fh.write(f"{a}\t{b}\n")


def read_corpus(records_path) -> list:
    records = []
    with open(records_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def read_pairs(path) -> list:
    """TAB-separated pair file; an optional third column labels the pair."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 2:
                raise MalformedInput(f"{path} line {lineno}: expected two columns")
            pairs.append((parts[0], parts[1], parts[2] if len(parts) > 2 else "MATCH"))
    return pairs


def corpus_patient_records(records: Sequence[dict]) -> tuple:
    """Materialize corpus rows as PatientRecords with sequentially issued
    PHNs; returns (records, placeholder id -> PHN map)."""
    out = []
    id_map = {}
    for i, rec in enumerate(records):
        phn = phn_for_sequence(i + 1)
        id_map[rec["id"]] = phn
        identifiers = {Identifier.from_dict(d) for d in rec["identifiers"]}
        identifiers.add(Identifier(IdentifierKind.PHN, phn))
        out.append(PatientRecord(
            phn=phn,
            profile=DemographicProfile.from_dict(rec["profile"]),
            identifiers=frozenset(identifiers),
            status=RecordStatus.active(),
        ))
    return out, id_map


def evaluate_linkage(predicted: Iterable[tuple], truth: Iterable[tuple],
                     positive_labels: frozenset = frozenset({"MATCH", "APPROVED"})) -> dict:
    """Precision/recall over unordered pairs. ``predicted`` rows may carry a
    label; only MATCH and steward-APPROVED rows count as positive."""
    truth_set = {frozenset(p[:2]) for p in truth}
    predicted_set = set()
    for row in predicted:
        label = row[2] if len(row) > 2 else "MATCH"
        if label in positive_labels:
            predicted_set.add(frozenset(row[:2]))
    tp = len(predicted_set & truth_set)
    fp = len(predicted_set - truth_set)
    fn = len(truth_set - predicted_set)
    degenerate = not predicted_set
    precision = 1.0 if degenerate else tp / (tp + fp)
    recall = 1.0 if not truth_set else tp / (tp + fn)
    return {
        "tp": tp, "fp": fp, "fn": fn,
        "precision": precision,
        "recall": recall,
        "no_predictions": degenerate,
    }

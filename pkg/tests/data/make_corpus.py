"""One-off generator for the golden HL7 corpus (hl7_corpus.er7).

Run from the repository root:  python3 tests/data/make_corpus.py

The corpus stores one ER7 message per line: each message uses CR segment
terminators internally and messages are separated by a single LF.  Every
message is checked to be canonical (emit(parse(x)) == x) before writing.
"""

import random
import sys
from datetime import date, datetime, timezone
from pathlib import Path

from mpi import hl7
from mpi.identity import (
    DemographicProfile,
    Identifier,
    IdentifierKind,
    PatientRecord,
    RecordStatus,
    Sex,
    phn_for_sequence,
)

RNG = random.Random(20260101)

FAMILIES = ["PERERA", "FERNANDO", "SILVA", "DISSANAYAKE", "JAYAWARDENA",
            "O'BRIEN-SMITH", "GUNAWARDENA", "RAJAPAKSA", "WICKRAMASINGHE",
            "BANDARA", "KUMARASWAMY", "MOHAMED"]
GIVENS = ["NIMAL", "KAMAL", "SUNIL", "AMARA", "CHAMARI", "DILSHAN",
          "PRIYA", "RUWAN", "SANDUNI", "THARINDU"]
STREETS = ["GALLE ROAD", "KANDY ROAD", "TEMPLE LANE", "STATION ROAD",
           "MAIN STREET", "HOSPITAL ROAD"]
TOWNS = ["COLOMBO", "KANDY", "GALLE", "JAFFNA", "MATARA", "KURUNEGALA"]

# Strings that exercise every escape sequence when rendered into fields.
SPICY = ["A|B", "X^Y", "P&Q", "R~S", "BACK\\SLASH", "ALL|OF^THE&FUN~HERE\\"]


def _nic(i):
    return f"{60 + i % 40:02d}{100 + i % 200:03d}{1000 + i:04d}V"


def _profile(i, spicy=False):
    family = SPICY[i % len(SPICY)] if spicy else FAMILIES[i % len(FAMILIES)]
    givens = (GIVENS[i % len(GIVENS)],)
    if i % 3 == 0:
        givens = givens + (GIVENS[(i + 4) % len(GIVENS)],)
    address = (f"NO {i + 1}, {STREETS[i % len(STREETS)]}", TOWNS[i % len(TOWNS)])
    if spicy:
        address = (SPICY[(i + 2) % len(SPICY)],) + address[1:]
    return DemographicProfile(
        family_name=family, given_names=givens,
        date_of_birth=date(1950 + i % 60, 1 + i % 12, 1 + i % 28),
        sex=[Sex.M, Sex.F, Sex.U][i % 3],
        address_lines=address,
        contact_number=f"+9477{1000000 + i * 37}" if i % 2 == 0 else "")


def _record(i, spicy=False, extra_ids=0):
    phn = phn_for_sequence(i + 1)
    identifiers = {Identifier(IdentifierKind.PHN, phn),
                   Identifier(IdentifierKind.NIC, _nic(i), "DRP")}
    pool = [
        Identifier(IdentifierKind.PASSPORT, f"N{7000000 + i}", "IMMIGRATION"),
        Identifier(IdentifierKind.DRIVING_LICENSE, f"B{880000 + i}"),
        Identifier(IdentifierKind.ELDERLY_NUMBER, f"E{5500 + i}"),
        Identifier(IdentifierKind.EMAIL, f"patient{i}@example.lk"),
    ]
    identifiers.update(pool[:extra_ids])
    return PatientRecord(
        phn=phn, profile=_profile(i, spicy=spicy),
        identifiers=frozenset(identifiers), status=RecordStatus.active())


def build_messages():
    messages = []
    at = datetime(2026, 1, 1, 8, 0, 0, tzinfo=timezone.utc)
    n = 0

    def stamp():
        nonlocal n
        n += 1
        return datetime(2026, 1, 1, 8, n // 60, n % 60, tzinfo=timezone.utc)

    # 16 A04 registrations with varying identifier mixes and spicy text
    for i in range(16):
        messages.append(hl7.build_adt(
            hl7.MessageKind.ADT_A04, _record(i, spicy=i % 4 == 3, extra_ids=i % 5),
            sender=("HHIMS", f"HOSP{i % 6 + 1}"), receiver=("MPI", "MOH"),
            control_id=f"CORP{len(messages) + 1:04d}", at=stamp()))

    # 10 A08 updates
    for i in range(10):
        messages.append(hl7.build_adt(
            hl7.MessageKind.ADT_A08, _record(i + 16, spicy=i % 5 == 2, extra_ids=i % 4),
            sender=("HHIMS", f"HOSP{i % 6 + 1}"), receiver=("MPI", "MOH"),
            control_id=f"CORP{len(messages) + 1:04d}", at=stamp()))

    # 6 A40 merges
    for i in range(6):
        messages.append(hl7.build_adt(
            hl7.MessageKind.ADT_A40, _record(i + 26, extra_ids=i % 3),
            retired=phn_for_sequence(100 + i),
            sender=("MPI", "MOH"), receiver=("HHIMS", f"HOSP{i % 6 + 1}"),
            control_id=f"CORP{len(messages) + 1:04d}", at=stamp()))

    # 8 QBP^Q22 queries over each criterion shape
    criteria_shapes = [
        [(IdentifierKind.NIC, _nic(3))],
        [(IdentifierKind.PHN, phn_for_sequence(4))],
        [(IdentifierKind.PASSPORT, "N7000005")],
        [(IdentifierKind.NAME_KEY, "PERERA NIMAL")],
        [(IdentifierKind.NIC, _nic(7)), (IdentifierKind.NAME_KEY, "SILVA KAMAL")],
        [(IdentifierKind.EMAIL, "patient9@example.lk")],
        [(IdentifierKind.DRIVING_LICENSE, "B880011")],
        [(IdentifierKind.NAME_KEY, "O'BRIEN-SMITH AMARA")],
    ]
    qbps = []
    for i, criteria in enumerate(criteria_shapes):
        msg = hl7.build_qbp_q22(
            criteria, sender=("EMR", f"CLINIC{i % 3 + 1}"), receiver=("MPI", "MOH"),
            control_id=f"CORP{len(messages) + 1:04d}", at=stamp())
        qbps.append(msg)
        messages.append(msg)

    # 5 RSP^K22 responses: hits of varying width plus a no-match
    for i, hits in enumerate([1, 2, 3, 0, 2]):
        records = [_record(30 + i * 3 + k, extra_ids=k) for k in range(hits)]
        messages.append(hl7.build_rsp_k22(
            qbps[i], records,
            control_id=f"CORP{len(messages) + 1:04d}", at=stamp()))

    # 5 ACKs: accept, errors with spicy reasons, reject
    originals = [messages[0], messages[5], messages[17], messages[27], messages[1]]
    for i, (code, reason) in enumerate([
            ("AA", "PHN 00000000018"),
            ("AE", "DUPLICATE_IDENTIFIER: NIC already registered"),
            ("AE", "bad value a|b^c in PID"),
            ("AR", "AUTH_REQUIRED"),
            ("AA", "")]):
        messages.append(hl7.build_ack(
            originals[i], code, reason,
            control_id=f"CORP{len(messages) + 1:04d}", at=stamp()))

    assert len(messages) == 50
    return messages


def main():
    out = Path(__file__).with_name("hl7_corpus.er7")
    lines = []
    for msg in build_messages():
        text = hl7.emit_er7(msg)
        reparsed = hl7.parse_er7(text)
        assert hl7.emit_er7(reparsed) == text, "corpus message not canonical"
        assert reparsed == msg, "corpus message lost structure"
        lines.append(text)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} messages to {out}")


if __name__ == "__main__":
    sys.exit(main())

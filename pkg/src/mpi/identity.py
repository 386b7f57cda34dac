"""Patient identity domain types: the PHN identifier scheme, searchable
identifier kinds, demographic profiles, and the indexed patient record.

All types here are immutable values; mutation happens by constructing a
replacement (see :mod:`mpi.registry` for the single-writer discipline).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from enum import Enum
from typing import Optional

from .errors import FormatInvalid, SequenceExhausted, SequenceReused, ValidationFailed

PHN_LENGTH = 11
SEQUENCE_LIMIT = 10**10

_NIC_OLD = re.compile(r"^\d{9}[VX]$")
_NIC_NEW = re.compile(r"^\d{12}$")
_OPAQUE_TOKEN = re.compile(r"^[A-Z0-9/-]{1,32}$")


def luhn_check_digit(base: str) -> int:
    """Check digit that makes ``base + digit`` pass the Luhn test."""
    total = 0
    double = True  # position adjacent to the check digit is doubled
    for ch in reversed(base):
        d = int(ch)
        if double:
            d *= 2
            if d > 9:
                d -= 9
        total += d
        double = not double
    return (10 - total % 10) % 10


def phn_for_sequence(sequence: int) -> str:
    """Pure PHN derivation: 10-digit zero-padded sequence + Luhn check digit."""
    if sequence < 0 or sequence >= SEQUENCE_LIMIT:
        raise SequenceExhausted(f"sequence {sequence} outside [0, 10^10)")
    base = f"{sequence:010d}"
    return base + str(luhn_check_digit(base))


def validate_phn(candidate: str) -> bool:
    """True iff ``candidate`` is 11 decimal digits with a correct Luhn check digit."""
    if len(candidate) != PHN_LENGTH or not candidate.isdigit():
        return False
    return luhn_check_digit(candidate[:10]) == int(candidate[10])


class PhnIssuer:
    """Serialized PHN allocation for one registry instance.

    Sequences must be strictly increasing; reissuing any sequence at or
    below the high-water mark is rejected.
    """

    def __init__(self, next_sequence: int = 0):
        self._next = next_sequence

    @property
    def next_sequence(self) -> int:
        return self._next

    def issue(self, sequence: Optional[int] = None) -> str:
        if sequence is None:
            sequence = self._next
        if sequence >= SEQUENCE_LIMIT:
            raise SequenceExhausted(f"sequence {sequence} >= 10^10")
        if sequence < self._next:
            raise SequenceReused(f"sequence {sequence} already issued")
        phn = phn_for_sequence(sequence)
        self._next = sequence + 1
        return phn


def issue_phn(sequence: int, issuer: Optional[PhnIssuer] = None) -> str:
    """Issue the PHN for ``sequence``, tracking reuse when an issuer is given."""
    if issuer is not None:
        return issuer.issue(sequence)
    return phn_for_sequence(sequence)


class IdentifierKind(str, Enum):
    NIC = "NIC"
    PHN = "PHN"
    DRIVING_LICENSE = "DRIVING_LICENSE"
    PASSPORT = "PASSPORT"
    ELDERLY_NUMBER = "ELDERLY_NUMBER"
    EMAIL = "EMAIL"
    NAME_KEY = "NAME_KEY"
    EXTENSION = "EXTENSION"  # reserved slot (biometrics etc.)


# kinds for which two ACTIVE records may never share a value
UNIQUE_KINDS = frozenset({
    IdentifierKind.NIC,
    IdentifierKind.PHN,
    IdentifierKind.PASSPORT,
    IdentifierKind.DRIVING_LICENSE,
    IdentifierKind.ELDERLY_NUMBER,
})


@dataclass(frozen=True, order=True)
class Identifier:
    kind: IdentifierKind
    value: str
    issuing_authority: Optional[str] = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "value": self.value}
        if self.issuing_authority:
            d["issuing_authority"] = self.issuing_authority
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Identifier":
        return cls(IdentifierKind(d["kind"]), d["value"], d.get("issuing_authority"))


def _collapse_ws(value: str) -> str:
    return " ".join(value.split())


def normalize_identifier(kind: IdentifierKind, raw: str,
                         issuing_authority: Optional[str] = None) -> Identifier:
    """Normalize ``raw`` per the kind's rules and verify its format.

    Normalization is idempotent; FORMAT_INVALID is raised when the
    normalized value still violates the kind's grammar.
    """
    value = raw.strip()
    if not value:
        raise FormatInvalid(f"{kind.value}: empty value", kind=kind.value, raw=raw)

    if kind is IdentifierKind.NIC:
        value = value.upper()
        if not (_NIC_OLD.match(value) or _NIC_NEW.match(value)):
            raise FormatInvalid(f"NIC {value!r} matches neither old nor new format",
                                kind=kind.value, raw=raw)
    elif kind is IdentifierKind.PHN:
        if not validate_phn(value):
            raise FormatInvalid(f"PHN {value!r} fails length or check-digit rule",
                                kind=kind.value, raw=raw)
    elif kind in (IdentifierKind.PASSPORT, IdentifierKind.DRIVING_LICENSE,
                  IdentifierKind.ELDERLY_NUMBER):
        value = value.upper()
        if not _OPAQUE_TOKEN.match(value):
            raise FormatInvalid(f"{kind.value} {value!r} not an opaque token <= 32 chars",
                                kind=kind.value, raw=raw)
    elif kind is IdentifierKind.EMAIL:
        if value.count("@") != 1:
            raise FormatInvalid(f"EMAIL {value!r} must contain exactly one '@'",
                                kind=kind.value, raw=raw)
        local, domain = value.split("@")
        if not local or not domain:
            raise FormatInvalid(f"EMAIL {value!r} has empty local or domain part",
                                kind=kind.value, raw=raw)
        value = f"{local}@{domain.lower()}"
    elif kind is IdentifierKind.NAME_KEY:
        value = _collapse_ws(value).upper()
    # EXTENSION: opaque, trimmed only

    return Identifier(kind, value, issuing_authority)


class Sex(str, Enum):
    M = "M"
    F = "F"
    U = "U"


@dataclass(frozen=True)
class DemographicProfile:
    family_name: str
    given_names: tuple[str, ...]
    date_of_birth: date
    sex: Sex
    address_lines: tuple[str, ...] = ()
    contact_number: Optional[str] = None
    anonymity_requested: bool = False

    def redacted(self) -> "DemographicProfile":
        """Copy with name and address blanked, for anonymity-requested records."""
        return replace(self, family_name="", given_names=(), address_lines=())

    def to_dict(self) -> dict:
        return {
            "family_name": self.family_name,
            "given_names": list(self.given_names),
            "date_of_birth": self.date_of_birth.isoformat(),
            "sex": self.sex.value,
            "address_lines": list(self.address_lines),
            "contact_number": self.contact_number,
            "anonymity_requested": self.anonymity_requested,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DemographicProfile":
        return cls(
            family_name=d["family_name"],
            given_names=tuple(d["given_names"]),
            date_of_birth=date.fromisoformat(d["date_of_birth"]),
            sex=Sex(d["sex"]),
            address_lines=tuple(d.get("address_lines", ())),
            contact_number=d.get("contact_number"),
            anonymity_requested=d.get("anonymity_requested", False),
        )


class StatusKind(str, Enum):
    ACTIVE = "ACTIVE"
    INACTIVE_DECEASED = "INACTIVE_DECEASED"
    RETIRED_MERGED = "RETIRED_MERGED"


@dataclass(frozen=True)
class RecordStatus:
    kind: StatusKind
    deceased_on: Optional[date] = None   # INACTIVE_DECEASED only
    survivor: Optional[str] = None       # RETIRED_MERGED only

    @classmethod
    def active(cls) -> "RecordStatus":
        return cls(StatusKind.ACTIVE)

    @classmethod
    def deceased(cls, deceased_on: date) -> "RecordStatus":
        return cls(StatusKind.INACTIVE_DECEASED, deceased_on=deceased_on)

    @classmethod
    def retired(cls, survivor: str) -> "RecordStatus":
        return cls(StatusKind.RETIRED_MERGED, survivor=survivor)

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.deceased_on is not None:
            d["deceased_on"] = self.deceased_on.isoformat()
        if self.survivor is not None:
            d["survivor"] = self.survivor
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RecordStatus":
        return cls(
            StatusKind(d["kind"]),
            deceased_on=date.fromisoformat(d["deceased_on"]) if d.get("deceased_on") else None,
            survivor=d.get("survivor"),
        )


class GuardianReason(str, Enum):
    MINOR = "MINOR"
    UNSOUND_MIND = "UNSOUND_MIND"
    UNCONSCIOUS = "UNCONSCIOUS"


@dataclass(frozen=True)
class GuardianLink:
    ward_phn: str
    guardian_phn: str
    reason: GuardianReason
    established_at: datetime

    def __post_init__(self):
        if self.ward_phn == self.guardian_phn:
            raise ValidationFailed("guardian must differ from ward")

    def to_dict(self) -> dict:
        return {
            "ward_phn": self.ward_phn,
            "guardian_phn": self.guardian_phn,
            "reason": self.reason.value,
            "established_at": self.established_at.isoformat(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GuardianLink":
        return cls(d["ward_phn"], d["guardian_phn"], GuardianReason(d["reason"]),
                   datetime.fromisoformat(d["established_at"]))


@dataclass(frozen=True)
class PatientRecord:
    phn: str
    profile: DemographicProfile
    identifiers: frozenset[Identifier]
    status: RecordStatus
    guardians: tuple[GuardianLink, ...] = ()
    created_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    updated_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    version: int = 1
    provisional: bool = False  # set for minors/unsound-mind until a guardian is linked

    def __post_init__(self):
        if not validate_phn(self.phn):
            raise ValidationFailed(f"record PHN {self.phn!r} invalid")
        phn_ids = [i for i in self.identifiers if i.kind is IdentifierKind.PHN]
        if len(phn_ids) != 1 or phn_ids[0].value != self.phn:
            raise ValidationFailed("identifiers must contain exactly one PHN entry equal to phn")
        if self.profile.date_of_birth > self.created_at.date():
            raise ValidationFailed("date_of_birth is in the future")
        if self.status.kind is StatusKind.RETIRED_MERGED:
            if not self.status.survivor or self.status.survivor == self.phn:
                raise ValidationFailed("RETIRED_MERGED needs a survivor PHN distinct from its own")
        if self.status.kind is StatusKind.INACTIVE_DECEASED and self.status.deceased_on is None:
            raise ValidationFailed("INACTIVE_DECEASED needs a deceased_on date")
        seen = set()
        for link in self.guardians:
            if link.ward_phn != self.phn:
                raise ValidationFailed("guardian link ward must be this record")
            if link.reason in seen:
                raise ValidationFailed(f"duplicate active guardian link for reason {link.reason.value}")
            seen.add(link.reason)
        if self.version < 1:
            raise ValidationFailed("version starts at 1")

    def identifier_values(self, kind: IdentifierKind) -> list[str]:
        return sorted(i.value for i in self.identifiers if i.kind is kind)

    def first_identifier(self, kind: IdentifierKind) -> Optional[str]:
        values = self.identifier_values(kind)
        return values[0] if values else None

    def to_dict(self) -> dict:
        return {
            "phn": self.phn,
            "profile": self.profile.to_dict(),
            "identifiers": [i.to_dict() for i in sorted(self.identifiers)],
            "status": self.status.to_dict(),
            "guardians": [g.to_dict() for g in self.guardians],
            "created_at": self.created_at.isoformat(),
            "updated_at": self.updated_at.isoformat(),
            "version": self.version,
            "provisional": self.provisional,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatientRecord":
        return cls(
            phn=d["phn"],
            profile=DemographicProfile.from_dict(d["profile"]),
            identifiers=frozenset(Identifier.from_dict(i) for i in d["identifiers"]),
            status=RecordStatus.from_dict(d["status"]),
            guardians=tuple(GuardianLink.from_dict(g) for g in d.get("guardians", ())),
            created_at=datetime.fromisoformat(d["created_at"]),
            updated_at=datetime.fromisoformat(d["updated_at"]),
            version=d["version"],
            provisional=d.get("provisional", False),
        )

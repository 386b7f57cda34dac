"""Merge lineage and steward review types.

A merge retires one record in favor of a survivor; the lineage log is
append-only and every reversal is itself an entry, never a deletion.
The registry (see :mod:`mpi.registry`) owns the state transitions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from typing import Optional

from .matching import MatchResult


class MergeSource(str, Enum):
    AUTO_MATCH = "AUTO_MATCH"
    STEWARD = "STEWARD"
    HL7_A40 = "HL7_A40"


@dataclass(frozen=True)
class MergeEvent:
    survivor: str
    retired: str
    decided_by: str
    source: MergeSource
    decided_at: datetime
    field_resolutions: tuple = ()  # (field name, chosen source PHN) pairs

    def __post_init__(self):
        if self.survivor == self.retired:
            raise ValueError("survivor and retired must differ")

    def to_dict(self) -> dict:
        return {
            "survivor": self.survivor,
            "retired": self.retired,
            "decided_by": self.decided_by,
            "source": self.source.value,
            "decided_at": self.decided_at.isoformat(),
            "field_resolutions": [list(p) for p in self.field_resolutions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MergeEvent":
        return cls(
            survivor=d["survivor"],
            retired=d["retired"],
            decided_by=d["decided_by"],
            source=MergeSource(d["source"]),
            decided_at=datetime.fromisoformat(d["decided_at"]),
            field_resolutions=tuple(tuple(p) for p in d.get("field_resolutions", ())),
        )


class ReviewState(str, Enum):
    PENDING = "PENDING"
    APPROVED = "APPROVED"
    REJECTED = "REJECTED"


@dataclass(frozen=True)
class ReviewItem:
    id: str
    result: MatchResult
    state: ReviewState
    created_at: datetime
    pre_approved: bool = False  # auto-classified MATCH, still queued for a human
    decided_at: Optional[datetime] = None
    decided_by: Optional[str] = None

    def __post_init__(self):
        decided = self.state is not ReviewState.PENDING
        if decided != (self.decided_at is not None and self.decided_by is not None):
            raise ValueError("decided_at/decided_by present iff item is decided")

    def pair_key(self) -> frozenset:
        return frozenset(self.result.pair)

    def decided(self, state: ReviewState, decided_by: str, at: datetime) -> "ReviewItem":
        return replace(self, state=state, decided_by=decided_by, decided_at=at)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "result": self.result.to_dict(),
            "state": self.state.value,
            "created_at": self.created_at.isoformat(),
            "pre_approved": self.pre_approved,
            "decided_at": self.decided_at.isoformat() if self.decided_at else None,
            "decided_by": self.decided_by,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewItem":
        return cls(
            id=d["id"],
            result=MatchResult.from_dict(d["result"]),
            state=ReviewState(d["state"]),
            created_at=datetime.fromisoformat(d["created_at"]),
            pre_approved=d.get("pre_approved", False),
            decided_at=datetime.fromisoformat(d["decided_at"]) if d.get("decided_at") else None,
            decided_by=d.get("decided_by"),
        )


def export_queue(items) -> str:
    """Newline-delimited review-queue export: id, candidate PHNs, total, state."""
    lines = []
    for item in items:
        a, b = item.result.pair
        lines.append(f"{item.id}\t{a}\t{b}\t{item.result.total!r}\t{item.state.value}")
    return "\n".join(lines) + ("\n" if lines else "")

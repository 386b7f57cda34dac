"""The registry state machine: patient records, merge lineage, and the
steward review queue, mutated only through commands that each emit exactly
one event-log record.

Every command validates against current state, computes the complete
post-state of everything it touches, embeds that in the event payload, and
applies it. Replaying the event stream from empty therefore reproduces the
state byte-identically (see :func:`state_dict`). All nondeterminism
(timestamps, sequence numbers, item ids) is resolved at command time and
captured in the payload, never at apply time.
"""

from __future__ import annotations

from dataclasses import replace
from datetime import date, datetime, timezone
from typing import Callable, Iterable, Optional, Sequence

from . import matching
from .errors import (
    AlreadyDeceased,
    AlreadyMerged,
    BadSurvivorChoice,
    CycleDetected,
    DuplicateIdentifier,
    IdentifierConflict,
    ItemNotPending,
    NoCriteria,
    NotACandidate,
    NotReversible,
    RecordNotActive,
    SurvivorNotActive,
    UnknownPhn,
    ValidationFailed,
    VersionConflict,
)
from .identity import (
    UNIQUE_KINDS,
    DemographicProfile,
    GuardianLink,
    GuardianReason,
    Identifier,
    IdentifierKind,
    PatientRecord,
    PhnIssuer,
    RecordStatus,
    StatusKind,
    phn_for_sequence,
)
from .matching import Decision, MatchResult, Thresholds
from .merge import MergeEvent, MergeSource, ReviewItem, ReviewState

ADULT_AGE_YEARS = 18
RETENTION_YEARS = 5


def add_years(d: date, years: int) -> date:
    """Calendar-year addition; Feb 29 maps to Mar 1 in non-leap years."""
    try:
        return d.replace(year=d.year + years)
    except ValueError:
        return date(d.year + years, 3, 1)


def _age_years(dob: date, at: date) -> int:
    years = at.year - dob.year
    if (at.month, at.day) < (dob.month, dob.day):
        years -= 1
    return years


class Registry:
    """Single-logical-writer registry; callers must serialize mutations."""

    def __init__(self, clock: Optional[Callable[[], datetime]] = None,
                 on_event: Optional[Callable[[dict], None]] = None):
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self.on_event = on_event
        self.records: dict = {}
        self.next_sequence = 1
        self.review_items: dict = {}
        self.next_item_number = 1
        self.excluded_pairs: set = set()
        self.lineage: list = []
        self.hl7_acks: dict = {}
        self.event_seq = 0
        self._id_index: dict = {}  # (kind, value) -> set of phns, all records

    # --- event plumbing ---

    def _commit(self, event_type: str, payload: dict, actor: str, at: datetime) -> dict:
        self.event_seq += 1
        event = {
            "seq": self.event_seq,
            "at": at.isoformat(),
            "actor": actor,
            "type": event_type,
            "payload": payload,
        }
        self._apply(event)
        if self.on_event is not None:
            self.on_event(event)
        return event

    def _apply(self, event: dict) -> None:
        p = event["payload"]
        for rd in p.get("records", ()):
            self._index_remove(self.records.get(rd["phn"]))
            record = PatientRecord.from_dict(rd)
            self.records[record.phn] = record
            self._index_add(record)
        for phn in p.get("removed", ()):
            self._index_remove(self.records.pop(phn, None))
        if "next_sequence" in p:
            self.next_sequence = p["next_sequence"]
        for it in p.get("items", ()):
            self.review_items[it["id"]] = ReviewItem.from_dict(it)
        if "next_item_number" in p:
            self.next_item_number = p["next_item_number"]
        for pair in p.get("excluded", ()):
            self.excluded_pairs.add(frozenset(pair))
        if "lineage_entry" in p:
            self.lineage.append(p["lineage_entry"])
        if "ack" in p:
            self.hl7_acks[p["ack"]["key"]] = p["ack"]["text"]

    def replay(self, events: Iterable[dict]) -> None:
        for event in events:
            self._apply(event)
            self.event_seq = event["seq"]

    def load_state(self, state: dict) -> None:
        """Restore from a snapshot produced by :func:`state_dict`."""
        self.event_seq = state["event_seq"]
        self.next_sequence = state["next_sequence"]
        self.next_item_number = state["next_item_number"]
        self.records = {}
        self._id_index = {}
        for rd in state["records"].values():
            record = PatientRecord.from_dict(rd)
            self.records[record.phn] = record
            self._index_add(record)
        self.review_items = {i: ReviewItem.from_dict(d)
                             for i, d in state["review_items"].items()}
        self.excluded_pairs = {frozenset(p) for p in state["excluded_pairs"]}
        self.lineage = list(state["lineage"])
        self.hl7_acks = dict(state["hl7_acks"])

    def _index_add(self, record: PatientRecord) -> None:
        for ident in record.identifiers:
            self._id_index.setdefault((ident.kind, ident.value), set()).add(record.phn)

    def _index_remove(self, record: Optional[PatientRecord]) -> None:
        if record is None:
            return
        for ident in record.identifiers:
            bucket = self._id_index.get((ident.kind, ident.value))
            if bucket:
                bucket.discard(record.phn)
                if not bucket:
                    del self._id_index[(ident.kind, ident.value)]

    # --- canonical state ---

    def state_dict(self) -> dict:
        return {
            "event_seq": self.event_seq,
            "next_sequence": self.next_sequence,
            "next_item_number": self.next_item_number,
            "records": {phn: rec.to_dict() for phn, rec in sorted(self.records.items())},
            "review_items": {i: it.to_dict() for i, it in sorted(self.review_items.items())},
            "excluded_pairs": sorted(sorted(p) for p in self.excluded_pairs),
            "lineage": self.lineage,
            "hl7_acks": {k: v for k, v in sorted(self.hl7_acks.items())},
        }

    # --- lookups ---

    def get(self, phn: str) -> PatientRecord:
        record = self.records.get(phn)
        if record is None:
            raise UnknownPhn(f"PHN {phn} not known to this registry")
        return record

    def active_records(self) -> list:
        return [r for r in self.records.values() if r.status.kind is StatusKind.ACTIVE]

    def comparable_records(self) -> list:
        return [r for r in self.records.values()
                if r.status.kind is not StatusKind.RETIRED_MERGED]

    def _active_owner(self, ident: Identifier) -> Optional[str]:
        for phn in self._id_index.get((ident.kind, ident.value), ()):
            if self.records[phn].status.kind is StatusKind.ACTIVE:
                return phn
        return None

    def _unreversed_merges(self) -> list:
        reversed_indexes = {e["reverses"] for e in self.lineage if e["kind"] == "unmerge"}
        return [e for i, e in enumerate(self.lineage)
                if e["kind"] == "merge" and i not in reversed_indexes]

    def resolve(self, phn: str) -> tuple:
        """Follow merge references to the terminal record; returns
        (record, chain of MergeEvent traversed)."""
        record = self.get(phn)
        by_retired = {e["event"]["retired"]: e for e in self._unreversed_merges()}
        chain = []
        seen = {phn}
        while record.status.kind is StatusKind.RETIRED_MERGED:
            entry = by_retired.get(record.phn)
            if entry is not None:
                chain.append(MergeEvent.from_dict(entry["event"]))
            survivor = record.status.survivor
            if survivor in seen:
                raise CycleDetected(f"merge lineage cycle at {survivor}")
            seen.add(survivor)
            record = self.get(survivor)
        return record, chain

    # --- registration and demographic updates ---

    def register_patient(self, profile: DemographicProfile,
                         identifiers: Iterable[Identifier],
                         *, needs_guardian: bool = False,
                         actor: str = "system", at: Optional[datetime] = None,
                         extra: Optional[dict] = None) -> PatientRecord:
        at = at or self.clock()
        identifiers = set(identifiers)
        for ident in identifiers:
            if ident.kind is IdentifierKind.PHN:
                raise ValidationFailed("PHN identifiers are issued, never supplied")
            if ident.kind in UNIQUE_KINDS:
                owner = self._active_owner(ident)
                if owner is not None:
                    raise DuplicateIdentifier(
                        f"{ident.kind.value} {ident.value} already registered to {owner}",
                        kind=ident.kind.value, value=ident.value, existing_phn=owner)
        sequence = self.next_sequence
        phn = phn_for_sequence(sequence)
        identifiers.add(Identifier(IdentifierKind.PHN, phn))
        minor = _age_years(profile.date_of_birth, at.date()) < ADULT_AGE_YEARS
        record = PatientRecord(
            phn=phn,
            profile=profile,
            identifiers=frozenset(identifiers),
            status=RecordStatus.active(),
            created_at=at,
            updated_at=at,
            version=1,
            provisional=minor or needs_guardian,
        )
        payload = {"records": [record.to_dict()], "next_sequence": sequence + 1}
        if extra:
            payload.update(extra)
        self._commit("registered", payload, actor, at)
        return record

    def update_patient(self, phn: str, changes: dict, expected_version: int,
                       *, actor: str = "system", at: Optional[datetime] = None,
                       extra: Optional[dict] = None) -> tuple:
        """Apply a partial change set; returns (record, diff summary)."""
        at = at or self.clock()
        record = self.get(phn)
        if record.status.kind is not StatusKind.ACTIVE:
            raise RecordNotActive(f"{phn} is {record.status.kind.value}")
        if record.version != expected_version:
            raise VersionConflict(
                f"expected version {expected_version}, current is {record.version}")

        diff = []
        profile = record.profile
        for field_name, value in (changes.get("profile") or {}).items():
            if field_name == "date_of_birth" and isinstance(value, str):
                value = date.fromisoformat(value)
            if field_name in ("given_names", "address_lines") and isinstance(value, list):
                value = tuple(value)
            if not hasattr(profile, field_name):
                raise ValidationFailed(f"unknown profile field {field_name!r}")
            if getattr(profile, field_name) != value:
                profile = replace(profile, **{field_name: value})
                diff.append(f"profile.{field_name}")

        identifiers = set(record.identifiers)
        for item in changes.get("remove_identifiers") or ():
            ident = item if isinstance(item, Identifier) else Identifier.from_dict(item)
            if ident.kind is IdentifierKind.PHN:
                raise ValidationFailed("the PHN identifier cannot be removed")
            if ident in identifiers:
                identifiers.discard(ident)
                diff.append(f"-{ident.kind.value}")
        for item in changes.get("add_identifiers") or ():
            ident = item if isinstance(item, Identifier) else Identifier.from_dict(item)
            if ident.kind is IdentifierKind.PHN:
                raise ValidationFailed("PHN identifiers are issued, never supplied")
            if ident in identifiers:
                continue
            if ident.kind in UNIQUE_KINDS:
                owner = self._active_owner(ident)
                if owner is not None and owner != phn:
                    raise DuplicateIdentifier(
                        f"{ident.kind.value} {ident.value} already registered to {owner}",
                        kind=ident.kind.value, value=ident.value, existing_phn=owner)
            identifiers.add(ident)
            diff.append(f"+{ident.kind.value}")

        updated = replace(record, profile=profile, identifiers=frozenset(identifiers),
                          updated_at=at, version=record.version + 1)
        payload = {"records": [updated.to_dict()], "diff": diff}
        if extra:
            payload.update(extra)
        self._commit("updated", payload, actor, at)
        return updated, diff

    def link_guardian(self, ward_phn: str, guardian_phn: str, reason: GuardianReason,
                      *, actor: str = "system", at: Optional[datetime] = None) -> PatientRecord:
        at = at or self.clock()
        ward = self.get(ward_phn)
        guardian = self.get(guardian_phn)
        if ward.status.kind is not StatusKind.ACTIVE:
            raise RecordNotActive(f"ward {ward_phn} is {ward.status.kind.value}")
        if guardian.status.kind is not StatusKind.ACTIVE:
            raise RecordNotActive(f"guardian {guardian_phn} is {guardian.status.kind.value}")
        if any(g.reason is reason for g in ward.guardians):
            raise ValidationFailed(f"ward already has a guardian for reason {reason.value}")
        link = GuardianLink(ward_phn, guardian_phn, reason, at)
        updated = replace(ward, guardians=ward.guardians + (link,),
                          provisional=False, updated_at=at, version=ward.version + 1)
        self._commit("guardian_linked", {"records": [updated.to_dict()]}, actor, at)
        return updated

    def mark_deceased(self, phn: str, deceased_on: date,
                      *, actor: str = "system", at: Optional[datetime] = None) -> PatientRecord:
        at = at or self.clock()
        record = self.get(phn)
        if record.status.kind is StatusKind.INACTIVE_DECEASED:
            raise AlreadyDeceased(f"{phn} already marked deceased")
        if record.status.kind is not StatusKind.ACTIVE:
            raise RecordNotActive(f"{phn} is {record.status.kind.value}")
        updated = replace(record, status=RecordStatus.deceased(deceased_on),
                          updated_at=at, version=record.version + 1)
        self._commit("deceased_marked", {"records": [updated.to_dict()]}, actor, at)
        return updated

    def purge_expired(self, now: Optional[datetime] = None,
                      *, actor: str = "system") -> list:
        """Remove deceased records past the retention horizon; returns purged PHNs."""
        now = now or self.clock()
        eligible = sorted(
            phn for phn, rec in self.records.items()
            if rec.status.kind is StatusKind.INACTIVE_DECEASED
            and add_years(rec.status.deceased_on, RETENTION_YEARS) <= now.date()
        )
        if eligible:
            self._commit("purged", {"removed": eligible}, actor, now)
        return eligible

    # --- merge machinery ---

    def _merge_payload(self, survivor: str, retired: str, decided_by: str,
                       source: MergeSource, at: datetime) -> tuple:
        """(records_after, lineage_entry, MergeEvent); raises without mutating."""
        if survivor == retired:
            raise CycleDetected("a record cannot merge into itself")
        survivor_rec = self.get(survivor)
        retired_rec = self.get(retired)
        if retired_rec.status.kind is StatusKind.RETIRED_MERGED:
            raise AlreadyMerged(f"{retired} already retired into {retired_rec.status.survivor}")
        if survivor_rec.status.kind is not StatusKind.ACTIVE:
            raise SurvivorNotActive(f"survivor {survivor} is {survivor_rec.status.kind.value}")

        for kind in UNIQUE_KINDS - {IdentifierKind.PHN}:
            values = {i.value for i in survivor_rec.identifiers if i.kind is kind} | \
                     {i.value for i in retired_rec.identifiers if i.kind is kind}
            if len(values) > 1:
                raise IdentifierConflict(
                    f"{kind.value} differs between {survivor} and {retired}: "
                    + ", ".join(sorted(values)),
                    kind=kind.value, survivor=survivor, retired=retired)

        merged_ids = set(survivor_rec.identifiers) | {
            i for i in retired_rec.identifiers if i.kind is not IdentifierKind.PHN}

        # guardian links: retired's wardship moves to the survivor
        merged_guardians = list(survivor_rec.guardians)
        taken = {g.reason for g in merged_guardians}
        for link in retired_rec.guardians:
            if link.reason in taken or link.guardian_phn == survivor:
                continue
            merged_guardians.append(replace(link, ward_phn=survivor))
            taken.add(link.reason)

        survivor_after = replace(
            survivor_rec, identifiers=frozenset(merged_ids),
            guardians=tuple(merged_guardians), updated_at=at,
            version=survivor_rec.version + 1)
        retired_after = replace(
            retired_rec, status=RecordStatus.retired(survivor), guardians=(),
            updated_at=at, version=retired_rec.version + 1)

        # records guarded by the retired PHN now point at the survivor
        others_after = []
        others_snapshot = []
        for rec in self.records.values():
            if rec.phn in (survivor, retired):
                continue
            if any(g.guardian_phn == retired for g in rec.guardians):
                new_links = tuple(
                    replace(g, guardian_phn=survivor) if g.guardian_phn == retired else g
                    for g in rec.guardians
                    if not (g.guardian_phn == retired and rec.phn == survivor))
                others_snapshot.append(rec.to_dict())
                others_after.append(replace(rec, guardians=new_links,
                                            updated_at=at, version=rec.version + 1))

        merge_event = MergeEvent(survivor=survivor, retired=retired,
                                 decided_by=decided_by, source=source, decided_at=at)
        lineage_entry = {
            "kind": "merge",
            "event": merge_event.to_dict(),
            "survivor_snapshot": survivor_rec.to_dict(),
            "retired_snapshot": retired_rec.to_dict(),
            "others_snapshot": others_snapshot,
        }
        records_after = [retired_after, survivor_after] + others_after
        return records_after, lineage_entry, merge_event

    def _close_pending_for_pair(self, pair: frozenset, decided_by: str,
                                state: ReviewState, at: datetime) -> list:
        closed = []
        for item in self.review_items.values():
            if item.state is ReviewState.PENDING and item.pair_key() == pair:
                closed.append(item.decided(state, decided_by, at).to_dict())
        return closed

    def apply_merge(self, survivor: str, retired: str, decided_by: str,
                    source: MergeSource, *, actor: str = "system",
                    at: Optional[datetime] = None,
                    extra: Optional[dict] = None) -> MergeEvent:
        at = at or self.clock()
        try:
            records_after, lineage_entry, merge_event = self._merge_payload(
                survivor, retired, decided_by, source, at)
        except IdentifierConflict:
            # conflicting unique identifiers go to the steward queue, never auto-merge
            self._enqueue_conflict(survivor, retired, at, actor)
            raise
        payload = {
            "records": [r.to_dict() for r in records_after],
            "lineage_entry": lineage_entry,
            "items": self._close_pending_for_pair(
                frozenset((survivor, retired)), decided_by, ReviewState.APPROVED, at),
        }
        if extra:
            payload.update(extra)
        self._commit("merged", payload, actor, at)
        return merge_event

    def _enqueue_conflict(self, survivor: str, retired: str, at: datetime,
                          actor: str) -> None:
        a, b = self.get(survivor), self.get(retired)
        try:
            result = matching.score_pair(list(matching.DEFAULT_CONFIGS), a, b,
                                         matching.DEFAULT_THRESHOLDS)
        except Exception:
            return
        result = replace(result, decision=Decision.POSSIBLE)
        try:
            self.enqueue_review(result, actor=actor, at=at)
        except (NotACandidate, AlreadyMerged):
            pass

    def unmerge(self, event: MergeEvent, decided_by: str,
                *, actor: str = "system", at: Optional[datetime] = None) -> tuple:
        """Reverse the most recent merge touching its survivor; returns the
        restored (survivor, retired) records."""
        at = at or self.clock()
        target_index = None
        for i, entry in enumerate(self.lineage):
            if entry["kind"] == "merge" and entry["event"] == event.to_dict():
                target_index = i
        if target_index is None:
            raise NotReversible("merge event not found in lineage")
        reversed_indexes = {e["reverses"] for e in self.lineage if e["kind"] == "unmerge"}
        if target_index in reversed_indexes:
            raise NotReversible("merge already reversed")
        for i, entry in enumerate(self.lineage):
            if i <= target_index or i in reversed_indexes or entry["kind"] != "merge":
                continue
            touched = {entry["event"]["survivor"], entry["event"]["retired"]}
            if event.survivor in touched:
                raise NotReversible(
                    f"later merge {entry['event']['retired']} -> "
                    f"{entry['event']['survivor']} stacked on this survivor")

        target = self.lineage[target_index]
        retired_restored = PatientRecord.from_dict(target["retired_snapshot"])
        survivor_snapshot = PatientRecord.from_dict(target["survivor_snapshot"])
        survivor_current = self.get(event.survivor)
        survivor_restored = replace(
            survivor_current, identifiers=survivor_snapshot.identifiers,
            guardians=survivor_snapshot.guardians, updated_at=at,
            version=survivor_current.version + 1)
        records_after = [retired_restored, survivor_restored]
        for snap in target["others_snapshot"]:
            current = self.records.get(snap["phn"])
            if current is None:
                continue
            snap_rec = PatientRecord.from_dict(snap)
            records_after.append(replace(current, guardians=snap_rec.guardians,
                                         updated_at=at, version=current.version + 1))
        lineage_entry = {
            "kind": "unmerge",
            "reverses": target_index,
            "decided_by": decided_by,
            "at": at.isoformat(),
        }
        self._commit("unmerged", {
            "records": [r.to_dict() for r in records_after],
            "lineage_entry": lineage_entry,
        }, actor, at)
        return survivor_restored, retired_restored

    # --- review queue ---

    def enqueue_review(self, result: MatchResult, *, actor: str = "system",
                       at: Optional[datetime] = None) -> ReviewItem:
        at = at or self.clock()
        if result.decision is Decision.NON_MATCH:
            raise NotACandidate("NON_MATCH results are not reviewable")
        for phn in result.pair:
            if self.get(phn).status.kind is StatusKind.RETIRED_MERGED:
                raise AlreadyMerged(f"{phn} is already retired")
        pair = frozenset(result.pair)
        for item in self.review_items.values():
            if item.state is ReviewState.PENDING and item.pair_key() == pair:
                if result.total > item.result.total:
                    updated = replace(item, result=result,
                                      pre_approved=item.pre_approved
                                      or result.decision is Decision.MATCH)
                    self._commit("review_enqueued", {"items": [updated.to_dict()]},
                                 actor, at)
                    return updated
                return item
        item = ReviewItem(
            id=f"RV{self.next_item_number:06d}",
            result=result,
            state=ReviewState.PENDING,
            created_at=at,
            pre_approved=result.decision is Decision.MATCH,
        )
        self._commit("review_enqueued", {
            "items": [item.to_dict()],
            "next_item_number": self.next_item_number + 1,
        }, actor, at)
        return item

    def steward_decide(self, item_id: str, decision: str, decided_by: str,
                       survivor_choice: Optional[str] = None,
                       *, actor: str = "system",
                       at: Optional[datetime] = None) -> ReviewItem:
        at = at or self.clock()
        item = self.review_items.get(item_id)
        if item is None or item.state is not ReviewState.PENDING:
            raise ItemNotPending(f"item {item_id} is not pending")
        if decision not in ("APPROVE", "REJECT"):
            raise ValidationFailed(f"decision must be APPROVE or REJECT, got {decision!r}")

        if decision == "REJECT":
            decided = item.decided(ReviewState.REJECTED, decided_by, at)
            self._commit("review_decided", {
                "items": [decided.to_dict()],
                "excluded": [sorted(item.result.pair)],
            }, actor, at)
            return decided

        if survivor_choice not in item.result.pair:
            raise BadSurvivorChoice(
                f"survivor {survivor_choice!r} is not one of {item.result.pair}")
        retired = next(p for p in item.result.pair if p != survivor_choice)
        try:
            records_after, lineage_entry, _ = self._merge_payload(
                survivor_choice, retired, decided_by, MergeSource.STEWARD, at)
        except IdentifierConflict:
            raise  # item stays pending; the conflict needs field-level resolution
        decided = item.decided(ReviewState.APPROVED, decided_by, at)
        items = [decided.to_dict()] + [
            it for it in self._close_pending_for_pair(item.pair_key(), decided_by,
                                                      ReviewState.APPROVED, at)
            if it["id"] != item.id]
        self._commit("review_decided", {
            "items": items,
            "records": [r.to_dict() for r in records_after],
            "lineage_entry": lineage_entry,
        }, actor, at)
        return decided

    def pending_items(self) -> list:
        items = [i for i in self.review_items.values() if i.state is ReviewState.PENDING]
        items.sort(key=lambda i: (-i.result.total, i.id))
        return items

    # --- dedup scan ---

    def run_dedup_scan(self, configs: Sequence[matching.ComparatorConfig],
                       thresholds: Thresholds, *, actor: str = "system",
                       at: Optional[datetime] = None) -> list:
        """Score blocked pairs and queue every MATCH/POSSIBLE result as a
        single batch event; returns the scan results."""
        at = at or self.clock()
        results = matching.dedup_scan(self.comparable_records(), configs, thresholds,
                                      excluded=self.excluded_pairs)
        pending_by_pair = {i.pair_key(): i for i in self.pending_items()}
        new_items = []
        next_number = self.next_item_number
        for result in results:
            pair = frozenset(result.pair)
            existing = pending_by_pair.get(pair)
            if existing is not None:
                if result.total > existing.result.total:
                    updated = replace(existing, result=result,
                                      pre_approved=existing.pre_approved
                                      or result.decision is Decision.MATCH)
                    pending_by_pair[pair] = updated
                    new_items.append(updated)
                continue
            item = ReviewItem(
                id=f"RV{next_number:06d}", result=result, state=ReviewState.PENDING,
                created_at=at, pre_approved=result.decision is Decision.MATCH)
            next_number += 1
            pending_by_pair[pair] = item
            new_items.append(item)
        if new_items:
            self._commit("scan_enqueued", {
                "items": [i.to_dict() for i in new_items],
                "next_item_number": next_number,
            }, actor, at)
        return results

    # --- search ---

    def search(self, criteria: Sequence[tuple], fuzzy_name: Optional[str] = None,
               configs: Optional[Sequence[matching.ComparatorConfig]] = None) -> list:
        """Ranked hits: exact identifier matches first, then fuzzy-name hits
        scored with the name comparators. Retired PHNs resolve to their
        survivor and are flagged ``via_merge``."""
        if not criteria and not fuzzy_name:
            raise NoCriteria("at least one search criterion is required")
        configs = configs or matching.DEFAULT_CONFIGS
        hits = []
        seen = set()
        for kind, value in criteria:
            kind = IdentifierKind(kind) if not isinstance(kind, IdentifierKind) else kind
            for phn in sorted(self._id_index.get((kind, value), ())):
                record = self.records[phn]
                via_merge = False
                if record.status.kind is StatusKind.RETIRED_MERGED:
                    record, _chain = self.resolve(phn)
                    via_merge = True
                if record.phn in seen:
                    continue
                seen.add(record.phn)
                hits.append({"record": record, "rank": None, "via_merge": via_merge,
                             "exact": True})

        if fuzzy_name:
            name_configs = [c for c in configs
                            if c.field in (matching.MatchField.FAMILY_NAME,
                                           matching.MatchField.GIVEN_NAME)]
            scored = []
            for record in self.active_records():
                if record.phn in seen:
                    continue
                score = 0.0
                agreed_any = False
                for config in name_configs:
                    value = matching.record_field_value(record, config.field)
                    agreed = matching.compare_field(config, fuzzy_name, value)
                    if agreed is None:
                        continue
                    if agreed:
                        agreed_any = True
                    score += matching.field_weight(config, agreed)
                if agreed_any and score > 0:
                    scored.append((score, record))
            scored.sort(key=lambda sr: (-sr[0], sr[1].phn))
            for score, record in scored:
                hits.append({"record": record, "rank": score, "via_merge": False,
                             "exact": False})
        return hits

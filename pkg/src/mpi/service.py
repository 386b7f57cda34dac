"""The deployable MPI service: HTTP API and HL7 intake over the registry,
behind the token-issuing auth boundary, with an append-only audit log.

All state mutations funnel through one lock (single logical writer); the
event log is fsynced before any mutation is acknowledged.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Callable, Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import hl7, matching
from .auth import Scope, TokenService, load_clients
from .errors import (
    AuthRequired,
    DuplicateIdentifier,
    Hl7Error,
    InsufficientScope,
    InvalidClient,
    ItemNotPending,
    MpiError,
    UnknownPhn,
    ValidationFailed,
    VersionConflict,
)
from .events import EVENT_LOG_NAME, SNAPSHOT_NAME, open_registry, write_snapshot
from .identity import GuardianReason, IdentifierKind, PatientRecord, StatusKind, normalize_identifier
from .identity import DemographicProfile
from .merge import MergeSource, ReviewState, export_queue
from .registry import Registry

AUDIT_LOG_NAME = "audit.log"

_HTTP_STATUS = {
    "AUTH_REQUIRED": 401,
    "INVALID_CLIENT": 401,
    "INSUFFICIENT_SCOPE": 403,
    "UNKNOWN_PHN": 404,
    "ITEM_NOT_PENDING": 404,
    "VERSION_CONFLICT": 409,
    "DUPLICATE_IDENTIFIER": 409,
    "ALREADY_DECEASED": 409,
    "ALREADY_MERGED": 409,
    "IDENTIFIER_CONFLICT": 409,
    "SURVIVOR_NOT_ACTIVE": 409,
    "RECORD_NOT_ACTIVE": 409,
    "NOT_REVERSIBLE": 409,
    "CYCLE_DETECTED": 409,
    "BAD_SURVIVOR_CHOICE": 422,
    "NO_CRITERIA": 422,
    "FORMAT_INVALID": 422,
    "VALIDATION_FAILED": 422,
    "NOT_A_CANDIDATE": 422,
    "MALFORMED_INPUT": 400,
}


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    at: str
    client_id: str
    action: str
    subject: str
    outcome: str  # OK or error code; never a token value

    def line(self) -> str:
        return f"{self.seq}\t{self.at}\t{self.client_id}\t{self.action}\t{self.subject}\t{self.outcome}\n"

    def to_dict(self) -> dict:
        return {"seq": self.seq, "at": self.at, "client_id": self.client_id,
                "action": self.action, "subject": self.subject, "outcome": self.outcome}


class AuditLog:
    def __init__(self, path):
        self.path = Path(path)
        self.entries: list = []
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line:
                    seq, at, client, action, subject, outcome = line.split("\t")
                    self.entries.append(AuditEntry(int(seq), at, client, action,
                                                   subject, outcome))
        self._fh = open(self.path, "a", encoding="utf-8")

    def record(self, at: datetime, client_id: str, action: str, subject: str,
               outcome: str) -> AuditEntry:
        entry = AuditEntry(len(self.entries) + 1, at.isoformat(), client_id,
                           action, subject, outcome)
        self.entries.append(entry)
        self._fh.write(entry.line())
        self._fh.flush()
        return entry

    def since(self, from_seq: int) -> list:
        return [e for e in self.entries if e.seq >= from_seq]


class MpiService:
    """Registry + auth + audit behind one mutation lock."""

    def __init__(self, data_dir, clients_file=None,
                 comparator_config=None,
                 clock: Optional[Callable[[], datetime]] = None,
                 snapshot_every: int = 0):
        self.data_dir = Path(data_dir)
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self.registry, self.event_log = open_registry(self.data_dir, clock=self.clock)
        self.audit = AuditLog(self.data_dir / AUDIT_LOG_NAME)
        clients = load_clients(clients_file) if clients_file else {}
        self.tokens = TokenService(clients, clock=self.clock)
        if comparator_config:
            text = Path(comparator_config).read_text(encoding="utf-8")
            self.configs, self.thresholds = matching.parse_config(text)
        else:
            self.configs = list(matching.DEFAULT_CONFIGS)
            self.thresholds = matching.DEFAULT_THRESHOLDS
        self.snapshot_every = snapshot_every
        self.lock = threading.RLock()

    def snapshot(self) -> None:
        with self.lock:
            write_snapshot(self.data_dir / SNAPSHOT_NAME, self.registry)

    def maybe_snapshot(self) -> None:
        if self.snapshot_every and self.registry.event_seq % self.snapshot_every == 0:
            self.snapshot()

    # --- HL7 intake ---

    def intake_hl7(self, token, body: bytes, encoding: str) -> tuple:
        """Process one HL7 message; returns (response text, http status, outcome).

        Auth failures are AR-acked, validation failures AE-acked; a replayed
        control id from the same sender returns the stored response without
        re-executing.
        """
        encoding = (encoding or "ER7").upper()
        if encoding == "XML":
            message = hl7.parse_xml(body)
        else:
            message = hl7.parse_er7(body.decode("utf-8"))
        msh = message.segment("MSH")
        key = f"{msh.value(3)}|{msh.value(4)}|{message.control_id}"
        at = self.clock()
        ack_id = f"ACK-{message.control_id}"

        def ack(code, reason=None):
            return hl7.emit_er7(hl7.build_ack(message, code, reason,
                                              control_id=ack_id, at=at))

        if token is None:
            return ack("AR", "authorization failed"), 401, "AR"

        with self.lock:
            stored = self.registry.hl7_acks.get(key)
            if stored is not None:
                return stored, 200, "REPLAY"

            kind = hl7.message_kind(message)
            try:
                if kind is hl7.MessageKind.ADT_A04:
                    profile, identifiers = hl7.extract_patient(message)
                    identifiers = {i for i in identifiers
                                   if i.kind is not IdentifierKind.PHN}
                    from .identity import phn_for_sequence
                    predicted = phn_for_sequence(self.registry.next_sequence)
                    response = ack("AA", f"PHN {predicted}")
                    self.registry.register_patient(
                        profile, identifiers, actor=token.client_id, at=at,
                        extra={"ack": {"key": key, "text": response}})
                    return response, 200, "OK"
                if kind is hl7.MessageKind.ADT_A08:
                    profile, identifiers = hl7.extract_patient(message)
                    phns = [i.value for i in identifiers
                            if i.kind is IdentifierKind.PHN]
                    if not phns:
                        raise ValidationFailed("A08 must carry the PHN in PID-3")
                    record = self.registry.get(phns[0])
                    response = ack("AA", f"PHN {record.phn}")
                    self.registry.update_patient(
                        record.phn, {"profile": profile.to_dict()}, record.version,
                        actor=token.client_id, at=at,
                        extra={"ack": {"key": key, "text": response}})
                    return response, 200, "OK"
                if kind is hl7.MessageKind.ADT_A40:
                    mrg = message.segment("MRG")
                    if mrg is None or not mrg.value(1):
                        raise Hl7Error("A40 requires an MRG segment with the retired PHN")
                    profile, identifiers = hl7.extract_patient(message)
                    survivors = [i.value for i in identifiers
                                 if i.kind is IdentifierKind.PHN]
                    if not survivors:
                        raise ValidationFailed("A40 must carry the survivor PHN in PID-3")
                    retired = mrg.value(1)
                    response = ack("AA", f"PHN {survivors[0]}")
                    self.registry.apply_merge(
                        survivors[0], retired, decided_by=token.client_id,
                        source=MergeSource.HL7_A40, actor=token.client_id, at=at,
                        extra={"ack": {"key": key, "text": response}})
                    return response, 200, "OK"
                if kind is hl7.MessageKind.QBP_Q22:
                    qpd = message.segment("QPD")
                    criteria = []
                    for rep in (qpd.field(3) if qpd else []):
                        code = rep[0][0] if rep and rep[0] else ""
                        value = rep[1][0] if len(rep) > 1 and rep[1] else ""
                        mapped = hl7.TYPE_CODE_TO_KIND.get(code)
                        if mapped and value:
                            criteria.append((mapped, value))
                    hits = self.registry.search(criteria) if criteria else []
                    records = [h["record"] for h in hits]
                    records = [self._redact(r, token) for r in records]
                    rsp = hl7.build_rsp_k22(message, records,
                                            control_id=ack_id, at=at)
                    if encoding == "XML":
                        return hl7.emit_xml(rsp).decode("utf-8"), 200, "OK"
                    return hl7.emit_er7(rsp), 200, "OK"
                return ack("AE", f"unsupported message kind {msh.value(9)}"), 200, "AE"
            except MpiError as exc:
                return ack("AE", str(exc)), 200, exc.code

    def _redact(self, record: PatientRecord, token) -> PatientRecord:
        if record.profile.anonymity_requested and (
                token is None or Scope.STEWARD not in token.scopes):
            from dataclasses import replace
            return replace(record, profile=record.profile.redacted())
        return record


def record_view(record: PatientRecord) -> dict:
    return record.to_dict()


def create_app(data_dir, clients_file=None, comparator_config=None,
               clock=None, snapshot_every: int = 0) -> FastAPI:
    service = MpiService(data_dir, clients_file=clients_file,
                         comparator_config=comparator_config, clock=clock,
                         snapshot_every=snapshot_every)
    app = FastAPI(title="MPI registry")
    app.state.service = service

    def error_response(exc: MpiError) -> JSONResponse:
        status = _HTTP_STATUS.get(exc.code, 400)
        body = {"error": exc.code, "detail": exc.detail}
        if exc.context:
            body["context"] = {k: v for k, v in exc.context.items()}
        return JSONResponse(body, status_code=status)

    @app.exception_handler(MpiError)
    async def _mpi_error(request, exc: MpiError):
        return error_response(exc)

    def authorize(request: Request, scope: Scope):
        header = request.headers.get("authorization", "")
        value = header[7:] if header.lower().startswith("bearer ") else None
        return service.tokens.authorize(value, scope)

    def audited(token, action: str, subject: str, fn):
        """Run ``fn`` under the writer lock; audit exactly once per request."""
        at = service.clock()
        with service.lock:
            try:
                result = fn(at)
            except MpiError as exc:
                service.audit.record(at, token.client_id, action, subject, exc.code)
                raise
            service.audit.record(at, token.client_id, action, subject, "OK")
            service.maybe_snapshot()
            return result

    # --- token issuance ---

    @app.post("/token")
    async def token(request: Request):
        body = await request.json()
        try:
            tok = service.tokens.issue(body.get("client_id", ""),
                                       body.get("client_secret", ""))
        except InvalidClient as exc:
            return error_response(exc)
        return {
            "access_token": tok.token,
            "token_type": "bearer",
            "expires_in": int((tok.expires_at - tok.issued_at).total_seconds()),
            "scope": " ".join(sorted(s.value for s in tok.scopes)),
        }

    # --- patients ---

    def parse_profile(data: dict) -> DemographicProfile:
        try:
            return DemographicProfile.from_dict(data)
        except (KeyError, ValueError, TypeError) as exc:
            raise ValidationFailed(f"bad profile: {exc}") from exc

    def parse_identifiers(items) -> list:
        out = []
        for item in items or ():
            kind = IdentifierKind(item["kind"])
            out.append(normalize_identifier(kind, item["value"],
                                            item.get("issuing_authority")))
        return out

    @app.post("/patients", status_code=201)
    async def register(request: Request):
        tok = authorize(request, Scope.WRITE)
        body = await request.json()
        profile = parse_profile(body.get("profile") or {})
        identifiers = parse_identifiers(body.get("identifiers"))

        def run(at):
            return service.registry.register_patient(
                profile, identifiers,
                needs_guardian=bool(body.get("needs_guardian")),
                actor=tok.client_id, at=at)

        record = audited(tok, "register", "-", run)
        return record_view(service._redact(record, tok))

    @app.get("/patients/{phn}")
    async def get_patient(phn: str, request: Request):
        tok = authorize(request, Scope.READ)
        record = service.registry.get(phn)
        view = record_view(service._redact(record, tok))
        if record.status.kind is StatusKind.RETIRED_MERGED:
            terminal, chain = service.registry.resolve(phn)
            view["resolves_to"] = terminal.phn
            view["via"] = [e.to_dict() for e in chain]
        return view

    @app.post("/patients/search")
    async def search(request: Request):
        tok = authorize(request, Scope.READ)
        body = await request.json()
        criteria = []
        for pair in body.get("criteria") or ():
            kind = IdentifierKind(pair[0])
            criteria.append((kind, pair[1]))
        hits = service.registry.search(criteria, fuzzy_name=body.get("fuzzy_name"),
                                       configs=service.configs)
        return [{
            "record": record_view(service._redact(h["record"], tok)),
            "rank": h["rank"],
            "exact": h["exact"],
            "via_merge": h["via_merge"],
        } for h in hits]

    @app.put("/patients/{phn}")
    async def update(phn: str, request: Request):
        tok = authorize(request, Scope.WRITE)
        body = await request.json()
        if "expected_version" not in body:
            raise ValidationFailed("expected_version is required")
        changes = {
            "profile": body.get("profile"),
            "add_identifiers": parse_identifiers(body.get("add_identifiers")),
            "remove_identifiers": parse_identifiers(body.get("remove_identifiers")),
        }

        def run(at):
            record, diff = service.registry.update_patient(
                phn, changes, int(body["expected_version"]),
                actor=tok.client_id, at=at)
            return record, diff

        record, diff = audited(tok, "update", phn, run)
        view = record_view(service._redact(record, tok))
        view["diff"] = diff
        return view

    @app.post("/patients/{phn}/deceased")
    async def deceased(phn: str, request: Request):
        tok = authorize(request, Scope.WRITE)
        body = await request.json()
        try:
            deceased_on = date.fromisoformat(body["deceased_on"])
        except (KeyError, ValueError) as exc:
            raise ValidationFailed(f"bad deceased_on: {exc}") from exc
        record = audited(tok, "mark_deceased", phn, lambda at:
                         service.registry.mark_deceased(phn, deceased_on,
                                                        actor=tok.client_id, at=at))
        return record_view(record)

    @app.post("/patients/{phn}/guardian")
    async def guardian(phn: str, request: Request):
        tok = authorize(request, Scope.WRITE)
        body = await request.json()
        try:
            reason = GuardianReason(body["reason"])
            guardian_phn = body["guardian_phn"]
        except (KeyError, ValueError) as exc:
            raise ValidationFailed(f"bad guardian link: {exc}") from exc
        record = audited(tok, "link_guardian", phn, lambda at:
                         service.registry.link_guardian(phn, guardian_phn, reason,
                                                        actor=tok.client_id, at=at))
        return record_view(record)

    # --- HL7 intake ---

    @app.post("/hl7")
    async def intake(request: Request):
        encoding = request.headers.get("x-hl7-encoding", "ER7")
        body = await request.body()
        header = request.headers.get("authorization", "")
        value = header[7:] if header.lower().startswith("bearer ") else None
        try:
            tok = service.tokens.authorize(value, Scope.WRITE)
        except (AuthRequired, InsufficientScope):
            tok = None
        try:
            text, status, outcome = service.intake_hl7(tok, body, encoding)
        except Hl7Error as exc:
            return error_response(exc)
        if tok is not None:
            with service.lock:
                service.audit.record(service.clock(), tok.client_id, "hl7_intake",
                                     "-", outcome)
        media = "application/xml" if encoding.upper() == "XML" else "text/plain"
        return Response(content=text, status_code=status, media_type=media)

    # --- review queue ---

    @app.get("/review-queue")
    async def review_queue(request: Request, state: str = "PENDING",
                           format: str = "json"):
        tok = authorize(request, Scope.STEWARD)
        if state.upper() == "ALL":
            items = sorted(service.registry.review_items.values(),
                           key=lambda i: i.id)
        else:
            items = service.registry.pending_items()
        if format == "tsv":
            return Response(content=export_queue(items), media_type="text/plain")
        return [item.to_dict() for item in items]

    @app.post("/review-queue/{item_id}/decision")
    async def decide(item_id: str, request: Request):
        tok = authorize(request, Scope.STEWARD)
        body = await request.json()
        decision = body.get("decision", "")
        survivor = body.get("survivor_choice")
        item = audited(tok, "steward_decide", item_id, lambda at:
                       service.registry.steward_decide(
                           item_id, decision, decided_by=tok.client_id,
                           survivor_choice=survivor, actor=tok.client_id, at=at))
        return item.to_dict()

    # --- admin ---

    @app.post("/admin/purge")
    async def purge(request: Request):
        tok = authorize(request, Scope.ADMIN)
        body = await request.json() if int(request.headers.get("content-length") or 0) else {}
        now = datetime.fromisoformat(body["now"]) if body.get("now") else None

        def run(at):
            return service.registry.purge_expired(now or at, actor=tok.client_id)

        purged = audited(tok, "purge", "-", run)
        return {"purged": purged, "count": len(purged)}

    @app.post("/admin/scan")
    async def scan(request: Request):
        tok = authorize(request, Scope.STEWARD)

        def run(at):
            return service.registry.run_dedup_scan(service.configs,
                                                   service.thresholds,
                                                   actor=tok.client_id, at=at)

        results = audited(tok, "dedup_scan", "-", run)
        return [r.to_dict() for r in results]

    @app.post("/admin/snapshot")
    async def snapshot(request: Request):
        tok = authorize(request, Scope.ADMIN)
        service.snapshot()
        with service.lock:
            service.audit.record(service.clock(), tok.client_id, "snapshot", "-", "OK")
        return {"event_seq": service.registry.event_seq}

    @app.get("/audit")
    async def audit(request: Request, from_seq: int = 1):
        tok = authorize(request, Scope.ADMIN)
        return [e.to_dict() for e in service.audit.since(from_seq)]

    return app

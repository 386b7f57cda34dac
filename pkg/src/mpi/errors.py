"""Error types shared across the MPI modules.

Every failure carries a stable machine-readable code so the service layer
can map it onto HTTP responses and HL7 ACK reasons without string matching.
"""

from __future__ import annotations


class MpiError(Exception):
    """Base class; ``code`` is the stable identifier, ``detail`` is free text."""

    code = "MPI_ERROR"

    def __init__(self, detail: str = "", **context):
        super().__init__(detail or self.code)
        self.detail = detail
        self.context = context

    def __str__(self) -> str:
        if self.detail:
            return f"{self.code}: {self.detail}"
        return self.code


class SequenceExhausted(MpiError):
    code = "SEQUENCE_EXHAUSTED"


class SequenceReused(MpiError):
    code = "SEQUENCE_REUSED"


class FormatInvalid(MpiError):
    code = "FORMAT_INVALID"


class ValidationFailed(MpiError):
    code = "VALIDATION_FAILED"


# --- HL7 codec ---

class Hl7Error(MpiError):
    code = "HL7_ERROR"


class NoMshHeader(Hl7Error):
    code = "NO_MSH_HEADER"


class BadEncodingChars(Hl7Error):
    code = "BAD_ENCODING_CHARS"


class UnterminatedEscape(Hl7Error):
    code = "UNTERMINATED_ESCAPE"


class MalformedXml(Hl7Error):
    code = "MALFORMED_XML"


class UnknownSegmentElement(Hl7Error):
    code = "UNKNOWN_SEGMENT_ELEMENT"


class MissingPid(Hl7Error):
    code = "MISSING_PID"


class UnknownIdentifierTypeCode(Hl7Error):
    code = "UNKNOWN_IDENTIFIER_TYPE_CODE"


class MissingRetiredPhn(Hl7Error):
    code = "MISSING_RETIRED_PHN"


# --- matching ---

class SelfComparison(MpiError):
    code = "SELF_COMPARISON"


# --- merge / review queue ---

class AlreadyMerged(MpiError):
    code = "ALREADY_MERGED"


class NotACandidate(MpiError):
    code = "NOT_A_CANDIDATE"


class CycleDetected(MpiError):
    code = "CYCLE_DETECTED"


class SurvivorNotActive(MpiError):
    code = "SURVIVOR_NOT_ACTIVE"


class IdentifierConflict(MpiError):
    code = "IDENTIFIER_CONFLICT"


class UnknownPhn(MpiError):
    code = "UNKNOWN_PHN"


class NotReversible(MpiError):
    code = "NOT_REVERSIBLE"


class ItemNotPending(MpiError):
    code = "ITEM_NOT_PENDING"


class BadSurvivorChoice(MpiError):
    code = "BAD_SURVIVOR_CHOICE"


# --- registry service ---

class InvalidClient(MpiError):
    code = "INVALID_CLIENT"


class AuthRequired(MpiError):
    code = "AUTH_REQUIRED"


class InsufficientScope(MpiError):
    code = "INSUFFICIENT_SCOPE"


class DuplicateIdentifier(MpiError):
    code = "DUPLICATE_IDENTIFIER"


class NoCriteria(MpiError):
    code = "NO_CRITERIA"


class VersionConflict(MpiError):
    code = "VERSION_CONFLICT"


class RecordNotActive(MpiError):
    code = "RECORD_NOT_ACTIVE"


class AlreadyDeceased(MpiError):
    code = "ALREADY_DECEASED"


class MalformedInput(MpiError):
    code = "MALFORMED_INPUT"

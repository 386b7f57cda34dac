"""HL7 v2 codec for the message templates the MPI exchanges with EMR systems.

Supports ER7 (pipe-delimited) and an XML rendering of the same tree, the
six templates ADT^A04 / ADT^A08 / ADT^A40 / QBP^Q22 / RSP^K22 / ACK, and
the PID mapping into identity-model values.

Tree model: a message is an ordered list of segments; each segment field is
a list of repetitions, each repetition a list of components, each component
a list of subcomponent leaves (plain text, escape sequences decoded).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field as dc_field
from datetime import date, datetime
from enum import Enum
from typing import Optional, Sequence

from .errors import (
    BadEncodingChars,
    Hl7Error,
    MalformedXml,
    MissingPid,
    MissingRetiredPhn,
    NoMshHeader,
    UnknownIdentifierTypeCode,
    UnknownSegmentElement,
    UnterminatedEscape,
)
from .identity import DemographicProfile, Identifier, IdentifierKind, PatientRecord, Sex

SEGMENT_TERMINATOR = "\r"
HL7_VERSION = "2.5"

_SEGMENT_ID = re.compile(r"^[A-Z][A-Z0-9]{2}$")

# PID-3 identifier-type-code table (bit-exact contract)
TYPE_CODE_TO_KIND = {
    "NI": IdentifierKind.NIC,
    "PHN": IdentifierKind.PHN,
    "PPN": IdentifierKind.PASSPORT,
    "DL": IdentifierKind.DRIVING_LICENSE,
    "EN": IdentifierKind.ELDERLY_NUMBER,
    "EM": IdentifierKind.EMAIL,
}
KIND_TO_TYPE_CODE = {v: k for k, v in TYPE_CODE_TO_KIND.items()}

# field values are list[rep]; rep is list[component]; component is list[leaf]
Component = list
Repetition = list
Field = list


@dataclass(frozen=True)
class EncodingChars:
    field: str = "|"
    component: str = "^"
    repetition: str = "~"
    escape: str = "\\"
    subcomponent: str = "&"

    @property
    def msh2(self) -> str:
        return self.component + self.repetition + self.escape + self.subcomponent

    def all(self) -> tuple[str, ...]:
        return (self.field, self.component, self.repetition, self.escape, self.subcomponent)


@dataclass
class Segment:
    id: str
    fields: list  # fields[i] is SEG-(i+1)

    def field(self, n: int) -> Field:
        if 1 <= n <= len(self.fields):
            return self.fields[n - 1]
        return []

    def value(self, n: int, rep: int = 0, comp: int = 0, sub: int = 0) -> str:
        f = self.field(n)
        try:
            return f[rep][comp][sub]
        except (IndexError, TypeError):
            return ""


@dataclass
class Hl7Message:
    segments: list
    encoding: EncodingChars = dc_field(default_factory=EncodingChars)

    def segment(self, seg_id: str) -> Optional[Segment]:
        for s in self.segments:
            if s.id == seg_id:
                return s
        return None

    def all_segments(self, seg_id: str) -> list:
        return [s for s in self.segments if s.id == seg_id]

    @property
    def control_id(self) -> str:
        msh = self.segment("MSH")
        return msh.value(10) if msh else ""


class MessageKind(str, Enum):
    ADT_A04 = "ADT_A04"
    ADT_A08 = "ADT_A08"
    ADT_A40 = "ADT_A40"
    QBP_Q22 = "QBP_Q22"
    RSP_K22 = "RSP_K22"
    ACK = "ACK"


def message_kind(message: Hl7Message) -> Optional[MessageKind]:
    """MessageKind implied by MSH-9, or None when the trigger is unknown."""
    msh = message.segment("MSH")
    if msh is None:
        return None
    code = msh.value(9, comp=0)
    trigger = msh.value(9, comp=1)
    if code == "ACK":
        return MessageKind.ACK
    try:
        return MessageKind(f"{code}_{trigger}")
    except ValueError:
        return None


# --- escape handling ---

def _escape_table(enc: EncodingChars) -> dict:
    return {
        "F": enc.field,
        "S": enc.component,
        "T": enc.subcomponent,
        "R": enc.repetition,
        "E": enc.escape,
    }


def _decode_escapes(text: str, enc: EncodingChars) -> str:
    if enc.escape not in text:
        return text
    table = _escape_table(enc)
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch != enc.escape:
            out.append(ch)
            i += 1
            continue
        end = text.find(enc.escape, i + 1)
        if end == -1:
            raise UnterminatedEscape(f"unterminated escape at offset {i}")
        code = text[i + 1:end]
        if code in table:
            out.append(table[code])
        else:
            # unknown sequence: keep literally (lenient input, never crash)
            out.append(text[i:end + 1])
        i = end + 1
    return "".join(out)


def _encode_escapes(text: str, enc: EncodingChars) -> str:
    reverse = [(enc.escape, "E"), (enc.field, "F"), (enc.component, "S"),
               (enc.subcomponent, "T"), (enc.repetition, "R")]
    for ch, code in reverse:
        if ch in text:
            text = text.replace(ch, enc.escape + code + enc.escape)
    return text


# --- ER7 codec ---

def _parse_field(raw: str, enc: EncodingChars) -> Field:
    reps = []
    for rep in raw.split(enc.repetition):
        comps = []
        for comp in rep.split(enc.component):
            comps.append([_decode_escapes(s, enc) for s in comp.split(enc.subcomponent)])
        reps.append(comps)
    return reps


def parse_er7(text: str) -> Hl7Message:
    """Parse a pipe-delimited HL7 v2 message (CR segment terminators;
    LF / CRLF inputs are normalized)."""
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    if not text or not text.strip():
        raise NoMshHeader("empty input")
    text = text.replace("\r\n", "\r").replace("\n", "\r")
    lines = [ln for ln in text.split("\r") if ln]
    if not lines or not lines[0].startswith("MSH"):
        raise NoMshHeader("first segment must be MSH")
    msh_line = lines[0]
    if len(msh_line) < 8:
        raise BadEncodingChars("MSH header too short to declare delimiters")
    fsep = msh_line[3]
    comp, rep, esc, sub = msh_line[4], msh_line[5], msh_line[6], msh_line[7]
    if len(msh_line) > 8 and msh_line[8] != fsep:
        raise BadEncodingChars("MSH-2 must be exactly four encoding characters")
    enc = EncodingChars(fsep, comp, rep, esc, sub)
    if len(set(enc.all())) != 5:
        raise BadEncodingChars("delimiters must be five distinct characters")
    if any(c.isalnum() or c.isspace() for c in enc.all()):
        raise BadEncodingChars("delimiters must not be alphanumeric or whitespace")

    segments = []
    # MSH: field 1 is the separator itself, field 2 the raw encoding chars
    msh_rest = msh_line[9:] if len(msh_line) > 9 else ""
    msh_fields: list = [[[[fsep]]], [[[enc.msh2]]]]
    if len(msh_line) > 8:
        for raw in msh_rest.split(fsep):
            msh_fields.append(_parse_field(raw, enc))
    segments.append(Segment("MSH", msh_fields))

    for line in lines[1:]:
        parts = line.split(fsep)
        seg_id = parts[0]
        if not _SEGMENT_ID.match(seg_id):
            raise Hl7Error(f"bad segment id {seg_id!r}")
        segments.append(Segment(seg_id, [_parse_field(raw, enc) for raw in parts[1:]]))
    return Hl7Message(segments, enc)


def _emit_field(f: Field, enc: EncodingChars) -> str:
    reps = []
    for rep in f:
        comps = []
        for comp in rep:
            comps.append(enc.subcomponent.join(_encode_escapes(s, enc) for s in comp))
        reps.append(enc.component.join(comps))
    return enc.repetition.join(reps)


def _is_empty_field(f: Field) -> bool:
    return all(all(all(s == "" for s in comp) for comp in rep) for rep in f) \
        and sum(len(comp) for rep in f for comp in rep) <= 1


def emit_er7(message: Hl7Message) -> str:
    """Canonical ER7: CR-joined segments, trailing empty fields trimmed,
    delimiters inside leaves re-escaped."""
    enc = message.encoding
    lines = []
    for seg in message.segments:
        if seg.id == "MSH":
            fields = seg.fields[2:]
            rendered = [_emit_field(f, enc) for f in fields]
            while rendered and rendered[-1] == "":
                rendered.pop()
            lines.append("MSH" + enc.field + enc.msh2 +
                         ("" if not rendered else enc.field + enc.field.join(rendered)))
        else:
            rendered = [_emit_field(f, enc) for f in seg.fields]
            while rendered and rendered[-1] == "":
                rendered.pop()
            lines.append(enc.field.join([seg.id] + rendered))
    return SEGMENT_TERMINATOR.join(lines) + SEGMENT_TERMINATOR


# --- XML codec ---

def emit_xml(message: Hl7Message) -> bytes:
    """Same tree as ER7, rendered as XML: segment-code elements containing
    dot-positional field elements (PID.3, PID.3.1, PID.3.1.2)."""
    import xml.etree.ElementTree as ET

    root = ET.Element("HL7Message")
    for seg in message.segments:
        seg_el = ET.SubElement(root, seg.id)
        for n, f in enumerate(seg.fields, start=1):
            name = f"{seg.id}.{n}"
            if seg.id == "MSH" and n in (1, 2):
                el = ET.SubElement(seg_el, name)
                el.text = f[0][0][0]
                continue
            for rep in f:
                rep_el = ET.SubElement(seg_el, name)
                if len(rep) == 1 and len(rep[0]) == 1:
                    rep_el.text = rep[0][0]
                    continue
                for c, comp in enumerate(rep, start=1):
                    comp_el = ET.SubElement(rep_el, f"{name}.{c}")
                    if len(comp) == 1:
                        comp_el.text = comp[0]
                    else:
                        for s, leaf in enumerate(comp, start=1):
                            sub_el = ET.SubElement(comp_el, f"{name}.{c}.{s}")
                            sub_el.text = leaf
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def parse_xml(data) -> Hl7Message:
    """Inverse of emit_xml."""
    import xml.etree.ElementTree as ET

    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc
    if root.tag != "HL7Message":
        raise MalformedXml(f"unexpected root element {root.tag!r}")

    segments = []
    enc = EncodingChars()
    for seg_el in root:
        seg_id = seg_el.tag
        if not _SEGMENT_ID.match(seg_id):
            raise UnknownSegmentElement(f"element {seg_id!r} is not a segment code")
        fields: list = []

        def ensure(n):
            while len(fields) < n:
                fields.append([[[""]]])

        last_n = 0
        for field_el in seg_el:
            m = re.match(rf"^{seg_id}\.(\d+)$", field_el.tag)
            if not m:
                raise UnknownSegmentElement(f"element {field_el.tag!r} not positional in {seg_id}")
            n = int(m.group(1))
            ensure(n)
            rep = _xml_repetition(field_el)
            if n == last_n:
                fields[n - 1].append(rep)
            else:
                fields[n - 1] = [rep]
            last_n = n
        segments.append(Segment(seg_id, fields))

    if not segments or segments[0].id != "MSH":
        raise NoMshHeader("XML message lacks a leading MSH segment")
    msh = segments[0]
    fsep = msh.value(1) or "|"
    msh2 = msh.value(2) or "^~\\&"
    if len(msh2) != 4:
        raise BadEncodingChars("MSH.2 must hold exactly four characters")
    enc = EncodingChars(fsep, msh2[0], msh2[1], msh2[2], msh2[3])
    # MSH-1/2 stay raw single leaves
    msh.fields[0] = [[[fsep]]]
    msh.fields[1] = [[[msh2]]]
    return Hl7Message(segments, enc)


def _xml_repetition(field_el) -> Repetition:
    children = list(field_el)
    if not children:
        return [[field_el.text or ""]]
    comps = []
    for comp_el in children:
        subs = list(comp_el)
        if not subs:
            comps.append([comp_el.text or ""])
        else:
            comps.append([s.text or "" for s in subs])
    return comps


# --- convenience constructors ---

def _leaf(value: str) -> Field:
    return [[[value]]]


def _comps(*components) -> Field:
    """One repetition; each component a string or tuple of subcomponents."""
    rep = []
    for comp in components:
        if isinstance(comp, (tuple, list)):
            rep.append(list(comp))
        else:
            rep.append([comp])
    return [rep]


def _trim_trailing(fields: list) -> list:
    while fields and _is_empty_field(fields[-1]):
        fields.pop()
    return fields


def hl7_timestamp(at: datetime) -> str:
    return at.strftime("%Y%m%d%H%M%S")


def build_msh(sender: tuple, receiver: tuple, msg_type: str, trigger: str,
              control_id: str, at: datetime) -> Segment:
    fields = [
        _leaf("|"), _leaf("^~\\&"),
        _leaf(sender[0]), _leaf(sender[1]),
        _leaf(receiver[0]), _leaf(receiver[1]),
        _leaf(hl7_timestamp(at)), _leaf(""),
        _comps(msg_type, trigger) if trigger else _leaf(msg_type),
        _leaf(control_id), _leaf("P"), _leaf(HL7_VERSION),
    ]
    return Segment("MSH", fields)


def _pid_segment(record: PatientRecord) -> Segment:
    id_reps = []
    for ident in sorted(record.identifiers):
        code = KIND_TO_TYPE_CODE.get(ident.kind)
        if code is None:
            continue  # NAME_KEY / EXTENSION identifiers have no CX rendering
        authority = ident.issuing_authority or "MPI"
        id_reps.append([[ident.value], [""], [""], [authority], [code]])
    profile = record.profile
    name_comps = [profile.family_name] + list(profile.given_names)
    fields = [
        _leaf("1"), _leaf(""),
        id_reps or _leaf(""),
        _leaf(""),
        _comps(*name_comps) if any(name_comps) else _leaf(""),
        _leaf(""),
        _leaf(profile.date_of_birth.strftime("%Y%m%d")),
        _leaf(profile.sex.value),
        _leaf(""), _leaf(""),
        _comps(*profile.address_lines) if profile.address_lines else _leaf(""),
        _leaf(""),
        _leaf(profile.contact_number or ""),
    ]
    return Segment("PID", _trim_trailing(fields))


def build_adt(kind: MessageKind, record: PatientRecord, retired: Optional[str] = None,
              *, sender: tuple = ("MPI", "MOH"), receiver: tuple = ("EMR", "FACILITY"),
              control_id: str = "MSG00001", at: Optional[datetime] = None) -> Hl7Message:
    """Registration (A04), update (A08), or merge (A40) notification."""
    if kind not in (MessageKind.ADT_A04, MessageKind.ADT_A08, MessageKind.ADT_A40):
        raise Hl7Error(f"{kind} is not an ADT template")
    if kind is MessageKind.ADT_A40 and not retired:
        raise MissingRetiredPhn("A40 requires the retired PHN")
    if kind is not MessageKind.ADT_A40 and retired:
        raise Hl7Error("retired PHN only applies to A40")
    at = at or record.updated_at
    trigger = kind.value.split("_")[1]
    segments = [
        build_msh(sender, receiver, "ADT", trigger, control_id, at),
        Segment("EVN", [_leaf(trigger), _leaf(hl7_timestamp(at))]),
        _pid_segment(record),
    ]
    if kind is MessageKind.ADT_A40:
        segments.append(Segment("MRG", [_leaf(retired)]))
    return Hl7Message(segments)


def build_ack(original: Hl7Message, code: str, reason: Optional[str] = None,
              *, control_id: str = "ACK00001", at: Optional[datetime] = None) -> Hl7Message:
    """ACK for ``original``: MSA-1 the code, MSA-2 echoes its control id,
    MSH sender/receiver swapped."""
    if code not in ("AA", "AE", "AR"):
        raise Hl7Error(f"bad acknowledgment code {code!r}")
    msh = original.segment("MSH")
    if msh is None:
        raise NoMshHeader("original message lacks MSH")
    sender = (msh.value(5), msh.value(6))
    receiver = (msh.value(3), msh.value(4))
    at = at or datetime.now()
    msa_fields = [_leaf(code), _leaf(original.control_id)]
    if reason:
        msa_fields.append(_leaf(reason))
    return Hl7Message([
        build_msh(sender, receiver, "ACK", "", control_id, at),
        Segment("MSA", msa_fields),
    ])


def build_qbp_q22(criteria: Sequence[tuple], *, query_tag: str = "Q0001",
                  sender: tuple = ("EMR", "FACILITY"), receiver: tuple = ("MPI", "MOH"),
                  control_id: str = "QRY00001", at: Optional[datetime] = None) -> Hl7Message:
    """Demographics query: QPD-3 holds kind-code^value repetitions."""
    at = at or datetime.now()
    qpd_reps = [[[KIND_TO_TYPE_CODE.get(kind, str(kind))], [value]] for kind, value in criteria]
    return Hl7Message([
        build_msh(sender, receiver, "QBP", "Q22", control_id, at),
        Segment("QPD", [_leaf("Q22"), _leaf(query_tag), qpd_reps or _leaf("")]),
        Segment("RCP", [_leaf("I")]),
    ])


def build_rsp_k22(original: Hl7Message, records: Sequence[PatientRecord],
                  *, control_id: str = "RSP00001", at: Optional[datetime] = None) -> Hl7Message:
    """Query response: MSA echo, QAK hit status, one PID per match."""
    msh = original.segment("MSH")
    if msh is None:
        raise NoMshHeader("original message lacks MSH")
    qpd = original.segment("QPD")
    query_tag = qpd.value(2) if qpd else ""
    at = at or datetime.now()
    segments = [
        build_msh((msh.value(5), msh.value(6)), (msh.value(3), msh.value(4)),
                  "RSP", "K22", control_id, at),
        Segment("MSA", [_leaf("AA"), _leaf(original.control_id)]),
        Segment("QAK", [_leaf(query_tag), _leaf("OK" if records else "NF")]),
    ]
    if qpd is not None:
        segments.append(Segment("QPD", [f for f in qpd.fields]))
    for rec in records:
        segments.append(_pid_segment(rec))
    return Hl7Message(segments)


# --- PID extraction ---

def parse_hl7_date(raw: str) -> date:
    if len(raw) < 8 or not raw[:8].isdigit():
        raise Hl7Error(f"bad HL7 date {raw!r}")
    return date(int(raw[:4]), int(raw[4:6]), int(raw[6:8]))


def extract_patient(message: Hl7Message) -> tuple:
    """(DemographicProfile, set of Identifier) from the message's PID segment."""
    pids = message.all_segments("PID")
    if len(pids) != 1:
        raise MissingPid(f"expected exactly one PID segment, found {len(pids)}")
    pid = pids[0]

    identifiers = set()
    for rep_idx, rep in enumerate(pid.field(3)):
        value = rep[0][0] if rep and rep[0] else ""
        if not value:
            continue
        code = rep[4][0] if len(rep) > 4 and rep[4] else ""
        kind = TYPE_CODE_TO_KIND.get(code)
        if kind is None:
            raise UnknownIdentifierTypeCode(
                f"PID-3 repetition {rep_idx + 1} has unknown type code {code!r}")
        authority = rep[3][0] if len(rep) > 3 and rep[3] else None
        identifiers.add(Identifier(kind, value, authority or None))

    family = pid.value(5, comp=0)
    given = tuple(pid.value(5, comp=c) for c in range(1, 3) if pid.value(5, comp=c))
    dob_raw = pid.value(7)
    if not dob_raw:
        raise Hl7Error("PID-7 date of birth missing")
    sex_raw = pid.value(8) or "U"
    try:
        sex = Sex(sex_raw)
    except ValueError:
        sex = Sex.U
    address = tuple(c[0] for c in (pid.field(11)[0] if pid.field(11) else []) if c and c[0])
    contact = pid.value(13) or None

    profile = DemographicProfile(
        family_name=family,
        given_names=given,
        date_of_birth=parse_hl7_date(dob_raw),
        sex=sex,
        address_lines=address,
        contact_number=contact,
    )
    return profile, identifiers

"""Patient record assembly: encounters, events, and their timestamps.

FHIR scatters the "when did this happen" answer across kind-specific
fields, so each event kind gets a fallback chain ending at the parent
encounter's start. Events whose encounter reference does not resolve are
kept as orphans and reported as warnings, not failures — synthetic data
is imperfect and the viewer must still render.
"""

from __future__ import annotations

import base64
import binascii
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timezone

from fhirgate.errors import NotFound
from fhirgate.fhir.bundle import (
    EVENT_KINDS,
    ResourceRef,
    ResourceSet,
    human_name,
)

logger = logging.getLogger(__name__)

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class EncounterEvent:
    ref: ResourceRef
    kind: str
    effective_time: datetime
    display: str
    detail: tuple[tuple[str, str], ...]
    attachment: str | None = None  # storage path; ImagingStudy only

    @property
    def sort_key(self):
        return (self.effective_time, self.kind, self.ref.id)


@dataclass
class Encounter:
    ref: ResourceRef
    start: datetime
    end: datetime | None
    events: list[EncounterEvent] = field(default_factory=list)


@dataclass
class PatientRecord:
    patient_ref: ResourceRef
    name: str
    birth_date: str
    gender: str
    encounters: list[Encounter] = field(default_factory=list)
    orphan_events: list[EncounterEvent] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def parse_instant(value: str) -> datetime | None:
    """Parse a FHIR date/dateTime into an aware UTC datetime.

    Partial dates ("2014", "2014-03") resolve to the first instant of the
    period; naive datetimes are taken as UTC.
    """
    if not isinstance(value, str) or not value:
        return None
    text = value.strip()
    if len(text) == 4 and text.isdigit():
        text += "-01-01"
    elif len(text) == 7 and text[4] == "-":
        text += "-01"
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError:
        return None
    if isinstance(parsed, datetime):
        if parsed.tzinfo is None:
            parsed = parsed.replace(tzinfo=timezone.utc)
        return parsed.astimezone(timezone.utc)
    return None


def codeable_text(cc) -> str:
    if not isinstance(cc, dict):
        return ""
    if cc.get("text"):
        return str(cc["text"])
    for coding in cc.get("coding") or []:
        if coding.get("display"):
            return str(coding["display"])
        if coding.get("code"):
            return str(coding["code"])
    return ""


def _quantity_text(q) -> str:
    if not isinstance(q, dict) or "value" not in q:
        return ""
    unit = q.get("unit") or q.get("code") or ""
    return f"{q['value']} {unit}".strip()


# effective_time candidates per kind, tried in order
_TIME_FIELDS = {
    "Observation": ("effectiveDateTime", ("effectivePeriod", "start"), "issued"),
    "Condition": ("onsetDateTime", "recordedDate"),
    "MedicationRequest": ("authoredOn",),
    "Procedure": (("performedPeriod", "start"), "performedDateTime"),
    "Immunization": ("occurrenceDateTime", "recorded"),
    "DiagnosticReport": ("effectiveDateTime", ("effectivePeriod", "start"), "issued"),
    "ImagingStudy": ("started",),
}


def event_time(resource: dict, kind: str) -> datetime | None:
    for spec in _TIME_FIELDS.get(kind, ()):
        if isinstance(spec, tuple):
            value = (resource.get(spec[0]) or {}).get(spec[1])
        else:
            value = resource.get(spec)
        parsed = parse_instant(value) if value else None
        if parsed is not None:
            return parsed
    return None


def _decode_note(resource: dict) -> str:
    for form in resource.get("presentedForm") or []:
        ctype = form.get("contentType") or ""
        data = form.get("data")
        if data and ctype.startswith("text/"):
            try:
                return base64.b64decode(data).decode("utf-8", errors="replace")
            except (binascii.Error, ValueError):
                continue
    return ""


def event_display(resource: dict, kind: str) -> str:
    if kind == "MedicationRequest":
        text = codeable_text(resource.get("medicationCodeableConcept"))
    elif kind == "Immunization":
        text = codeable_text(resource.get("vaccineCode"))
    elif kind == "ImagingStudy":
        text = resource.get("description") or ""
        if not text:
            for series in resource.get("series") or []:
                text = codeable_text(series.get("bodySite"))
                if text:
                    break
    else:
        text = codeable_text(resource.get("code"))
    return text or kind


def event_detail(resource: dict, kind: str) -> tuple[tuple[str, str], ...]:
    """Curated (field, value) pairs shown on the event's floating panel."""
    pairs: list[tuple[str, str]] = []

    def add(name, value):
        if value:
            pairs.append((name, str(value)))

    add("status", resource.get("status"))
    if kind == "Observation":
        add("value", _quantity_text(resource.get("valueQuantity"))
            or codeable_text(resource.get("valueCodeableConcept"))
            or resource.get("valueString"))
        for comp in resource.get("component") or []:
            add(codeable_text(comp.get("code")) or "component",
                _quantity_text(comp.get("valueQuantity")))
    elif kind == "Condition":
        add("clinicalStatus", codeable_text(resource.get("clinicalStatus")))
        add("verificationStatus", codeable_text(resource.get("verificationStatus")))
        add("onset", resource.get("onsetDateTime"))
    elif kind == "MedicationRequest":
        add("medication", codeable_text(resource.get("medicationCodeableConcept")))
        add("intent", resource.get("intent"))
        add("authoredOn", resource.get("authoredOn"))
    elif kind == "Procedure":
        period = resource.get("performedPeriod") or {}
        add("performed", period.get("start") or resource.get("performedDateTime"))
    elif kind == "Immunization":
        add("vaccine", codeable_text(resource.get("vaccineCode")))
        add("occurrence", resource.get("occurrenceDateTime"))
    elif kind == "DiagnosticReport":
        add("issued", resource.get("issued"))
        add("note", _decode_note(resource))
    elif kind == "ImagingStudy":
        add("started", resource.get("started"))
        add("series", len(resource.get("series") or []) or None)
        add("modality", ", ".join(
            m.get("code", "") for s in resource.get("series") or []
            for m in [s.get("modality") or {}] if m.get("code")))
    return tuple(pairs)


def imaging_attachment(resource: dict) -> str | None:
    """Storage path an ImagingStudy was repointed at (endpoint display)."""
    for endpoint in resource.get("endpoint") or []:
        display = endpoint.get("display")
        if isinstance(display, str) and display:
            return display
    return None


def build_event(ref: ResourceRef, resource: dict,
                fallback_time: datetime | None) -> tuple[EncounterEvent, str | None]:
    """Event plus an optional warning when no usable timestamp existed."""
    warning = None
    when = event_time(resource, ref.resource_type)
    if when is None:
        when = fallback_time
    if when is None:
        when = EPOCH
        warning = f"{ref}: no usable timestamp; placed at epoch"
    attachment = imaging_attachment(resource) if ref.resource_type == "ImagingStudy" else None
    event = EncounterEvent(
        ref=ref,
        kind=ref.resource_type,
        effective_time=when,
        display=event_display(resource, ref.resource_type),
        detail=event_detail(resource, ref.resource_type),
        attachment=attachment,
    )
    return event, warning


def extract_patient_record(rset: ResourceSet, patient_id: str) -> PatientRecord:
    """Assemble one patient's encounters and events from a ResourceSet.

    Raises NotFound if the patient id is absent. Dangling references are
    degraded to entries in ``record.warnings``.
    """
    patient_ref = ResourceRef("Patient", patient_id)
    if patient_ref not in rset.resources:
        raise NotFound(str(patient_ref))
    patient = rset.resources[patient_ref]
    record = PatientRecord(
        patient_ref=patient_ref,
        name=human_name(patient),
        birth_date=patient.get("birthDate") or "",
        gender=patient.get("gender") or "",
    )

    encounters: dict[ResourceRef, Encounter] = {}
    event_rows: list[tuple[ResourceRef, dict]] = []
    for ref in rset.index.get(patient_id, ()):
        resource = rset.resources[ref]
        if ref.resource_type == "Encounter":
            period = resource.get("period") or {}
            start = parse_instant(period.get("start"))
            if start is None:
                record.warnings.append(f"{ref}: encounter has no period.start; skipped")
                continue
            end = parse_instant(period.get("end"))
            encounters[ref] = Encounter(ref=ref, start=start, end=end)
        elif ref.resource_type in EVENT_KINDS:
            event_rows.append((ref, resource))

    for ref, resource in event_rows:
        enc_reference = (resource.get("encounter") or {}).get("reference")
        enc = None
        if isinstance(enc_reference, str):
            target = rset.resolve_str(enc_reference)
            if target is not None and target in encounters:
                enc = encounters[target]
            else:
                record.warnings.append(
                    f"{ref}: encounter reference {enc_reference!r} does not resolve")
        event, warning = build_event(ref, resource, enc.start if enc else None)
        if warning:
            record.warnings.append(warning)
        if enc is not None:
            enc.events.append(event)
        else:
            record.orphan_events.append(event)

    for enc in encounters.values():
        enc.events.sort(key=lambda e: e.sort_key)
    record.orphan_events.sort(key=lambda e: e.sort_key)
    record.encounters = sorted(encounters.values(), key=lambda e: (e.start, e.ref.id))
    return record

"""FHIR bundle parsing and patient record assembly."""

from fhirgate.fhir.bundle import (
    SUPPORTED_KINDS,
    ResourceRef,
    ResourceSet,
    list_patients,
    parse_bundle,
    parse_ref,
    resolve_reference,
)
from fhirgate.fhir.records import (
    Encounter,
    EncounterEvent,
    PatientRecord,
    extract_patient_record,
)

__all__ = [
    "SUPPORTED_KINDS",
    "ResourceRef",
    "ResourceSet",
    "parse_bundle",
    "parse_ref",
    "resolve_reference",
    "list_patients",
    "EncounterEvent",
    "Encounter",
    "PatientRecord",
    "extract_patient_record",
]

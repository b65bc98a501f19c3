"""FHIR R4 JSON bundle parsing into an indexed, reference-resolvable set.

Only nine resource kinds are kept (the closed set timeline glyphs are
defined over); anything else is counted and skipped. Synthea transaction
bundles address resources by ``urn:uuid:...`` fullUrls, so those aliases
are resolved at ingest alongside plain ``Type/id`` references.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from fhirgate.errors import DuplicateResource, MalformedJson, NotABundle, NotFound

logger = logging.getLogger(__name__)

SUPPORTED_KINDS = frozenset({
    "Patient",
    "Encounter",
    "Condition",
    "Observation",
    "MedicationRequest",
    "Procedure",
    "Immunization",
    "DiagnosticReport",
    "ImagingStudy",
})

# Event kinds hang off a patient; Patient itself is the anchor.
EVENT_KINDS = frozenset(SUPPORTED_KINDS - {"Patient", "Encounter"})

# Field holding the patient reference, per kind.
_PATIENT_FIELD = {
    "Encounter": "subject",
    "Condition": "subject",
    "Observation": "subject",
    "MedicationRequest": "subject",
    "Procedure": "subject",
    "Immunization": "patient",
    "DiagnosticReport": "subject",
    "ImagingStudy": "subject",
}


@dataclass(frozen=True, order=True)
class ResourceRef:
    resource_type: str
    id: str

    def __post_init__(self):
        if self.resource_type not in SUPPORTED_KINDS:
            raise ValueError(f"unsupported resource type: {self.resource_type!r}")
        if not self.id:
            raise ValueError("resource id must be non-empty")

    def __str__(self) -> str:
        return f"{self.resource_type}/{self.id}"


@dataclass
class ResourceSet:
    """Parsed bundle contents. Treated as immutable once built."""

    resources: dict[ResourceRef, dict] = field(default_factory=dict)
    # patient id -> refs of all resources whose patient field points at it
    index: dict[str, list[ResourceRef]] = field(default_factory=dict)
    # fullUrl (urn:uuid:... or absolute) -> ref, for alias resolution
    aliases: dict[str, ResourceRef] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.resources)

    @property
    def skipped_count(self) -> int:
        return sum(self.skipped.values())

    def counts_by_type(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for ref in self.resources:
            counts[ref.resource_type] = counts.get(ref.resource_type, 0) + 1
        return counts

    def resolve_str(self, reference: str) -> ResourceRef | None:
        """Turn a reference string into a ref held by this set, else None."""
        if reference in self.aliases:
            return self.aliases[reference]
        ref = parse_ref(reference)
        if ref is not None and ref in self.resources:
            return ref
        return None

    def merged_with(self, other: "ResourceSet") -> "ResourceSet":
        """New set with *other*'s resources layered on top (same (type,id) replaced)."""
        merged = ResourceSet()
        for src in (self, other):
            for ref, rec in src.resources.items():
                merged.resources[ref] = rec
            merged.aliases.update(src.aliases)
            for kind, n in src.skipped.items():
                merged.skipped[kind] = merged.skipped.get(kind, 0) + n
        _rebuild_index(merged)
        return merged


def parse_ref(reference: str) -> ResourceRef | None:
    """Parse a ``Type/id`` reference string; None if not that shape."""
    if "/" not in reference:
        return None
    rtype, _, rid = reference.partition("/")
    if rtype not in SUPPORTED_KINDS or not rid:
        return None
    return ResourceRef(rtype, rid)


def parse_bundle(json_bytes: bytes) -> ResourceSet:
    """Parse a FHIR Bundle document into a ResourceSet.

    Raises MalformedJson, NotABundle, or DuplicateResource (same type+id
    appearing twice in one bundle).
    """
    try:
        doc = json.loads(json_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedJson(str(exc)) from exc
    if not isinstance(doc, dict) or doc.get("resourceType") != "Bundle":
        raise NotABundle(f"resourceType is {doc.get('resourceType')!r}, expected 'Bundle'"
                         if isinstance(doc, dict) else "document is not a JSON object")

    rset = ResourceSet()
    for entry in doc.get("entry") or []:
        resource = entry.get("resource")
        if not isinstance(resource, dict):
            continue
        rtype = resource.get("resourceType")
        if rtype not in SUPPORTED_KINDS:
            rset.skipped[rtype] = rset.skipped.get(rtype, 0) + 1
            continue
        rid = resource.get("id")
        full_url = entry.get("fullUrl")
        if not rid and isinstance(full_url, str) and full_url.startswith("urn:uuid:"):
            rid = full_url[len("urn:uuid:"):]
        if not rid:
            rset.skipped[rtype] = rset.skipped.get(rtype, 0) + 1
            logger.warning("entry of type %s has no id and no urn fullUrl; skipped", rtype)
            continue
        ref = ResourceRef(rtype, rid)
        if ref in rset.resources:
            raise DuplicateResource(str(ref))
        rset.resources[ref] = resource
        if isinstance(full_url, str) and full_url:
            rset.aliases[full_url] = ref
    _rebuild_index(rset)
    return rset


def _rebuild_index(rset: ResourceSet) -> None:
    rset.index = {}
    for ref, resource in rset.resources.items():
        pfield = _PATIENT_FIELD.get(ref.resource_type)
        if pfield is None:
            continue
        reference = (resource.get(pfield) or {}).get("reference")
        if not isinstance(reference, str):
            continue
        target = rset.resolve_str(reference)
        if target is None or target.resource_type != "Patient":
            continue
        rset.index.setdefault(target.id, []).append(ref)
    for refs in rset.index.values():
        refs.sort()


def resolve_reference(rset: ResourceSet, ref: ResourceRef | str) -> dict:
    """Return the stored raw record for *ref* (ResourceRef or reference string)."""
    if isinstance(ref, str):
        resolved = rset.resolve_str(ref)
        if resolved is None:
            raise NotFound(ref)
        ref = resolved
    try:
        return rset.resources[ref]
    except KeyError:
        raise NotFound(str(ref)) from None


def human_name(resource: dict) -> str:
    """Best-effort display name for a Patient resource."""
    for name in resource.get("name") or []:
        given = " ".join(name.get("given") or [])
        family = name.get("family") or ""
        text = " ".join(part for part in (given, family) if part)
        if text:
            return text
        if name.get("text"):
            return name["text"]
    return "(unnamed)"


def list_patients(rset: ResourceSet) -> list[tuple[ResourceRef, str, str, str]]:
    """One (ref, name, birth_date, gender) summary per Patient, sorted by id."""
    out = []
    for ref in sorted(r for r in rset.resources if r.resource_type == "Patient"):
        resource = rset.resources[ref]
        out.append((
            ref,
            human_name(resource),
            resource.get("birthDate") or "",
            resource.get("gender") or "",
        ))
    return out

"""Durable resource store: one normalized JSON file per resource.

Files live under ``fhir/<Type>/<id>.json`` inside a LocalBlobStore.
Normalization injects the resource id and rewrites bundle-local aliases
(urn:uuid fullUrls) to plain ``Type/id`` references, so a reloaded store
resolves the same way the original bundle did.
"""

import json
from pathlib import Path

from fhirgate.canonical import canonical_json
from fhirgate.errors import MalformedJson
from fhirgate.fhir.bundle import ResourceRef, ResourceSet, parse_bundle

STORE_PREFIX = "fhir"


def normalize_references(node, aliases: dict[str, ResourceRef]):
    """Rewrite every reference string that names a bundle-local alias."""
    if isinstance(node, dict):
        out = {}
        for key, value in node.items():
            if key == "reference" and isinstance(value, str) and value in aliases:
                out[key] = str(aliases[value])
            else:
                out[key] = normalize_references(value, aliases)
        return out
    if isinstance(node, list):
        return [normalize_references(item, aliases) for item in node]
    return node


def persist_resources(store, rset: ResourceSet) -> list[ResourceRef]:
    """Write every resource in ``rset`` to the store; returns written refs."""
    written = []
    for ref in sorted(rset.resources):
        doc = normalize_references(rset.resources[ref], rset.aliases)
        doc["resourceType"] = ref.resource_type
        doc["id"] = ref.id
        store.put(f"{STORE_PREFIX}/{ref.resource_type}/{ref.id}.json",
                  canonical_json(doc))
        written.append(ref)
    return written


def load_resources(store) -> ResourceSet:
    """Rebuild a ResourceSet from every file under the store's fhir/ tree."""
    base = Path(store.root) / STORE_PREFIX
    entries = []
    for path in sorted(base.glob("*/*.json")):
        try:
            entries.append({"resource": json.loads(path.read_bytes())})
        except ValueError as exc:
            raise MalformedJson(f"{path}: {exc}") from exc
    return parse_bundle(canonical_json({"resourceType": "Bundle",
                                        "entry": entries}))

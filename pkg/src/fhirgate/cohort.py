"""Patient retrieval: filtering, name/id lookup, and 3D cluster layout.

Similarity between patients is the Jaccard overlap of their condition-code
sets. The cluster layout runs a fixed number of force-directed iterations:
pairs attract in proportion to their similarity and repel uniformly, so
phenotypically similar patients settle near each other inside the unit
cube. The layout is deterministic for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fhirgate.errors import CohortTooLarge, EmptyQuery, NoPatients, NotFound
from fhirgate.fhir.bundle import ResourceRef, ResourceSet, human_name, list_patients

MAX_CLUSTER_PATIENTS = 500

# Equilibrium spacing for a pair with similarity s is (REPULSION/(ATTRACTION*s))^(1/3),
# about 0.09 for identical code sets; dissimilar pairs spread to the walls.
_ATTRACTION = 0.15
_REPULSION = 1e-4
_STEP = 0.1
_EPS = 1e-9


@dataclass(frozen=True)
class CohortQuery:
    condition_codes: frozenset = frozenset()
    gender: str | None = None
    birth_from: str | None = None  # inclusive ISO date bounds
    birth_to: str | None = None
    name_substring: str | None = None
    id: str | None = None

    @property
    def is_empty(self) -> bool:
        return not (self.condition_codes or self.gender or self.birth_from
                    or self.birth_to or self.name_substring or self.id)


@dataclass(frozen=True)
class PatientCluster:
    seed: int
    placements: tuple[tuple[ResourceRef, tuple[float, float, float]], ...]
    similarity: dict  # (id_a, id_b) -> Jaccard, for id_a < id_b


def condition_codes(rset: ResourceSet, patient_id: str) -> frozenset:
    """All condition codes recorded for one patient."""
    codes = set()
    for ref in rset.index.get(patient_id, ()):
        if ref.resource_type != "Condition":
            continue
        for coding in (rset.resources[ref].get("code") or {}).get("coding") or []:
            if coding.get("code"):
                codes.add(str(coding["code"]))
    return frozenset(codes)


def jaccard(a: frozenset, b: frozenset) -> float:
    """Set overlap in [0,1]; two empty sets count as wholly dissimilar."""
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def query_cohort(rset: ResourceSet, query: CohortQuery):
    """Patient summaries matching every set criterion, sorted by id."""
    if query.is_empty:
        raise EmptyQuery("at least one criterion is required")
    matches = []
    for ref, name, birth_date, gender in list_patients(rset):
        if query.id is not None and ref.id != query.id:
            continue
        if query.gender is not None and gender != query.gender:
            continue
        if query.birth_from is not None and (not birth_date
                                             or birth_date < query.birth_from):
            continue
        if query.birth_to is not None and (not birth_date
                                           or birth_date > query.birth_to):
            continue
        if query.name_substring is not None and \
                query.name_substring.lower() not in name.lower():
            continue
        if query.condition_codes and \
                not (query.condition_codes & condition_codes(rset, ref.id)):
            continue
        matches.append((ref, name, birth_date, gender))
    return matches


def find_patient(rset: ResourceSet, name_or_id: str):
    """Summaries for an id (exact, wins) or name substring (all matches)."""
    rows = list_patients(rset)
    exact = [row for row in rows if row[0].id == name_or_id]
    if exact:
        return exact
    needle = name_or_id.lower()
    matches = [row for row in rows if needle in row[1].lower()]
    if not matches:
        raise NotFound(name_or_id)
    return matches


def cluster_layout(rset: ResourceSet, seed: int,
                   iterations: int = 150) -> PatientCluster:
    """Force-directed 3D placement of every patient in the set."""
    rows = list_patients(rset)
    if not rows:
        raise NoPatients("no patients to lay out")
    if len(rows) > MAX_CLUSTER_PATIENTS:
        raise CohortTooLarge(f"{len(rows)} patients exceeds {MAX_CLUSTER_PATIENTS}")
    refs = [row[0] for row in rows]
    if len(refs) == 1:
        return PatientCluster(seed, ((refs[0], (0.5, 0.5, 0.5)),), {})

    code_sets = [condition_codes(rset, ref.id) for ref in refs]
    n = len(refs)
    sim = np.zeros((n, n))
    sim_pairs = {}
    for i in range(n):
        for j in range(i + 1, n):
            sim[i, j] = sim[j, i] = jaccard(code_sets[i], code_sets[j])
            sim_pairs[(refs[i].id, refs[j].id)] = float(sim[i, j])

    rng = np.random.default_rng(seed)
    pos = rng.uniform(0.2, 0.8, size=(n, 3))
    for _ in range(iterations):
        diff = pos[None, :, :] - pos[:, None, :]  # diff[i, j] = pos[j] - pos[i]
        dist = np.linalg.norm(diff, axis=2) + _EPS
        attract = _ATTRACTION * sim[:, :, None] * diff
        repel = -_REPULSION * diff / (dist ** 3)[:, :, None]
        force = (attract + repel).sum(axis=1)
        pos = np.clip(pos + _STEP * force, 0.0, 1.0)

    placements = tuple((ref, (float(p[0]), float(p[1]), float(p[2])))
                       for ref, p in zip(refs, pos))
    return PatientCluster(seed, placements, sim_pairs)


def cluster_to_doc(cluster: PatientCluster) -> dict:
    """Cluster as the JSON document served on the wire."""
    return {
        "seed": cluster.seed,
        "placements": [{"patient": str(ref), "x": x, "y": y, "z": z}
                       for ref, (x, y, z) in cluster.placements],
    }

"""Density-adaptive timeline layout.

Visit gaps are warped so that a gap's on-line length interpolates between
logarithmic and linear in its day count, steered by local visit density:

    warped(dt, r) = (1 - r) * e^r * ln(dt) + r * e^(1 - r) * dt,  r = rho / rho_max

Dense stretches (r near 1) stay close to linear so nearby visits are not
crushed together; sparse stretches (r near 0) collapse toward log scale so
a ten-year gap does not push everything else off the line. Both limits are
algebraically exact: r = 1 returns dt and r = 0 returns ln(dt).

Positions are then normalized affinely onto a fixed-width line, so the
layout preserves warped proportions regardless of the record's span.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, datetime

from fhirgate.errors import InvalidDensity, NoEncounters, TooFewVisits
from fhirgate.fhir.bundle import ResourceRef
from fhirgate.fhir.records import Encounter, PatientRecord

INVERSE_UNTIL_NEXT = "inverse_until_next"
INVERSE_SINCE_PREVIOUS = "inverse_since_previous"
PER_WINDOW = "per_window"
DENSITY_VARIANTS = (INVERSE_UNTIL_NEXT, INVERSE_SINCE_PREVIOUS, PER_WINDOW)


@dataclass(frozen=True)
class DensitySpec:
    variant: str = INVERSE_UNTIL_NEXT
    window_days: float = 30.0  # per_window only

    def __post_init__(self):
        if self.variant not in DENSITY_VARIANTS:
            raise ValueError(f"unknown density variant: {self.variant!r}")
        if self.window_days <= 0:
            raise ValueError("window_days must be positive")


@dataclass(frozen=True)
class WarpParams:
    line_width_m: float = 2.0
    min_gap_days: float = 1.0
    same_day_epsilon: float = 0.005  # fraction of line width
    sub_width_m: float = 1.0

    def __post_init__(self):
        if min(self.line_width_m, self.min_gap_days,
               self.same_day_epsilon, self.sub_width_m) <= 0:
            raise ValueError("all warp parameters must be positive")
        if self.same_day_epsilon >= 0.05:
            raise ValueError("same_day_epsilon must be below 0.05")


@dataclass(frozen=True)
class GapDensity:
    delta_t_days: float
    rho: float
    rho_max: float


@dataclass(frozen=True)
class GlyphSpec:
    shape: str
    color: tuple[int, int, int]
    label: str


@dataclass(frozen=True)
class WarpedLayout:
    patient_ref: ResourceRef
    line_width_m: float
    # (encounter ref, x on the main line in meters), ascending x
    positions: tuple[tuple[ResourceRef, float], ...]
    # encounter ref -> ((event ref, glyph, local x), ...), encounter order
    sub_layouts: tuple[tuple[ResourceRef, tuple[tuple[ResourceRef, GlyphSpec, float], ...]], ...]


# Shape assignments for medications, procedures, and observations follow
# common clinical-icon convention; the rest fill out the set so every kind
# renders distinctly.
_GLYPHS = {
    "MedicationRequest": GlyphSpec("pill", (230, 126, 34), "MedicationRequest"),
    "Procedure": GlyphSpec("cube", (0, 140, 140), "Procedure"),
    "Observation": GlyphSpec("sphere", (240, 196, 25), "Observation"),
    "Condition": GlyphSpec("pyramid", (220, 20, 60), "Condition"),
    "Encounter": GlyphSpec("cylinder", (128, 128, 128), "Encounter"),
    "Immunization": GlyphSpec("capsule", (46, 139, 87), "Immunization"),
    "DiagnosticReport": GlyphSpec("disc", (65, 105, 225), "DiagnosticReport"),
    "ImagingStudy": GlyphSpec("torus", (255, 105, 180), "ImagingStudy"),
    "Patient": GlyphSpec("octahedron", (255, 255, 255), "Patient"),
}


def glyph_for(kind: str) -> GlyphSpec:
    """Shape and color for a resource kind; raises KeyError off the set."""
    return _GLYPHS[kind]


def _day_number(when) -> float:
    """Timeline coordinate of a date or datetime, in days."""
    if isinstance(when, datetime):
        return when.timestamp() / 86400.0
    if isinstance(when, date):
        return float(when.toordinal())
    return float(when)


def visit_density(visit_dates, spec: DensitySpec = DensitySpec(),
                  min_gap_days: float = 1.0) -> list[float]:
    """Density rho for each of the n-1 gaps between sorted visit dates.

    Day deltas are floored at min_gap_days so same-day visits cannot
    produce an infinite density.
    """
    if len(visit_dates) < 2:
        raise TooFewVisits(f"{len(visit_dates)} visit(s), need at least 2")
    days = [_day_number(d) for d in visit_dates]
    deltas = [max(b - a, min_gap_days) for a, b in zip(days, days[1:])]

    if spec.variant == INVERSE_UNTIL_NEXT:
        return [1.0 / dt for dt in deltas]
    if spec.variant == INVERSE_SINCE_PREVIOUS:
        # gap i keyed to the gap before it; the leading gap has no
        # predecessor and falls back to its own delta
        return [1.0 / deltas[max(i - 1, 0)] for i in range(len(deltas))]
    half = spec.window_days / 2.0
    rhos = []
    for a, b in zip(days, days[1:]):
        mid = (a + b) / 2.0
        count = sum(1 for d in days if abs(d - mid) <= half)
        rhos.append(count / spec.window_days)
    return rhos


def warp_gap(gap: GapDensity) -> float:
    """Warped on-line length for one gap (dimensionless)."""
    if gap.rho_max <= 0:
        raise InvalidDensity(f"rho_max must be positive, got {gap.rho_max}")
    if not 0 <= gap.rho <= gap.rho_max:
        raise InvalidDensity(f"rho {gap.rho} outside [0, {gap.rho_max}]")
    if gap.delta_t_days <= 0:
        raise InvalidDensity(f"delta_t_days must be positive, got {gap.delta_t_days}")
    r = gap.rho / gap.rho_max
    return ((1.0 - r) * math.exp(r) * math.log(gap.delta_t_days)
            + r * math.exp(1.0 - r) * gap.delta_t_days)


def build_event_subtimeline(enc: Encounter, sub_width: float):
    """Place an encounter's events on its local detail line.

    Linear interpolation between the encounter's start and end; if the
    period has no end or zero duration, events spread uniformly instead.
    """
    events = enc.events
    m = len(events)
    if m == 0:
        return ()
    span = (enc.end - enc.start).total_seconds() if enc.end else 0.0
    placements = []
    for k, event in enumerate(events):
        if span > 0:
            frac = (event.effective_time - enc.start).total_seconds() / span
            frac = min(max(frac, 0.0), 1.0)
        else:
            frac = 0.5 if m == 1 else k / (m - 1)
        placements.append((event.ref, glyph_for(event.kind), frac * sub_width))
    return tuple(placements)


def build_timeline(record: PatientRecord, spec: DensitySpec = DensitySpec(),
                   params: WarpParams = WarpParams()) -> WarpedLayout:
    """Lay out a patient's encounters on the fixed-width main line.

    Encounter dates are floored to calendar days. Same-day pairs get a
    small fixed separation (the warp is undefined at delta 0); every other
    gap is warped, then cumulative positions are scaled affinely so the
    first encounter sits at 0 and the last at line_width_m.
    """
    encounters = record.encounters
    if not encounters:
        raise NoEncounters(str(record.patient_ref))
    width = params.line_width_m
    subs = tuple((enc.ref, build_event_subtimeline(enc, params.sub_width_m))
                 for enc in encounters)
    if len(encounters) == 1:
        return WarpedLayout(record.patient_ref, width,
                            ((encounters[0].ref, width / 2.0),), subs)

    days = [enc.start.date().toordinal() for enc in encounters]
    rhos = visit_density(days, spec, params.min_gap_days)
    rho_max = max(rhos)
    if rho_max <= 0:
        # per_window can see nothing near any gap midpoint; uniform zero
        # density degenerates to the pure log branch
        rho_max = 1.0
    lengths = []
    for (a, b), rho in zip(zip(days, days[1:]), rhos):
        if b == a:
            lengths.append(params.same_day_epsilon * width)
        else:
            dt = max(float(b - a), params.min_gap_days)
            lengths.append(warp_gap(GapDensity(dt, rho, rho_max)))

    cum = [0.0]
    for length in lengths:
        cum.append(cum[-1] + length)
    total = cum[-1]
    positions = tuple((enc.ref, cum[i] / total * width)
                      for i, enc in enumerate(encounters))
    return WarpedLayout(record.patient_ref, width, positions, subs)


def layout_to_doc(layout: WarpedLayout) -> dict:
    """Layout as the JSON document served on the wire and exported by the CLI."""
    events = []
    for enc_ref, placements in layout.sub_layouts:
        for event_ref, glyph, x_local in placements:
            events.append({
                "ref": str(event_ref),
                "encounter": str(enc_ref),
                "shape": glyph.shape,
                "color": list(glyph.color),
                "x_local": x_local,
            })
    return {
        "patient": str(layout.patient_ref),
        "line_width_m": layout.line_width_m,
        "encounters": [{"ref": str(ref), "x_m": x} for ref, x in layout.positions],
        "events": events,
    }

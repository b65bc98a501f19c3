/**
 * Scene state and its reducer.
 *
 * All viewer-visible state lives in one immutable `SceneState` value. Network
 * frames and UI gestures are folded in through `reduce`, which is pure: the
 * renderer runs on a single thread and every change the user can see is
 * attributable to one action. Replaying the same action sequence yields an
 * identical state.
 */

import {
  MessageType,
  crc32,
  decodeMesh,
  frameJson,
  messageName,
  type SurfaceMesh,
  type WireFrame,
} from "./protocol.js";

// ---------------------------------------------------------------------------
// Wire document shapes (JSON payloads as the gateway sends them).
// ---------------------------------------------------------------------------

export interface PatientEntry {
  ref: string;
  name: string | null;
  birth_date: string | null;
  gender: string | null;
}

export interface ClusterPlacement {
  patient: string;
  x: number;
  y: number;
  z: number;
}

export interface ClusterDoc {
  seed: number;
  placements: ClusterPlacement[];
}

export interface EncounterMark {
  ref: string;
  x_m: number;
}

export interface TimelineEvent {
  ref: string;
  encounter: string;
  shape: string;
  color: [number, number, number];
  x_local: number;
}

export interface TimelineDoc {
  patient: string;
  line_width_m: number;
  encounters: EncounterMark[];
  events: TimelineEvent[];
}

export interface EventDetailDoc {
  ref: string;
  kind: string;
  display: string | null;
  time: string | null;
  encounter: string | null;
  fields: [string, string][];
  attachment: string | null;
}

export interface JobStatusDoc {
  job_id: string;
  pipeline_id: string;
  state: string;
  stage_index: number;
  stages_started: [string, string][];
  outputs: string[];
  error: string | null;
}

// ---------------------------------------------------------------------------
// Scene state.
// ---------------------------------------------------------------------------

export type ConnectionStatus =
  | "idle"
  | "connecting"
  | "ready"
  | "rejected"
  | "lost"
  | "failed";

export interface DragOffset {
  dx: number;
  dy: number;
}

export type ImagingPhase = "requested" | "running" | "done" | "failed";

export interface ImagingEntry {
  jobId: string | null;
  phase: ImagingPhase;
  cached: boolean;
  /** Mesh labels received for this study, in arrival order. */
  labels: number[];
}

export interface MeshEntry {
  label: number;
  mesh: SurfaceMesh;
  studyRef: string | null;
}

interface PendingMesh {
  label: number;
  totalBytes: number;
  chunkCount: number;
  chunks: Uint8Array[];
  receivedBytes: number;
}

export interface SceneState {
  connection: ConnectionStatus;
  sessionId: string | null;
  patients: PatientEntry[];
  searchResults: PatientEntry[];
  cluster: ClusterDoc | null;
  activePatient: string | null;
  layout: TimelineDoc | null;
  selectedEvent: string | null;
  detail: EventDetailDoc | null;
  expandedEncounters: string[];
  dragOffsets: Record<string, DragOffset>;
  imaging: Record<string, ImagingEntry>;
  job: JobStatusDoc | null;
  pendingMesh: PendingMesh | null;
  meshes: MeshEntry[];
  toasts: string[];
}

export function initialState(): SceneState {
  return {
    connection: "idle",
    sessionId: null,
    patients: [],
    searchResults: [],
    cluster: null,
    activePatient: null,
    layout: null,
    selectedEvent: null,
    detail: null,
    expandedEncounters: [],
    dragOffsets: {},
    imaging: {},
    job: null,
    pendingMesh: null,
    meshes: [],
    toasts: [],
  };
}

// ---------------------------------------------------------------------------
// Actions.
// ---------------------------------------------------------------------------

export type Action =
  | { kind: "connection"; status: ConnectionStatus }
  | { kind: "frame"; frame: WireFrame }
  | { kind: "protocol-error"; message: string }
  | { kind: "select-event"; ref: string }
  | { kind: "deselect" }
  | { kind: "toggle-encounter"; ref: string }
  | { kind: "drag-glyph"; ref: string; dx: number; dy: number }
  | { kind: "imaging-requested"; studyRef: string }
  | { kind: "show-cohort" }
  | { kind: "dismiss-toast"; index: number };

export function reduce(state: SceneState, action: Action): SceneState {
  switch (action.kind) {
    case "connection":
      return { ...state, connection: action.status };
    case "frame":
      return reduceFrame(state, action.frame);
    case "protocol-error":
      return pushToast(state, `protocol violation: ${action.message}`);
    case "select-event": {
      // A selection must point at an event of the current layout; stale or
      // foreign refs are ignored rather than rendered.
      if (!state.layout?.events.some((e) => e.ref === action.ref)) {
        return state;
      }
      return { ...state, selectedEvent: action.ref };
    }
    case "deselect":
      return { ...state, selectedEvent: null, detail: null };
    case "toggle-encounter": {
      if (!state.layout?.encounters.some((e) => e.ref === action.ref)) {
        return state;
      }
      const open = state.expandedEncounters.includes(action.ref);
      return {
        ...state,
        expandedEncounters: open
          ? state.expandedEncounters.filter((r) => r !== action.ref)
          : [...state.expandedEncounters, action.ref],
      };
    }
    case "drag-glyph": {
      if (!state.layout?.events.some((e) => e.ref === action.ref)) {
        return state;
      }
      const prev = state.dragOffsets[action.ref] ?? { dx: 0, dy: 0 };
      return {
        ...state,
        dragOffsets: {
          ...state.dragOffsets,
          [action.ref]: { dx: prev.dx + action.dx, dy: prev.dy + action.dy },
        },
      };
    }
    case "imaging-requested": {
      if (state.imaging[action.studyRef]) {
        return state;
      }
      return {
        ...state,
        imaging: {
          ...state.imaging,
          [action.studyRef]: {
            jobId: null,
            phase: "requested",
            cached: false,
            labels: [],
          },
        },
      };
    }
    case "show-cohort":
      return {
        ...state,
        activePatient: null,
        layout: null,
        selectedEvent: null,
        detail: null,
        expandedEncounters: [],
        dragOffsets: {},
      };
    case "dismiss-toast":
      return {
        ...state,
        toasts: state.toasts.filter((_, i) => i !== action.index),
      };
  }
}

// ---------------------------------------------------------------------------
// Frame handling. Every visible change is keyed off a registry message; a
// frame the viewer does not expect becomes a toast, never silent state.
// ---------------------------------------------------------------------------

function pushToast(state: SceneState, text: string): SceneState {
  return { ...state, toasts: [...state.toasts, text] };
}

function reduceFrame(state: SceneState, frame: WireFrame): SceneState {
  switch (frame.msgType) {
    case MessageType.HelloAck: {
      const doc = frameJson(frame) as { session_id: string; protocol: number };
      return { ...state, connection: "ready", sessionId: doc.session_id };
    }
    case MessageType.Rejected: {
      const doc = frameJson(frame) as { code: string; message: string };
      return pushToast(
        { ...state, connection: "rejected" },
        `connection rejected: ${doc.message}`,
      );
    }
    case MessageType.PatientList: {
      const doc = frameJson(frame) as { patients: PatientEntry[] };
      return { ...state, patients: doc.patients };
    }
    case MessageType.PatientSummary: {
      const doc = frameJson(frame) as { matches: PatientEntry[] };
      return { ...state, searchResults: doc.matches };
    }
    case MessageType.ClusterLayout: {
      const doc = frameJson(frame) as ClusterDoc;
      return { ...state, cluster: doc };
    }
    case MessageType.TimelineLayout: {
      const doc = frameJson(frame) as TimelineDoc;
      const eventRefs = new Set(doc.events.map((e) => e.ref));
      const encounterRefs = new Set(doc.encounters.map((e) => e.ref));
      const selected =
        state.selectedEvent && eventRefs.has(state.selectedEvent)
          ? state.selectedEvent
          : null;
      const dragOffsets: Record<string, DragOffset> = {};
      for (const [ref, off] of Object.entries(state.dragOffsets)) {
        if (eventRefs.has(ref)) {
          dragOffsets[ref] = off;
        }
      }
      return {
        ...state,
        layout: doc,
        activePatient: doc.patient,
        selectedEvent: selected,
        detail: selected === null ? null : state.detail,
        expandedEncounters: state.expandedEncounters.filter((r) =>
          encounterRefs.has(r),
        ),
        dragOffsets,
      };
    }
    case MessageType.EventDetail: {
      const doc = frameJson(frame) as EventDetailDoc;
      return { ...state, detail: doc };
    }
    case MessageType.PipelineList:
      return state;
    case MessageType.JobAccepted: {
      const doc = frameJson(frame) as {
        job_id: string;
        study_ref: string;
        cached: boolean;
      };
      const prev = state.imaging[doc.study_ref];
      return {
        ...state,
        imaging: {
          ...state.imaging,
          [doc.study_ref]: {
            jobId: doc.job_id,
            phase: doc.cached ? "done" : "running",
            cached: doc.cached,
            labels: prev?.labels ?? [],
          },
        },
      };
    }
    case MessageType.JobStatus: {
      const doc = frameJson(frame) as JobStatusDoc;
      let imaging = state.imaging;
      for (const [studyRef, entry] of Object.entries(state.imaging)) {
        if (entry.jobId !== doc.job_id) {
          continue;
        }
        const phase: ImagingPhase =
          doc.state === "succeeded"
            ? "done"
            : doc.state === "failed"
              ? "failed"
              : "running";
        if (phase !== entry.phase) {
          imaging = { ...imaging, [studyRef]: { ...entry, phase } };
        }
      }
      const next = { ...state, imaging, job: doc };
      return doc.state === "failed" && doc.error
        ? pushToast(next, `reconstruction failed: ${doc.error}`)
        : next;
    }
    case MessageType.MeshBegin: {
      const doc = frameJson(frame) as {
        label: number;
        total_bytes: number;
        chunk_count: number;
      };
      let next = state;
      if (state.pendingMesh) {
        next = pushToast(
          next,
          `mesh stream for label ${state.pendingMesh.label} interrupted; discarded`,
        );
      }
      return {
        ...next,
        pendingMesh: {
          label: doc.label,
          totalBytes: doc.total_bytes,
          chunkCount: doc.chunk_count,
          chunks: [],
          receivedBytes: 0,
        },
      };
    }
    case MessageType.MeshChunk: {
      if (!state.pendingMesh) {
        return pushToast(state, "mesh data arrived outside a stream; discarded");
      }
      const pending = state.pendingMesh;
      return {
        ...state,
        pendingMesh: {
          ...pending,
          chunks: [...pending.chunks, frame.payload],
          receivedBytes: pending.receivedBytes + frame.payload.byteLength,
        },
      };
    }
    case MessageType.MeshEnd: {
      const doc = frameJson(frame) as { label: number; checksum: number };
      if (!state.pendingMesh) {
        return pushToast(state, "mesh stream ended before it began; discarded");
      }
      return finishMesh({ ...state, pendingMesh: null }, state.pendingMesh, doc);
    }
    case MessageType.Error: {
      const doc = frameJson(frame) as {
        code: string;
        message: string;
        in_reply_to: string;
      };
      return pushToast(state, `${doc.code} (${doc.in_reply_to}): ${doc.message}`);
    }
    default:
      return pushToast(
        state,
        `unexpected ${messageName(frame.msgType)} frame; ignored`,
      );
  }
}

/**
 * Reassemble a completed mesh stream. The mesh only becomes part of the
 * scene when chunk count, byte count, checksum, and container format all
 * verify; otherwise it is dropped and the failure surfaces as a toast.
 */
function finishMesh(
  state: SceneState,
  pending: PendingMesh,
  end: { label: number; checksum: number },
): SceneState {
  const discard = (why: string) =>
    pushToast(state, `mesh stream for label ${pending.label} ${why}; discarded`);
  if (end.label !== pending.label) {
    return discard(`ended with mismatched label ${end.label}`);
  }
  if (pending.chunks.length !== pending.chunkCount) {
    return discard(
      `carried ${pending.chunks.length} of ${pending.chunkCount} chunks`,
    );
  }
  if (pending.receivedBytes !== pending.totalBytes) {
    return discard(
      `carried ${pending.receivedBytes} of ${pending.totalBytes} bytes`,
    );
  }
  const blob = new Uint8Array(pending.receivedBytes);
  let offset = 0;
  for (const chunk of pending.chunks) {
    blob.set(chunk, offset);
    offset += chunk.byteLength;
  }
  if (crc32(blob) !== end.checksum) {
    return discard("failed checksum verification");
  }
  let mesh: SurfaceMesh;
  try {
    mesh = decodeMesh(blob);
  } catch (err) {
    return discard(`is not a valid mesh (${(err as Error).message})`);
  }
  const studyRef = runningStudy(state);
  const imaging = studyRef
    ? {
        ...state.imaging,
        [studyRef]: {
          ...state.imaging[studyRef]!,
          labels: [...state.imaging[studyRef]!.labels, mesh.label],
        },
      }
    : state.imaging;
  return {
    ...state,
    imaging,
    meshes: [...state.meshes, { label: mesh.label, mesh, studyRef }],
  };
}

function runningStudy(state: SceneState): string | null {
  for (const [studyRef, entry] of Object.entries(state.imaging)) {
    if (entry.phase === "running" || entry.phase === "done") {
      return studyRef;
    }
  }
  return null;
}

// ---------------------------------------------------------------------------
// Pure helpers used by both the renderer and the tests.
// ---------------------------------------------------------------------------

/** Horizontal pixel position of a point `xMeters` along the timeline track. */
export function glyphTrackX(
  xMeters: number,
  lineWidthM: number,
  trackPx: number,
): number {
  return (xMeters / lineWidthM) * trackPx;
}

export interface TrayGeometry {
  /** Pixel width of an opened encounter tray. */
  width: number;
  /** Vertical pixel offset of the tray row beneath the track. */
  depth: number;
}

export const DEFAULT_TRAY: TrayGeometry = { width: 240, depth: 96 };

/**
 * Screen position of an event glyph: its encounter's track position plus the
 * tray-local offset, plus any accumulated drag.
 */
export function glyphScreenPosition(
  state: SceneState,
  ref: string,
  trackPx: number,
  tray: TrayGeometry = DEFAULT_TRAY,
): { x: number; y: number } | null {
  const layout = state.layout;
  if (!layout) {
    return null;
  }
  const event = layout.events.find((e) => e.ref === ref);
  if (!event) {
    return null;
  }
  const encounter = layout.encounters.find((e) => e.ref === event.encounter);
  if (!encounter) {
    return null;
  }
  const encX = glyphTrackX(encounter.x_m, layout.line_width_m, trackPx);
  const drag = state.dragOffsets[ref] ?? { dx: 0, dy: 0 };
  return {
    x: encX - tray.width / 2 + event.x_local * tray.width + drag.dx,
    y: tray.depth + drag.dy,
  };
}

export const PANEL_MARGIN = { x: 16, y: -12 };

/**
 * Anchor point of the detail panel: pinned to its glyph, so it follows the
 * glyph through drags.
 */
export function panelAnchor(
  state: SceneState,
  trackPx: number,
  tray: TrayGeometry = DEFAULT_TRAY,
): { x: number; y: number } | null {
  if (!state.selectedEvent) {
    return null;
  }
  const glyph = glyphScreenPosition(state, state.selectedEvent, trackPx, tray);
  if (!glyph) {
    return null;
  }
  return { x: glyph.x + PANEL_MARGIN.x, y: glyph.y + PANEL_MARGIN.y };
}

export interface PanelModel {
  ref: string;
  kind: string;
  title: string;
  time: string | null;
  rows: [string, string][];
  attachment: string | null;
}

/**
 * View model for the detail panel. Non-null only when the loaded detail
 * belongs to the currently selected event, so a stale reply never renders.
 */
export function panelModel(state: SceneState): PanelModel | null {
  const detail = state.detail;
  if (!detail || !state.selectedEvent || detail.ref !== state.selectedEvent) {
    return null;
  }
  return {
    ref: detail.ref,
    kind: detail.kind,
    title: detail.display ?? detail.ref,
    time: detail.time,
    rows: detail.fields,
    attachment: detail.attachment,
  };
}

/**
 * Send a GetImaging request unless the study is already requested, running,
 * or resident. Repeated activations reuse the first job and its meshes.
 */
export function requestImagingOnce(
  state: SceneState,
  studyRef: string,
  send: (msgType: number, doc: unknown) => void,
): SceneState {
  if (state.imaging[studyRef]) {
    return state;
  }
  send(MessageType.GetImaging, { study_ref: studyRef });
  return reduce(state, { kind: "imaging-requested", studyRef });
}

/** Fold a recorded frame sequence into a scene state. */
export function replayFrames(
  frames: Iterable<WireFrame>,
  start: SceneState = initialState(),
): SceneState {
  let state = start;
  for (const frame of frames) {
    state = reduce(state, { kind: "frame", frame });
  }
  return state;
}

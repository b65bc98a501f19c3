/**
 * Scene-graph construction.
 *
 * Everything here is pure three.js object assembly driven by `SceneState`:
 * no renderer, no DOM, no network. The same functions back the live canvas
 * and the headless tests. Timeline groups are built in screen-track units
 * (pixels along the x axis, y up), so glyph positions can be asserted
 * directly against the layout contract.
 */

import * as THREE from "three";
import {
  DEFAULT_TRAY,
  glyphTrackX,
  panelAnchor,
  type SceneState,
  type TimelineEvent,
  type TrayGeometry,
} from "./state.js";

export const GLYPH_SIZE = 14;

/** Geometry for each event glyph shape in the layout vocabulary. */
export function glyphGeometry(shape: string): THREE.BufferGeometry {
  const s = GLYPH_SIZE;
  switch (shape) {
    case "pill":
      return new THREE.CapsuleGeometry(s * 0.35, s * 0.7, 4, 12);
    case "cube":
      return new THREE.BoxGeometry(s, s, s);
    case "sphere":
      return new THREE.SphereGeometry(s * 0.55, 16, 12);
    case "pyramid":
      return new THREE.ConeGeometry(s * 0.6, s, 4);
    case "cylinder":
      return new THREE.CylinderGeometry(s * 0.45, s * 0.45, s, 16);
    case "capsule":
      return new THREE.CapsuleGeometry(s * 0.28, s * 1.1, 4, 12);
    case "disc":
      return new THREE.CylinderGeometry(s * 0.6, s * 0.6, s * 0.18, 24);
    case "torus":
      return new THREE.TorusGeometry(s * 0.45, s * 0.18, 10, 24);
    case "octahedron":
      return new THREE.OctahedronGeometry(s * 0.6);
    default:
      return new THREE.SphereGeometry(s * 0.4, 8, 6);
  }
}

export function colorOf(rgb: readonly [number, number, number]): THREE.Color {
  return new THREE.Color(rgb[0] / 255, rgb[1] / 255, rgb[2] / 255);
}

function glyphMesh(event: TimelineEvent): THREE.Mesh {
  const material = new THREE.MeshStandardMaterial({
    color: colorOf(event.color),
  });
  const mesh = new THREE.Mesh(glyphGeometry(event.shape), material);
  mesh.name = `glyph:${event.ref}`;
  mesh.userData = {
    ref: event.ref,
    encounter: event.encounter,
    shape: event.shape,
  };
  return mesh;
}

export interface TimelineBuildOptions {
  /** Pixel length of the main track. */
  trackLength: number;
  tray?: TrayGeometry;
}

/**
 * Build the patient timeline: a horizontal track with one marker per
 * encounter, plus an opened tray of event glyphs beneath each expanded
 * encounter. Positions are in track pixels; x order equals layout order.
 */
export function buildTimelineGroup(
  state: SceneState,
  options: TimelineBuildOptions,
): THREE.Group {
  const group = new THREE.Group();
  group.name = "timeline";
  const layout = state.layout;
  if (!layout) {
    return group;
  }
  const tray = options.tray ?? DEFAULT_TRAY;
  const track = new THREE.Line(
    new THREE.BufferGeometry().setFromPoints([
      new THREE.Vector3(0, 0, 0),
      new THREE.Vector3(options.trackLength, 0, 0),
    ]),
    new THREE.LineBasicMaterial({ color: 0x8899aa }),
  );
  track.name = "track";
  group.add(track);

  for (const encounter of layout.encounters) {
    const marker = new THREE.Mesh(
      new THREE.CylinderGeometry(GLYPH_SIZE * 0.3, GLYPH_SIZE * 0.3, GLYPH_SIZE * 1.6, 12),
      new THREE.MeshStandardMaterial({ color: 0x808080 }),
    );
    marker.name = `encounter:${encounter.ref}`;
    marker.userData = { ref: encounter.ref };
    marker.position.set(
      glyphTrackX(encounter.x_m, layout.line_width_m, options.trackLength),
      0,
      0,
    );
    group.add(marker);

    if (!state.expandedEncounters.includes(encounter.ref)) {
      continue;
    }
    const trayGroup = new THREE.Group();
    trayGroup.name = `tray:${encounter.ref}`;
    trayGroup.position.set(marker.position.x, -tray.depth, 0);
    for (const event of layout.events) {
      if (event.encounter !== encounter.ref) {
        continue;
      }
      const glyph = glyphMesh(event);
      const drag = state.dragOffsets[event.ref] ?? { dx: 0, dy: 0 };
      glyph.position.set(
        -tray.width / 2 + event.x_local * tray.width + drag.dx,
        -drag.dy,
        0,
      );
      trayGroup.add(glyph);
    }
    group.add(trayGroup);
  }

  const anchor = panelAnchor(state, options.trackLength, tray);
  if (anchor) {
    const panel = new THREE.Object3D();
    panel.name = `panel-anchor:${state.selectedEvent}`;
    panel.position.set(anchor.x, -anchor.y, 1);
    group.add(panel);
  }
  return group;
}

/** Distinct fill colors for reconstructed structures, cycled by label. */
const LABEL_PALETTE = [0xe6a03c, 0x3c8fe6, 0x50c878, 0xd05a6e, 0x9a6fb0];

/**
 * Build the reconstructed-volume group: one surface mesh per verified label
 * plus a marker at each structure's centroid. Coordinates stay in
 * millimetres; callers scale the group to suit the stage.
 */
export function buildVolumeGroup(state: SceneState): THREE.Group {
  const group = new THREE.Group();
  group.name = "volumes";
  for (const entry of state.meshes) {
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute(
      "position",
      new THREE.BufferAttribute(entry.mesh.vertices, 3),
    );
    geometry.setIndex(new THREE.BufferAttribute(entry.mesh.triangles, 1));
    geometry.computeVertexNormals();
    const mesh = new THREE.Mesh(
      geometry,
      new THREE.MeshStandardMaterial({
        color: LABEL_PALETTE[entry.label % LABEL_PALETTE.length],
      }),
    );
    mesh.name = `mesh:${entry.label}`;
    mesh.userData = { label: entry.label, studyRef: entry.studyRef };
    group.add(mesh);

    if (entry.mesh.centroid) {
      const marker = new THREE.Mesh(
        new THREE.SphereGeometry(2.5, 12, 8),
        new THREE.MeshStandardMaterial({ color: 0xffffff }),
      );
      marker.name = `centroid:${entry.label}`;
      marker.position.set(...entry.mesh.centroid);
      group.add(marker);
    }
  }
  return group;
}

/**
 * Build the cohort cluster: one sphere per patient placement, positioned by
 * the server-computed embedding.
 */
export function buildClusterGroup(state: SceneState): THREE.Group {
  const group = new THREE.Group();
  group.name = "cohort";
  if (!state.cluster) {
    return group;
  }
  for (const placement of state.cluster.placements) {
    const active = placement.patient === state.activePatient;
    const node = new THREE.Mesh(
      new THREE.SphereGeometry(active ? 0.09 : 0.06, 16, 12),
      new THREE.MeshStandardMaterial({ color: active ? 0xffd24d : 0xbfd4ff }),
    );
    node.name = `patient:${placement.patient}`;
    node.userData = { patient: placement.patient };
    node.position.set(placement.x, placement.y, placement.z);
    group.add(node);
  }
  return group;
}

export interface SceneBuildOptions extends TimelineBuildOptions {
  /** Scale applied to the millimetre-space volume group. */
  volumeScale?: number;
}

/** Assemble the full scene for the current state. */
export function buildScene(
  state: SceneState,
  options: SceneBuildOptions,
): THREE.Scene {
  const scene = new THREE.Scene();
  scene.name = "fhirgate-viewer";
  scene.add(new THREE.AmbientLight(0xffffff, 0.6));
  const key = new THREE.DirectionalLight(0xffffff, 1.2);
  key.position.set(1, 2, 3);
  scene.add(key);

  scene.add(buildClusterGroup(state));
  scene.add(buildTimelineGroup(state, options));

  const volumes = buildVolumeGroup(state);
  const scale = options.volumeScale ?? 1;
  volumes.scale.setScalar(scale);
  scene.add(volumes);
  return scene;
}

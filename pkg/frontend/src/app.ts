/**
 * Browser entry point: wires the gateway client, the scene reducer, and a
 * three.js canvas together.
 *
 * All network traffic lands in an action queue that the single render loop
 * drains through the reducer, so the scene only ever changes between frames
 * and every change is attributable to an action.
 */

import * as THREE from "three";
import { GatewayClient } from "./net.js";
import { MessageType } from "./protocol.js";
import { buildScene } from "./scene.js";
import {
  initialState,
  panelModel,
  reduce,
  requestImagingOnce,
  type Action,
  type SceneState,
  type TimelineEvent,
} from "./state.js";

const TRACK_PX = 800;
const TRACK_WORLD_M = 2.0;
const JOB_POLL_MS = 400;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing #${id}`);
  }
  return node as T;
}

function gatewayUrl(): string {
  const override = new URLSearchParams(location.search).get("gateway");
  if (override) {
    return override;
  }
  const scheme = location.protocol === "https:" ? "wss" : "ws";
  return `${scheme}://${location.host}/ws`;
}

function main(): void {
  const canvas = el<HTMLCanvasElement>("stage");
  const statusLine = el<HTMLElement>("status");
  const patientList = el<HTMLUListElement>("patients");
  const searchBox = el<HTMLInputElement>("search");
  const kindFilter = el<HTMLInputElement>("kind-filter");
  const cohortButton = el<HTMLButtonElement>("show-cohort");
  const panelBox = el<HTMLElement>("panel");
  const toastBox = el<HTMLElement>("toasts");

  let state: SceneState = initialState();
  const queue: Action[] = [];
  const dispatch = (action: Action) => queue.push(action);

  const client = new GatewayClient({
    url: gatewayUrl(),
    deviceId: `viewer-${Math.random().toString(36).slice(2, 10)}`,
    onAction: dispatch,
  });

  const renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
  const camera = new THREE.PerspectiveCamera(50, 1, 0.01, 100);
  camera.position.set(0, 0, 2.6);
  const raycaster = new THREE.Raycaster();

  function resize(): void {
    const width = canvas.clientWidth || 960;
    const height = canvas.clientHeight || 540;
    renderer.setSize(width, height, false);
    camera.aspect = width / height;
    camera.updateProjectionMatrix();
  }
  window.addEventListener("resize", resize);
  resize();

  // -- request helpers -------------------------------------------------------

  let lastPolledJob: string | null = null;
  let pollTimer: ReturnType<typeof setTimeout> | null = null;

  function pollJob(): void {
    pollTimer = null;
    const job = state.job;
    if (!client.isSendable || !job) {
      return;
    }
    if (job.state === "queued" || job.state === "running") {
      client.send(MessageType.JobStatus, { job_id: job.job_id });
      pollTimer = setTimeout(pollJob, JOB_POLL_MS);
    }
  }

  function openPatient(ref: string): void {
    client.send(MessageType.GetTimeline, { patient: ref });
  }

  function selectEvent(event: TimelineEvent): void {
    dispatch({ kind: "select-event", ref: event.ref });
    client.send(MessageType.GetEventDetail, { ref: event.ref });
    if (event.shape === "torus") {
      state = requestImagingOnce(state, event.ref, (t, doc) =>
        client.send(t, doc),
      );
    }
  }

  // -- DOM wiring ------------------------------------------------------------

  searchBox.addEventListener("change", () => {
    const query = searchBox.value.trim();
    if (query) {
      client.send(MessageType.FindPatient, { query });
    } else {
      client.send(MessageType.ListPatients, {});
    }
  });

  cohortButton.addEventListener("click", () => {
    dispatch({ kind: "show-cohort" });
    client.send(MessageType.GetClusterLayout, {});
  });

  function renderPatientList(): void {
    const rows = state.searchResults.length ? state.searchResults : state.patients;
    patientList.replaceChildren(
      ...rows.map((p) => {
        const item = document.createElement("li");
        item.textContent = `${p.name ?? p.ref} ${p.birth_date ?? ""}`;
        item.addEventListener("click", () => openPatient(p.ref));
        return item;
      }),
    );
  }

  function renderPanel(): void {
    const model = panelModel(state);
    if (!model) {
      panelBox.hidden = true;
      return;
    }
    panelBox.hidden = false;
    const rows = model.rows
      .map(([name, value]) => `<tr><th>${name}</th><td>${value}</td></tr>`)
      .join("");
    panelBox.innerHTML =
      `<h3>${model.title}</h3><p>${model.kind} · ${model.time ?? ""}</p>` +
      `<table>${rows}</table>`;
  }

  function renderToasts(): void {
    toastBox.replaceChildren(
      ...state.toasts.slice(-4).map((text) => {
        const item = document.createElement("div");
        item.className = "toast";
        item.textContent = text;
        return item;
      }),
    );
  }

  // -- pointer interaction ----------------------------------------------------

  let dragging: { ref: string; lastX: number; lastY: number } | null = null;

  function pick(eventX: number, eventY: number): THREE.Object3D | null {
    const rect = canvas.getBoundingClientRect();
    const ndc = new THREE.Vector2(
      ((eventX - rect.left) / rect.width) * 2 - 1,
      -((eventY - rect.top) / rect.height) * 2 + 1,
    );
    raycaster.setFromCamera(ndc, camera);
    const hits = raycaster.intersectObjects(scene.children, true);
    return hits[0]?.object ?? null;
  }

  canvas.addEventListener("pointerdown", (ev) => {
    const hit = pick(ev.clientX, ev.clientY);
    if (!hit) {
      dispatch({ kind: "deselect" });
      return;
    }
    if (hit.name.startsWith("glyph:")) {
      const ref = hit.name.slice("glyph:".length);
      const event = state.layout?.events.find((e) => e.ref === ref);
      if (event) {
        selectEvent(event);
        dragging = { ref, lastX: ev.clientX, lastY: ev.clientY };
      }
    } else if (hit.name.startsWith("encounter:")) {
      dispatch({ kind: "toggle-encounter", ref: hit.name.slice("encounter:".length) });
    } else if (hit.name.startsWith("patient:")) {
      openPatient(hit.name.slice("patient:".length));
    }
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging) {
      return;
    }
    // Canvas pixels map 1:1 onto track pixels at the stage scale below.
    dispatch({
      kind: "drag-glyph",
      ref: dragging.ref,
      dx: ev.clientX - dragging.lastX,
      dy: ev.clientY - dragging.lastY,
    });
    dragging = { ref: dragging.ref, lastX: ev.clientX, lastY: ev.clientY };
  });
  canvas.addEventListener("pointerup", () => {
    dragging = null;
  });

  // -- render loop ------------------------------------------------------------

  let scene = new THREE.Scene();

  function kindFiltered(current: SceneState): SceneState {
    const needle = kindFilter.value.trim().toLowerCase();
    if (!needle || !current.layout) {
      return current;
    }
    return {
      ...current,
      layout: {
        ...current.layout,
        events: current.layout.events.filter((e) =>
          e.ref.toLowerCase().startsWith(needle),
        ),
      },
    };
  }

  function frame(): void {
    let changed = queue.length > 0;
    while (queue.length) {
      state = reduce(state, queue.shift()!);
    }
    if (changed) {
      if (state.connection === "ready" && !state.patients.length) {
        client.send(MessageType.ListPatients, {});
      }
      if (state.job && state.job.job_id !== lastPolledJob) {
        lastPolledJob = state.job.job_id;
        if (pollTimer === null) {
          pollTimer = setTimeout(pollJob, JOB_POLL_MS);
        }
      }
      statusLine.textContent = `${state.connection}${
        state.activePatient ? ` · ${state.activePatient}` : ""
      }`;
      renderPatientList();
      renderPanel();
      renderToasts();

      const view = kindFiltered(state);
      scene = buildScene(view, {
        trackLength: TRACK_PX,
        volumeScale: 0.002,
      });
      const timeline = scene.getObjectByName("timeline");
      if (timeline) {
        // Present the pixel-space track at world scale, centred on screen.
        const k = TRACK_WORLD_M / TRACK_PX;
        timeline.scale.setScalar(k);
        timeline.position.set(-TRACK_WORLD_M / 2, 0.3, 0);
      }
      const volumes = scene.getObjectByName("volumes");
      if (volumes) {
        volumes.position.set(0, -0.55, 0);
      }
    }
    renderer.render(scene, camera);
    requestAnimationFrame(frame);
  }

  client.connect();
  requestAnimationFrame(frame);
}

main();

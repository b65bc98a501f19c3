"""Pipeline registry, asynchronous job execution, and the mock spine pipeline.

Pipelines are declared by descriptor (inputs, outputs, stages) and run on a
small worker pool. Jobs move Queued -> Running(stage) -> Succeeded/Failed
and never leave a terminal state; a watchdog marks jobs that outlive the
timeout as Failed even if their thread is still unwinding. Listeners get a
snapshot after every transition so the gateway can push status frames.

The bundled spine pipeline is a deterministic stand-in for neural
segmentation: it consumes a ground-truth-style label volume and emits the
same contract real inference would — bounding box, per-vertebra centroids,
a fused multi-label mask, and one mesh per label.
"""

from __future__ import annotations

import logging
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from fhirgate.canonical import canonical_json
from fhirgate.errors import (
    DuplicateId,
    EmptyVolume,
    GatewayError,
    InvalidDescriptor,
    MissingInput,
    UnknownJob,
    UnknownPipeline,
)
from fhirgate.upstream import LocalBlobStore
from fhirgate.volumetrics import (
    LabelVolume,
    encode_mesh,
    extract_mesh,
    fuse_binary_masks,
    load_label_volume,
    save_label_volume,
)
from fhirgate.volumetrics.labelvol import centroid

logger = logging.getLogger(__name__)

QUEUED = "queued"
RUNNING = "running"
SUCCEEDED = "succeeded"
FAILED = "failed"
TERMINAL_STATES = (SUCCEEDED, FAILED)


@dataclass(frozen=True)
class PipelineDescriptor:
    id: str
    display_name: str
    input_kinds: tuple[str, ...]
    output_kinds: tuple[str, ...]
    stages: tuple[str, ...]


@dataclass(frozen=True)
class PipelineJob:
    """Immutable snapshot of one job; the orchestrator swaps whole snapshots."""

    job_id: str
    pipeline_id: str
    state: str
    stage_index: int  # -1 while queued
    stage_started: tuple[tuple[str, str], ...] = ()  # (stage name, UTC iso)
    outputs: tuple[str, ...] = ()
    error: str | None = None

    @property
    def is_terminal(self) -> bool:
        return self.state in TERMINAL_STATES


class JobContext:
    """Handed to a pipeline runner; reports stages and reaches storage."""

    def __init__(self, orchestrator, job_id, inputs, store, out_dir):
        self._orchestrator = orchestrator
        self.job_id = job_id
        self.inputs = inputs
        self.store = store
        self.out_dir = out_dir  # storage prefix jobs/<job_id>

    def begin_stage(self, index: int):
        self._orchestrator._advance_stage(self.job_id, index)

    def out_path(self, name: str) -> str:
        return f"{self.out_dir}/{name}"


class PipelineOrchestrator:
    def __init__(self, store: LocalBlobStore, max_workers: int = 2,
                 job_timeout_s: float = 300.0):
        self.store = store
        self.job_timeout_s = job_timeout_s
        self._lock = threading.Lock()
        self._registry: dict[str, tuple[PipelineDescriptor, object]] = {}
        self._jobs: dict[str, PipelineJob] = {}
        self._timers: dict[str, threading.Timer] = {}
        self._listeners: list = []
        self._executor = ThreadPoolExecutor(max_workers=max_workers,
                                            thread_name_prefix="pipeline")

    # -- registry ----------------------------------------------------------
    def register_pipeline(self, descriptor: PipelineDescriptor, runner) -> None:
        if not (descriptor.input_kinds and descriptor.output_kinds
                and descriptor.stages and descriptor.id):
            raise InvalidDescriptor(
                "descriptor needs an id and at least one input, output, and stage")
        with self._lock:
            if descriptor.id in self._registry:
                raise DuplicateId(descriptor.id)
            self._registry[descriptor.id] = (descriptor, runner)

    def list_pipelines(self) -> list[PipelineDescriptor]:
        with self._lock:
            return [d for d, _ in self._registry.values()]

    def add_listener(self, listener) -> None:
        """listener(job snapshot) is called after every state transition."""
        with self._lock:
            self._listeners.append(listener)

    # -- job lifecycle -----------------------------------------------------
    def submit_job(self, pipeline_id: str, inputs: dict) -> str:
        with self._lock:
            if pipeline_id not in self._registry:
                raise UnknownPipeline(pipeline_id)
            descriptor, runner = self._registry[pipeline_id]
        missing = [slot for slot in descriptor.input_kinds if slot not in inputs]
        if missing:
            raise MissingInput(f"missing input slot(s): {', '.join(missing)}")
        job_id = str(uuid.uuid4())
        job = PipelineJob(job_id=job_id, pipeline_id=pipeline_id,
                          state=QUEUED, stage_index=-1)
        with self._lock:
            self._jobs[job_id] = job
        self._notify(job)
        timer = threading.Timer(self.job_timeout_s, self._time_out, args=(job_id,))
        timer.daemon = True
        with self._lock:
            self._timers[job_id] = timer
        timer.start()
        self._executor.submit(self._run, job_id, descriptor, runner, dict(inputs))
        return job_id

    def job_status(self, job_id: str) -> PipelineJob:
        with self._lock:
            if job_id not in self._jobs:
                raise UnknownJob(job_id)
            return self._jobs[job_id]

    def shutdown(self):
        with self._lock:
            timers = list(self._timers.values())
        for timer in timers:
            timer.cancel()
        self._executor.shutdown(wait=True, cancel_futures=True)

    # -- internals ---------------------------------------------------------
    def _transition(self, job_id: str, **changes) -> PipelineJob | None:
        """Apply changes unless the job is already terminal; return snapshot."""
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None or job.is_terminal:
                return None
            job = replace(job, **changes)
            self._jobs[job_id] = job
            if job.is_terminal:
                timer = self._timers.pop(job_id, None)
            else:
                timer = None
        if timer:
            timer.cancel()
        self._notify(job)
        return job

    def _advance_stage(self, job_id: str, index: int):
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None or job.is_terminal or index < job.stage_index:
                return
            descriptor, _ = self._registry[job.pipeline_id]
            stamp = (descriptor.stages[index],
                     datetime.now(timezone.utc).isoformat())
        self._transition(job_id, state=RUNNING, stage_index=index,
                         stage_started=job.stage_started + (stamp,))

    def _time_out(self, job_id: str):
        job = self._transition(job_id, state=FAILED,
                               error=f"Timeout: exceeded {self.job_timeout_s}s")
        if job:
            logger.warning("job %s timed out", job_id)

    def _run(self, job_id, descriptor, runner, inputs):
        ctx = JobContext(self, job_id, inputs, self.store, f"jobs/{job_id}")
        try:
            outputs = runner(ctx)
        except GatewayError as exc:
            self._transition(job_id, state=FAILED,
                             error=f"{exc.code}: {exc}")
            return
        except Exception as exc:  # runner bug; job must still terminate
            logger.exception("job %s crashed", job_id)
            self._transition(job_id, state=FAILED, error=f"Crash: {exc}")
            return
        self._transition(job_id, state=SUCCEEDED, outputs=tuple(outputs))

    def _notify(self, job: PipelineJob):
        with self._lock:
            listeners = list(self._listeners)
        for listener in listeners:
            try:
                listener(job)
            except Exception:
                logger.exception("job listener failed")


# -- spine pipeline ----------------------------------------------------------

SPINE_PIPELINE_ID = "mock-spine"


def spine_descriptor() -> PipelineDescriptor:
    return PipelineDescriptor(
        id=SPINE_PIPELINE_ID,
        display_name="Spine localization and vertebra segmentation",
        input_kinds=("labelvol",),
        output_kinds=("bbox", "centroids", "fused_labelvol", "meshes"),
        stages=("spine_localization", "vertebra_localization",
                "vertebra_segmentation"),
    )


def load_volume_from_store(store: LocalBlobStore, header_path: str) -> LabelVolume:
    """Load a volume stored as <name>.json header + <name>.raw payload."""
    raw_path = header_path[:-5] + ".raw" if header_path.endswith(".json") \
        else header_path + ".raw"
    return load_label_volume(store.get(header_path), store.get(raw_path))


def run_spine_pipeline(ctx: JobContext) -> list[str]:
    vol = load_volume_from_store(ctx.store, ctx.inputs["labelvol"])
    outputs = []

    ctx.begin_stage(0)  # spine_localization
    occupied = np.argwhere(vol.labels > 0)
    if occupied.shape[0] == 0:
        raise EmptyVolume("volume has no nonzero labels")
    lo = occupied.min(axis=0)
    hi = occupied.max(axis=0)
    bbox = {
        "min_voxel": [int(v) for v in lo],
        "max_voxel": [int(v) for v in hi],
        "min_mm": [float(lo[i] * vol.spacing[i] + vol.origin[i]) for i in range(3)],
        "max_mm": [float(hi[i] * vol.spacing[i] + vol.origin[i]) for i in range(3)],
    }
    bbox_path = ctx.out_path("spine_bbox.json")
    ctx.store.put(bbox_path, canonical_json(bbox))
    outputs.append(bbox_path)

    ctx.begin_stage(1)  # vertebra_localization
    labels = vol.label_values()
    centers = sorted(((label, centroid(vol, label)) for label in labels),
                     key=lambda item: item[1][2])
    centroids_doc = [{"label": label, "centroid_mm": list(center)}
                     for label, center in centers]
    centroids_path = ctx.out_path("centroids.json")
    ctx.store.put(centroids_path, canonical_json(centroids_doc))
    outputs.append(centroids_path)

    ctx.begin_stage(2)  # vertebra_segmentation
    masks = []
    for label in labels:
        binary = np.zeros(vol.dims, dtype=np.uint16)
        binary[vol.labels == label] = 1
        mask_vol = LabelVolume(vol.dims, vol.spacing, vol.origin, binary)
        masks.append((label, mask_vol, np.ones(vol.dims, dtype=np.float64)))
    fused = fuse_binary_masks(masks)
    header_json, payload = save_label_volume(fused)
    fused_header = ctx.out_path("fused.json")
    ctx.store.put(fused_header, header_json)
    ctx.store.put(ctx.out_path("fused.raw"), payload)
    outputs.append(fused_header)
    for label in labels:
        mesh_path = ctx.out_path(f"mesh_{label}.exrm")
        ctx.store.put(mesh_path, encode_mesh(extract_mesh(fused, label)))
        outputs.append(mesh_path)
    return outputs


def register_spine_pipeline(orchestrator: PipelineOrchestrator) -> None:
    orchestrator.register_pipeline(spine_descriptor(), run_spine_pipeline)

"""Session management and message dispatch behind the network listeners.

The service is transport-agnostic: the server hands it connected sessions
(a send callable plus a close callable) and decoded frames. Everything a
client ever receives funnels through ``_send``, which is also where the
optional ``frame_tap`` hook observes outbound traffic for instrumentation.
"""

import logging
import threading
import uuid
import zlib
from dataclasses import dataclass, field

from fhirgate.cohort import cluster_layout, cluster_to_doc, find_patient
from fhirgate.errors import (
    GatewayError,
    MalformedHello,
    MissingInput,
    NotAllowlisted,
    NotFound,
    SessionClosed,
)
from fhirgate.fhir import ResourceSet, extract_patient_record, list_patients, parse_bundle
from fhirgate.fhir.records import event_detail, event_display, event_time, imaging_attachment
from fhirgate.gateway import framing
from fhirgate.gateway.framing import Frame, encode_frame, encode_json
from fhirgate.pipeline import SPINE_PIPELINE_ID, SUCCEEDED, PipelineJob, PipelineOrchestrator
from fhirgate.timeline import DensitySpec, WarpParams, build_timeline, layout_to_doc
from fhirgate.upstream import AuthConfig, TokenCache, fhir_search

log = logging.getLogger(__name__)

ENFORCE = "enforce"
LOG_ONLY = "log_only"

AWAITING_HELLO = "awaiting_hello"
READY = "ready"

CHUNK_BYTES = 1024 * 1024

SYNC_RESOURCE_TYPES = (
    "Patient", "Encounter", "Observation", "Condition", "MedicationRequest",
    "Procedure", "Immunization", "DiagnosticReport", "ImagingStudy",
)


@dataclass(frozen=True)
class DeviceAllowlist:
    entries: frozenset = frozenset()
    mode: str = LOG_ONLY

    def __post_init__(self):
        if self.mode not in (ENFORCE, LOG_ONLY):
            raise ValueError(f"unknown allowlist mode: {self.mode!r}")

    def permits(self, device_id: str) -> bool:
        return device_id in self.entries


@dataclass
class Session:
    session_id: str
    send_raw: object  # callable(bytes)
    close_raw: object  # callable()
    state: str = AWAITING_HELLO
    device_id: str = ""
    subscriptions: set = field(default_factory=set)
    send_lock: threading.RLock = field(default_factory=threading.RLock)
    closed: bool = False


def timeline_doc(rset: ResourceSet, patient_id: str, *,
                 variant: str | None = None, window_days: float = 30.0,
                 line_width_m: float = 2.0) -> dict:
    """The timeline layout document; CLI export and wire response share it."""
    record = extract_patient_record(rset, patient_id)
    spec = DensitySpec(variant, window_days) if variant else DensitySpec()
    params = WarpParams(line_width_m=line_width_m)
    return layout_to_doc(build_timeline(record, spec, params))


def event_detail_doc(rset: ResourceSet, ref_str: str) -> dict:
    """Detail fields for one clinical event, ready to float next to a glyph."""
    ref = rset.resolve_str(ref_str)
    if ref is None or ref not in rset.resources:
        raise NotFound(ref_str)
    resource = rset.resources[ref]
    kind = ref.resource_type
    when = event_time(resource, kind)
    encounter = (resource.get("encounter") or {}).get("reference")
    return {
        "ref": str(ref),
        "kind": kind,
        "display": event_display(resource, kind),
        "time": when.isoformat() if when else None,
        "encounter": encounter,
        "fields": [[name, value] for name, value in event_detail(resource, kind)],
        "attachment": imaging_attachment(resource) if kind == "ImagingStudy" else None,
    }


class GatewayService:
    def __init__(self, rset: ResourceSet, orchestrator: PipelineOrchestrator,
                 allowlist: DeviceAllowlist = DeviceAllowlist(), *,
                 line_width_m: float = 2.0, density_variant: str | None = None,
                 frame_tap=None):
        self._rset = rset
        self._rset_lock = threading.Lock()
        self.orchestrator = orchestrator
        self.allowlist = allowlist
        self.line_width_m = line_width_m
        self.density_variant = density_variant
        self.frame_tap = frame_tap
        self._lock = threading.Lock()
        self._sessions: dict[str, Session] = {}
        self._imaging_jobs: dict[str, str] = {}  # study ref -> job id
        orchestrator.add_listener(self._on_job_update)

    # -- resources -----------------------------------------------------------

    def resources(self) -> ResourceSet:
        with self._rset_lock:
            return self._rset

    def merge_resources(self, incoming: ResourceSet) -> None:
        with self._rset_lock:
            self._rset = self._rset.merged_with(incoming)

    # -- session lifecycle ----------------------------------------------------

    def connect(self, send_raw, close_raw) -> Session:
        session = Session(session_id=str(uuid.uuid4()),
                          send_raw=send_raw, close_raw=close_raw)
        with self._lock:
            self._sessions[session.session_id] = session
        return session

    def close_session(self, session: Session, reason: str = "") -> None:
        with session.send_lock:
            already = session.closed
            session.closed = True
        if reason and not already:
            log.info("closing session %s: %s", session.session_id, reason)
        with self._lock:
            self._sessions.pop(session.session_id, None)
        try:
            session.close_raw()
        except OSError:
            pass

    def sessions(self) -> list[Session]:
        with self._lock:
            return list(self._sessions.values())

    def _send(self, session: Session, data: bytes) -> None:
        if self.frame_tap is not None:
            self.frame_tap(session, data)
        with session.send_lock:
            if session.closed:
                raise SessionClosed(session.session_id)
            try:
                session.send_raw(data)
            except OSError as exc:
                session.closed = True
                raise SessionClosed(str(exc)) from exc

    def _send_json(self, session: Session, msg_type: int, doc) -> None:
        self._send(session, encode_json(msg_type, doc))

    def _send_error(self, session: Session, exc: GatewayError, in_reply_to: int) -> None:
        self._send_json(session, framing.ERROR, {
            "code": exc.code,
            "message": str(exc),
            "in_reply_to": framing.TYPE_NAMES.get(in_reply_to, f"0x{in_reply_to:02X}"),
        })

    # -- hello ---------------------------------------------------------------

    def handle_hello(self, session: Session, frame: Frame) -> None:
        try:
            if frame.msg_type != framing.HELLO:
                raise MalformedHello(
                    f"expected Hello, got {framing.TYPE_NAMES.get(frame.msg_type)}")
            try:
                doc = frame.json()
            except (UnicodeDecodeError, ValueError) as exc:
                raise MalformedHello("Hello payload is not JSON") from exc
            device_id = doc.get("device_id") if isinstance(doc, dict) else None
            if not isinstance(device_id, str) or not device_id:
                raise MalformedHello("Hello carries no device_id")
            if not self.allowlist.permits(device_id):
                if self.allowlist.mode == ENFORCE:
                    raise NotAllowlisted(device_id)
                log.warning("device %s not allowlisted; admitted (log_only)", device_id)
        except GatewayError as exc:
            self._reject(session, exc)
            return
        session.device_id = device_id
        session.state = READY
        self._send_json(session, framing.HELLO_ACK, {
            "session_id": session.session_id,
            "protocol": 1,
        })

    def _reject(self, session: Session, exc: GatewayError) -> None:
        try:
            self._send_json(session, framing.REJECTED,
                            {"code": exc.code, "message": str(exc)})
        except SessionClosed:
            pass
        self.close_session(session, exc.code)

    # -- dispatch --------------------------------------------------------------

    def handle_frame(self, session: Session, frame: Frame) -> None:
        if session.state != READY:
            self.handle_hello(session, frame)
            return
        try:
            handler = _HANDLERS.get(frame.msg_type)
            if handler is None:
                raise MalformedRequest(
                    f"no request handler for "
                    f"{framing.TYPE_NAMES.get(frame.msg_type, hex(frame.msg_type))}")
            if frame.is_json:
                try:
                    doc = frame.json() if frame.payload else {}
                except (UnicodeDecodeError, ValueError) as exc:
                    raise MalformedRequest(str(exc)) from exc
            else:
                doc = frame.payload
            handler(self, session, doc)
        except SessionClosed:
            self.close_session(session, "send failed")
        except GatewayError as exc:
            try:
                self._send_error(session, exc, frame.msg_type)
            except SessionClosed:
                self.close_session(session, "send failed")

    def _list_patients(self, session: Session, doc) -> None:
        rows = list_patients(self.resources())
        self._send_json(session, framing.PATIENT_LIST, {"patients": [
            {"ref": str(ref), "name": name, "birth_date": birth, "gender": gender}
            for ref, name, birth, gender in rows]})

    def _find_patient(self, session: Session, doc) -> None:
        query = doc.get("query") if isinstance(doc, dict) else None
        if not isinstance(query, str) or not query:
            raise MalformedRequest("FindPatient needs a query string")
        rows = find_patient(self.resources(), query)
        self._send_json(session, framing.PATIENT_SUMMARY, {"matches": [
            {"ref": str(ref), "name": name, "birth_date": birth, "gender": gender}
            for ref, name, birth, gender in rows]})

    def _get_timeline(self, session: Session, doc) -> None:
        patient = doc.get("patient") if isinstance(doc, dict) else None
        if not isinstance(patient, str) or not patient:
            raise MalformedRequest("GetTimeline needs a patient id")
        patient_id = patient.split("/", 1)[1] if patient.startswith("Patient/") else patient
        try:
            layout = timeline_doc(
                self.resources(), patient_id,
                variant=doc.get("density_variant") or self.density_variant,
                window_days=doc.get("window_days", 30.0),
                line_width_m=self.line_width_m)
        except (TypeError, ValueError) as exc:
            raise MalformedRequest(str(exc)) from exc
        self._send_json(session, framing.TIMELINE_LAYOUT, layout)

    def _get_cluster(self, session: Session, doc) -> None:
        seed = doc.get("seed", 0) if isinstance(doc, dict) else 0
        if not isinstance(seed, int):
            raise MalformedRequest("seed must be an integer")
        cluster = cluster_layout(self.resources(), seed)
        self._send_json(session, framing.CLUSTER_LAYOUT, cluster_to_doc(cluster))

    def _get_event_detail(self, session: Session, doc) -> None:
        ref = doc.get("ref") if isinstance(doc, dict) else None
        if not isinstance(ref, str) or not ref:
            raise MalformedRequest("GetEventDetail needs a ref")
        self._send_json(session, framing.EVENT_DETAIL,
                        event_detail_doc(self.resources(), ref))

    def _list_pipelines(self, session: Session, doc) -> None:
        self._send_json(session, framing.PIPELINE_LIST, {"pipelines": [
            {"id": d.id, "display_name": d.display_name,
             "input_kinds": list(d.input_kinds),
             "output_kinds": list(d.output_kinds),
             "stages": list(d.stages)}
            for d in self.orchestrator.list_pipelines()]})

    def _poll_job(self, session: Session, doc) -> None:
        job_id = doc.get("job_id") if isinstance(doc, dict) else None
        if not isinstance(job_id, str) or not job_id:
            raise MalformedRequest("JobStatus poll needs a job_id")
        self._send_job_status(session, self.orchestrator.job_status(job_id))

    def _get_imaging(self, session: Session, doc) -> None:
        study = doc.get("study_ref") if isinstance(doc, dict) else None
        if not isinstance(study, str) or not study:
            raise MalformedRequest("GetImaging needs a study_ref")
        rset = self.resources()
        ref = rset.resolve_str(study)
        if ref is None or ref not in rset.resources:
            raise NotFound(study)
        volume_key = imaging_attachment(rset.resources[ref])
        if not volume_key:
            raise MissingInput(f"{study} references no stored volume")

        with self._lock:
            cached = self._imaging_jobs.get(study)
        if cached is not None:
            job = self.orchestrator.job_status(cached)
            if job.state == SUCCEEDED:
                self._send_json(session, framing.JOB_ACCEPTED,
                                {"job_id": job.job_id, "study_ref": study,
                                 "cached": True})
                self._deliver_update(session, job, force_terminal=True)
                return

        with session.send_lock:
            job_id = self.orchestrator.submit_job(
                SPINE_PIPELINE_ID, {"labelvol": volume_key})
            with self._lock:
                self._imaging_jobs[study] = job_id
                session.subscriptions.add(job_id)
            self._send_json(session, framing.JOB_ACCEPTED,
                            {"job_id": job_id, "study_ref": study, "cached": False})
            # transitions before the subscription was recorded are re-sent here
            self._deliver_update(session, self.orchestrator.job_status(job_id))

    # -- job pushes -------------------------------------------------------------

    def _on_job_update(self, job: PipelineJob) -> None:
        for session in self.sessions():
            with self._lock:
                subscribed = job.job_id in session.subscriptions
            if subscribed:
                try:
                    self._deliver_update(session, job)
                except SessionClosed:
                    self.close_session(session, "push failed")

    def _send_job_status(self, session: Session, job: PipelineJob) -> None:
        self._send_json(session, framing.JOB_STATUS, {
            "job_id": job.job_id,
            "pipeline_id": job.pipeline_id,
            "state": job.state,
            "stage_index": job.stage_index,
            "stages_started": [list(row) for row in job.stage_started],
            "outputs": list(job.outputs),
            "error": job.error,
        })

    def _deliver_update(self, session: Session, job: PipelineJob,
                        force_terminal: bool = False) -> None:
        self._send_job_status(session, job)
        if not job.is_terminal:
            return
        with self._lock:
            owed = job.job_id in session.subscriptions or force_terminal
            session.subscriptions.discard(job.job_id)
        if owed and job.state == SUCCEEDED:
            self._stream_job_meshes(session, job)

    def _stream_job_meshes(self, session: Session, job: PipelineJob) -> None:
        store = self.orchestrator.store
        with session.send_lock:
            for output in job.outputs:
                if not output.endswith(".exrm"):
                    continue
                blob = store.get(output)
                label = int.from_bytes(blob[4:6], "little")
                self.stream_mesh(session, label, blob)

    def stream_mesh(self, session: Session, label: int, exrm: bytes) -> None:
        """Send one mesh as MeshBegin, 1 MiB chunks, MeshEnd with a CRC32."""
        chunks = [exrm[i:i + CHUNK_BYTES] for i in range(0, len(exrm), CHUNK_BYTES)]
        if not chunks:
            chunks = [b""]
        with session.send_lock:
            self._send_json(session, framing.MESH_BEGIN, {
                "label": label,
                "total_bytes": len(exrm),
                "chunk_count": len(chunks),
            })
            for chunk in chunks:
                self._send(session, encode_frame(framing.MESH_CHUNK, chunk))
            self._send_json(session, framing.MESH_END, {
                "label": label,
                "checksum": zlib.crc32(exrm),
            })


class MalformedRequest(GatewayError):
    pass


_HANDLERS = {
    framing.LIST_PATIENTS: GatewayService._list_patients,
    framing.FIND_PATIENT: GatewayService._find_patient,
    framing.GET_TIMELINE: GatewayService._get_timeline,
    framing.GET_CLUSTER_LAYOUT: GatewayService._get_cluster,
    framing.GET_EVENT_DETAIL: GatewayService._get_event_detail,
    framing.LIST_PIPELINES: GatewayService._list_pipelines,
    framing.JOB_STATUS: GatewayService._poll_job,
    framing.GET_IMAGING: GatewayService._get_imaging,
}


def sync_from_upstream(service: GatewayService, base_url: str, cfg: AuthConfig,
                       cache: TokenCache,
                       resource_types=SYNC_RESOURCE_TYPES) -> dict[str, int]:
    """Pull every supported resource type and merge into the live set."""
    counts = {}
    for resource_type in resource_types:
        bundle = parse_bundle(fhir_search(base_url, resource_type, {}, cfg, cache))
        counts[resource_type] = len(bundle.resources)
        service.merge_resources(bundle)
    return counts

"""Operator entry points: run the gateway, ingest bundles, export artifacts.

Exit codes: 0 success, 1 data error, 2 configuration or usage error.
"""

import signal
import sys
import threading
import zlib
from pathlib import Path

import click

from fhirgate.canonical import canonical_json
from fhirgate.config import GatewayConfig, load_config
from fhirgate.errors import GatewayError, InvalidConfig, LabelAbsent
from fhirgate.fhir import parse_bundle
from fhirgate.fhir.store import load_resources, persist_resources
from fhirgate.gateway.server import GatewayServer
from fhirgate.gateway.service import (
    DeviceAllowlist,
    GatewayService,
    sync_from_upstream,
    timeline_doc,
)
from fhirgate.pipeline import PipelineOrchestrator, register_spine_pipeline
from fhirgate.render import render_timeline_svg
from fhirgate.timeline import DENSITY_VARIANTS
from fhirgate.upstream import LocalBlobStore, TokenCache
from fhirgate.volumetrics import encode_mesh, extract_mesh, load_label_volume

CONFIG_OPTION = click.option(
    "--config", "config_path", type=click.Path(), default=None,
    help="Path to the key=value config file; EXR_* env vars override it.")


def _load_config_or_exit(config_path) -> GatewayConfig:
    try:
        return load_config(config_path)
    except InvalidConfig as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)


def _open_store(config: GatewayConfig) -> LocalBlobStore:
    try:
        return LocalBlobStore(config.storage_root)
    except OSError as exc:
        click.echo(f"config error: cannot use storage root "
                   f"{config.storage_root}: {exc}", err=True)
        sys.exit(2)


def _load_store_or_exit(store: LocalBlobStore):
    try:
        return load_resources(store)
    except GatewayError as exc:
        click.echo(f"error: {exc.code}: {exc}", err=True)
        sys.exit(1)


@click.group()
def main():
    """Timeline gateway for FHIR records and volumetric pipeline output."""


@main.command()
@CONFIG_OPTION
def serve(config_path):
    """Run the gateway until SIGTERM/SIGINT, then drain and exit."""
    config = _load_config_or_exit(config_path)
    store = _open_store(config)
    rset = _load_store_or_exit(store)

    orchestrator = PipelineOrchestrator(store)
    register_spine_pipeline(orchestrator)
    service = GatewayService(
        rset, orchestrator,
        DeviceAllowlist(config.allowlist_entries, config.allowlist_mode),
        line_width_m=config.line_width_m,
        density_variant=config.density_variant)

    if config.fhir_base and config.auth:
        try:
            counts = sync_from_upstream(service, config.fhir_base,
                                        config.auth, TokenCache())
            for resource_type, count in sorted(counts.items()):
                click.echo(f"synced {resource_type}: {count}")
        except GatewayError as exc:
            # local data still serves; the operator sees why sync is missing
            click.echo(f"upstream sync failed: {exc.code}: {exc}", err=True)

    server = GatewayServer(service, tcp_port=config.tcp_port,
                           ws_port=config.ws_port)
    try:
        server.start()
    except OSError as exc:
        orchestrator.shutdown()
        click.echo(f"config error: cannot bind listeners: {exc}", err=True)
        sys.exit(2)

    stop = threading.Event()
    for signum in (signal.SIGTERM, signal.SIGINT):
        signal.signal(signum, lambda *_: stop.set())

    # only printed once listeners are bound and signal handlers installed,
    # so supervisors may connect or signal as soon as they see it
    click.echo(f"READY tcp={server.tcp_port} ws={server.ws_port}")
    sys.stdout.flush()

    stop.wait()
    server.stop()
    orchestrator.shutdown()
    sys.exit(0)


@main.command()
@CONFIG_OPTION
@click.argument("bundles", nargs=-1, required=True,
                type=click.Path(exists=False))
def ingest(config_path, bundles):
    """Load FHIR bundle files into the local store; print per-type counts."""
    config = _load_config_or_exit(config_path)
    store = _open_store(config)

    counts: dict[str, int] = {}
    seen = set()
    failures = []
    for bundle_path in bundles:
        try:
            incoming = parse_bundle(Path(bundle_path).read_bytes())
        except (OSError, GatewayError) as exc:
            failures.append((bundle_path, exc))
            continue
        try:
            written = persist_resources(store, incoming)
        except GatewayError as exc:
            failures.append((bundle_path, exc))
            continue
        for ref in written:
            if ref not in seen:
                seen.add(ref)
                counts[ref.resource_type] = counts.get(ref.resource_type, 0) + 1

    for resource_type, count in sorted(counts.items()):
        click.echo(f"{resource_type}: {count}")
    if failures:
        for bundle_path, exc in failures:
            click.echo(f"failed {bundle_path}: {exc}", err=True)
        sys.exit(1)


@main.command()
@CONFIG_OPTION
@click.argument("patient")
@click.option("--variant", type=click.Choice(sorted(DENSITY_VARIANTS)),
              default=None, help="Density variant; default from config.")
@click.option("--format", "fmt", type=click.Choice(["json", "svg"]),
              default="json", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write to a file instead of stdout.")
def timeline(config_path, patient, variant, fmt, out_path):
    """Export one patient's warped timeline layout."""
    config = _load_config_or_exit(config_path)
    store = _open_store(config)
    rset = _load_store_or_exit(store)
    patient_id = patient.split("/", 1)[1] if patient.startswith("Patient/") else patient
    try:
        doc = timeline_doc(rset, patient_id,
                           variant=variant or config.density_variant,
                           line_width_m=config.line_width_m)
    except GatewayError as exc:
        click.echo(f"error: {exc.code}: {exc}", err=True)
        sys.exit(1)
    payload = canonical_json(doc) if fmt == "json" else render_timeline_svg(doc)
    if out_path:
        Path(out_path).write_bytes(payload)
        click.echo(f"wrote {out_path} ({len(payload)} bytes)")
    else:
        sys.stdout.buffer.write(payload)
        sys.stdout.buffer.flush()


@main.command()
@click.option("--volume", "volume_path", required=True, type=click.Path(),
              help="Label volume header (.json) with its .raw alongside.")
@click.option("--label", required=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def mesh(volume_path, label, out_path):
    """Extract one label's surface mesh and write the binary mesh file."""
    header_path = Path(volume_path)
    payload_path = header_path.with_suffix(".raw")
    try:
        volume = load_label_volume(header_path.read_bytes(),
                                   payload_path.read_bytes())
        if label not in volume.label_values():
            raise LabelAbsent(f"label {label} not present in {volume_path}")
        blob = encode_mesh(extract_mesh(volume, label))
    except (OSError, GatewayError) as exc:
        code = getattr(exc, "code", type(exc).__name__)
        click.echo(f"error: {code}: {exc}", err=True)
        sys.exit(1)
    Path(out_path).write_bytes(blob)
    click.echo(f"wrote {out_path} ({len(blob)} bytes, "
               f"crc32 {zlib.crc32(blob):08x})")


if __name__ == "__main__":
    main()

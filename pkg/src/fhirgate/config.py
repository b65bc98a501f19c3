"""Gateway configuration: a flat key=value file plus EXR_ env overrides.

The full key reference lives in CONFIG.md. Every key can come from the
file, from an environment variable ``EXR_<KEY>`` (which wins), or fall
back to its default. ``storage_root`` is the only required key.
"""

import os
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import urlsplit

from fhirgate.errors import InvalidConfig
from fhirgate.gateway.service import ENFORCE, LOG_ONLY
from fhirgate.timeline import DENSITY_VARIANTS
from fhirgate.upstream import AuthConfig

ENV_PREFIX = "EXR_"

_KEYS = (
    "storage_root", "tcp_port", "ws_port", "allowlist", "allowlist_mode",
    "token_endpoint", "client_id", "client_secret", "scope",
    "refresh_margin_s", "fhir_base", "density_variant", "line_width_m",
)


@dataclass(frozen=True)
class GatewayConfig:
    storage_root: Path
    tcp_port: int = 7842
    ws_port: int = 7843
    allowlist_entries: frozenset = frozenset()
    allowlist_mode: str = LOG_ONLY
    auth: AuthConfig | None = None
    fhir_base: str | None = None
    density_variant: str | None = None
    line_width_m: float = 2.0


def parse_config_text(text: str) -> dict[str, str]:
    """key = value lines; blank lines and # comments are skipped."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise InvalidConfig(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise InvalidConfig(f"line {lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def _as_int(values: dict, key: str, default: int) -> int:
    if key not in values:
        return default
    try:
        return int(values[key])
    except ValueError as exc:
        raise InvalidConfig(f"{key} must be an integer, got {values[key]!r}") from exc


def _as_float(values: dict, key: str, default: float) -> float:
    if key not in values:
        return default
    try:
        return float(values[key])
    except ValueError as exc:
        raise InvalidConfig(f"{key} must be a number, got {values[key]!r}") from exc


def load_config(path: str | os.PathLike | None = None,
                env: dict | None = None) -> GatewayConfig:
    """Parse the file (when given), apply env overrides, validate."""
    env = os.environ if env is None else env
    values: dict[str, str] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InvalidConfig(f"cannot read config file {path}: {exc}") from exc
        values = parse_config_text(text)
    for key in _KEYS:
        override = env.get(ENV_PREFIX + key.upper())
        if override is not None:
            values[key] = override

    if "storage_root" not in values or not values["storage_root"]:
        raise InvalidConfig("storage_root is required (file key or EXR_STORAGE_ROOT)")
    storage_root = Path(values["storage_root"])

    tcp_port = _as_int(values, "tcp_port", 7842)
    ws_port = _as_int(values, "ws_port", 7843)
    for name, port in (("tcp_port", tcp_port), ("ws_port", ws_port)):
        if not 0 <= port <= 65535:
            raise InvalidConfig(f"{name} out of range: {port}")
    # both 0 is fine: the OS picks two distinct ephemeral ports
    if tcp_port == ws_port and tcp_port != 0:
        raise InvalidConfig(f"tcp_port and ws_port must differ, both are {tcp_port}")

    mode = values.get("allowlist_mode", LOG_ONLY)
    if mode not in (ENFORCE, LOG_ONLY):
        raise InvalidConfig(f"allowlist_mode must be {ENFORCE!r} or {LOG_ONLY!r}, "
                            f"got {mode!r}")
    entries = frozenset(
        entry.strip() for entry in values.get("allowlist", "").split(",")
        if entry.strip())

    variant = values.get("density_variant") or None
    if variant is not None and variant not in DENSITY_VARIANTS:
        raise InvalidConfig(f"density_variant must be one of "
                            f"{sorted(DENSITY_VARIANTS)}, got {variant!r}")

    line_width_m = _as_float(values, "line_width_m", 2.0)
    if line_width_m <= 0:
        raise InvalidConfig(f"line_width_m must be positive, got {line_width_m}")

    auth = None
    auth_keys = ("token_endpoint", "client_id", "client_secret")
    present = [key for key in auth_keys if values.get(key)]
    if present and len(present) != len(auth_keys):
        missing = sorted(set(auth_keys) - set(present))
        raise InvalidConfig(f"incomplete auth settings; missing {missing}")
    if present:
        try:
            auth = AuthConfig(
                token_endpoint=values["token_endpoint"],
                client_id=values["client_id"],
                client_secret=values["client_secret"],
                scope=values.get("scope", ""),
                refresh_margin_s=_as_int(values, "refresh_margin_s", 60),
            )
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc

    fhir_base = values.get("fhir_base") or None
    if fhir_base is not None:
        parts = urlsplit(fhir_base)
        if parts.scheme not in ("http", "https") or not parts.netloc:
            raise InvalidConfig(f"fhir_base must be an absolute URL, got {fhir_base!r}")
        if auth is None:
            raise InvalidConfig("fhir_base requires the auth settings "
                                "(token_endpoint, client_id, client_secret)")

    return GatewayConfig(
        storage_root=storage_root,
        tcp_port=tcp_port,
        ws_port=ws_port,
        allowlist_entries=entries,
        allowlist_mode=mode,
        auth=auth,
        fhir_base=fhir_base,
        density_variant=variant,
        line_width_m=line_width_m,
    )

"""Outbound clients: OAuth2 tokens, FHIR search, and blob storage.

Tokens are fetched with the client-credentials grant and cached until
shortly before expiry. The cache lock is held across the network call so
concurrent callers produce at most one token request; everyone else waits
and reads the fresh cache. Tokens live only in this process — they are
never placed in any frame sent to a visualization client.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from urllib.parse import urlencode, urlsplit

import requests

from fhirgate.canonical import canonical_json
from fhirgate.errors import (
    AuthRejected,
    EndpointUnreachable,
    NotFound,
    PageCapExceeded,
    PathEscapesRoot,
    StorageIoError,
    Unauthorized,
    UpstreamError,
)

logger = logging.getLogger(__name__)

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class AuthConfig:
    token_endpoint: str
    client_id: str
    client_secret: str
    scope: str = ""
    refresh_margin_s: int = 60

    def __post_init__(self):
        parts = urlsplit(self.token_endpoint)
        if parts.scheme not in ("http", "https") or not parts.netloc:
            raise ValueError(f"token_endpoint must be an absolute URL, "
                             f"got {self.token_endpoint!r}")
        if self.refresh_margin_s < 0:
            raise ValueError("refresh_margin_s must be >= 0")


@dataclass
class TokenCache:
    access_token: str = ""
    expires_at: datetime = _EPOCH
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def invalidate(self):
        with self.lock:
            self.access_token = ""
            self.expires_at = _EPOCH


def fetch_token(cfg: AuthConfig, cache: TokenCache) -> str:
    """Valid bearer token, from cache when fresh, else one network fetch."""
    with cache.lock:
        now = datetime.now(timezone.utc)
        margin = timedelta(seconds=cfg.refresh_margin_s)
        if cache.access_token and now < cache.expires_at - margin:
            return cache.access_token
        form = {
            "grant_type": "client_credentials",
            "client_id": cfg.client_id,
            "client_secret": cfg.client_secret,
        }
        if cfg.scope:
            form["scope"] = cfg.scope
        try:
            response = requests.post(cfg.token_endpoint, data=form, timeout=10)
        except requests.RequestException as exc:
            raise EndpointUnreachable(str(exc)) from exc
        if 400 <= response.status_code < 500:
            raise AuthRejected(f"token endpoint returned {response.status_code}")
        if response.status_code != 200:
            raise EndpointUnreachable(
                f"token endpoint returned {response.status_code}")
        try:
            body = response.json()
            token = body["access_token"]
            expires_in = int(body.get("expires_in", 3600))
        except (ValueError, KeyError, TypeError) as exc:
            raise AuthRejected(f"malformed token response: {exc}") from exc
        cache.access_token = token
        cache.expires_at = now + timedelta(seconds=expires_in)
        return token


def fhir_search(base_url: str, resource_type: str, params,
                cfg: AuthConfig, cache: TokenCache, page_cap: int = 50) -> bytes:
    """Search one resource type, following pagination; returns merged bundle bytes.

    A single 401 triggers one token refresh and retry; a second 401 raises
    Unauthorized. More pages than page_cap raises PageCapExceeded.
    """
    query = urlencode(list(params.items()) if isinstance(params, dict) else list(params))
    url = f"{base_url.rstrip('/')}/{resource_type}"
    if query:
        url += f"?{query}"
    entries = []
    refreshed = False
    pages = 0
    while url:
        if pages >= page_cap:
            raise PageCapExceeded(f"more than {page_cap} pages from {resource_type}")
        token = fetch_token(cfg, cache)
        try:
            response = requests.get(
                url, headers={"Authorization": f"Bearer {token}"}, timeout=30)
        except requests.RequestException as exc:
            raise EndpointUnreachable(str(exc)) from exc
        if response.status_code == 401:
            if refreshed:
                raise Unauthorized(f"{resource_type} search rejected after refresh")
            refreshed = True
            cache.invalidate()
            continue
        if response.status_code != 200:
            raise UpstreamError(f"{url} returned {response.status_code}")
        try:
            page = response.json()
        except ValueError as exc:
            raise UpstreamError(f"non-JSON page from {url}") from exc
        entries.extend(page.get("entry") or [])
        url = next((link.get("url") for link in page.get("link") or []
                    if link.get("relation") == "next"), None)
        pages += 1
    return canonical_json({"resourceType": "Bundle", "type": "searchset",
                           "entry": entries})


class LocalBlobStore:
    """Filesystem-backed unstructured storage, confined to one root."""

    def __init__(self, root):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)

    def _resolve(self, path: str) -> Path:
        if not path or not isinstance(path, str):
            raise PathEscapesRoot(f"bad storage path {path!r}")
        candidate = Path(path)
        if candidate.is_absolute():
            raise PathEscapesRoot(f"absolute path {path!r}")
        resolved = (self.root / candidate).resolve()
        if resolved != self.root and self.root not in resolved.parents:
            raise PathEscapesRoot(f"{path!r} escapes the storage root")
        return resolved

    def put(self, path: str, data: bytes) -> None:
        target = self._resolve(path)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            tmp = target.with_name(target.name + ".tmp")
            tmp.write_bytes(data)
            tmp.replace(target)
        except OSError as exc:
            raise StorageIoError(str(exc)) from exc

    def get(self, path: str) -> bytes:
        target = self._resolve(path)
        if not target.is_file():
            raise NotFound(path)
        try:
            return target.read_bytes()
        except OSError as exc:
            raise StorageIoError(str(exc)) from exc

    def exists(self, path: str) -> bool:
        return self._resolve(path).is_file()

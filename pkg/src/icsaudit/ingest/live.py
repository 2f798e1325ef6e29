"""Client for the host search API (paginated, rate limited)."""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import httpx

from ..errors import AuthError, MalformedRecord, RateLimited, TransportError
from ..model import HostRecord
from .export import merge_records, record_from_json

log = logging.getLogger(__name__)

API_KEY_ENV = "AUDITOR_API_KEY"
DEFAULT_BASE_URL = "https://api.shodan.io"
PAGE_SIZE = 100


@dataclass(frozen=True)
class ApiCredentials:
    api_key: str = field(repr=False)
    base_url: str = DEFAULT_BASE_URL
    rate_limit: float = 1.0

    def __post_init__(self):
        if self.rate_limit <= 0:
            raise ValueError("rate_limit must be positive")

    def __repr__(self) -> str:
        return f"ApiCredentials(api_key='***', base_url={self.base_url!r}, rate_limit={self.rate_limit})"

    @classmethod
    def from_env(cls, base_url: str = DEFAULT_BASE_URL, rate_limit: float = 1.0) -> "ApiCredentials":
        key = os.environ.get(API_KEY_ENV)
        if not key:
            raise AuthError(f"no API key given and {API_KEY_ENV} is not set")
        return cls(key, base_url, rate_limit)


def fetch_search(
    query: str,
    credentials: ApiCredentials,
    page_limit: int = 1,
    *,
    client: Optional[httpx.Client] = None,
    max_retries: int = 4,
    sleep: Callable[[float], None] = time.sleep,
    clock: Callable[[], float] = time.monotonic,
) -> list[HostRecord]:
    """Run a search and return deduplicated hosts from up to page_limit pages."""
    if page_limit <= 0:
        return []
    own_client = client is None
    client = client or httpx.Client(timeout=30.0)
    url = credentials.base_url.rstrip("/") + "/shodan/host/search"
    interval = 1.0 / credentials.rate_limit
    last_request: Optional[float] = None

    def get(page: int) -> dict:
        nonlocal last_request
        delay = 1.0
        for attempt in range(max_retries + 1):
            if last_request is not None:
                wait = interval - (clock() - last_request)
                if wait > 0:
                    sleep(wait)
            last_request = clock()
            try:
                resp = client.get(url, params={"key": credentials.api_key, "query": query, "page": page})
            except httpx.HTTPError as exc:
                # the exception text can embed the request URL, which carries the key
                raise TransportError(f"request for page {page} failed: {type(exc).__name__}") from None
            if resp.status_code in (401, 403):
                raise AuthError(f"search API refused the credentials (HTTP {resp.status_code})")
            if resp.status_code == 429:
                if attempt == max_retries:
                    break
                log.info("rate limited on page %d, retrying in %.1fs", page, delay)
                sleep(delay)
                delay *= 2
                continue
            if resp.status_code != 200:
                raise TransportError(f"search API answered HTTP {resp.status_code} for page {page}")
            try:
                return resp.json()
            except ValueError:
                raise TransportError(f"page {page} is not valid JSON") from None
        raise RateLimited(f"still rate limited after {max_retries} retries")

    records = []
    try:
        for page in range(1, page_limit + 1):
            body = get(page)
            matches = body.get("matches") or []
            for doc in matches:
                try:
                    records.append(record_from_json(doc))
                except MalformedRecord as exc:
                    log.warning("skipping malformed search result: %s", exc)
            total = body.get("total", 0)
            if not matches or page * PAGE_SIZE >= total:
                break
    finally:
        if own_client:
            client.close()
    return merge_records(records)

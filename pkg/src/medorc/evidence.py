"""PubMed evidence retrieval via the NCBI ESearch service.

Retrieval is deliberately total: any transport, protocol, or parse failure
collapses to an empty bundle with fallback_used set, so the pipeline always
proceeds (with a fallback prompt) instead of failing on a flaky upstream.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass

import requests

from .ratelimit import SlidingWindowLimiter

log = logging.getLogger(__name__)

ESEARCH_URL = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils/esearch.fcgi"
PUBMED_ARTICLE_URL = "https://pubmed.ncbi.nlm.nih.gov/{pmid}/"

# NCBI E-utilities policy: 3 requests/second unkeyed, 10/second with an API key.
UNKEYED_RATE = 3
KEYED_RATE = 10

API_KEY_ENV = "MEDORC_NCBI_API_KEY"

DEFAULT_RETMAX = 3


@dataclass(frozen=True)
class EvidenceItem:
    """One retrieved PubMed identifier with its 1-based retrieval rank."""

    pmid: str
    rank: int

    def __post_init__(self):
        if not self.pmid.isdigit():
            raise ValueError(f"pmid must be decimal digits, got {self.pmid!r}")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")

    @property
    def citation_label(self) -> str:
        return f"[{self.rank}]"

    @property
    def url(self) -> str:
        return PUBMED_ARTICLE_URL.format(pmid=self.pmid)


@dataclass(frozen=True)
class EvidenceBundle:
    query_text: str
    items: tuple[EvidenceItem, ...] = ()
    fallback_used: bool = False

    def __post_init__(self):
        if self.fallback_used != (len(self.items) == 0):
            raise ValueError("fallback_used must hold exactly when items is empty")

    @classmethod
    def empty(cls, query_text: str) -> "EvidenceBundle":
        return cls(query_text=query_text, items=(), fallback_used=True)


def format_citations(bundle: EvidenceBundle) -> str:
    """Render numbered citation lines; empty bundle renders as empty string."""
    return "\n".join(
        f"{item.citation_label} PMID: {item.pmid} ({item.url})"
        for item in bundle.items
    )


class PubMedClient:
    """ESearch client: rate-limited, one retry on transport error, then fallback.

    Shareable across threads; the rate limiter is the only shared mutable state.
    """

    def __init__(
        self,
        base_url: str = ESEARCH_URL,
        timeout: float = 10.0,
        session: requests.Session | None = None,
        limiter: SlidingWindowLimiter | None = None,
        api_key: str | None = None,
    ):
        self.base_url = base_url
        self.timeout = timeout
        self._session = session or requests.Session()
        self._api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if limiter is None:
            rate = KEYED_RATE if self._api_key else UNKEYED_RATE
            limiter = SlidingWindowLimiter(rate, 1.0, guard_seconds=0.02)
        self._limiter = limiter

    def search(self, query_text: str, retmax: int = DEFAULT_RETMAX) -> EvidenceBundle:
        if not query_text.strip():
            raise ValueError("query_text must be non-empty")
        if retmax < 1:
            raise ValueError("retmax must be >= 1")
        body = self._fetch(query_text, retmax)
        if body is None:
            return EvidenceBundle.empty(query_text)
        pmids = self._parse_idlist(body)
        items = tuple(
            EvidenceItem(pmid=pmid, rank=i + 1)
            for i, pmid in enumerate(pmids[:retmax])
        )
        if not items:
            return EvidenceBundle.empty(query_text)
        return EvidenceBundle(query_text=query_text, items=items)

    def _fetch(self, query_text: str, retmax: int) -> bytes | None:
        params = {
            "db": "pubmed",
            "term": query_text,
            "retmode": "json",
            "retmax": str(retmax),
        }
        if self._api_key:
            params["api_key"] = self._api_key
        for attempt in (1, 2):
            self._limiter.acquire()
            try:
                resp = self._session.get(
                    self.base_url, params=params, timeout=self.timeout
                )
            except requests.RequestException as exc:
                log.warning("esearch attempt %d failed: %s", attempt, exc)
                continue
            if 200 <= resp.status_code < 300:
                return resp.content
            log.warning(
                "esearch attempt %d returned HTTP %d", attempt, resp.status_code
            )
        return None

    @staticmethod
    def _parse_idlist(body: bytes) -> list[str]:
        try:
            payload = json.loads(body)
            idlist = payload["esearchresult"]["idlist"]
        except (ValueError, TypeError, KeyError, UnicodeDecodeError):
            log.warning("esearch response unparseable; using fallback")
            return []
        if not isinstance(idlist, list):
            return []
        return [str(e) for e in idlist if isinstance(e, (str, int)) and str(e).isdigit()]


_default_client: PubMedClient | None = None


def search_pubmed(
    query_text: str,
    retmax: int = DEFAULT_RETMAX,
    client: PubMedClient | None = None,
) -> EvidenceBundle:
    """Search with an explicit client, or a shared module-default one."""
    global _default_client
    if client is None:
        if _default_client is None:
            _default_client = PubMedClient()
        client = _default_client
    return client.search(query_text, retmax)

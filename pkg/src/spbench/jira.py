"""Minimal Jira REST client that pages through a project's issues."""
from __future__ import annotations

import logging
import time
from typing import Any, Optional

import requests

from .corpus import Issue, IssueDataset, parse_timestamp

log = logging.getLogger(__name__)

SEARCH_PATH = "/rest/api/2/search"
DEFAULT_SP_FIELD = "customfield_10002"


class JiraError(Exception):
    pass


class TransportError(JiraError):
    def __init__(self, message: str, retries: int):
        super().__init__(f"{message} (after {retries} retries)")
        self.retries = retries


class CredentialError(JiraError):
    pass


def _issue_from_json(raw: dict[str, Any], project_key: str, repository: str, sp_field: str) -> Optional[Issue]:
    f = raw.get("fields", {})
    sp = f.get(sp_field)
    if sp is None:
        return None
    status = (f.get("status") or {}).get("statusCategory", {}).get("key")
    resolved = f.get("resolutiondate")
    return Issue(
        issue_key=raw["key"],
        project_key=project_key,
        repository=repository,
        created=parse_timestamp(f["created"]),
        resolved=parse_timestamp(resolved) if resolved else None,
        title=f.get("summary") or "",
        description=f.get("description") or "",
        issue_type=(f.get("issuetype") or {}).get("name", ""),
        components=tuple(c.get("name", "") for c in f.get("components") or ()),
        story_point=float(sp),
        # changelogs are not fetched; Porru provenance stays unknown
        sp_assignment_count=0,
        fields_changed_after_sp=None,
        is_resolved=resolved is not None or status == "done",
    )


def fetch_jira(
    base_url: str,
    project_key: str,
    page_size: int = 50,
    *,
    repository: Optional[str] = None,
    sp_field: str = DEFAULT_SP_FIELD,
    auth: Optional[tuple[str, str]] = None,
    retries: int = 3,
    backoff: float = 0.5,
    timeout: float = 30.0,
    session: Optional[requests.Session] = None,
) -> IssueDataset:
    """Download every issue of ``project_key`` that carries a story point.

    Pages are requested until ``total`` is reached. A failed page is retried
    ``retries`` times; if it still fails, nothing fetched so far is returned.
    """
    http = session or requests.Session()
    url = base_url.rstrip("/") + SEARCH_PATH
    repository = repository or base_url
    issues: list[Issue] = []
    start = 0
    while True:
        params = {
            "jql": f"project = {project_key} ORDER BY created ASC",
            "startAt": start,
            "maxResults": page_size,
        }
        page = _get_page(http, url, params, auth, retries, backoff, timeout)
        batch = page.get("issues", [])
        for raw in batch:
            issue = _issue_from_json(raw, project_key, repository, sp_field)
            if issue is not None:
                issues.append(issue)
        start += len(batch)
        if not batch or start >= int(page.get("total", 0)):
            break
    log.info("fetched %d issues with story points from %s", len(issues), project_key)
    return IssueDataset(project_key, repository, tuple(issues), porru_ready=False)


def _get_page(http, url, params, auth, retries, backoff, timeout) -> dict:
    last = "no response"
    for attempt in range(retries + 1):
        try:
            resp = http.get(url, params=params, auth=auth, timeout=timeout)
        except requests.RequestException as exc:
            last = f"{type(exc).__name__}: {exc}"
        else:
            if resp.status_code in (401, 403):
                raise CredentialError(f"Jira rejected credentials ({resp.status_code}) for {url}")
            if resp.ok:
                return resp.json()
            last = f"HTTP {resp.status_code} from {url}"
            if resp.status_code < 500 and resp.status_code != 429:
                raise TransportError(last, attempt)
        if attempt < retries:
            time.sleep(backoff * 2**attempt)
    raise TransportError(last, retries)

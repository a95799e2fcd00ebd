"""HTTP gateway in front of the orchestrator.

Queries are accepted with 202 and processed on a worker pool; results
are polled by id. Reviewer endpoints expose the pending ticket queue and
accept expert feedback. Feedback consisting of exactly "APPROVED" closes
the ticket without another refinement pass.

Auth is bearer-token based. MEDORC_TOKENS_FILE names a TSV file of
token<TAB>role lines with roles "submitter" and "reviewer"; a reviewer
token can do everything a submitter token can. When the variable is
unset the gateway runs open, which is meant for local use only.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, Header, HTTPException, Request

from .config import PipelineConfig, load_config
from .errors import TicketStateError
from .orchestrator import Orchestrator, new_query

TOKENS_FILE_ENV = "MEDORC_TOKENS_FILE"
ROLE_SUBMITTER = "submitter"
ROLE_REVIEWER = "reviewer"
EXPERTISE_VALUES = ("patient", "clinician")


def load_tokens(path: str | Path) -> dict[str, str]:
    """Parse a token<TAB>role TSV file into a token-to-role mapping."""
    mapping: dict[str, str] = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        token, sep, role = line.partition("\t")
        token = token.strip()
        role = role.strip()
        if not sep or not token or role not in (ROLE_SUBMITTER, ROLE_REVIEWER):
            raise ValueError(f"invalid tokens file entry on line {lineno}")
        mapping[token] = role
    return mapping


def create_app(config: PipelineConfig | None = None,
               orchestrator: Orchestrator | None = None) -> FastAPI:
    if orchestrator is not None:
        config = orchestrator.config
    elif config is None:
        config = load_config()
    orch = orchestrator or Orchestrator(config)

    tokens_path = os.environ.get(TOKENS_FILE_ENV)
    tokens = load_tokens(tokens_path) if tokens_path else None

    executor = ThreadPoolExecutor(max_workers=config.workers)
    futures: dict[str, object] = {}

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        executor.shutdown(wait=True)

    app = FastAPI(title="medorc gateway", lifespan=lifespan)
    app.state.orchestrator = orch
    app.state.futures = futures

    def authorize(authorization: str | None, reviewer_only: bool = False):
        if tokens is None:
            return
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(401, "missing or malformed bearer token")
        role = tokens.get(authorization[len("Bearer "):].strip())
        if role is None:
            raise HTTPException(401, "unknown token")
        if reviewer_only and role != ROLE_REVIEWER:
            raise HTTPException(403, "reviewer role required")

    async def read_json_object(request: Request) -> dict:
        try:
            doc = await request.json()
        except Exception:
            raise HTTPException(400, "request body must be a JSON object")
        if not isinstance(doc, dict):
            raise HTTPException(400, "request body must be a JSON object")
        return doc

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.post("/v1/queries", status_code=202)
    async def submit_query(request: Request,
                           authorization: str | None = Header(default=None)):
        authorize(authorization)
        doc = await read_json_object(request)
        text = doc.get("text")
        if not isinstance(text, str) or not text.strip():
            raise HTTPException(400, "text must be a non-empty string")
        expertise = doc.get("expertise", "patient")
        if expertise not in EXPERTISE_VALUES:
            raise HTTPException(
                400, f"expertise must be one of {EXPERTISE_VALUES}")
        query = new_query(text, expertise)
        futures[query.id] = executor.submit(orch.process_query, query)
        return {"result_id": query.id, "status": "accepted"}

    @app.get("/v1/results/{result_id}")
    async def get_result(result_id: str,
                         authorization: str | None = Header(default=None)):
        authorize(authorization)
        future = futures.get(result_id)
        if future is not None and not future.done():
            return {"result_id": result_id, "status": "running"}
        if future is not None and future.exception() is not None:
            raise HTTPException(500, "query processing crashed")
        result = orch.get_result(result_id)
        if result is None:
            raise HTTPException(404, f"no result with id {result_id}")
        return result.to_dict()

    @app.get("/v1/review/pending")
    async def pending_reviews(
            authorization: str | None = Header(default=None)):
        authorize(authorization, reviewer_only=True)
        return [
            {"ticket": ticket.to_dict(), "result": result.to_dict()}
            for ticket, result in orch.pending_reviews()
        ]

    @app.post("/v1/review/{ticket_id}/feedback")
    async def post_feedback(ticket_id: str, request: Request,
                            authorization: str | None = Header(default=None)):
        authorize(authorization, reviewer_only=True)
        doc = await read_json_object(request)
        feedback = doc.get("feedback")
        if not isinstance(feedback, str) or not feedback.strip():
            raise HTTPException(400, "feedback must be a non-empty string")
        try:
            result = orch.apply_expert_feedback(ticket_id, feedback)
        except KeyError:
            raise HTTPException(404, f"no ticket with id {ticket_id}")
        except TicketStateError as exc:
            raise HTTPException(409, str(exc))
        ticket = orch.queue.get(ticket_id)
        return {
            "ticket_id": ticket_id,
            "state": ticket.state.value,
            "result": result.to_dict(),
        }

    return app

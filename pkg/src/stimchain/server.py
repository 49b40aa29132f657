"""HTTP binding for the request/response facade.

Runs one scenario deployment in-process and exposes the facade over JSON
so external consoles can drive it. Binary fields (signatures, challenge
nonces) travel hex-encoded. The simulated clock advances only while a
request is being served, which keeps runs deterministic.
"""

from __future__ import annotations

import logging
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .api import ApiError, ApiService
from .scenario import Runner, ScenarioConfig, load_config

logger = logging.getLogger(__name__)

_STATUS_CODES = {
    "unauthenticated": 401,
    "forbidden": 403,
    "not_found": 404,
    "bad_request": 400,
    "timeout": 504,
}


def create_app(config: Optional[ScenarioConfig] = None) -> FastAPI:
    config = config or ScenarioConfig(seed=1)
    runner = Runner(config)
    runner.prepare()
    api = ApiService(runner)
    app = FastAPI(title="stimchain", version="1.0.0")
    app.state.api = api
    app.state.runner = runner

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError):
        return JSONResponse(
            status_code=_STATUS_CODES.get(exc.status, 500),
            content={"error": exc.status, "detail": exc.detail},
        )

    @app.get("/v1/health")
    async def health():
        return {
            "status": "ok",
            "height": runner.observer.height,
            "sim_time_ms": runner.sim.now_ms,
        }

    @app.post("/v1/auth/challenge")
    async def challenge(body: dict):
        return {"nonce": api.challenge(body["caller"]).hex()}

    @app.post("/v1/auth/login")
    async def login(body: dict):
        token = api.login(body["caller"], bytes.fromhex(body["signature"]))
        return {"token": token}

    @app.post("/v1/call")
    async def call(body: dict):
        return api.handle(body)

    @app.post("/v1/advance")
    async def advance(body: dict):
        """Drive the simulated clock forward (consoles poll after this)."""
        ms = int(body.get("ms", 1000))
        runner.sim.run_until(runner.sim.now_ms + ms)
        return {"sim_time_ms": runner.sim.now_ms, "height": runner.observer.height}

    return app


def main():  # pragma: no cover - manual entry point
    import sys

    import uvicorn

    logging.basicConfig(level=logging.INFO)
    config = load_config(sys.argv[1]) if len(sys.argv) > 1 else None
    uvicorn.run(create_app(config), host="127.0.0.1", port=8787)


if __name__ == "__main__":  # pragma: no cover
    main()

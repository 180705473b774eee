"""Thin HTTP client for the service, used by the CLI.

Without a server URL the client mounts the app over an in-process ASGI
transport, so commands work standalone (and deterministically) while
still exercising the same HTTP surface a remote deployment exposes.
"""

from __future__ import annotations

import httpx


class ServiceError(Exception):
    def __init__(self, status_code: int, detail):
        super().__init__(f"HTTP {status_code}: {detail}")
        self.status_code = status_code
        self.detail = detail


class ServiceClient:
    def __init__(self, server: str | None = None, timeout: float | None = None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=timeout)
        else:
            from starlette.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    def _request(self, method: str, path: str, **kwargs) -> dict:
        response = self._client.request(method, path, **kwargs)
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise ServiceError(response.status_code, detail)
        return response.json()

    def health(self) -> dict:
        return self._request("GET", "/health")

    def rf_table(self) -> dict:
        return self._request("GET", "/rf-table")

    def analyze(self, payload: dict) -> dict:
        return self._request("POST", "/analyze", json=payload)

    def train(self, config: dict) -> dict:
        return self._request("POST", "/train", json=config)

    def eval(self, payload: dict) -> dict:
        return self._request("POST", "/eval", json=payload)

    def sweep(self, payload: dict) -> dict:
        return self._request("POST", "/sweep", json=payload)

"""HTTP client for the node API, used by the CLI and test harnesses."""

from __future__ import annotations

import time
from typing import Any, Optional

import httpx

from . import crypto
from .canonical import canonical_bytes, canonical_loads
from .node import build_read_header


class ClientError(Exception):
    pass


class ConnectivityError(ClientError):
    pass


class DeniedError(ClientError):
    def __init__(self, status: int, reason: str):
        super().__init__(f"denied ({status}): {reason}")
        self.status = status
        self.reason = reason


class NodeClient:
    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint.rstrip("/")
        self._http = httpx.Client(base_url=self.endpoint, timeout=timeout)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "NodeClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _request(self, method: str, path: str, **kwargs) -> httpx.Response:
        try:
            return self._http.request(method, path, **kwargs)
        except httpx.HTTPError as exc:
            raise ConnectivityError(f"{method} {path}: {exc}") from exc

    def _json(self, response: httpx.Response) -> Any:
        return canonical_loads(response.content)

    # -- writes ---------------------------------------------------------

    def submit_tx(self, tx: dict) -> dict:
        response = self._request("POST", "/tx", content=canonical_bytes(tx))
        if response.status_code == 307:
            raise DeniedError(307, "follower: submit to the sequencer")
        return self._json(response)

    def put_blob(self, blob: bytes) -> str:
        response = self._request("POST", "/blob", content=blob)
        body = self._json(response)
        if response.status_code != 200:
            raise DeniedError(response.status_code, body.get("error", "rejected"))
        return body["storage_key"]

    # -- open reads -------------------------------------------------------

    def blocks(self, start: int = 0, limit: Optional[int] = None) -> dict:
        params = {"from": str(start)}
        if limit is not None:
            params["limit"] = str(limit)
        return self._json(self._request("GET", "/blocks", params=params))

    def block(self, height: int) -> Optional[dict]:
        response = self._request("GET", f"/blocks/{height}")
        return self._json(response) if response.status_code == 200 else None

    def identity(self, address: str) -> Optional[dict]:
        response = self._request("GET", f"/state/identity/{address}")
        return self._json(response) if response.status_code == 200 else None

    def contract(self, address: str) -> Optional[dict]:
        response = self._request("GET", f"/state/contract/{address}")
        return self._json(response) if response.status_code == 200 else None

    def verify(self) -> dict:
        return self._json(self._request("GET", "/verify"))

    # -- signed reads -------------------------------------------------------

    def report(self, keypair: crypto.KeyPair, report_id: str) -> dict:
        path = f"/report/{report_id}"
        response = self._request("GET", path, headers={"X-Signed-Read": build_read_header(keypair, path)})
        body = self._json(response)
        if response.status_code != 200:
            raise DeniedError(response.status_code, body.get("error", "denied"))
        return body

    def blob(self, keypair: crypto.KeyPair, storage_key: str) -> bytes:
        path = f"/blob/{storage_key}"
        response = self._request("GET", path, headers={"X-Signed-Read": build_read_header(keypair, path)})
        if response.status_code != 200:
            reason = "denied"
            try:
                reason = self._json(response).get("error", reason)
            except Exception:
                pass
            raise DeniedError(response.status_code, reason)
        return response.content

    # -- helpers ----------------------------------------------------------------

    def wait_for_height(self, height: int, timeout_s: float = 10.0) -> dict:
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            head = self.blocks(start=height, limit=1)
            if head["head_height"] >= height:
                return head
            time.sleep(0.02)
        raise ConnectivityError(f"head did not reach height {height} within {timeout_s}s")

    def wait_for_tx(self, tx_digest: str, timeout_s: float = 10.0) -> dict:
        """Block record that includes the digest, scanning forward from genesis."""
        from .transactions import tx_digest as compute_digest

        deadline = time.monotonic() + timeout_s
        scanned = 0
        while time.monotonic() < deadline:
            batch = self.blocks(start=scanned)
            for record in batch["blocks"]:
                for tx in record["txs"]:
                    if compute_digest(tx) == tx_digest:
                        return record
                scanned = record["height"] + 1
            time.sleep(0.02)
        raise ConnectivityError(f"tx {tx_digest} not included within {timeout_s}s")

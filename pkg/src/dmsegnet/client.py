"""Client used by the CLI to reach the service.

Two transports behind one interface: a real HTTP connection when a
server URL is given, or an in-process ASGI bridge to a private app
instance when not. Either way every request goes through the same
FastAPI routes, so the CLI has no second code path to drift out of
sync.
"""

import time
from typing import Optional

import httpx


class ServiceError(RuntimeError):
    """The service answered with an error status."""

    def __init__(self, status_code: int, detail: str):
        super().__init__(f"HTTP {status_code}: {detail}")
        self.status_code = status_code
        self.detail = detail


class ServiceClient:
    def __init__(self, base_url: Optional[str] = None, timeout: float = 600):
        if base_url:
            self._client = httpx.Client(base_url=base_url, timeout=timeout)
        else:
            from fastapi.testclient import TestClient

            from .service import create_app
            self._client = TestClient(create_app())

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, method: str, path: str, json: Optional[dict] = None
                 ) -> dict:
        resp = self._client.request(method, path, json=json)
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except ValueError:
                detail = resp.text
            raise ServiceError(resp.status_code, str(detail))
        return resp.json()

    def health(self) -> dict:
        return self._request("GET", "/health")

    def phantom(self, out_dir: str, count: int = 8, size: int = 32,
                classes: int = 3, seed: int = 0, noise_sigma: float = 0.1
                ) -> dict:
        return self._request("POST", "/phantom", json={
            "out_dir": out_dir, "count": count, "size": size,
            "classes": classes, "seed": seed, "noise_sigma": noise_sigma})

    def train(self, config_path: Optional[str] = None,
              config_text: Optional[str] = None,
              resume_from: Optional[str] = None,
              until_step: Optional[int] = None) -> dict:
        return self._request("POST", "/train", json={
            "config_path": config_path, "config_text": config_text,
            "resume_from": resume_from, "until_step": until_step})

    def job(self, job_id: str) -> dict:
        return self._request("GET", f"/jobs/{job_id}")

    def jobs(self) -> list:
        return self._request("GET", "/jobs")

    def wait_for_job(self, job_id: str, poll_seconds: float = 1.0,
                     on_progress=None) -> dict:
        """Poll until the job leaves queued/running; returns final info."""
        last_step = -1
        while True:
            info = self.job(job_id)
            if on_progress is not None and info["step"] != last_step:
                last_step = info["step"]
                on_progress(info)
            if info["state"] not in ("queued", "running"):
                return info
            time.sleep(poll_seconds)

    def eval(self, ckpt: str, manifest: str, out: Optional[str] = None,
             split: Optional[str] = None) -> dict:
        return self._request("POST", "/eval", json={
            "ckpt": ckpt, "manifest": manifest, "out": out, "split": split})

    def infer(self, ckpt: str, input_path: str, output_path: str) -> dict:
        return self._request("POST", "/infer", json={
            "ckpt": ckpt, "input_path": input_path,
            "output_path": output_path})

    def bench_scan(self, dims, iters: int = 5, channels: int = 8,
                   state_dim: int = 16) -> dict:
        return self._request("POST", "/bench/scan", json={
            "dims": list(dims), "iters": iters, "channels": channels,
            "state_dim": state_dim})

    def selftest(self) -> dict:
        return self._request("POST", "/selftest")

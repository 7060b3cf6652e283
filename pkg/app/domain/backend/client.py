from __future__ import annotations

import asyncio
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Optional, Protocol

import aiohttp

from app.config import BackendConfig

logger = logging.getLogger(__name__)

FIXTURE_VERSION = 1


class BackendError(RuntimeError):
    def __init__(self, message: str, *, payload: Any = None) -> None:
        self.payload = payload
        super().__init__(message)


class BackendTransportError(BackendError):
    """The endpoint could not be reached or kept failing after every retry."""

    def __init__(
        self,
        message: str,
        *,
        attempts: int,
        status: Optional[int] = None,
        payload: Any = None,
    ) -> None:
        self.attempts = attempts
        self.status = status
        super().__init__(message, payload=payload)


class BackendResponseError(BackendError):
    """The endpoint answered, but not with a usable chat-completions body."""


class BackendConfigError(BackendError):
    """Raised before any request when the backend cannot be used as configured."""


class ChatTransport(Protocol):
    async def complete(self, body: dict[str, Any]) -> dict[str, Any]: ...

    async def close(self) -> None: ...


def request_key(body: dict[str, Any]) -> str:
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def message_content(payload: Any) -> str:
    """Text of the first choice of a chat-completions response."""

    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise BackendResponseError("response has no choices[0].message.content", payload=payload) from exc
    if isinstance(content, list):
        parts = [part.get("text", "") for part in content if isinstance(part, dict) and part.get("type") == "text"]
        content = "".join(parts)
    if not isinstance(content, str):
        raise BackendResponseError("message content is not text", payload=payload)
    return content


def _retryable(status: int) -> bool:
    return status == 429 or 500 <= status < 600


class HttpChatTransport:
    """POSTs chat-completions requests, retrying 429, 5xx, timeouts and connection errors."""

    def __init__(self, config: BackendConfig, *, session: Optional[aiohttp.ClientSession] = None) -> None:
        self.cfg = config
        self.url = f"{config.base_url.rstrip('/')}/chat/completions"
        self._session = session
        self._owns_session = session is None

    def _headers(self) -> dict[str, str]:
        headers = {"Accept": "application/json"}
        if self.cfg.api_key:
            headers["Authorization"] = f"Bearer {self.cfg.api_key}"
        return headers

    def _get_session(self) -> aiohttp.ClientSession:
        if self._session is None or self._session.closed:
            timeout = aiohttp.ClientTimeout(total=self.cfg.request_timeout)
            connector = aiohttp.TCPConnector(limit=self.cfg.max_concurrency)
            self._session = aiohttp.ClientSession(timeout=timeout, connector=connector)
            self._owns_session = True
        return self._session

    async def complete(self, body: dict[str, Any]) -> dict[str, Any]:
        session = self._get_session()
        attempts = self.cfg.max_retries + 1
        last_status: Optional[int] = None
        last_payload: Any = None

        for attempt in range(1, attempts + 1):
            try:
                async with session.post(self.url, json=body, headers=self._headers()) as resp:
                    text = await resp.text()
                    if resp.status == 200:
                        try:
                            payload = json.loads(text)
                        except json.JSONDecodeError as exc:
                            logger.warning("backend returned invalid JSON (%s bytes)", len(text))
                            raise BackendResponseError("response body is not JSON", payload=text) from exc
                        if not isinstance(payload, dict):
                            raise BackendResponseError("response body is not a JSON object", payload=payload)
                        return payload

                    last_status, last_payload = resp.status, text
                    if not _retryable(resp.status):
                        raise BackendTransportError(
                            f"backend rejected the request with status {resp.status}",
                            attempts=attempt,
                            status=resp.status,
                            payload=text,
                        )
                    logger.warning(
                        "backend returned status %s (attempt %s of %s)", resp.status, attempt, attempts
                    )
            except asyncio.TimeoutError:
                last_status, last_payload = None, None
                logger.warning("backend request timed out (attempt %s of %s)", attempt, attempts)
            except aiohttp.ClientError as exc:
                last_status, last_payload = None, str(exc)
                logger.warning(
                    "backend client error %s (attempt %s of %s)", exc.__class__.__name__, attempt, attempts
                )

            if attempt < attempts and self.cfg.retry_backoff > 0:
                await asyncio.sleep(self.cfg.retry_backoff * attempt)

        raise BackendTransportError(
            f"backend request failed after {attempts} attempts",
            attempts=attempts,
            status=last_status,
            payload=last_payload,
        )

    async def close(self) -> None:
        if self._session is not None and self._owns_session and not self._session.closed:
            await self._session.close()

    async def __aenter__(self) -> HttpChatTransport:
        return self

    async def __aexit__(self, *exc_info: object) -> None:
        await self.close()


class FixtureReplayTransport:
    """Answers requests from a recorded fixture file instead of the network."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        try:
            data = json.loads(self.path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise BackendConfigError(f"fixture file {self.path} is not valid JSON") from exc
        if not isinstance(data, dict) or data.get("version") != FIXTURE_VERSION:
            raise BackendConfigError(f"fixture file {self.path} has an unsupported format")
        self._exchanges: dict[str, dict[str, Any]] = {}
        for exchange in data.get("exchanges", []):
            self._exchanges[request_key(exchange["request"])] = exchange

    def __len__(self) -> int:
        return len(self._exchanges)

    async def complete(self, body: dict[str, Any]) -> dict[str, Any]:
        exchange = self._exchanges.get(request_key(body))
        if exchange is None:
            raise BackendConfigError("no recorded exchange matches the request", payload=body)
        status = int(exchange.get("status", 200))
        if status != 200:
            raise BackendTransportError(
                f"recorded request failed with status {status}",
                attempts=1,
                status=status,
                payload=exchange.get("response"),
            )
        return exchange["response"]

    async def close(self) -> None:
        return None


class RecordingTransport:
    """Passes requests through to another transport and keeps every exchange."""

    def __init__(self, inner: ChatTransport, path: str | Path) -> None:
        self.inner = inner
        self.path = Path(path)
        self._exchanges: dict[str, dict[str, Any]] = {}

    async def complete(self, body: dict[str, Any]) -> dict[str, Any]:
        try:
            response = await self.inner.complete(body)
        except BackendTransportError as exc:
            self._exchanges[request_key(body)] = {
                "request": body,
                "status": exc.status or 599,
                "response": exc.payload,
            }
            raise
        self._exchanges[request_key(body)] = {"request": body, "status": 200, "response": response}
        return response

    def save(self) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        ordered = [self._exchanges[key] for key in sorted(self._exchanges)]
        self.path.write_text(
            json.dumps({"version": FIXTURE_VERSION, "exchanges": ordered}, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )
        logger.info("recorded %s exchange(s) to %s", len(ordered), self.path)
        return self.path

    async def close(self) -> None:
        self.save()
        await self.inner.close()


def open_transport(config: BackendConfig) -> ChatTransport:
    """Transport for a config: fixture replay, live HTTP, or live HTTP with recording."""

    if config.fixtures:
        return FixtureReplayTransport(config.fixtures)
    transport: ChatTransport = HttpChatTransport(config)
    if config.record_fixtures:
        transport = RecordingTransport(transport, config.record_fixtures)
    return transport


__all__ = [
    "BackendConfigError",
    "BackendError",
    "BackendResponseError",
    "BackendTransportError",
    "ChatTransport",
    "FIXTURE_VERSION",
    "FixtureReplayTransport",
    "HttpChatTransport",
    "RecordingTransport",
    "message_content",
    "open_transport",
    "request_key",
]

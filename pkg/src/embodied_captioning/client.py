"""
Core async HTTP client for remote captioner, embedder and LLM services.
"""

import asyncio
import logging
from typing import Any, Dict, Optional

import aiohttp

from .exceptions import (
    APIError,
    AuthenticationError,
    NotFoundError,
    RemoteServiceError,
    TransportError,
    ValidationError,
)

logger = logging.getLogger(__name__)


class BaseClient:
    """Base async HTTP client with authentication, error mapping and retries."""

    def __init__(
        self,
        api_url: str,
        api_key: Optional[str] = None,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.5,
    ):
        """
        Initialize the base client.

        Args:
            api_url: Base URL of the model service
            api_key: API key for authentication (Bearer token)
            timeout: Total timeout per request in seconds
            retries: Extra attempts for transport failures and 5xx replies
            backoff: Initial backoff in seconds, doubled after every attempt
        """
        self.api_url = api_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._session: Optional[aiohttp.ClientSession] = None

    async def __aenter__(self):
        """Async context manager entry."""
        await self._create_session()
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        """Async context manager exit."""
        await self.close()

    async def _create_session(self):
        """Create an aiohttp session if it doesn't exist."""
        if self._session is None or self._session.closed:
            headers = {}
            if self.api_key:
                headers["Authorization"] = f"Bearer {self.api_key}"

            self._session = aiohttp.ClientSession(
                headers=headers,
                timeout=aiohttp.ClientTimeout(total=self.timeout),
                raise_for_status=False,
            )

    async def close(self):
        """Close the aiohttp session."""
        if self._session and not self._session.closed:
            await self._session.close()
            self._session = None

    def _format_error_message(self, error_data: Any) -> str:
        """
        Format error message from a service response.

        Args:
            error_data: Error payload (string, dict or list)

        Returns:
            Formatted error message string
        """
        if isinstance(error_data, str):
            return error_data
        elif isinstance(error_data, dict):
            if "message" in error_data:
                return str(error_data["message"])
            return str(error_data)
        elif isinstance(error_data, list):
            return "; ".join(str(item) for item in error_data)
        return str(error_data)

    async def _handle_response(self, response: aiohttp.ClientResponse) -> Dict[str, Any]:
        """
        Handle a service response and raise appropriate exceptions.

        Args:
            response: aiohttp response object

        Returns:
            Parsed JSON response

        Raises:
            AuthenticationError: For 401 responses
            ValidationError: For 400 responses
            NotFoundError: For 404 responses
            APIError: For other error responses
        """
        try:
            data = await response.json(content_type=None)
        except Exception:
            data = {"error": await response.text()}
        if not isinstance(data, dict):
            data = {"result": data}

        if response.status >= 400:
            error_message = self._format_error_message(data.get("error", f"HTTP {response.status} error"))

            if response.status == 401:
                raise AuthenticationError(error_message, response.status, data)
            elif response.status == 400:
                raise ValidationError(error_message, response.status, data)
            elif response.status == 404:
                raise NotFoundError(error_message, response.status, data)
            else:
                raise APIError(error_message, response.status, data)

        if data.get("error"):
            raise RemoteServiceError(self._format_error_message(data["error"]), response.status, data)

        return data

    async def _request(
        self,
        method: str,
        endpoint: str,
        json_data: Optional[Dict[str, Any]] = None,
        params: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        """
        Make an HTTP request, retrying transport failures and 5xx replies.

        Args:
            method: HTTP method
            endpoint: Endpoint path
            json_data: JSON request body
            params: Query parameters

        Returns:
            Parsed JSON response

        Raises:
            RemoteServiceError: For client errors, or server errors after retries
            TransportError: When the service stays unreachable after retries
        """
        await self._create_session()
        url = f"{self.api_url}{endpoint}"
        delay = self.backoff

        for attempt in range(self.retries + 1):
            try:
                async with self._session.request(method=method, url=url, params=params, json=json_data) as response:
                    return await self._handle_response(response)
            except APIError as e:
                if attempt == self.retries:
                    raise
                logger.debug("Attempt %d on %s failed with %s, retrying", attempt + 1, endpoint, e)
            except (aiohttp.ClientError, asyncio.TimeoutError) as e:
                if attempt == self.retries:
                    raise TransportError(f"{method} {endpoint} failed after {attempt + 1} attempts: {e!r}")
                logger.debug("Attempt %d on %s raised %r, retrying", attempt + 1, endpoint, e)
            await asyncio.sleep(delay)
            delay *= 2

        raise TransportError(f"{method} {endpoint} failed")  # pragma: no cover

    async def post(
        self,
        endpoint: str,
        json_data: Optional[Dict[str, Any]] = None,
        params: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        """
        Make a POST request.

        Args:
            endpoint: Endpoint path
            json_data: JSON request body
            params: Query parameters

        Returns:
            Parsed JSON response
        """
        return await self._request("POST", endpoint, json_data=json_data, params=params)

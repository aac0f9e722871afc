"""
Remote LLM module: ``POST /completions``.
"""

import logging
import time

from .client import BaseClient
from .exceptions import ValidationError
from .models import LlmReply, LlmRequest

logger = logging.getLogger(__name__)


class LlmModule:
    """Sends completion requests to a remote language model."""

    def __init__(self, client: BaseClient):
        """
        Initialize the LLM module.

        Args:
            client: Base HTTP client instance
        """
        self.client = client

    async def complete(self, request: LlmRequest) -> LlmReply:
        """
        Run one completion.

        Args:
            request: Prompt, model name and sampling settings

        Returns:
            LlmReply with the verbatim reply text, latency and token counts

        Raises:
            ValidationError: If the prompt is empty
            RemoteServiceError: If the service fails after retries

        Example:
            >>> async with RemoteModelClient(api_url="https://llm.example.com",
            ...                              api_key="token") as client:
            ...     reply = await client.llm.complete(LlmRequest(prompt, "llama-3"))
        """
        if not request.prompt:
            raise ValidationError("Prompt must not be empty")
        started = time.perf_counter()
        data = await self.client.post("/completions", json_data=request.to_dict())
        reply = LlmReply.from_dict(data, latency=time.perf_counter() - started)
        logger.debug("Completion from %s in %.3fs", request.model, reply.latency)
        return reply

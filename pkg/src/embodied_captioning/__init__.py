"""
Embodied captioning lab - consistent object captions from an exploring agent.
"""

import sys

if sys.version_info[:2] >= (3, 8):
    from importlib.metadata import PackageNotFoundError, version  # pragma: no cover
else:
    from importlib_metadata import PackageNotFoundError, version  # pragma: no cover

from typing import Optional

from .client import BaseClient
from .captioner import CaptionerModule
from .embedder import EmbedderModule
from .llm import LlmModule
from .config import LlmConfig, RunConfig, load_config
from .exceptions import (
    EmbodiedCaptioningError,
    RemoteServiceError,
    AuthenticationError,
    ValidationError,
    NotFoundError,
    APIError,
    TransportError,
    ConfigError,
    ContractError,
    PhaseError,
)
from .models import (
    ObjectGT,
    Scene,
    AgentState,
    Detection,
    CaptionRecord,
    ObjectInstance,
    EpisodeLog,
    CaptionTally,
    PseudoCaption,
    LlmRequest,
    LlmReply,
    MetricsReport,
    RunManifest,
)

try:
    dist_name = "embodied_captioning"
    __version__ = version(dist_name)
except PackageNotFoundError:  # pragma: no cover
    __version__ = "unknown"
finally:
    del version, PackageNotFoundError


class RemoteModelClient(BaseClient):
    """
    Client for remote captioner, embedder and LLM services sharing one session.

    Example:
        >>> import asyncio
        >>> from embodied_captioning import RemoteModelClient, LlmRequest
        >>>
        >>> async def main():
        ...     async with RemoteModelClient(
        ...         api_url="https://models.example.com",
        ...         api_key="your-token"
        ...     ) as client:
        ...         reply = await client.llm.complete(LlmRequest("Summarize ...", "llama-3"))
        ...         print(reply.raw_text)
        >>>
        >>> asyncio.run(main())
    """

    def __init__(
        self,
        api_url: str,
        api_key: Optional[str] = None,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.5,
    ):
        """
        Initialize the client.

        Args:
            api_url: Base URL of the model service
            api_key: API key for authentication (Bearer token)
            timeout: Total timeout per request in seconds
            retries: Extra attempts for transport failures and 5xx replies
            backoff: Initial retry backoff in seconds
        """
        super().__init__(api_url, api_key, timeout=timeout, retries=retries, backoff=backoff)

        self.captioner = CaptionerModule(self)
        self.embedder = EmbedderModule(self)
        self.llm = LlmModule(self)

    @classmethod
    def from_config(cls, cfg: LlmConfig) -> "RemoteModelClient":
        """
        Build a client from LLM settings; the key comes from the environment.

        Raises:
            ConfigError: If no endpoint is configured
        """
        endpoint = cfg.resolved_endpoint()
        if not endpoint:
            raise ConfigError(f"No LLM endpoint configured (set llm.endpoint or ${cfg.endpoint_env})")
        return cls(endpoint, cfg.api_key, timeout=cfg.timeout, retries=cfg.retries, backoff=cfg.backoff)


__all__ = [
    "RemoteModelClient",
    "RunConfig",
    "LlmConfig",
    "load_config",
    # Exceptions
    "EmbodiedCaptioningError",
    "RemoteServiceError",
    "AuthenticationError",
    "ValidationError",
    "NotFoundError",
    "APIError",
    "TransportError",
    "ConfigError",
    "ContractError",
    "PhaseError",
    # Models
    "ObjectGT",
    "Scene",
    "AgentState",
    "Detection",
    "CaptionRecord",
    "ObjectInstance",
    "EpisodeLog",
    "CaptionTally",
    "PseudoCaption",
    "LlmRequest",
    "LlmReply",
    "MetricsReport",
    "RunManifest",
    # Version
    "__version__",
]

"""
Tests for the base HTTP client and the remote model modules.
"""

import numpy as np
import pytest
from aiohttp import ClientConnectionError

from embodied_captioning import RemoteModelClient
from embodied_captioning.config import LlmConfig
from embodied_captioning.exceptions import (
    APIError,
    AuthenticationError,
    ConfigError,
    NotFoundError,
    RemoteServiceError,
    TransportError,
    ValidationError,
)
from embodied_captioning.models import AgentState, Detection, LlmRequest


def _detection():
    return Detection(
        object_view_id="3:0",
        logits=np.zeros(6),
        bbox=(1, 2, 10, 12),
        mask=np.arange(4),
        confidence=0.9,
        visible_fraction=0.4,
        descriptor=np.ones(3),
        object_id_gt=7,
    )


@pytest.mark.asyncio
async def test_client_initialization(api_url, api_key):
    """Test client initialization."""
    client = RemoteModelClient(api_url=api_url + "/", api_key=api_key)
    assert client.api_url == api_url
    assert client.api_key == api_key
    assert client.captioner is not None
    assert client.embedder is not None
    assert client.llm is not None


@pytest.mark.asyncio
async def test_client_context_manager(api_url, api_key, mock_aiohttp):
    """Test client as async context manager."""
    mock_aiohttp.post(f"{api_url}/completions", payload={"text": "<Caption>a red couch</Caption>"})

    async with RemoteModelClient(api_url=api_url, api_key=api_key) as client:
        assert client._session is not None
        reply = await client.llm.complete(LlmRequest("Summarize", "llama-3"))
        assert reply.raw_text == "<Caption>a red couch</Caption>"

    assert client._session is None or client._session.closed


@pytest.mark.asyncio
async def test_authentication_error(api_url, api_key, mock_aiohttp):
    """Test authentication error handling."""
    mock_aiohttp.post(f"{api_url}/embed", status=401, payload={"error": "Unauthorized"})

    async with RemoteModelClient(api_url=api_url, api_key=api_key) as client:
        with pytest.raises(AuthenticationError) as exc_info:
            await client.embedder.embed(["a red couch"])
        assert exc_info.value.status_code == 401


@pytest.mark.asyncio
async def test_validation_error(api_url, api_key, mock_aiohttp):
    """Test validation error handling."""
    mock_aiohttp.post(f"{api_url}/caption", status=400, payload={"error": {"message": "Invalid crop"}})

    async with RemoteModelClient(api_url=api_url, api_key=api_key) as client:
        with pytest.raises(ValidationError) as exc_info:
            await client.captioner.caption(_detection(), AgentState((1.0, 1.0, 1.3), 0.0))
        assert exc_info.value.status_code == 400
        assert exc_info.value.message == "Invalid crop"


@pytest.mark.asyncio
async def test_not_found_error(api_url, api_key, mock_aiohttp):
    """Test not found error handling."""
    mock_aiohttp.post(f"{api_url}/completions", status=404, payload={"error": "No such model"})

    async with RemoteModelClient(api_url=api_url, api_key=api_key) as client:
        with pytest.raises(NotFoundError):
            await client.llm.complete(LlmRequest("Summarize", "missing"))


@pytest.mark.asyncio
async def test_server_error_is_retried(api_url, api_key, mock_aiohttp):
    """A 5xx reply is retried before the call succeeds."""
    mock_aiohttp.post(f"{api_url}/completions", status=503, payload={"error": "busy"})
    mock_aiohttp.post(f"{api_url}/completions", payload={"choices": [{"text": "ok"}], "usage": {"prompt_tokens": 3}})

    async with RemoteModelClient(api_url=api_url, api_key=api_key, retries=1, backoff=0.0) as client:
        reply = await client.llm.complete(LlmRequest("Summarize", "llama-3"))
    assert reply.raw_text == "ok"
    assert reply.prompt_tokens == 3


@pytest.mark.asyncio
async def test_server_error_after_retries(api_url, api_key, mock_aiohttp):
    """Test API error once retries are exhausted."""
    for _ in range(2):
        mock_aiohttp.post(f"{api_url}/completions", status=500, payload={"error": "boom"})

    async with RemoteModelClient(api_url=api_url, api_key=api_key, retries=1, backoff=0.0) as client:
        with pytest.raises(APIError) as exc_info:
            await client.llm.complete(LlmRequest("Summarize", "llama-3"))
    assert exc_info.value.status_code == 500
    assert exc_info.value.exit_code == 4


@pytest.mark.asyncio
async def test_transport_error(api_url, api_key, mock_aiohttp):
    """Connection failures surface as TransportError after retries."""
    for _ in range(2):
        mock_aiohttp.post(f"{api_url}/embed", exception=ClientConnectionError("refused"))

    async with RemoteModelClient(api_url=api_url, api_key=api_key, retries=1, backoff=0.0) as client:
        with pytest.raises(TransportError):
            await client.embedder.embed(["a red couch"])


@pytest.mark.asyncio
async def test_error_field_in_success_reply(api_url, api_key, mock_aiohttp):
    """A 200 reply carrying an error is still an error."""
    mock_aiohttp.post(f"{api_url}/embed", payload={"error": ["quota", "exceeded"]})

    async with RemoteModelClient(api_url=api_url, api_key=api_key) as client:
        with pytest.raises(RemoteServiceError) as exc_info:
            await client.embedder.embed(["x"])
    assert exc_info.value.message == "quota; exceeded"


@pytest.mark.asyncio
async def test_caption_is_normalized(api_url, api_key, mock_aiohttp):
    """Test remote caption normalization."""
    mock_aiohttp.post(f"{api_url}/caption", payload={"caption": "  A Red   Couch "})

    async with RemoteModelClient(api_url=api_url, api_key=api_key) as client:
        record = await client.captioner.caption(_detection(), AgentState((1.0, 1.0, 1.3), 0.0))
    assert record.text == "a red couch"
    assert record.object_id_gt == 7
    assert record.visible_fraction == 0.4


@pytest.mark.asyncio
async def test_empty_caption_is_rejected(api_url, api_key, mock_aiohttp):
    """Test that an empty caption raises ValidationError."""
    mock_aiohttp.post(f"{api_url}/caption", payload={"caption": "   "})

    async with RemoteModelClient(api_url=api_url, api_key=api_key) as client:
        with pytest.raises(ValidationError):
            await client.captioner.caption(_detection(), AgentState((1.0, 1.0, 1.3), 0.0))


@pytest.mark.asyncio
async def test_embeddings_are_normalized(api_url, api_key, mock_aiohttp):
    """Test embedding normalization and zero-vector passthrough."""
    mock_aiohttp.post(f"{api_url}/embed", payload={"embeddings": [[3.0, 4.0], [0.0, 0.0]]})

    async with RemoteModelClient(api_url=api_url, api_key=api_key) as client:
        vectors = await client.embedder.embed(["a", "b"])
    assert np.allclose(vectors[0], [0.6, 0.8])
    assert np.allclose(vectors[1], [0.0, 0.0])


@pytest.mark.asyncio
async def test_embedding_count_mismatch(api_url, api_key, mock_aiohttp):
    """Test that a short embedding batch raises ValidationError."""
    mock_aiohttp.post(f"{api_url}/embed", payload={"embeddings": [[1.0, 0.0]]})

    async with RemoteModelClient(api_url=api_url, api_key=api_key) as client:
        with pytest.raises(ValidationError):
            await client.embedder.embed(["a", "b"])


@pytest.mark.asyncio
async def test_empty_prompt_is_rejected(api_url, api_key):
    """Test that an empty prompt never reaches the service."""
    async with RemoteModelClient(api_url=api_url, api_key=api_key) as client:
        with pytest.raises(ValidationError):
            await client.llm.complete(LlmRequest("", "llama-3"))


def test_from_config_needs_endpoint(monkeypatch):
    """Test ConfigError without an endpoint."""
    cfg = LlmConfig()
    monkeypatch.delenv(cfg.endpoint_env, raising=False)
    with pytest.raises(ConfigError):
        RemoteModelClient.from_config(cfg)


def test_from_config_reads_environment(monkeypatch, api_url, api_key):
    """Test endpoint and key resolution from the environment."""
    cfg = LlmConfig(retries=5)
    monkeypatch.setenv(cfg.endpoint_env, api_url)
    monkeypatch.setenv(cfg.api_key_env, api_key)
    client = RemoteModelClient.from_config(cfg)
    assert client.api_url == api_url
    assert client.api_key == api_key
    assert client.retries == 5

"""
Remote embedder module: ``POST /embed``.
"""

from typing import List

import numpy as np

from .client import BaseClient
from .exceptions import ValidationError


class EmbedderModule:
    """Requests sentence embeddings from a remote embedding model."""

    def __init__(self, client: BaseClient):
        """
        Initialize the Embedder module.

        Args:
            client: Base HTTP client instance
        """
        self.client = client

    async def embed(self, texts: List[str]) -> List[np.ndarray]:
        """
        Embed a batch of texts.

        Args:
            texts: Sentences to embed

        Returns:
            One L2-normalized vector per text (all-zero vectors are kept as is)

        Raises:
            ValidationError: If the reply does not hold one vector per text
        """
        data = await self.client.post("/embed", json_data={"texts": list(texts)})
        vectors = data.get("embeddings") or []
        if len(vectors) != len(texts):
            raise ValidationError(
                f"Embedder returned {len(vectors)} vectors for {len(texts)} texts", details=data
            )
        out = []
        for vector in vectors:
            v = np.asarray(vector, dtype=float)
            norm = np.linalg.norm(v)
            out.append(v / norm if norm > 0 else v)
        return out

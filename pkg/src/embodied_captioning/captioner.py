"""
Remote captioner module: ``POST /caption``.
"""

from typing import Optional

from .client import BaseClient
from .exceptions import ValidationError
from .models import AgentState, CaptionRecord, Detection


class CaptionerModule:
    """Requests object captions from a remote captioning model."""

    def __init__(self, client: BaseClient):
        """
        Initialize the Captioner module.

        Args:
            client: Base HTTP client instance
        """
        self.client = client

    async def caption(self, detection: Detection, view_pose: AgentState, crop: Optional[str] = None) -> CaptionRecord:
        """
        Caption one detected object view.

        Args:
            detection: Detection whose object crop is captioned
            view_pose: Camera pose of the view
            crop: Optional base64 encoded crop; the descriptor is sent otherwise

        Returns:
            CaptionRecord with the normalized caption text

        Raises:
            ValidationError: If the service returns an empty caption

        Example:
            >>> async with RemoteModelClient(api_url="https://models.example.com",
            ...                              api_key="token") as client:
            ...     record = await client.captioner.caption(detection, pose)
        """
        payload = {
            "objectViewId": detection.object_view_id,
            "bbox": [int(v) for v in detection.bbox],
            "descriptor": None if detection.descriptor is None else [float(v) for v in detection.descriptor],
        }
        if crop is not None:
            payload["crop"] = crop
        data = await self.client.post("/caption", json_data=payload)
        text = " ".join(str(data.get("caption", "")).lower().split())
        if not text:
            raise ValidationError("Captioner returned an empty caption", details=data)
        return CaptionRecord(
            text=text,
            object_id_gt=detection.object_id_gt,
            view_pose=view_pose,
            visible_fraction=detection.visible_fraction,
        )

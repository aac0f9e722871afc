"""
Usage examples for the embodied captioning lab.

This file demonstrates two workflows:
1. Offline run - explore a scene, pool captions and distill pseudo-captions
2. Remote consensus - LD-CPS through a hosted language model
"""

import asyncio

from embodied_captioning import RemoteModelClient, RunConfig
from embodied_captioning.consensus import pseudo_caption_all
from embodied_captioning.exceptions import RemoteServiceError
from embodied_captioning.exploration import run_episode
from embodied_captioning.mapping import cluster_objects
from embodied_captioning.scene import generate_scene


async def example_offline_consensus():
    """Example: one frontier episode and offline LD-CPS pseudo-captions."""
    cfg = RunConfig()
    scene = generate_scene(seed=0, spec=cfg.scene)
    log, svm = run_episode(scene, "frontier", n_steps=200, cfg=cfg, seed=0)
    print(f"Episode: {len(log.records)} steps, {len(log.captions)} captions")

    instances = cluster_objects(svm)
    texts = {i: c.text for i, c in svm.captions.items()}
    result = await pseudo_caption_all(instances, texts, "ldcps-offline", cfg.consensus)
    for instance_id, pseudo in sorted(result.pseudo.items()):
        print(f"Instance {instance_id}: {pseudo.text}")


async def example_remote_consensus():
    """Example: LD-CPS through a remote LLM, falling back to the medoid on failures."""
    cfg = RunConfig()
    scene = generate_scene(seed=1, spec=cfg.scene)
    _, svm = run_episode(scene, "cla", n_steps=200, cfg=cfg, seed=1)
    instances = cluster_objects(svm)
    texts = {i: c.text for i, c in svm.captions.items()}

    async with RemoteModelClient(
        api_url="https://models.example.com",
        api_key="your-api-key"
    ) as client:
        try:
            result = await pseudo_caption_all(
                instances, texts, "ldcps", cfg.consensus, llm=client.llm, llm_cfg=cfg.llm
            )
            print(f"{len(result.pseudo)} pseudo-captions, {len(result.fallbacks)} medoid fallbacks")
        except RemoteServiceError as e:
            print(f"Consensus error: {e}")


# Run examples
if __name__ == "__main__":
    print("=== Offline Consensus Example ===")
    asyncio.run(example_offline_consensus())

    print("\n=== Remote Consensus Example ===")
    # asyncio.run(example_remote_consensus())

"""
Run orchestration: explore, build-map, consensus, finetune, evaluate and
consistency phases exchanging versioned files, plus annotation export,
comparison reports and the triplet-weight ablation.
"""

import asyncio
import csv
import logging
from collections import Counter
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import RemoteModelClient
from .config import RunConfig
from .consensus import pseudo_caption_all
from .exceptions import (
    ConfigError,
    EmptyDatasetError,
    PhaseError,
    ReportError,
    SchemaVersionError,
)
from .exploration import replay_episode, run_episode
from .mapping import DatasetView, SemanticVoxelMap, cluster_objects, reassociate_views
from .metrics import METRIC_NOTES, evaluate_run
from .models import (
    ArtifactEntry,
    CaptionRecord,
    EpisodeLog,
    MetricsReport,
    ObjectInstance,
    PseudoCaption,
    RunManifest,
    Scene,
)
from .perception import HashingEmbedder
from .scene import generate_scene
from .serialization import (
    SCHEMAS,
    read_json,
    read_jsonl,
    sha256_file,
    write_json,
    write_jsonl,
    write_jsonl_async,
)
from .training import ToyCaptioner, ToyDataset, Vocabulary, consistency_score, finetune

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PHASES = ("explore", "build-map", "consensus", "finetune", "evaluate", "consistency")
ABLATION_LAMBDAS = (1.0, 0.5, 0.1)

DEVIATIONS = [
    "METEOR-lite: exact and Porter-stem matches only, no synonyms or paraphrases",
    "CLA policy is a greedy disagreement-window surrogate, not a trained policy",
    "SPICE absent",
    "CIDEr reported on the standard x10 scale",
    "captions come from a mock captioner corrupting generator ground truth",
    "toy linear captioner instead of a pretrained vision-language model",
]

FILES = {
    "scene": "scene.json",
    "episode": "episode.jsonl",
    "annotations": "annotations.jsonl",
    "map": "map.json",
    "dataset": "dataset.jsonl",
    "pseudo": "pseudo.jsonl",
    "model_init": "model_init.json",
    "model": "model.json",
    "report": "report.json",
    "consistency": "consistency.json",
    "consistency_csv": "consistency.csv",
}


# Artifacts


def load_scene(path: PathLike) -> Scene:
    return Scene.from_dict(read_json(path, SCHEMAS["scene"]))


def load_episode(path: PathLike) -> EpisodeLog:
    header, records = read_jsonl(path, SCHEMAS["episode"])
    return EpisodeLog.from_parts(header, records)


def load_map(path: PathLike) -> Tuple[SemanticVoxelMap, List[ObjectInstance]]:
    data = read_json(path, SCHEMAS["map"])
    svm = SemanticVoxelMap.from_dict(data["map"])
    return svm, [ObjectInstance.from_dict(i) for i in data.get("instances", [])]


def load_views(path: PathLike) -> List[DatasetView]:
    _, records = read_jsonl(path, SCHEMAS["dataset"])
    return [DatasetView.from_dict(r) for r in records]


def load_pseudo(path: PathLike) -> Tuple[dict, Dict[int, PseudoCaption], Dict[int, int]]:
    """Header, pseudo-captions by instance id and the ground-truth object of each instance."""
    header, records = read_jsonl(path, SCHEMAS["pseudo"])
    pseudo = {r["instanceId"]: PseudoCaption.from_dict(r) for r in records}
    gt = {r["instanceId"]: r.get("objectIdGt", -1) for r in records}
    return header, pseudo, gt


def load_annotations(path: PathLike) -> Dict[int, dict]:
    _, records = read_jsonl(path, SCHEMAS["annotations"])
    return {r["objectIdGt"]: r for r in records}


def load_model(path: PathLike) -> ToyCaptioner:
    return ToyCaptioner.from_dict(read_json(path, SCHEMAS["toycap"])["model"])


def export_annotations(scene: Scene, path: PathLike) -> Path:
    """
    Write one annotation per ground-truth object (id, caption, category).

    An object-free scene yields a header-only file and a warning.
    """
    if not scene.objects:
        logger.warning("Scene %s has no objects, annotation file is empty", scene.seed)
    records = [
        {"objectIdGt": obj.id, "gtCaption": obj.gt_caption, "category": obj.category}
        for obj in sorted(scene.objects, key=lambda o: o.id)
    ]
    return write_jsonl(path, SCHEMAS["annotations"], {"sceneSeed": scene.seed, "count": len(records)}, records)


def instance_ground_truth(instance: ObjectInstance, captions: Mapping[int, CaptionRecord]) -> int:
    """Majority ground-truth object among the instance's captions, smallest id on ties; -1 without captions."""
    votes = Counter(captions[c].object_id_gt for c in instance.captions if captions[c].object_id_gt >= 0)
    if not votes:
        return -1
    return min(votes, key=lambda k: (-votes[k], k))


def match_instances(
    instances: Sequence[ObjectInstance], captions: Mapping[int, CaptionRecord]
) -> Dict[int, int]:
    """Ground-truth object -> instance with the most captions voting for it."""
    best: Dict[int, ObjectInstance] = {}
    for inst in instances:
        gt = instance_ground_truth(inst, captions)
        if gt < 0:
            continue
        current = best.get(gt)
        if current is None or (len(inst.captions), -inst.instance_id) > (len(current.captions), -current.instance_id):
            best[gt] = inst
    return {gt: inst.instance_id for gt, inst in sorted(best.items())}


# Phases


def explore_phase(cfg: RunConfig, seed: int, out_dir: PathLike) -> Dict[str, Path]:
    """Generate (or load) the scene, run one episode and export annotations."""
    out = Path(out_dir)
    if cfg.scene.path:
        scene = load_scene(cfg.scene.path)
    else:
        scene = generate_scene(seed, cfg.scene)
    log, _ = run_episode(scene, cfg.exploration.policy, cfg.exploration.n_steps, cfg, seed)
    log.scene_seed = scene.seed
    return {
        "scene": write_json(out / FILES["scene"], SCHEMAS["scene"], scene.to_dict()),
        "episode": write_jsonl(
            out / FILES["episode"], SCHEMAS["episode"], log.header(), (r.to_dict() for r in log.records)
        ),
        "annotations": export_annotations(scene, out / FILES["annotations"]),
    }


def build_map_phase(cfg: RunConfig, scene_path: PathLike, episode_path: PathLike, out_dir: PathLike) -> Dict[str, Path]:
    """Rebuild the voxel map from the episode, cluster instances and re-associate views."""
    out = Path(out_dir)
    scene = load_scene(scene_path)
    log = load_episode(episode_path)
    svm = replay_episode(scene, log, cfg)
    instances = cluster_objects(svm)
    views = reassociate_views(svm, instances, cfg.camera, cfg.detector)
    logger.info("Map: %d voxels, %d instances, %d dataset views", svm.V, len(instances), len(views))
    return {
        "map": write_json(
            out / FILES["map"],
            SCHEMAS["map"],
            {"map": svm.to_dict(), "instances": [i.to_dict() for i in instances]},
        ),
        "dataset": write_jsonl(
            out / FILES["dataset"], SCHEMAS["dataset"], {"count": len(views)}, (v.to_dict() for v in views)
        ),
    }


def _proxies(
    instances: Sequence[ObjectInstance], captions: Mapping[int, CaptionRecord], scene: Optional[Scene]
) -> Dict[int, str]:
    """ECO image proxy text: category plus attribute tokens of the instance's ground-truth object."""
    if scene is None:
        return {}
    out = {}
    for inst in instances:
        obj = scene.objects_by_id.get(instance_ground_truth(inst, captions))
        if obj is not None:
            out[inst.instance_id] = " ".join([obj.category, *obj.attribute_tokens])
    return out


async def consensus_phase(
    cfg: RunConfig,
    map_path: PathLike,
    out_path: PathLike,
    method: Optional[str] = None,
    scene_path: Optional[PathLike] = None,
    client: Optional[RemoteModelClient] = None,
) -> Path:
    """
    Pseudo-caption every instance of a map and write ``pseudo.jsonl``.

    Methods ``ldcps`` and, when an endpoint is configured, ``ic3`` talk to
    the remote LLM; a client is opened from ``cfg.llm`` unless one is given.
    """
    method = method or cfg.consensus.method
    svm, instances = load_map(map_path)
    scene = load_scene(scene_path) if scene_path else None
    embedder = HashingEmbedder(cfg.exploration.embedding_dim)
    texts = {i: c.text for i, c in svm.captions.items()}
    needs_llm = method == "ldcps" or (method == "ic3" and cfg.llm.resolved_endpoint())

    async def run(llm_client: Optional[RemoteModelClient]):
        return await pseudo_caption_all(
            instances,
            texts,
            method,
            cfg.consensus,
            llm=llm_client.llm if llm_client else None,
            llm_cfg=cfg.llm,
            embedder=embedder,
            proxies=_proxies(instances, svm.captions, scene),
        )

    if needs_llm and client is None:
        async with RemoteModelClient.from_config(cfg.llm) as opened:
            result = await run(opened)
    else:
        result = await run(client if needs_llm else None)

    by_id = {i.instance_id: i for i in instances}
    records = [
        dict(p.to_dict(), objectIdGt=instance_ground_truth(by_id[k], svm.captions))
        for k, p in result.pseudo.items()
    ]
    header = {
        "method": method,
        "skipped": {str(k): v for k, v in result.skipped.items()},
        "fallbacks": result.fallbacks,
    }
    return await write_jsonl_async(out_path, SCHEMAS["pseudo"], header, records)


def _toy_dataset(
    views: Sequence[DatasetView], pseudo: Mapping[int, PseudoCaption], cfg: RunConfig
) -> Tuple[ToyDataset, Vocabulary]:
    texts = {k: p.text for k, p in pseudo.items()}
    vocab = Vocabulary.from_texts(list(texts.values()))
    return ToyDataset.from_views(views, texts, vocab, cfg.loss.max_length), vocab


def finetune_phase(
    cfg: RunConfig, dataset_path: PathLike, pseudo_path: PathLike, out_dir: PathLike, seed: int
) -> Dict[str, Path]:
    """
    Train the toy captioner on views labelled with their instance's pseudo-caption.

    Raises:
        EmptyDatasetError: If no view belongs to a pseudo-captioned instance
    """
    out = Path(out_dir)
    _, pseudo, _ = load_pseudo(pseudo_path)
    dataset, vocab = _toy_dataset(load_views(dataset_path), pseudo, cfg)
    if len(dataset) == 0:
        raise EmptyDatasetError("No dataset view belongs to a pseudo-captioned instance")
    initial = ToyCaptioner.initialize(dataset.descriptors.shape[1], vocab, cfg.loss, np.random.default_rng(seed))
    trained, history = finetune(initial, dataset, cfg.loss, seed)
    logger.info(
        "Fine-tuned on %d views: train loss %.4f -> %.4f over %d epochs",
        len(dataset), history[0]["train_loss"], history[-1]["train_loss"], len(history) - 1,
    )
    return {
        "model_init": write_json(out / FILES["model_init"], SCHEMAS["toycap"], {"model": initial.to_dict()}),
        "model": write_json(
            out / FILES["model"],
            SCHEMAS["toycap"],
            {"model": trained.to_dict(), "history": history, "lambdaTr": cfg.loss.lambda_tr, "seed": seed},
        ),
    }


def decoded_predictions(model: ToyCaptioner, views: Sequence[DatasetView]) -> Dict[int, str]:
    """Most frequent decoded caption per instance, lexicographically smallest on ties."""
    grouped: Dict[int, List[np.ndarray]] = {}
    for view in views:
        grouped.setdefault(view.instance_id, []).append(np.asarray(view.descriptor, dtype=float))
    out = {}
    for instance_id, descriptors in sorted(grouped.items()):
        counts = Counter(model.decode(np.stack(descriptors)))
        out[instance_id] = min(counts, key=lambda t: (-counts[t], t))
    return out


def _keyed_by_gt(values: Mapping[int, str], gt_of: Mapping[int, int]) -> Dict[str, str]:
    """Re-key instance predictions by ground-truth object, one instance per object."""
    out: Dict[str, str] = {}
    for instance_id in sorted(values):
        gt = gt_of.get(instance_id, -1)
        if gt >= 0 and str(gt) not in out:
            out[str(gt)] = values[instance_id]
    return out


def evaluate_phase(
    cfg: RunConfig,
    pseudo_path: PathLike,
    annotations_path: PathLike,
    out_path: PathLike,
    map_path: Optional[PathLike] = None,
    model_path: Optional[PathLike] = None,
    dataset_path: Optional[PathLike] = None,
) -> Path:
    """
    Score pseudo-captions (and the fine-tuned captioner when a model is
    given) against the annotations and write ``report.json``.

    With a map, every ground-truth object is scored through the instance with
    the most captions voting for it; otherwise the first instance per object.
    """
    header, pseudo, gt_of = load_pseudo(pseudo_path)
    annotations = {str(k): v["gtCaption"] for k, v in load_annotations(annotations_path).items()}
    if map_path is not None:
        svm, instances = load_map(map_path)
        keep = set(match_instances(instances, svm.captions).values())
        gt_of = {k: v for k, v in gt_of.items() if k in keep}
    embedder = HashingEmbedder(cfg.exploration.embedding_dim)
    labels = {"policy": cfg.exploration.policy, "method": header.get("method", ""), "captioner": "mock"}

    reports: Dict[str, MetricsReport] = {
        "pseudo": evaluate_run(_keyed_by_gt({k: p.text for k, p in pseudo.items()}, gt_of), annotations, embedder, labels)
    }
    if model_path is not None and dataset_path is not None:
        model = load_model(model_path)
        predictions = decoded_predictions(model, load_views(dataset_path))
        reports["captioner"] = evaluate_run(
            _keyed_by_gt(predictions, gt_of), annotations, embedder, dict(labels, captioner="toy-finetuned")
        )
    payload = {
        "notes": METRIC_NOTES,
        "lambdaTr": cfg.loss.lambda_tr,
        "reports": {k: v.to_dict() for k, v in reports.items()},
    }
    return write_json(out_path, SCHEMAS["report"], payload)


def consistency_phase(
    cfg: RunConfig,
    model_path: PathLike,
    dataset_path: PathLike,
    out_dir: PathLike,
    init_model_path: Optional[PathLike] = None,
) -> Dict[str, Path]:
    """Decoded-caption consistency per instance before and after fine-tuning, as JSON and CSV."""
    out = Path(out_dir)
    views = load_views(dataset_path)
    embedder = HashingEmbedder(cfg.exploration.embedding_dim)
    stages = {"post": consistency_score(load_model(model_path), views, embedder)}
    if init_model_path is not None:
        stages["pre"] = consistency_score(load_model(init_model_path), views, embedder)

    csv_path = out / FILES["consistency_csv"]
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["stage", "instance_id", "consistency"])
        for stage, report in sorted(stages.items()):
            for instance_id, value in sorted(report.per_instance.items()):
                writer.writerow([stage, instance_id, repr(value)])
        writer.writerow([])
        writer.writerow(["stage", "min", "q1", "median", "q3", "max", "n"])
        for stage, report in sorted(stages.items()):
            summary = report.to_dict()["summary"]
            if summary:
                writer.writerow([stage] + [repr(summary[k]) for k in ("min", "q1", "median", "q3", "max")] + [summary["n"]])
    return {
        "consistency": write_json(
            out / FILES["consistency"], SCHEMAS["consistency"], {k: v.to_dict() for k, v in stages.items()}
        ),
        "consistency_csv": csv_path,
    }


# Orchestration


def _now() -> datetime:
    return datetime.now(timezone.utc)


ARTIFACT_SCHEMAS = dict(SCHEMAS, model_init=SCHEMAS["toycap"], model=SCHEMAS["toycap"])


def _register(manifest: RunManifest, phase: str, paths: Mapping[str, Path], root: Path) -> None:
    for key, path in paths.items():
        schema = ARTIFACT_SCHEMAS.get(key)
        manifest.artifacts.append(
            ArtifactEntry(phase=phase, path=str(Path(path).relative_to(root)), sha256=sha256_file(path), schema=schema)
        )


def write_manifest(manifest: RunManifest, out_dir: PathLike) -> Path:
    return write_json(Path(out_dir) / "manifest.json", SCHEMAS["manifest"], manifest.to_dict())


def load_manifest(path: PathLike) -> RunManifest:
    return RunManifest.from_dict(read_json(path, SCHEMAS["manifest"]))


def run_pipeline(cfg: RunConfig, seed: Optional[int] = None, client: Optional[RemoteModelClient] = None) -> RunManifest:
    """
    Run every phase in order for one seed, writing into ``cfg.output_dir``.

    Phases whose inputs are empty are skipped with a reason. A failing phase
    stops the run; the partial manifest records the failure.

    Raises:
        PhaseError: If a phase fails; ``manifest`` holds the partial manifest
    """
    seed = cfg.seeds[0] if seed is None else seed
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        config_hash=cfg.config_hash(),
        artifact_versions=dict(SCHEMAS),
        deviations=list(DEVIATIONS),
        labels={
            "policy": cfg.exploration.policy,
            "method": cfg.consensus.method,
            "seed": seed,
            "lambdaTr": cfg.loss.lambda_tr,
        },
        started_at=_now(),
    )
    files = {k: root / v for k, v in FILES.items()}

    def skip_rest(start: str, reason: str) -> None:
        for phase in PHASES[PHASES.index(start):]:
            manifest.skipped.setdefault(phase, reason)
        logger.info("Skipping phases from %s: %s", start, reason)

    def phase(name: str, fn, *args) -> Mapping[str, Path]:
        logger.info("Phase %s", name)
        try:
            outputs = fn(*args)
        except ConfigError:
            raise
        except Exception as e:
            manifest.failure = {
                "phase": name,
                "error": type(e).__name__,
                "message": str(e),
                "exitCode": getattr(e, "exit_code", 3),
            }
            manifest.finished_at = _now()
            write_manifest(manifest, root)
            raise PhaseError(f"Phase '{name}' failed: {e}", phase=name, manifest=manifest) from e
        if isinstance(outputs, Path):
            outputs = {outputs.stem: outputs}
        _register(manifest, name, outputs, root)
        return outputs

    phase("explore", explore_phase, cfg, seed, root)
    log = load_episode(files["episode"])
    if not log.captions:
        skip_rest("build-map", "episode produced no captions")
    else:
        phase("build-map", build_map_phase, cfg, files["scene"], files["episode"], root)
        _, instances = load_map(files["map"])
        if not instances:
            skip_rest("consensus", "map has no instances")
        else:
            phase(
                "consensus",
                lambda: {"pseudo": asyncio.run(
                    consensus_phase(cfg, files["map"], files["pseudo"], scene_path=files["scene"], client=client)
                )},
            )
            _, pseudo, _ = load_pseudo(files["pseudo"])
            views = load_views(files["dataset"])
            trainable = [v for v in views if v.instance_id in pseudo]
            if not trainable:
                manifest.skipped["finetune"] = "no dataset view of a pseudo-captioned instance"
                manifest.skipped["consistency"] = manifest.skipped["finetune"]
                phase("evaluate", evaluate_phase, cfg, files["pseudo"], files["annotations"], files["report"], files["map"])
            else:
                phase("finetune", finetune_phase, cfg, files["dataset"], files["pseudo"], root, seed)
                phase(
                    "evaluate", evaluate_phase, cfg, files["pseudo"], files["annotations"], files["report"],
                    files["map"], files["model"], files["dataset"],
                )
                phase("consistency", consistency_phase, cfg, files["model"], files["dataset"], root, files["model_init"])

    manifest.finished_at = _now()
    write_manifest(manifest, root)
    logger.info("Run finished: %d artifacts, %d phases skipped", len(manifest.artifacts), len(manifest.skipped))
    return manifest


def verify_manifest(manifest: RunManifest, root: PathLike) -> List[str]:
    """Artifacts whose file is missing or whose content hash changed."""
    bad = []
    for entry in manifest.artifacts:
        path = Path(root) / entry.path
        if not path.exists() or sha256_file(path) != entry.sha256:
            bad.append(entry.path)
    return bad


# Reports


def _markdown(columns: Sequence[str], rows: List[dict], metrics: Sequence[str], group_by: Sequence[str]) -> str:
    """Markdown table with the best value of every metric bolded within each group."""
    best: Dict[Tuple, Dict[str, float]] = {}
    for row in rows:
        key = tuple(row[g] for g in group_by)
        for m in metrics:
            if row.get(m) is not None:
                best.setdefault(key, {})[m] = max(best.get(key, {}).get(m, float("-inf")), row[m])
    lines = ["| " + " | ".join(columns) + " |", "|" + "|".join("---" for _ in columns) + "|"]
    for row in rows:
        key = tuple(row[g] for g in group_by)
        cells = []
        for c in columns:
            value = row.get(c)
            if c in metrics and value is not None:
                text = f"{value:.2f}"
                cells.append(f"**{text}**" if value == best[key][c] else text)
            else:
                cells.append("" if value is None else str(value))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _write_csv(path: Path, columns: Sequence[str], rows: List[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if row.get(c) is None else repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
    return path


METRIC_COLUMNS = ("B4", "M", "R_L", "CI", "CS")


def report(manifest_paths: Sequence[PathLike], out_dir: PathLike) -> Dict[str, Path]:
    """
    Comparison tables over runs: pseudo-captioning quality per policy and
    method, and fine-tuned captioner quality with consistency medians.
    Written as CSV and markdown; values are copied from each run's report.

    Raises:
        ReportError: If no manifest is given or their schema versions differ
    """
    if not manifest_paths:
        raise ReportError("No manifests to report on")
    loaded = []
    for path in manifest_paths:
        path = Path(path)
        try:
            loaded.append((path.parent, load_manifest(path)))
        except (SchemaVersionError, OSError, ValueError) as e:
            raise ReportError(f"Unreadable manifest {path}: {e}")
    versions = {tuple(sorted(m.artifact_versions.items())) for _, m in loaded}
    if len(versions) > 1:
        raise ReportError("Manifests were written with different artifact schema versions")

    pseudo_rows, captioner_rows = [], []
    for root, manifest in loaded:
        labels = manifest.labels
        base = {"policy": labels.get("policy"), "method": labels.get("method"), "seed": labels.get("seed")}
        entries = {Path(a.path).name: root / a.path for a in manifest.artifacts}
        if FILES["report"] not in entries:
            logger.warning("Run %s has no evaluation report, skipped", root)
            continue
        data = read_json(entries[FILES["report"]], SCHEMAS["report"])
        pseudo_rows.append(dict(base, **data["reports"]["pseudo"]["means"]))
        if "captioner" in data["reports"]:
            row = dict(base, lambda_tr=data.get("lambdaTr"), **data["reports"]["captioner"]["means"])
            if FILES["consistency"] in entries:
                post = read_json(entries[FILES["consistency"]], SCHEMAS["consistency"])["post"]["summary"]
                row["consistency"] = post["median"] if post else None
            captioner_rows.append(row)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = [m.started_at for _, m in loaded if m.started_at]
    header = f"Runs: {len(loaded)}"
    if started:
        header += f", started {min(started).isoformat()} to {max(started).isoformat()}"
    notes = "\n".join(f"- {k}: {v}" for k, v in METRIC_NOTES.items())

    pseudo_cols = ["policy", "method", "seed", *METRIC_COLUMNS]
    cap_cols = ["policy", "method", "seed", "lambda_tr", *METRIC_COLUMNS, "consistency"]
    markdown = [f"# Pseudo-captioning\n\n{header}\n", _markdown(pseudo_cols, pseudo_rows, METRIC_COLUMNS, ["policy"])]
    if captioner_rows:
        markdown += [
            "\n# Fine-tuned captioner\n",
            _markdown(cap_cols, captioner_rows, [*METRIC_COLUMNS, "consistency"], ["policy", "method"]),
        ]
    markdown.append(f"\n## Metric definitions\n\n{notes}\n")
    (out / "report.md").write_text("\n".join(markdown), encoding="utf-8")
    paths = {
        "markdown": out / "report.md",
        "pseudo_csv": _write_csv(out / "pseudo_table.csv", pseudo_cols, pseudo_rows),
    }
    if captioner_rows:
        paths["captioner_csv"] = _write_csv(out / "captioner_table.csv", cap_cols, captioner_rows)
    return paths


def ablate_lambda(
    cfg: RunConfig,
    dataset_path: PathLike,
    pseudo_path: PathLike,
    out_dir: PathLike,
    seed: int = 0,
    lambdas: Sequence[float] = ABLATION_LAMBDAS,
    reference: bool = True,
) -> Dict[str, Path]:
    """
    Fine-tune once per triplet weight (plus the ``lambda_tr = 0`` reference)
    from the same initialization and tabulate losses and consistency.
    """
    _, pseudo, _ = load_pseudo(pseudo_path)
    views = load_views(dataset_path)
    dataset, vocab = _toy_dataset(views, pseudo, cfg)
    if len(dataset) == 0:
        raise EmptyDatasetError("No dataset view belongs to a pseudo-captioned instance")
    initial = ToyCaptioner.initialize(dataset.descriptors.shape[1], vocab, cfg.loss, np.random.default_rng(seed))
    embedder = HashingEmbedder(cfg.exploration.embedding_dim)
    pre = consistency_score(initial, views, embedder).median

    rows = []
    settings = list(lambdas) + ([0.0] if reference and 0.0 not in lambdas else [])
    for lam in settings:
        loss_cfg = replace(cfg.loss, lambda_tr=float(lam))
        model, history = finetune(initial, dataset, loss_cfg, seed)
        post = consistency_score(model, views, embedder).median
        rows.append(
            {
                "lambda_tr": float(lam),
                "initial_train_loss": history[0]["train_loss"],
                "final_train_loss": history[-1]["train_loss"],
                "best_val_loss": min(h["val_loss"] for h in history[1:]) if len(history) > 1 else None,
                "epochs": len(history) - 1,
                "converged": bool(history[-1]["train_loss"] < history[0]["train_loss"]),
                "consistency_pre": pre,
                "consistency_post": post,
            }
        )
        logger.info("Ablation lambda=%.2f: consistency median %s", lam, post)

    out = Path(out_dir)
    columns = list(rows[0])
    table = _markdown(columns, rows, ["consistency_post"], [])
    (out / "ablation.md").parent.mkdir(parents=True, exist_ok=True)
    (out / "ablation.md").write_text("# Triplet weight ablation\n\n" + table, encoding="utf-8")
    return {"markdown": out / "ablation.md", "csv": _write_csv(out / "ablation.csv", columns, rows)}

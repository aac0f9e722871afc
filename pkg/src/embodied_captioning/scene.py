"""
Synthetic scenes and ray-cast observations.

World coordinates are meters with ``z`` up. A camera looks horizontally along
the agent yaw; pixel ``(row, col)`` casts the ray
``f * forward + (col + 0.5 - W/2) * right + (H/2 - row - 0.5) * up`` with
``f = (W/2) / tan(fov/2)``.
"""

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import CameraConfig, SceneSpec
from .exceptions import GenerationError, PoseError
from .models import CATEGORIES, Action, AgentState, ObjectGT, Observation, Scene, VisibleFragment

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

COLORS = ("red", "blue", "green", "white", "black", "brown", "gray", "yellow")
MATERIALS = ("wooden", "leather", "metal", "fabric", "ceramic", "glass")
CONTEXTS = {
    "window": "near the window",
    "wall": "by the wall",
    "corner": "in the corner",
    "door": "next to the door",
    "rug": "on the rug",
}

# (x range, y range, z range) in cells, inclusive
CATEGORY_SIZES: Dict[str, Tuple[Tuple[int, int], Tuple[int, int], Tuple[int, int]]] = {
    "couch": ((5, 7), (3, 3), (2, 2)),
    "potted plant": ((2, 2), (2, 2), (3, 4)),
    "bed": ((6, 7), (5, 6), (2, 2)),
    "toilet": ((2, 2), (3, 3), (2, 2)),
    "tv": ((3, 4), (1, 2), (3, 4)),
    "table": ((3, 5), (3, 4), (3, 3)),
}


def compose_caption(category: str, color: str, material: str, context: str) -> str:
    """Annotation caption of an object, e.g. ``"a red leather couch near the window"``."""
    article = "an" if color[0] in "aeiou" else "a"
    return f"{article} {color} {material} {category} {CONTEXTS[context]}"


def lexicon() -> List[str]:
    """Every word the generator can put into an annotation caption."""
    words = {"a", "an"}
    words.update(COLORS)
    words.update(MATERIALS)
    for category in CATEGORIES:
        words.update(category.split())
    for phrase in CONTEXTS.values():
        words.update(phrase.split())
    return sorted(words)


def _room_walls(spec: SceneSpec, occupancy: np.ndarray) -> Tuple[List[Tuple[int, int, int, int]], np.ndarray]:
    """Carve floor, outer and interior walls with doorways; return room interiors and a door keep-out mask."""
    nx, ny, nz = spec.bounds
    rx, ry = spec.rooms
    occupancy[:, :, 0] = True
    occupancy[0, :, :] = occupancy[-1, :, :] = True
    occupancy[:, 0, :] = occupancy[:, -1, :] = True

    xs = [round(i * (nx - 1) / rx) for i in range(rx + 1)]
    ys = [round(j * (ny - 1) / ry) for j in range(ry + 1)]
    keep_out = np.zeros((nx, ny), dtype=bool)
    door_top = min(nz, 9)
    half = spec.door_width // 2

    for x in xs[1:-1]:
        occupancy[x, :, :] = True
    for y in ys[1:-1]:
        occupancy[:, y, :] = True

    for i in range(rx):
        for j in range(ry):
            # doorway to the room on +x and +y
            if i + 1 < rx:
                x, yc = xs[i + 1], (ys[j] + ys[j + 1]) // 2
                occupancy[x, yc - half:yc - half + spec.door_width, 1:door_top] = False
                keep_out[max(0, x - 3):x + 4, max(0, yc - half - 1):yc - half + spec.door_width + 1] = True
            if j + 1 < ry:
                y, xc = ys[j + 1], (xs[i] + xs[i + 1]) // 2
                occupancy[xc - half:xc - half + spec.door_width, y, 1:door_top] = False
                keep_out[max(0, xc - half - 1):xc - half + spec.door_width + 1, max(0, y - 3):y + 4] = True

    rooms = [(xs[i] + 1, xs[i + 1] - 1, ys[j] + 1, ys[j + 1] - 1) for i in range(rx) for j in range(ry)]
    return rooms, keep_out


def free_footprints(blocked: np.ndarray, sx: int, sy: int, gap: int) -> np.ndarray:
    """Corners ``(px, py)`` where an ``sx`` x ``sy`` footprint and its clearance ring touch no blocked column."""
    wx, wy = sx + 2 * gap, sy + 2 * gap
    if wx > blocked.shape[0] or wy > blocked.shape[1]:
        return np.empty((0, 2), dtype=np.int64)
    windows = np.lib.stride_tricks.sliding_window_view(blocked, (wx, wy)).any(axis=(2, 3))
    return np.argwhere(~windows) + gap


def _place(
    blocked: np.ndarray,
    rooms: List[Tuple[int, int, int, int]],
    shapes: List[Tuple[int, int]],
    gap: int,
    rng: np.random.Generator,
    max_attempts: int,
) -> Optional[Tuple[int, int, int, int]]:
    """Random placement of the first shape; when it keeps failing, a random free footprint of any shape."""
    sx, sy = shapes[0]
    for _ in range(max_attempts):
        x0, x1, y0, y1 = rooms[int(rng.integers(len(rooms)))]
        if x1 - x0 + 1 < sx + 2 * gap or y1 - y0 + 1 < sy + 2 * gap:
            continue
        px = int(rng.integers(x0 + gap, x1 - gap - sx + 2))
        py = int(rng.integers(y0 + gap, y1 - gap - sy + 2))
        if not blocked[px - gap:px + sx + gap, py - gap:py + sy + gap].any():
            return px, py, sx, sy
    for sx, sy in shapes:
        corners = free_footprints(blocked, sx, sy, gap)
        if len(corners):
            px, py = corners[int(rng.integers(len(corners)))]
            return int(px), int(py), sx, sy
    return None


def generate_scene(seed: int, spec: Optional[SceneSpec] = None) -> Scene:
    """
    Generate a deterministic room-grid scene with box-shaped objects.

    Args:
        seed: Seed of the generator
        spec: Scene parameters; defaults are used when omitted

    Returns:
        Scene whose object voxel sets are disjoint and separated by at least
        ``spec.clearance`` free cells

    Raises:
        GenerationError: If the spec is infeasible or no free footprint is
            left for an object
    """
    spec = spec or SceneSpec()
    nx, ny, nz = spec.bounds
    min_volume = sum(min(math.prod(lo for lo, _ in CATEGORY_SIZES[c]) for c in CATEGORIES) for _ in range(spec.n_objects))
    free_volume = max(0, nx - 2) * max(0, ny - 2) * max(0, nz - 1)
    if spec.n_objects < 1:
        raise GenerationError("Scene needs at least one object")
    if min_volume > free_volume:
        raise GenerationError(
            f"{spec.n_objects} objects need at least {min_volume} cells, only {free_volume} free",
            details={"bounds": list(spec.bounds)},
        )
    if min(spec.bounds) < 8:
        raise GenerationError(f"Bounds {spec.bounds} are below 8 cells per axis")

    rng = np.random.default_rng(seed)
    occupancy = np.zeros(spec.bounds, dtype=bool)
    rooms, keep_out = _room_walls(spec, occupancy)
    blocked = occupancy[:, :, 1:].any(axis=2) | keep_out
    objects: List[ObjectGT] = []
    gap = spec.clearance

    for obj_id in range(spec.n_objects):
        category = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
        (xl, xh), (yl, yh), (zl, zh) = CATEGORY_SIZES[category]
        sx, sy, sz = int(rng.integers(xl, xh + 1)), int(rng.integers(yl, yh + 1)), int(rng.integers(zl, zh + 1))
        if rng.random() < 0.5:
            sx, sy = sy, sx
        sz = min(sz, nz - 2)
        shapes = list(dict.fromkeys([(sx, sy), (sy, sx), (xl, yl), (yl, xl)]))
        placed = _place(blocked, rooms, shapes, gap, rng, spec.max_attempts)
        if placed is None:
            raise GenerationError(
                f"No free footprint left for object {obj_id} ({category})",
                details={"placed": obj_id},
            )
        px, py, sx, sy = placed
        occupancy[px:px + sx, py:py + sy, 1:1 + sz] = True
        blocked[px:px + sx, py:py + sy] = True
        voxels = [(x, y, z) for x in range(px, px + sx) for y in range(py, py + sy) for z in range(1, 1 + sz)]

        color = COLORS[int(rng.integers(len(COLORS)))]
        material = MATERIALS[int(rng.integers(len(MATERIALS)))]
        context = list(CONTEXTS)[int(rng.integers(len(CONTEXTS)))]
        multiplier = 1.0
        if spec.heterogeneous_noise:
            lo, hi = spec.noise_multiplier_range
            multiplier = float(rng.uniform(lo, hi))
        objects.append(
            ObjectGT(
                id=obj_id,
                category=category,
                attribute_tokens=[color, material, context],
                gt_caption=compose_caption(category, color, material, context),
                voxels=voxels,
                noise_multiplier=multiplier,
            )
        )

    logger.debug("Generated scene seed=%d with %d objects", seed, len(objects))
    return Scene(voxel_occupancy=occupancy, objects=objects, bounds=tuple(spec.bounds), seed=seed, cell_size=spec.cell_size)


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into ``[0, 2*pi)``."""
    yaw = math.fmod(yaw, TWO_PI)
    if yaw < 0:
        yaw += TWO_PI
    return 0.0 if yaw >= TWO_PI else yaw


def is_free(scene: Scene, position) -> bool:
    """True if the column below ``position`` down to the floor is free of geometry."""
    c = scene.cell_size
    i, j, k = (int(math.floor(p / c)) for p in position)
    nx, ny, nz = scene.bounds
    if not (0 <= i < nx and 0 <= j < ny and 1 <= k < nz):
        return False
    return not scene.voxel_occupancy[i, j, 1:k + 1].any()


def sample_free_pose(scene: Scene, camera: CameraConfig, rng: np.random.Generator) -> AgentState:
    """Random voxel-centred pose in free space with a random yaw."""
    c = scene.cell_size
    k = int(math.floor(camera.mount_height / c))
    column_free = ~scene.voxel_occupancy[:, :, 1:k + 1].any(axis=2)
    column_free[0, :] = column_free[-1, :] = column_free[:, 0] = column_free[:, -1] = False
    candidates = np.argwhere(column_free)
    if len(candidates) == 0:
        raise PoseError("Scene has no free column for the agent")
    i, j = candidates[int(rng.integers(len(candidates)))]
    yaw = float(rng.integers(12)) * (TWO_PI / 12)
    return AgentState(position=((i + 0.5) * c, (j + 0.5) * c, camera.mount_height), yaw=yaw, step_index=0)


def ray_directions(yaw: float, camera: CameraConfig) -> np.ndarray:
    """Unit ray directions of all pixels, shape ``(H * W, 3)`` in row-major pixel order."""
    w, h = camera.width, camera.height
    f = (w / 2.0) / math.tan(camera.fov / 2.0)
    forward = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    up = np.array([0.0, 0.0, 1.0])
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    u = (cols.ravel() + 0.5 - w / 2.0)[:, None]
    v = (h / 2.0 - (rows.ravel() + 0.5))[:, None]
    d = f * forward[None, :] + u * right[None, :] + v * up[None, :]
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def cast_rays(scene: Scene, origin: np.ndarray, directions: np.ndarray, max_range: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Traverse the voxel grid along each ray (Amanatides-Woo).

    Returns:
        Tuple of (distance to the first occupied voxel or ``inf``, hit voxel
        indices with ``-1`` rows for misses)
    """
    c = scene.cell_size
    bounds = np.asarray(scene.bounds)
    n = len(directions)
    origin = np.asarray(origin, dtype=float)
    idx = np.tile(np.floor(origin / c).astype(np.int64), (n, 1))
    step = np.sign(directions).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta = np.where(directions != 0, c / np.abs(directions), np.inf)
        boundary = (idx + (step > 0)) * c
        t_max = np.where(directions != 0, (boundary - origin) / directions, np.inf)

    dist = np.full(n, np.inf)
    hit = np.full((n, 3), -1, dtype=np.int64)
    active = np.arange(n)
    occupancy = scene.voxel_occupancy

    while active.size:
        tm = t_max[active]
        axis = np.argmin(tm, axis=1)
        t = tm[np.arange(active.size), axis]
        idx[active, axis] += step[active, axis]
        t_max[active, axis] += t_delta[active, axis]

        cur = idx[active]
        inside = np.all((cur >= 0) & (cur < bounds), axis=1) & (t <= max_range)
        occupied = np.zeros(active.size, dtype=bool)
        occupied[inside] = occupancy[cur[inside, 0], cur[inside, 1], cur[inside, 2]]

        hits = active[occupied]
        dist[hits] = t[occupied]
        hit[hits] = cur[occupied]
        active = active[inside & ~occupied]

    return dist, hit


def observe(scene: Scene, agent: AgentState, camera: Optional[CameraConfig] = None) -> Observation:
    """
    Render depth and object fragments from the agent's camera.

    Args:
        scene: Scene to observe
        agent: Camera pose
        camera: Intrinsics and range

    Returns:
        Observation with per-pixel ray distances (``inf`` on misses) and one
        fragment per object with at least one hit pixel

    Raises:
        PoseError: If the agent stands in occupied space
    """
    camera = camera or CameraConfig()
    if not is_free(scene, agent.position):
        raise PoseError(f"Agent at {agent.position} is inside occupied space")

    directions = ray_directions(agent.yaw, camera)
    dist, hit = cast_rays(scene, np.asarray(agent.position), directions, camera.max_range)

    hit_mask = np.isfinite(dist)
    owner = np.full(dist.shape, -1, dtype=np.int64)
    owner[hit_mask] = scene.owner[hit[hit_mask, 0], hit[hit_mask, 1], hit[hit_mask, 2]]

    fragments = []
    surface_counts = scene.surface_counts
    for obj_id in np.unique(owner[owner >= 0]):
        pixels = np.flatnonzero(owner == obj_id)
        seen = np.unique(hit[pixels], axis=0)
        fraction = min(1.0, len(seen) / max(1, surface_counts.get(int(obj_id), 1)))
        fragments.append(VisibleFragment(object_id=int(obj_id), pixels=pixels, visible_fraction=float(fraction)))

    return Observation(
        depth=dist.reshape(camera.height, camera.width),
        visible_fragments=fragments,
        camera_pose=agent,
        fov=camera.fov,
        width=camera.width,
        height=camera.height,
    )


def backproject(
    observation: Observation, pixels: np.ndarray, cell_size: float, camera: Optional[CameraConfig] = None
) -> np.ndarray:
    """
    Voxels hit by the given pixels, recovered from depth alone.

    The hit point ``origin + depth * direction`` lies on the face through
    which the ray entered its voxel; the face axis is the one whose coordinate
    sits on a grid plane, and the voxel lies on the far side of that plane.

    Returns:
        Integer array of shape ``(n, 3)``, one row per pixel with finite depth
    """
    camera = camera or CameraConfig(
        width=observation.width, height=observation.height, fov=observation.fov
    )
    pose = observation.camera_pose
    pixels = np.asarray(pixels, dtype=np.int64)
    depth = observation.depth.ravel()[pixels]
    finite = np.isfinite(depth)
    pixels, depth = pixels[finite], depth[finite]
    directions = ray_directions(pose.yaw, camera)[pixels]
    points = np.asarray(pose.position)[None, :] + depth[:, None] * directions
    scaled = points / cell_size

    off_plane = np.abs(scaled - np.round(scaled))
    off_plane[directions == 0] = np.inf
    axis = np.argmin(off_plane, axis=1)
    voxels = np.floor(scaled).astype(np.int64)
    rows = np.arange(len(pixels))
    plane = np.round(scaled[rows, axis]).astype(np.int64)
    voxels[rows, axis] = np.where(directions[rows, axis] > 0, plane, plane - 1)
    return voxels


def step_agent(
    scene: Scene, agent: AgentState, action: Action, substep: Optional[float] = None
) -> AgentState:
    """
    Apply one action; forward motion stops before entering occupied space.

    Args:
        scene: Scene the agent moves in
        agent: Current state
        action: ``forward`` (meters) or ``rotate`` (radians)
        substep: Collision check resolution in meters (quarter cell by default)

    Returns:
        New state with ``step_index`` incremented
    """
    if action.kind == "rotate":
        return AgentState(agent.position, normalize_yaw(agent.yaw + action.amount), agent.step_index + 1)
    if action.kind != "forward":
        raise ValueError(f"Unknown action kind '{action.kind}'")

    substep = substep or scene.cell_size / 4.0
    direction = np.array([math.cos(agent.yaw), math.sin(agent.yaw), 0.0])
    position = np.asarray(agent.position, dtype=float)
    travelled = 0.0
    distance = max(0.0, action.amount)
    while travelled < distance:
        advance = min(substep, distance - travelled)
        candidate = position + advance * direction
        if not is_free(scene, candidate):
            break
        position = candidate
        travelled += advance
    return AgentState(tuple(float(p) for p in position), agent.yaw, agent.step_index + 1)

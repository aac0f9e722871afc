"""
Exploration policies, grid path planning and episode execution.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
from skimage import measure

from .config import RunConfig
from .exceptions import ExplorationComplete, NoGoalError, NoPathError
from .mapping import (
    FREE,
    OCCUPIED,
    UNKNOWN,
    OccupancyKnowledge,
    SemanticVoxelMap,
    cluster_objects,
    disagreement_map,
    integrate,
    object_disagreement,
)
from .models import Action, AgentState, Cell, EpisodeLog, EpisodeRecord, GoalEvent, PolicyState, Scene
from .perception import HashingEmbedder, caption, detect, filter_detections
from .scene import normalize_yaw, observe, sample_free_pose, step_agent

logger = logging.getLogger(__name__)

_NEIGHBOURS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass
class ExplorationGrid:
    """K x K planning grid: ``-1`` unknown, ``0`` free, ``1`` occupied; the agent cell is free."""

    cells: np.ndarray
    agent_cell: Cell

    def __post_init__(self):
        self.cells = np.array(self.cells, dtype=np.int8)
        self.cells[self.agent_cell] = FREE

    @property
    def size(self) -> int:
        return self.cells.shape[0]

    @classmethod
    def from_knowledge(cls, knowledge: OccupancyKnowledge, agent: AgentState) -> "ExplorationGrid":
        return cls(knowledge.grid(), knowledge.world_to_cell(agent.position))

    def reachable(self) -> np.ndarray:
        """Boolean mask of free cells 4-connected to the agent through free cells."""
        components = measure.label(self.cells == FREE, connectivity=1)
        return components == components[self.agent_cell]


def plan_path(grid: ExplorationGrid, start: Cell, goal: Cell, unknown_penalty: float = 2.0) -> List[Cell]:
    """
    Cheapest 4-connected path (Dijkstra).

    Entering a free cell costs 1, an unknown cell ``unknown_penalty``;
    occupied cells are impassable.

    Args:
        grid: Planning grid
        start: Start cell (row, col)
        goal: Goal cell (row, col)
        unknown_penalty: Cost of entering an unknown cell

    Returns:
        Cells from start to goal, both included

    Raises:
        NoPathError: If the goal cannot be reached
    """
    cells = grid.cells
    n_rows, n_cols = cells.shape
    start, goal = tuple(start), tuple(goal)
    if not (0 <= goal[0] < n_rows and 0 <= goal[1] < n_cols) or cells[goal] == OCCUPIED:
        raise NoPathError(f"Goal {goal} is blocked")
    step_cost = np.where(cells == UNKNOWN, unknown_penalty, 1.0)

    dist = np.full(cells.shape, np.inf)
    dist[start] = 0.0
    came_from = {}
    open_set = [(0.0, start)]
    while open_set:
        d, current = heapq.heappop(open_set)
        if current == goal:
            path = [current]
            while current in came_from:
                current = came_from[current]
                path.append(current)
            return path[::-1]
        if d > dist[current]:
            continue
        r, c = current
        for dr, dc in _NEIGHBOURS_4:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < n_rows and 0 <= nc < n_cols) or cells[nr, nc] == OCCUPIED:
                continue
            nd = d + step_cost[nr, nc]
            if nd < dist[nr, nc]:
                dist[nr, nc] = nd
                came_from[(nr, nc)] = current
                heapq.heappush(open_set, (nd, (nr, nc)))
    raise NoPathError(f"No path from {start} to {goal}")


def path_cost(grid: ExplorationGrid, path: List[Cell], unknown_penalty: float = 2.0) -> float:
    return float(sum(unknown_penalty if grid.cells[c] == UNKNOWN else 1.0 for c in path[1:]))


def _exclusion_mask(shape: Tuple[int, int], exclude: Optional[Iterable[Cell]]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for cell in exclude or ():
        mask[cell] = True
    return mask


def random_goal_policy(grid: ExplorationGrid, rng: np.random.Generator, exclude: Optional[Iterable[Cell]] = None) -> Cell:
    """
    Uniformly random free cell reachable from the agent (the agent cell excluded).

    Raises:
        NoGoalError: If no such cell exists
    """
    candidates = grid.reachable() & ~_exclusion_mask(grid.cells.shape, exclude)
    candidates[grid.agent_cell] = False
    cells = np.argwhere(candidates)
    if len(cells) == 0:
        raise NoGoalError("No reachable free cell")
    r, c = cells[int(rng.integers(len(cells)))]
    return int(r), int(c)


def _neighbour_counts(mask: np.ndarray, diagonal: bool) -> np.ndarray:
    padded = np.pad(mask.astype(np.int64), 1)
    h, w = mask.shape
    total = np.zeros((h, w), dtype=np.int64)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if (dr, dc) == (0, 0) or (not diagonal and dr != 0 and dc != 0):
                continue
            total += padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
    return total


def frontier_cells(grid: ExplorationGrid) -> np.ndarray:
    """Free cells with at least one unknown 4-neighbour."""
    unknown = grid.cells == UNKNOWN
    return (grid.cells == FREE) & (_neighbour_counts(unknown, diagonal=False) > 0)


def frontier_policy(grid: ExplorationGrid, exclude: Optional[Iterable[Cell]] = None) -> Cell:
    """
    Frontier cell with the most unknown cells in its 8-neighbourhood;
    ties go to the lowest (row, col).

    Raises:
        ExplorationComplete: If no frontier is left
    """
    frontier = frontier_cells(grid) & ~_exclusion_mask(grid.cells.shape, exclude)
    if not frontier.any():
        raise ExplorationComplete("No frontier left")
    score = np.where(frontier, _neighbour_counts(grid.cells == UNKNOWN, diagonal=True), -1)
    r, c = np.unravel_index(int(np.argmax(score)), score.shape)
    return int(r), int(c)


def window_sums(channel: np.ndarray, radius: int) -> np.ndarray:
    """Sum of ``channel`` over the ``(2r+1)^2`` window around every cell, clipped at the border."""
    h, w = channel.shape
    integral = np.zeros((h + 1, w + 1))
    integral[1:, 1:] = channel.cumsum(axis=0).cumsum(axis=1)
    rows = np.arange(h)
    cols = np.arange(w)
    r0, r1 = np.clip(rows - radius, 0, h), np.clip(rows + radius + 1, 0, h)
    c0, c1 = np.clip(cols - radius, 0, w), np.clip(cols + radius + 1, 0, w)
    return (
        integral[r1[:, None], c1[None, :]]
        - integral[r0[:, None], c1[None, :]]
        - integral[r1[:, None], c0[None, :]]
        + integral[r0[:, None], c0[None, :]]
    )


def cla_greedy_policy(
    state: PolicyState,
    grid: ExplorationGrid,
    radius: int = 3,
    exclude: Optional[Iterable[Cell]] = None,
    standoff: int = 0,
) -> Cell:
    """
    Reachable cell with the largest disagreement mass in its window.

    Falls back to :func:`frontier_policy` when no candidate sees any
    disagreement.

    Args:
        state: Policy state holding the disagreement channel
        grid: Planning grid
        radius: Half-width of the scoring window
        exclude: Cells that may not be chosen
        standoff: Candidates lie farther than this Chebyshev distance from
            every disagreement cell

    Raises:
        ExplorationComplete: Propagated from the frontier fallback
    """
    channel = np.asarray(state.disagreement_channel, dtype=float)
    candidates = grid.reachable() & ~_exclusion_mask(grid.cells.shape, exclude)
    candidates[grid.agent_cell] = False
    if standoff > 0:
        candidates &= window_sums((channel > 0).astype(float), standoff) < 0.5
    if candidates.any():
        score = np.where(candidates, window_sums(channel, radius), -1.0)
        best = int(np.argmax(score))
        if score.flat[best] > 0:
            r, c = np.unravel_index(best, score.shape)
            return int(r), int(c)
    return frontier_policy(grid, exclude)


def disagreement_focus(state: PolicyState, goal: Cell, radius: int) -> Optional[Cell]:
    """Highest-disagreement cell in the window around ``goal``."""
    channel = state.disagreement_channel
    r0, c0 = max(0, goal[0] - radius), max(0, goal[1] - radius)
    window = channel[r0:goal[0] + radius + 1, c0:goal[1] + radius + 1]
    if window.size == 0 or window.max() <= 0:
        return None
    r, c = np.unravel_index(int(np.argmax(window)), window.shape)
    return r0 + int(r), c0 + int(c)


def _wrap_angle(angle: float) -> float:
    return (angle + math.pi) % (2 * math.pi) - math.pi


@dataclass
class _Navigator:
    """Goal bookkeeping of a running episode."""

    goal: Optional[Cell] = None
    path: List[Cell] = field(default_factory=list)
    selected_at: int = 0
    focus: Optional[Cell] = None
    failed: Set[Cell] = field(default_factory=set)
    visited: List[Cell] = field(default_factory=list)
    look: List[Action] = field(default_factory=list)


class EpisodeRunner:
    """
    Runs one exploration episode: goal selection, path following and the
    observe, detect, filter, caption and integrate loop at every step.
    """

    def __init__(self, scene: Scene, policy: str, cfg: RunConfig, seed: int, start: Optional[AgentState] = None):
        self.scene = scene
        self.policy = policy
        self.cfg = cfg
        self.seed = seed
        start_seq, perception_seq, policy_seq = np.random.SeedSequence(seed).spawn(3)
        self.perception_rng = np.random.default_rng(perception_seq)
        self.policy_rng = np.random.default_rng(policy_seq)
        self.start = start or sample_free_pose(scene, cfg.camera, np.random.default_rng(start_seq))
        self.embedder = HashingEmbedder(cfg.exploration.embedding_dim)
        self.svm = SemanticVoxelMap(scene.cell_size)
        self.knowledge = OccupancyKnowledge(scene.bounds[:2], scene.cell_size, cfg.exploration.grid_size)
        self.knowledge.mark_free(self.start.position)
        self.nav = _Navigator()

    def _policy_state(self, agent: AgentState) -> PolicyState:
        instances = cluster_objects(self.svm)
        values = {i.instance_id: object_disagreement(i, self.embedder, self.svm.captions) for i in instances}
        return disagreement_map(self.svm, instances, agent, self.knowledge, self.embedder, values)

    def _excluded(self) -> Set[Cell]:
        excluded = set(self.nav.failed)
        radius = self.cfg.exploration.revisit_radius
        if self.policy == "cla" and radius > 0:
            k = self.knowledge.grid_size
            for r, c in self.nav.visited:
                for dr in range(-radius, radius + 1):
                    for dc in range(-radius, radius + 1):
                        if 0 <= r + dr < k and 0 <= c + dc < k:
                            excluded.add((r + dr, c + dc))
        return excluded

    def _select_goal(self, agent: AgentState, events: List[GoalEvent]) -> None:
        """Pick a new goal with a plannable path; raises ExplorationComplete or NoGoalError."""
        exploration = self.cfg.exploration
        for _ in range(16):
            grid = ExplorationGrid.from_knowledge(self.knowledge, agent)
            excluded = self._excluded()
            state = None
            if self.policy == "random":
                goal = random_goal_policy(grid, self.policy_rng, excluded)
            elif self.policy == "frontier":
                goal = frontier_policy(grid, excluded)
            else:
                state = self._policy_state(agent)
                goal = cla_greedy_policy(state, grid, exploration.cla_radius, excluded, exploration.cla_standoff)
            try:
                path = plan_path(grid, grid.agent_cell, goal, exploration.unknown_penalty)
            except NoPathError:
                self.nav.failed.add(goal)
                events.append(GoalEvent("failed", goal, "no path"))
                continue
            self.nav.goal, self.nav.path = goal, path
            self.nav.selected_at = agent.step_index
            self.nav.focus = disagreement_focus(state, goal, exploration.cla_radius) if state is not None else None
            events.append(GoalEvent("selected", goal))
            logger.debug("Step %d: goal %s (%s)", agent.step_index, goal, self.policy)
            return
        raise NoGoalError("No plannable goal after repeated attempts")

    def _heading_action(self, agent: AgentState, target: Tuple[float, float], forward: bool) -> Action:
        agent_cfg = self.cfg.agent
        desired = math.atan2(target[1] - agent.position[1], target[0] - agent.position[0])
        delta = _wrap_angle(desired - agent.yaw)
        if abs(delta) > agent_cfg.turn_angle / 2:
            return Action("rotate", math.copysign(agent_cfg.turn_angle, delta))
        if forward:
            return Action("forward", agent_cfg.forward_step)
        return None

    def _look_around(self) -> List[Action]:
        """Small head turns to either side of the focus, ending where they started."""
        turn = self.cfg.agent.turn_angle
        pattern = (1.0, -1.0, -1.0, 1.0)
        return [Action("rotate", pattern[i % 4] * turn) for i in range(self.cfg.exploration.look_around_steps)]

    def _next_action(self, agent: AgentState, events: List[GoalEvent]) -> Optional[Action]:
        nav = self.nav
        agent_cfg = self.cfg.agent

        if nav.look:
            return nav.look.pop(0)

        if nav.goal is None and nav.focus is not None:
            action = self._heading_action(agent, self.knowledge.cell_to_world(nav.focus), forward=False)
            if action is not None:
                return action
            nav.focus = None
            nav.look = self._look_around()
            if nav.look:
                return nav.look.pop(0)

        if nav.goal is not None:
            goal_xy = self.knowledge.cell_to_world(nav.goal)
            distance = math.hypot(goal_xy[0] - agent.position[0], goal_xy[1] - agent.position[1])
            if distance < 0.75 * agent_cfg.forward_step:
                events.append(GoalEvent("arrived", nav.goal))
                nav.visited.append(nav.goal)
                nav.goal = None
                if nav.focus is not None:
                    return self._next_action(agent, events)
            elif agent.step_index - nav.selected_at >= self.cfg.exploration.staleness_timeout:
                events.append(GoalEvent("timeout", nav.goal, "stale"))
                nav.failed.add(nav.goal)
                nav.goal, nav.focus = None, None
            else:
                grid = self.knowledge.grid()
                if any(grid[c] == OCCUPIED for c in nav.path[1:]):
                    try:
                        replanned = ExplorationGrid.from_knowledge(self.knowledge, agent)
                        nav.path = plan_path(replanned, replanned.agent_cell, nav.goal, self.cfg.exploration.unknown_penalty)
                    except NoPathError:
                        events.append(GoalEvent("failed", nav.goal, "path blocked"))
                        nav.failed.add(nav.goal)
                        nav.goal, nav.focus = None, None

        if nav.goal is None:
            self._select_goal(agent, events)

        here = self.knowledge.world_to_cell(agent.position)
        path = nav.path
        nearest = min(range(len(path)), key=lambda i: (abs(path[i][0] - here[0]) + abs(path[i][1] - here[1]), -i))
        cell_len = self.knowledge.extent[0] / self.knowledge.grid_size
        lookahead = max(1, int(math.ceil(agent_cfg.forward_step / cell_len)))
        target = path[min(len(path) - 1, nearest + lookahead)]
        return self._heading_action(agent, self.knowledge.cell_to_world(target), forward=True)

    def _perceive(self, agent: AgentState, action: Action, events: List[GoalEvent]) -> EpisodeRecord:
        cfg = self.cfg
        obs = observe(self.scene, agent, cfg.camera)
        self.knowledge.update(obs)
        dets = filter_detections(detect(obs, self.scene, cfg.detector, self.perception_rng, agent.step_index), cfg.detector)
        caps = [
            caption((self.scene.objects_by_id[d.object_id_gt], d.visible_fraction), cfg.noise, self.perception_rng, agent)
            for d in dets
        ]
        integrate(self.svm, obs, dets, caps, agent)
        return EpisodeRecord(
            step=agent.step_index,
            agent=agent,
            action=str(action),
            n_fragments=len(obs.visible_fragments),
            detections=dets,
            captions=caps,
            goal_events=list(events),
        )

    def run(self, n_steps: int) -> EpisodeLog:
        """Run ``n_steps`` steps and return the log (the map is kept on the runner)."""
        log = EpisodeLog(
            policy=self.policy, seed=self.seed, n_steps=n_steps, start=self.start, scene_seed=self.scene.seed
        )
        agent = self.start
        turn = self.cfg.agent.turn_angle
        spin = int(round(2 * math.pi / turn)) if self.cfg.agent.initial_spin and turn > 0 else 0

        for _ in range(n_steps):
            events: List[GoalEvent] = []
            if spin > 0:
                action = Action("rotate", turn)
                spin -= 1
            else:
                try:
                    action = self._next_action(agent, events)
                except ExplorationComplete:
                    log.completed_early = True
                    logger.info("Exploration complete after %d steps", agent.step_index)
                    break
                except NoGoalError:
                    events.append(GoalEvent("failed", None, "no goal"))
                    action = Action("rotate", turn)

            moved = step_agent(self.scene, agent, action)
            if action.kind == "forward" and moved.position == agent.position and self.nav.goal is not None:
                events.append(GoalEvent("failed", self.nav.goal, "blocked"))
                self.nav.failed.add(self.nav.goal)
                self.nav.goal, self.nav.focus = None, None
            agent = moved
            log.records.append(self._perceive(agent, action, events))

        logger.info(
            "Episode policy=%s seed=%d: %d steps, %d captions, %d voxels",
            self.policy, self.seed, len(log.records), len(log.captions), self.svm.V,
        )
        return log


def run_episode(
    scene: Scene,
    policy: str,
    n_steps: int = 300,
    cfg: Optional[RunConfig] = None,
    seed: int = 0,
    start: Optional[AgentState] = None,
) -> Tuple[EpisodeLog, SemanticVoxelMap]:
    """
    Run one exploration episode.

    Args:
        scene: Scene to explore
        policy: ``random``, ``frontier`` or ``cla``
        n_steps: Episode length
        cfg: Run configuration
        seed: Seed of the episode's random streams
        start: Start pose; sampled from free space when omitted

    Returns:
        Tuple of (episode log, semantic voxel map)
    """
    cfg = cfg or RunConfig()
    runner = EpisodeRunner(scene, policy, cfg, seed, start)
    return runner.run(n_steps), runner.svm


def replay_episode(scene: Scene, log: EpisodeLog, cfg: Optional[RunConfig] = None) -> SemanticVoxelMap:
    """Rebuild the voxel map from logged poses, detections and captions."""
    cfg = cfg or RunConfig()
    svm = SemanticVoxelMap(scene.cell_size)
    for record in log.records:
        obs = observe(scene, record.agent, cfg.camera)
        integrate(svm, obs, record.detections, record.captions, record.agent)
    return svm


def _caption_vectors(log: EpisodeLog, embedder: HashingEmbedder) -> Dict[int, List[np.ndarray]]:
    vectors: Dict[int, List[np.ndarray]] = {}
    for cap in log.captions:
        vectors.setdefault(cap.object_id_gt, []).append(embedder(cap.text))
    return vectors


def _pair_cosines(vectors: List[np.ndarray]) -> List[float]:
    return [float(np.dot(a, b)) for i, a in enumerate(vectors) for b in vectors[i + 1:]]


def caption_similarity_by_object(log: EpisodeLog, embedder: HashingEmbedder) -> Dict[int, float]:
    """Mean pairwise caption cosine per ground-truth object with at least two captions."""
    return {
        obj_id: float(np.mean(_pair_cosines(vectors)))
        for obj_id, vectors in _caption_vectors(log, embedder).items()
        if len(vectors) >= 2
    }


def caption_similarity_samples(log: EpisodeLog, embedder: HashingEmbedder) -> np.ndarray:
    """
    Cosine of every pair of captions of the same ground-truth object, pooled
    over objects. An object contributes one sample per caption pair, so the
    distribution follows where the episode spent its views.
    """
    samples = [s for vectors in _caption_vectors(log, embedder).values() for s in _pair_cosines(vectors)]
    return np.asarray(samples, dtype=float)

"""Closed-loop episode executor: parse, annotate once, then cycle
sense / filter / ground behaviors / select / move until Stop.

The robot plans on the known floor plan (walls) but discovers objects and
region labels through sensing; the filter's map supplies the navigation
targets.  Exploration is kept non-degenerate by adding frontier targets
(reachable edges of sensed space) to the enumerated action set; their
features carry no landmark information, so the policy weighs them purely
by path geometry and the absent-target indicator.

The expert oracle drives demonstrations and labels visited states for
imitation learning; baselines reuse the same loop with language stripped
(without_language) or with the oracle acting on the true map (known_map).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import NoPath, PathBlocked, UsageError
from ..grammar import parse, tokenize
from ..grounding.model import GroundingContext, Instance
from ..policy import (
    STOP,
    Action,
    DemonstrationExample,
    canonical_particle,
    embed,
    enumerate_actions,
    select_action,
)
from ..rbpf import LanguageMapFilter
from .expert import DistanceField, expert_action
from .motion import get_grid, move, plan_path, walk_along
from .sensing import SensorModel, line_of_sight, sense
from .world import generate_environment


@dataclass(frozen=True)
class GoalSpec:
    xy: tuple
    radius: float
    object_id: str | None = None
    kind: str = "position"

    def satisfied(self, pose) -> bool:
        return float(np.linalg.norm(np.asarray(pose) -
                                    np.asarray(self.xy))) <= self.radius

    def ready(self, seen_ids) -> bool:
        """Retrieval goals hold the stop until the figure has actually
        been seen; reaching the right spot is not finding the object."""
        return self.kind != "retrieve" or self.object_id in seen_ids


def truth_context(env) -> GroundingContext:
    """Groundable view of the true world, for goal derivation."""
    instances = []
    for obj in env.objects:
        instances.append(Instance(inst_id=obj.object_id, cls=obj.cls,
                                  xy=tuple(obj.xy)))
    for i, region in enumerate(env.regions):
        instances.append(Instance(
            inst_id=f"g{i}", cls=region.rtype,
            xy=tuple(region.centroid()), is_region=True,
            points=tuple(tuple(p) for p in region.polygon)))
    return GroundingContext(instances, env.start_xy)


def derive_goal(env, command: str, model, radius: float = 1.5) -> GoalSpec:
    """Resolve the command against ground truth into a success predicate."""
    tree = parse(tokenize(command))
    behaviors = model.infer_behaviors(tree, truth_context(env))
    if not behaviors:
        raise NoPath(f"command does not ground in this world: {command!r}")
    top = behaviors[0]
    inst_id = top.figure_id
    if isinstance(inst_id, str) and inst_id.startswith("g"):
        region = env.regions[int(inst_id[1:])]
        return GoalSpec(xy=tuple(region.centroid()), radius=radius,
                        kind="region")
    obj = env.object_by_id(inst_id)
    if obj.container is not None:
        # a hidden figure: navigate to its container and open it
        holder = env.object_by_id(obj.container)
        return GoalSpec(xy=tuple(holder.xy), radius=radius,
                        object_id=obj.object_id, kind="retrieve")
    return GoalSpec(xy=tuple(obj.xy), radius=radius,
                    object_id=obj.object_id, kind="object")


class Coverage:
    """Visited-area bookkeeping feeding the frontier targets.

    A cell counts as covered once the robot has been near it, not merely
    seen it: sight-based coverage starves the action set of targets in
    rooms the robot looked into without entering, leaving nothing to pull
    it across the threshold.  The visit radius stays below the success
    radius so an approach target survives until the goal check can fire."""

    VISIT_RADIUS = 1.2

    def __init__(self, env, resolution: float = 0.5,
                 robot_radius: float = 0.3):
        self.res = resolution
        xmin, ymin, xmax, ymax = env.bounds
        self.xmin = xmin
        self.ymin = ymin
        self.nx = int(np.ceil((xmax - xmin) / resolution))
        self.ny = int(np.ceil((ymax - ymin) / resolution))
        grid = get_grid(env, robot_radius=robot_radius)
        self.free = np.zeros((self.nx, self.ny), bool)
        for i in range(self.nx):
            for j in range(self.ny):
                self.free[i, j] = grid.free(grid.cell_of(self.center((i, j))))
        self.seen = np.zeros((self.nx, self.ny), bool)
        self.walls = env.walls

    def center(self, cell):
        return (self.xmin + (cell[0] + 0.5) * self.res,
                self.ymin + (cell[1] + 0.5) * self.res)

    def update(self, pose, range_m: float) -> None:
        pose = np.asarray(pose, float)
        reach = min(range_m, self.VISIT_RADIUS)
        lo = np.floor((pose - reach - (self.xmin, self.ymin)) / self.res)
        hi = np.ceil((pose + reach - (self.xmin, self.ymin)) / self.res)
        for i in range(max(int(lo[0]), 0), min(int(hi[0]) + 1, self.nx)):
            for j in range(max(int(lo[1]), 0), min(int(hi[1]) + 1, self.ny)):
                if self.seen[i, j] or not self.free[i, j]:
                    continue
                c = self.center((i, j))
                if np.linalg.norm(np.asarray(c) - pose) > reach:
                    continue
                if line_of_sight(self.walls, tuple(pose), c):
                    self.seen[i, j] = True

    def frontier_components(self) -> list:
        """Connected groups of uncovered free cells, each one candidate
        exploration area."""
        uncovered = self.free & ~self.seen
        labels = np.zeros((self.nx, self.ny), int)
        comps = []
        for i in range(self.nx):
            for j in range(self.ny):
                if not uncovered[i, j] or labels[i, j]:
                    continue
                comp = []
                stack = [(i, j)]
                labels[i, j] = len(comps) + 1
                while stack:
                    a, b = stack.pop()
                    comp.append(self.center((a, b)))
                    for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        x, y = a + da, b + db
                        if 0 <= x < self.nx and 0 <= y < self.ny and \
                                uncovered[x, y] and not labels[x, y]:
                            labels[x, y] = len(comps) + 1
                            stack.append((x, y))
                comps.append(comp)
        return comps


def frontier_actions(coverage: Coverage, believed, planner,
                     limit: int = 5, guide=None) -> list:
    """One NavigateTo per unexplored area.

    Each component is represented by its most central cell: a deep,
    slow-moving target that gives sustained progress, where the cell
    nearest the robot flips direction every step and makes any driver
    crawl along the covered boundary.  A `guide` callable
    (xy -> cost-to-go) replaces that choice with the cell minimizing
    straight-line distance plus guided cost; only the pure oracle
    baseline may use it, since it leaks the goal into the action set.
    """
    comps = coverage.frontier_components()
    if not comps:
        return []
    believed = np.asarray(believed, float)
    reps = []
    for comp in comps:
        if guide is not None:
            comp.sort(key=lambda c: (
                float(np.linalg.norm(np.asarray(c) - believed)) + guide(c), c))
        else:
            middle = np.mean(np.asarray(comp, float), axis=0)
            comp.sort(key=lambda c: (
                float(np.linalg.norm(np.asarray(c) - middle)), c))
        reps.append((len(comp), comp[0]))
    # biggest areas first so the cap keeps the meaningful choices
    reps.sort(key=lambda r: (-r[0], r[1]))
    actions = []
    for k, (_, xy) in enumerate(reps[:limit]):
        try:
            path = planner(tuple(believed), tuple(xy))
        except Exception:
            continue
        actions.append(Action(
            kind="navigate", key=f"frontier:{k}", target_xy=tuple(xy),
            path=tuple(tuple(map(float, p)) for p in path),
            existence=0.0, cls=None, sort_id=10_000 + k))
    return actions


@dataclass
class EpisodeTrace:
    command: str
    template: str
    seed: int
    mode: str
    fov: float
    steps: list = field(default_factory=list)
    outcome: dict = field(default_factory=dict)
    examples: list = field(default_factory=list)   # not serialized

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "template": self.template,
            "seed": self.seed,
            "mode": self.mode,
            "fov": self.fov,
            "steps": self.steps,
            "outcome": self.outcome,
        }


def _top_figures(model, tree, particles) -> list:
    figures = []
    for p in particles:
        ctx = GroundingContext.from_graph(p.graph, p.robot_xy())
        behaviors = model.infer_behaviors(tree, ctx)
        figures.append(behaviors[0].figure_id if behaviors else None)
    return figures


def run_episode(env, command: str, model, cfg: dict, seed: int,
                weights=None, fov: float | None = None,
                mode: str = "with_language",
                collect_expert: bool = False) -> EpisodeTrace:
    """Execute one episode; deterministic given (env, seed, config).

    mode: with_language (full system), without_language (annotations
    dropped), known_map (oracle on the true map), expert (full filter,
    oracle drives).  `weights` drives action selection when given and the
    mode is not oracle-driven; otherwise the expert drives.
    """
    if mode not in ("with_language", "without_language", "known_map",
                    "expert"):
        raise UsageError(f"unknown episode mode: {mode!r}")
    sim_cfg = cfg["sim"]
    if fov is None:
        fov = 1e9 if mode == "known_map" else sim_cfg["default_fov"]
    tree = parse(tokenize(command))
    annotations = () if mode in ("without_language", "known_map") else \
        tuple(model.infer_annotations(tree))
    goal = derive_goal(env, command, model, radius=sim_cfg["success_radius"])

    labels = tuple(cfg["vocabulary"]["location_types"])
    sensor = SensorModel(
        range_m=fov, arc_deg=sim_cfg["arc_deg"],
        noise_sigma=sim_cfg["sensor_noise_sigma"],
        scene_epsilon=sim_cfg["scene_epsilon"],
        inspect_range=sim_cfg["inspect_range"], labels=labels)

    seq = np.random.SeedSequence((seed, env.seed))
    s_sense, s_move, s_filter = seq.spawn(3)
    rng_sense = np.random.default_rng(s_sense)
    rng_move = np.random.default_rng(s_move)
    filter_seed = int(s_filter.generate_state(1)[0] % (2**31))

    res = sim_cfg["grid_resolution"]
    rr = sim_cfg["robot_radius"]
    step_size = sim_cfg["step_size"]

    def planner(a, b):
        return plan_path(env, a, b, resolution=res, robot_radius=rr)

    def visible(robot_xy, target_xy):
        d = float(np.linalg.norm(np.asarray(target_xy) - np.asarray(robot_xy)))
        return d <= sensor.range_m and \
            line_of_sight(env.walls, tuple(robot_xy), tuple(target_xy))

    filt = LanguageMapFilter(
        cfg, model, seed=filter_seed,
        n_particles=1 if mode == "known_map" else None,
        visible_fn=visible,
        los_fn=lambda a, b: line_of_sight(env.walls, tuple(a), tuple(b)))
    filt.initialize(env.start_xy)

    oracle_drives = mode in ("known_map", "expert") or weights is None
    field_needed = oracle_drives or collect_expert
    field = DistanceField(env, goal.xy, res, rr) if field_needed else None
    coverage = None if mode == "known_map" else Coverage(env, robot_radius=rr)

    policy_cfg = cfg["policy"]
    k_moments = int(policy_cfg["moments"])
    scale = float(policy_cfg["feature_scale"])

    pose = np.asarray(env.start_xy, float)
    heading = float(env.start_heading)
    odom = (0.0, 0.0)
    distance = 0.0
    blocked_steps = 0
    stop_reason = "cap"
    trace = EpisodeTrace(command=command, template=env.template, seed=seed,
                         mode=mode, fov=float(fov))

    seen_ids: set = set()
    for t in range(int(sim_cfg["step_cap"])):
        obs = sense(env, pose, heading, sensor, rng_sense)
        seen_ids.update(d.object_id for d in obs.detections)
        filt.step(odom, obs, annotations if t == 0 else ())
        particles = filt.particles
        lead = canonical_particle(particles)
        believed = np.asarray(lead.robot_xy(), float)

        if mode == "known_map":
            try:
                path = planner(tuple(believed), tuple(goal.xy))
            except NoPath:
                stop_reason = "no_path"
                break
            goal_nav = Action(kind="navigate", key="goal",
                              target_xy=tuple(goal.xy),
                              path=tuple(tuple(map(float, p)) for p in path),
                              existence=1.0, cls=None)
            actions = [goal_nav, STOP]
            embeddings = None
        else:
            coverage.update(pose, sensor.range_m)
            actions = enumerate_actions(particles, believed, planner)
            # demonstrations must never see guided frontiers: the expert
            # would label the leaked shortcut at nearly every state and
            # teach the learner to shun its own belief targets
            guide = field.at if (field is not None and oracle_drives
                                 and not collect_expert) else None
            extras = frontier_actions(coverage, believed, planner,
                                      guide=guide)
            actions = actions[:-1] + extras + [actions[-1]]
            if oracle_drives and not collect_expert:
                embeddings = None
            else:
                figures = _top_figures(model, tree, particles)
                embeddings = [
                    embed(a, particles, believed, k_moments, figures, scale,
                          labels) for a in actions
                ]

        expert_idx = None
        if field is not None:
            expert_idx = expert_action(pose, actions, goal, field,
                                       ready=goal.ready(seen_ids))
        if collect_expert and embeddings is not None:
            if expert_idx is None:
                warnings.warn("expert could not label a visited state; "
                              "state skipped")
            else:
                trace.examples.append(DemonstrationExample(
                    embeddings=np.stack(embeddings),
                    expert_index=int(expert_idx),
                    keys=tuple(a.key if a.key else a.kind for a in actions)))

        if oracle_drives:
            pick = STOP if expert_idx is None else actions[expert_idx]
        else:
            pick = select_action(weights.weights, actions, embeddings)

        hyp_counts: dict = {}
        for node in lead.graph.nodes.values():
            if node.kind == "object" and node.status == "hypothesized":
                hyp_counts[node.label] = hyp_counts.get(node.label, 0) + 1
        trace.steps.append({
            "t": t,
            "pose": [round(float(pose[0]), 6), round(float(pose[1]), 6)],
            "believed": [round(float(believed[0]), 6),
                         round(float(believed[1]), 6)],
            "scene": obs.scene_label,
            "detections": sorted(d.object_id for d in obs.detections),
            "inspected": sorted(d.object_id for d in obs.detections
                                if d.inspected),
            "action": pick.key if pick.key else pick.kind,
            "hyp_objects": hyp_counts,
            "n_actions": len(actions),
        })

        if pick.is_stop():
            stop_reason = "stop"
            break

        carrot_point = np.asarray(walk_along(pick.path, step_size), float)
        disp_plan = carrot_point - np.asarray(pick.path[0], float)
        new_pose = None
        for angle, shrink in ((0.0, 1.0), (0.0, 0.5), (30.0, 1.0),
                              (-30.0, 1.0), (60.0, 1.0), (-60.0, 1.0),
                              (90.0, 1.0), (-90.0, 1.0)):
            rad = np.radians(angle)
            rot = np.array([[np.cos(rad), -np.sin(rad)],
                            [np.sin(rad), np.cos(rad)]])
            target_point = pose + shrink * (rot @ disp_plan)
            try:
                new_pose, odom = move(env, tuple(pose), tuple(target_point),
                                      step_size, rng_move,
                                      sim_cfg["odom_noise_sigma"])
                break
            except PathBlocked:
                continue
        if new_pose is None:
            blocked_steps += 1
            odom = (0.0, 0.0)
            continue
        moved = np.asarray(new_pose) - pose
        if float(np.linalg.norm(moved)) > 1e-9:
            heading = float(np.arctan2(moved[1], moved[0]))
        distance += float(np.linalg.norm(moved))
        pose = np.asarray(new_pose, float)

    trace.outcome = {
        "success": bool(goal.satisfied(pose)),
        "figure_seen": bool(goal.ready(seen_ids)),
        "distance": round(distance, 6),
        "steps": len(trace.steps),
        "stop_reason": stop_reason,
        "blocked_steps": blocked_steps,
        "final_xy": [round(float(pose[0]), 6), round(float(pose[1]), 6)],
        "goal_xy": [round(float(goal.xy[0]), 6), round(float(goal.xy[1]), 6)],
    }
    return trace


DEFAULT_TRAINING_CELLS = (
    ("1hydrant_1cone", "go to the hydrant"),
    ("1hydrant_1cone", "go to the hydrant behind the cone"),
    ("2hydrants_1cone", "go to the hydrant nearest the cone"),
    ("multiroom", "go to the kitchen"),
    ("boxsearch", "retrieve the ball inside the box"),
)


def make_rollout(model, cfg: dict, cells=DEFAULT_TRAINING_CELLS,
                 fov: float | None = None, step_cap: int = 200,
                 max_states: int = 80):
    """Episode generator for imitation learning: returns a callable
    (weights_or_none, seed) -> [DemonstrationExample].

    Training rollouts run under a shorter step cap than evaluation, and
    each episode's states are thinned to `max_states` so a single capped
    wander cannot swamp the aggregate."""
    from ..config import deep_merge

    train_cfg = deep_merge(cfg, {"sim": {"step_cap": step_cap}})

    def rollout(weights, seed: int):
        template, command = cells[seed % len(cells)]
        env = generate_environment(template, seed, train_cfg["sim"])
        trace = run_episode(env, command, model, train_cfg, seed,
                            weights=weights, fov=fov, mode="with_language",
                            collect_expert=True)
        return _thin_examples(trace.examples, max_states)

    return rollout


def _thin_examples(examples: list, cap: int) -> list:
    """Evenly subsample one episode's states down to `cap`; stop-labeled
    states always survive since they are rare and teach the halt."""
    if len(examples) <= cap:
        return examples
    stops = [ex for ex in examples if ex.keys[ex.expert_index] == "stop"]
    others = [ex for ex in examples if ex.keys[ex.expert_index] != "stop"]
    keep = max(cap - len(stops), 1)
    idx = np.unique(np.linspace(0, len(others) - 1, keep).round().astype(int))
    return [others[i] for i in idx] + stops

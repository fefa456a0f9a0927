"""Belief-space action selection and max-margin imitation learning.

Actions are one NavigateTo per distinct map target, aggregated across the
particle set, plus an explicit Stop.  Targets get stable cross-particle
keys: detections share simulator object ids (``obj:<id>``), annotation
placements share the annotation key (``hyp:<key>:fig`` / ``:lm``), and
labeled places match by label mode and centroid-sorted ordinal
(``region:<label>:<k>``).  Geometry is read from the highest-weight
particle; existence probability is the weight mass of particles whose map
resolves the key.

Costs are linear in a moment embedding of per-sample features: for each
particle the 18-entry feature vector below is computed against that
particle's own resolution of the target, and the K blocks stack the
weighted mean and central moments across particles.  When a particle
cannot resolve the target, landmark-dependent entries are zeroed and the
absent-target indicator is set instead, keeping the dimension fixed.

Training minimizes the regularized multi-class hinge loss: the expert
action must beat every alternative by a unit margin; the subgradient steps
follow a 1/t^gamma schedule.  The DAgger driver alternates data collection
under the current policy with expert labeling and retrains on the
aggregate, keeping the best weights per iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import DimensionError, UsageError

FEATURE_NAMES = (
    "path_length",
    "turn_total",
    "turn_net",
    "dist_start",
    "dist_end",
    "dist_delta",
    "region_area",
    "behavior_figure",
    "class_structure",
    "class_container",
    "class_portable",
    "class_place",
    "class_other",
    "hypothesized",
    "existence",
    "stop",
    "stop_dist_figure",
    "absent_target",
)
D = len(FEATURE_NAMES)

CLASS_BUCKETS = {
    "class_structure": ("hydrant", "cone", "tree", "car", "building", "wall"),
    "class_container": ("box", "suitcase"),
    "class_portable": ("ball", "drill", "banana", "pitcher"),
}


@dataclass(frozen=True)
class Action:
    """NavigateTo a cross-particle target, or Stop."""

    kind: str                      # "navigate" or "stop"
    key: str | None = None
    target_xy: tuple | None = None
    path: tuple = ()               # waypoints, starting at the robot pose
    existence: float = 1.0
    cls: str | None = None
    sort_id: int = 0               # canonical node/region id, ordering only

    def is_stop(self) -> bool:
        return self.kind == "stop"


STOP = Action(kind="stop")


@dataclass(frozen=True)
class Resolved:
    """A target key resolved inside one particle's map."""

    xy: np.ndarray
    cls: str
    hypothesized: bool
    node: int | None = None
    region: int | None = None
    area: float = 0.0


@dataclass
class DemonstrationExample:
    """One visited state: the embedded action set and the expert's pick."""

    embeddings: np.ndarray        # (n_actions, K*D)
    expert_index: int
    keys: tuple = ()              # action keys, for inspection only

    def __post_init__(self):
        if not 0 <= self.expert_index < len(self.embeddings):
            raise UsageError("expert action outside the action set")


@dataclass
class PolicyWeights:
    weights: np.ndarray
    moments: int = 2
    feature_scale: float = 10.0
    lambda_reg: float = 1e-3
    lr0: float = 0.1
    lr_decay: float = 0.5
    feature_names: tuple = FEATURE_NAMES

    def to_json(self) -> dict:
        return {
            "weights": [float(w) for w in self.weights],
            "moments": self.moments,
            "feature_scale": self.feature_scale,
            "lambda_reg": self.lambda_reg,
            "lr0": self.lr0,
            "lr_decay": self.lr_decay,
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "PolicyWeights":
        names = tuple(payload["feature_names"])
        if names != FEATURE_NAMES:
            raise UsageError(
                "weights file was trained against a different feature "
                "manifest; retrain before use")
        return cls(
            weights=np.asarray(payload["weights"], float),
            moments=int(payload["moments"]),
            feature_scale=float(payload["feature_scale"]),
            lambda_reg=float(payload["lambda_reg"]),
            lr0=float(payload["lr0"]),
            lr_decay=float(payload["lr_decay"]),
        )

    def save(self, path: str, meta: dict | None = None) -> None:
        import json

        payload = dict(meta or {})
        payload.update(self.to_json())
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "PolicyWeights":
        import json

        from .errors import ModelNotFound

        try:
            with open(path) as fh:
                payload = json.load(fh)
        except FileNotFoundError as err:
            raise ModelNotFound(f"policy weights not found: {path}") from err
        return cls.from_json(payload)

    @classmethod
    def fresh(cls, policy_cfg: dict) -> "PolicyWeights":
        k = int(policy_cfg["moments"])
        return cls(
            weights=np.zeros(k * D),
            moments=k,
            feature_scale=float(policy_cfg["feature_scale"]),
            lambda_reg=float(policy_cfg["lambda_reg"]),
            lr0=float(policy_cfg["lr0"]),
            lr_decay=float(policy_cfg["lr_decay"]),
        )


# ---------------------------------------------------------------------------
# target resolution


def _class_bucket(cls: str, location_labels) -> str:
    for bucket, members in CLASS_BUCKETS.items():
        if cls in members:
            return bucket
    if cls in location_labels:
        return "class_place"
    return "class_other"


def resolve_target(particle, action: Action) -> Resolved | None:
    """Find the action's target inside one particle's map, or None."""
    if action.key is None:
        return None
    graph = particle.graph
    kind, _, rest = action.key.partition(":")
    if kind == "obj":
        node = particle.obj_nodes.get(rest)
        if node is None or node not in graph.nodes:
            return None
        n = graph.nodes[node]
        return Resolved(graph.node_xy(node), n.label,
                        n.status == "hypothesized", node=node)
    if kind == "hyp":
        ann_key, _, role = rest.rpartition(":")
        record = particle.applied.get(ann_key)
        if record is None:
            return None
        node = record[0] if role == "fig" else record[1]
        if node is None or node not in graph.nodes:
            return None
        n = graph.nodes[node]
        if n.kind == "pose":
            # a hypothesized place: report its region
            rid = graph.region_of[node]
            return Resolved(graph.region_centroid(rid),
                            graph.region_label_mode(rid),
                            graph.regions[rid].status == "hypothesized",
                            node=node, region=rid,
                            area=_region_area(graph, rid))
        return Resolved(graph.node_xy(node), n.label,
                        n.status == "hypothesized", node=node)
    if kind == "region":
        label, _, ordinal = rest.rpartition(":")
        matches = [r for r in graph.spatial_regions()
                   if graph.regions[r].status != "hypothesized"
                   and graph.region_label_mode(r) == label]
        matches.sort(key=lambda r: tuple(graph.region_centroid(r)))
        idx = int(ordinal)
        if idx >= len(matches):
            return None
        rid = matches[idx]
        return Resolved(graph.region_centroid(rid), label,
                        graph.regions[rid].status == "hypothesized",
                        region=rid, area=_region_area(graph, rid))
    return None


def _region_area(graph, rid: int) -> float:
    pts = graph.region_nodes_xy(rid)
    if len(pts) < 3:
        return 0.0
    try:
        return float(ConvexHull(pts).volume)
    except QhullError:
        return 0.0


def _fallback_target(particle, action: Action) -> Resolved | None:
    """Closest node of the action's class when the key itself is absent."""
    if action.cls is None:
        return None
    graph = particle.graph
    best = None
    target = np.asarray(action.target_xy, float)
    for node in graph.objects_by_class(action.cls):
        d = float(np.linalg.norm(graph.node_xy(node) - target))
        if best is None or d < best[0]:
            best = (d, node)
    if best is None:
        return None
    n = graph.nodes[best[1]]
    return Resolved(graph.node_xy(best[1]), n.label,
                    n.status == "hypothesized", node=best[1])


# ---------------------------------------------------------------------------
# action enumeration


def canonical_particle(particles):
    best = particles[0]
    for p in particles[1:]:
        if p.weight > best.weight:
            best = p
    return best


def enumerate_actions(particles, robot_xy, planner) -> list:
    """One NavigateTo per distinct target across the particle set, ordered
    by (existence desc, canonical id), then Stop.

    `planner(from_xy, to_xy)` returns a waypoint list starting at from_xy,
    or raises; unreachable targets are dropped.
    """
    lead = canonical_particle(particles)
    graph = lead.graph
    candidates = []   # (key, xy, cls, sort_id)

    for oid in sorted(lead.obj_nodes):
        node = lead.obj_nodes[oid]
        if node not in graph.nodes:
            continue
        candidates.append((f"obj:{oid}", graph.node_xy(node),
                           graph.nodes[node].label, node))

    for ann_key in sorted(lead.applied):
        fig, lm = lead.applied[ann_key]
        for role, node in (("fig", fig), ("lm", lm)):
            if node is None or node not in graph.nodes:
                continue
            if graph.nodes[node].status != "hypothesized":
                continue   # observed nodes are already obj targets
            key = f"hyp:{ann_key}:{role}"
            res = resolve_target(lead, Action(kind="navigate", key=key))
            if res is not None:
                candidates.append((key, res.xy, res.cls, node))

    by_label: dict = {}
    for rid in graph.spatial_regions():
        if graph.regions[rid].status == "hypothesized":
            continue   # annotation placements already carry hyp keys
        label = graph.region_label_mode(rid)
        if label == "generic":
            continue
        by_label.setdefault(label, []).append(rid)
    for label, rids in sorted(by_label.items()):
        rids.sort(key=lambda r: tuple(graph.region_centroid(r)))
        for k, rid in enumerate(rids):
            candidates.append((f"region:{label}:{k}",
                               graph.region_centroid(rid), label, rid))

    actions = []
    for key, xy, cls, sort_id in candidates:
        existence = 0.0
        probe = Action(kind="navigate", key=key, target_xy=tuple(xy), cls=cls)
        for p in particles:
            if resolve_target(p, probe) is not None:
                existence += p.weight
        try:
            path = planner(tuple(robot_xy), tuple(map(float, xy)))
        except Exception:
            continue
        actions.append(Action(kind="navigate", key=key,
                              target_xy=tuple(map(float, xy)),
                              path=tuple(tuple(map(float, w)) for w in path),
                              existence=float(existence), cls=cls,
                              sort_id=sort_id))
    actions.sort(key=lambda a: (-a.existence, a.sort_id, a.key))
    actions.append(STOP)
    return actions


# ---------------------------------------------------------------------------
# features


def _path_geometry(path) -> tuple:
    """(length, cumulative |heading change|, net heading change)."""
    pts = np.asarray(path, float)
    if len(pts) < 2:
        return 0.0, 0.0, 0.0
    deltas = np.diff(pts, axis=0)
    seg = np.linalg.norm(deltas, axis=1)
    keep = seg > 1e-12
    length = float(seg.sum())
    deltas = deltas[keep]
    if len(deltas) < 2:
        return length, 0.0, 0.0
    headings = np.arctan2(deltas[:, 1], deltas[:, 0])
    turns = np.diff(headings)
    turns = (turns + np.pi) % (2.0 * np.pi) - np.pi
    return length, float(np.abs(turns).sum()), float(turns.sum())


def landmark_features(robot_xy, action: Action, particle,
                      behavior_figure=None, scale: float = 10.0,
                      location_labels=()) -> np.ndarray:
    """Per-sample feature vector for one action against one particle."""
    phi = np.zeros(D)
    robot = np.asarray(robot_xy, float)
    graph = particle.graph

    if action.is_stop():
        phi[15] = 1.0
        if behavior_figure is not None:
            xy = _figure_xy(graph, behavior_figure)
            if xy is not None:
                phi[16] = float(np.linalg.norm(xy - robot)) / scale
        return phi

    length, turn_total, turn_net = _path_geometry(action.path)
    phi[0] = length / scale
    phi[1] = turn_total / np.pi
    phi[2] = turn_net / np.pi

    res = resolve_target(particle, action) or _fallback_target(particle, action)
    if res is None:
        phi[17] = 1.0
        return phi

    end = np.asarray(action.path[-1], float) if action.path else robot
    d_start = float(np.linalg.norm(res.xy - robot))
    d_end = float(np.linalg.norm(res.xy - end))
    phi[3] = d_start / scale
    phi[4] = d_end / scale
    phi[5] = (d_end - d_start) / scale
    phi[6] = res.area / scale**2
    phi[7] = 1.0 if _matches_figure(res, behavior_figure) else 0.0
    phi[FEATURE_NAMES.index(_class_bucket(res.cls, location_labels))] = 1.0
    phi[13] = 1.0 if res.hypothesized else 0.0
    phi[14] = action.existence
    return phi


def _figure_xy(graph, figure):
    if isinstance(figure, str) and figure.startswith("r"):
        rid = int(figure[1:])
        if rid in graph.regions:
            return graph.region_centroid(rid)
        return None
    if figure in graph.nodes:
        return graph.node_xy(figure)
    return None


def _matches_figure(res: Resolved, behavior_figure) -> bool:
    if behavior_figure is None:
        return False
    if isinstance(behavior_figure, str) and behavior_figure.startswith("r"):
        return res.region is not None and f"r{res.region}" == behavior_figure
    return res.node is not None and res.node == behavior_figure


def moment_blocks(phis: np.ndarray, weights: np.ndarray,
                  moments: int = 2) -> np.ndarray:
    """Stack the weighted mean, then central moments 2..K, of the rows."""
    weights = np.asarray(weights, float)
    total = weights.sum()
    if total <= 0.0:
        raise DimensionError("particle weights sum to zero")
    weights = weights / total
    phis = np.asarray(phis, float)
    mean = weights @ phis
    blocks = [mean]
    centered = phis - mean
    for k in range(2, moments + 1):
        blocks.append(weights @ (centered**k))
    return np.concatenate(blocks)


def embed(action: Action, particles, robot_xy, moments: int = 2,
          behavior_figures=None, scale: float = 10.0,
          location_labels=()) -> np.ndarray:
    """K stacked moment blocks of the per-sample features across the
    particle set, each sample resolved in its own particle's map."""
    if behavior_figures is None:
        behavior_figures = [None] * len(particles)
    phis = np.array([
        landmark_features(robot_xy, action, p, bf, scale, location_labels)
        for p, bf in zip(particles, behavior_figures)
    ])
    weights = np.array([p.weight for p in particles], float)
    return moment_blocks(phis, weights, moments)


# ---------------------------------------------------------------------------
# cost and selection


def cost(weights: np.ndarray, embedding: np.ndarray) -> float:
    weights = np.asarray(weights, float)
    embedding = np.asarray(embedding, float)
    if weights.shape != embedding.shape:
        raise DimensionError(
            f"weight dimension {weights.shape} does not match embedding "
            f"{embedding.shape}")
    return float(weights @ embedding)


def select_action(weights: np.ndarray, actions, embeddings) -> Action:
    """Minimum-cost action; ties keep the earliest in the given order, so
    Stop (listed last) never wins a tie."""
    costs = [cost(weights, f) for f in embeddings]
    best = int(np.argmin(costs))
    return actions[best]


# ---------------------------------------------------------------------------
# max-margin learning


def hinge_loss(weights: np.ndarray, example: DemonstrationExample,
               lambda_reg: float = 1e-3) -> float:
    scores = example.embeddings @ weights
    margins = np.ones(len(scores))
    margins[example.expert_index] = 0.0
    reg = 0.5 * lambda_reg * float(weights @ weights)
    return reg + float(scores[example.expert_index]) - float(
        np.min(scores - margins))


def subgradient(weights: np.ndarray, example: DemonstrationExample,
                lambda_reg: float = 1e-3) -> np.ndarray:
    scores = example.embeddings @ weights
    margins = np.ones(len(scores))
    margins[example.expert_index] = 0.0
    rival = int(np.argmin(scores - margins))
    grad = lambda_reg * weights.copy()
    if rival != example.expert_index:
        grad += example.embeddings[example.expert_index] - \
            example.embeddings[rival]
    return grad


def sgd_update(weights: np.ndarray, grad: np.ndarray, t: int,
               lr0: float = 0.1, lr_decay: float = 0.5) -> np.ndarray:
    return weights - (lr0 / t**lr_decay) * grad


def dataset_loss(weights, dataset, lambda_reg) -> float:
    return float(np.mean([hinge_loss(weights, ex, lambda_reg)
                          for ex in dataset]))


def expert_agreement(weights, dataset) -> float:
    hits = 0
    for ex in dataset:
        scores = ex.embeddings @ weights
        if int(np.argmin(scores)) == ex.expert_index:
            hits += 1
    return hits / len(dataset) if dataset else 0.0


def train_weights(dataset, start: PolicyWeights, epochs: int, seed: int = 0,
                  t0: int = 1) -> tuple:
    """Epochs of shuffled subgradient steps over the dataset, returning the
    best weights seen (by aggregate loss) and the next step counter."""
    lam = start.lambda_reg
    rng = np.random.default_rng(seed)
    w = start.weights.copy()
    best_w = w.copy()
    best_loss = dataset_loss(w, dataset, lam)
    t = t0
    for _ in range(epochs):
        for idx in rng.permutation(len(dataset)):
            grad = subgradient(w, dataset[idx], lam)
            w = sgd_update(w, grad, t, start.lr0, start.lr_decay)
            t += 1
        loss = dataset_loss(w, dataset, lam)
        if loss < best_loss:
            best_loss = loss
            best_w = w.copy()
    return best_w, best_loss, t


def dagger_train(rollout, policy_cfg: dict, seed: int = 0) -> tuple:
    """DAgger: iterate data collection under the current policy with expert
    labels, retraining on the aggregate each round.

    `rollout(weights_or_none, seed) -> [DemonstrationExample]`: run one
    episode, return the expert-labeled states it visited.  Passing None
    runs the expert itself (iteration one is behavioral cloning).

    Returns (PolicyWeights, report rows).  Deterministic given the seed.
    """
    iterations = int(policy_cfg["dagger_iterations"])
    per_iter = int(policy_cfg["episodes_per_iteration"])
    epochs = int(policy_cfg["epochs"])
    current = PolicyWeights.fresh(policy_cfg)
    seeds = np.random.SeedSequence(seed)
    episode_seeds = [int(s.generate_state(1)[0] % (2**31))
                     for s in seeds.spawn(iterations * per_iter + 1)]
    train_seed = episode_seeds.pop()

    dataset: list = []
    report = []
    for it in range(iterations):
        driver = None if it == 0 else current
        new_states = 0
        for ep in range(per_iter):
            examples = rollout(driver, episode_seeds[it * per_iter + ep])
            dataset.extend(examples)
            new_states += len(examples)
        if not dataset:
            report.append({"iteration": it, "states": 0, "loss": 0.0,
                           "agreement": 0.0})
            continue
        before = dataset_loss(current.weights, dataset, current.lambda_reg)
        # fresh step-size schedule each round: the aggregate is a new
        # objective, and a carried-over counter freezes the update
        best_w, best_loss, _ = train_weights(dataset, current, epochs,
                                             seed=train_seed + it)
        if best_loss <= before:
            current.weights = best_w
        report.append({
            "iteration": it,
            "states": len(dataset),
            "new_states": new_states,
            "loss_before": before,
            "loss": min(best_loss, before),
            "agreement": expert_agreement(current.weights, dataset),
        })
    return current, report

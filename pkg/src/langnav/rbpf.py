"""Rao-Blackwellized particle filter over hybrid semantic maps.

Each particle carries a sampled topology (regions, edges, hypothesized
nodes) while the metric layer stays analytic: conditioned on the topology,
node positions are jointly Gaussian in information form and solved exactly.
Language annotations act as a sensor: they spawn hypothesized nodes through
a Dirichlet-process grounding, add displacement constraints from the
relation models, and enter the weight update as a likelihood term evaluated
against each particle's previous map.

Per step and per particle: the annotation and appearance likelihoods are
computed against the pre-update map first, then the topology is mutated
(pose chain, detections, hypothesis binding, segmentation, region edges,
merges, language), and the stored likelihood scales the weight.  Weights
are normalized every step and systematically resampled when the effective
count drops below half the particle count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import WeightCollapse
from .grounding import Annotation, GroundingContext, GroundingModel
from .semantic_map import HYPOTHESIZED, OBSERVED, SemanticGraph


@dataclass(frozen=True)
class Detection:
    """One sensed object: a stable id, class label, and noisy offset.

    `xy` is the observed displacement from the robot in the world frame.
    When a container was inspected this cycle, `inspected` is set and
    `contents` lists the classes found inside (empty tuple for an empty
    container).
    """

    object_id: str
    cls: str
    xy: tuple
    inspected: bool = False
    contents: tuple = ()


@dataclass(frozen=True)
class Observation:
    detections: tuple = ()
    scene_label: str | None = None


@dataclass(frozen=True)
class HypothesisMeta:
    """Provenance of a hypothesized node: which annotation placed it and
    relative to what, so later detections can be tested against it."""

    key: str                 # annotation key it satisfies
    relation: str
    anchor: int | None       # node it was placed relative to; None = robot
    robot_xy: tuple          # robot position at placement time
    cls: str
    role: str = "figure"     # "figure" or "landmark"
    inverse: bool = False    # placed via the inverse (landmark-given-figure) model


# ---------------------------------------------------------------------------
# small pure pieces, kept standalone for direct testing


def effective_count(weights) -> float:
    w = np.asarray(weights, float)
    return float(1.0 / np.sum(w * w))


def systematic_resample(weights, u0: float) -> list:
    """Ancestor indices for systematic resampling with offset u0 in [0,1)."""
    w = np.asarray(weights, float)
    n = len(w)
    positions = (u0 + np.arange(n)) / n
    cumulative = np.cumsum(w)
    cumulative[-1] = 1.0  # guard the last bin against rounding
    return list(np.searchsorted(cumulative, positions, side="right"))


def segmentation_probability(n_cut: float, alpha: float) -> float:
    return 1.0 / (1.0 + alpha * n_cut**3)


def folded_gaussian_pdf(d: float, mu: float, sigma: float) -> float:
    a = math.exp(-0.5 * ((d - mu) / sigma) ** 2)
    b = math.exp(-0.5 * ((d + mu) / sigma) ** 2)
    return (a + b) / (sigma * math.sqrt(2.0 * math.pi))


def edge_probability(d: float, gamma: float, mu: float, sigma: float) -> float:
    """Kernel 1/(1+gamma d^2) times the folded-Gaussian distance prior,
    the prior normalized to 1 at its mean so the kernel sets the scale."""
    kernel = 1.0 / (1.0 + gamma * d * d)
    prior = folded_gaussian_pdf(d, mu, sigma) / folded_gaussian_pdf(mu, mu, sigma)
    return min(1.0, kernel * prior)


def crp_probabilities(weights, eta: float) -> np.ndarray:
    """Normalized (existing..., new) probabilities for a CRP-style draw."""
    w = np.asarray(list(weights) + [eta], float)
    return w / w.sum()


def normalized_cut(similarity: np.ndarray, mask: np.ndarray) -> float:
    """N_c of the bipartition given by the boolean mask."""
    w = np.asarray(similarity, float)
    cut = float(w[np.ix_(mask, ~mask)].sum())
    if cut == 0.0:
        return 0.0
    degree = w.sum(axis=1)
    vol_a = float(degree[mask].sum())
    vol_b = float(degree[~mask].sum())
    return cut * (1.0 / vol_a + 1.0 / vol_b)


def spectral_bisection(similarity: np.ndarray) -> np.ndarray:
    """Boolean mask from the sign of the Fiedler vector of the normalized
    Laplacian.  Degenerate (fully similar or fully disconnected) inputs
    still return a nonempty proper subset when one exists."""
    w = np.asarray(similarity, float)
    n = w.shape[0]
    degree = np.maximum(w.sum(axis=1), 1e-12)
    inv_sqrt = 1.0 / np.sqrt(degree)
    lap = np.eye(n) - (inv_sqrt[:, None] * w * inv_sqrt[None, :])
    vals, vecs = np.linalg.eigh(lap)
    fiedler = vecs[:, np.argsort(vals)[1]]
    mask = fiedler > 0.0
    if mask.all() or not mask.any():
        mask = fiedler >= np.median(fiedler)
        if mask.all() or not mask.any():
            mask = np.zeros(n, bool)
            mask[0] = True
    return mask


# ---------------------------------------------------------------------------


class Particle:
    """One topology sample plus the bookkeeping that ties graph nodes back
    to detections and annotations."""

    def __init__(self, graph: SemanticGraph, rng: np.random.Generator,
                 weight: float):
        self.graph = graph
        self.rng = rng
        self.weight = weight
        self.robot_node: int | None = None
        self.pending = np.zeros(2)       # displacement since the last pose node
        self.obj_nodes: dict = {}        # detection object_id -> node id
        self.hyp_meta: dict = {}         # node id -> HypothesisMeta
        self.applied: dict = {}          # annotation key -> (fig node, lm node|None)
        self.excluded: dict = {}         # annotation key -> set of banned landmark nodes

    def clone_state_from(self, other: "Particle") -> None:
        """Adopt another particle's map and bookkeeping, keeping this slot's
        RNG stream so resampling does not perturb downstream draws."""
        self.graph = other.graph.copy()
        self.robot_node = other.robot_node
        self.pending = other.pending.copy()
        self.obj_nodes = dict(other.obj_nodes)
        self.hyp_meta = dict(other.hyp_meta)
        self.applied = dict(other.applied)
        self.excluded = {k: set(v) for k, v in other.excluded.items()}

    def robot_xy(self) -> np.ndarray:
        return self.graph.node_xy(self.robot_node) + self.pending

    def summary(self) -> dict:
        means = self.graph.solve_means() if self.graph.nodes else {}
        return {
            "weight": self.weight,
            "robot": list(self.robot_xy()),
            "nodes": {
                str(nid): {
                    "kind": node.kind,
                    "label": node.label,
                    "status": node.status,
                    "xy": [float(v) for v in means[nid]],
                }
                for nid, node in sorted(self.graph.nodes.items())
            },
            "regions": {
                str(r.region_id): {
                    "kind": r.kind,
                    "status": r.status,
                    "members": sorted(r.node_ids),
                }
                for r in self.graph.regions.values()
            },
            "edges": sorted(f"{i}-{j}" for i, j in self.graph.edges),
        }


class LanguageMapFilter:
    """The particle set and its step pipeline.

    `visible_fn(robot_xy, target_xy) -> bool` reports whether the sensor
    should currently see a location; it powers the negative-information
    factor for hypothesized objects.  `los_fn(xy_a, xy_b) -> bool` is the
    line-of-sight test used by the segmentation similarity.  Both default
    to permissive stubs so the filter runs without a simulator.
    """

    def __init__(self, config: dict, model: GroundingModel, seed: int = 0,
                 n_particles: int | None = None, visible_fn=None, los_fn=None):
        fc = config["filter"]
        self.fc = fc
        self.model = model
        self.relations = model.relations
        self.label_space = list(config["vocabulary"]["location_types"])
        self.scene_accuracy = float(config["sensor"]["scene_accuracy"])
        self.n = int(n_particles or fc["particles"])
        self.visible_fn = visible_fn
        self.los_fn = los_fn or (lambda a, b: True)
        seeds = np.random.SeedSequence(seed).spawn(self.n + 1)
        self.master = np.random.default_rng(seeds[0])
        self.particles = [
            Particle(self._new_graph(), np.random.default_rng(s), 1.0 / self.n)
            for s in seeds[1:]
        ]
        self.heard: dict = {}     # annotation key -> Annotation, for re-grounding
        self.t = 0

    def _new_graph(self) -> SemanticGraph:
        return SemanticGraph(self.label_space, self.scene_accuracy,
                             self.fc["language_label_strength"])

    def initialize(self, robot_xy) -> None:
        for p in self.particles:
            node = p.graph.add_anchor_pose(robot_xy, self.fc["anchor_sigma"])
            p.robot_node = node.node_id

    # -- step pipeline -------------------------------------------------------

    def step(self, odometry, observation: Observation, annotations=()) -> None:
        """Advance one cycle.  `annotations` are utterances arriving this
        step; they weight the particles once, here, but stay remembered so
        a placement falsified later can be grounded afresh."""
        arriving = list(annotations or [])
        self.heard.update((a.key(), a) for a in arriving)
        active = list(self.heard.values())
        for p in self.particles:
            # likelihoods must condition on the map before this step's
            # mutations, so evaluate them first and apply after
            lik = self._likelihood(p, observation, arriving)
            self._propagate(p, odometry, observation)
            self._apply_language(p, active)
            p.weight *= lik
        self._normalize()
        if effective_count([p.weight for p in self.particles]) < self.n / 2.0:
            self._resample()
        self.t += 1

    def _normalize(self) -> None:
        weights = np.array([p.weight for p in self.particles])
        total = float(weights.sum())
        if not np.isfinite(total) or total <= 0.0:
            raise WeightCollapse(
                f"particle weights degenerate at t={self.t}: "
                f"sum={total!r}, min={weights.min()!r}, max={weights.max()!r}")
        for p in self.particles:
            p.weight /= total

    def _resample(self) -> None:
        weights = [p.weight for p in self.particles]
        u0 = float(self.master.uniform())
        ancestors = systematic_resample(weights, u0)
        # clone every displaced slot before any slot is overwritten, so an
        # ancestor that is itself replaced still copies cleanly
        snapshots = [
            None if self.particles[a] is self.particles[i] else
            self._clone_of(self.particles[a])
            for i, a in enumerate(ancestors)
        ]
        for i, snap in enumerate(snapshots):
            if snap is not None:
                p = self.particles[i]
                p.graph = snap.graph
                p.robot_node = snap.robot_node
                p.pending = snap.pending
                p.obj_nodes = snap.obj_nodes
                p.hyp_meta = snap.hyp_meta
                p.applied = snap.applied
                p.excluded = snap.excluded
            self.particles[i].weight = 1.0 / self.n

    @staticmethod
    def _clone_of(src: Particle) -> Particle:
        clone = Particle(src.graph, src.rng, 0.0)
        clone.clone_state_from(src)
        return clone

    # -- likelihood (against the pre-step map) --------------------------------

    def _likelihood(self, p: Particle, obs: Observation, annotations) -> float:
        robot = p.robot_xy()
        lik = 1.0
        if annotations:
            ctx = GroundingContext.from_graph(p.graph, tuple(robot))
            for ann in annotations:
                lik *= self.model.annotation_likelihood(ctx, ann)
        if obs.scene_label is not None:
            lik *= self._scene_likelihood(p, robot, obs.scene_label)
        if self.visible_fn is not None:
            lik *= self._negative_information(p, robot, obs)
        return lik

    def _scene_likelihood(self, p: Particle, robot, label: str) -> float:
        """Marginal likelihood of the observed scene label under each nearby
        hypothesized spatial region, with a validity latent."""
        acc = self.scene_accuracy
        k = len(self.label_space)
        p_valid = self.fc["validity_prior"]
        out = 1.0
        for rid in p.graph.spatial_regions(status=HYPOTHESIZED):
            centroid = p.graph.region_centroid(rid)
            if np.linalg.norm(centroid - robot) > self.fc["bind_radius"]:
                continue
            mode = p.graph.region_label_mode(rid)
            conditional = acc if label == mode else (1.0 - acc) / max(k - 1, 1)
            out *= p_valid * conditional + (1.0 - p_valid) / k
        return out

    def _negative_information(self, p: Particle, robot, obs: Observation) -> float:
        """A visible hypothesized object that produced no matching detection
        should have been seen if it were real and valid."""
        factor = 1.0 - self.fc["detection_rate"] * self.fc["validity_prior"]
        det_xy = {}
        for d in obs.detections:
            det_xy.setdefault(d.cls, []).append(robot + np.asarray(d.xy))
        out = 1.0
        for nid, meta in p.hyp_meta.items():
            node = p.graph.nodes.get(nid)
            if node is None or node.kind != "object":
                continue
            xy = p.graph.node_xy(nid)
            if not self.visible_fn(tuple(robot), tuple(xy)):
                continue
            explained = any(
                np.linalg.norm(xy - oxy) <= self.fc["bind_radius"]
                for oxy in det_xy.get(node.label, []))
            if not explained:
                out *= factor
        return out

    # -- proposal: motion, detections, topology -------------------------------

    def _propagate(self, p: Particle, odometry, obs: Observation) -> None:
        p.pending = p.pending + np.asarray(odometry, float)
        new_dets = [d for d in obs.detections if d.object_id not in p.obj_nodes]
        add_node = (np.linalg.norm(p.pending) >= self.fc["node_spacing"]
                    or bool(new_dets))
        if add_node:
            cov = np.eye(2) * self.fc["odom_sigma"] ** 2
            node = p.graph.add_pose_node(p.robot_node, tuple(p.pending), cov,
                                         heading=0.0)
            p.robot_node = node.node_id
            p.pending = np.zeros(2)
            self._attach_detections(p, obs)
            if obs.scene_label is not None:
                rid = p.graph.region_of[p.robot_node]
                p.graph.update_region_label(rid, ("scene", obs.scene_label))
            self._segment(p)
        self._prune_inspected(p, obs)

    def _attach_detections(self, p: Particle, obs: Observation) -> None:
        cov = np.eye(2) * self.fc["obs_sigma"] ** 2
        for det in obs.detections:
            known = p.obj_nodes.get(det.object_id)
            if known is not None and known in p.graph.nodes:
                p.graph.add_constraint_edge(p.robot_node, known, det.xy, cov,
                                            "observation")
                node_id = known
            else:
                node = p.graph.add_object_node(p.robot_node, det.xy, cov,
                                               det.cls)
                p.obj_nodes[det.object_id] = node.node_id
                node_id = node.node_id
            # every sighting is a fresh chance to tie the evidence to a
            # same-class hypothesis
            self._match_hypotheses(p, node_id, det.cls)

    def _prune_inspected(self, p: Particle, obs: Observation) -> None:
        """Looking inside a container falsifies 'inside' hypotheses whose
        class is not among the contents; their annotations become eligible
        for re-grounding with this container ruled out."""
        for det in obs.detections:
            if not det.inspected:
                continue
            container = p.obj_nodes.get(det.object_id)
            if container is None:
                continue
            doomed = [
                nid for nid, meta in p.hyp_meta.items()
                if meta.anchor == container and meta.relation == "inside"
                and meta.cls not in det.contents and nid in p.graph.nodes
            ]
            for nid in doomed:
                meta = p.hyp_meta.pop(nid)
                p.graph.remove_node(nid)
                p.excluded.setdefault(meta.key, set()).add(container)
                record = p.applied.get(meta.key)
                if record is not None and nid in record:
                    del p.applied[meta.key]

    def _match_hypotheses(self, p: Particle, node_id: int, cls: str) -> None:
        """CRP draw binding a fresh detection to a compatible hypothesized
        node (weight: how well the observed location satisfies the
        hypothesis' originating constraint) or to none (weight: eta)."""
        candidates = [
            (nid, meta) for nid, meta in p.hyp_meta.items()
            if meta.cls == cls and nid in p.graph.nodes
        ]
        if not candidates:
            return
        observed = p.graph.node_xy(node_id)
        weights = [self._hypothesis_density(p, meta, observed)
                   for _, meta in candidates]
        probs = crp_probabilities(weights, self.fc["dp_concentration"])
        pick = int(p.rng.choice(len(probs), p=probs))
        if pick == len(candidates):
            return
        self._bind(p, candidates[pick][0], node_id)

    def _hypothesis_density(self, p: Particle, meta: HypothesisMeta,
                            xy) -> float:
        rel = self.relations.get(meta.relation)
        if meta.anchor is not None and meta.anchor in p.graph.nodes:
            anchor = p.graph.node_xy(meta.anchor)
        else:
            anchor = np.asarray(meta.robot_xy)
        if meta.inverse:
            mean, cov = rel.inverse_mean_cov(meta.robot_xy, anchor)
            d = np.asarray(xy) - mean
            val = float(np.exp(-0.5 * d @ np.linalg.solve(cov, d)))
        else:
            val = rel.density_ratio(xy, meta.robot_xy, anchor)
        return max(val, self.fc["eps_lang"])

    def _bind(self, p: Particle, hyp_id: int, node_id: int) -> None:
        """Replace a hypothesized node with its observed counterpart.

        The hypothesis' own placement constraint is superseded by the real
        observation and dropped with the node.  Annotations that hung off
        the hypothesis are re-evaluated: dependent figures get a fresh
        relation draw anchored at the real landmark, and an annotation
        whose observed figure pointed at the hypothesis regains its
        displacement constraint against the real node.
        """
        meta = p.hyp_meta.pop(hyp_id)
        dependents = [nid for nid, m in p.hyp_meta.items()
                      if m.anchor == hyp_id]
        p.graph.remove_node(hyp_id)
        for key, record in list(p.applied.items()):
            if hyp_id in record:
                p.applied[key] = tuple(node_id if r == hyp_id else r
                                       for r in record)
        for nid in dependents:
            m = replace(p.hyp_meta[nid], anchor=node_id)
            p.hyp_meta[nid] = m
            self._refresh_placement(p, nid, m)
        if meta.role == "landmark" and meta.inverse and \
                meta.anchor in p.graph.nodes:
            # observed figure, now observed landmark: keep the relation as
            # a soft displacement between the real pair
            fig = meta.anchor
            rel = self.relations.get(meta.relation)
            lm_xy = p.graph.node_xy(node_id)
            mean, cov = rel.mean_cov(meta.robot_xy, lm_xy)
            p.graph.add_constraint_edge(node_id, fig, tuple(mean - lm_xy),
                                        cov, "language")

    def _refresh_placement(self, p: Particle, fig_node: int,
                           meta: HypothesisMeta) -> None:
        """Redraw a dependent hypothesis' placement relative to the node
        its landmark resolved to."""
        rel = self.relations.get(meta.relation)
        lm_xy = p.graph.node_xy(meta.anchor)
        xy = rel.sample(p.rng, meta.robot_xy, lm_xy)
        _, cov = rel.mean_cov(meta.robot_xy, lm_xy)
        p.graph.remove_language_between(meta.anchor, fig_node)
        p.graph.add_constraint_edge(meta.anchor, fig_node,
                                    tuple(np.asarray(xy) - lm_xy), cov,
                                    "language")
        p.graph.reset_prior(fig_node, tuple(xy),
                            np.eye(2) * self.fc["hyp_init_cov"])

    # -- segmentation and region edges ----------------------------------------

    def _segment(self, p: Particle) -> None:
        rid = p.graph.region_of[p.robot_node]
        members = list(p.graph.regions[rid].node_ids)
        if len(members) < self.fc["min_region_nodes"]:
            return
        means = p.graph.solve_means()
        xy = np.array([means[m] for m in members])
        sim = self._similarity(xy)
        mask = spectral_bisection(sim)
        n_cut = normalized_cut(sim, mask)
        if p.rng.uniform() >= segmentation_probability(n_cut, self.fc["alpha_seg"]):
            return
        newest = members.index(p.robot_node)
        moved_mask = ~mask if mask[newest] else mask
        moved = [m for m, flag in zip(members, moved_mask) if flag]
        if not moved or len(moved) == len(members):
            return
        new_region = p.graph.split_region(rid, moved)
        self._propose_region_edges(p, new_region.region_id)

    def _similarity(self, xy: np.ndarray) -> np.ndarray:
        sigma = self.fc["similarity_sigma"]
        diff = xy[:, None, :] - xy[None, :, :]
        dist2 = np.einsum("ijk,ijk->ij", diff, diff)
        sim = np.exp(-0.5 * dist2 / sigma**2)
        n = len(xy)
        for i in range(n):
            for j in range(i + 1, n):
                if not self.los_fn(tuple(xy[i]), tuple(xy[j])):
                    sim[i, j] = sim[j, i] = 0.0
        np.fill_diagonal(sim, 0.0)
        return sim

    def _propose_region_edges(self, p: Particle, new_rid: int) -> None:
        cov = np.eye(2) * self.fc["region_edge_sigma"] ** 2
        added = []
        for other in p.graph.spatial_regions():
            if other == new_rid or other not in p.graph.regions:
                continue
            d = p.graph.region_distance(new_rid, other)
            prob = edge_probability(d, self.fc["gamma_edge"],
                                    self.fc["edge_distance_mu"],
                                    self.fc["edge_distance_sigma"])
            if p.rng.uniform() >= prob:
                continue
            a = self._medoid(p, new_rid)
            b = self._medoid(p, other)
            if (min(a, b), max(a, b)) in p.graph.edges:
                added.append(other)
                continue
            mean = p.graph.node_xy(b) - p.graph.node_xy(a)
            p.graph.add_constraint_edge(a, b, tuple(mean), cov, "region")
            added.append(other)
        merged_into = new_rid
        for other in added:
            if other not in p.graph.regions or merged_into not in p.graph.regions:
                break
            if p.graph.region_label_mode(other) != p.graph.region_label_mode(merged_into):
                continue
            if p.graph.region_distance(other, merged_into) >= self.fc["merge_radius"]:
                continue
            merged_into = p.graph.merge_regions(merged_into, other)

    def _medoid(self, p: Particle, rid: int) -> int:
        members = p.graph.regions[rid].node_ids
        centroid = p.graph.region_centroid(rid)
        means = p.graph.solve_means()
        return min(members,
                   key=lambda m: (float(np.linalg.norm(means[m] - centroid)), m))

    # -- language proposals ----------------------------------------------------

    def _apply_language(self, p: Particle, annotations) -> None:
        for ann in annotations:
            key = ann.key()
            record = p.applied.get(key)
            if record is not None and all(
                    r is None or r in p.graph.nodes for r in record):
                continue
            self._ground_annotation(p, ann)

    def _figure_candidates(self, p: Particle, cls: str) -> list:
        if self.model.vocab.is_location(cls):
            out = []
            for rid in p.graph.spatial_regions(status=OBSERVED):
                if p.graph.region_label_mode(rid) == cls:
                    out.append(self._medoid(p, rid))
            return sorted(out)
        return sorted(p.graph.objects_by_class(cls, status=OBSERVED))

    def _ground_annotation(self, p: Particle, ann: Annotation) -> None:
        key = ann.key()
        eta = self.fc["dp_concentration"]
        eps = self.fc["eps_lang"]
        robot = p.robot_xy()
        rel = self.relations.get(ann.relation)
        figures = self._figure_candidates(p, ann.figure_class)
        banned = p.excluded.get(key, set())
        landmarks = []
        if ann.landmark_class is not None:
            landmarks = [n for n in self._figure_candidates(p, ann.landmark_class)
                         if n not in banned]

        pairs = []   # (fig node | None, lm node | None), None means new
        weights = []
        if ann.landmark_class is None:
            for f in figures:
                pairs.append((f, None))
                weights.append(max(rel.density_ratio(
                    p.graph.node_xy(f), robot), eps))
            pairs.append((None, None))
            weights.append(eta)
        else:
            for f in figures:
                fx = p.graph.node_xy(f)
                for l in landmarks:
                    if l == f:
                        continue
                    pairs.append((f, l))
                    weights.append(max(rel.density_ratio(
                        fx, robot, p.graph.node_xy(l)), eps))
                pairs.append((f, None))
                weights.append(eta)
            for l in landmarks:
                pairs.append((None, l))
                weights.append(eta)
            pairs.append((None, None))
            weights.append(eta * eta)
        probs = np.asarray(weights, float)
        fig, lm = pairs[int(p.rng.choice(len(pairs), p=probs / probs.sum()))]

        fig_new = fig is None
        lm_new = ann.landmark_class is not None and lm is None
        if lm_new:
            lm = self._place_landmark(p, ann, fig, robot)
        if fig_new:
            fig = self._place_figure(p, ann, lm, robot)
        elif not lm_new and lm is not None:
            # both pre-existed: the relation still constrains their displacement
            lm_xy = p.graph.node_xy(lm)
            mean, cov = rel.mean_cov(robot, lm_xy)
            p.graph.add_constraint_edge(lm, fig, tuple(mean - lm_xy), cov,
                                        "language")
        p.applied[key] = (fig, lm)

    def _hyp_node(self, p: Particle, cls: str, xy, key: str):
        if self.model.vocab.is_location(cls):
            return p.graph.add_hypothesis_node(
                tuple(xy), self.fc["hyp_init_cov"], cls, source=key,
                kind="spatial", label=cls)
        return p.graph.add_hypothesis_node(
            tuple(xy), self.fc["hyp_init_cov"], cls, source=key, kind="object")

    def _place_landmark(self, p: Particle, ann: Annotation, fig: int | None,
                        robot) -> int:
        """Hypothesize the landmark: behind the figure's relation when the
        figure is already known, else from the robot-centric prior."""
        key = ann.key()
        if fig is not None:
            rel = self.relations.get(ann.relation)
            mean, cov = rel.inverse_mean_cov(robot, p.graph.node_xy(fig))
            xy = p.rng.multivariate_normal(mean, cov)
            node = self._hyp_node(p, ann.landmark_class, xy, key)
            meta = HypothesisMeta(key, ann.relation, fig, tuple(robot),
                                  ann.landmark_class, role="landmark",
                                  inverse=True)
        else:
            prior = self.relations.get("unknown")
            xy = prior.sample(p.rng, robot)
            node = self._hyp_node(p, ann.landmark_class, xy, key)
            meta = HypothesisMeta(key, "unknown", None, tuple(robot),
                                  ann.landmark_class, role="landmark")
        p.hyp_meta[node.node_id] = meta
        anchor = fig if fig is not None else p.robot_node
        cov_edge = np.eye(2) * self.fc["hyp_init_cov"]
        if meta.inverse:
            _, cov_edge = self.relations.get(ann.relation).inverse_mean_cov(
                robot, p.graph.node_xy(anchor))
        p.graph.add_constraint_edge(
            anchor, node.node_id,
            tuple(np.asarray(xy) - p.graph.node_xy(anchor)),
            cov_edge, "language")
        return node.node_id

    def _place_figure(self, p: Particle, ann: Annotation, lm: int | None,
                      robot) -> int:
        key = ann.key()
        rel = self.relations.get(ann.relation)
        if lm is not None:
            lm_xy = p.graph.node_xy(lm)
            lm_points = None
            rid = p.graph.region_of.get(lm)
            if rid is not None and p.graph.regions[rid].kind == "spatial":
                lm_points = p.graph.region_nodes_xy(rid)
            xy = rel.sample(p.rng, robot, lm_xy, lm_points)
            _, cov = rel.mean_cov(robot, lm_xy, lm_points)
            node = self._hyp_node(p, ann.figure_class, xy, key)
            p.graph.add_constraint_edge(lm, node.node_id,
                                        tuple(np.asarray(xy) - lm_xy), cov,
                                        "language")
            meta = HypothesisMeta(key, ann.relation, lm, tuple(robot),
                                  ann.figure_class)
        else:
            prior = self.relations.get("unknown")
            xy = prior.sample(p.rng, robot)
            _, cov = prior.mean_cov(robot)
            node = self._hyp_node(p, ann.figure_class, xy, key)
            p.graph.add_constraint_edge(
                p.robot_node, node.node_id,
                tuple(np.asarray(xy) - p.graph.node_xy(p.robot_node)), cov,
                "language")
            meta = HypothesisMeta(key, "unknown", None, tuple(robot),
                                  ann.figure_class)
        p.hyp_meta[node.node_id] = meta
        return node.node_id

    # -- queries ----------------------------------------------------------------

    def weights(self) -> list:
        return [p.weight for p in self.particles]

    def snapshot(self) -> dict:
        return {
            "t": self.t,
            "particles": [p.summary() for p in self.particles],
        }

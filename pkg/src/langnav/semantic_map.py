"""Hybrid semantic graph: topology, metric pose layer, and region labels.

A graph holds nodes (robot poses and objects) partitioned into regions
(spatial regions group pose nodes, object regions typically hold one object
node).  The metric layer keeps a Gaussian over all 2-D node positions in
information (canonical) form: a sparse information matrix Lambda and vector
eta assembled from displacement and prior factors.  Means solve
Lambda x = eta, and marginal covariances are the corresponding blocks of the
inverse.  Off-diagonal blocks of Lambda are nonzero exactly where edges
couple nodes, so the matrix stays sparse.  Headings are dead-reckoned by the
caller and stored per pose node for linearization; the position constraints
themselves are linear-Gaussian, so no relinearization is needed.

Graphs are copied structurally (nodes and factors are immutable and shared),
which keeps particle resampling cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    InvalidCovariance,
    MergeRefused,
    SelfLoop,
    SingularSystem,
    UnknownLabel,
)

OBSERVED = "observed"
HYPOTHESIZED = "hypothesized"


@dataclass(frozen=True)
class Node:
    node_id: int
    kind: str                  # "pose" | "object"
    label: str | None = None   # object class for object nodes
    status: str = OBSERVED
    source: str | None = None  # detection id or hypothesis signature
    heading: float = 0.0       # dead-reckoned, pose nodes only


@dataclass(frozen=True)
class Edge:
    i: int
    j: int
    kind: str  # "odometry" | "observation" | "language" | "region"


@dataclass(frozen=True)
class PriorFactor:
    node: int
    mean: tuple
    cov: tuple  # ((a,b),(c,d)); kept hashable so factors can be shared


@dataclass(frozen=True)
class DisplacementFactor:
    i: int
    j: int
    mean: tuple  # measured x_j - x_i
    cov: tuple
    kind: str


@dataclass(frozen=True)
class Region:
    region_id: int
    kind: str                  # "spatial" | "object"
    node_ids: tuple
    status: str = OBSERVED
    label: str | None = None   # object class for object regions


def _check_cov(cov) -> tuple:
    c = np.asarray(cov, dtype=float)
    if c.shape != (2, 2):
        raise InvalidCovariance(f"covariance must be 2x2, got {c.shape}")
    if not np.allclose(c, c.T, atol=1e-12):
        raise InvalidCovariance("covariance must be symmetric")
    eig = np.linalg.eigvalsh(c)
    if eig[0] <= 0.0:
        raise InvalidCovariance(f"covariance must be positive definite, eigs {eig}")
    return tuple(map(tuple, c))


class SemanticGraph:
    def __init__(self, label_space: list[str], scene_accuracy: float = 0.8,
                 language_strength: float = 0.3):
        self.nodes: dict[int, Node] = {}
        self.regions: dict[int, Region] = {}
        self.region_of: dict[int, int] = {}
        self.edges: dict[tuple, Edge] = {}
        self.priors: list[PriorFactor] = []
        self.displacements: list[DisplacementFactor] = []
        self.label_space = list(label_space)
        self.scene_accuracy = float(scene_accuracy)
        self.language_strength = float(language_strength)
        # semantic layer: region_id -> list of ("scene", label) / ("lang", label, phi)
        self.label_factors: dict[int, tuple] = {}
        self._next_node = 0
        self._next_region = 0
        self._cache: dict = {}

    # ------------------------------------------------------------------
    # structure

    def copy(self) -> "SemanticGraph":
        g = SemanticGraph.__new__(SemanticGraph)
        g.nodes = dict(self.nodes)
        g.regions = dict(self.regions)
        g.region_of = dict(self.region_of)
        g.edges = dict(self.edges)
        g.priors = list(self.priors)
        g.displacements = list(self.displacements)
        g.label_space = self.label_space
        g.scene_accuracy = self.scene_accuracy
        g.language_strength = self.language_strength
        g.label_factors = dict(self.label_factors)
        g._next_node = self._next_node
        g._next_region = self._next_region
        g._cache = {}
        return g

    def _invalidate(self):
        self._cache.clear()

    def pose_nodes(self) -> list[int]:
        return [n.node_id for n in self.nodes.values() if n.kind == "pose"]

    def object_nodes(self) -> list[int]:
        return [n.node_id for n in self.nodes.values() if n.kind == "object"]

    def _new_node(self, **kw) -> Node:
        node = Node(node_id=self._next_node, **kw)
        self._next_node += 1
        self.nodes[node.node_id] = node
        return node

    def _new_region(self, kind: str, node_ids, status=OBSERVED, label=None) -> Region:
        region = Region(self._next_region, kind, tuple(node_ids), status, label)
        self._next_region += 1
        self.regions[region.region_id] = region
        for nid in node_ids:
            self.region_of[nid] = region.region_id
        self.label_factors.setdefault(region.region_id, ())
        return region

    def _edge_key(self, i: int, j: int) -> tuple:
        if i == j:
            raise SelfLoop(f"edge endpoints must differ, got node {i} twice")
        return (i, j) if i < j else (j, i)

    def add_anchor_pose(self, xy, sigma: float, heading: float = 0.0) -> Node:
        """First pose node, tied to the world frame by a tight prior."""
        node = self._new_node(kind="pose", heading=heading)
        cov = _check_cov(np.eye(2) * sigma**2)
        self.priors.append(PriorFactor(node.node_id, tuple(np.asarray(xy, float)), cov))
        self._new_region("spatial", [node.node_id])
        self._invalidate()
        return node

    def add_pose_node(self, prev_pose: int, world_disp, cov, heading: float) -> Node:
        """Append a pose, chained to the previous one by an odometry factor."""
        node = self._new_node(kind="pose", heading=heading)
        self.add_constraint_edge(prev_pose, node.node_id, world_disp, cov, "odometry")
        region_id = self.region_of[prev_pose]
        region = self.regions[region_id]
        self.regions[region_id] = replace(region, node_ids=region.node_ids + (node.node_id,))
        self.region_of[node.node_id] = region_id
        return node

    def add_object_node(self, from_node: int, world_disp, cov, cls: str,
                        status: str = OBSERVED, source: str | None = None) -> Node:
        """Object landed by a displacement measurement from an existing node."""
        node = self._new_node(kind="object", label=cls, status=status, source=source)
        kind = "observation" if status == OBSERVED else "language"
        self.add_constraint_edge(from_node, node.node_id, world_disp, cov, kind)
        self._new_region("object", [node.node_id], status=status, label=cls)
        return node

    def add_hypothesis_node(self, xy, init_cov: float, cls: str, source: str,
                            kind: str = "object", label: str | None = None) -> Node:
        """Free-floating hypothesized node held down by a broad prior."""
        node = self._new_node(kind="object" if kind == "object" else "pose",
                              label=cls if kind == "object" else None,
                              status=HYPOTHESIZED, source=source)
        cov = _check_cov(np.eye(2) * float(init_cov))
        self.priors.append(PriorFactor(node.node_id, tuple(np.asarray(xy, float)), cov))
        if kind == "object":
            self._new_region("object", [node.node_id], status=HYPOTHESIZED, label=cls)
        else:
            region = self._new_region("spatial", [node.node_id], status=HYPOTHESIZED)
            if label is not None:
                self.add_label_factor(region.region_id, ("lang", label, True))
        self._invalidate()
        return node

    def add_constraint_edge(self, i: int, j: int, mean, cov, kind: str) -> Edge:
        if i not in self.nodes or j not in self.nodes:
            raise KeyError(f"unknown node in edge ({i}, {j})")
        key = self._edge_key(i, j)
        cov_t = _check_cov(cov)
        if key != (i, j):  # store factors in canonical node order
            i, j = j, i
            mean = -np.asarray(mean, float)
        self.displacements.append(
            DisplacementFactor(i, j, tuple(np.asarray(mean, float)), cov_t, kind)
        )
        edge = Edge(*key, kind=kind)
        self.edges.setdefault(key, edge)
        self._invalidate()
        return edge

    def add_prior(self, node: int, mean, cov) -> None:
        self.priors.append(PriorFactor(node, tuple(np.asarray(mean, float)), _check_cov(cov)))
        self._invalidate()

    def remove_node(self, node_id: int) -> None:
        """Drop a node with its factors, edges, and (if emptied) its region."""
        self.nodes.pop(node_id)
        self.priors = [f for f in self.priors if f.node != node_id]
        self.displacements = [f for f in self.displacements
                              if f.i != node_id and f.j != node_id]
        self.edges = {k: e for k, e in self.edges.items() if node_id not in k}
        region_id = self.region_of.pop(node_id)
        region = self.regions[region_id]
        remaining = tuple(n for n in region.node_ids if n != node_id)
        if remaining:
            self.regions[region_id] = replace(region, node_ids=remaining)
        else:
            self.regions.pop(region_id)
            self.label_factors.pop(region_id, None)
        self._invalidate()

    def remove_language_between(self, i: int, j: int) -> None:
        """Drop the language factors linking a pair, keeping other kinds."""
        key = self._edge_key(i, j)
        self.displacements = [
            f for f in self.displacements
            if not (f.kind == "language" and self._edge_key(f.i, f.j) == key)
        ]
        if key in self.edges and not any(
                self._edge_key(f.i, f.j) == key for f in self.displacements):
            self.edges.pop(key)
        self._invalidate()

    def reset_prior(self, node: int, mean, cov) -> None:
        """Replace a node's position priors with a single fresh one."""
        self.priors = [f for f in self.priors if f.node != node]
        self.add_prior(node, mean, cov)

    def reattach_language(self, old_node: int, new_node: int) -> None:
        """Re-point language factors from a hypothesized node to a real one."""
        moved = []
        for f in self.displacements:
            if f.kind == "language" and old_node in (f.i, f.j):
                i, j = f.i, f.j
                mean = np.asarray(f.mean, float)
                if i == old_node:
                    i = new_node
                else:
                    j = new_node
                if i == j:
                    continue
                moved.append((i, j, mean, f.cov))
        self.displacements = [f for f in self.displacements
                              if not (f.kind == "language" and old_node in (f.i, f.j))]
        self.edges = {k: e for k, e in self.edges.items()
                      if not (e.kind == "language" and old_node in k)}
        for i, j, mean, cov in moved:
            self.add_constraint_edge(i, j, mean, cov, "language")
        self._invalidate()

    # ------------------------------------------------------------------
    # metric layer

    def _index(self) -> dict[int, int]:
        if "index" not in self._cache:
            self._cache["index"] = {nid: k for k, nid in enumerate(sorted(self.nodes))}
        return self._cache["index"]

    def information_form(self):
        """Assemble (Lambda, eta) from the stored factors."""
        if "info" in self._cache:
            return self._cache["info"]
        index = self._index()
        n = len(index)
        eta = np.zeros(2 * n)
        rows, cols, vals = [], [], []

        def add_block(bi, bj, block):
            for a in range(2):
                for b in range(2):
                    rows.append(2 * bi + a)
                    cols.append(2 * bj + b)
                    vals.append(block[a, b])

        for f in self.priors:
            info = np.linalg.inv(np.asarray(f.cov))
            k = index[f.node]
            add_block(k, k, info)
            eta[2 * k:2 * k + 2] += info @ np.asarray(f.mean)
        for f in self.displacements:
            info = np.linalg.inv(np.asarray(f.cov))
            bi, bj = index[f.i], index[f.j]
            z = np.asarray(f.mean)
            add_block(bi, bi, info)
            add_block(bj, bj, info)
            add_block(bi, bj, -info)
            add_block(bj, bi, -info)
            eta[2 * bi:2 * bi + 2] += -info @ z
            eta[2 * bj:2 * bj + 2] += info @ z
        lam = sp.csc_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n))
        self._cache["info"] = (lam, eta)
        return lam, eta

    def _check_anchored(self):
        anchored = {f.node for f in self.priors}
        parent = {nid: nid for nid in self.nodes}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for f in self.displacements:
            parent[find(f.i)] = find(f.j)
        roots = {find(a) for a in anchored}
        for nid in self.nodes:
            if find(nid) not in roots:
                raise SingularSystem(f"node {nid} is not constrained to any anchor")

    def _solver(self):
        if "solver" not in self._cache:
            self._check_anchored()
            lam, _ = self.information_form()
            try:
                self._cache["solver"] = spla.splu(lam)
            except RuntimeError as exc:
                raise SingularSystem(str(exc)) from exc
        return self._cache["solver"]

    def solve_means(self) -> dict[int, np.ndarray]:
        """MAP position for every node: the solution of Lambda x = eta."""
        if "means" not in self._cache:
            _, eta = self.information_form()
            x = self._solver().solve(eta)
            index = self._index()
            self._cache["means"] = {nid: x[2 * k:2 * k + 2] for nid, k in index.items()}
        return self._cache["means"]

    def node_xy(self, node_id: int) -> np.ndarray:
        return self.solve_means()[node_id]

    def marginal_covariance(self, node_id: int) -> np.ndarray:
        index = self._index()
        k = index[node_id]
        n = len(index)
        rhs = np.zeros((2 * n, 2))
        rhs[2 * k, 0] = 1.0
        rhs[2 * k + 1, 1] = 1.0
        cols = self._solver().solve(rhs)
        return cols[2 * k:2 * k + 2, :]

    # ------------------------------------------------------------------
    # regions

    def region_nodes_xy(self, region_id: int) -> np.ndarray:
        means = self.solve_means()
        return np.array([means[n] for n in self.regions[region_id].node_ids])

    def region_centroid(self, region_id: int) -> np.ndarray:
        return self.region_nodes_xy(region_id).mean(axis=0)

    def region_distance(self, a: int, b: int) -> float:
        return float(np.linalg.norm(self.region_centroid(a) - self.region_centroid(b)))

    def split_region(self, region_id: int, new_member_ids) -> Region:
        """Move the given members out into a fresh region of the same kind."""
        region = self.regions[region_id]
        new_members = tuple(new_member_ids)
        if not new_members or not set(new_members) < set(region.node_ids):
            raise ValueError("split must take a proper nonempty subset of members")
        keep = tuple(n for n in region.node_ids if n not in set(new_members))
        self.regions[region_id] = replace(region, node_ids=keep)
        new_region = self._new_region(region.kind, new_members, status=region.status)
        # scene evidence gathered so far described the joint extent; keep it
        # on both halves rather than guessing an attribution
        self.label_factors[new_region.region_id] = self.label_factors.get(region_id, ())
        return new_region

    def regions_adjacent(self, a: int, b: int) -> bool:
        nodes_a = set(self.regions[a].node_ids)
        nodes_b = set(self.regions[b].node_ids)
        return any((i in nodes_a and j in nodes_b) or (i in nodes_b and j in nodes_a)
                   for (i, j) in self.edges)

    def merge_regions(self, a: int, b: int) -> int:
        """Fold region b's members into a (or a into b: the elder id wins)."""
        if a == b:
            raise MergeRefused("cannot merge a region with itself")
        ra, rb = self.regions[a], self.regions[b]
        if ra.kind != rb.kind:
            raise MergeRefused(f"region kinds differ: {ra.kind} vs {rb.kind}")
        if not self.regions_adjacent(a, b):
            raise MergeRefused("regions are not connected by any edge")
        if ra.kind == "spatial" and self.region_label_mode(a) != self.region_label_mode(b):
            raise MergeRefused("label posterior modes differ")
        keep, drop = (a, b) if a < b else (b, a)
        rk, rd = self.regions[keep], self.regions[drop]
        status = OBSERVED if OBSERVED in (rk.status, rd.status) else HYPOTHESIZED
        self.regions[keep] = replace(rk, node_ids=rk.node_ids + rd.node_ids, status=status)
        for nid in rd.node_ids:
            self.region_of[nid] = keep
        self.label_factors[keep] = self.label_factors.get(keep, ()) + \
            self.label_factors.get(drop, ())
        self.regions.pop(drop)
        self.label_factors.pop(drop, None)
        return keep

    # ------------------------------------------------------------------
    # semantic layer

    def add_label_factor(self, region_id: int, factor: tuple) -> None:
        kind = factor[0]
        label = factor[1]
        if kind not in ("scene", "lang"):
            raise UnknownLabel(f"unknown label factor kind: {kind}")
        if label not in self.label_space:
            raise UnknownLabel(f"label {label!r} not in label space")
        self.label_factors[region_id] = self.label_factors.get(region_id, ()) + (factor,)

    def region_label_posterior(self, region_id: int) -> dict[str, float]:
        """Categorical posterior over the label space for a spatial region."""
        region = self.regions[region_id]
        if region.kind == "object":
            return {region.label: 1.0}
        k = len(self.label_space)
        post = np.full(k, 1.0 / k)
        acc = self.scene_accuracy
        rho = self.language_strength
        for factor in self.label_factors.get(region_id, ()):
            if factor[0] == "scene":
                obs = factor[1]
                lik = np.full(k, (1.0 - acc) / max(k - 1, 1))
                lik[self.label_space.index(obs)] = acc
            else:
                _, label, phi = factor
                lik = np.ones(k)
                if phi:
                    lik[:] = rho
                    lik[self.label_space.index(label)] = 1.0
                else:
                    lik[self.label_space.index(label)] = rho
            post = post * lik
            total = post.sum()
            if total <= 0.0:
                post = np.full(k, 1.0 / k)
            else:
                post = post / total
        return dict(zip(self.label_space, post.tolist()))

    def region_label_mode(self, region_id: int) -> str:
        post = self.region_label_posterior(region_id)
        # deterministic: highest mass, label-space order breaks ties
        best = max(post.values())
        for label in (self.label_space if self.regions[region_id].kind == "spatial"
                      else post):
            if post.get(label, 0.0) == best:
                return label
        raise UnknownLabel("empty posterior")

    def update_region_label(self, region_id: int, factor: tuple) -> dict[str, float]:
        if region_id not in self.regions:
            raise KeyError(f"unknown region {region_id}")
        if self.regions[region_id].kind != "spatial":
            raise UnknownLabel("label updates apply to spatial regions")
        self.add_label_factor(region_id, factor)
        return self.region_label_posterior(region_id)

    # ------------------------------------------------------------------

    def spatial_regions(self, status=None) -> list[int]:
        return [r.region_id for r in self.regions.values()
                if r.kind == "spatial" and (status is None or r.status == status)]

    def object_regions(self, status=None) -> list[int]:
        return [r.region_id for r in self.regions.values()
                if r.kind == "object" and (status is None or r.status == status)]

    def objects_by_class(self, cls: str, status=None) -> list[int]:
        return [n.node_id for n in self.nodes.values()
                if n.kind == "object" and n.label == cls
                and (status is None or n.status == status)]

    def hypothesized_nodes(self) -> list[int]:
        return [n.node_id for n in self.nodes.values() if n.status == HYPOTHESIZED]

    def stats(self) -> dict:
        return {
            "nodes": len(self.nodes),
            "regions": len(self.regions),
            "edges": len(self.edges),
            "hypothesized": len(self.hypothesized_nodes()),
        }

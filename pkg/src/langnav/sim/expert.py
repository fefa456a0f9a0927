"""Ground-truth oracle policy used in place of human demonstrations.

The expert sees the true map and the goal.  It stops inside the success
radius; otherwise it picks the candidate action minimizing the executed
path length plus the true shortest remaining distance from the target to
the goal, computed from a Dijkstra distance field on the planning grid.
"""

from __future__ import annotations

import heapq

import numpy as np

from .motion import _NEIGHBORS, get_grid, path_length


class DistanceField:
    """Shortest grid distance (m) from every free cell to the goal."""

    def __init__(self, env, goal_xy, resolution: float = 0.25,
                 robot_radius: float = 0.3):
        grid = get_grid(env, resolution, robot_radius)
        self.grid = grid
        dist = np.full((grid.nx, grid.ny), np.inf)
        start = grid.nearest_free(grid.cell_of(goal_xy))
        dist[start] = 0.0
        heap = [(0.0, start)]
        blocked = grid.blocked
        while heap:
            d, (ci, cj) = heapq.heappop(heap)
            if d > dist[ci, cj]:
                continue
            for di, dj, step in _NEIGHBORS:
                i, j = ci + di, cj + dj
                if not (0 <= i < grid.nx and 0 <= j < grid.ny) or blocked[i, j]:
                    continue
                if di and dj and (blocked[ci + di, cj] or blocked[ci, cj + dj]):
                    continue
                cand = d + step
                if cand < dist[i, j]:
                    dist[i, j] = cand
                    heapq.heappush(heap, (cand, (i, j)))
        self.dist = dist * grid.resolution

    def at(self, xy) -> float:
        cell = self.grid.cell_of(xy)
        if not self.grid.free(cell):
            cell = self.grid.nearest_free(cell)
        return float(self.dist[cell])


def expert_action(pose, actions, goal, field: DistanceField,
                  ready: bool = True):
    """Index of the expert's pick in `actions`, or None when every
    navigation target is unreachable and the goal is still far.

    `ready` gates the stop: a retrieval goal keeps driving at the goal
    ring until its figure has been uncovered."""
    pose = np.asarray(pose, float)
    if ready and \
            float(np.linalg.norm(pose - np.asarray(goal.xy))) <= goal.radius:
        for idx, action in enumerate(actions):
            if action.is_stop():
                return idx
        return None
    scored = []
    for idx, action in enumerate(actions):
        if action.is_stop():
            continue
        remaining = field.at(action.target_xy)
        if not np.isfinite(remaining):
            continue
        scored.append((path_length(action.path) + remaining,
                       remaining, idx))
    if not scored:
        return None
    # every waypoint on the shortest route ties in through-cost, so
    # break near-ties (one grid cell) toward the deepest one
    low = min(s[0] for s in scored)
    eps = field.grid.resolution
    return min((s for s in scored if s[0] <= low + eps),
               key=lambda s: (s[1], s[2]))[2]

"""Grid path planning on the known floor plan and incremental motion.

Planning runs on an 8-connected occupancy grid built from the wall
segments, inflated by the robot radius, then greedily smoothed with
clearance-checked shortcuts.  Motion advances one fixed increment toward
a waypoint; odometry reports the true displacement plus Gaussian noise.
The robot never crosses walls: a crossing increment raises PathBlocked.
"""

from __future__ import annotations

import heapq

import numpy as np

from ..errors import NoPath, PathBlocked
from .geometry import point_segment_distance, segment_segment_distance

_SQRT2 = float(np.sqrt(2.0))
_NEIGHBORS = ((1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
              (1, 1, _SQRT2), (1, -1, _SQRT2), (-1, 1, _SQRT2),
              (-1, -1, _SQRT2))


class Grid:
    """Occupancy grid over the environment bounds."""

    def __init__(self, env, resolution: float, robot_radius: float):
        self.resolution = float(resolution)
        xmin, ymin, xmax, ymax = env.bounds
        self.xmin = xmin
        self.ymin = ymin
        self.nx = int(np.ceil((xmax - xmin) / resolution))
        self.ny = int(np.ceil((ymax - ymin) / resolution))
        xs = xmin + (np.arange(self.nx) + 0.5) * resolution
        ys = ymin + (np.arange(self.ny) + 0.5) * resolution
        blocked = np.zeros((self.nx, self.ny), bool)
        pad = robot_radius
        for a, b in env.walls:
            lo = np.minimum(a, b) - (pad + resolution)
            hi = np.maximum(a, b) + (pad + resolution)
            ix = np.where((xs >= lo[0]) & (xs <= hi[0]))[0]
            iy = np.where((ys >= lo[1]) & (ys <= hi[1]))[0]
            for i in ix:
                for j in iy:
                    if point_segment_distance((xs[i], ys[j]), a, b) <= pad:
                        blocked[i, j] = True
        self.blocked = blocked
        self.walls = env.walls
        self.robot_radius = robot_radius

    def cell_of(self, p) -> tuple:
        i = int((p[0] - self.xmin) / self.resolution)
        j = int((p[1] - self.ymin) / self.resolution)
        return (min(max(i, 0), self.nx - 1), min(max(j, 0), self.ny - 1))

    def center(self, cell) -> tuple:
        return (self.xmin + (cell[0] + 0.5) * self.resolution,
                self.ymin + (cell[1] + 0.5) * self.resolution)

    def free(self, cell) -> bool:
        return not self.blocked[cell[0], cell[1]]

    def nearest_free(self, cell, max_radius: int = 12) -> tuple:
        if self.free(cell):
            return cell
        for r in range(1, max_radius + 1):
            ring = []
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    if max(abs(di), abs(dj)) != r:
                        continue
                    i, j = cell[0] + di, cell[1] + dj
                    if 0 <= i < self.nx and 0 <= j < self.ny and \
                            not self.blocked[i, j]:
                        ring.append((di * di + dj * dj, i, j))
            if ring:
                ring.sort()
                return (ring[0][1], ring[0][2])
        raise NoPath("no free cell near the requested point")

    def clear_segment(self, a, b) -> bool:
        """Segment stays at least one robot radius from every wall."""
        margin = self.robot_radius * 0.99
        for w1, w2 in self.walls:
            if segment_segment_distance(a, b, w1, w2) < margin:
                return False
        return True


_GRID_CACHE: dict = {}


def get_grid(env, resolution: float = 0.25, robot_radius: float = 0.3) -> Grid:
    key = (env.template, env.seed, env.bounds, len(env.walls),
           resolution, robot_radius)
    grid = _GRID_CACHE.get(key)
    if grid is None:
        grid = Grid(env, resolution, robot_radius)
        if len(_GRID_CACHE) > 64:
            _GRID_CACHE.clear()
        _GRID_CACHE[key] = grid
    return grid


def _astar(grid: Grid, start: tuple, goal: tuple) -> list:
    if start == goal:
        return [start]
    nx, ny = grid.nx, grid.ny
    blocked = grid.blocked
    g = {start: 0.0}
    came = {}
    counter = 0

    def h(c):
        dx = abs(c[0] - goal[0])
        dy = abs(c[1] - goal[1])
        return (dx + dy) + (_SQRT2 - 2.0) * min(dx, dy)

    heap = [(h(start), counter, start)]
    closed = set()
    while heap:
        _, _, cur = heapq.heappop(heap)
        if cur == goal:
            path = [cur]
            while cur in came:
                cur = came[cur]
                path.append(cur)
            return path[::-1]
        if cur in closed:
            continue
        closed.add(cur)
        ci, cj = cur
        base = g[cur]
        for di, dj, step in _NEIGHBORS:
            i, j = ci + di, cj + dj
            if not (0 <= i < nx and 0 <= j < ny) or blocked[i, j]:
                continue
            if di and dj and (blocked[ci + di, cj] or blocked[ci, cj + dj]):
                continue   # no corner cutting
            nxt = (i, j)
            cand = base + step
            if cand < g.get(nxt, np.inf):
                g[nxt] = cand
                came[nxt] = cur
                counter += 1
                heapq.heappush(heap, (cand + h(nxt), counter, nxt))
    raise NoPath("goal unreachable on the planning grid")


def _smooth(grid: Grid, points: list) -> list:
    if len(points) <= 2:
        return points
    out = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not grid.clear_segment(points[i], points[j]):
            j -= 1
        out.append(points[j])
        i = j
    return out


def plan_path(env, frm, to, resolution: float = 0.25,
              robot_radius: float = 0.3) -> list:
    """Collision-free waypoint list from `frm` to `to`, starting at `frm`."""
    grid = get_grid(env, resolution, robot_radius)
    frm = tuple(map(float, frm))
    to = tuple(map(float, to))
    if grid.clear_segment(frm, to):
        return [frm, to]
    start = grid.nearest_free(grid.cell_of(frm))
    goal = grid.nearest_free(grid.cell_of(to))
    cells = _astar(grid, start, goal)
    points = [frm]
    points += [grid.center(c) for c in cells]
    points.append(to)
    return _smooth(grid, points)


def path_length(path) -> float:
    pts = np.asarray(path, float)
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def walk_along(path, distance: float) -> tuple:
    """Point at the given arc length along the waypoint list."""
    if not path:
        raise NoPath("empty path")
    pts = [np.asarray(p, float) for p in path]
    left = float(distance)
    for a, b in zip(pts, pts[1:]):
        seg = float(np.linalg.norm(b - a))
        if seg >= left and seg > 0.0:
            return tuple(a + (left / seg) * (b - a))
        left -= seg
    return tuple(pts[-1])


def move(env, pose, waypoint, step_size: float, rng: np.random.Generator,
         noise_sigma: float) -> tuple:
    """Advance one increment toward the waypoint.

    Returns (new pose, odometry); odometry is the true displacement plus
    Gaussian noise.  Raises PathBlocked when the increment would cross a
    wall.
    """
    pose = np.asarray(pose, float)
    target = np.asarray(waypoint, float)
    gap = target - pose
    dist = float(np.linalg.norm(gap))
    if dist < 1e-12:
        return tuple(pose), (0.0, 0.0)
    disp = gap if dist <= step_size else gap * (step_size / dist)
    new_pose = pose + disp
    for w1, w2 in env.walls:
        if point_segment_distance(new_pose, w1, w2) < 1e-6 or \
                not _clear_move(pose, new_pose, w1, w2):
            raise PathBlocked(
                f"move from {tuple(np.round(pose, 3))} toward "
                f"{tuple(np.round(target, 3))} crosses a wall")
    odom = disp + rng.normal(0.0, noise_sigma, 2)
    return tuple(new_pose), tuple(odom)


def _clear_move(a, b, w1, w2) -> bool:
    from .geometry import segments_intersect

    return not segments_intersect(a, b, w1, w2)

"""Environment templates and seeded world generation.

Each template is a builder registered in TEMPLATES.  Object placement is
rejection-sampled under minimum-separation constraints; a seed fully
determines the world.  Short aliases ("1h1c") map to the canonical
template names.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from ..errors import PlacementFailure, UsageError
from .geometry import point_in_polygon, polygon_centroid


@dataclass(frozen=True)
class SimObject:
    object_id: str
    cls: str
    xy: tuple
    radius: float = 0.25
    contents: tuple = ()          # ids revealed by inspecting this object
    container: str | None = None  # id of the object hiding this one


@dataclass(frozen=True)
class RegionSpec:
    rtype: str
    polygon: tuple

    def centroid(self):
        return polygon_centroid(self.polygon)

    def contains(self, p) -> bool:
        return point_in_polygon(p, self.polygon)


@dataclass(frozen=True)
class Environment:
    template: str
    seed: int
    bounds: tuple                 # (xmin, ymin, xmax, ymax)
    walls: tuple                  # ((x1,y1),(x2,y2)) segments
    objects: tuple
    regions: tuple
    start_xy: tuple
    start_heading: float = 0.0

    def object_by_id(self, object_id: str) -> SimObject:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(object_id)

    def objects_of(self, cls: str) -> list:
        return [o for o in self.objects if o.cls == cls]

    def region_at(self, p):
        for region in self.regions:
            if region.contains(p):
                return region
        return None

    def to_json(self) -> dict:
        return {
            "template": self.template,
            "seed": self.seed,
            "bounds": list(self.bounds),
            "walls": [[list(a), list(b)] for a, b in self.walls],
            "objects": [{
                "id": o.object_id, "cls": o.cls, "xy": list(o.xy),
                "radius": o.radius, "contents": list(o.contents),
                "container": o.container,
            } for o in self.objects],
            "regions": [{"type": r.rtype,
                         "polygon": [list(p) for p in r.polygon]}
                        for r in self.regions],
            "start_xy": list(self.start_xy),
            "start_heading": self.start_heading,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "Environment":
        return cls(
            template=payload["template"],
            seed=int(payload["seed"]),
            bounds=tuple(payload["bounds"]),
            walls=tuple((tuple(a), tuple(b)) for a, b in payload["walls"]),
            objects=tuple(SimObject(
                object_id=o["id"], cls=o["cls"], xy=tuple(o["xy"]),
                radius=float(o.get("radius", 0.25)),
                contents=tuple(o.get("contents", ())),
                container=o.get("container"),
            ) for o in payload["objects"]),
            regions=tuple(RegionSpec(r["type"],
                                     tuple(tuple(p) for p in r["polygon"]))
                          for r in payload["regions"]),
            start_xy=tuple(payload["start_xy"]),
            start_heading=float(payload.get("start_heading", 0.0)),
        )


def _rect_walls(xmin, ymin, xmax, ymax):
    return [((xmin, ymin), (xmax, ymin)), ((xmax, ymin), (xmax, ymax)),
            ((xmax, ymax), (xmin, ymax)), ((xmin, ymax), (xmin, ymin))]


def _sample_point(rng, bounds, margin):
    xmin, ymin, xmax, ymax = bounds
    return np.array([rng.uniform(xmin + margin, xmax - margin),
                     rng.uniform(ymin + margin, ymax - margin)])


def _separated(p, placed, min_sep) -> bool:
    return all(np.linalg.norm(p - q) >= min_sep for q in placed)


def _retry(rng, tries, propose, accept):
    for _ in range(tries):
        cand = propose(rng)
        if accept(cand):
            return cand
    raise PlacementFailure("could not satisfy template placement constraints")


OPEN_BOUNDS = (0.0, 0.0, 22.0, 14.0)
OPEN_START = (2.0, 7.0)


def _open_template(seed: int, rng, cfg, n_extra_hydrants: int,
                   n_extra_cones: int) -> Environment:
    """Open arena: a cone ahead of the start, the goal hydrant behind the
    cone from the start's point of view, plus distractors."""
    min_sep = cfg["min_separation"]
    tries = cfg["placement_retries"]
    start = np.asarray(OPEN_START)

    bearing = rng.uniform(np.radians(-35.0), np.radians(35.0))
    cone_dist = rng.uniform(5.0, 8.0)
    ray = np.array([np.cos(bearing), np.sin(bearing)])
    side = np.array([-ray[1], ray[0]])
    cone = start + cone_dist * ray
    hydrant = (cone + rng.uniform(1.5, 3.0) * ray +
               rng.uniform(-0.8, 0.8) * side)

    placed = [start, cone, hydrant]
    objs = [SimObject("hydrant0", "hydrant", tuple(hydrant)),
            SimObject("cone0", "cone", tuple(cone))]

    def distractor(cls, idx, accept_extra=None):
        def ok(p):
            if not _separated(p, placed, min_sep):
                return False
            if np.linalg.norm(p - start) < 3.0:
                return False
            return accept_extra is None or accept_extra(p)
        p = _retry(rng, tries, lambda r: _sample_point(r, OPEN_BOUNDS, 1.0), ok)
        placed.append(p)
        objs.append(SimObject(f"{cls}{idx}", cls, tuple(p)))

    for i in range(n_extra_hydrants):
        # the distractor hydrant sits nearer the start but farther from the
        # cone than the goal hydrant, baiting partial-map grounding
        def off_goal(p):
            return (np.linalg.norm(p - start) < np.linalg.norm(hydrant - start)
                    and np.linalg.norm(p - cone) >
                    np.linalg.norm(hydrant - cone) + 2.0
                    and np.linalg.norm(p - hydrant) >= 4.0)
        distractor("hydrant", i + 1, off_goal)
    for i in range(n_extra_cones):
        def off_ray(p):
            return np.linalg.norm(p - cone) >= 3.0
        distractor("cone", i + 1, off_ray)

    return Environment(
        template="", seed=seed, bounds=OPEN_BOUNDS,
        walls=tuple(_rect_walls(*OPEN_BOUNDS)),
        objects=tuple(objs), regions=(),
        start_xy=OPEN_START, start_heading=0.0)


def _one_hydrant_one_cone(seed, rng, cfg):
    return _open_template(seed, rng, cfg, 0, 0)


def _one_hydrant_two_cones(seed, rng, cfg):
    return _open_template(seed, rng, cfg, 0, 1)


def _two_hydrants_one_cone(seed, rng, cfg):
    return _open_template(seed, rng, cfg, 1, 0)


MULTIROOM_BOUNDS = (0.0, 0.0, 20.0, 12.0)


def _multiroom(seed: int, rng, cfg) -> Environment:
    """A lab opening onto two hallways; the kitchen is at the end of one of
    them (seed decides which), an office at the end of the other."""
    xmin, ymin, xmax, ymax = MULTIROOM_BOUNDS
    walls = _rect_walls(*MULTIROOM_BOUNDS)
    walls += [
        ((6.0, 2.5), (6.0, 9.5)),      # lab wall between the hallway mouths
        ((6.0, 2.5), (16.0, 2.5)),     # central block
        ((6.0, 9.5), (16.0, 9.5)),
        ((16.0, 2.5), (16.0, 9.5)),
        ((16.0, 6.0), (20.0, 6.0)),    # split of the right rooms
    ]
    kitchen_up = bool(rng.integers(0, 2))
    upper_room = ((16.0, 6.0), (20.0, 6.0), (20.0, 12.0), (16.0, 12.0))
    lower_room = ((16.0, 0.0), (20.0, 0.0), (20.0, 6.0), (16.0, 6.0))
    regions = [
        RegionSpec("lab", ((0.0, 0.0), (6.0, 0.0), (6.0, 12.0), (0.0, 12.0))),
        RegionSpec("hallway", ((6.0, 9.5), (16.0, 9.5), (16.0, 12.0), (6.0, 12.0))),
        RegionSpec("hallway", ((6.0, 0.0), (16.0, 0.0), (16.0, 2.5), (6.0, 2.5))),
        RegionSpec("kitchen", upper_room if kitchen_up else lower_room),
        RegionSpec("office", lower_room if kitchen_up else upper_room),
    ]
    return Environment(
        template="", seed=seed, bounds=MULTIROOM_BOUNDS,
        walls=tuple(walls), objects=(), regions=tuple(regions),
        start_xy=(3.0, 6.0), start_heading=0.0)


BOX_BOUNDS = (0.0, 0.0, 18.0, 10.0)
BOX_START = (1.5, 5.0)


def _boxsearch(seed: int, rng, cfg) -> Environment:
    """Three boxes; the ball hides in one of the two beyond the default
    sensing horizon."""
    tries = cfg["placement_retries"]
    start = np.asarray(BOX_START)
    placed = []

    def place(dist_lo, dist_hi):
        def ok(p):
            return (_separated(p, placed, 3.0) and
                    dist_lo <= np.linalg.norm(p - start) <= dist_hi)
        p = _retry(rng, tries, lambda r: _sample_point(r, BOX_BOUNDS, 1.2), ok)
        placed.append(p)
        return p

    near = place(5.5, 7.0)
    far1 = place(9.0, 14.0)
    far2 = place(9.0, 14.0)
    ball_in = 1 + int(rng.integers(0, 2))    # one of the two far boxes
    boxes = [near, far1, far2]
    objs = []
    for i, xy in enumerate(boxes):
        contents = ("ball0",) if i == ball_in else ()
        objs.append(SimObject(f"box{i}", "box", tuple(xy), radius=0.35,
                              contents=contents))
    ball_xy = boxes[ball_in] + np.array([0.1, 0.0])
    objs.append(SimObject("ball0", "ball", tuple(ball_xy), radius=0.12,
                          container=f"box{ball_in}"))
    return Environment(
        template="", seed=seed, bounds=BOX_BOUNDS,
        walls=tuple(_rect_walls(*BOX_BOUNDS)),
        objects=tuple(objs), regions=(),
        start_xy=BOX_START, start_heading=0.0)


TEMPLATES = {
    "1hydrant_1cone": _one_hydrant_one_cone,
    "1hydrant_2cones": _one_hydrant_two_cones,
    "2hydrants_1cone": _two_hydrants_one_cone,
    "multiroom": _multiroom,
    "boxsearch": _boxsearch,
}

ALIASES = {
    "1h1c": "1hydrant_1cone",
    "1h2c": "1hydrant_2cones",
    "2h1c": "2hydrants_1cone",
}


def resolve_template(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in TEMPLATES:
        known = ", ".join(sorted(TEMPLATES))
        raise UsageError(f"unknown template {name!r}; expected one of {known}")
    return name


def generate_environment(template: str, seed: int,
                         sim_cfg: dict | None = None) -> Environment:
    """Build a seeded world from a registered template."""
    from ..config import default_config

    cfg = sim_cfg if sim_cfg is not None else default_config()["sim"]
    name = resolve_template(template)
    tag = zlib.crc32(name.encode())
    rng = np.random.default_rng(np.random.SeedSequence((tag, seed)))
    env = TEMPLATES[name](seed, rng, cfg)
    return replace(env, template=name)

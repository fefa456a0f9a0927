"""Range/arc/occlusion-limited object detection and scene labeling.

Detections carry the true robot-to-object offset plus isotropic Gaussian
noise.  Container contents stay hidden until the robot is within the
inspect range of the container; inspection also reveals the contained
objects themselves.  The scene reading is the label of the region the
robot stands in, confused to a random other label with probability
epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rbpf import Detection, Observation
from .geometry import segments_intersect


@dataclass(frozen=True)
class SensorModel:
    range_m: float = 5.0
    arc_deg: float = 360.0
    noise_sigma: float = 0.1
    scene_epsilon: float = 0.05
    inspect_range: float = 1.0
    labels: tuple = ()            # scene label space for confusion draws


def line_of_sight(walls, a, b) -> bool:
    """True when the open segment a-b crosses no wall."""
    for w1, w2 in walls:
        if segments_intersect(a, b, w1, w2):
            return False
    return True


def _in_arc(offset, heading: float, arc_deg: float) -> bool:
    if arc_deg >= 360.0:
        return True
    bearing = np.arctan2(offset[1], offset[0]) - heading
    bearing = (bearing + np.pi) % (2.0 * np.pi) - np.pi
    return abs(bearing) <= np.radians(arc_deg) / 2.0


def sense(env, pose_xy, heading: float, sensor: SensorModel,
          rng: np.random.Generator) -> Observation:
    """One perception cycle from the given pose."""
    pose = np.asarray(pose_xy, float)
    detections = []
    inspected_ids = set()

    for obj in sorted(env.objects, key=lambda o: o.object_id):
        if obj.container is not None:
            continue               # hidden until the container is inspected
        offset = np.asarray(obj.xy) - pose
        dist = float(np.linalg.norm(offset))
        if dist > sensor.range_m:
            continue
        if not _in_arc(offset, heading, sensor.arc_deg):
            continue
        if dist > 1e-9 and not line_of_sight(env.walls, tuple(pose), obj.xy):
            continue
        noisy = offset + rng.normal(0.0, sensor.noise_sigma, 2)
        is_container = obj.cls in ("box", "suitcase") or obj.contents != ()
        inspected = is_container and dist <= sensor.inspect_range
        contents = ()
        if inspected:
            inspected_ids.add(obj.object_id)
            contents = tuple(sorted(env.object_by_id(i).cls
                                    for i in obj.contents))
        detections.append(Detection(
            object_id=obj.object_id, cls=obj.cls, xy=tuple(noisy),
            inspected=inspected, contents=contents))

    # inspection exposes the contained objects as ordinary detections
    for obj in sorted(env.objects, key=lambda o: o.object_id):
        if obj.container in inspected_ids:
            offset = np.asarray(obj.xy) - pose
            noisy = offset + rng.normal(0.0, sensor.noise_sigma, 2)
            detections.append(Detection(
                object_id=obj.object_id, cls=obj.cls, xy=tuple(noisy)))

    scene = None
    region = env.region_at(pose)
    if region is not None:
        scene = region.rtype
        if sensor.labels and rng.uniform() < sensor.scene_epsilon:
            others = [l for l in sensor.labels if l != region.rtype]
            if others:
                scene = others[int(rng.integers(0, len(others)))]
    return Observation(detections=tuple(detections), scene_label=scene)

"""Spatial relation models.

Each relation is a Gaussian over the figure's 2-D position, placed in a frame
derived from the robot and landmark geometry:

- ``ray``       along the robot-to-landmark ray, `offset` metres beyond the
                landmark (negative offsets fall between robot and landmark)
- ``ray_left``  perpendicular to that ray, to the robot's left of the landmark
- ``ray_right`` mirror image
- ``axis``      along the landmark region's principal axis, pointing away from
                the robot, `offset` metres beyond the far end (elongated
                regions such as hallways); falls back to ``ray`` for point
                landmarks
- ``robot``     centred on the robot itself (used when there is no landmark)

Densities are reported peak-normalized so a figure at the model mean scores
1.0, which makes them directly usable as likelihood ratios.  Comparative
relations ("nearest") carry the flag and are resolved by the caller against
the candidate set rather than through the density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.hypot(v[0], v[1]))
    if n < 1e-9:
        return np.array([1.0, 0.0])
    return v / n


@dataclass(frozen=True)
class RelationModel:
    name: str
    offset: float
    sigma: float
    frame: str = "ray"
    comparative: bool = False

    def mean_cov(self, robot_xy, landmark_xy=None, landmark_points=None):
        """Gaussian (mean, cov) over figure position in the world frame."""
        robot_xy = np.asarray(robot_xy, dtype=float)
        cov = np.eye(2) * self.sigma**2
        if landmark_xy is None or self.frame == "robot":
            anchor = robot_xy if landmark_xy is None else np.asarray(landmark_xy, float)
            return anchor.copy(), cov
        landmark_xy = np.asarray(landmark_xy, dtype=float)
        ray = _unit(landmark_xy - robot_xy)
        if self.frame == "axis" and landmark_points is not None and len(landmark_points) >= 2:
            pts = np.asarray(landmark_points, dtype=float)
            centered = pts - pts.mean(axis=0)
            _, _, vt = np.linalg.svd(centered, full_matrices=False)
            axis = _unit(vt[0])
            if float(np.dot(axis, pts.mean(axis=0) - robot_xy)) < 0.0:
                axis = -axis
            far = pts[np.argmax(pts @ axis)]
            return far + self.offset * axis, cov
        if self.frame == "ray_left":
            direction = np.array([-ray[1], ray[0]])
        elif self.frame == "ray_right":
            direction = np.array([ray[1], -ray[0]])
        else:  # ray, and axis fallback for point landmarks
            direction = ray
        return landmark_xy + self.offset * direction, cov

    def inverse_mean_cov(self, robot_xy, figure_xy):
        """Gaussian over the landmark position given a known figure.

        Mirrors `mean_cov`: the landmark sits `offset` metres back along the
        robot-to-figure ray (so a figure "behind" it lands where observed).
        """
        robot_xy = np.asarray(robot_xy, dtype=float)
        figure_xy = np.asarray(figure_xy, dtype=float)
        cov = np.eye(2) * self.sigma**2
        if self.frame == "robot":
            return figure_xy.copy(), cov
        ray = _unit(figure_xy - robot_xy)
        if self.frame == "ray_left":
            direction = np.array([-ray[1], ray[0]])
        elif self.frame == "ray_right":
            direction = np.array([ray[1], -ray[0]])
        else:
            direction = ray
        return figure_xy - self.offset * direction, cov

    def sample(self, rng: np.random.Generator, robot_xy, landmark_xy=None, landmark_points=None):
        mean, cov = self.mean_cov(robot_xy, landmark_xy, landmark_points)
        return rng.multivariate_normal(mean, cov)

    def density_ratio(self, figure_xy, robot_xy, landmark_xy=None, landmark_points=None) -> float:
        """exp(-0.5 (x-m)' S^-1 (x-m)): 1.0 at the mean, falls off with distance."""
        mean, cov = self.mean_cov(robot_xy, landmark_xy, landmark_points)
        d = np.asarray(figure_xy, dtype=float) - mean
        return float(np.exp(-0.5 * d @ np.linalg.solve(cov, d)))


class RelationLibrary:
    """Named relation models built from the config "relations" section."""

    def __init__(self, section: dict):
        self.models = {
            name: RelationModel(
                name=name,
                offset=float(p.get("offset", 0.0)),
                sigma=float(p.get("sigma", 1.0)),
                frame=p.get("frame", "ray"),
                comparative=bool(p.get("comparative", False)),
            )
            for name, p in section.items()
        }
        if "unknown" not in self.models:
            self.models["unknown"] = RelationModel("unknown", 0.0, 5.0, "robot")

    def get(self, name: str) -> RelationModel:
        return self.models.get(name, self.models["unknown"])

    def __contains__(self, name: str) -> bool:
        return name in self.models

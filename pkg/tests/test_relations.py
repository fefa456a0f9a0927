"""Relation model tests: frame geometry worked by hand, density
normalization, inverse consistency, and sampling distribution checks."""

import numpy as np
import pytest
from scipy import stats

from langnav.config import default_config
from langnav.relations import RelationLibrary, RelationModel

LIB = RelationLibrary(default_config()["relations"])


def test_ray_frame_mean_beyond_landmark():
    behind = LIB.get("behind")
    mean, cov = behind.mean_cov((0.0, 0.0), (4.0, 0.0))
    # offset 1.5 along the robot-to-landmark ray
    assert mean == pytest.approx([5.5, 0.0])
    assert cov == pytest.approx(np.eye(2) * 0.75**2)


def test_front_frame_mean_between():
    front = LIB.get("front")
    mean, _ = front.mean_cov((0.0, 0.0), (4.0, 0.0))
    assert mean == pytest.approx([2.5, 0.0])


def test_lateral_frames_mirror():
    left = LIB.get("left")
    right = LIB.get("right")
    # robot looking along +x: left is +y, right is -y
    ml, _ = left.mean_cov((0.0, 0.0), (4.0, 0.0))
    mr, _ = right.mean_cov((0.0, 0.0), (4.0, 0.0))
    assert ml == pytest.approx([4.0, 1.5])
    assert mr == pytest.approx([4.0, -1.5])
    # rotating the scene rotates the means with it
    ml2, _ = left.mean_cov((0.0, 0.0), (0.0, 4.0))
    assert ml2 == pytest.approx([-1.5, 4.0])


def test_robot_frame_ignores_landmark_direction():
    unknown = LIB.get("unknown")
    mean, cov = unknown.mean_cov((1.0, 2.0))
    assert mean == pytest.approx([1.0, 2.0])
    assert cov == pytest.approx(np.eye(2) * 25.0)


def test_axis_frame_runs_along_elongated_region():
    down = LIB.get("down")
    pts = [(x, 0.0) for x in np.linspace(0.0, 6.0, 7)]
    mean, _ = down.mean_cov((-2.0, 0.0), (3.0, 0.0), landmark_points=pts)
    # principal axis is +x away from the robot; far end 6.0 plus offset 2.0
    assert mean == pytest.approx([8.0, 0.0])
    # a point landmark falls back to the ray frame
    mean2, _ = down.mean_cov((-2.0, 0.0), (3.0, 0.0))
    assert mean2 == pytest.approx([5.0, 0.0])


def test_density_ratio_peaks_at_one():
    near = LIB.get("near")
    mean, _ = near.mean_cov((0.0, 0.0), (3.0, 1.0))
    assert near.density_ratio(mean, (0.0, 0.0), (3.0, 1.0)) == pytest.approx(1.0)
    away = mean + np.array([3.0, 0.0])
    # exp(-0.5 * (3 / 1.5)^2) = exp(-2)
    assert near.density_ratio(away, (0.0, 0.0), (3.0, 1.0)) == \
        pytest.approx(float(np.exp(-2.0)))


def test_inverse_round_trip():
    # placing the landmark via the inverse model makes the original figure
    # sit exactly at the forward mean
    behind = LIB.get("behind")
    robot = np.array([0.0, 0.0])
    fig = np.array([5.5, 0.0])
    lm_mean, _ = behind.inverse_mean_cov(robot, fig)
    fwd_mean, _ = behind.mean_cov(robot, lm_mean)
    assert fwd_mean == pytest.approx(fig)


def test_sample_distribution_matches_mean_cov():
    behind = LIB.get("behind")
    rng = np.random.default_rng(3)
    draws = np.array([behind.sample(rng, (0.0, 0.0), (4.0, 0.0))
                      for _ in range(4000)])
    assert stats.kstest(draws[:, 0], stats.norm(5.5, 0.75).cdf).pvalue > 0.01
    assert stats.kstest(draws[:, 1], stats.norm(0.0, 0.75).cdf).pvalue > 0.01


def test_library_defaults_and_fallback():
    bare = RelationLibrary({})
    assert "unknown" in bare
    model = bare.get("never-heard-of-it")
    assert model.name == "unknown" and model.frame == "robot"
    assert LIB.get("nearest").comparative


def test_degenerate_ray_uses_fixed_direction():
    behind = LIB.get("behind")
    mean, _ = behind.mean_cov((2.0, 2.0), (2.0, 2.0))
    # coincident robot and landmark: unit ray defaults to +x
    assert mean == pytest.approx([3.5, 2.0])

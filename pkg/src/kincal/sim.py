"""Ground-truth chains, noisy measurements, and calibration metrics.

Fixtures are defined by joint axis directions and points the axes pass
through; the moment vectors follow as v = p x w. All randomness flows
through numpy PCG64 generators built by make_rng, so a seed pins the
exact stream on any platform.

Metrics compare a raw estimated parameter vector against the truth:

  * orientation error: mean absolute difference, over all joint pairs,
    between the estimated and true inter-axis angles. Invariant to the
    scale of the estimated axis vectors.
  * location error: mean distance between the estimated and true axis
    lines. A twist's axis is the line {w x v + s * w / |w|}; for
    near-parallel lines the distance is taken between the points
    closest to the origin.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .fov import FovConfig
from .kinematics import ChainParams, Pose, Twist, observe

logger = logging.getLogger(__name__)

DEFAULT_JOINT_LIMIT = math.radians(40.0)

# Estimated axis vectors shorter than this are degenerate: orientation
# pairs involving one contribute pi/2, location falls back to the
# distance between the lines' origin-closest points.
_DEGENERATE_AXIS_TOL = 1e-12

_PARALLEL_TOL = 1e-8


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; a given seed reproduces the identical stream."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class GroundTruth:
    """A canonical chain plus the measurement setup around it."""

    params: ChainParams
    joint_limits: np.ndarray
    fov: FovConfig = None
    obs_variance: float = 1e-4

    def __post_init__(self):
        self.joint_limits = np.asarray(self.joint_limits, dtype=float)
        n = self.params.n_joints
        if self.joint_limits.shape != (n, 2):
            raise ValueError(f"joint_limits must be ({n}, 2)")
        if not (self.joint_limits[:, 0] <= self.joint_limits[:, 1]).all():
            raise ValueError("joint limits need low <= high")
        if self.obs_variance < 0:
            raise ValueError("obs_variance must be non-negative")
        for i, t in enumerate(self.params.twists):
            if abs(np.linalg.norm(t.w) - 1.0) > 1e-6:
                raise ValueError(f"joint {i}: ground-truth axis must be unit norm")

    @property
    def n_joints(self) -> int:
        return self.params.n_joints


def measure(gt: GroundTruth, q, rng: np.random.Generator):
    """Noisy end-effector position, or None when out of view.

    Visibility is decided on the true position. The noise draw happens
    only for visible measurements, so a fixed seed and query sequence
    reproduce the identical observation stream.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (gt.n_joints,):
        raise ValueError(f"expected {gt.n_joints} joint angles")
    if (q < gt.joint_limits[:, 0]).any() or (q > gt.joint_limits[:, 1]).any():
        raise ValueError("configuration violates joint limits")
    true_pos = observe(gt.params, q)
    if gt.fov is not None and not gt.fov.contains(true_pos):
        return None
    return true_pos + rng.normal(0.0, math.sqrt(gt.obs_variance), 3)


def random_config(gt: GroundTruth, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw inside the joint-limit box."""
    return rng.uniform(gt.joint_limits[:, 0], gt.joint_limits[:, 1])


# name -> (description, [(axis, point on axis), ...], end-effector point)
_FIXTURES = {
    "planar3": (
        "3R planar chain, all axes +z, links 0.3/0.25/0.15 m along x",
        [((0.0, 0.0, 1.0), (0.0, 0.0, 0.0)),
         ((0.0, 0.0, 1.0), (0.3, 0.0, 0.0)),
         ((0.0, 0.0, 1.0), (0.55, 0.0, 0.0))],
        (0.7, 0.0, 0.0),
    ),
    "arm6": (
        "6-dof arm: 3-axis shoulder, elbow pitch, forearm roll, wrist pitch",
        [((0.0, 0.0, 1.0), (0.0, 0.0, 0.3)),
         ((0.0, 1.0, 0.0), (0.0, 0.0, 0.3)),
         ((1.0, 0.0, 0.0), (0.0, 0.0, 0.3)),
         ((0.0, 1.0, 0.0), (0.3, 0.0, 0.3)),
         ((1.0, 0.0, 0.0), (0.55, 0.0, 0.3)),
         ((0.0, 1.0, 0.0), (0.55, 0.0, 0.3))],
        (0.65, 0.0, 0.3),
    ),
    "arm12": (
        "12-dof chain: 3-axis torso, 3-axis shoulder, 2-axis elbow, "
        "3-axis wrist, hand pitch",
        [((0.0, 0.0, 1.0), (0.0, 0.0, 0.1)),
         ((0.0, 1.0, 0.0), (0.0, 0.0, 0.1)),
         ((1.0, 0.0, 0.0), (0.0, 0.0, 0.1)),
         ((0.0, 0.0, 1.0), (0.0, 0.15, 0.35)),
         ((0.0, 1.0, 0.0), (0.0, 0.15, 0.35)),
         ((1.0, 0.0, 0.0), (0.0, 0.15, 0.35)),
         ((0.0, 1.0, 0.0), (0.25, 0.15, 0.35)),
         ((1.0, 0.0, 0.0), (0.25, 0.15, 0.35)),
         ((0.0, 0.0, 1.0), (0.45, 0.15, 0.35)),
         ((0.0, 1.0, 0.0), (0.45, 0.15, 0.35)),
         ((1.0, 0.0, 0.0), (0.45, 0.15, 0.35)),
         ((0.0, 1.0, 0.0), (0.55, 0.15, 0.35))],
        (0.62, 0.15, 0.35),
    ),
}

FIXTURE_NAMES = tuple(_FIXTURES)


def fixture_description(name: str) -> str:
    return _FIXTURES[name][0]


def builtin_chain(name: str) -> GroundTruth:
    """Named ground-truth chain with default limits and noise."""
    if name not in _FIXTURES:
        raise ValueError(f"unknown chain fixture {name!r}; have {sorted(_FIXTURES)}")
    _, axes, effector = _FIXTURES[name]
    twists = []
    for axis, point in axes:
        w = np.asarray(axis, dtype=float)
        p = np.asarray(point, dtype=float)
        twists.append(Twist(w, np.cross(p, w)))
    params = ChainParams(twists, Pose(np.eye(3), np.asarray(effector, dtype=float)))
    limits = np.tile([-DEFAULT_JOINT_LIMIT, DEFAULT_JOINT_LIMIT], (len(twists), 1))
    return GroundTruth(params, limits)


def _axis_line(w, v):
    """(point closest to origin, unit direction) of a twist's axis, or
    (w x v, None) when the axis vector is degenerate."""
    norm = np.linalg.norm(w)
    p = np.cross(w, v)
    if norm < _DEGENERATE_AXIS_TOL:
        return p, None
    return p, w / norm


def _line_distance(p1, d1, p2, d2):
    if d1 is None or d2 is None:
        return float(np.linalg.norm(p2 - p1))
    cross = np.cross(d1, d2)
    sin_angle = np.linalg.norm(cross)
    if sin_angle < _PARALLEL_TOL:
        # p1, p2 are already each line's closest point to the origin
        return float(np.linalg.norm(p2 - p1))
    return float(abs((p2 - p1) @ cross) / sin_angle)


def _pair_angle(d1, d2) -> float:
    return math.acos(min(1.0, max(-1.0, float(d1 @ d2))))


def metrics(estimate, gt: GroundTruth):
    """(orientation_error, location_error) of a raw parameter vector."""
    estimate = np.asarray(estimate, dtype=float)
    n = gt.n_joints
    if estimate.shape != (6 * n,):
        raise ValueError(f"estimate must have {6 * n} entries")
    rows = estimate.reshape(n, 6)

    est_lines = [_axis_line(r[:3], r[3:]) for r in rows]
    true_lines = [_axis_line(t.w, t.v) for t in gt.params.twists]
    degenerate = [i for i, (_, d) in enumerate(est_lines) if d is None]
    if degenerate:
        logger.warning("degenerate estimated axes at joints %s", degenerate)

    angle_terms = []
    for i in range(n):
        for j in range(i + 1, n):
            if est_lines[i][1] is None or est_lines[j][1] is None:
                angle_terms.append(math.pi / 2.0)
                continue
            est_angle = _pair_angle(est_lines[i][1], est_lines[j][1])
            true_angle = _pair_angle(true_lines[i][1], true_lines[j][1])
            angle_terms.append(abs(est_angle - true_angle))
    orientation_error = float(np.mean(angle_terms)) if angle_terms else 0.0

    distances = [_line_distance(true_lines[i][0], true_lines[i][1],
                                est_lines[i][0], est_lines[i][1])
                 for i in range(n)]
    return orientation_error, float(np.mean(distances))

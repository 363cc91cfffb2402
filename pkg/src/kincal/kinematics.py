"""Twist-based kinematics of serial chains.

A joint is a twist (w, v): w points along the rotation axis and v fixes
the location of the axis in space. For a unit-norm w and an axis passing
through a point p, v = p x w, and the axis is the line {w x v + s * w}.
A chain is an ordered list of twists, proximal to distal, plus the pose
of the end effector when every joint angle is zero.

The observation function maps a parameter vector and a joint
configuration to the 3D position of the end effector. The parameter
vector stacks the per-joint twists as [w_1, v_1, ..., w_n, v_n] (6n
entries). Nothing here constrains the parameters to unit axis norm: the
estimators operate on the raw vector.

Chain files are JSON: {"joints": [[wx, wy, wz, vx, vy, vz], ...],
"zero_pose": [12 numbers, row-major rotation then translation]}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

# Below this axis norm a twist is treated as a pure translation, the
# limit form v * angle. The closed-form rotational branch is used
# everywhere else, so the map stays smooth on the estimation domain.
_ZERO_AXIS_TOL = 1e-12

# Rotation-vector norms below this use the series form of the
# derivative of the exponential map.
_SMALL_ROTATION_TOL = 1e-7

_EYE3 = np.eye(3)


def skew(a):
    """3x3 matrix S with S @ x == cross(a, x)."""
    return np.array([
        [0.0, -a[2], a[1]],
        [a[2], 0.0, -a[0]],
        [-a[1], a[0], 0.0],
    ])


def _cross3(a, b):
    # np.cross carries far too much overhead for the 3-vector hot path
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def rotation_exp(r):
    """Rodrigues formula: rotation matrix for a rotation vector r."""
    angle = np.linalg.norm(r)
    if angle < _ZERO_AXIS_TOL:
        return _EYE3 + skew(r)
    k = skew(r / angle)
    return _EYE3 + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


@dataclass
class Twist:
    """One joint: axis direction w and axis moment v."""

    w: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.w.shape != (3,) or self.v.shape != (3,):
            raise ValueError("twist components must be 3-vectors")


@dataclass
class Pose:
    """Rigid transform: orthonormal rotation (det +1) and translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("pose needs a 3x3 rotation and a 3-vector translation")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def apply(self, point):
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def rigidity_defect(self) -> float:
        """Max abs deviation of R^T R from I and of det(R) from +1."""
        gram = self.rotation.T @ self.rotation
        return max(float(np.abs(gram - _EYE3).max()),
                   abs(float(np.linalg.det(self.rotation)) - 1.0))


@dataclass
class ChainParams:
    """Ordered joint twists plus the pose at the all-zero configuration."""

    twists: list
    zero_pose: Pose

    @property
    def n_joints(self) -> int:
        return len(self.twists)

    def to_vector(self) -> np.ndarray:
        """Stack twists as [w_1, v_1, ..., w_n, v_n]."""
        return np.concatenate([np.concatenate([t.w, t.v]) for t in self.twists])

    @classmethod
    def from_vector(cls, x, zero_pose: Pose) -> "ChainParams":
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.size % 6:
            raise ValueError("parameter vector length must be a multiple of 6")
        rows = x.reshape(-1, 6)
        return cls([Twist(r[:3], r[3:]) for r in rows], zero_pose)


def twist_exp(xi: Twist, angle: float) -> Pose:
    """Rigid motion of a twist through a joint angle.

    Uses the closed form
        R = exp(skew(w) * angle)
        t = (I - R) (w x v) + w (w . v) angle
    which for unit-norm w equals the matrix exponential of the 4x4 twist
    generator. Axis norms below _ZERO_AXIS_TOL fall back to the pure
    translation v * angle (the limit form); that branch is not smooth
    against the rotational one, which only matters at exactly zero axis.
    """
    if not (np.isfinite(xi.w).all() and np.isfinite(xi.v).all() and np.isfinite(angle)):
        raise ValueError("twist_exp requires finite inputs")
    w, v = xi.w, xi.v
    if np.linalg.norm(w) < _ZERO_AXIS_TOL:
        return Pose(np.eye(3), v * angle)
    r = rotation_exp(w * angle)
    t = (_EYE3 - r) @ _cross3(w, v) + w * ((w @ v) * angle)
    return Pose(r, t)


def forward_kinematics(params: ChainParams, q) -> Pose:
    """Pose of the end effector: product of joint motions times zero_pose."""
    q = np.asarray(q, dtype=float)
    if q.shape != (params.n_joints,):
        raise ValueError(f"expected {params.n_joints} joint angles, got shape {q.shape}")
    # same composition order as Pose.compose, without per-joint Pose objects
    rot = _EYE3
    trans = np.zeros(3)
    for xi, angle in zip(params.twists, q):
        step = twist_exp(xi, float(angle))
        trans = rot @ step.translation + trans
        rot = rot @ step.rotation
    zp = params.zero_pose
    return Pose(rot @ zp.rotation, rot @ zp.translation + trans)


def observe(params: ChainParams, q) -> np.ndarray:
    """3D end-effector position at configuration q."""
    return forward_kinematics(params, q).translation


def _rotation_partials(r):
    """Rotation matrix for rotation vector r and its three partials dR/dr_i.

    Closed form (Gallego and Yezzi, 2015) away from zero; quadratic
    series below _SMALL_ROTATION_TOL.
    """
    rot = rotation_exp(r)
    nsq = float(r @ r)
    rx = skew(r)
    if nsq < _SMALL_ROTATION_TOL ** 2:
        partials = np.stack([skew(e) + 0.5 * (rx @ skew(e) + skew(e) @ rx)
                             for e in _EYE3])
    else:
        # column i of rx @ (I - R) is r x ((I - R) e_i)
        b = rx @ (_EYE3 - rot)
        nums = r[:, None, None] * rx + np.stack([skew(b[:, i]) for i in range(3)])
        partials = (nums @ rot) / nsq
    return rot, partials


def _joint_blocks(w, v, angle):
    """Per-joint motion (R, t) and derivative blocks w.r.t. w and v.

    Returns (R, t, dR stacked (3,3,3) with dR[j] = dR/dw_j, dt_w 3x3
    with columns dt/dw_j, dt_v 3x3 with columns dt/dv_j).
    """
    if np.linalg.norm(w) < _ZERO_AXIS_TOL:
        return _EYE3, v * angle, np.zeros((3, 3, 3)), np.zeros((3, 3)), angle * _EYE3
    rot, rot_partials = _rotation_partials(w * angle)
    wxv = _cross3(w, v)
    i_minus = _EYE3 - rot
    t = i_minus @ wxv + w * ((w @ v) * angle)
    d_rot = angle * rot_partials
    # column j of i_minus @ skew(v) is (I - R)(v x e_j) = -(I - R)(e_j x v)
    dt_w = (-(d_rot @ wxv).T - i_minus @ skew(v)
            + angle * ((w @ v) * _EYE3 + np.outer(w, v)))
    dt_v = i_minus @ skew(w) + (angle * np.outer(w, w))
    return rot, t, d_rot, dt_w, dt_v


def observation_jacobian(params: ChainParams, q, method: str = "analytic",
                         fd_step: float = 1e-6) -> np.ndarray:
    """3 x 6n Jacobian of observe() w.r.t. the stacked parameter vector.

    method "analytic" differentiates the closed-form motion of each
    joint; "finite_difference" central-differences observe() and serves
    as the reference the analytic path is checked against.
    """
    if method == "finite_difference":
        return _jacobian_fd(params, q, fd_step)
    if method != "analytic":
        raise ValueError(f"unknown jacobian method: {method!r}")
    q = np.asarray(q, dtype=float)
    n = params.n_joints
    if q.shape != (n,):
        raise ValueError(f"expected {n} joint angles, got shape {q.shape}")

    blocks = [_joint_blocks(t.w, t.v, float(a)) for t, a in zip(params.twists, q)]

    # suffix[i] = position of the end effector in joint i's output frame
    suffix = [None] * (n + 1)
    suffix[n] = params.zero_pose.translation
    for i in range(n - 1, -1, -1):
        rot, t = blocks[i][0], blocks[i][1]
        suffix[i] = rot @ suffix[i + 1] + t

    jac = np.empty((3, 6 * n))
    rot_prefix = _EYE3
    for i in range(n):
        rot, t, d_rot, dt_w, dt_v = blocks[i]
        s_next = suffix[i + 1]
        jac[:, 6 * i:6 * i + 3] = rot_prefix @ ((d_rot @ s_next).T + dt_w)
        jac[:, 6 * i + 3:6 * i + 6] = rot_prefix @ dt_v
        rot_prefix = rot_prefix @ rot
    return jac


def _jacobian_fd(params: ChainParams, q, step: float) -> np.ndarray:
    x0 = params.to_vector()
    zero_pose = params.zero_pose
    jac = np.empty((3, x0.size))
    for k in range(x0.size):
        xp = x0.copy()
        xp[k] += step
        xm = x0.copy()
        xm[k] -= step
        fp = observe(ChainParams.from_vector(xp, zero_pose), q)
        fm = observe(ChainParams.from_vector(xm, zero_pose), q)
        jac[:, k] = (fp - fm) / (2.0 * step)
    return jac


class ChainObservationModel:
    """h(x, q) = end-effector position for raw parameter vector x.

    The zero pose is fixed and known; only the 6n twist entries are
    estimated. predict/jacobian is the interface the estimators expect.
    """

    def __init__(self, zero_pose: Pose, n_joints: int):
        self.zero_pose = zero_pose
        self.n_joints = n_joints

    @classmethod
    def from_chain(cls, params: ChainParams) -> "ChainObservationModel":
        return cls(params.zero_pose, params.n_joints)

    def predict(self, x, q) -> np.ndarray:
        return observe(ChainParams.from_vector(x, self.zero_pose), q)

    def jacobian(self, x, q, method: str = "analytic") -> np.ndarray:
        return observation_jacobian(ChainParams.from_vector(x, self.zero_pose), q,
                                    method=method)

    def predict_batch(self, x, configs) -> np.ndarray:
        """Positions for an (m, n) block of configurations, vectorized."""
        x = np.asarray(x, dtype=float)
        configs = np.asarray(configs, dtype=float)
        if configs.ndim != 2 or configs.shape[1] != self.n_joints:
            raise ValueError("configs must be (m, n_joints)")
        rows = x.reshape(self.n_joints, 6)
        m = configs.shape[0]
        rot = np.broadcast_to(_EYE3, (m, 3, 3)).copy()
        trans = np.zeros((m, 3))
        for i in range(self.n_joints):
            w, v = rows[i, :3], rows[i, 3:]
            angles = configs[:, i]
            nw = np.linalg.norm(w)
            if nw < _ZERO_AXIS_TOL:
                ri = np.broadcast_to(_EYE3, (m, 3, 3))
                ti = np.outer(angles, v)
            else:
                k = skew(w / nw)
                k2 = k @ k
                a = nw * angles
                sin_a = np.sin(a)[:, None, None]
                cos_a = np.cos(a)[:, None, None]
                ri = _EYE3 + sin_a * k + (1.0 - cos_a) * k2
                wxv = np.cross(w, v)
                ti = wxv - np.einsum("mij,j->mi", ri, wxv) + np.outer(angles, w * (w @ v))
            trans = np.einsum("mij,mj->mi", rot, ti) + trans
            rot = rot @ ri
        zp = self.zero_pose
        return np.einsum("mij,j->mi", rot, zp.translation) + trans


def chain_to_dict(params: ChainParams) -> dict:
    zp = params.zero_pose
    flat = np.concatenate([zp.rotation.reshape(-1), zp.translation])
    return {
        "joints": [np.concatenate([t.w, t.v]).tolist() for t in params.twists],
        "zero_pose": flat.tolist(),
    }


def chain_from_dict(doc: dict) -> ChainParams:
    joints = doc.get("joints")
    zp = doc.get("zero_pose")
    if not isinstance(joints, list) or not joints:
        raise ValueError("chain document needs a non-empty 'joints' list")
    if not isinstance(zp, list) or len(zp) != 12:
        raise ValueError("chain document needs a 12-number 'zero_pose'")
    twists = []
    for row in joints:
        arr = np.asarray(row, dtype=float)
        if arr.shape != (6,):
            raise ValueError("each joint must be 6 numbers [w, v]")
        if not np.isfinite(arr).all():
            raise ValueError("joint parameters must be finite")
        twists.append(Twist(arr[:3], arr[3:]))
    zp = np.asarray(zp, dtype=float)
    if not np.isfinite(zp).all():
        raise ValueError("zero_pose must be finite")
    pose = Pose(zp[:9].reshape(3, 3), zp[9:])
    if pose.rigidity_defect() > 1e-9:
        raise ValueError("zero_pose rotation is not orthonormal with det +1")
    return ChainParams(twists, pose)


def save_chain(params: ChainParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(chain_to_dict(params), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_chain(path) -> ChainParams:
    with open(path) as fh:
        return chain_from_dict(json.load(fh))

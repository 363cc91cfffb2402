"""Spherical-sector field-of-view predicate.

A point is visible when its distance from the camera lies in
[near, far] and the angle between the camera axis and the ray to the
point is strictly below half_angle. A zero half_angle therefore sees
nothing. The same predicate gates simulated measurements and penalizes
candidate configurations during selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class FovConfig:
    camera_position: np.ndarray
    axis: np.ndarray
    half_angle: float
    near: float = 0.0
    far: float = math.inf

    def __post_init__(self):
        self.camera_position = np.asarray(self.camera_position, dtype=float)
        axis = np.asarray(self.axis, dtype=float)
        norm = np.linalg.norm(axis)
        if norm == 0.0 or not np.isfinite(norm):
            raise ValueError("fov axis must be a nonzero finite vector")
        self.axis = axis / norm
        if not 0.0 <= self.half_angle <= math.pi:
            raise ValueError("half_angle must lie in [0, pi]")
        if self.near < 0.0 or self.far < self.near:
            raise ValueError("need 0 <= near <= far")

    def contains(self, point) -> bool:
        ray = np.asarray(point, dtype=float) - self.camera_position
        dist = float(np.linalg.norm(ray))
        if dist < self.near or dist > self.far:
            return False
        if dist == 0.0:
            return self.half_angle > 0.0
        cos_angle = float(ray @ self.axis) / dist
        angle = math.acos(min(1.0, max(-1.0, cos_angle)))
        return angle < self.half_angle

    def to_dict(self) -> dict:
        return {
            "camera_position": self.camera_position.tolist(),
            "axis": self.axis.tolist(),
            "half_angle": self.half_angle,
            "near": self.near,
            "far": None if math.isinf(self.far) else self.far,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FovConfig":
        far = doc.get("far")
        return cls(np.asarray(doc["camera_position"], dtype=float),
                   np.asarray(doc["axis"], dtype=float),
                   float(doc["half_angle"]),
                   float(doc.get("near", 0.0)),
                   math.inf if far is None else float(far))

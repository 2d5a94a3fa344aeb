from dataclasses import dataclass

import numpy as np


@dataclass
class Camera:
    """Pinhole camera. Pixel ``(row v, col u)`` is sampled at screen position ``(u, v)``.

    ``R``, ``T`` map world points into the camera frame (x right, y down,
    z forward).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    T: np.ndarray
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.T = np.asarray(self.T, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if np.abs(self.R.T @ self.R - np.eye(3)).max() > 1e-8:
            raise ValueError("camera rotation is not orthonormal")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")

    @property
    def center(self):
        return -self.R.T @ self.T

    @property
    def extrinsic(self):
        return np.hstack([self.R, self.T[:, None]])

    def world_to_camera(self, points):
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.T

    def project(self, points):
        p = self.world_to_camera(points)
        return np.stack([self.fx * p[..., 0] / p[..., 2] + self.cx,
                         self.fy * p[..., 1] / p[..., 2] + self.cy], axis=-1)


def look_at(eye, target, fx, fy, width, height, down=(0.0, 1.0, 0.0), near=0.01, far=100.0):
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(np.asarray(down, dtype=np.float64), forward)
    right /= np.linalg.norm(right)
    below = np.cross(forward, right)
    R = np.stack([right, below, forward])
    return Camera(fx, fy, (width - 1) / 2.0, (height - 1) / 2.0, R, -R @ eye, width, height, near, far)

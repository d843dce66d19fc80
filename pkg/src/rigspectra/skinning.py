"""Linear blend skinning playback.

Axis-angle rotations go through the Rodrigues formula, world transforms
compose along the kinematic tree (per-joint offsets relative to the
parent, root absolute), rest-pose transforms are removed, and vertices
deform as weighted sums of the per-joint rigid motions.
"""

import os

import numpy as np

from .errors import RigSpectraError, DimensionMismatchError
from .mesh import TriMesh, save_mesh
from .regressor import CyclicHierarchyError

TWO_PI = 2.0 * np.pi


class Pose:
    """Per-joint axis-angle rotations, wrapped to magnitude < 2*pi."""

    def __init__(self, theta, rest_theta=None):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[1] != 3:
            raise DimensionMismatchError(f"pose must be (Q, 3), got {theta.shape}")
        if not np.isfinite(theta).all():
            raise ValueError("pose contains non-finite entries")
        self.theta = _wrap(theta)
        if rest_theta is None:
            rest_theta = np.zeros_like(self.theta)
        rest_theta = np.asarray(rest_theta, dtype=np.float64)
        if rest_theta.shape != self.theta.shape:
            raise DimensionMismatchError("rest pose shape differs from pose")
        self.rest_theta = _wrap(rest_theta)

    @property
    def n_joints(self):
        return self.theta.shape[0]

    @classmethod
    def rest(cls, n_joints):
        return cls(np.zeros((n_joints, 3)))


def _wrap(theta):
    mags = np.linalg.norm(theta, axis=1)
    out = theta.copy()
    big = mags >= TWO_PI
    if big.any():
        wrapped = np.mod(mags[big], TWO_PI)
        out[big] = theta[big] * (wrapped / mags[big])[:, None]
    return out


class JointTransforms:
    """World and rest-relative homogeneous transforms of every joint."""

    def __init__(self, world, relative):
        self.world = np.asarray(world, dtype=np.float64)
        self.relative = np.asarray(relative, dtype=np.float64)

    @property
    def n_joints(self):
        return self.world.shape[0]

    def joint_positions(self):
        """Posed world positions of the joint centers."""
        return self.world[:, :3, 3].copy()


def rodrigues(axis_angle):
    """Axis-angle (magnitude = angle) to a 3x3 rotation matrix.

    Uses the series-limit form near zero so there is no division by the
    angle.
    """
    v = np.asarray(axis_angle, dtype=np.float64).reshape(3)
    theta2 = float(v @ v)
    k = np.array([[0.0, -v[2], v[1]],
                  [v[2], 0.0, -v[0]],
                  [-v[1], v[0], 0.0]])
    if theta2 < 1e-16:
        # sin(t)/t ~ 1 - t^2/6, (1-cos t)/t^2 ~ 1/2 - t^2/24
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * k + b * (k @ k)


def _homog(rot, trans):
    g = np.eye(4)
    g[:3, :3] = rot
    g[:3, 3] = trans
    return g


def _invert_rigid(g):
    rt = g[:3, :3].T
    inv = np.eye(4)
    inv[:3, :3] = rt
    inv[:3, 3] = -rt @ g[:3, 3]
    return inv


def _world_transforms(skeleton, theta):
    q = skeleton.n_joints
    world = np.empty((q, 4, 4))
    for i in range(q):
        p = skeleton.parents[i]
        if p >= i:
            raise CyclicHierarchyError(f"joint {i} has parent {p} not before it")
        offset = skeleton.joints[i] if p == -1 else skeleton.joints[i] - skeleton.joints[p]
        local = _homog(rodrigues(theta[i]), offset)
        world[i] = local if p == -1 else world[p] @ local
    return world


def forward_kinematics(skeleton, pose):
    """World transforms under a pose plus rest-relative deformers.

    ``relative[q]`` is world(theta) composed with the inverse of
    world(rest); it is the identity when the pose equals the rest pose.
    """
    if pose.n_joints != skeleton.n_joints:
        raise DimensionMismatchError(
            f"pose has {pose.n_joints} joints, skeleton {skeleton.n_joints}"
        )
    world = _world_transforms(skeleton, pose.theta)
    rest = _world_transforms(skeleton, pose.rest_theta)
    relative = np.einsum("qij,qjk->qik", world,
                         np.stack([_invert_rigid(g) for g in rest]))
    return JointTransforms(world, relative)


def lbs_deform(mesh, weights, transforms):
    """Weighted sum of the per-joint rigid motions applied to vertices."""
    if weights.n_vertices != mesh.n_vertices:
        raise DimensionMismatchError(
            f"weights cover {weights.n_vertices} vertices, mesh has {mesh.n_vertices}"
        )
    if weights.n_joints != transforms.n_joints:
        raise DimensionMismatchError(
            f"weights cover {weights.n_joints} joints, transforms {transforms.n_joints}"
        )
    v = mesh.vertices
    out = np.zeros_like(v)
    w = weights.w.tocsc()
    for q in range(transforms.n_joints):
        col = w.getcol(q)
        if col.nnz == 0:
            continue
        rows = col.indices
        vals = col.data
        g = transforms.relative[q]
        moved = v[rows] @ g[:3, :3].T + g[:3, 3]
        out[rows] += vals[:, None] * moved
    return out


def animate(mesh, weights, skeleton, pose_sequence, out_dir):
    """Write one deformed OBJ per pose as frame_%05d.obj; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for idx, pose in enumerate(pose_sequence):
        transforms = forward_kinematics(skeleton, pose)
        deformed = lbs_deform(mesh, weights, transforms)
        path = os.path.join(out_dir, f"frame_{idx:05d}.obj")
        save_mesh(TriMesh(deformed, mesh.faces), path)
        paths.append(path)
    return paths


def load_pose_sequence(path, n_joints, rest_theta=None):
    """JSON pose file: either one frame (Q x 3) or a list of frames."""
    import json

    with open(path) as f:
        data = json.load(f)
    if data and isinstance(data[0][0], (int, float)):
        data = [data]
    poses = []
    for frame in data:
        theta = np.asarray(frame, dtype=np.float64)
        if theta.shape != (n_joints, 3):
            raise DimensionMismatchError(
                f"{path}: frame shape {theta.shape} != ({n_joints}, 3)"
            )
        poses.append(Pose(theta, rest_theta))
    return poses


def save_pose_sequence(path, poses):
    import json

    with open(path, "w") as f:
        json.dump([p.theta.tolist() for p in poses], f)

"""Procedurally generated rigged shapes for tests and benchmarks.

Two families: a two-bone capsule arm (root/elbow/wrist chain) and a
blobby five-joint humanoid built as a radial displacement of a sphere.
Joints sit at the analytic junctions, skinning weights are cosine ramps
over blend bands of 20% bone length, and everything is deterministic:
the same spec yields byte-identical meshes. "Remeshing" is a seeded
tangential jitter below 10% of the local edge length, which keeps the
index-wise correspondence to the unjittered base exact.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse

from .errors import RigSpectraError
from .mesh import TriMesh, LandmarkSet
from .regressor import Skeleton, SkinWeights
from .skinning import Pose, forward_kinematics, lbs_deform


class InvalidSpecError(RigSpectraError, ValueError):
    """Fixture spec names an unknown kind, identity or pose."""


@dataclass(frozen=True)
class FixtureSpec:
    kind: str                       # "two_bone_arm" | "capsule_humanoid"
    subdivision: int = 3
    identity: str = "a"
    pose: str = "rest"
    seed: int = 0                   # 0 disables the remeshing jitter
    noise: float = 0.0              # normal displacement, fraction of bbox
    target_vertices: int | None = None  # overrides subdivision (humanoid)
    params: dict = field(default_factory=dict, hash=False)


@dataclass
class Fixture:
    spec: FixtureSpec
    mesh: TriMesh
    skeleton: Skeleton
    weights: SkinWeights
    landmarks: np.ndarray       # canonical landmark vertex indices
    landmark_names: list
    base_mesh: TriMesh          # posed but unjittered geometry
    base_vertex_ids: np.ndarray  # correspondence to the base (identity)


# ---------------------------------------------------------------------------
# primitive meshes

def icosphere(subdivisions):
    """Unit sphere from recursive icosahedron subdivision."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    for _ in range(subdivisions):
        verts = list(verts)
        midpoint = {}

        def split(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = (verts[a] + verts[b]) / 2.0
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = split(a, b), split(b, c), split(c, a)
            new_faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc),
                              (ab, bc, ca)])
        verts = np.asarray(verts)
        faces = np.asarray(new_faces, dtype=np.int64)
    return verts, faces


def uv_sphere(rings, segments):
    """Latitude/longitude sphere; vertex count is rings*segments + 2."""
    verts = [np.array([0.0, 1.0, 0.0])]
    for i in range(1, rings + 1):
        phi = np.pi * i / (rings + 1)
        for j in range(segments):
            lam = 2.0 * np.pi * j / segments
            verts.append(np.array([
                np.sin(phi) * np.cos(lam),
                np.cos(phi),
                np.sin(phi) * np.sin(lam),
            ]))
    verts.append(np.array([0.0, -1.0, 0.0]))
    verts = np.asarray(verts)
    south = len(verts) - 1
    faces = []
    ring = lambda i, j: 1 + i * segments + (j % segments)
    for j in range(segments):
        faces.append((0, ring(0, j + 1), ring(0, j)))
    for i in range(rings - 1):
        for j in range(segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.extend([(a, b, d), (a, d, c)])
    for j in range(segments):
        faces.append((south, ring(rings - 1, j), ring(rings - 1, j + 1)))
    return verts, np.asarray(faces, dtype=np.int64)


def _revolved_capsule(length, radius, segments, cap_rings, body_rings):
    """Capsule around the x axis from x=-radius to x=length+radius."""
    profile = []
    for i in range(1, cap_rings + 1):
        phi = -np.pi / 2.0 + (np.pi / 2.0) * i / cap_rings
        profile.append((radius * np.sin(phi), radius * np.cos(phi)))
    for i in range(1, body_rings):
        profile.append((length * i / body_rings, radius))
    for i in range(cap_rings):
        phi = (np.pi / 2.0) * i / cap_rings
        profile.append((length + radius * np.sin(phi), radius * np.cos(phi)))
    verts = [np.array([-radius, 0.0, 0.0])]
    for x, rho in profile:
        for j in range(segments):
            a = 2.0 * np.pi * j / segments
            verts.append(np.array([x, rho * np.cos(a), rho * np.sin(a)]))
    verts.append(np.array([length + radius, 0.0, 0.0]))
    verts = np.asarray(verts)
    last = len(verts) - 1
    ring = lambda i, j: 1 + i * segments + (j % segments)
    faces = []
    for j in range(segments):
        faces.append((0, ring(0, j), ring(0, j + 1)))
    for i in range(len(profile) - 1):
        for j in range(segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.extend([(a, d, b), (a, c, d)])
    for j in range(segments):
        faces.append((last, ring(len(profile) - 1, j + 1),
                      ring(len(profile) - 1, j)))
    return verts, np.asarray(faces, dtype=np.int64)


# ---------------------------------------------------------------------------
# weight helpers

def cosine_ramp(x, center, band):
    """0 below the band, 1 above, half-cosine blend inside."""
    t = np.clip((np.asarray(x, dtype=np.float64) - center) / band + 0.5, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * t))


def _smooth_bump(c, start):
    s = np.clip((c - start) / (1.0 - start), 0.0, 1.0)
    return s * s * s * (s * (6.0 * s - 15.0) + 10.0)


# ---------------------------------------------------------------------------
# two-bone arm

_ARM_IDENTITIES = {
    "a": {"upper_length": 1.0, "fore_length": 1.0, "radius": 0.27},
    "b": {"upper_length": 1.15, "fore_length": 0.85, "radius": 0.22},
}

_ARM_POSES = {
    "rest": np.zeros((3, 3)),
    "bent": np.array([[0, 0, 0], [0, 0, np.pi / 4], [0, 0, 0]]),
    "bent_wrist": np.array([[0, 0, 0], [0, 0, np.pi / 4], [0, 0.4, 0.3]]),
}


def _build_arm(spec):
    params = dict(_ARM_IDENTITIES.get(spec.identity) or {})
    if not params:
        raise InvalidSpecError(f"unknown arm identity '{spec.identity}'")
    params.update(spec.params)
    l1, l2, r = params["upper_length"], params["fore_length"], params["radius"]
    length = l1 + l2
    segments = 6 * 2 ** spec.subdivision
    cap_rings = max(3, segments // 4)
    body_rings = max(4, int(round(length * segments / (2.0 * np.pi * r))))
    verts, faces = _revolved_capsule(length, r, segments, cap_rings, body_rings)
    mesh = TriMesh(verts, faces)

    joints = np.array([[0.0, 0.0, 0.0], [l1, 0.0, 0.0], [length, 0.0, 0.0]])
    skeleton = Skeleton(joints, [-1, 0, 1], ["root", "elbow", "wrist"])

    band1 = 0.2 * l2
    band2 = 0.2 * min(l2, 2.0 * r)
    x = verts[:, 0]
    r1 = cosine_ramp(x, l1 + 0.25 * band1, band1)
    r2 = cosine_ramp(x, length + 0.25 * band2, band2)
    w = np.column_stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2])
    weights = SkinWeights(sparse.csr_matrix(w))

    lm = {
        "wrist_tip": int(np.argmax(x)),
        "root_tip": int(np.argmin(x)),
        "elbow_top": int(np.argmin(np.abs(x - l1) + np.abs(verts[:, 1] - r))),
        "elbow_side": int(np.argmin(np.abs(x - l1) + np.abs(verts[:, 2] - r))),
        "mid_fore_top": int(np.argmin(np.abs(x - (l1 + 0.5 * l2))
                                      + np.abs(verts[:, 1] - r))),
    }
    return mesh, skeleton, weights, lm, _ARM_POSES


# ---------------------------------------------------------------------------
# capsule humanoid

_HUMANOID_DIRECTIONS = {
    "head": (0.05, 1.0, 0.03),
    "l_arm": (0.92, 0.30, 0.0),
    "r_arm": (-0.90, 0.32, 0.0),
    "l_leg": (0.34, -0.94, 0.0),
    "r_leg": (-0.30, -0.95, 0.0),
    "chest": (0.0, 0.25, 1.0),
}

_HUMANOID_IDENTITIES = {
    "a": {
        "torso_radius": 1.0,
        "amps": {"head": 0.85, "l_arm": 1.15, "r_arm": 1.08,
                 "l_leg": 1.30, "r_leg": 1.24, "chest": 0.13},
        "starts": {"head": 0.82, "l_arm": 0.86, "r_arm": 0.86,
                   "l_leg": 0.80, "r_leg": 0.80, "chest": 0.90},
    },
    "b": {
        "torso_radius": 0.92,
        "amps": {"head": 0.70, "l_arm": 1.38, "r_arm": 1.30,
                 "l_leg": 1.50, "r_leg": 1.56, "chest": 0.18},
        "starts": {"head": 0.80, "l_arm": 0.87, "r_arm": 0.87,
                   "l_leg": 0.81, "r_leg": 0.81, "chest": 0.88},
    },
}

_HUMANOID_POSES = {
    "rest": np.zeros((5, 3)),
    "bent": np.array([
        [0.0, 0.0, 0.0],
        [0.04, 0.0, 0.0],
        [0.10, 0.0, 0.04],
        [0.0, 0.0, -0.17],
        [0.0, 0.0, 0.19],
    ]),
    "lean": np.array([
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 0.09],
        [-0.10, 0.0, -0.06],
        [0.15, 0.0, -0.10],
        [-0.12, 0.0, 0.13],
    ]),
}


def _build_humanoid(spec):
    identity = _HUMANOID_IDENTITIES.get(spec.identity)
    if identity is None:
        raise InvalidSpecError(f"unknown humanoid identity '{spec.identity}'")
    params = {**identity, **spec.params}
    r0 = params["torso_radius"]
    amps, starts = params["amps"], params["starts"]
    dirs = {k: np.asarray(v) / np.linalg.norm(v)
            for k, v in _HUMANOID_DIRECTIONS.items()}

    if spec.target_vertices:
        rings = max(8, int(round(np.sqrt(spec.target_vertices - 2))))
        units, faces = uv_sphere(rings, rings)
    else:
        units, faces = icosphere(spec.subdivision)

    rho = np.full(len(units), r0)
    for name in ("head", "l_arm", "r_arm", "l_leg", "r_leg", "chest"):
        c = units @ dirs[name]
        rho = rho + r0 * amps[name] * _smooth_bump(c, starts[name])
    verts = units * rho[:, None]
    mesh = TriMesh(verts, faces)

    # junction coordinates scale with the torso radius
    y_chest = 0.15 * r0
    xi_neck = 0.95 * r0
    xi_shoulder = 1.02 * r0
    joints = np.array([
        [0.0, -0.20 * r0, 0.0],             # pelvis (root)
        [0.0, y_chest, 0.0],                # chest
        dirs["head"] * xi_neck,             # neck/head
        dirs["l_arm"] * xi_shoulder,        # left shoulder
        dirs["r_arm"] * xi_shoulder,        # right shoulder
    ])
    skeleton = Skeleton(joints, [-1, 0, 1, 1, 1],
                        ["pelvis", "chest", "head", "l_arm", "r_arm"])

    band_c = 0.2 * (xi_neck - y_chest)
    band_h = 0.2 * amps["head"] * r0
    band_a = 0.2 * amps["l_arm"] * r0
    y = verts[:, 1]

    # each limb claim is an axial ramp gated to its direction cone so the
    # lobes cannot claim each other's vertices; every ramp is zero at its
    # gate boundary, which keeps the weight field continuous
    def limb_claim(direction, junction, band):
        gate = units @ direction > 0.75
        return gate * cosine_ramp(verts @ direction,
                                  junction + 0.25 * band, band)

    claim_head = limb_claim(dirs["head"], xi_neck, band_h)
    claim_larm = limb_claim(dirs["l_arm"], xi_shoulder, band_a)
    claim_rarm = limb_claim(dirs["r_arm"], xi_shoulder, band_a)
    limbs = claim_head + claim_larm + claim_rarm
    chest_ramp = cosine_ramp(y, y_chest + 0.25 * band_c, band_c)
    w = np.column_stack([
        (1.0 - chest_ramp) * (1.0 - limbs),
        chest_ramp * (1.0 - limbs),
        claim_head,
        claim_larm,
        claim_rarm,
    ])
    weights = SkinWeights(sparse.csr_matrix(np.where(w > 1e-14, w, 0.0)))

    lm_dirs = {
        "head_top": dirs["head"],
        "l_hand": dirs["l_arm"],
        "r_hand": dirs["r_arm"],
        "l_foot": dirs["l_leg"],
        "r_foot": dirs["r_leg"],
        "chest_front": dirs["chest"],
        "back": np.array([0.0, 0.1, -1.0]) / np.linalg.norm([0.0, 0.1, -1.0]),
    }
    lm = {name: int(np.argmax(verts @ d)) for name, d in lm_dirs.items()}
    return mesh, skeleton, weights, lm, _HUMANOID_POSES


# ---------------------------------------------------------------------------
# assembly

_BUILDERS = {
    "two_bone_arm": _build_arm,
    "capsule_humanoid": _build_humanoid,
}


def named_pose(kind, name, n_joints):
    table = _ARM_POSES if kind == "two_bone_arm" else _HUMANOID_POSES
    if name not in table:
        raise InvalidSpecError(f"unknown pose '{name}' for {kind}")
    return Pose(table[name][:n_joints])


def _tangential_jitter(mesh, seed):
    rng = np.random.default_rng(seed)
    v = mesh.vertices
    normals = mesh.vertex_normals()
    # shortest incident edge bounds the jitter amplitude
    edges = np.concatenate([
        mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]], mesh.faces[:, [2, 0]],
    ])
    lengths = np.linalg.norm(v[edges[:, 0]] - v[edges[:, 1]], axis=1)
    min_edge = np.full(len(v), np.inf)
    np.minimum.at(min_edge, edges[:, 0], lengths)
    np.minimum.at(min_edge, edges[:, 1], lengths)
    raw = rng.standard_normal(v.shape)
    tang = raw - (raw * normals).sum(axis=1)[:, None] * normals
    norms = np.linalg.norm(tang, axis=1)
    norms[norms == 0.0] = 1.0
    amp = 0.1 * min_edge * rng.uniform(0.0, 1.0, len(v))
    return v + tang / norms[:, None] * amp[:, None]


def generate(spec):
    """Build the rigged fixture a spec describes."""
    builder = _BUILDERS.get(spec.kind)
    if builder is None:
        raise InvalidSpecError(f"unknown fixture kind '{spec.kind}'")
    mesh, skeleton, weights, lm, poses = builder(spec)

    pose = named_pose(spec.kind, spec.pose, skeleton.n_joints)
    if np.any(pose.theta):
        transforms = forward_kinematics(skeleton, pose)
        mesh = TriMesh(lbs_deform(mesh, weights, transforms), mesh.faces)
        skeleton = Skeleton(transforms.joint_positions(), skeleton.parents,
                            skeleton.names)
    base_mesh = mesh

    verts = mesh.vertices
    if spec.noise:
        rng = np.random.default_rng(spec.seed + 777)
        verts = verts + mesh.vertex_normals() * (
            spec.noise * mesh.bbox_diagonal()
            * rng.uniform(-1.0, 1.0, mesh.n_vertices)[:, None]
        )
        mesh = TriMesh(verts, mesh.faces)
    if spec.seed:
        mesh = TriMesh(_tangential_jitter(mesh, spec.seed), mesh.faces)

    names = list(lm.keys())
    return Fixture(
        spec=spec,
        mesh=mesh,
        skeleton=skeleton,
        weights=weights,
        landmarks=np.array([lm[n] for n in names], dtype=np.int64),
        landmark_names=names,
        base_mesh=base_mesh,
        base_vertex_ids=np.arange(mesh.n_vertices, dtype=np.int64),
    )


def landmark_pairs(src_fixture, tgt_fixture):
    """Pair canonical landmarks of two fixtures of the same kind."""
    if src_fixture.landmark_names != tgt_fixture.landmark_names:
        raise InvalidSpecError("fixtures carry different landmark sets")
    return LandmarkSet(zip(src_fixture.landmarks, tgt_fixture.landmarks))


def closest_point_correspondence(base_mesh, points, chunk=64):
    """Barycentric closest-point correspondence onto a base mesh.

    For every query point returns (face index, barycentric coords); used
    to relate fixtures generated at different subdivisions.
    """
    v, f = base_mesh.vertices, base_mesh.faces
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    points = np.asarray(points, dtype=np.float64)
    best_face = np.zeros(len(points), dtype=np.int64)
    best_bary = np.zeros((len(points), 3))
    best_d2 = np.full(len(points), np.inf)
    for start in range(0, len(f), chunk):
        sl = slice(start, min(start + chunk, len(f)))
        bary, proj = _project_on_triangles(points, a[sl], b[sl], c[sl])
        d2 = ((points[:, None, :] - proj) ** 2).sum(axis=2)
        local = np.argmin(d2, axis=1)
        dist = d2[np.arange(len(points)), local]
        better = dist < best_d2
        best_d2[better] = dist[better]
        best_face[better] = start + local[better]
        best_bary[better] = bary[np.arange(len(points)), local][better]
    return best_face, best_bary


def _project_on_triangles(points, a, b, c):
    # clamped barycentric projection of every point on every triangle
    ab = b - a
    ac = c - a
    p = points[:, None, :] - a[None, :, :]
    d00 = (ab * ab).sum(axis=1)[None, :]
    d01 = (ab * ac).sum(axis=1)[None, :]
    d11 = (ac * ac).sum(axis=1)[None, :]
    d20 = (p * ab[None, :, :]).sum(axis=2)
    d21 = (p * ac[None, :, :]).sum(axis=2)
    denom = d00 * d11 - d01 * d01
    denom = np.where(denom == 0.0, 1.0, denom)
    u = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    u = np.clip(u, 0.0, 1.0)
    w = np.clip(w, 0.0, 1.0)
    over = u + w > 1.0
    scale = np.where(over, u + w, 1.0)
    u, w = u / scale, w / scale
    bary = np.stack([1.0 - u - w, u, w], axis=2)
    proj = (bary[:, :, 0:1] * a[None, :, :] + bary[:, :, 1:2] * b[None, :, :]
            + bary[:, :, 2:3] * c[None, :, :])
    return bary, proj

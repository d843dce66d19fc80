"""Skeleton and skinning transfer through a functional map.

The spectral route applies the source regressor to the target coordinate
coefficients pulled into the source basis (adjoint transport, validated
by the self-map identity tests). The pointwise baseline instead converts
the map to a dense assignment and feeds pulled-back coordinates to the
spatial regressor. Skinning rows are copied by 3D nearest neighbour
between true target vertices and the band-limited target geometry
expressed on source connectivity.
"""

import numpy as np
from scipy.spatial import cKDTree

from .errors import RigSpectraError, DimensionMismatchError


class OrientationMismatchError(RigSpectraError, ValueError):
    """Map, regressor and basis identifiers do not chain up."""


class UnmatchedRegionError(RigSpectraError, ValueError):
    """A joint's whole support stayed unmatched after hole filling."""


class TransferResult:
    """Transferred joints plus method tag and per-joint diagnostics."""

    def __init__(self, joints, method, diagnostics=None):
        self.joints = np.asarray(joints, dtype=np.float64)
        self.method = method
        self.diagnostics = dict(diagnostics or {})
        if not np.isfinite(self.joints).all():
            raise ValueError("transfer produced non-finite joints")

    @property
    def n_joints(self):
        return self.joints.shape[0]


def _check_chain(spec_reg, fm, tgt_basis):
    if spec_reg.k != fm.source_k:
        raise DimensionMismatchError(
            f"regressor order {spec_reg.k} != map source order {fm.source_k}"
        )
    if fm.target_k > tgt_basis.k:
        raise DimensionMismatchError(
            f"map target order {fm.target_k} exceeds basis order {tgt_basis.k}"
        )
    if (spec_reg.mesh_id and fm.source_id
            and spec_reg.mesh_id != fm.source_id):
        raise OrientationMismatchError(
            f"regressor fitted on mesh {spec_reg.mesh_id} but map source is "
            f"{fm.source_id}"
        )
    if (fm.target_id and tgt_basis.mesh_id
            and fm.target_id != tgt_basis.mesh_id):
        raise OrientationMismatchError(
            f"map target is mesh {fm.target_id} but basis belongs to "
            f"{tgt_basis.mesh_id}"
        )


def transfer_skeleton(spec_reg, fm, tgt_basis, tgt_mesh):
    """Spectral transfer: joints from pulled-back coordinate coefficients."""
    _check_chain(spec_reg, fm, tgt_basis)
    if tgt_basis.n != tgt_mesh.n_vertices:
        raise DimensionMismatchError(
            f"basis has {tgt_basis.n} vertices, mesh {tgt_mesh.n_vertices}"
        )
    coeffs_tgt = tgt_basis.truncate(fm.target_k).project(tgt_mesh.vertices)
    coeffs_src = fm.pull(coeffs_tgt)
    joints = spec_reg.apply(coeffs_src)
    per_joint = np.linalg.norm(spec_reg.mat @ fm.mat.T, axis=1)
    return TransferResult(joints, "functional",
                          {"joint_coefficient_norms": per_joint})


def pullback_coordinates(src_mesh, tgt_mesh, p2p):
    """Mean target position per matched source vertex, holes filled by
    iterated 1-ring averaging, leftovers by the matched centroid.

    Returns ``(coords, filled_mask)``.
    """
    n_src = src_mesh.n_vertices
    if p2p.n_source != n_src:
        raise DimensionMismatchError(
            f"assignment is into {p2p.n_source} vertices, source has {n_src}"
        )
    if len(p2p) != tgt_mesh.n_vertices:
        raise DimensionMismatchError(
            f"assignment covers {len(p2p)} vertices, target has "
            f"{tgt_mesh.n_vertices}"
        )
    sums = np.zeros((n_src, 3))
    counts = np.zeros(n_src)
    np.add.at(sums, p2p.assignment, tgt_mesh.vertices)
    np.add.at(counts, p2p.assignment, 1.0)
    matched = counts > 0.0
    coords = np.zeros((n_src, 3))
    coords[matched] = sums[matched] / counts[matched, None]

    filled = matched.copy()
    if not filled.all():
        adjacency = src_mesh.vertex_adjacency()
        while True:
            frontier = [
                i for i in np.flatnonzero(~filled)
                if filled[adjacency[i]].any()
            ]
            if not frontier:
                break
            # snapshot so the fill is order-independent within a sweep
            ref = coords.copy()
            for i in frontier:
                nbrs = adjacency[i][filled[adjacency[i]]]
                coords[i] = ref[nbrs].mean(axis=0)
            filled[frontier] = True
    if not filled.all() and matched.any():
        coords[~filled] = coords[matched].mean(axis=0)
    return coords, filled


def transfer_skeleton_pointwise(reg, p2p, tgt_mesh, src_mesh):
    """Baseline transfer: spatial regressor on pulled-back coordinates.

    ``src_mesh`` supplies the source connectivity for hole filling.
    """
    if reg.n_vertices != src_mesh.n_vertices:
        raise DimensionMismatchError(
            f"regressor has {reg.n_vertices} columns, source mesh "
            f"{src_mesh.n_vertices} vertices"
        )
    coords, filled = pullback_coordinates(src_mesh, tgt_mesh, p2p)
    unmatched_support = []
    for q in range(reg.n_joints):
        support = reg.mask[q]
        if support.any() and not filled[support].any():
            unmatched_support.append(q)
    if unmatched_support:
        raise UnmatchedRegionError(
            f"joints {unmatched_support} have fully unmatched support"
        )
    joints = reg.apply(coords)
    coverage = np.array([
        filled[reg.mask[q]].mean() if reg.mask[q].any() else 0.0
        for q in range(reg.n_joints)
    ])
    return TransferResult(joints, "pointwise", {"support_coverage": coverage})


def lowpass_pullback_geometry(src_basis, tgt_basis, fm, tgt_mesh):
    """Band-limited target geometry carried onto source connectivity."""
    coeffs_tgt = tgt_basis.truncate(fm.target_k).project(tgt_mesh.vertices)
    coeffs_src = fm.pull(coeffs_tgt)
    return src_basis.truncate(fm.source_k).reconstruct(coeffs_src)


def transfer_skinning(src_mesh, src_basis, tgt_basis, fm, src_weights,
                      tgt_mesh, direction="pull"):
    """Copy skinning rows through the map.

    ``pull`` (default): each target vertex queries the low-pass target
    geometry living on source connectivity and copies that source row.
    ``push``: each target vertex is embedded near the source geometry
    instead (low-pass source coordinates on target connectivity) and
    queries the true source vertices.
    """
    from .regressor import SkinWeights

    if src_weights.n_vertices != src_mesh.n_vertices:
        raise DimensionMismatchError(
            f"weights cover {src_weights.n_vertices} vertices, source mesh "
            f"has {src_mesh.n_vertices}"
        )
    if direction == "pull":
        embedded_src = lowpass_pullback_geometry(src_basis, tgt_basis, fm,
                                                 tgt_mesh)
        nearest = cKDTree(embedded_src).query(tgt_mesh.vertices)[1]
    elif direction == "push":
        coeffs_src = src_basis.truncate(fm.source_k).project(src_mesh.vertices)
        embedded_tgt = tgt_basis.truncate(fm.target_k).reconstruct(
            fm.push(coeffs_src)
        )
        nearest = cKDTree(src_mesh.vertices).query(embedded_tgt)[1]
    else:
        raise ValueError(f"unknown direction '{direction}'")
    rows = src_weights.w[nearest]
    sums = np.asarray(rows.sum(axis=1)).ravel()
    sums[sums == 0.0] = 1.0
    import scipy.sparse as sparse

    return SkinWeights(sparse.diags(1.0 / sums) @ rows), nearest

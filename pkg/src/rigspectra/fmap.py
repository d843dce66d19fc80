"""Functional maps between two spectral bases.

The map is a small k_target x k_source matrix taking Fourier coefficients
of functions on the source mesh to coefficients on the target. It is
estimated from heat-diffused landmark indicators with a Laplacian
commutativity regularizer, refined by alternating point-to-point
conversion and spectral re-encoding while the truncation grows, and
converted to a dense vertex assignment by nearest-neighbour search
between the aligned embeddings.
"""

import numpy as np

from .errors import RigSpectraError, DimensionMismatchError
from . import serial


class EmptyLandmarksError(RigSpectraError, ValueError):
    """Descriptor construction received no landmarks."""


class RankDeficiencyError(RigSpectraError, ValueError):
    """Too few descriptors to determine the map without regularization."""


class BasisTooSmallError(RigSpectraError, ValueError):
    """Refinement asked to grow past the stored basis truncation."""


class FunctionalMap:
    """k_target x k_source coefficient map plus provenance identifiers."""

    def __init__(self, mat, source_id=None, target_id=None):
        self.mat = np.asarray(mat, dtype=np.float64)
        if self.mat.ndim != 2:
            raise DimensionMismatchError("functional map must be a matrix")
        self.source_id = source_id
        self.target_id = target_id

    @property
    def source_k(self):
        return self.mat.shape[1]

    @property
    def target_k(self):
        return self.mat.shape[0]

    def push(self, coeffs):
        """Source coefficients -> target coefficients."""
        return self.mat @ np.asarray(coeffs, dtype=np.float64)

    def pull(self, coeffs):
        """Adjoint transport: target coefficients -> source coefficients.

        For near-isometric maps the adjoint approximates the inverse; it
        is the composition used to express target geometry on the source.
        """
        return self.mat.T @ np.asarray(coeffs, dtype=np.float64)

    def save(self, path):
        serial.write_matrix(path, self.mat, meta={
            "kind": "functional_map",
            "source_k": self.source_k,
            "target_k": self.target_k,
            "source_id": self.source_id or "",
            "target_id": self.target_id or "",
        })

    def save_csv(self, path):
        serial.write_matrix_csv(path, self.mat)

    @classmethod
    def load(cls, path):
        mat, meta = serial.read_matrix(path)
        if meta.get("kind") != "functional_map":
            raise serial.FormatError(f"{path}: not a functional map file")
        return cls(mat, meta.get("source_id") or None,
                   meta.get("target_id") or None)


class PointToPointMap:
    """Dense vertex assignment: target vertex j -> source vertex assignment[j]."""

    def __init__(self, assignment, n_source):
        self.assignment = np.ascontiguousarray(assignment, dtype=np.int64)
        self.n_source = int(n_source)
        if self.assignment.ndim != 1:
            raise DimensionMismatchError("assignment must be 1-D")
        if self.assignment.size and (
            self.assignment.min() < 0 or self.assignment.max() >= self.n_source
        ):
            raise DimensionMismatchError("assignment index outside source mesh")

    def __len__(self):
        return self.assignment.size


def nearest_rows(data, queries, block_elems=2 ** 23):
    """Index of the nearest row of ``data`` for every row of ``queries``.

    Exact blocked search on squared Euclidean distance; ties resolve to
    the smallest data index (argmin semantics). Brute matmul beats any
    spatial index at these dimensionalities (rows of length ~20-120).
    """
    data = np.ascontiguousarray(data, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if data.shape[1] != queries.shape[1]:
        raise DimensionMismatchError(
            f"row length mismatch: data {data.shape[1]}, queries {queries.shape[1]}"
        )
    d_norm = (data ** 2).sum(axis=1)
    out = np.empty(queries.shape[0], dtype=np.int64)
    step = max(1, block_elems // max(1, data.shape[0]))
    for start in range(0, queries.shape[0], step):
        q = queries[start:start + step]
        # ||d - q||^2 = ||d||^2 - 2 <q, d> + const(q)
        scores = d_norm[None, :] - 2.0 * (q @ data.T)
        out[start:start + step] = np.argmin(scores, axis=1)
    return out


def landmark_descriptors(mesh, basis, landmarks, times):
    """Heat-diffused landmark indicator functions, one column per
    (landmark, time), normalized to unit mass-weighted norm.

    Column order is landmark-major so source and target descriptor
    stacks align when built from paired landmark lists.
    """
    landmarks = list(landmarks)
    if not landmarks:
        raise EmptyLandmarksError("need at least one landmark")
    for lm in landmarks:
        if lm < 0 or lm >= mesh.n_vertices:
            raise DimensionMismatchError(f"landmark {lm} outside mesh")
    times = np.asarray(list(times), dtype=np.float64)
    cols = []
    for lm in landmarks:
        # spectral heat kernel row: sum_i exp(-eval_i t) evec_i(lm) evec_i(.)
        weights = np.exp(-basis.evals[None, :] * times[:, None])  # (T, k)
        coeffs = weights * basis.evecs[lm][None, :]
        cols.append(basis.evecs @ coeffs.T)  # (n, T)
    desc = np.hstack(cols)
    norms = np.sqrt(np.einsum("nd,n,nd->d", desc, mesh.vertex_areas, desc))
    norms[norms == 0.0] = 1.0
    return desc / norms[None, :]


def default_diffusion_times(mesh, count=5, t_min=1e-3, t_max=1e-1):
    """Log-spaced diffusion times scaled by total surface area."""
    return np.geomspace(t_min, t_max, count) * mesh.total_area()


def fit_fmap(src_basis, tgt_basis, src_desc, tgt_desc, k_init=20,
             mu_commute=1e-2):
    """Initial functional map from aligned descriptor stacks.

    Minimizes the descriptor transport residual plus ``mu_commute`` times
    the Laplacian commutativity penalty; both terms are normalized by
    their data magnitude so the weight is relative. Rows of the map are
    independent ridge problems with per-row diagonal regularizers.
    """
    if src_desc.shape[1] != tgt_desc.shape[1]:
        raise DimensionMismatchError(
            f"descriptor stacks disagree: {src_desc.shape[1]} vs {tgt_desc.shape[1]}"
        )
    if k_init > src_basis.k or k_init > tgt_basis.k:
        raise BasisTooSmallError(
            f"k_init={k_init} exceeds basis orders ({src_basis.k}, {tgt_basis.k})"
        )
    sb = src_basis.truncate(k_init)
    tb = tgt_basis.truncate(k_init)
    a_hat = sb.project(src_desc)   # (k, d)
    b_hat = tb.project(tgt_desc)   # (k, d)
    d = a_hat.shape[1]

    if mu_commute == 0.0:
        if d < k_init:
            raise RankDeficiencyError(
                f"{d} descriptors cannot determine a {k_init}x{k_init} map "
                f"without regularization (condition number "
                f"{np.linalg.cond(a_hat):.3e})"
            )
        mat, _, rank, _ = np.linalg.lstsq(a_hat.T, b_hat.T, rcond=None)
        if rank < k_init:
            raise RankDeficiencyError(
                f"descriptor matrix rank {rank} < {k_init} (condition number "
                f"{np.linalg.cond(a_hat):.3e})"
            )
        mat = mat.T
    else:
        gram = a_hat @ a_hat.T
        scale = float(np.trace(gram))
        if scale == 0.0:
            raise RankDeficiencyError("descriptors vanish on the source basis")
        ev_diff = (sb.evals[None, :] - tb.evals[:, None]) ** 2  # (k_tgt, k_src)
        dsum = ev_diff.sum()
        if dsum > 0.0:
            ev_diff = ev_diff / dsum
        rhs = a_hat @ b_hat.T / scale  # (k, k): column i is for target row i
        mat = np.empty((k_init, k_init))
        for i in range(k_init):
            lhs = gram / scale + mu_commute * np.diag(ev_diff[i])
            mat[i] = np.linalg.solve(lhs, rhs[:, i])
    return FunctionalMap(mat, sb.mesh_id, tb.mesh_id)


def fmap_to_p2p(src_basis, tgt_basis, fm):
    """Vertex assignment by nearest rows of (Phi C^T) against Psi."""
    sb = src_basis.truncate(fm.source_k)
    tb = tgt_basis.truncate(fm.target_k)
    assignment = nearest_rows(sb.evecs @ fm.mat.T, tb.evecs)
    return PointToPointMap(assignment, sb.n)


def p2p_to_fmap(src_basis, tgt_basis, p2p, k):
    """Re-encode a vertex assignment: Psi^T A_target (Pi Phi)."""
    if k > src_basis.k or k > tgt_basis.k:
        raise BasisTooSmallError(
            f"k={k} exceeds basis orders ({src_basis.k}, {tgt_basis.k})"
        )
    if len(p2p) != tgt_basis.n:
        raise DimensionMismatchError(
            f"assignment covers {len(p2p)} vertices, target has {tgt_basis.n}"
        )
    if p2p.n_source != src_basis.n:
        raise DimensionMismatchError(
            f"assignment is into {p2p.n_source} vertices, source has {src_basis.n}"
        )
    pulled = src_basis.evecs[p2p.assignment, :k]  # rows of Phi through Pi
    mat = tgt_basis.evecs[:, :k].T @ (tgt_basis.mass[:, None] * pulled)
    return FunctionalMap(mat, src_basis.mesh_id, tgt_basis.mesh_id)


def farthest_point_samples(vertices, count, start=0):
    """Deterministic Euclidean farthest-point sampling of vertex indices."""
    n = vertices.shape[0]
    if count >= n:
        return np.arange(n)
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start
    dist = np.linalg.norm(vertices - vertices[start], axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(vertices - vertices[nxt], axis=1))
    return np.sort(chosen)


def zoomout_refine(src_basis, tgt_basis, fm0, k_final, step=1,
                   src_samples=None, tgt_samples=None):
    """Grow a functional map by alternating conversions.

    Each round converts the current k x k map to a vertex assignment and
    re-encodes it at order k + step, until k_final. With sample index
    arrays given, both the assignment and the re-encoding run on the
    subsets only (the re-encoding becomes a least-squares fit because
    mass-orthonormality does not restrict to subsets); the exact variant
    runs on all vertices.
    """
    k0 = fm0.source_k
    if fm0.source_k != fm0.target_k:
        raise BasisTooSmallError("refinement expects a square starting map")
    if k_final > min(src_basis.k, tgt_basis.k):
        raise BasisTooSmallError(
            f"k_final={k_final} exceeds basis orders "
            f"({src_basis.k}, {tgt_basis.k})"
        )
    if k_final < k0:
        raise BasisTooSmallError(f"k_final={k_final} below starting order {k0}")
    if step < 1:
        raise ValueError("step must be >= 1")
    sampled = src_samples is not None or tgt_samples is not None
    if sampled:
        if src_samples is None or tgt_samples is None:
            raise ValueError("sampled refinement needs both sample sets")
        src_samples = np.asarray(src_samples, dtype=np.int64)
        tgt_samples = np.asarray(tgt_samples, dtype=np.int64)

    mat = fm0.mat
    k = k0
    while k < k_final:
        k_next = min(k + step, k_final)
        if sampled:
            emb_src = src_basis.evecs[src_samples, :k] @ mat.T
            local = nearest_rows(emb_src, tgt_basis.evecs[tgt_samples, :k])
            matched = src_samples[local]
            mat, _, _, _ = np.linalg.lstsq(
                tgt_basis.evecs[tgt_samples, :k_next],
                src_basis.evecs[matched, :k_next],
                rcond=None,
            )
        else:
            emb_src = src_basis.evecs[:, :k] @ mat.T
            assignment = nearest_rows(emb_src, tgt_basis.evecs[:, :k])
            pulled = src_basis.evecs[assignment, :k_next]
            mat = tgt_basis.evecs[:, :k_next].T @ (
                tgt_basis.mass[:, None] * pulled
            )
        k = k_next
    return FunctionalMap(mat, fm0.source_id, fm0.target_id)


def estimate_map(src_mesh, src_basis, tgt_mesh, tgt_basis, landmarks,
                 k_init=20, k_final=120, mu_commute=1e-2, times=None,
                 zoomout_samples=None, step=1):
    """Landmarks-to-refined-map convenience pipeline.

    ``zoomout_samples``: None picks an automatic sample count for large
    meshes, 0 forces the exact variant, a positive count samples both
    meshes by farthest-point sampling.
    """
    landmarks.validate(src_mesh, tgt_mesh)
    if times is None:
        times = default_diffusion_times(src_mesh)
    src_desc = landmark_descriptors(src_mesh, src_basis,
                                    landmarks.source_indices, times)
    tgt_desc = landmark_descriptors(tgt_mesh, tgt_basis,
                                    landmarks.target_indices, times)
    fm = fit_fmap(src_basis, tgt_basis, src_desc, tgt_desc, k_init, mu_commute)
    if zoomout_samples is None:
        n = max(src_mesh.n_vertices, tgt_mesh.n_vertices)
        zoomout_samples = 0 if n <= 4000 else 2000
    if zoomout_samples:
        src_s = farthest_point_samples(src_mesh.vertices, zoomout_samples)
        tgt_s = farthest_point_samples(tgt_mesh.vertices, zoomout_samples)
        return zoomout_refine(src_basis, tgt_basis, fm, k_final, step,
                              src_s, tgt_s)
    return zoomout_refine(src_basis, tgt_basis, fm, k_final, step)

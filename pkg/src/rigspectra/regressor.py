"""Joint regressor estimation and its spectral form.

The spatial regressor is a small Q x n matrix mapping vertex coordinates
to joint positions. It is fitted by minimizing four energies: joint
reconstruction, locality to a masked vertex set, sparsity outside the
mask, and unit row sums. The mask keeps each joint tied to the vertices
shared between its own skinning support and its parent's, which is what
makes the regressor hold up across poses. Multiplying by the basis turns
it into a compact Q x k spectral operator.
"""

import json

import numpy as np
import scipy.io
import scipy.sparse as sparse
import scipy.sparse.linalg as sla

from .errors import RigSpectraError, DimensionMismatchError
from . import serial

WEIGHT_THRESHOLD = 1e-6  # "non-zero" skinning weight cutoff
MAX_INFLUENCES = 8       # per-vertex influence cap applied at load


class CyclicHierarchyError(RigSpectraError, ValueError):
    """Parent array does not describe a rooted tree."""


class EmptyJointSupportError(RigSpectraError, ValueError):
    """A joint's mask row has no qualifying vertices."""


class DivergenceError(RigSpectraError, RuntimeError):
    """Optimization energy blew up past its best observed value."""


class NonFiniteError(RigSpectraError, FloatingPointError):
    """NaN or inf appeared during optimization."""


class Skeleton:
    """Joint rest positions plus a parent tree.

    ``parents[root] == -1`` and every other joint's parent precedes it
    (topological order); the JSON loader reorders if necessary.
    """

    def __init__(self, joints, parents, names=None):
        self.joints = np.ascontiguousarray(joints, dtype=np.float64)
        self.parents = np.ascontiguousarray(parents, dtype=np.int64)
        if self.joints.ndim != 2 or self.joints.shape[1] != 3:
            raise DimensionMismatchError(f"joints must be (Q, 3), got {self.joints.shape}")
        q = self.joints.shape[0]
        if self.parents.shape != (q,):
            raise DimensionMismatchError("parents length disagrees with joints")
        roots = np.flatnonzero(self.parents == -1)
        if len(roots) != 1:
            raise CyclicHierarchyError(f"expected exactly one root, found {len(roots)}")
        for i, p in enumerate(self.parents):
            if p >= i or (p < 0 and p != -1):
                raise CyclicHierarchyError(
                    f"joint {i} has parent {p}; parents must precede children"
                )
        self.names = list(names) if names is not None else [f"joint_{i}" for i in range(q)]
        if len(self.names) != q:
            raise DimensionMismatchError("names length disagrees with joints")

    @property
    def n_joints(self):
        return self.joints.shape[0]

    @property
    def root(self):
        return int(np.flatnonzero(self.parents == -1)[0])


def load_skeleton(path):
    """Read skeleton JSON: {"joints": [{"name", "parent", "position"}]}.

    Joints may appear in any order; they are renumbered topologically.
    """
    with open(path) as f:
        data = json.load(f)
    entries = data["joints"]
    q = len(entries)
    parents = [int(e["parent"]) for e in entries]
    # topological reorder (parents first), stable for already-sorted input
    order, seen = [], set()
    remaining = list(range(q))
    while remaining:
        progress = False
        for i in list(remaining):
            if parents[i] == -1 or parents[i] in seen:
                order.append(i)
                seen.add(i)
                remaining.remove(i)
                progress = True
        if not progress:
            raise CyclicHierarchyError(f"{path}: joint hierarchy contains a cycle")
    inv = {old: new for new, old in enumerate(order)}
    joints = np.array([entries[i]["position"] for i in order], dtype=np.float64)
    new_parents = [-1 if parents[i] == -1 else inv[parents[i]] for i in order]
    names = [str(entries[i].get("name", f"joint_{i}")) for i in order]
    return Skeleton(joints, new_parents, names)


def save_skeleton(path, skeleton):
    data = {"joints": [
        {"name": skeleton.names[i],
         "parent": int(skeleton.parents[i]),
         "position": [float(x) for x in skeleton.joints[i]]}
        for i in range(skeleton.n_joints)
    ]}
    with open(path, "w") as f:
        json.dump(data, f, indent=1)


class SkinWeights:
    """Row-stochastic sparse n x Q vertex-to-joint weights."""

    def __init__(self, w):
        w = sparse.csr_matrix(w, dtype=np.float64)
        if w.nnz and w.data.min() < -1e-9:
            raise ValueError(f"negative skinning weight {w.data.min():.3e}")
        w.data = np.maximum(w.data, 0.0)
        sums = np.asarray(w.sum(axis=1)).ravel()
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ValueError(
                f"rows must sum to 1 within 1e-6, worst deviation "
                f"{np.abs(sums - 1.0).max():.3e}"
            )
        self.w = w

    @property
    def n_vertices(self):
        return self.w.shape[0]

    @property
    def n_joints(self):
        return self.w.shape[1]

    def toarray(self):
        return self.w.toarray()

    def column_support(self, q, threshold=WEIGHT_THRESHOLD):
        col = self.w.getcol(q).toarray().ravel()
        return col > threshold


def normalize_weights(dense_or_sparse):
    """Cap influences per row at MAX_INFLUENCES and renormalize to sum 1."""
    w = sparse.csr_matrix(dense_or_sparse, dtype=np.float64).tolil()
    for i in range(w.shape[0]):
        row = np.asarray(w.rows[i])
        dat = np.asarray(w.data[i], dtype=np.float64)
        if len(dat) > MAX_INFLUENCES:
            keep = np.argsort(dat)[-MAX_INFLUENCES:]
            w.rows[i] = [int(r) for r in row[keep]]
            w.data[i] = [float(d) for d in dat[keep]]
    w = w.tocsr()
    sums = np.asarray(w.sum(axis=1)).ravel()
    if (sums <= 0.0).any():
        raise ValueError("a vertex lost all its skinning influences")
    inv = sparse.diags(1.0 / sums)
    return SkinWeights(inv @ w)


def load_weights(path):
    """MatrixMarket coordinate file (n x Q), normalized on load."""
    return normalize_weights(scipy.io.mmread(path))


def save_weights(path, weights):
    scipy.io.mmwrite(path, weights.w.tocoo(), precision=17)


def build_mask(skeleton, weights, threshold=WEIGHT_THRESHOLD):
    """Joint-to-vertex support mask F (Q x n boolean).

    A vertex supports a joint when both the joint's and its parent's
    skinning weights exceed the threshold there; the root keeps its whole
    own support. Every joint must end up with at least one vertex.
    """
    q = skeleton.n_joints
    if weights.n_joints != q:
        raise DimensionMismatchError(
            f"weights have {weights.n_joints} joints, skeleton has {q}"
        )
    dense = weights.toarray() > threshold
    mask = np.zeros((q, weights.n_vertices), dtype=bool)
    for j in range(q):
        p = skeleton.parents[j]
        mask[j] = dense[:, j] if p == -1 else dense[:, j] & dense[:, p]
        if not mask[j].any():
            raise EmptyJointSupportError(
                f"joint '{skeleton.names[j]}' shares no support with its parent"
            )
    return mask


class SpatialRegressor:
    """Q x n joint regressor with its support mask and fit diagnostics."""

    def __init__(self, mat, mask, diagnostics=None, mesh_id=None):
        self.mat = np.asarray(mat, dtype=np.float64)
        self.mask = np.asarray(mask, dtype=bool)
        if self.mat.shape != self.mask.shape:
            raise DimensionMismatchError("regressor and mask shapes differ")
        self.diagnostics = dict(diagnostics or {})
        self.mesh_id = mesh_id

    @property
    def n_joints(self):
        return self.mat.shape[0]

    @property
    def n_vertices(self):
        return self.mat.shape[1]

    def apply(self, vertices):
        return self.mat @ np.asarray(vertices, dtype=np.float64)

    def row_normalized(self):
        """Copy with rows rescaled to sum exactly 1."""
        sums = self.mat.sum(axis=1, keepdims=True)
        return SpatialRegressor(self.mat / sums, self.mask,
                                self.diagnostics, self.mesh_id)

    def save(self, path):
        payload = np.vstack([self.mat, self.mask.astype(np.float64)])
        serial.write_matrix(path, payload, meta={
            "kind": "spatial_regressor",
            "q": self.n_joints,
            "n": self.n_vertices,
            "mesh_id": self.mesh_id or "",
            "diagnostics": {k: v for k, v in self.diagnostics.items()
                            if isinstance(v, (int, float, str))},
        })

    @classmethod
    def load(cls, path):
        payload, meta = serial.read_matrix(path)
        if meta.get("kind") != "spatial_regressor":
            raise serial.FormatError(f"{path}: not a spatial regressor file")
        q = int(meta["q"])
        return cls(payload[:q], payload[q:] > 0.5,
                   meta.get("diagnostics", {}), meta.get("mesh_id") or None)


class SpectralRegressor:
    """Q x k regressor acting on Fourier coefficients of coordinates."""

    def __init__(self, mat, basis_id=None):
        self.mat = np.asarray(mat, dtype=np.float64)
        self.basis_id = basis_id

    @property
    def n_joints(self):
        return self.mat.shape[0]

    @property
    def k(self):
        return self.mat.shape[1]

    @property
    def mesh_id(self):
        return self.basis_id.split(":", 1)[0] if self.basis_id else None

    def apply(self, coeffs):
        return self.mat @ np.asarray(coeffs, dtype=np.float64)

    def save(self, path):
        serial.write_matrix(path, self.mat, meta={
            "kind": "spectral_regressor",
            "q": self.n_joints,
            "k": self.k,
            "basis_id": self.basis_id or "",
        })

    @classmethod
    def load(cls, path):
        mat, meta = serial.read_matrix(path)
        if meta.get("kind") != "spectral_regressor":
            raise serial.FormatError(f"{path}: not a spectral regressor file")
        return cls(mat, meta.get("basis_id") or None)


def energy_breakdown(mat, mask, vertices, joints, omegas):
    """Evaluate the four energy terms at a given regressor."""
    w_rec, w_loc, w_spa, w_con = omegas
    outside = ~mask
    res_rec = mat @ vertices - joints
    e_rec = float((res_rec ** 2).sum())
    e_out = float((mat[outside] ** 2).sum())
    res_con = mat.sum(axis=1) - 1.0
    e_con = float((res_con ** 2).sum())
    total = w_rec * e_rec + (w_loc + w_spa) * e_out + w_con * e_con
    return {"rec": e_rec, "loc": e_out, "spa": e_out, "con": e_con,
            "total": total}


def fit_spatial_regressor(mesh, skeleton, mask,
                          omega_rec=1.0, omega_loc=1e4, omega_spa=100.0,
                          omega_con=1.0, lr=0.1, iters=1000,
                          solver="iterative"):
    """Fit the spatial regressor on a rigged mesh.

    The energy is quadratic so gradients are exact (no autodiff); the
    iterative path runs Adam from the mask-uniform start, the direct path
    solves each joint's least-squares system with LSQR.
    """
    for name, w in (("omega_rec", omega_rec), ("omega_loc", omega_loc),
                    ("omega_spa", omega_spa), ("omega_con", omega_con)):
        if w < 0:
            raise ValueError(f"{name} must be >= 0, got {w}")
    x = mesh.vertices
    j = skeleton.joints
    q, n = skeleton.n_joints, mesh.n_vertices
    if mask.shape != (q, n):
        raise DimensionMismatchError(
            f"mask shape {mask.shape} does not match ({q}, {n})"
        )
    omegas = (omega_rec, omega_loc, omega_spa, omega_con)
    maskf = mask.astype(np.float64)
    mat0 = maskf / maskf.sum(axis=1, keepdims=True)
    init = energy_breakdown(mat0, mask, x, j, omegas)

    if solver == "direct":
        mat = _solve_direct(x, j, mask, omegas)
        history = None
    elif solver == "iterative":
        mat, history = _solve_adam(x, j, mask, mat0, omegas, lr, iters)
    else:
        raise ValueError(f"unknown solver '{solver}'")

    final = energy_breakdown(mat, mask, x, j, omegas)
    diag = {f"energy_{key}": val for key, val in final.items()}
    diag["energy_initial"] = init["total"]
    diag["solver"] = solver
    if history is not None:
        diag["energy_history"] = history
    return SpatialRegressor(mat, mask, diag, mesh.content_hash())


def _solve_adam(x, j, mask, mat0, omegas, lr, iters,
                beta1=0.9, beta2=0.999, eps=1e-8):
    # lr is the peak rate of a warmup-plus-cosine schedule. Constant-rate
    # Adam behaves badly here twice over: its first steps are +-lr per
    # coordinate, which slams the stiff outside-mask penalty and dumps
    # noise into the flat directions inside each support, and near the
    # optimum it settles into a limit cycle instead of converging.
    w_rec, w_loc, w_spa, w_con = omegas
    outside = (~mask).astype(np.float64)
    mat = mat0.copy()
    m = np.zeros_like(mat)
    v = np.zeros_like(mat)
    warmup = max(1, iters // 10)
    history = []
    best = np.inf
    for t in range(1, iters + 1):
        res_rec = mat @ x - j
        res_con = mat.sum(axis=1) - 1.0
        out = mat * outside
        energy = (w_rec * (res_rec ** 2).sum()
                  + (w_loc + w_spa) * (out ** 2).sum()
                  + w_con * (res_con ** 2).sum())
        if not np.isfinite(energy):
            raise NonFiniteError(f"energy became non-finite at iteration {t}")
        best = min(best, energy)
        history.append(float(energy))

        grad = (2.0 * w_rec * (res_rec @ x.T)
                + 2.0 * (w_loc + w_spa) * out
                + 2.0 * w_con * res_con[:, None])
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        lr_t = (lr * min(1.0, (t / warmup) ** 2)
                * 0.5 * (1.0 + np.cos(np.pi * (t - 1) / iters)))
        mat -= lr_t * m_hat / (np.sqrt(v_hat) + eps)
    # Adam's first steps are +-lr per entry, which makes the heavy
    # outside-mask penalty spike before it decays; divergence is judged
    # on where the run ends, not on that transient
    if history[-1] > 10.0 * best and history[-1] > 1e-12:
        raise DivergenceError(
            f"final energy {history[-1]:.3e} exceeded 10x its best {best:.3e}"
        )
    return mat, history


def _solve_direct(x, j, mask, omegas):
    # per-joint least squares: sqrt-weighted rows stacked into one sparse
    # system, solved by LSQR (robust to the flat directions inside the
    # mask support)
    w_rec, w_loc, w_spa, w_con = omegas
    n = x.shape[0]
    c_out = w_loc + w_spa
    mat = np.zeros((mask.shape[0], n))
    coords = sparse.csr_matrix(np.sqrt(w_rec) * x.T)
    ones_row = sparse.csr_matrix(np.full((1, n), np.sqrt(w_con)))
    for qi in range(mask.shape[0]):
        outside = np.flatnonzero(~mask[qi])
        blocks = [coords, ones_row]
        rhs = [np.sqrt(w_rec) * j[qi], [np.sqrt(w_con)]]
        if len(outside):
            penalty = sparse.csr_matrix(
                (np.full(len(outside), np.sqrt(c_out)),
                 (np.arange(len(outside)), outside)),
                shape=(len(outside), n),
            )
            blocks.append(penalty)
            rhs.append(np.zeros(len(outside)))
        system = sparse.vstack(blocks).tocsr()
        b = np.concatenate([np.atleast_1d(np.asarray(r, dtype=np.float64))
                            for r in rhs])
        sol = sla.lsqr(system, b, atol=1e-13, btol=1e-13,
                       iter_lim=20 * n)[0]
        mat[qi] = sol
    return mat


def to_spectral(reg, basis):
    """Exact spectral form: regressor times the basis matrix."""
    if reg.n_vertices != basis.n:
        raise DimensionMismatchError(
            f"regressor has {reg.n_vertices} columns, basis {basis.n} vertices"
        )
    if reg.mesh_id is not None and reg.mesh_id != basis.mesh_id:
        raise DimensionMismatchError(
            f"regressor mesh {reg.mesh_id} differs from basis mesh {basis.mesh_id}"
        )
    return SpectralRegressor(reg.mat @ basis.evecs, basis.basis_id)


def to_spatial(spec_reg, basis):
    """Band-limited spatial form (lossy inverse of ``to_spectral``)."""
    if spec_reg.k != basis.k:
        raise DimensionMismatchError(
            f"spectral regressor order {spec_reg.k} differs from basis {basis.k}"
        )
    return spec_reg.mat @ (basis.evecs.T * basis.mass)


class Rig:
    """Bundle of skeleton, skinning weights and optional fitted regressors."""

    def __init__(self, skeleton, weights, spatial=None, spectral=None):
        self.skeleton = skeleton
        self.weights = weights
        self.spatial = spatial
        self.spectral = spectral


def load_rig(path):
    """Rig manifest JSON with paths relative to the manifest file."""
    import os

    with open(path) as f:
        data = json.load(f)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(key):
        p = data.get(key)
        return None if p is None else os.path.join(base, p)

    skeleton = load_skeleton(resolve("skeleton"))
    weights = load_weights(resolve("weights"))
    spatial = spectral = None
    if data.get("spatial_regressor"):
        spatial = SpatialRegressor.load(resolve("spatial_regressor"))
    if data.get("spectral_regressor"):
        spectral = SpectralRegressor.load(resolve("spectral_regressor"))
    return Rig(skeleton, weights, spatial, spectral)

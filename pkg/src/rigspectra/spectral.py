"""Cotangent Laplace-Beltrami operator and truncated spectral bases.

The stiffness matrix uses the classic cotangent weights, the mass matrix
is the diagonal of barycentric vertex areas, and the basis solves the
generalized problem W phi = lambda A phi for the k smallest eigenvalues
with a shift-invert Lanczos iteration (ARPACK). With a diagonal mass the
Moore-Penrose projector onto the basis is simply Phi^T A, which is what
``project`` evaluates.
"""

import os

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
import scipy.sparse.linalg as sla

from .errors import RigSpectraError, DimensionMismatchError

# near-degenerate triangles may survive the area filter; their cotangents
# are clamped instead of propagating huge weights
COT_CLAMP = 1e6

# shift for the shift-invert solve; slightly negative so the singular
# lambda=0 mode does not coincide with the pole
SIGMA = -1e-8


class DegenerateTriangleError(RigSpectraError, ValueError):
    """Defensive: zero-area geometry reached the operator assembly."""


class ConvergenceFailureError(RigSpectraError, RuntimeError):
    """Iterative eigensolver stagnated; carries achieved residuals."""


class KTooLargeError(RigSpectraError, ValueError):
    """Requested more eigenpairs than the mesh supports."""


class CotanOperator:
    """Stiffness + lumped mass pair of one mesh.

    Attributes
    ----------
    stiffness : (n, n) csr_matrix
        Symmetric PSD cotangent matrix with zero row sums.
    mass : (n, n) dia_matrix
        Diagonal matrix of the barycentric vertex areas.
    vertex_areas : (n,) array
        The diagonal of ``mass``.
    """

    def __init__(self, stiffness, vertex_areas, mesh_id):
        self.stiffness = stiffness
        self.vertex_areas = np.asarray(vertex_areas, dtype=np.float64)
        self.mass = sparse.diags(self.vertex_areas).tocsc()
        self.mesh_id = mesh_id

    @property
    def n(self):
        return self.stiffness.shape[0]


def assemble_cotan(mesh):
    """Build the cotangent operator of a mesh.

    Off-diagonal entries are -(cot a + cot b)/2 over the one or two
    triangles opposite each edge; the diagonal makes every row sum to
    zero exactly (same contributions, opposite sign).
    """
    v, t = mesh.vertices, mesh.faces
    n = mesh.n_vertices
    areas = mesh.vertex_areas
    if (areas <= 0.0).any():
        raise DegenerateTriangleError(
            "mesh has zero-area vertices (isolated?); spectral operators "
            "need strictly positive lumped areas"
        )

    rows, cols, vals = [], [], []
    for corner in range(3):
        i = t[:, (corner + 1) % 3]
        j = t[:, (corner + 2) % 3]
        opp = t[:, corner]
        e1 = v[i] - v[opp]
        e2 = v[j] - v[opp]
        cross = np.linalg.norm(np.cross(e1, e2), axis=1)
        if (cross == 0.0).any():
            raise DegenerateTriangleError("zero-area triangle in cotangent assembly")
        cot = np.clip(np.einsum("ij,ij->i", e1, e2) / cross, -COT_CLAMP, COT_CLAMP)
        w = 0.5 * cot
        # edge (i, j): -w off-diagonal both ways, +w on both diagonals
        rows.extend([i, j, i, j])
        cols.extend([j, i, i, j])
        vals.extend([-w, -w, w, w])

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    stiff = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return CotanOperator(stiff, areas, mesh.content_hash())


class SpectralBasis:
    """Truncated eigenbasis of the LBO generalized problem.

    Attributes
    ----------
    evecs : (n, k) array
        Eigenfunctions as columns, mass-orthonormal, sign-normalized so
        each column's largest-magnitude entry is positive.
    evals : (k,) array
        Non-decreasing eigenvalues (units 1/area).
    mass : (n,) array
        Diagonal vertex areas of the mesh the basis lives on.
    """

    def __init__(self, evecs, evals, mass, mesh_id):
        self.evecs = np.asarray(evecs, dtype=np.float64)
        self.evals = np.asarray(evals, dtype=np.float64)
        self.mass = np.asarray(mass, dtype=np.float64)
        self.mesh_id = mesh_id
        if self.evecs.shape[1] != self.evals.shape[0]:
            raise DimensionMismatchError("evecs/evals truncation disagrees")
        if self.evecs.shape[0] != self.mass.shape[0]:
            raise DimensionMismatchError("evecs/mass vertex count disagrees")

    @property
    def k(self):
        return self.evecs.shape[1]

    @property
    def n(self):
        return self.evecs.shape[0]

    @property
    def basis_id(self):
        return f"{self.mesh_id}:k{self.k}"

    def truncate(self, k):
        """View of the first k eigenpairs (shared storage)."""
        if k > self.k:
            raise KTooLargeError(f"truncate to {k} > stored {self.k}")
        return SpectralBasis(self.evecs[:, :k], self.evals[:k], self.mass,
                             self.mesh_id)

    def project(self, funcs):
        """Fourier coefficients Phi^T A f of per-vertex functions.

        ``funcs`` is (n,) or (n, c); returns (k,) or (k, c).
        """
        f = np.asarray(funcs, dtype=np.float64)
        if f.shape[0] != self.n:
            raise DimensionMismatchError(
                f"function has {f.shape[0]} rows, basis has {self.n} vertices"
            )
        if f.ndim == 1:
            return self.evecs.T @ (self.mass * f)
        return self.evecs.T @ (self.mass[:, None] * f)

    def reconstruct(self, coeffs):
        """Per-vertex values Phi @ coeffs of coefficient stacks."""
        c = np.asarray(coeffs, dtype=np.float64)
        if c.shape[0] != self.k:
            raise DimensionMismatchError(
                f"coefficients have {c.shape[0]} rows, basis order is {self.k}"
            )
        return self.evecs @ c

    def lowpass(self, funcs):
        """Band-limited copy of per-vertex functions: Phi Phi^T A f."""
        return self.reconstruct(self.project(funcs))


def _sign_normalize(evecs):
    # flip columns so the entry of largest magnitude is positive
    idx = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[idx, np.arange(evecs.shape[1])])
    signs[signs == 0.0] = 1.0
    return evecs * signs


def _residuals(stiff, mass, evecs, evals):
    r = stiff @ evecs - mass @ evecs * evals
    num = np.linalg.norm(r, axis=0)
    # the kernel mode has ||W phi|| ~ 0, so fall back to the operator's
    # working scale (largest computed eigenvalue times the mass norm)
    den = np.maximum(
        np.linalg.norm(stiff @ evecs, axis=0),
        max(evals.max(), 1.0) * np.linalg.norm(mass @ evecs, axis=0),
    )
    den[den == 0.0] = 1.0
    return num / den


def eigenbasis(op, k, use_dense=None):
    """Solve for the k smallest generalized eigenpairs of an operator.

    Shift-invert ARPACK around a small negative shift by default; a dense
    LAPACK solve is used when the request nearly exhausts the spectrum
    (or on demand via ``use_dense``).
    """
    n = op.n
    if k < 1 or k >= n:
        raise KTooLargeError(f"k={k} must lie in [1, n) with n={n}")
    if use_dense is None:
        use_dense = k > n - 2 or n <= 64

    if use_dense:
        evals, evecs = scipy.linalg.eigh(
            op.stiffness.toarray(), op.mass.toarray()
        )
        evals, evecs = evals[:k], evecs[:, :k]
    else:
        v0 = np.random.default_rng(0).standard_normal(n)
        try:
            evals, evecs = sla.eigsh(
                op.stiffness.tocsc(), k=k, M=op.mass, sigma=SIGMA,
                which="LM", v0=v0, maxiter=300 * k, tol=1e-10,
            )
        except sla.ArpackNoConvergence as exc:
            got = len(exc.eigenvalues)
            raise ConvergenceFailureError(
                f"eigensolver converged {got}/{k} pairs after "
                f"{300 * k} iterations"
            ) from exc

    order = np.argsort(evals)
    evals = evals[order]
    evecs = _sign_normalize(evecs[:, order])

    res = _residuals(op.stiffness, op.mass, evecs, evals)
    if res.max() > 1e-8:
        raise ConvergenceFailureError(
            f"eigen residuals up to {res.max():.3e} exceed 1e-8"
        )
    return SpectralBasis(evecs, evals, op.vertex_areas, op.mesh_id)


# ---------------------------------------------------------------------------
# sidecar cache

def cache_path(cache_dir, mesh, k):
    return os.path.join(cache_dir, f"basis_{mesh.content_hash()}_k{k}.npz")


def save_basis(path, basis):
    # write through a handle so numpy does not append '.npz' to the name
    with open(path, "wb") as f:
        np.savez(f, evecs=basis.evecs, evals=basis.evals, mass=basis.mass,
                 mesh_id=np.array(basis.mesh_id))


def load_basis(path):
    with np.load(path) as data:
        return SpectralBasis(data["evecs"], data["evals"], data["mass"],
                             str(data["mesh_id"]))


def eigenbasis_cached(mesh, k, cache_dir=None):
    """Compute (or load) the basis of a mesh, keyed by content hash."""
    if cache_dir:
        path = cache_path(cache_dir, mesh, k)
        if os.path.exists(path):
            return load_basis(path)
    basis = eigenbasis(assemble_cotan(mesh), k)
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        save_basis(cache_path(cache_dir, mesh, k), basis)
    return basis

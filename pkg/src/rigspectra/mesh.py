"""Triangle mesh container, file ingestion and basic geometric transforms.

Vertex areas use barycentric lumping (each triangle spreads a third of its
area onto each corner), which keeps the mass matrix diagonal and the
spectral projection closed-form. Faces are validated on construction:
indices in range, no repeated corner, area above a degeneracy threshold
relative to the bounding box.
"""

import hashlib

import numpy as np

from .errors import RigSpectraError, DimensionMismatchError

# Faces flatter than this fraction of the squared bbox diagonal poison the
# cotangent weights and are rejected outright.
DEGENERATE_AREA_FRACTION = 1e-12


class ParseError(RigSpectraError, ValueError):
    """Mesh file does not parse under its declared format."""


class UnsupportedFormatError(RigSpectraError, ValueError):
    """Recognized but unsupported variant (e.g. binary PLY)."""


class EmptyMeshError(RigSpectraError, ValueError):
    """Mesh has no faces."""


class FaceIndexError(RigSpectraError, IndexError):
    """A face references a vertex index outside [0, n)."""


class DegenerateFaceError(RigSpectraError, ValueError):
    """A face has a repeated corner or (near-)zero area."""


class NonOrthonormalRotationError(RigSpectraError, ValueError):
    """Rotation matrix handed to rigid_transform is not orthonormal."""


class MeshIOError(RigSpectraError, OSError):
    """Filesystem failure while reading or writing a mesh."""


class TriMesh:
    """Immutable triangle mesh with lumped vertex areas.

    Parameters
    ----------
    vertices : (n, 3) float array
        3D coordinates.
    faces : (m, 3) int array
        0-based corner indices, counter-clockwise orientation trusted
        from the file (no re-orientation pass).
    """

    def __init__(self, vertices, faces):
        v = np.ascontiguousarray(vertices, dtype=np.float64)
        t = np.ascontiguousarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise DimensionMismatchError(f"vertices must be (n, 3), got {v.shape}")
        if t.size == 0:
            raise EmptyMeshError("mesh has no faces")
        if t.ndim != 2 or t.shape[1] != 3:
            raise DimensionMismatchError(f"faces must be (m, 3), got {t.shape}")
        n = v.shape[0]
        if t.min() < 0 or t.max() >= n:
            bad = int(t.max() if t.max() >= n else t.min())
            raise FaceIndexError(f"face index {bad} outside [0, {n})")
        repeated = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
        if repeated.any():
            raise DegenerateFaceError(
                f"face {int(np.flatnonzero(repeated)[0])} repeats a vertex index"
            )
        self.vertices = v
        self.faces = t
        self.vertices.setflags(write=False)
        self.faces.setflags(write=False)

        areas = self.face_areas()
        floor = DEGENERATE_AREA_FRACTION * self.bbox_diagonal() ** 2
        if (areas <= floor).any():
            bad = int(np.flatnonzero(areas <= floor)[0])
            raise DegenerateFaceError(
                f"face {bad} has area {areas[bad]:.3e} below degeneracy "
                f"threshold {floor:.3e}"
            )
        # barycentric lumping: a third of each incident triangle
        va = np.zeros(n)
        np.add.at(va, t.ravel(), np.repeat(areas / 3.0, 3))
        self.vertex_areas = va
        self.vertex_areas.setflags(write=False)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def face_areas(self):
        """Areas of all triangles, shape (m,)."""
        p0 = self.vertices[self.faces[:, 0]]
        e1 = self.vertices[self.faces[:, 1]] - p0
        e2 = self.vertices[self.faces[:, 2]] - p0
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)

    def total_area(self):
        return float(self.face_areas().sum())

    def bbox_diagonal(self):
        """Length of the axis-aligned bounding-box diagonal."""
        ext = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(ext))

    def isolated_vertices(self):
        """Indices of vertices referenced by no face (retained, flagged)."""
        used = np.zeros(self.n_vertices, dtype=bool)
        used[self.faces.ravel()] = True
        return np.flatnonzero(~used)

    def vertex_normals(self):
        """Area-weighted per-vertex unit normals."""
        p0 = self.vertices[self.faces[:, 0]]
        fn = np.cross(self.vertices[self.faces[:, 1]] - p0,
                      self.vertices[self.faces[:, 2]] - p0)
        vn = np.zeros_like(self.vertices)
        for c in range(3):
            np.add.at(vn, self.faces[:, c], fn)
        norms = np.linalg.norm(vn, axis=1)
        norms[norms == 0.0] = 1.0
        return vn / norms[:, None]

    def vertex_adjacency(self):
        """List of neighbor index arrays, one per vertex."""
        n = self.n_vertices
        i = self.faces[:, [0, 1, 2]].ravel()
        j = self.faces[:, [1, 2, 0]].ravel()
        pairs = np.unique(np.column_stack([np.concatenate([i, j]),
                                           np.concatenate([j, i])]), axis=0)
        adj = [np.empty(0, dtype=np.int64)] * n
        if pairs.size:
            starts = np.searchsorted(pairs[:, 0], np.arange(n + 1))
            adj = [pairs[starts[k]:starts[k + 1], 1] for k in range(n)]
        return adj

    def content_hash(self):
        """Short content hash of (vertices, faces); keys caches and IDs."""
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.faces.tobytes())
        return h.hexdigest()[:16]

    def normalized_to_unit_area(self):
        """Copy of the mesh rescaled so the total surface area is 1."""
        scale = 1.0 / np.sqrt(self.total_area())
        return TriMesh(self.vertices * scale, self.faces)


def rigid_transform(mesh, rotation, translation):
    """Apply x -> R x + t to every vertex; connectivity unchanged.

    Raises NonOrthonormalRotationError unless R^T R = I within 1e-10.
    """
    rot = np.asarray(rotation, dtype=np.float64)
    tr = np.asarray(translation, dtype=np.float64).reshape(3)
    if rot.shape != (3, 3):
        raise DimensionMismatchError(f"rotation must be 3x3, got {rot.shape}")
    if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-10:
        raise NonOrthonormalRotationError(
            "rotation deviates from orthonormality by "
            f"{np.abs(rot.T @ rot - np.eye(3)).max():.3e}"
        )
    return TriMesh(mesh.vertices @ rot.T + tr, mesh.faces)


class LandmarkSet:
    """Paired vertex indices (source_idx, target_idx), 0-based."""

    def __init__(self, pairs):
        pairs = [(int(s), int(t)) for s, t in pairs]
        src = [s for s, _ in pairs]
        if len(set(src)) != len(src):
            raise ParseError("duplicate source index in landmark set")
        if any(s < 0 or t < 0 for s, t in pairs):
            raise FaceIndexError("negative landmark index")
        self.pairs = pairs

    def __len__(self):
        return len(self.pairs)

    @property
    def source_indices(self):
        return [s for s, _ in self.pairs]

    @property
    def target_indices(self):
        return [t for _, t in self.pairs]

    def validate(self, src_mesh, tgt_mesh):
        for s, t in self.pairs:
            if s >= src_mesh.n_vertices:
                raise FaceIndexError(f"source landmark {s} outside mesh")
            if t >= tgt_mesh.n_vertices:
                raise FaceIndexError(f"target landmark {t} outside mesh")
        return self


def load_landmarks(path):
    """Read a landmark file: one 'src_idx tgt_idx' pair per line.

    Blank lines and '#' comments are allowed.
    """
    pairs = []
    try:
        with open(path) as f:
            for ln, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise ParseError(f"{path}:{ln}: expected two indices")
                pairs.append((int(parts[0]), int(parts[1])))
    except OSError as exc:
        raise MeshIOError(f"cannot read landmarks {path}: {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return LandmarkSet(pairs)


def save_landmarks(path, landmarks):
    try:
        with open(path, "w") as f:
            for s, t in landmarks.pairs:
                f.write(f"{s} {t}\n")
    except OSError as exc:
        raise MeshIOError(f"cannot write landmarks {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# file ingestion (ASCII OBJ / OFF / PLY)

def _fan_triangulate(corners):
    return [(corners[0], corners[i], corners[i + 1])
            for i in range(1, len(corners) - 1)]


def _parse_obj(lines, path):
    verts, faces = [], []
    for ln, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag, _, rest = line.partition(" ")
        if tag == "v":
            parts = rest.split()
            if len(parts) < 3:
                raise ParseError(f"{path}:{ln}: vertex needs 3 coordinates")
            verts.append([float(x) for x in parts[:3]])
        elif tag == "f":
            corners = []
            for tok in rest.split():
                idx = int(tok.split("/")[0])
                # OBJ is 1-based; negative indices count from the end
                corners.append(idx - 1 if idx > 0 else len(verts) + idx)
            if len(corners) < 3:
                raise ParseError(f"{path}:{ln}: face needs >= 3 corners")
            faces.extend(_fan_triangulate(corners))
        # other records (vn, vt, o, g, s, usemtl, ...) are ignored
    return verts, faces


def _parse_off(lines, path):
    body = [ln.split("#", 1)[0].strip() for ln in lines]
    body = [ln for ln in body if ln]
    if not body or body[0] not in ("OFF", "COFF", "NOFF"):
        raise ParseError(f"{path}: missing OFF header")
    try:
        nv, nf, _ = (int(x) for x in body[1].split()[:3])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"{path}: bad OFF counts line") from exc
    if len(body) < 2 + nv + nf:
        raise ParseError(f"{path}: OFF file ends early")
    verts = [[float(x) for x in body[2 + i].split()[:3]] for i in range(nv)]
    faces = []
    for i in range(nf):
        parts = body[2 + nv + i].split()
        cnt = int(parts[0])
        corners = [int(x) for x in parts[1:1 + cnt]]
        if cnt < 3:
            raise ParseError(f"{path}: OFF face with {cnt} corners")
        faces.extend(_fan_triangulate(corners))
    return verts, faces


def _parse_ply(lines, path):
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}: missing ply header")
    n_verts = n_faces = None
    vertex_props = []
    element = None
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if line.startswith("comment"):
            continue
        if line.startswith("format"):
            if "ascii" not in line:
                raise UnsupportedFormatError(f"{path}: binary PLY not supported")
        elif line.startswith("element vertex"):
            element = "vertex"
            n_verts = int(line.split()[2])
        elif line.startswith("element face"):
            element = "face"
            n_faces = int(line.split()[2])
        elif line.startswith("element"):
            element = "other"
        elif line.startswith("property") and element == "vertex":
            vertex_props.append(line.split()[-1])
        elif line == "end_header":
            break
    else:
        raise ParseError(f"{path}: end_header not found")
    if n_verts is None or n_faces is None:
        raise ParseError(f"{path}: missing vertex/face elements")
    try:
        ix = vertex_props.index("x")
        iy = vertex_props.index("y")
        iz = vertex_props.index("z")
    except ValueError:
        ix, iy, iz = 0, 1, 2
    body = [ln.strip() for ln in lines[i:] if ln.strip()]
    if len(body) < n_verts + n_faces:
        raise ParseError(f"{path}: PLY body ends early")
    verts = []
    for row in body[:n_verts]:
        parts = row.split()
        verts.append([float(parts[ix]), float(parts[iy]), float(parts[iz])])
    faces = []
    for row in body[n_verts:n_verts + n_faces]:
        parts = row.split()
        cnt = int(parts[0])
        corners = [int(x) for x in parts[1:1 + cnt]]
        if cnt < 3:
            raise ParseError(f"{path}: PLY face with {cnt} corners")
        faces.extend(_fan_triangulate(corners))
    return verts, faces


_PARSERS = {"obj": _parse_obj, "off": _parse_off, "ply": _parse_ply}


def load_mesh(path, fmt=None):
    """Load a triangle mesh from an ASCII OBJ, OFF or PLY file.

    Non-triangular faces are fan-triangulated; the format is taken from
    the extension unless ``fmt`` is given.
    """
    path = str(path)
    if fmt is None:
        fmt = path.rsplit(".", 1)[-1].lower()
    if fmt not in _PARSERS:
        raise UnsupportedFormatError(f"unknown mesh format '{fmt}'")
    try:
        with open(path, "rb") as f:
            head = f.read(512)
        if fmt == "ply" and b"binary" in head.split(b"end_header")[0]:
            raise UnsupportedFormatError(f"{path}: binary PLY not supported")
        with open(path, "r", errors="strict") as f:
            lines = f.readlines()
    except OSError as exc:
        raise MeshIOError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not an ASCII mesh file ({exc})") from exc
    try:
        verts, faces = _PARSERS[fmt](lines, path)
    except (ValueError, IndexError) as exc:
        if isinstance(exc, RigSpectraError):
            raise
        raise ParseError(f"{path}: {exc}") from exc
    if not faces:
        raise EmptyMeshError(f"{path}: no faces")
    return TriMesh(np.asarray(verts), np.asarray(faces))


def save_mesh(mesh, path, fmt=None):
    """Write a mesh; coordinates keep full float64 precision (%.17g)."""
    path = str(path)
    if fmt is None:
        fmt = path.rsplit(".", 1)[-1].lower()
    if fmt not in _PARSERS:
        raise UnsupportedFormatError(f"unknown mesh format '{fmt}'")
    v, t = mesh.vertices, mesh.faces
    out = []
    if fmt == "obj":
        out.extend(f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in v)
        out.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in t)
    elif fmt == "off":
        out.append("OFF")
        out.append(f"{mesh.n_vertices} {mesh.n_faces} 0")
        out.extend(f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in v)
        out.extend(f"3 {a} {b} {c}" for a, b, c in t)
    else:  # ascii ply
        out.extend([
            "ply", "format ascii 1.0",
            f"element vertex {mesh.n_vertices}",
            "property double x", "property double y", "property double z",
            f"element face {mesh.n_faces}",
            "property list uchar int vertex_indices",
            "end_header",
        ])
        out.extend(f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in v)
        out.extend(f"3 {a} {b} {c}" for a, b, c in t)
    try:
        with open(path, "w") as f:
            f.write("\n".join(out) + "\n")
    except OSError as exc:
        raise MeshIOError(f"cannot write {path}: {exc}") from exc

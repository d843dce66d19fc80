"""Small header-plus-payload binary container for dense matrices.

Layout: 8-byte magic, uint32 header length, UTF-8 JSON header, then the
row-major float64 payload. The header carries the matrix shape plus
arbitrary metadata (truncation orders, mesh content hashes, ...) so files
are self-describing and mismatches can be detected before use.
"""

import json
import struct

import numpy as np

from .errors import RigSpectraError

MAGIC = b"RIGSPEC1"


class FormatError(RigSpectraError, ValueError):
    """File is not a matrix container or its header is inconsistent."""


def write_matrix(path, mat, meta=None):
    """Write a dense 2-D float64 matrix with a JSON metadata header."""
    mat = np.ascontiguousarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise FormatError(f"expected a 2-D matrix, got ndim={mat.ndim}")
    header = dict(meta or {})
    header["rows"] = int(mat.shape[0])
    header["cols"] = int(mat.shape[1])
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(mat.tobytes(order="C"))


def read_matrix(path):
    """Read a matrix container; returns ``(matrix, metadata dict)``."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", f.read(4))
        try:
            header = json.loads(f.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: unreadable header ({exc})") from exc
        rows, cols = int(header["rows"]), int(header["cols"])
        payload = f.read(rows * cols * 8)
    if len(payload) != rows * cols * 8:
        raise FormatError(f"{path}: truncated payload")
    mat = np.frombuffer(payload, dtype=np.float64).reshape(rows, cols).copy()
    return mat, header


def write_matrix_csv(path, mat):
    """Plain CSV export of a matrix, for manual inspection."""
    np.savetxt(path, np.asarray(mat, dtype=np.float64), delimiter=",", fmt="%.17g")

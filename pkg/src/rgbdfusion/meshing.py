"""Marching cubes over the TSDF grid and PLY export / import."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from ._mc_tables import TRI_TABLE
from .fusion import TsdfVolume

# cube corner i sits at offset CORNERS[i] from the cube's lower voxel
CORNERS = np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)], dtype=np.int64)
# cube edge -> (corner a, corner b)
EDGE_CORNERS = np.array([(0, 1), (1, 2), (3, 2), (0, 3), (4, 5), (5, 6),
                         (7, 6), (4, 7), (0, 4), (1, 5), (2, 6), (3, 7)], dtype=np.int64)
# cube edge -> (dx, dy, dz, axis) of the grid edge it lies on: the lower
# end point's offset from the cube origin and the edge direction
EDGE_OFFSETS = np.array([np.r_[CORNERS[a], np.flatnonzero(CORNERS[b] - CORNERS[a])[0]]
                         for a, b in EDGE_CORNERS], dtype=np.int64)

TRI_COUNT = np.array([len(t) // 3 for t in TRI_TABLE], dtype=np.int64)
TRI_ARRAY = np.full((256, 15), -1, dtype=np.int64)
for _i, _t in enumerate(TRI_TABLE):
    TRI_ARRAY[_i, :len(_t)] = _t

# Table triangles, with "inside" meaning value < iso, wind clockwise seen
# from the positive side; reversing each triple makes the right-handed face
# normal point along +gradient (toward positive tsdf, i.e. free space).
_REVERSE_WINDING = True


@dataclass(eq=False)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64, world coordinates
    faces: np.ndarray  # (F, 3) int64
    normals: np.ndarray | None = None  # (V, 3)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def edges(self) -> np.ndarray:
        """Undirected edges (sorted endpoints), one row per face side."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.sort(e, axis=1)

    def is_watertight(self) -> bool:
        if not len(self.faces):
            return False
        _, counts = np.unique(self.edges(), axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def euler_characteristic(self) -> int:
        n_edges = len(np.unique(self.edges(), axis=0)) if len(self.faces) else 0
        used = len(np.unique(self.faces)) if len(self.faces) else 0
        return used - n_edges + len(self.faces)

    def face_normals(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])


def _edge_vertices(vol: TsdfVolume, edge_ids: np.ndarray, iso: float) -> np.ndarray:
    nx, ny, nz = vol.resolution
    axis = edge_ids % 3
    lin = edge_ids // 3
    i, j, k = lin // (ny * nz), (lin // nz) % ny, lin % nz
    step = np.eye(3, dtype=np.int64)[axis]
    fa = vol.tsdf[i, j, k].astype(np.float64)
    fb = vol.tsdf[i + step[:, 0], j + step[:, 1], k + step[:, 2]].astype(np.float64)
    den = fb - fa
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(den != 0, (iso - fa) / den, 0.5)
    frac = np.clip(frac, 0.0, 1.0)
    pos = np.stack([i, j, k], axis=1).astype(np.float64) + step * frac[:, None]
    return vol.origin + pos * vol.voxel_size


def _vertex_normals(vol: TsdfVolume, verts: np.ndarray) -> np.ndarray:
    # central-difference gradient of the grid, linearly interpolated
    from scipy.ndimage import map_coordinates

    g = (verts - vol.origin) / vol.voxel_size
    f = vol.tsdf.astype(np.float64)
    out = np.zeros_like(verts)
    for a in range(3):
        e = np.zeros(3)
        e[a] = 0.5
        hi = map_coordinates(f, (g + e).T, order=1, mode="nearest")
        lo = map_coordinates(f, (g - e).T, order=1, mode="nearest")
        out[:, a] = hi - lo
    n = np.linalg.norm(out, axis=1, keepdims=True)
    return np.where(n > 0, out / np.where(n > 0, n, 1.0), 0.0)


def marching_cubes(vol: TsdfVolume, iso: float = 0.0, with_normals: bool = True) -> TriangleMesh:
    """Isosurface of the observed part of the volume.

    Vertices live on grid edges and are shared through their global edge id
    (3 * linear index of the lower voxel + axis), then renumbered in edge id
    order so output does not depend on traversal order.
    """
    tris = kernels.mc_edge_triangles(vol.tsdf, vol.weight > 0, float(iso), TRI_ARRAY, TRI_COUNT, EDGE_OFFSETS)
    if not len(tris):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)) if with_normals else None)
    ids, faces = np.unique(tris, return_inverse=True)
    faces = faces.reshape(-1, 3)
    if _REVERSE_WINDING:
        faces = faces[:, ::-1]
    verts = _edge_vertices(vol, ids, iso)
    # table triangles always use three distinct edges; kept as a guard
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    faces = np.ascontiguousarray(faces[keep])
    normals = _vertex_normals(vol, verts) if with_normals else None
    return TriangleMesh(verts, faces, normals)


def export_ply(mesh: TriangleMesh, path, binary: bool = False):
    has_n = mesh.normals is not None and len(mesh.normals) == len(mesh.vertices)
    props = ["x", "y", "z"] + (["nx", "ny", "nz"] if has_n else [])
    fmt = "binary_little_endian" if binary else "ascii"
    header = [f"ply", f"format {fmt} 1.0", f"element vertex {len(mesh.vertices)}"]
    header += [f"property {'double' if not binary else 'float'} {p}" for p in props]
    header += [f"element face {len(mesh.faces)}", "property list uchar int vertex_indices", "end_header"]
    data = np.hstack([mesh.vertices, mesh.normals]) if has_n else mesh.vertices
    if binary:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
            rec = np.zeros(len(mesh.faces), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
            rec["n"] = 3
            rec["idx"] = mesh.faces
            fh.write(rec.tobytes())
        return
    with open(path, "w") as fh:
        fh.write("\n".join(header) + "\n")
        if len(data):
            np.savetxt(fh, data, fmt="%.17g")
        if len(mesh.faces):
            np.savetxt(fh, np.c_[np.full(len(mesh.faces), 3), mesh.faces], fmt="%d")


def read_ply(path) -> TriangleMesh:
    """Reader for the files :func:`export_ply` writes (ascii or binary)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.index(b"end_header") + len(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    nv = nf = 0
    props = []
    binary = False
    for line in header:
        tok = line.split()
        if tok[:2] == ["element", "vertex"]:
            nv = int(tok[2])
        elif tok[:2] == ["element", "face"]:
            nf = int(tok[2])
        elif tok[:1] == ["property"] and tok[1] != "list":
            props.append(tok[2])
        elif tok[:1] == ["format"]:
            binary = tok[1] != "ascii"
    ncol = len(props)
    if binary:
        body = raw[end:]
        data = np.frombuffer(body, dtype="<f4", count=nv * ncol).astype(np.float64).reshape(nv, ncol)
        rec = np.frombuffer(body, dtype=[("n", "u1"), ("idx", "<i4", (3,))], count=nf, offset=nv * ncol * 4)
        faces = rec["idx"].astype(np.int64)
    else:
        lines = raw[end:].decode("ascii").split("\n")
        data = np.array([[float(x) for x in l.split()] for l in lines[:nv]]).reshape(nv, ncol)
        faces = np.array([[int(x) for x in l.split()[1:4]] for l in lines[nv:nv + nf]], dtype=np.int64).reshape(nf, 3)
    normals = data[:, 3:6] if ncol >= 6 else None
    return TriangleMesh(data[:, :3], faces, normals)

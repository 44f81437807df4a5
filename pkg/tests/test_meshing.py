import numpy as np
import pytest

from rgbdfusion.fusion import TsdfVolume
from rgbdfusion.meshing import (CORNERS, EDGE_CORNERS, TRI_COUNT, TriangleMesh, export_ply, marching_cubes,
                                read_ply)


def _sphere_volume(radius=0.5, res=64, vs=0.02):
    vol = TsdfVolume(res, vs, (-(res - 1) * vs / 2,) * 3, trunc=4 * vs)
    vol.write_sdf(lambda x, y, z: np.sqrt(x * x + y * y + z * z) - radius)
    return vol


def _cube(case):
    """Single 2x2x2 cube; corner i is inside (negative) when bit i is set."""
    vol = TsdfVolume(2, 1.0, (0, 0, 0), trunc=1.0)
    vol.weight[...] = 1.0
    for i, (x, y, z) in enumerate(CORNERS):
        vol.tsdf[x, y, z] = -0.5 if case >> i & 1 else 0.5
    return vol


def test_empty_volume_gives_empty_mesh():
    m = marching_cubes(TsdfVolume(16, 0.1))
    assert m.n_vertices == 0 and m.n_faces == 0


def test_unobserved_cubes_are_skipped():
    vol = _sphere_volume(res=32, vs=0.04)
    vol.weight[16:] = 0.0
    m = marching_cubes(vol)
    # no vertex may come from a cube with an unobserved corner
    assert m.n_faces > 0 and np.all(m.vertices[:, 0] <= vol.origin[0] + 15 * vol.voxel_size + 1e-12)


def test_analytic_sphere_mesh():
    vol = _sphere_volume()
    m = marching_cubes(vol)
    assert m.is_watertight()
    assert m.euler_characteristic() == 2
    r = np.linalg.norm(m.vertices, axis=1)
    assert np.max(np.abs(r - 0.5)) <= vol.voxel_size / 2
    # outward orientation: face normals and vertex normals point away from the center
    cen = m.vertices[m.faces].mean(axis=1)
    assert np.all(np.sum(m.face_normals() * cen, axis=1) > 0)
    assert np.all(np.sum(m.normals * m.vertices, axis=1) > 0)
    # indices in range and no repeated index within a face
    assert m.faces.min() >= 0 and m.faces.max() < m.n_vertices
    assert np.all(np.diff(np.sort(m.faces, axis=1), axis=1) > 0)


def test_single_inside_corner_gives_one_triangle():
    for corner in range(8):
        m = marching_cubes(_cube(1 << corner))
        assert m.n_faces == 1 and m.n_vertices == 3
        # each vertex is the midpoint of an edge leaving that corner
        c = CORNERS[corner]
        d = np.abs(m.vertices - c)
        assert np.allclose(np.sort(d, axis=1), [[0, 0, 0.5]] * 3)


def test_case_table_against_sign_change_enumeration():
    # independent oracle over all 256 cases: a table entry must place a
    # vertex on exactly the cube edges whose end points change sign, and
    # every triangle must face the positive (outside) side of the field
    for case in range(256):
        vol = _cube(case)
        m = marching_cubes(vol, with_normals=False)
        inside = [(case >> i) & 1 for i in range(8)]
        crossing = {tuple(sorted(e)) for e in EDGE_CORNERS.tolist() if inside[e[0]] != inside[e[1]]}
        assert m.n_faces == TRI_COUNT[case]
        got = set()
        for v in m.vertices:
            ends = [i for i, c in enumerate(CORNERS) if np.all(np.abs(v - c) <= 0.5 + 1e-12)]
            got.add(tuple(sorted(ends)))
        assert got == crossing, case
        if not crossing:
            assert m.n_faces == 0
            continue
        # trilinear field rises across each triangle along its normal
        n = m.face_normals()
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        cen = m.vertices[m.faces].mean(axis=1)
        vals = np.where(np.array(inside) == 1, -0.5, 0.5)
        assert np.all(_trilinear(vals, cen + 0.02 * n) > _trilinear(vals, cen - 0.02 * n)), case


def _trilinear(vals, p):
    out = 0.0
    for i, c in enumerate(CORNERS):
        out = out + vals[i] * np.prod(np.where(c == 1, p, 1 - p), axis=1)
    return out


def test_marching_cubes_is_deterministic():
    vol = _sphere_volume(res=40, vs=0.03)
    a, b = marching_cubes(vol), marching_cubes(vol.copy())
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.faces, b.faces)


def test_ply_empty_mesh(tmp_path):
    export_ply(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))), tmp_path / "e.ply")
    text = (tmp_path / "e.ply").read_text()
    assert "element vertex 0" in text and "element face 0" in text and text.rstrip().endswith("end_header")
    m = read_ply(tmp_path / "e.ply")
    assert m.n_vertices == 0 and m.n_faces == 0


def test_ply_single_triangle(tmp_path):
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    export_ply(m, tmp_path / "t.ply")
    lines = (tmp_path / "t.ply").read_text().splitlines()
    body = lines[lines.index("end_header") + 1:]
    assert len(body) == 4 and body[-1] == "3 0 1 2"
    assert [list(map(float, l.split())) for l in body[:3]] == [[0, 0, 0], [1, 0, 0], [0, 1, 0]]


@pytest.mark.parametrize("binary", [False, True])
def test_ply_round_trip_on_sphere(tmp_path, binary):
    m = marching_cubes(_sphere_volume(res=32, vs=0.04))
    export_ply(m, tmp_path / "s.ply", binary=binary)
    back = read_ply(tmp_path / "s.ply")
    assert np.array_equal(back.faces, m.faces)
    if binary:
        assert np.array_equal(back.vertices, m.vertices.astype(np.float32))
        assert np.array_equal(back.normals, m.normals.astype(np.float32))
    else:
        assert np.array_equal(back.vertices, m.vertices) and np.array_equal(back.normals, m.normals)

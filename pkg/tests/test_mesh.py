import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swe_fvpinn.mesh import (
    EXIT, INLET, WALL, MeshError, bed_gradient, build_mesh, cell_closure, format_mesh, generate_channel_mesh,
    generate_strip_mesh, geometry_audit, load_mesh, save_mesh,
)
from swe_fvpinn.reference import bump_bed

TWO_TRIANGLES = """SWEMESH 1
REF_WS 1.0
NODES 4
0 0 0 0
1 1 0 0
2 1 1 0
3 0 1 0
CELLS 2
0 3 0 1 2 0
1 3 0 2 3 0
PATCHES 1
box wall 0 4 0:0 0:1 1:1 1:2
"""


def test_two_triangle_file(tmp_path):
    p = tmp_path / "sq.swemesh"
    p.write_text(TWO_TRIANGLES)
    m = load_mesh(p)
    assert m.n_cells == 2
    assert len(m.interior_faces) == 1
    assert len(m.boundary_faces) == 4
    assert m.cell_area.sum() == pytest.approx(1.0)


def test_clockwise_cell_rejected(tmp_path):
    p = tmp_path / "cw.swemesh"
    p.write_text(TWO_TRIANGLES.replace("0 3 0 1 2 0", "0 3 0 2 1 0"))
    with pytest.raises(MeshError, match="area"):
        load_mesh(p)


def test_parse_error_carries_line_number(tmp_path):
    p = tmp_path / "bad.swemesh"
    p.write_text(TWO_TRIANGLES.replace("2 1 1 0", "2 1 x 0"))
    with pytest.raises(MeshError, match="line 6"):
        load_mesh(p)


def test_edge_with_three_owners_rejected():
    # two triangles stacked on the same edge 0-1 from the same side plus a third
    xy = np.array([[0, 0], [1, 0], [0.5, 1], [0.5, 0.5]], float)
    cells = [(0, 1, 2), (0, 1, 3), (1, 0, 3)]
    with pytest.raises(MeshError):
        build_mesh(xy, np.zeros(4), cells, None, [], 0.0)


def test_strip_file_roundtrip(tmp_path):
    m = generate_strip_mesh(20.0, 100, 0.2, reference_ws=1.0)
    save_mesh(m, tmp_path / "strip.swemesh")
    m2 = load_mesh(tmp_path / "strip.swemesh")
    assert m2.n_cells == 100
    assert m2.cell_area.sum() == pytest.approx(100 * 0.04, rel=1e-12)
    assert np.array_equal(m2.face_normal, m.face_normal)
    assert format_mesh(m2) == format_mesh(m)


def test_strip_cells():
    m = generate_strip_mesh(20.0, 100, 0.2)
    np.testing.assert_allclose(m.cell_area, 0.04, rtol=1e-12)
    assert {p.name for p in m.patches} == {"south", "north", "west", "east"}


def test_single_cell_strip():
    m = generate_strip_mesh(1.0, 1, 1.0)
    assert len(m.boundary_faces) == 4 and len(m.interior_faces) == 0


def test_strip_bump_bed():
    m = generate_strip_mesh(25.0, 250, 0.2, bump_bed)
    assert m.cell_zb.max() == pytest.approx(0.2, abs=1e-3)
    assert abs(m.cell_centroid[np.argmax(m.cell_zb), 0] - 10.0) < 0.1


@pytest.mark.parametrize("args", [(0.0, 10, 1.0), (1.0, 0, 1.0), (1.0, 10, -1.0)])
def test_strip_bad_dimensions(args):
    with pytest.raises(MeshError):
        generate_strip_mesh(*args)


def test_channel_block_geometry():
    block = (4.5, 5.5, 2.25, 2.75)
    m = generate_channel_mesh(15.0, 5.0, block, 0.5)
    c = m.cell_centroid
    inside = (c[:, 0] > block[0]) & (c[:, 0] < block[1]) & (c[:, 1] > block[2]) & (c[:, 1] < block[3])
    assert not inside.any()
    assert m.cell_area.sum() == pytest.approx(75.0 - 0.5, abs=1e-10)
    assert m.patch_length("block") == pytest.approx(3.0)
    assert m.patch("inlet").kind == INLET and m.patch("exit").kind == EXIT
    assert geometry_audit(m).passed


@pytest.mark.parametrize("Lx,Ly,h", [(15.0, 5.0, 0.5), (3.0, 2.0, 0.7), (1.0, 1.0, 1.0)])
def test_channel_without_block_counts(Lx, Ly, h):
    m = generate_channel_mesh(Lx, Ly, None, h)
    assert m.n_cells == math.ceil(Lx / h) * math.ceil(Ly / h)


def test_channel_errors():
    with pytest.raises(MeshError):
        generate_channel_mesh(15.0, 5.0, (14.0, 16.0, 1.0, 2.0), 0.5)
    with pytest.raises(MeshError):
        generate_channel_mesh(15.0, 5.0, (4.5, 5.5, 2.25, 2.75), 2.0)


def test_interior_normals_consistent():
    m = generate_channel_mesh(4.0, 2.0, (1.5, 2.5, 0.5, 1.5), 0.5)
    for f in m.interior_faces:
        d = m.cell_centroid[m.face_right[f]] - m.cell_centroid[m.face_left[f]]
        assert d @ m.face_normal[f] > 0
    assert np.all(m.face_hs >= 0) and np.all(m.cell_hs >= 0)


def test_audit_flags_negated_normal():
    m = generate_strip_mesh(2.0, 4, 1.0)
    assert geometry_audit(m).passed
    bad = m.face_normal.copy()
    bad[3] = -bad[3]
    object.__setattr__(m, "face_normal", bad)
    rep = geometry_audit(m)
    assert not rep.passed and rep.max_closure_defect > 0.1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_perturbed_nodes_still_close(seed):
    rng = np.random.default_rng(seed)
    n = 4
    g = np.linspace(0, 1, n + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    xy = np.column_stack([X.ravel(), Y.ravel()])
    interior = (xy > 0).all(1) & (xy < 1).all(1)
    xy[interior] += rng.uniform(-0.08, 0.08, (interior.sum(), 2))
    idx = lambda i, j: i * (n + 1) + j  # noqa: E731
    cells = [(idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)) for i in range(n) for j in range(n)]
    m = build_mesh(xy, rng.normal(size=len(xy)), cells, None, [], 0.0)
    assert np.abs(cell_closure(m)).max() <= 1e-12
    assert m.cell_area.sum() == pytest.approx(1.0, abs=1e-12)
    assert geometry_audit(m).passed


def test_bed_gradient_linear_bed_exact():
    m = generate_channel_mesh(4.0, 2.0, None, 0.5, bed_profile=lambda x, y: 0.1 * x - 0.3 * y)
    np.testing.assert_allclose(bed_gradient(m), np.tile([0.1, -0.3], (m.n_cells, 1)), atol=1e-13)


def test_locate_and_default_wall():
    m = build_mesh(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float), np.zeros(4), [(0, 1, 2, 3)], None, [], 0.0)
    assert m.patch("default_wall").kind == WALL
    assert m.locate(np.array([[0.5, 0.5]]))[0] == 0

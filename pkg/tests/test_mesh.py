import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mhdfem.mesh import TET_EDGES, build_box_mesh, classify_boundary


def edge_count(n):
    return 3 * n * (n + 1) ** 2 + 3 * n ** 2 * (n + 1) + n ** 3


def test_single_cube():
    m = build_box_mesh(1)
    assert (m.n_vertices, m.n_tets, m.n_edges) == (8, 6, 19)
    assert m.h_max == pytest.approx(np.sqrt(3.0), abs=1e-12)
    assert len(m.boundary_vertices) == 8


@pytest.mark.parametrize("n,h", [(4, 0.4330), (8, 0.216506)])
def test_h_max_matches_table(n, h):
    m = build_box_mesh(n)
    assert m.h_max == pytest.approx(np.sqrt(3.0) / n, abs=1e-12)
    assert round(m.h_max, len(str(h).split(".")[1])) == h


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_counts_and_topology(n):
    m = build_box_mesh(n)
    assert m.n_vertices == (n + 1) ** 3
    assert m.n_tets == 6 * n ** 3
    assert m.n_edges == edge_count(n)
    assert m.n_vertices - m.n_edges + m.n_faces - m.n_tets == 1
    assert np.all(m.edges[:, 0] < m.edges[:, 1])
    assert np.all(m.signed_volumes() > 0)
    assert m.signed_volumes().sum() == pytest.approx(1.0, rel=1e-12)
    # interior faces shared by two tets, boundary faces by one
    counts = np.bincount(m.tet_to_faces.ravel(), minlength=m.n_faces)
    assert set(np.unique(counts)) <= {1, 2}
    assert np.array_equal(np.flatnonzero(counts == 1), np.sort(m.boundary_faces))
    assert m.n_vertices - len(m.boundary_vertices) == (n - 1) ** 3


def test_edge_signs_match_orientation():
    m = build_box_mesh(3)
    a = m.tets[:, TET_EDGES[:, 0]]
    b = m.tets[:, TET_EDGES[:, 1]]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    assert np.array_equal(m.edges[m.tet_to_edges, 0], lo)
    assert np.array_equal(m.edges[m.tet_to_edges, 1], hi)
    assert np.array_equal(m.tet_edge_signs, np.where(a < b, 1, -1))
    # every global edge used by some tet, and listed once
    assert len(np.unique(m.tet_to_edges)) == m.n_edges
    assert len(np.unique(m.edges, axis=0)) == m.n_edges


def test_boundary_entities_lie_on_box_surface():
    m = build_box_mesh(3)
    on = lambda x: np.any((np.abs(x) < 1e-12) | (np.abs(x - 1) < 1e-12), axis=-1)
    bv = np.zeros(m.n_vertices, bool)
    bv[m.boundary_vertices] = True
    assert np.array_equal(bv, on(m.vertices))
    mids = m.edge_midpoints()
    be = np.zeros(m.n_edges, bool)
    be[m.boundary_edges] = True
    # an edge is on the boundary iff both endpoints share a boundary plane
    v = m.vertices[m.edges]
    same_plane = np.zeros(m.n_edges, bool)
    for d in range(3):
        for c in (0.0, 1.0):
            same_plane |= (np.abs(v[:, 0, d] - c) < 1e-12) & (np.abs(v[:, 1, d] - c) < 1e-12)
    assert np.array_equal(be, same_plane)
    assert np.all(on(mids[m.boundary_edges]))
    again = classify_boundary(m)
    assert np.array_equal(np.sort(again.faces), np.sort(m.boundary_faces))


@pytest.mark.parametrize("bad", [0, -1])
def test_rejects_bad_n(bad):
    with pytest.raises(ValueError):
        build_box_mesh(bad)


def test_rejects_degenerate_box():
    with pytest.raises(ValueError):
        build_box_mesh(2, box=((0, 0, 0), (1, 0, 1)))


def test_arrays_are_read_only():
    m = build_box_mesh(1)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0


@settings(max_examples=15, deadline=None)
@given(n=st.integers(1, 3),
       lo=st.tuples(*[st.floats(-2, 2)] * 3),
       ext=st.tuples(*[st.floats(0.1, 3)] * 3))
def test_box_volume_and_orientation(n, lo, ext):
    hi = tuple(a + e for a, e in zip(lo, ext))
    m = build_box_mesh(n, box=(lo, hi))
    vol = np.prod(ext)
    assert np.all(m.signed_volumes() > 0)
    assert m.signed_volumes().sum() == pytest.approx(vol, rel=1e-12)
    assert m.h_max == pytest.approx(np.linalg.norm(ext) / n, rel=1e-12)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unitcell_dg.mesh import (MeshError, StructuredSpec, build_mesh, build_structured,
                              pair_periodic_faces, read_mesh, write_mesh)


def square(h=0.5):
    return build_structured(StructuredSpec(extent=((0, 1), (0, 1)), h=h))


def test_unit_square_counts():
    m = square()
    assert m.n_elements == 8
    assert m.n_vertices == 9


def test_interval_counts():
    m = build_structured(StructuredSpec(extent=((0, 1),), h=0.25))
    assert m.n_elements == 4
    assert m.n_vertices == 5


def test_unit_cell_min_edge():
    m = build_structured(StructuredSpec(extent=((0, 0.18), (0, 0.62)), h=0.02, stack=True,
                                        layers=((0.2, "sigaas"), (0.5, "ltgaas"), (0.62, "vacuum"))))
    e = m.edge_lengths()
    assert e.min() >= 0.01
    assert e.max() <= 0.2


def test_rejects_bad_h():
    with pytest.raises(MeshError):
        build_structured(StructuredSpec(extent=((0, 1),), h=0.0))
    with pytest.raises(MeshError):
        build_structured(StructuredSpec(extent=((1, 1), (0, 1)), h=0.1))


def test_neighbor_symmetry_and_tags():
    m = build_structured(StructuredSpec(extent=((0, 0.3), (0, 0.7)), h=0.1, stack=True))
    for k in range(m.n_elements):
        for f in range(m.n_faces):
            nb = m.neighbor(k, f)
            if isinstance(nb, tuple):
                assert m.neighbor(*nb) == (k, f)
            else:
                assert nb in ("x_min", "x_max", "z_top", "z_bottom")
    assert np.all(m.signed_volumes() > 0)


@settings(max_examples=25, deadline=None)
@given(w=st.floats(0.1, 3.0), hgt=st.floats(0.1, 3.0), n=st.integers(1, 6))
def test_volume_sum(w, hgt, n):
    m = build_structured(StructuredSpec(extent=((0, w), (0, hgt)), h=min(w, hgt) / n))
    assert m.volumes().sum() == pytest.approx(w * hgt, rel=1e-12)


def test_pairing_structured_x_identity():
    m = build_structured(StructuredSpec(extent=((0, 0.18), (0, 0.62)), h=0.04))
    pr = pair_periodic_faces(m, "x")
    assert len(pr.pairs) == len(m.boundary_faces("x_min")) == len(m.boundary_faces("x_max"))
    for a, b, perm in pr.pairs:
        va = m.vertices[m.face_vertex_ids(*a)]
        vb = m.vertices[m.face_vertex_ids(*b)][list(perm)]
        assert np.allclose(va + [pr.width, 0], vb, rtol=0, atol=1e-12)


def test_pairing_1d_single_pair():
    m = build_structured(StructuredSpec(extent=((0, 1),), h=0.25))
    pr = pair_periodic_faces(m, "x")
    assert len(pr.pairs) == 1
    (a, b, _), = pr.pairs
    assert m.tags[a] == "x_min" and m.tags[b] == "x_max"


def test_pairing_twice_is_identity():
    m = build_structured(StructuredSpec(extent=((0, 1), (0, 1)), h=0.25))
    pr = pair_periodic_faces(m, "y")
    fwd, back = pr.partner_map(), pr.inverse().partner_map()
    for a, b, perm in pr.pairs:
        assert fwd[fwd[a]] == a
        assert back[b] == a
    inv = {a: p for a, _, p in pr.inverse().pairs}
    for a, b, perm in pr.pairs:
        assert tuple(perm[i] for i in inv[b]) == tuple(range(len(perm)))


def test_perturbed_vertex_reported(tmp_path):
    m = square(0.5)
    path = tmp_path / "m.dgmesh"
    write_mesh(m, path)
    lines = path.read_text().splitlines()
    # vertex (1.0, 0.5) on x_max is moved a little
    idx = next(i for i, v in enumerate(m.vertices) if np.allclose(v, [1.0, 0.5]))
    off = 1 + (1 if lines[1].startswith("#") else 0)
    lines[off + idx] = "1.0 0.53"
    path.write_text("\n".join(lines) + "\n")
    bad = read_mesh(path)
    with pytest.raises(MeshError, match="0.53"):
        pair_periodic_faces(bad, "x")


def test_file_roundtrip(tmp_path):
    m = build_structured(StructuredSpec(extent=((0, 1), (0, 2)), h=0.5, stack=True,
                                        layers=((1.0, "a"), (2.0, "b"))))
    path = tmp_path / "m.dgmesh"
    write_mesh(m, path)
    r = build_mesh(path)
    assert np.array_equal(r.elements, m.elements)
    assert np.allclose(r.vertices, m.vertices)
    assert np.array_equal(r.tags, m.tags)
    assert r.region_names == m.region_names


@pytest.mark.parametrize("text", ["nonsense\n", "dgmesh 1 2 1\n0.0\n1.0\n0 5 0\n",
                                  "dgmesh 1 2 1\n0.0\n1.0\n0 1 0\nface 0 0\n"])
def test_malformed_file(tmp_path, text):
    p = tmp_path / "bad.dgmesh"
    p.write_text(text)
    with pytest.raises(MeshError):
        read_mesh(p)


def test_submesh_tags_interfaces():
    m = build_structured(StructuredSpec(extent=((0, 0.2), (0, 1.0)), h=0.1, stack=True,
                                        layers=((0.5, "semi"), (1.0, "vac"))))
    sub, keep = m.submesh(["semi"])
    assert sub.n_elements == keep.size
    assert sub.boundary_faces("z_top")
    assert sub.volumes().sum() == pytest.approx(0.1)

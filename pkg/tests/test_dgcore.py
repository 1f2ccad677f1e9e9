import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unitcell_dg.dgcore import Field, average_jump, build_operators, reference_element
from unitcell_dg.mesh import StructuredSpec, build_structured, read_mesh


def one_triangle(tmp_path, verts=((-1, -1), (1, -1), (-1, 1))):
    p = tmp_path / "tri.dgmesh"
    lines = ["dgmesh 2 3 1"] + [f"{x} {y}" for x, y in verts] + ["0 1 2 0"]
    lines += [f"face 0 {f} x_min" for f in range(3)]
    p.write_text("\n".join(lines) + "\n")
    return read_mesh(p)


def test_p1_segment():
    ref = reference_element(1, 1)
    assert np.allclose(np.sort(ref.nodes[:, 0]), [-1, 1])
    order = np.argsort(ref.nodes[:, 0])
    D = ref.dmats[0][np.ix_(order, order)]
    assert np.allclose(D, [[-0.5, 0.5], [-0.5, 0.5]])


@pytest.mark.parametrize("dim,p", [(1, p) for p in range(1, 7)] + [(2, p) for p in range(1, 7)])
def test_node_count_and_row_sums(dim, p):
    ref = reference_element(dim, p)
    assert ref.n_nodes == (p + 1 if dim == 1 else (p + 1) * (p + 2) // 2)
    for D in ref.dmats:
        assert np.abs(D.sum(axis=1)).max() < 1e-10


@pytest.mark.parametrize("p", [1, 2, 3, 4, 5, 6])
def test_monomial_exactness_2d(p):
    ref = reference_element(2, p)
    r, s = ref.nodes.T
    for i in range(p + 1):
        for j in range(p + 1 - i):
            f = r ** i * s ** j
            dr = i * r ** max(i - 1, 0) * s ** j
            ds = j * r ** i * s ** max(j - 1, 0)
            assert np.abs(ref.dmats[0] @ f - dr).max() < 1e-10
            assert np.abs(ref.dmats[1] @ f - ds).max() < 1e-10


def test_x_squared_p2():
    ref = reference_element(2, 2)
    x = ref.nodes[:, 0]
    assert np.allclose(ref.dmats[0] @ x ** 2, 2 * x, atol=1e-12)


def test_unsupported_order():
    with pytest.raises(ValueError):
        reference_element(2, 7)
    with pytest.raises(ValueError):
        reference_element(1, 0)


def test_reference_triangle_identity(tmp_path):
    ops = build_operators(one_triangle(tmp_path), reference_element(2, 3))
    ref = ops.ref
    assert np.allclose(ops.D(0).toarray(), ref.dmats[0])
    assert np.allclose(ops.D(1).toarray(), ref.dmats[1])
    assert np.allclose(ops.M.toarray(), ref.mass)


def test_scaling_law(tmp_path):
    s = 3.0
    a = build_operators(one_triangle(tmp_path), reference_element(2, 2))
    b = build_operators(one_triangle(tmp_path, ((-s, -s), (s, -s), (-s, s))), reference_element(2, 2))
    assert np.allclose(b.M.toarray(), s ** 2 * a.M.toarray())
    assert np.allclose(b.D(0).toarray(), a.D(0).toarray() / s)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), p=st.integers(1, 4))
def test_linear_field_derivative(a, b, p):
    m = build_structured(StructuredSpec(extent=((0, 0.7), (0.1, 0.4)), h=0.1))
    ops = build_operators(m, reference_element(2, p))
    u = a * ops.x[:, 0] + b * ops.x[:, 1]
    assert np.allclose(ops.D(0) @ u, a, atol=1e-9)
    assert np.allclose(ops.D(1) @ u, b, atol=1e-9)


@pytest.mark.parametrize("dim", [1, 2])
def test_mass_spd_and_volume(dim):
    ext = ((0, 1.3),) if dim == 1 else ((0, 1.3), (0, 0.4))
    ops = build_operators(build_structured(StructuredSpec(extent=ext, h=0.1)), reference_element(dim, 3))
    for blk in ops.mass_blocks():
        assert np.allclose(blk, blk.T)
        assert np.linalg.eigvalsh(blk).min() > 0
    vol = 1.3 if dim == 1 else 1.3 * 0.4
    assert ops.integrate(np.ones(ops.n_nodes)) == pytest.approx(vol, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), p=st.integers(1, 5), axis=st.integers(0, 1))
def test_integration_by_parts(tmp_path_factory, seed, p, axis):
    rng = np.random.default_rng(seed)
    verts = ((0.0, 0.0), (1.0 + rng.random(), 0.2 * rng.random()), (0.3 * rng.random(), 1.0 + rng.random()))
    ops = build_operators(one_triangle(tmp_path_factory.mktemp("t"), verts), reference_element(2, p))
    u, v = rng.standard_normal((2, ops.n_nodes))
    MD = ops.M @ ops.D(axis)
    lhs = v @ (MD @ u) + u @ (MD @ v)
    g = ops.fscale * ops.normals[:, axis] * u[ops.vmap_m]
    rhs = v @ (ops.M @ (ops.LIFT @ g))
    assert lhs == pytest.approx(rhs, abs=1e-10 * max(1.0, abs(rhs)))


def test_derivative_convergence_order():
    p = 2
    errs = []
    for h in (0.2, 0.1, 0.05):
        ops = build_operators(build_structured(StructuredSpec(extent=((0, 1), (0, 1)), h=h)),
                              reference_element(2, p))
        x, y = ops.x.T
        du = ops.D(0) @ (np.sin(2 * x) * np.cos(y))
        errs.append(ops.l2_norm(du - 2 * np.cos(2 * x) * np.cos(y)))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > p - 0.2)


def test_average_jump():
    assert average_jump(2, 4) == (3.0, -2.0)
    a, j = average_jump(5.0, 5.0)
    assert a == 5.0 and j == 0.0
    a, j = average_jump([1, 0], [0, 1])
    assert np.allclose(a, [0.5, 0.5]) and np.allclose(j, [1, -1])
    with pytest.raises(ValueError):
        average_jump([1, 2], [1, 2, 3])


def test_field_shape():
    f = Field.from_flat("E", np.zeros((2, 12)), K=4, Np=3)
    assert f.data.shape == (4, 3, 2)
    assert f.rank == "vector"
    with pytest.raises(ValueError):
        Field.from_flat("phi", np.zeros(11), K=4, Np=3)

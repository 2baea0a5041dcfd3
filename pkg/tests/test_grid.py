import itertools

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from cemgms.grid import BoundarySpec, GridSpec, build_grid, oversample, partition_of_unity


@pytest.mark.parametrize(
    "spec, nodes, cells, coarse",
    [
        ((2, 2, 2, 2), 25, 16, 4),
        ((20, 20, 4, 4), (20 * 4 + 1) ** 2, 20 * 20 * 16, 400),
        ((1, 1, 1, 1), 4, 1, 1),
    ],
)
def test_counts(spec, nodes, cells, coarse):
    g = build_grid(GridSpec(*spec))
    assert g.n_nodes == nodes
    assert g.n_cells == cells
    assert g.n_coarse == coarse
    assert g.n_dofs == 2 * nodes


@pytest.mark.parametrize("bad", [(0, 1, 1, 1), (1, 1, 0, 1), (2, -1, 1, 1)])
def test_rejects_zero_sizes(bad):
    with pytest.raises(ValueError):
        GridSpec(*bad)


def test_cell_containment():
    g = build_grid(GridSpec(3, 2, 2, 3))
    owned = np.zeros(g.n_cells, dtype=int)
    for j, cells in enumerate(g.coarse_cells):
        assert np.all(g.cell_coarse[cells] == j)
        owned[cells] += 1
    assert np.all(owned == 1)


def _enumerate_members(Nx, Ny, j, m):
    jy, jx = divmod(j, Nx)
    return sorted(
        y * Nx + x for x in range(Nx) for y in range(Ny) if abs(x - jx) <= m and abs(y - jy) <= m
    )


def test_oversample_examples():
    g = build_grid(GridSpec(5, 5, 2, 2))
    assert len(oversample(g, 12, 1).members) == 9
    assert len(oversample(g, 0, 1).members) == 4
    assert len(oversample(g, 7, 5).members) == 25
    assert oversample(g, 7, 0).members.tolist() == [7]


def test_recursive_union_definition():
    # K_{j,m} = union of elements touching K_{j,m-1}
    g = build_grid(GridSpec(6, 4, 1, 1))
    for j in range(g.n_coarse):
        cur = {j}
        for m in range(1, 5):
            grown = set()
            for k in cur:
                ky, kx = divmod(k, g.Nx)
                for dx, dy in itertools.product((-1, 0, 1), repeat=2):
                    x, y = kx + dx, ky + dy
                    if 0 <= x < g.Nx and 0 <= y < g.Ny:
                        grown.add(y * g.Nx + x)
            cur = grown
            assert sorted(cur) == oversample(g, j, m).members.tolist()


@settings(max_examples=40, deadline=None)
@given(
    Nx=st.integers(1, 6),
    Ny=st.integers(1, 6),
    m=st.integers(0, 6),
    data=st.data(),
)
def test_region_monotone_and_roundtrip(Nx, Ny, m, data):
    g = build_grid(GridSpec(Nx, Ny, 2, 1))
    j = data.draw(st.integers(0, g.n_coarse - 1))
    r0, r1 = oversample(g, j, m), oversample(g, j, m + 1)
    assert set(r0.members) <= set(r1.members)
    assert r0.members.tolist() == _enumerate_members(Nx, Ny, j, m)
    loc = np.arange(len(r0.local_dofs))
    assert np.array_equal(r0.global_to_local(r0.local_to_global(loc)), loc)


def test_essential_mask_artificial_boundary_only():
    g = build_grid(GridSpec(5, 5, 2, 2))
    bs = BoundarySpec.from_sides(g, ("left",))
    r = oversample(g, 0, 1, bs.dirichlet_nodes(g))  # lower-left corner region, 2x2 coarse
    xy = g.node_coords[r.local_dofs[::2] // 2]
    ess = r.essential_mask[::2]
    expected = np.isclose(xy[:, 0], 0.4) | np.isclose(xy[:, 1], 0.4) | np.isclose(xy[:, 0], 0.0)
    assert np.array_equal(ess, expected)
    # region touching the domain boundary with Neumann sides leaves them free
    assert not ess[np.isclose(xy[:, 1], 0.0) & (xy[:, 0] > 0) & (xy[:, 0] < 0.4)].any()


def test_pou_partition_and_lagrange():
    g = build_grid(GridSpec(3, 4, 3, 2))
    pou = partition_of_unity(g)
    assert np.max(np.abs(np.asarray(pou.values.sum(axis=1)).ravel() - 1)) < 1e-14
    at_coarse = pou.values[g.coarse_node_fine_index].toarray()
    assert np.allclose(at_coarse, np.eye(g.n_coarse_nodes), atol=1e-14)
    assert np.max(np.abs(pou.qp_values.sum(axis=-1) - 1)) < 1e-13
    assert np.max(np.linalg.norm(pou.qp_grads.sum(axis=2), axis=-1)) < 1e-12


def test_pou_gradient_symbolic():
    g = build_grid(GridSpec(4, 4, 2, 2))
    pou = partition_of_unity(g)
    x, y = sympy.symbols("x y")
    H = sympy.Rational(1, 4)
    chi00 = (1 - x / H) * (1 - y / H)
    grad = sympy.lambdify((x, y), [sympy.diff(chi00, x), sympy.diff(chi00, y)])
    qp = g.quad_points()
    for c in g.coarse_cells[0]:
        k = list(pou.qp_hats[c]).index(0)
        for q in range(4):
            assert np.allclose(pou.qp_grads[c, q, k], grad(*qp[c, q]), atol=1e-13)


def test_boundary_spec_partition():
    g = build_grid(GridSpec(2, 2, 3, 3))
    bs = BoundarySpec.from_sides(g, ("top",))
    n = len(g.boundary_facets)
    assert n == 4 * 6
    assert len(bs.dirichlet_facets()) + len(bs.neumann_facets()) == n
    assert not set(bs.dirichlet_facets()) & set(bs.neumann_facets())
    with pytest.raises(ValueError):
        BoundarySpec(np.zeros(n, dtype=bool))

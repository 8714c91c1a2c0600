import numpy as np
import pytest
import scipy.sparse as sp

from wavecouple.errors import FactorizationError
from wavecouple.fem import (
    FemMatrices,
    assemble_coupling,
    assemble_interior,
    estimate_D_norm,
    factorize_spd,
    solve,
    surface_mass_p0p1,
    weak_gradient,
    write_triplets,
)
from wavecouple.mesh import VolumeMesh, extract_boundary, make_cube_mesh

REF_TET = VolumeMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]), [[0, 1, 2, 3]])


def test_local_mass_matrix():
    m = assemble_interior(REF_TET).M0.toarray()
    vol = 1.0 / 6.0
    want = np.full((4, 4), vol / 20) + np.eye(4) * (vol / 10 - vol / 20)
    np.testing.assert_allclose(m, want, rtol=1e-14)
    assert abs(m.sum() - vol) < 1e-15


def test_mass_properties(cube2):
    vol, _, _ = cube2
    mats = assemble_interior(vol)
    assert abs(mats.M0.sum() - 1.0) <= 1e-12
    assert abs(mats.M0 - mats.M0.T).max() == 0
    assert abs(mats.M1 - mats.M1.T).max() == 0
    nu = vol.n_vertices
    assert mats.M1.shape == (3 * nu, 3 * nu) and mats.D.shape == (3 * nu, nu)
    np.testing.assert_array_equal(mats.M1.toarray(), sp.block_diag([mats.M0] * 3).toarray())


def test_mass_scaling():
    a = assemble_interior(make_cube_mesh(2, 1.0)).M0.toarray()
    b = assemble_interior(make_cube_mesh(2, 2.0)).M0.toarray()
    np.testing.assert_allclose(b, 8 * a, rtol=1e-13)


def test_D_constant_fields(cube2):
    vol, _, _ = cube2
    mats = assemble_interior(vol)
    nu = vol.n_vertices
    w = np.ones(nu)
    for c in range(3):
        z = np.zeros(3 * nu)
        z[c * nu:(c + 1) * nu] = 1.0
        assert abs(z @ (mats.D @ w)) <= 1e-14


def test_degenerate_tet_named():
    from wavecouple.errors import AssemblyError, MeshIntegrityError

    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.2, 0.2, 1e-30]])
    with pytest.raises((AssemblyError, MeshIntegrityError), match="tet 0"):
        assemble_interior(VolumeMesh(v, [[0, 1, 2, 3]]))


def test_coupling_entries(cube2):
    vol, surf, trace = cube2
    C0, C1 = assemble_coupling(vol, surf, trace)
    nu = vol.n_vertices
    assert C0.shape == (nu, surf.n_triangles) and C1.shape == (3 * nu, surf.n_vertices)
    # each triangle column sums to half its area, split evenly over 3 vertices
    np.testing.assert_allclose(np.asarray(C0.sum(axis=0)).ravel(), 0.5 * surf.areas, rtol=1e-14)
    for k in range(surf.n_triangles):
        col = C0[:, k].toarray().ravel()
        np.testing.assert_allclose(col[surf_vertices(surf, trace, k)], surf.areas[k] / 6)
    bnd = set(trace.vertex_trace.tolist())
    assert set(C0.nonzero()[0].tolist()) <= bnd
    assert set((C1.nonzero()[0] % nu).tolist()) <= bnd
    # constant vector field against the constant boundary function
    for c in range(3):
        z = np.zeros(3 * nu)
        z[c * nu:(c + 1) * nu] = 1.0
        assert abs(z @ (C1 @ np.ones(surf.n_vertices))) <= 1e-14


def surf_vertices(surf, trace, k):
    return trace.vertex_trace[surf.triangles[k]]


def test_coupling_sparsity_single_cube():
    vol = make_cube_mesh(1, 1.0)
    surf, trace = extract_boundary(vol)
    C0, _ = assemble_coupling(vol, surf, trace)
    assert C0.shape[1] == 12 and C0.nnz == 36
    assert np.all(np.diff(C0.tocsc().indptr) == 3)


def test_greens_formula(cube3, rng):
    vol, surf, trace = cube3
    mats = assemble_interior(vol)
    C0, C1 = assemble_coupling(vol, surf, trace)
    u = rng.standard_normal(vol.n_vertices)
    np.testing.assert_allclose(mats.D @ u - C1 @ u[trace.vertex_trace], weak_gradient(vol) @ u,
                               atol=1e-14)


def test_surface_mass_p0p1(cube2):
    _, surf, _ = cube2
    M = surface_mass_p0p1(surf)
    np.testing.assert_allclose(M @ np.ones(surf.n_vertices), surf.areas, rtol=1e-14)


def test_D_norm_small_cases():
    z = FemMatrices(sp.eye(2, format="csr"), sp.eye(2, format="csr"), sp.csr_matrix((2, 2)))
    assert estimate_D_norm(z) == 0.0
    one = FemMatrices(sp.csr_matrix([[4.0]]), sp.csr_matrix([[4.0]]), sp.csr_matrix([[2.0]]))
    assert abs(estimate_D_norm(one) - 0.5) <= 1e-12


def test_D_norm_dense_oracle():
    from wavecouple.verify import d_norm_dense

    assert d_norm_dense(2)["rel_error"] <= 1e-3


def test_spd_solver(cube2, rng):
    x = solve(factorize_spd(sp.eye(5, format="csr")), np.arange(5.0))
    np.testing.assert_array_equal(x, np.arange(5.0))
    np.testing.assert_allclose(factorize_spd(sp.diags([2.0, 5.0])).solve(np.array([2.0, 10.0])),
                               [1.0, 2.0])
    M0 = assemble_interior(cube2[0]).M0
    b = rng.standard_normal(M0.shape[0])
    for method in ("direct", "cg"):
        s = factorize_spd(M0, method=method)
        assert np.linalg.norm(M0 @ s.solve(b) - b) <= 1e-10 * np.linalg.norm(b)


@pytest.mark.parametrize("A", [sp.diags([1.0, -1.0]), sp.csr_matrix((2, 2)),
                               sp.csr_matrix([[1.0, 2.0], [0.0, 1.0]])])
def test_spd_solver_rejects(A):
    with pytest.raises(FactorizationError):
        factorize_spd(A)


def test_triplets(tmp_path):
    p = tmp_path / "m.txt"
    write_triplets(sp.csr_matrix([[0.0, 1.5], [2.0, 0.0]]), p)
    rows = sorted(tuple(ln.split()) for ln in p.read_text().splitlines())
    assert rows == [("0", "1", "1.5"), ("1", "0", "2.0")]

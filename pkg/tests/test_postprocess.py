import numpy as np
import pytest
import scipy.sparse as sp

from wavecouple.errors import InvalidParameterError, ProximityError
from wavecouple.mesh import extract_boundary, make_cube_mesh
from wavecouple.postprocess import (
    ExteriorProbe,
    PointLocator,
    compare_fields,
    eval_exterior,
    interpolate_p1,
    potential_weights,
)

POINTS = [[0.5, 0.5, 2.0], [2.0, 0.5, 0.5]]
DT, M = 0.1, 10


@pytest.fixture(scope="module")
def setup():
    vol = make_cube_mesh(2, 1.0)
    surf, _ = extract_boundary(vol)
    w = potential_weights(POINTS, surf, DT, M - 1)
    return surf, w


def _hist(surf, rng, m=M):
    return rng.standard_normal((m, surf.n_triangles)), rng.standard_normal((m, surf.n_vertices))


def test_zero_densities(setup):
    surf, w = setup
    pr = eval_exterior(POINTS, np.zeros((M, surf.n_triangles)), np.zeros((M, surf.n_vertices)),
                       DT, surf, weights=w)
    assert np.all(pr.values == 0.0)
    np.testing.assert_allclose(pr.times, (np.arange(M) + 0.5) * DT)


def test_causality(setup, rng):
    surf, w = setup
    phi, psi = _hist(surf, rng)
    k = 4
    phi[:k] = 0.0
    psi[:k] = 0.0
    pr = eval_exterior(POINTS, phi, psi, DT, surf, weights=w)
    assert np.all(pr.values[:k] == 0.0)
    phi2, psi2 = phi.copy(), psi.copy()
    phi2[7:] += 1.0
    pr2 = eval_exterior(POINTS, phi2, psi2, DT, surf, weights=w)
    np.testing.assert_array_equal(pr.values[:7], pr2.values[:7])


def test_linearity(setup, rng):
    surf, w = setup
    a, b = _hist(surf, rng), _hist(surf, rng)
    ea = eval_exterior(POINTS, *a, DT, surf, weights=w).values
    eb = eval_exterior(POINTS, *b, DT, surf, weights=w).values
    eab = eval_exterior(POINTS, a[0] + b[0], a[1] + b[1], DT, surf, weights=w).values
    np.testing.assert_allclose(eab, ea + eb, rtol=0, atol=1e-10 * np.abs(eab).max())


def test_weights_match_direct_evaluation(setup, rng):
    surf, w = setup
    phi, psi = _hist(surf, rng)
    a = eval_exterior(POINTS, phi, psi, DT, surf, weights=w).values
    b = eval_exterior(POINTS, phi, psi, DT, surf).values
    np.testing.assert_array_equal(a, b)


def test_errors(setup, rng):
    surf, w = setup
    phi, psi = _hist(surf, rng)
    with pytest.raises(ProximityError):
        eval_exterior([[0.5, 0.5, 1.01]], phi, psi, DT, surf)
    with pytest.raises(InvalidParameterError):
        eval_exterior(POINTS, phi[:3], psi, DT, surf, weights=w)
    with pytest.raises(InvalidParameterError):
        eval_exterior(POINTS, *_hist(surf, rng, M + 2), DT, surf, weights=w)


def test_probe_csv(tmp_path):
    pr = ExteriorProbe(np.zeros((2, 3)), np.array([0.05, 0.15]), np.array([[1.0, 2.0], [3.0, 4.0]]))
    pr.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "point_id,step,time,value"
    assert lines[1:] == ["0,0,0.05,1.0", "0,1,0.15,3.0", "1,0,0.05,2.0", "1,1,0.15,4.0"]


def test_compare_fields():
    M = sp.identity(3, format="csr")
    a = np.array([1.0, 2.0, 3.0])
    assert compare_fields(a, a, M) == {"l2_error": 0.0, "linf_error": 0.0}
    r = compare_fields(np.array([2.0, 0.0, 0.0]), np.zeros(3), M)
    assert r["l2_error"] == 2.0 and r["linf_error"] == 2.0
    with pytest.raises(InvalidParameterError):
        compare_fields(a, a[:2], M)


def test_p1_interpolation_exact_for_linear(rng):
    vol = make_cube_mesh(3, 2.0)
    f = lambda x: 1.0 + 2 * x[:, 0] - x[:, 1] + 0.5 * x[:, 2]
    pts = rng.uniform(0, 2, size=(50, 3))
    np.testing.assert_allclose(interpolate_p1(vol, f(vol.vertices), pts), f(pts), atol=1e-12)
    with pytest.raises(InvalidParameterError):
        PointLocator(vol).locate([[3.0, 0, 0]])

import numpy as np
import pytest

from wavecouple.errors import InvalidParameterError
from wavecouple.quadrature import edge_rule, identical_rule, shape_p1, triangle_rule, vertex_rule

# reference triangle {0 <= x2 <= x1 <= 1}


@pytest.mark.parametrize("q", [1, 2, 4, 6])
def test_triangle_rule_weights(q):
    pts, wts = triangle_rule(q)
    assert abs(wts.sum() - 0.5) < 1e-15
    assert np.all(pts[:, 1] <= pts[:, 0] + 1e-15)


def test_triangle_rule_polynomials():
    pts, wts = triangle_rule(4)
    x1, x2 = pts[:, 0], pts[:, 1]
    assert abs(wts @ x1 - 1 / 3) < 1e-14
    assert abs(wts @ (x1 * x2) - 1 / 8) < 1e-14
    assert abs(wts @ (x2**3) - 1 / 20) < 1e-14


def test_shape_partition_of_unity():
    pts, _ = triangle_rule(3)
    np.testing.assert_allclose(shape_p1(pts).sum(axis=1), 1.0)


@pytest.mark.parametrize("rule", [identical_rule, edge_rule, vertex_rule])
def test_pair_rules_integrate_polynomials(rule):
    r = rule(4)
    assert abs(r.w.sum() - 0.25) < 1e-13
    assert abs(r.w @ (r.x[:, 0] * r.y[:, 0]) - 1 / 9) < 1e-13


def _ref_xyz(p):
    return np.column_stack([p[:, 0], p[:, 1], np.zeros(len(p))])


def test_identical_rule_weakly_singular_converges():
    vals = []
    for q in (3, 5, 7):
        r = identical_rule(q)
        d = np.linalg.norm(_ref_xyz(r.x) - _ref_xyz(r.y), axis=1)
        vals.append(r.w @ (1.0 / d))
    assert abs(vals[1] - vals[2]) < 1e-3 * abs(vals[2])
    assert abs(vals[0] - vals[2]) > abs(vals[1] - vals[2])


def test_invalid_order():
    with pytest.raises(InvalidParameterError):
        triangle_rule(0)
    with pytest.raises(InvalidParameterError):
        identical_rule(0)

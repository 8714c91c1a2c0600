import math

import numpy as np
import pytest

from wavecouple.bem import (
    BoundaryAssembler,
    QuadratureConfig,
    assemble_boundary_ops,
    check_proximity,
    helmholtz_kernel,
    potential_matrices,
)
from wavecouple.errors import InvalidParameterError, ProximityError, SingularityError
from wavecouple.mesh import make_icosphere
from wavecouple.verify import sphere_potentials, sphere_single_layer


def test_kernel_values():
    x, y = np.zeros(3), np.array([1.0, 0, 0])
    assert math.isclose(helmholtz_kernel(0, x, y), 0.07957747, rel_tol=1e-7)
    assert math.isclose(helmholtz_kernel(1, x, y), 0.02927491, rel_tol=1e-6)
    v = helmholtz_kernel(1j, x, np.array([math.pi, 0, 0]))
    assert abs(v - (-1 / (4 * math.pi**2))) < 1e-15


def test_kernel_singular():
    with pytest.raises(SingularityError):
        helmholtz_kernel(1.0, np.ones(3), np.ones(3))


def test_frequency_and_order_validation(sphere1):
    with pytest.raises(InvalidParameterError):
        assemble_boundary_ops(-1.0, sphere1)
    with pytest.raises(InvalidParameterError):
        assemble_boundary_ops(2j, sphere1)
    with pytest.raises(InvalidParameterError):
        QuadratureConfig(q_far=1)


@pytest.fixture(scope="module")
def ops1(sphere1):
    asm = BoundaryAssembler(sphere1)
    return asm, asm.operators(1.0 + 2.0j)


def test_symmetry(ops1):
    _, ops = ops1
    assert np.abs(ops.V - ops.V.T).max() <= 1e-8 * np.abs(ops.V).max()
    assert np.abs(ops.W - ops.W.T).max() <= 1e-8 * np.abs(ops.W).max()
    np.testing.assert_array_equal(ops.KT, ops.K.T)


def test_static_identities(sphere1):
    ops = BoundaryAssembler(sphere1).operators(1e-8)
    # double layer of 1 is -1/2 on the surface, hypersingular of 1 vanishes
    lhs = ops.K @ np.ones(sphere1.n_vertices)
    np.testing.assert_allclose(lhs, -0.5 * sphere1.areas, atol=2e-3 * sphere1.areas.max())
    assert np.abs(ops.W @ np.ones(sphere1.n_vertices)).max() < 1e-8


def test_s_continuity(sphere1):
    asm = BoundaryAssembler(sphere1)
    V0 = asm.single_layer(1.0)
    diffs = [np.abs(asm.single_layer(1.0 + d) - V0).max() for d in (1e-3, 5e-4)]
    assert diffs[0] > 0
    assert abs(diffs[0] / diffs[1] - 2.0) < 1e-2


def test_sphere_single_layer_oracle():
    r = sphere_single_layer((1, 2))
    assert r["form_error"][1] <= 0.05 and r["rayleigh_error"][1] <= 0.05
    assert r["form_error"][0] > r["form_error"][1]
    assert r["rayleigh_error"][0] >= 2 * r["rayleigh_error"][1]


def test_potential_oracles():
    r = sphere_potentials(2)
    assert abs(r["single_layer_r2"] - 0.5) <= 0.025
    assert abs(r["double_layer_outside"]) <= 0.05
    assert abs(r["double_layer_inside"] + 1.0) <= 0.05


def test_potential_shapes_and_proximity(sphere1):
    S, D = potential_matrices(1.0, [[0, 0, 3.0], [3.0, 0, 0]], sphere1)
    assert S.shape == (2, sphere1.n_triangles) and D.shape == (2, sphere1.n_vertices)
    with pytest.raises(ProximityError):
        potential_matrices(1.0, [[0, 0, 1.01]], sphere1)
    with pytest.raises(ProximityError):
        check_proximity(sphere1.vertices[:1], sphere1)


def test_single_layer_potential_complex_frequency():
    # uniform density on the unit sphere: exp(-s rho) sinh(s) / (s rho) outside
    surf = make_icosphere(2, 1.0)
    s, rho = 0.5 + 1.0j, 3.0
    S, _ = potential_matrices(s, [[0.0, 0.0, rho]], surf)
    want = np.exp(-s * rho) * np.sinh(s) / (s * rho)
    assert abs(S.sum() - want) < 0.05 * abs(want)

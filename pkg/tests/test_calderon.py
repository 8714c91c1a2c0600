import numpy as np
import pytest

from wavecouple.bem import BoundaryAssembler
from wavecouple.calderon import (
    CalderonBlock,
    CqWeights,
    assemble_calderon,
    coercivity_probe,
    cq_calderon_weights,
    herglotz_form,
)
from wavecouple.errors import InvalidParameterError
from wavecouple.verify import HERGLOTZ_RHO, coercivity, herglotz


@pytest.fixture(scope="module")
def asm1(sphere1):
    return BoundaryAssembler(sphere1)


def test_block_layout(sphere1, asm1):
    B = assemble_calderon(1.0, sphere1, assembler=asm1)
    nt, nv = sphere1.n_triangles, sphere1.n_vertices
    ops = asm1.operators(1.0)
    assert B.M.shape == (nt + nv, nt + nv)
    np.testing.assert_array_equal(B.M[:nt, :nt], ops.V)
    np.testing.assert_array_equal(B.M[:nt, nt:], ops.K)
    np.testing.assert_array_equal(B.M[nt:, :nt], -ops.KT)
    np.testing.assert_array_equal(B.M[nt:, nt:], ops.W)


def test_kernel_depends_on_s(sphere1, asm1):
    nt = sphere1.n_triangles
    B1 = assemble_calderon(1.0, sphere1, assembler=asm1).M[:nt, :nt]
    B2 = assemble_calderon(2.0, sphere1, assembler=asm1).M[:nt, :nt]
    assert np.abs(B2 - 2 * B1).max() > 1e-3 * np.abs(B2).max()


def test_block_shape_checked():
    with pytest.raises(InvalidParameterError):
        CalderonBlock(1.0, np.zeros((3, 3)), 1, 1)


def test_probe_trivial_matrices():
    assert abs(coercivity_probe(np.eye(6), 10, seed=3) - 1.0) < 1e-14
    assert abs(coercivity_probe(np.diag([1j, -1j]), 10)) < 1e-15
    assert coercivity_probe(np.eye(4), 5, seed=7) == coercivity_probe(np.eye(4), 5, seed=7)
    with pytest.raises(InvalidParameterError):
        coercivity_probe(np.eye(2), 0)


def test_probe_deterministic(sphere1, asm1):
    B = assemble_calderon(1.0 + 1.0j, sphere1, assembler=asm1)
    assert coercivity_probe(B, 20, seed=5) == coercivity_probe(B, 20, seed=5)


def test_coercivity_oracle():
    for r in coercivity(1, freqs=(1.0, 1.0 + 3.0j)):
        assert r["min_form"] >= r["allowance"]


def test_weights_B0_and_decay(sphere1, asm1):
    dt, N = 0.1, 12
    w = cq_calderon_weights(sphere1, dt, N, assembler=asm1)
    B0 = assemble_calderon(1.5 / dt, sphere1, assembler=asm1).M
    assert np.abs(B0.imag).max() == 0
    assert np.abs(w.W[0] - B0.real).max() <= 1e-5 * np.abs(B0).max()
    sizes = np.abs(w.W).max(axis=(1, 2))
    assert sizes.max() <= 2 * sizes[0]
    assert len(w) == N + 1 and w.dim == sphere1.n_triangles + sphere1.n_vertices


def test_weights_shape_checked():
    with pytest.raises(InvalidParameterError):
        CqWeights(0.1, 2, 0.5, np.zeros((2, 3, 3)), 1, 2)


def test_history_and_apply(rng):
    W = rng.standard_normal((4, 3, 3))
    w = CqWeights(0.1, 3, 0.5, W, 1, 2)
    seq = rng.standard_normal((4, 3))
    want = sum(W[3 - j] @ seq[j] for j in range(4))
    np.testing.assert_allclose(w.apply(seq, 3), want)
    np.testing.assert_allclose(w.history(seq, 3), want - W[0] @ seq[3])
    np.testing.assert_array_equal(w.history(seq, 0), np.zeros(3))


def test_herglotz_oracle():
    r = herglotz(level=0, trials=20)
    assert r["min_ratio"] >= r["allowance"]


def test_herglotz_form_identity():
    w = CqWeights(0.1, 2, 0.5, np.stack([np.eye(2), np.zeros((2, 2)), np.zeros((2, 2))]), 1, 1)
    seq = np.array([[1.0, 0.0], [0.0, 2.0]])
    form, norm = herglotz_form(w, seq, HERGLOTZ_RHO)
    assert abs(form - norm) < 1e-15
    assert abs(norm - (1 + 4 * HERGLOTZ_RHO**2)) < 1e-14

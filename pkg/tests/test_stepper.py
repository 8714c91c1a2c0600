import dataclasses
import math

import numpy as np
import pytest
import scipy.sparse as sp

from wavecouple.errors import FactorizationError, InstabilityError, InvalidParameterError
from wavecouple.fem import FemMatrices
from wavecouple.mesh import make_cube_mesh
from wavecouple.stepper import (
    Bump,
    EnergyTrace,
    Forcing,
    SimConfig,
    SimState,
    build_boundary_system,
    build_problem,
    field_energy,
    leapfrog_interior,
    prepare,
    run,
    simulate,
)
from wavecouple.verify import (
    boundary_system_probe,
    coupling_identities,
    scheme_identity,
    short_energy_run,
    zero_data_run,
)

BUMP = Bump((0.5, 0.5, 0.5), 0.3, 1.0, "compact", 4)


@pytest.fixture(scope="module")
def prepared2():
    vol = make_cube_mesh(2, 1.0)
    cfg = SimConfig(vol, n_steps=8, u0=BUMP)
    problem, system = prepare(cfg)
    return cfg, problem, system


def test_bump_profiles():
    g = Bump((0, 0, 0), 0.5, 2.0, "gaussian")
    assert math.isclose(g([[0.5, 0, 0]])[0], 2 * math.exp(-1))
    c = Bump((0, 0, 0), 0.5, 1.0, "compact", 2)
    assert c([[0.6, 0, 0]])[0] == 0.0
    assert math.isclose(c([[0.25, 0, 0]])[0], 0.75**2)
    assert math.isclose(float(c.radial_profile(0.25)), 0.75**2)
    with pytest.raises(InvalidParameterError):
        Bump(kind="box")
    with pytest.raises(InvalidParameterError):
        Bump(width=0.0)


def test_forcing_profile():
    f = Forcing(BUMP, duration=1.0, frequency=0.0)
    assert f.time_profile(0.5) == 1.0
    assert f.time_profile(1.5) == 0.0 and f.time_profile(-0.1) == 0.0
    with pytest.raises(InvalidParameterError):
        Forcing(BUMP, duration=0.0)


def test_config_validation():
    vol = make_cube_mesh(1, 1.0)
    with pytest.raises(InvalidParameterError):
        SimConfig(vol, alpha=0.5)
    SimConfig(vol, alpha=0.5, allow_unstable=True)
    with pytest.raises(InvalidParameterError):
        SimConfig(vol, n_steps=-1)
    with pytest.raises(InvalidParameterError):
        SimConfig(vol, dt=-0.1)


def test_cfl_enforced(prepared2):
    cfg, problem, _ = prepared2
    bad = dataclasses.replace(cfg, dt=1.5 / problem.D_norm)
    with pytest.raises(InvalidParameterError, match="CFL"):
        prepare(bad, problem)


def test_n_steps_zero_returns_initial_state():
    vol = make_cube_mesh(2, 1.0)
    cfg = SimConfig(vol, n_steps=0, u0=BUMP)
    state, trace = run(cfg)
    np.testing.assert_array_equal(state.u, BUMP(vol.vertices))
    assert state.n == 0 and len(trace) == 1


def test_zero_data_stays_zero():
    assert zero_data_run(2, 4) == 0.0


def test_determinism(prepared2):
    cfg, problem, system = prepared2
    a = simulate(cfg, problem, system).trace
    b = simulate(cfg, problem, system).trace
    assert a.energy == b.energy and a.solve_residual == b.solve_residual


def test_history_lengths(prepared2):
    cfg, problem, system = prepared2
    st = simulate(cfg, problem, system).state
    st.check()
    assert len(st.phi_hist) == 8 and len(st.psi_hist) == 9
    bad = dataclasses.replace(st, psi_hist=st.psi_hist[:-1])
    with pytest.raises(InvalidParameterError):
        bad.check()


def test_field_energy_examples(prepared2):
    _, problem, _ = prepared2
    mats = problem.mats
    z = np.zeros(mats.n_v)
    st = SimState(0, 0.0, np.zeros(mats.n_u), z, z, z, [], [], [])
    assert field_energy(st, mats) == 0.0
    u = np.ones(mats.n_u) * math.sqrt(2.0)  # u^T M0 u = 2 on the unit cube
    st = dataclasses.replace(st, u=u)
    assert abs(field_energy(st, mats) - 1.0) < 1e-12


def test_energy_trace_csv(tmp_path):
    tr = EnergyTrace()
    tr.append(0, 0.0, 1.0, 0.0)
    tr.append(1, 0.1, 0.5, 1e-17)
    tr.to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines == ["step,time,energy,solve_residual", "0,0.0,1.0,0.0", "1,0.1,0.5,1e-17"]


def test_boundary_system_without_coupling(prepared2, rng):
    _, problem, system = prepared2
    m = problem.mats
    zero = dataclasses.replace(m, C0=sp.csr_matrix(m.C0.shape), C1=sp.csr_matrix(m.C1.shape))
    bs = build_boundary_system(system.weights, zero, 1.0, system.dt, solvers=problem.solvers)
    assert np.abs(bs.H).max() == 0
    x = rng.standard_normal(system.weights.dim)
    np.testing.assert_allclose(bs.solve(system.weights.W[0] @ x), x, rtol=0, atol=1e-10)


def test_alpha_scales_lower_block(prepared2):
    _, problem, system = prepared2
    n_phi = system.weights.n_phi
    b2 = build_boundary_system(system.weights, problem.mats, 2.0, system.dt, problem.solvers)
    np.testing.assert_array_equal(b2.H[:n_phi, :], system.H[:n_phi, :])
    np.testing.assert_allclose(b2.H[n_phi:, n_phi:], 2 * system.H[n_phi:, n_phi:], rtol=1e-15)
    assert np.abs(system.H[n_phi:, n_phi:]).max() > 0


def test_weights_dt_mismatch(prepared2):
    _, problem, system = prepared2
    with pytest.raises(InvalidParameterError):
        build_boundary_system(system.weights, problem.mats, 1.0, 2 * system.dt)


def test_indefinite_system_rejected(prepared2):
    _, problem, system = prepared2
    w = dataclasses.replace(system.weights, W=-system.weights.W)
    with pytest.raises(FactorizationError):
        build_boundary_system(w, problem.mats, 1.0, system.dt, problem.solvers)


def test_boundary_system_probe():
    r = boundary_system_probe(2)
    assert r["min_eig"] > 0 and r["min_probe"] > 0


def test_decoupled_scheme_is_plain_leapfrog():
    vol = make_cube_mesh(2, 1.0)
    problem = build_problem(vol)
    m = problem.mats
    zero = dataclasses.replace(m, C0=sp.csr_matrix(m.C0.shape), C1=sp.csr_matrix(m.C1.shape))
    problem = dataclasses.replace(problem, mats=zero)
    forcing = Forcing(BUMP, 0.3, 3.0)
    cfg = SimConfig(vol, n_steps=6, u0=BUMP, forcing=forcing)
    res = simulate(cfg, problem)
    u, v = leapfrog_interior(zero, BUMP(vol.vertices), np.zeros(m.n_v), res.dt, 6,
                             forcing=forcing, vertices=vol.vertices, solvers=problem.solvers)
    np.testing.assert_allclose(res.state.u, u, rtol=0, atol=1e-13)
    np.testing.assert_allclose(res.state.v, v, rtol=0, atol=1e-13)


def test_one_dof_leapfrog():
    d, dt, u0, v0 = 3.0, 0.2, 1.0, 0.5
    one = sp.csr_matrix([[1.0]])
    mats = FemMatrices(one, one, sp.csr_matrix([[d]]))
    u, v = leapfrog_interior(mats, [u0], [v0], dt, 1)
    vh = v0 + 0.5 * dt * d * u0
    u1 = u0 - dt * d * vh
    v1 = vh + 0.5 * dt * d * u1
    assert abs(u[0] - u1) < 1e-15 and abs(v[0] - v1) < 1e-15


def test_scheme_identity():
    r = scheme_identity(2, 6)
    assert r["recursion"] <= 1e-12
    assert r["boundary_equation"] <= 1e-9


def test_coupling_identities_and_mutation():
    assert max(coupling_identities(2).values()) <= 1e-12
    assert coupling_identities(2, flip_c1=True)["gradient"] > 1e-3


def test_short_energy_run():
    r = short_energy_run(3, 20)
    assert r["finite"] and r["max_residual"] <= 1e-9


def test_abort_ratio(prepared2):
    cfg, problem, _ = prepared2
    bad = dataclasses.replace(cfg, dt=2.5 / problem.D_norm, allow_unstable=True,
                              abort_ratio=10.0, n_steps=40)
    with pytest.raises(InstabilityError) as info:
        simulate(bad, problem)
    err = info.value
    assert err.step is not None and err.energy > 10 * err.trace.energy[0]


def test_nan_detected(prepared2):
    from wavecouple.stepper import initial_state, step

    cfg, problem, system = prepared2
    st = initial_state(cfg, system)
    u = st.u.copy()
    u[3] = np.nan
    with pytest.raises(InstabilityError) as info:
        step(dataclasses.replace(st, u=u), cfg, system)
    assert info.value.step == 1
    with pytest.raises(InvalidParameterError):
        simulate(dataclasses.replace(cfg, u0=u), problem, system)

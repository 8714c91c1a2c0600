"""Leapfrog time stepping in the interior coupled to BDF2 convolution
quadrature on the boundary, with the stabilized boundary solve.

One step maps ``(u^n, v^n, psi^n)`` and the density histories to step
``n + 1``::

    M1 v^{n+1/2} = M1 v^n + dt/2 (D u^n - C1 psi^n)
    (B_0 + dt H) (phi^{n+1/2}, psibar^{n+1/2}) = chi^n
    psi^{n+1}    = 2 psibar^{n+1/2} - psi^n
    M0 u^{n+1}   = M0 u^n - dt (D^T v^{n+1/2} + C0 phi^{n+1/2} - M0 f^{n+1/2})
    M1 v^{n+1}   = M1 v^{n+1/2} + dt/2 (D u^{n+1} - C1 psi^{n+1})

where ``H = diag(C0^T M0^-1 C0 / 2, 2 alpha C1^T M1^-1 C1)`` and ``chi^n``
collects every known term of the CQ boundary equation

    [B(d_t) (phi, psibar)]^{n+1/2}
        = (C0^T ubar^{n+1/2}, C1^T (v^{n+1/2} - alpha dt^2 M1^-1 C1 psidot^{n+1/2}))

after substituting ``ubar`` from the drift and ``dt psidot = 2 psibar - 2 psi^n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .bem import BoundaryAssembler, QuadratureConfig
from .calderon import CqWeights, cq_calderon_weights
from .errors import FactorizationError, InstabilityError, InvalidParameterError
from .fem import (
    FemMatrices,
    assemble_coupling,
    assemble_interior,
    estimate_D_norm,
    mass_solvers,
)
from .mesh import VolumeMesh, extract_boundary

RESIDUAL_TOL = 1e-9


# --------------------------------------------------------------------- data
@dataclass(frozen=True)
class Bump:
    """Radial bump ``amplitude * profile(|x - center| / width)``.

    ``kind="gaussian"`` uses ``exp(-r^2)``; ``kind="compact"`` uses
    ``(1 - r^2)^power`` on ``r < 1`` (``C^(power-1)``, exactly zero outside
    the ball of radius ``width``).
    """

    center: tuple = (0.5, 0.5, 0.5)
    width: float = 0.1
    amplitude: float = 1.0
    kind: str = "gaussian"
    power: int = 4

    def __post_init__(self):
        if self.kind not in ("gaussian", "compact"):
            raise InvalidParameterError(f"unknown bump kind {self.kind!r}")
        if not self.width > 0:
            raise InvalidParameterError("bump width must be positive")
        if self.kind == "compact" and self.power < 1:
            raise InvalidParameterError("compact bump power must be >= 1")

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=1) / self.width**2
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-r2)
        return self.amplitude * np.clip(1.0 - r2, 0.0, None) ** self.power

    def radial_profile(self, r):
        r2 = (np.asarray(r, dtype=float) / self.width) ** 2
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-r2)
        return self.amplitude * np.clip(1.0 - r2, 0.0, None) ** self.power


@dataclass(frozen=True)
class Forcing:
    """Space-time source ``f(x, t) = bump(x) * sin(pi t / duration)^4 * cos(frequency t)``
    on ``0 <= t <= duration`` and zero afterwards.

    A carrier ``frequency`` well above the spatial wavenumbers of ``bump``
    gives a mostly local, time-oscillating response that radiates little.
    """

    bump: Bump
    duration: float = 0.5
    frequency: float = 0.0

    def __post_init__(self):
        if not self.duration > 0:
            raise InvalidParameterError("forcing duration must be positive")

    def time_profile(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= 0) & (t <= self.duration)
        env = np.sin(np.pi * t / self.duration) ** 4 * np.cos(self.frequency * t)
        return np.where(inside, env, 0.0)

    def nodal(self, x, t):
        return self.bump(x) * float(self.time_profile(t))


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Parameters of a coupled run.

    ``dt=None`` selects ``dt = cfl_safety / ||D||``.  ``allow_unstable``
    lifts the checks ``alpha >= 1`` and ``dt ||D|| <= 1`` (and the
    definiteness check of the boundary system) for instability experiments.
    ``abort_ratio`` stops a run with :class:`InstabilityError` once the
    energy exceeds ``abort_ratio * E^0``.
    """

    mesh: VolumeMesh
    n_steps: int = 0
    dt: float = None
    cfl_safety: float = 0.9
    alpha: float = 1.0
    u0: object = None
    v0: object = None
    forcing: Forcing = None
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    allow_unstable: bool = False
    abort_ratio: float = None
    residual_tol: float = RESIDUAL_TOL
    lam: float = None
    workers: int = None

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise InvalidParameterError(f"n_steps must be a nonnegative integer, got {self.n_steps}")
        if self.dt is not None and not self.dt > 0:
            raise InvalidParameterError(f"dt must be positive, got {self.dt}")
        if not self.cfl_safety > 0:
            raise InvalidParameterError("cfl_safety must be positive")
        if self.alpha < 0:
            raise InvalidParameterError("alpha must be nonnegative")
        if not self.allow_unstable and self.alpha < 1:
            raise InvalidParameterError(f"alpha = {self.alpha} < 1 requires allow_unstable")


@dataclass(eq=False)
class CoupledProblem:
    """Assembled space discretization of one volume mesh."""

    vol: VolumeMesh
    surf: object
    trace: object
    mats: FemMatrices
    solvers: tuple
    D_norm: float
    assembler: BoundaryAssembler

    @property
    def n_phi(self):
        return self.surf.n_triangles

    @property
    def n_psi(self):
        return self.surf.n_vertices


def build_problem(vol: VolumeMesh, quadrature: QuadratureConfig = None) -> CoupledProblem:
    surf, trace = extract_boundary(vol)
    mats = assemble_interior(vol)
    C0, C1 = assemble_coupling(vol, surf, trace)
    mats = mats.with_coupling(C0, C1)
    solvers = mass_solvers(mats)
    D_norm = estimate_D_norm(mats, solvers=solvers)
    return CoupledProblem(vol, surf, trace, mats, solvers, D_norm,
                          BoundaryAssembler(surf, quadrature))


def resolve_dt(config: SimConfig, D_norm: float) -> float:
    dt = config.dt if config.dt is not None else config.cfl_safety / D_norm
    if not config.allow_unstable and dt * D_norm > 1.0 + 1e-12:
        raise InvalidParameterError(
            f"dt * ||D|| = {dt * D_norm:.4f} > 1 violates the CFL condition"
        )
    return float(dt)


@dataclass(eq=False)
class BoundarySystem:
    """Factorized ``B_0 + dt H`` together with everything a step needs."""

    weights: CqWeights
    mats: FemMatrices
    solvers: tuple
    alpha: float
    dt: float
    H: np.ndarray
    A: np.ndarray
    lu: tuple
    min_sym_eig: float

    def solve(self, rhs):
        return sla.lu_solve(self.lu, rhs)


def _coupling_gram(C, solver):
    X = solver.solve(np.asarray(C.todense()))
    G = np.asarray(C.T @ X)
    return 0.5 * (G + G.T)


def build_boundary_system(weights: CqWeights, mats: FemMatrices, alpha: float, dt: float,
                          solvers=None, check_definite: bool = True) -> BoundarySystem:
    """LU factorization of ``B_0 + dt H``.

    With ``check_definite`` the symmetric part must admit a Cholesky
    factorization; otherwise :class:`FactorizationError` is raised.
    """
    if abs(weights.dt - dt) > 1e-12 * dt:
        raise InvalidParameterError(f"weights computed for dt={weights.dt}, system for dt={dt}")
    solvers = solvers or mass_solvers(mats)
    s0, s1 = solvers
    n_phi, n_psi = weights.n_phi, weights.n_psi
    H = np.zeros((n_phi + n_psi, n_phi + n_psi))
    if mats.C0 is not None and mats.C0.nnz:
        H[:n_phi, :n_phi] = 0.5 * _coupling_gram(mats.C0, s0)
    if mats.C1 is not None and mats.C1.nnz:
        H[n_phi:, n_phi:] = 2.0 * alpha * _coupling_gram(mats.C1, s1)
    A = weights.W[0] + dt * H
    sym = 0.5 * (A + A.T)
    min_eig = float(sla.eigvalsh(sym, subset_by_index=[0, 0])[0])
    if check_definite:
        try:
            sla.cholesky(sym, lower=True)
        except np.linalg.LinAlgError:
            raise FactorizationError(
                f"symmetric part of B_0 + dt H is not positive definite (min eigenvalue {min_eig:.3e})"
            ) from None
    lu = sla.lu_factor(A, check_finite=True)
    piv = np.abs(np.diag(lu[0]))
    if piv.min() <= 1e-14 * piv.max():
        raise FactorizationError("boundary system is singular")
    return BoundarySystem(weights, mats, solvers, float(alpha), float(dt), H, A, lu, min_eig)


@dataclass(eq=False)
class SimState:
    """Scheme variables at step ``n``.

    ``v_minus`` and ``v_plus`` are ``v^{n-1/2}`` and ``v^{n+1/2}``; the
    histories hold ``phi^{j+1/2}``, ``psibar^{j+1/2}`` for ``j < n`` and
    ``psi^j`` for ``j <= n``.
    """

    n: int
    t: float
    u: np.ndarray
    v: np.ndarray
    v_minus: np.ndarray
    v_plus: np.ndarray
    phi_hist: list
    psibar_hist: list
    psi_hist: list
    residual: float = 0.0

    @property
    def psi(self):
        return self.psi_hist[-1]

    def check(self):
        if len(self.phi_hist) != self.n or len(self.psibar_hist) != self.n or len(self.psi_hist) != self.n + 1:
            raise InvalidParameterError("history lengths inconsistent with step index")


@dataclass
class EnergyTrace:
    step: list = field(default_factory=list)
    time: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    solve_residual: list = field(default_factory=list)

    def append(self, n, t, e, res):
        self.step.append(int(n))
        self.time.append(float(t))
        self.energy.append(float(e))
        self.solve_residual.append(float(res))

    def __len__(self):
        return len(self.step)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("step,time,energy,solve_residual\n")
            for row in zip(self.step, self.time, self.energy, self.solve_residual):
                fh.write(f"{int(row[0])},{float(row[1])!r},{float(row[2])!r},{float(row[3])!r}\n")


# ----------------------------------------------------------------- stepping
def _half_kick(v, u, psi, mats, s1, dt):
    r = mats.D @ u
    if mats.C1 is not None:
        r = r - mats.C1 @ psi
    return v + 0.5 * dt * s1.solve(r)


def _nodal_forcing(forcing, vol, t, n_u):
    if forcing is None:
        return np.zeros(n_u)
    return forcing.nodal(vol.vertices, t) if vol is not None else np.zeros(n_u)


def _vector(data, vol, n):
    if data is None:
        return np.zeros(n)
    if callable(data):
        return np.asarray(data(vol.vertices), dtype=float)
    arr = np.asarray(data, dtype=float)
    if arr.shape != (n,):
        raise InvalidParameterError(f"initial data has shape {arr.shape}, expected ({n},)")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("initial data must be finite")
    return arr.copy()


def initial_state(config: SimConfig, system: BoundarySystem) -> SimState:
    mats = system.mats
    u = _vector(config.u0, config.mesh, mats.n_u)
    v = _vector(config.v0, config.mesh, mats.n_v)
    psi0 = np.zeros(system.weights.n_psi)
    s1 = system.solvers[1]
    dt = system.dt
    v_plus = _half_kick(v, u, psi0, mats, s1, dt)
    v_minus = 2.0 * v - v_plus
    return SimState(0, 0.0, u, v, v_minus, v_plus, [], [], [psi0])


def boundary_rhs(state: SimState, system: BoundarySystem, f_half):
    """Known part ``chi^n`` of the boundary equation at step ``n``."""
    mats, dt = system.mats, system.dt
    s0, s1 = system.solvers
    w = system.weights
    v_half = state.v_plus
    ubar_known = state.u + 0.5 * dt * (f_half - s0.solve(mats.D.T @ v_half))
    top = mats.C0.T @ ubar_known
    bottom = mats.C1.T @ v_half + 2.0 * system.alpha * dt * (
        mats.C1.T @ s1.solve(mats.C1 @ state.psi)
    )
    chi = np.concatenate([top, bottom])
    n = state.n
    if n > 0:
        seq = np.concatenate([np.asarray(state.phi_hist), np.asarray(state.psibar_hist)], axis=1)
        if n >= len(w):
            raise InvalidParameterError(f"weight table too short for step {n}")
        chi = chi - np.einsum("kab,kb->a", w.W[1 : n + 1], seq[::-1])
    return chi


def step(state: SimState, config: SimConfig, system: BoundarySystem) -> SimState:
    mats, dt = system.mats, system.dt
    s0, s1 = system.solvers
    n_phi = system.weights.n_phi
    t_half = (state.n + 0.5) * dt
    f_half = _nodal_forcing(config.forcing, config.mesh, t_half, mats.n_u)
    chi = boundary_rhs(state, system, f_half)
    if not np.all(np.isfinite(chi)):
        raise InstabilityError(f"non-finite values at step {state.n + 1}", step=state.n + 1,
                               energy=float("nan"))
    sol = system.solve(chi)
    phi, psibar = sol[:n_phi], sol[n_phi:]
    psi_next = 2.0 * psibar - state.psi
    v_half = state.v_plus
    u_next = state.u + dt * (f_half - s0.solve(mats.D.T @ v_half + mats.C0 @ phi))
    v_next = _half_kick(v_half, u_next, psi_next, mats, s1, dt)
    v_plus_next = _half_kick(v_next, u_next, psi_next, mats, s1, dt)
    cnorm = np.linalg.norm(chi)
    res = float(np.linalg.norm(system.A @ sol - chi) / cnorm) if cnorm > 0 else 0.0
    new = SimState(
        state.n + 1, (state.n + 1) * dt, u_next, v_next, v_half, v_plus_next,
        state.phi_hist + [phi], state.psibar_hist + [psibar], state.psi_hist + [psi_next], res,
    )
    if not (np.all(np.isfinite(u_next)) and np.all(np.isfinite(v_next)) and np.all(np.isfinite(sol))):
        raise InstabilityError(f"non-finite values at step {new.n}", step=new.n,
                               energy=float("nan"))
    return new


def field_energy(state: SimState, mats: FemMatrices) -> float:
    """``|u^n|^2_M0 / 2 + (|v^{n+1/2}|^2_M1 + |v^{n-1/2}|^2_M1) / 4``."""
    u, vp, vm = state.u, state.v_plus, state.v_minus
    return float(0.5 * u @ (mats.M0 @ u) + 0.25 * (vp @ (mats.M1 @ vp) + vm @ (mats.M1 @ vm)))


@dataclass(eq=False)
class RunResult:
    state: SimState
    trace: EnergyTrace
    problem: CoupledProblem
    system: BoundarySystem
    dt: float


def prepare(config: SimConfig, problem: CoupledProblem = None, weights: CqWeights = None):
    """Assemble the problem, CQ weights and boundary system for ``config``."""
    problem = problem or build_problem(config.mesh, config.quadrature)
    dt = resolve_dt(config, problem.D_norm)
    N = max(config.n_steps, 1)
    if weights is None or len(weights) < N + 1 or abs(weights.dt - dt) > 1e-12 * dt:
        weights = cq_calderon_weights(problem.surf, dt, N, lam=config.lam,
                                      assembler=problem.assembler, workers=config.workers)
    system = build_boundary_system(weights, problem.mats, config.alpha, dt,
                                   solvers=problem.solvers,
                                   check_definite=not config.allow_unstable)
    return problem, system


def run(config: SimConfig, problem: CoupledProblem = None, system: BoundarySystem = None,
        callback=None):
    """Run ``config.n_steps`` steps; returns ``(final state, EnergyTrace)``."""
    res = simulate(config, problem, system, callback)
    return res.state, res.trace


def simulate(config: SimConfig, problem: CoupledProblem = None, system: BoundarySystem = None,
             callback=None) -> RunResult:
    """Like :func:`run` but also returns the assembled problem and system.

    ``callback(state)`` is invoked for the initial and every later state.
    """
    if system is None:
        problem, system = prepare(config, problem)
    state = initial_state(config, system)
    trace = EnergyTrace()
    e0 = field_energy(state, system.mats)
    trace.append(0, 0.0, e0, 0.0)
    if callback:
        callback(state)
    for _ in range(config.n_steps):
        state = step(state, config, system)
        e = field_energy(state, system.mats)
        trace.append(state.n, state.t, e, state.residual)
        if callback:
            callback(state)
        if not math.isfinite(e):
            raise InstabilityError(f"energy not finite at step {state.n}", step=state.n, energy=e)
        if config.abort_ratio is not None and e > config.abort_ratio * e0:
            err = InstabilityError(
                f"energy {e:.3e} exceeds {config.abort_ratio:g} * E0 at step {state.n}",
                step=state.n, energy=e,
            )
            err.trace = trace
            raise err
        if state.residual > config.residual_tol:
            raise InstabilityError(
                f"boundary solve residual {state.residual:.2e} at step {state.n}",
                step=state.n, energy=e,
            )
    return RunResult(state, trace, problem, system, system.dt)


# ---------------------------------------------------------------- reference
def leapfrog_interior(mats: FemMatrices, u0, v0, dt: float, n_steps: int, forcing=None,
                      vertices=None, solvers=None, callback=None):
    """Plain leapfrog for ``M0 u' = -D^T v + M0 f``, ``M1 v' = D u`` (no
    boundary coupling).  ``callback(n, u, v_half_next)`` sees every step
    ``n = 0 .. n_steps`` with ``v^{n+1/2}``; returns the final ``(u, v)``."""
    s0, s1 = solvers or mass_solvers(mats)
    u = np.asarray(u0, dtype=float).copy()
    v = np.asarray(v0, dtype=float).copy()
    v_half = v + 0.5 * dt * s1.solve(mats.D @ u)
    for n in range(n_steps):
        if callback:
            callback(n, u, v_half)
        f = forcing.nodal(vertices, (n + 0.5) * dt) if forcing is not None else 0.0
        u = u + dt * (f - s0.solve(mats.D.T @ v_half))
        du = s1.solve(mats.D @ u)
        v = v_half + 0.5 * dt * du
        v_half = v + 0.5 * dt * du
        if not np.all(np.isfinite(u)):
            raise InstabilityError(f"non-finite values at step {n + 1}", step=n + 1)
    if callback:
        callback(n_steps, u, v_half)
    return u, v

"""Scenario runs, the enlarged-domain reference and convergence studies."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import Scenario, check_bump_support, time_grid
from .errors import ConfigError
from .fem import assemble_interior, estimate_D_norm, mass_solvers
from .mesh import make_cube_mesh, mesh_stats
from .postprocess import PointLocator, compare_fields, eval_exterior
from .stepper import SimConfig, build_problem, leapfrog_interior, prepare, simulate

BOUNDARY_NORM_NOTE = (
    "boundary density errors are reported in L2(Gamma) in place of the "
    "H^-1/2 x H^1/2 trace norms"
)
PATCH_CELLS = 6


def _scenario_dict(sc: Scenario) -> dict:
    d = {}
    for k in sc.__dataclass_fields__:
        v = getattr(sc, k)
        if hasattr(v, "__dataclass_fields__"):
            v = asdict(v)
        elif isinstance(v, tuple):
            v = [list(p) if isinstance(p, tuple) else p for p in v]
        d[k] = v
    return d


def sim_config(sc: Scenario, mesh, dt, n_steps, **kw) -> SimConfig:
    return SimConfig(
        mesh, n_steps=n_steps, dt=dt, cfl_safety=sc.cfl_safety, alpha=sc.alpha,
        u0=sc.bump, forcing=sc.forcing, quadrature=sc.quadrature,
        allow_unstable=sc.allow_unstable, abort_ratio=sc.abort_ratio, lam=sc.lam, **kw,
    )


@dataclass
class ScenarioResult:
    result: object
    probe: object
    metadata: dict


def run_scenario(sc: Scenario, output_dir=None, write=True) -> ScenarioResult:
    """Run the coupled scheme for ``sc``; writes ``energy.csv``,
    ``probes.csv`` and ``metadata.json`` to the output directory."""
    timings = {}
    t0 = time.perf_counter()
    vol = sc.build_mesh()
    problem = build_problem(vol, sc.quadrature)
    check_bump_support(sc.bump, problem.surf)
    if sc.forcing is not None:
        check_bump_support(sc.forcing.bump, problem.surf)
    timings["fem_assembly"] = time.perf_counter() - t0
    dt, n_steps = time_grid(sc.T, sc.dt, problem.D_norm, sc.cfl_safety)
    cfg = sim_config(sc, vol, dt, n_steps)
    t0 = time.perf_counter()
    problem, system = prepare(cfg, problem)
    timings["cq_weights_and_factorization"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    res = simulate(cfg, problem, system)
    timings["time_stepping"] = time.perf_counter() - t0
    probe = None
    if sc.probes:
        t0 = time.perf_counter()
        st = res.state
        probe = eval_exterior(sc.probes, st.phi_hist, st.psibar_hist, dt, problem.surf,
                              lam=system.weights.lam, q=sc.quadrature)
        timings["exterior_evaluation"] = time.perf_counter() - t0
    E = np.asarray(res.trace.energy)
    meta = {
        "parameters": _scenario_dict(sc),
        "mesh": {**mesh_stats(vol), "n_vertices": vol.n_vertices, "n_tets": vol.n_tets,
                 "n_boundary_triangles": problem.n_phi, "n_boundary_vertices": problem.n_psi},
        "D_norm": problem.D_norm,
        "dt": dt,
        "n_steps": n_steps,
        "dt_times_D_norm": dt * problem.D_norm,
        "alpha": sc.alpha,
        "contour_radius": system.weights.lam,
        "boundary_system_min_sym_eig": system.min_sym_eig,
        "max_energy_ratio": float(E.max() / E[0]) if E[0] > 0 else None,
        "max_solve_residual": float(max(res.trace.solve_residual)),
        "wall_times": timings,
        "norm_note": BOUNDARY_NORM_NOTE,
    }
    if write:
        out = Path(output_dir or sc.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        res.trace.to_csv(out / "energy.csv")
        if probe is not None:
            probe.to_csv(out / "probes.csv")
        else:
            (out / "probes.csv").write_text("point_id,step,time,value\n")
        (out / "metadata.json").write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")
    return ScenarioResult(res, probe, meta)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


# ---------------------------------------------------------------- reference
@dataclass(eq=False)
class ReferenceSolution:
    """Pure leapfrog on an enlarged aligned cube mesh."""

    mesh: object
    dt: float
    n_steps: int
    u_final: np.ndarray
    probe_values: np.ndarray
    reach_ratio: float
    locator: PointLocator = field(repr=False)

    def at_vertices(self, points):
        return self.locator.interpolator(points)(self.u_final)

    def probe_at(self, times):
        """Probe values at reference step times matching ``times`` exactly."""
        idx = np.asarray(times) / self.dt
        k = np.rint(idx).astype(int)
        if np.any(np.abs(idx - k) > 1e-6) or np.any(k > self.n_steps):
            raise ConfigError("probe times are not aligned with the reference time grid")
        return self.probe_values[k]


def enlarged_reference(sc: Scenario, h_ref: float, T: float, align_steps: int = 1,
                       probes=(), cfl_safety: float = None) -> ReferenceSolution:
    """Enlarged-domain reference on the aligned grid of spacing ``h_ref``.

    The domain is the scenario cube padded by ``sc.ref_padding`` (rounded up
    to whole cells).  The step count is a multiple of ``align_steps``.  If the
    largest field value ever seen on the outer boundary exceeds
    ``sc.ref_reach_tol`` times the largest value anywhere, the wave has
    reached it and :class:`ConfigError` is raised.  Consistent-mass P1
    leaks small, exponentially decaying precursors ahead of the front, so
    coarse references need a looser tolerance than fine ones.
    """
    if sc.mesh_path is not None:
        raise ConfigError("the enlarged-domain reference needs a cube domain")
    cells = sc.side / h_ref
    if abs(cells - round(cells)) > 1e-9:
        raise ConfigError(f"reference spacing {h_ref} does not divide the cube side {sc.side}")
    cells = int(round(cells))
    pad = int(math.ceil(sc.ref_padding / h_ref - 1e-9))
    nb = cells + 2 * pad
    origin = tuple(np.asarray(sc.origin) - pad * h_ref)
    big = make_cube_mesh(nb, nb * h_ref, origin)
    mats = assemble_interior(big)
    solvers = mass_solvers(mats)
    patch = assemble_interior(make_cube_mesh(PATCH_CELLS, PATCH_CELLS * h_ref))
    d_norm = estimate_D_norm(patch)
    cfl = cfl_safety if cfl_safety is not None else sc.ref_cfl_safety
    n = max(1, int(math.ceil(T * d_norm / cfl / align_steps - 1e-12))) * align_steps
    dt = T / n
    lo = np.asarray(origin)
    hi = lo + nb * h_ref
    x = big.vertices
    on_bnd = np.any(np.isclose(x, lo, atol=1e-9 * nb) | np.isclose(x, hi, atol=1e-9 * nb), axis=1)
    u0 = sc.bump(x)
    probes = np.atleast_2d(np.asarray(probes, dtype=float)) if len(probes) else np.zeros((0, 3))
    locator = PointLocator(big)
    probe_eval = locator.interpolator(probes) if len(probes) else None
    pvals = np.zeros((n + 1, len(probes)))
    bmax = [0.0]
    peak = [0.0]

    def record(k, u, v_half):
        bmax[0] = max(bmax[0], float(np.abs(u[on_bnd]).max()))
        peak[0] = max(peak[0], float(np.abs(u).max()))
        if probe_eval is not None:
            pvals[k] = probe_eval(u)

    u, _ = leapfrog_interior(mats, u0, np.zeros(mats.n_v), dt, n, forcing=sc.forcing,
                             vertices=x, solvers=solvers, callback=record)
    reach = bmax[0] / peak[0] if peak[0] > 0 else 0.0
    if reach > sc.ref_reach_tol:
        raise ConfigError(
            f"reference domain too small: boundary field reached {reach:.2e} of the peak "
            f"(tolerance {sc.ref_reach_tol:g}); increase [reference] padding"
        )
    return ReferenceSolution(big, dt, n, u, pvals, reach, locator)


# -------------------------------------------------------------- convergence
def observed_orders(errors, params):
    """``log(e_{i-1}/e_i) / log(p_{i-1}/p_i)``; ``None`` where undefined
    (equal parameters or nonpositive errors)."""
    out = [None]
    for i in range(1, len(errors)):
        ratio = params[i - 1] / params[i]
        e0, e1 = errors[i - 1], errors[i]
        if ratio == 1 or not (e0 > 0 and e1 > 0):
            out.append(None)
        else:
            out.append(math.log(e0 / e1) / math.log(ratio))
    return out


def fit_order(errors, params):
    """Least-squares slope of ``log e`` against ``log p``."""
    e = np.asarray(errors, dtype=float)
    p = np.asarray(params, dtype=float)
    if len(e) < 2 or np.any(e <= 0) or np.ptp(np.log(p)) == 0:
        return None
    return float(np.polyfit(np.log(p), np.log(e), 1)[0])


def convergence_study(sc: Scenario, levels: int, mode: str = "joint", T: float = None,
                      probes=None, log=None) -> dict:
    """Refinement study against one enlarged-domain reference.

    ``mode="joint"`` refines ``(h, dt) -> (h/2, dt/2)``, ``"time"`` halves
    ``dt`` at fixed ``h``, ``"space"`` halves ``h`` at the fixed ``dt``
    allowed by the finest mesh.
    """
    if levels < 2:
        raise ConfigError(f"a convergence study needs at least 2 levels, got {levels}")
    if mode not in ("joint", "time", "space"):
        raise ConfigError(f"unknown refinement mode {mode!r}")
    T = sc.T if T is None else T
    probes = tuple(sc.probes if probes is None else probes)
    ns = [sc.cube_n * (2**i if mode != "time" else 1) for i in range(levels)]
    problems = {}
    for n in sorted(set(ns)):
        t0 = time.perf_counter()
        problems[n] = build_problem(sc.build_mesh(n), sc.quadrature)
        check_bump_support(sc.bump, problems[n].surf)
        if log:
            log(f"assembled cube_n={n} in {time.perf_counter() - t0:.1f}s")
    _, base = time_grid(T, None, problems[ns[0]].D_norm, sc.cfl_safety)
    if mode == "joint":
        steps = [base * 2**i for i in range(levels)]
    elif mode == "time":
        steps = [base * 2**i for i in range(levels)]
    else:
        _, fine = time_grid(T, None, problems[ns[-1]].D_norm, sc.cfl_safety)
        steps = [fine] * levels
    h_ref = sc.side / (max(ns) * sc.ref_refine)
    t0 = time.perf_counter()
    ref = enlarged_reference(sc, h_ref, T, align_steps=2 * max(steps), probes=probes)
    if log:
        log(f"reference: {ref.mesh.n_vertices} vertices, {ref.n_steps} steps, "
            f"{time.perf_counter() - t0:.1f}s")
    rows = []
    for n, k in zip(ns, steps):
        pb = problems[n]
        dt = T / k
        cfg = sim_config(sc, pb.vol, dt, k)
        t0 = time.perf_counter()
        res = simulate(cfg, pb)
        u_ref = ref.at_vertices(pb.vol.vertices)
        err = compare_fields(res.state.u, u_ref, pb.mats.M0)
        row = {
            "cube_n": n, "h": sc.side / n, "dt": dt, "steps": k,
            "dt_times_D_norm": dt * pb.D_norm,
            "l2_error": err["l2_error"], "linf_error": err["linf_error"],
            "ref_l2_norm": float(np.sqrt(u_ref @ (pb.mats.M0 @ u_ref))),
        }
        if probes:
            st = res.state
            pr = eval_exterior(probes, st.phi_hist, st.psibar_hist, dt, pb.surf,
                               lam=res.system.weights.lam, q=sc.quadrature)
            pref = ref.probe_at(pr.times)
            diff = np.linalg.norm(pr.values - pref) / max(np.linalg.norm(pref), 1e-300)
            row["probe_rel_l2"] = float(diff)
        row["wall_time"] = time.perf_counter() - t0
        rows.append(row)
        if log:
            log(f"level cube_n={n} steps={k}: l2_error={row['l2_error']:.4e} ({row['wall_time']:.1f}s)")
    param = [r["dt"] for r in rows] if mode == "time" else [r["h"] for r in rows]
    errs = [r["l2_error"] for r in rows]
    orders = observed_orders(errs, param)
    for r, o in zip(rows, orders):
        r["order"] = o
    return {
        "mode": mode,
        "T": T,
        "rows": rows,
        "fitted_order": fit_order(errs, param),
        "undefined_orders": [i for i, o in enumerate(orders) if i > 0 and o is None],
        "reference": {"h": h_ref, "dt": ref.dt, "steps": ref.n_steps,
                      "n_vertices": ref.mesh.n_vertices, "boundary_reach": ref.reach_ratio},
        "norm_note": BOUNDARY_NORM_NOTE,
    }


def write_table(study: dict, path) -> None:
    cols = ["cube_n", "h", "dt", "steps", "l2_error", "linf_error", "order"]
    if study["rows"] and "probe_rel_l2" in study["rows"][0]:
        cols.append("probe_rel_l2")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in study["rows"]:
            vals = []
            for c in cols:
                v = r.get(c)
                vals.append("undefined" if v is None else (repr(v) if isinstance(v, float) else str(v)))
            fh.write(",".join(vals) + "\n")


def compare_probes(sc: Scenario, T: float = None, log=None) -> dict:
    """Exterior probe values of one coupled run against the enlarged-domain
    reference at spacing ``side / (cube_n * ref_refine)``.

    ``probe_rel_l2[p]`` is the discrete L2-in-time error at probe ``p``
    relative to the reference signal.
    """
    if not sc.probes:
        raise ConfigError("no probe points configured")
    T = sc.T if T is None else T
    sc = sc.with_updates(T=T)
    t0 = time.perf_counter()
    run = run_scenario(sc, write=False)
    steps = run.metadata["n_steps"]
    if log:
        log(f"coupled run: {steps} steps, {time.perf_counter() - t0:.1f}s")
    t0 = time.perf_counter()
    ref = enlarged_reference(sc, sc.side / (sc.cube_n * sc.ref_refine), T,
                             align_steps=2 * steps, probes=sc.probes)
    if log:
        log(f"reference: {ref.mesh.n_vertices} vertices, {ref.n_steps} steps, "
            f"{time.perf_counter() - t0:.1f}s")
    pr = run.probe
    pref = ref.probe_at(pr.times)
    num = np.linalg.norm(pr.values - pref, axis=0)
    den = np.maximum(np.linalg.norm(pref, axis=0), 1e-300)
    return {
        "probes": [list(p) for p in sc.probes],
        "times": pr.times.tolist(),
        "coupled": pr.values.tolist(),
        "reference": pref.tolist(),
        "probe_rel_l2": (num / den).tolist(),
        "dt": run.metadata["dt"],
        "reference_info": {"h": sc.side / (sc.cube_n * sc.ref_refine),
                           "dt": ref.dt, "steps": ref.n_steps,
                           "n_vertices": ref.mesh.n_vertices, "boundary_reach": ref.reach_ratio},
    }

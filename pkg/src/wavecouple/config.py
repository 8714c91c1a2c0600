"""Plain-text scenario files: ``[section]`` headers and ``key = value`` lines.

Comments start with ``#``.  Unknown sections or keys, malformed values and
duplicates raise :class:`ConfigError` carrying the offending line number.
Example::

    [domain]
    cube_n = 6
    side = 1.0

    [bump]
    kind = gaussian
    center = 0.5, 0.5, 0.5
    width = 0.1

    [time]
    T = 1.5
    cfl_safety = 0.9
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bem import QuadratureConfig
from .errors import ConfigError, WaveCoupleError
from .mesh import VolumeMesh, load_mesh, make_cube_mesh
from .stepper import Bump, Forcing

PEAK_RATIO_AT_BOUNDARY = 1e-8


def _float(v):
    return float(v)


def _int(v):
    f = float(v)
    if f != int(f):
        raise ValueError(f"{v!r} is not an integer")
    return int(f)


def _bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{v!r} is not a boolean")


def _vec3(v):
    parts = [float(p) for p in v.replace(",", " ").split()]
    if len(parts) != 3:
        raise ValueError(f"expected 3 numbers, got {len(parts)}")
    return tuple(parts)


def _points(v):
    pts = [_vec3(chunk) for chunk in v.split(";") if chunk.strip()]
    if not pts:
        raise ValueError("no points given")
    return tuple(pts)


def _opt_float(v):
    return None if v.strip().lower() in ("", "none", "auto") else float(v)


def _str(v):
    return v.strip()


SCHEMA = {
    "domain": {"cube_n": _int, "side": _float, "origin": _vec3, "mesh": _str},
    "bump": {"kind": _str, "center": _vec3, "width": _float, "amplitude": _float, "power": _int},
    "forcing": {
        "kind": _str, "center": _vec3, "width": _float, "amplitude": _float,
        "power": _int, "duration": _float, "shape": _str, "frequency": _float,
    },
    "time": {
        "T": _float, "dt": _opt_float, "cfl_safety": _float, "alpha": _float,
        "allow_unstable": _bool, "abort_ratio": _opt_float,
    },
    "quadrature": {
        "q_sing": _int, "q_near": _int, "q_far": _int, "q_potential": _int,
        "near_factor": _float, "lambda": _opt_float,
    },
    "probes": {"points": _points},
    "output": {"dir": _str},
    "reference": {"padding": _float, "refine": _int, "cfl_safety": _float, "reach_tol": _float},
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse into ``{section: {key: value}}`` with typed values."""
    data = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{where}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{where}: unknown section [{section}]")
            if section in data:
                raise ConfigError(f"{where}: duplicate section [{section}]")
            data[section] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"{where}: key outside of any section")
        key, value = (p.strip() for p in line.split("=", 1))
        conv = SCHEMA[section].get(key)
        if conv is None:
            raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
        if key in data[section]:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        try:
            data[section][key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
    return data


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything needed to run or refine one experiment."""

    cube_n: int = 6
    side: float = 1.0
    origin: tuple = (0.0, 0.0, 0.0)
    mesh_path: str = None
    bump: Bump = field(default_factory=lambda: Bump((0.5, 0.5, 0.5), 0.1, 1.0, "gaussian"))
    forcing: Forcing = None
    T: float = 1.5
    dt: float = None
    cfl_safety: float = 0.9
    alpha: float = 1.0
    allow_unstable: bool = False
    abort_ratio: float = None
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    lam: float = None
    probes: tuple = ()
    output_dir: str = "wavecouple-out"
    ref_padding: float = 1.0
    ref_refine: int = 2
    ref_cfl_safety: float = 0.9
    ref_reach_tol: float = 1e-6

    def build_mesh(self, cube_n: int = None) -> VolumeMesh:
        if self.mesh_path is not None:
            return load_mesh(self.mesh_path)
        return make_cube_mesh(cube_n or self.cube_n, self.side, self.origin)

    def with_updates(self, **kw) -> "Scenario":
        vals = {k: getattr(self, k) for k in self.__dataclass_fields__}
        vals.update(kw)
        return Scenario(**vals)


def scenario_from_dict(data: dict, source: str = "<config>", base_dir: Path = None) -> Scenario:
    dom = data.get("domain", {})
    bmp = data.get("bump", {})
    frc = data.get("forcing", {})
    tim = data.get("time", {})
    qd = dict(data.get("quadrature", {}))
    ref = data.get("reference", {})
    try:
        bump = Bump(
            center=bmp.get("center", (0.5, 0.5, 0.5)),
            width=bmp.get("width", 0.1),
            amplitude=bmp.get("amplitude", 1.0),
            kind=bmp.get("kind", "gaussian"),
            power=bmp.get("power", 4),
        )
        forcing = None
        kind = frc.get("kind", "none")
        if kind == "pulse":
            fb = Bump(
                center=frc.get("center", bump.center),
                width=frc.get("width", bump.width),
                amplitude=frc.get("amplitude", 1.0),
                kind=frc.get("shape", "gaussian"),
                power=frc.get("power", 4),
            )
            forcing = Forcing(fb, frc.get("duration", 0.5), frc.get("frequency", 0.0))
        elif kind != "none":
            raise ConfigError(f"{source}: unknown forcing kind {kind!r}")
        lam = qd.pop("lambda", None)
        quad = QuadratureConfig(**qd)
        mesh_path = dom.get("mesh")
        if mesh_path is not None and base_dir is not None and not Path(mesh_path).is_absolute():
            mesh_path = str(base_dir / mesh_path)
        sc = Scenario(
            cube_n=dom.get("cube_n", 6),
            side=dom.get("side", 1.0),
            origin=dom.get("origin", (0.0, 0.0, 0.0)),
            mesh_path=mesh_path,
            bump=bump,
            forcing=forcing,
            T=tim.get("T", 1.5),
            dt=tim.get("dt"),
            cfl_safety=tim.get("cfl_safety", 0.9),
            alpha=tim.get("alpha", 1.0),
            allow_unstable=tim.get("allow_unstable", False),
            abort_ratio=tim.get("abort_ratio"),
            quadrature=quad,
            lam=lam,
            probes=data.get("probes", {}).get("points", ()),
            output_dir=data.get("output", {}).get("dir", "wavecouple-out"),
            ref_padding=ref.get("padding", 1.0),
            ref_refine=ref.get("refine", 2),
            ref_cfl_safety=ref.get("cfl_safety", 0.9),
            ref_reach_tol=ref.get("reach_tol", 1e-6),
        )
    except ConfigError:
        raise
    except WaveCoupleError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    validate_scenario(sc, source)
    return sc


def validate_scenario(sc: Scenario, source: str = "<config>") -> None:
    if sc.cube_n < 1:
        raise ConfigError(f"{source}: cube_n must be >= 1")
    if not sc.side > 0:
        raise ConfigError(f"{source}: side must be positive")
    if not sc.T >= 0:
        raise ConfigError(f"{source}: T must be nonnegative")
    if not sc.cfl_safety > 0:
        raise ConfigError(f"{source}: cfl_safety must be positive")
    if sc.alpha < 0 or (sc.alpha < 1 and not sc.allow_unstable):
        raise ConfigError(f"{source}: alpha = {sc.alpha} requires alpha >= 1 (or allow_unstable)")
    if sc.ref_refine < 1 or sc.ref_padding <= 0:
        raise ConfigError(f"{source}: reference refine must be >= 1 and padding positive")


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return scenario_from_dict(parse_config_text(text, str(path)), str(path), path.parent)


def check_bump_support(bump: Bump, surf, source: str = "<config>") -> float:
    """Peak-relative bump value on the boundary; must stay below 1e-8."""
    dist = float(surf.distance_to(np.asarray([bump.center]))[0])
    ratio = float(bump.radial_profile(dist) / bump.amplitude) if bump.amplitude else 0.0
    if ratio > PEAK_RATIO_AT_BOUNDARY:
        raise ConfigError(
            f"{source}: bump value at the boundary is {ratio:.2e} of its peak "
            f"(must be <= {PEAK_RATIO_AT_BOUNDARY:g}); data must be supported inside the domain"
        )
    return ratio


def time_grid(T: float, dt: float, D_norm: float, cfl_safety: float):
    """``(dt, n_steps)`` with ``n_steps * dt = T``.

    Without an explicit ``dt`` the step is the largest ``T / n`` with
    ``dt ||D|| <= cfl_safety``.
    """
    if T == 0:
        return (dt if dt else cfl_safety / D_norm), 0
    if dt is None:
        n = int(np.ceil(T * D_norm / cfl_safety - 1e-12))
        return T / n, n
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise ConfigError(f"T = {T} is not an integer multiple of dt = {dt}")
    return T / n, n

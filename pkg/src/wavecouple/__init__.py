"""Stabilized FEM-BEM coupling for the 3D wave equation.

P1 leapfrog in the interior, BDF2 convolution quadrature of the Calderon
operator on the boundary.
"""

from .errors import WaveCoupleError
from .mesh import SurfaceMesh, VolumeMesh, make_cube_mesh, make_icosphere
from .stepper import Bump, Forcing, SimConfig, simulate

__version__ = "0.1.0"

__all__ = [
    "Bump", "Forcing", "SimConfig", "SurfaceMesh", "VolumeMesh", "WaveCoupleError",
    "make_cube_mesh", "make_icosphere", "simulate",
]

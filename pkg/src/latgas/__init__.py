"""Boundary-driven lattice gas with velocities.

Simulates the microscopic exclusion-with-collisions chain, solves the
macroscopic diffusion system with nonlinear drift, extracts empirical fields,
and evaluates the trajectory cost functional, cross-checking all three layers
against each other.
"""

__version__ = "0.1.0"

from .velocities import VelocitySet, CollisionSet, load_velocity_set
from .lattice import Lattice, Configuration, BoundarySide
from .dynamics import Model, JumpLaw, ReservoirProfiles, simulate

__all__ = [
    "__version__",
    "VelocitySet",
    "CollisionSet",
    "load_velocity_set",
    "Lattice",
    "Configuration",
    "BoundarySide",
    "Model",
    "JumpLaw",
    "ReservoirProfiles",
    "simulate",
]

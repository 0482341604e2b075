"""Numerical laboratory for one-time observation estimates of Neumann heat equations."""

from .mesh import Mesh, Field, build_mesh

__version__ = "0.1.0"

__all__ = ["Mesh", "Field", "build_mesh", "__version__"]

"""Discrete Willmore gradient flow on genus-0 triangle meshes.

Core pipeline: build or generate a mesh (:mod:`willmore.mesh`,
:mod:`willmore.shapes`), compute discrete curvatures
(:mod:`willmore.geometry`), evaluate the tracked functionals
(:mod:`willmore.functionals`), evolve by gradient descent of the discrete
Willmore energy (:mod:`willmore.flow`), and verify the stability
inequalities with the experiment harness (:mod:`willmore.harness`).
"""

from . import errors
from .mesh import TriMesh, build, read_mesh, write_mesh
from .geometry import VertexGeometry, vertex_geometry, pl_gradient_sq_integral, sup_tracefree
from .functionals import FunctionalRecord, measure, iso_deficit, dlm_ratio
from .shapes import (
    PerturbationSpec,
    SphereFit,
    ellipsoid,
    fit_sphere,
    icosphere,
    normalize_area,
    perturbed_sphere,
)

__all__ = [
    "TriMesh",
    "VertexGeometry",
    "FunctionalRecord",
    "PerturbationSpec",
    "SphereFit",
    "build",
    "read_mesh",
    "write_mesh",
    "vertex_geometry",
    "pl_gradient_sq_integral",
    "sup_tracefree",
    "measure",
    "iso_deficit",
    "dlm_ratio",
    "icosphere",
    "ellipsoid",
    "perturbed_sphere",
    "normalize_area",
    "fit_sphere",
    "errors",
]

__version__ = "0.1.0"

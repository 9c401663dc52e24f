"""Numerical laboratory for a coupled bulk-surface parabolic system on a disk.

The package solves the heat-type system in which the boundary temperature is
its own unknown, driven by a surface diffusion along the circle and by the
conormal heat flux arriving from the bulk (a dynamic, Wentzell-type boundary
condition).  On top of the forward solver sit two experiment suites: a
weighted-inequality harness that evaluates exponential-weight energy
estimates on computed trajectories, and an inverse-source suite that
reconstructs separable source amplitudes from a single snapshot plus a
localized interior observation and measures the Lipschitz-type stability of
that map.
"""

__version__ = "0.1.0"

from .coefficients import (
    EllipticityReport,
    NonElliptic,
    ProblemCoefficients,
    preset,
    validate_coefficients,
)
from .geometry import (
    BulkField,
    CoupledField,
    DiskMesh,
    SurfaceField,
    annular_sector_mask,
    build_disk_mesh,
    disk_mask,
    surface_calculus,
    trace_restrict,
)
from .operators import (
    CoupledOperator,
    apply_operator,
    assemble_operator,
    bilinear_form,
    conormal_derivative,
    conormal_identity_check,
    norms,
)
from .stepping import (
    SolverDiverged,
    SourcePair,
    Trajectory,
    solve_trajectory,
    step,
    time_derivative,
)
from .carleman import (
    CarlemanWeightSet,
    Eta0Field,
    WeightedNorms,
    build_eta0,
    carleman_sides,
    carleman_sweep,
)
from .inverse import (
    DegenerateKnownPart,
    ForwardMap,
    ObservationRecord,
    SeparableSource,
    SingularNormalEquations,
    StabilityReport,
    check_admissible,
    make_separable,
    observe,
    reconstruct,
    stability_experiment,
)

__all__ = [
    "__version__",
    "BulkField",
    "CoupledField",
    "DiskMesh",
    "SurfaceField",
    "annular_sector_mask",
    "build_disk_mesh",
    "disk_mask",
    "surface_calculus",
    "trace_restrict",
    "EllipticityReport",
    "NonElliptic",
    "ProblemCoefficients",
    "preset",
    "validate_coefficients",
    "CoupledOperator",
    "apply_operator",
    "assemble_operator",
    "bilinear_form",
    "conormal_derivative",
    "conormal_identity_check",
    "norms",
    "SolverDiverged",
    "SourcePair",
    "Trajectory",
    "solve_trajectory",
    "step",
    "time_derivative",
    "CarlemanWeightSet",
    "Eta0Field",
    "WeightedNorms",
    "build_eta0",
    "carleman_sides",
    "carleman_sweep",
    "DegenerateKnownPart",
    "ForwardMap",
    "ObservationRecord",
    "SeparableSource",
    "SingularNormalEquations",
    "StabilityReport",
    "check_admissible",
    "make_separable",
    "observe",
    "reconstruct",
    "stability_experiment",
]

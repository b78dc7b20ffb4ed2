"""Data-driven solvers for stationary incompressible flow on the periodic torus.

Strain and viscous-stress fields are driven towards a finite material data
set while the kinematic and balance constraints hold exactly in Fourier space.
"""

from .datasets import (
    CoercivityCertificate,
    ConvergenceReport,
    EmptyDataSet,
    MaterialDataSet,
    NotCoercive,
    check_convergence_bd,
    check_convergence_eq,
    coercivity_certificate,
    graph_lattice,
    sample_law,
)
from .hulls import (
    ConeWitness,
    HullRefused,
    NotInCone,
    SeparationCertificate,
    WitnessSearchFailed,
    cone_membership,
    hull_membership,
    spanning_check,
)
from .laws import Ellis, HerschelBulkley, Newtonian, PowerLaw, TabulatedRadial, law_from_dict
from .phase import Exponents, PhasePoint, TracelessSym, dist_pq
from .solver import (
    DataDrivenSolver,
    InadmissibleExponent,
    InnerSolveDiverged,
    ProblemSpec,
    SolveReport,
    Tolerances,
    coercivity_bound,
    consistency_check,
    global_step,
    local_step,
    solve,
)
from .spectral import Field, TorusGrid, VelocityPressure, build_symbols

__version__ = "0.1.0"

"""Finite-element simulation of coupled bulk-surface phase separation.

The package couples a Cahn-Hilliard equation on the unit disk to one on its
boundary circle through two extended-real parameters: K ties the phase
fields, L ties the chemical potentials, and either limit (0 or infinity)
degenerates into a constrained or decoupled regime that the same assembly
handles exactly.  Logarithmic potentials keep the phases inside (-1, 1);
concentration-dependent mobilities with certified bounds weight the fluxes.

Layout: ``geometry`` builds and refines the disk meshes, ``fields`` holds
coupled node vectors and model parameters, ``potentials`` the constitutive
laws, ``elliptic`` the weighted operators and constrained solvers,
``evolution`` the energy-stable time stepper, ``diagnostics`` the recorded
observables and verification probes, and ``harness``/``cli`` the scenario
front end.
"""

from .errors import (
    BscahnError,
    MeshQualityError,
    RefinementLimitError,
    FormatError,
    DegenerateParameterError,
    AssumptionViolationError,
    SingularityError,
    SingularEnergyError,
    CompatibilityError,
    SolverError,
    StepFailureError,
    ConfigError,
)
from .geometry import Mesh, FemMatrices, build_disk_mesh, assemble_fem, read_mesh, write_mesh
from .fields import (
    FieldPair,
    FormSpec,
    ModelParams,
    chi,
    generalized_mean,
    project_mean_zero,
    l2_norm,
    h1_norm,
    form_inner,
    form_norm,
    h2_surrogate,
    read_fieldpair,
    write_fieldpair,
)
from .potentials import PotentialSpec, MobilitySpec, regularize_mobility
from .elliptic import (
    AssembledForm,
    BorderedSolver,
    EllipticSolution,
    assemble_form,
    assemble_weighted_form,
    trace_prolongation,
    solve_weighted,
    dual_norm,
)
from .evolution import SchemeConfig, TimeState, Trajectory, Stepper, check_initial_datum
from .diagnostics import (
    DiagnosticsRecord,
    energy,
    dissipation_rate,
    separation_margin,
    record_step,
    snapshot_record,
    stationarity_report,
    chain_rule_residual,
    verify_poincare,
    verify_interpolation,
    continuous_dependence_experiment,
)
from .harness import ScenarioConfig, parse_config, run_scenario, elliptic_convergence_study

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

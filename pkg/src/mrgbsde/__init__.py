"""Multi-dimensional mean-reflected G-BSDEs on a trinomial lattice."""

from .dominated import (
    DominatedExpectationSpec,
    MixtureExpectation,
    check_dominance,
    make_backend,
    project_l_tilde,
    tilde_expectation,
)
from .errors import (
    AssumptionViolated,
    CflViolation,
    DimensionMismatch,
    InputError,
    InvalidConfig,
    InvalidSpec,
    MaxIterExceeded,
    MrgbsdeError,
    NoContraction,
    ParseError,
    SchemaError,
    TerminalConstraintViolated,
    WindowMisaligned,
)
from .gbsde import BsdeSolution, GeneratorSpec, k_consistency_report, solve_unreflected
from .lattice import (
    ClassicalExpectation,
    GExpectation,
    TreeGrid,
    VolatilityBand,
    conditional_path,
    expectation,
    g_function,
    one_step,
)
from .picard import (
    IterationTrace,
    MrSolution,
    PicardConfig,
    compute_delta_bound,
    gamma_map,
    solve_full,
    solve_window,
)
from .reflection import (
    Weights,
    build_reflection,
    check_constraint,
    check_flatness,
    h_value,
    mean_path,
    project_l,
)
from .runner import convergence_study, run_scenario
from .scenario import Scenario, load_scenario, parse_scenario

__version__ = "0.1.0"

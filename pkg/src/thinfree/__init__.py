"""Thin obstacle problems whose contact or positivity sets are prescribed by polynomials."""

from .fitting import FitResult, MonomialRegressor, fit_distance_poly
from .pipelines import (
    NAMED_EXAMPLES,
    Check,
    ClassPreconditionError,
    GridConfig,
    PipelineError,
    PipelineReport,
    rho_bar,
    rho_bar_oracle,
    run_bounded_positivity,
    run_compact_contact,
    run_named_example,
    run_prop_polysets,
    run_prop_subsets,
    run_property_suite,
    run_thm_approx,
)
from .polyalg import (
    Parity,
    Polynomial,
    PolynomialSyntaxError,
    build_p2k,
    format_poly,
    harmonic_extension,
    laplacian_poly,
    negativity_bounded,
    parse_poly,
)
from .setgeom import (
    ThinSet,
    connected_components,
    convexity_check,
    extract_thin_sets,
    hausdorff,
    star_shaped,
)
from .solver import (
    ObstacleProblemSpec,
    SolutionField,
    ThinObstacleSolver,
    build_domain,
    lcp_bruteforce,
    solve_thin_obstacle,
)

__version__ = "0.1.0"

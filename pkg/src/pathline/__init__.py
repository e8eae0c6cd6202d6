"""Pathlines of two-phase flow velocity fields with moving interfaces.

The package traces absolutely continuous pathlines of velocity fields
that jump across a moving level-set interface, and turns the geometric
machinery behind their wellposedness into runnable numerical verifiers:
signed-distance charts, consistent interface velocities, normal-
preserving velocity extensions, set-valued inclusion certificates and
Gronwall-type uniqueness monitors.
"""

from .errors import (
    ChartOutOfRange,
    DegenerateFrame,
    DegenerateGradient,
    EvalError,
    LeftDomain,
    MaxStepsExceeded,
    NoConvergence,
    NotImplementedDimension,
    PathlineError,
    QuadratureBallEscapesTube,
    SceneSemanticError,
    SceneSyntaxError,
    SingularJacobian,
    TransversalityViolation,
)
from .extend import (
    BallQuadrature,
    ExtensionConfig,
    SurfaceScalarField,
    TangentFrame,
    VelocityExtension,
    extend_scalar,
    extend_velocity,
    extension_gradient,
    tangent_frame,
)
from .fields import (
    BulkField,
    DensityField,
    Phase,
    TwoPhaseScene,
    jump,
    phase_of,
    reversed_scene,
    sample_interface_points,
    transversality_sign,
    validate_no_slip,
    validate_scene,
    validate_transmission,
)
from .geometry import (
    Box,
    InterfaceChart,
    MovingInterface,
    normal,
    normal_speed,
    signed_distance,
    subtangential_residual,
    tangent_projector,
)
from .integrate import (
    CrossingEvent,
    FlowJacobian,
    IntegratorConfig,
    Trajectory,
    flow_map,
    integrate_surface,
    jacobian_flow,
    normal_evolution_residual,
    trace,
    trace_backward,
    trajectory_to_csv,
    trajectory_to_json,
)
from .regularize import KrasovskiiSet, inclusion_residual, krasovskii, trajectory_residual
from .scenelang import compile_scene_text, parse, parse_expression, pretty
from .scenes import builtin_names, builtin_scene
from .verify import (
    FlatCheckFields,
    FlatteningTransform,
    UniquenessMonitor,
    check_flat_tangential,
    check_flat_transmission,
    flat_scene,
    flatten_field,
    gronwall_check,
    phi_functional,
    psi_energy,
    twin_experiment,
)

__version__ = "0.1.0"

"""Derivative accumulation for straight-line numeric programs.

The package evaluates register programs and data-flow graphs together with
four derivative products of the program's Jacobian J at a point: J v
(forward), J^T v (reverse), J^-1 v (reverse inverse), and J^-T v (forward
inverse).  The inverse products cost the same as the ordinary ones because
each step's Jacobian differs from the identity in a single row, a sparsity
pattern that survives inversion.  Programs with temporaries are scheduled
into constant-width lumps first; a dense linear-algebra reference validates
everything; Newton's method and Euler-integrated derivative flows are built
on top.
"""

from .basis import (
    BasisOp,
    Const,
    Slot,
    StepLinearization,
    builtin_ops,
    get_op,
    is_step_invertible,
    linearize_step,
)
from .errors import (
    AdtoolError,
    DomainError,
    MaxItersExceeded,
    NoLocalInverseError,
    OracleError,
    ParseError,
    SingularLumpError,
    SingularMatrixError,
    SingularStepError,
    SizeLimitError,
    ValidationError,
    WidthUnderflowError,
)
from .trace import (
    Instruction,
    Tape,
    Trace,
    WidthViolation,
    check_constant_width,
    eval_primal,
    run_primal,
    width_profile,
)
from .modes import (
    STEP_KERNELS,
    forward_inverse_step,
    forward_step,
    jvp,
    jvp_inverse,
    jvp_inverse_tapeless,
    reverse_inverse_step,
    reverse_step,
    vjp,
    vjp_inverse,
    vjp_tapeless,
)
from .lumpify import (
    Dag,
    DagNode,
    Lump,
    LumpLinearization,
    LumpSchedule,
    all_topological_orders,
    brute_force_schedule,
    check_schedule,
    eval_dag,
    greedy_schedule,
    invert_lump,
    lower_to_trace,
    lump_linearization,
    lumped_mode_eval,
    trace_to_dag,
)
from .oracle import (
    IdentityReport,
    ModeComparison,
    check_identities,
    compare_modes,
    dense_inverse,
    dense_jacobian,
    dense_solve,
    fd_jacobian,
)
from .ode import (
    ConvergenceRow,
    OdeProblem,
    VectorField,
    convergence_report,
    integrate_primal,
    ode_forward_inverse,
    ode_forward_tangent,
    ode_reverse_cotangent,
    ode_reverse_inverse,
)
from .solvers import NewtonConfig, NewtonResult, newton_solve, newton_step
from .programs import parse_program, print_program

__version__ = "0.1.0"

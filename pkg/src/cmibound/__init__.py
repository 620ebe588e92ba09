"""Compressed conditional-mutual-information generalization bounds.

Random-projection compression of learned hypotheses, Monte Carlo and exact
estimators of the resulting generalization bounds, trajectory bounds for
random-subspace SGLD, and a membership recall-game simulator.
"""

__version__ = "0.1.0"

from .bounds import (  # noqa: E402
    BoundReport,
    MCBudget,
    classic_cmi_bound,
    closed_form_clb,
    closed_form_rate,
    closed_form_report,
    distortion_ceiling,
    exact_cmi_oracle,
    glm_rate,
    single_datum_bound,
    theorem1_bound,
)
from .compress import CompressorConfig, JLCompressor, cmi_cap, tail_bound  # noqa: E402
from .core import (  # noqa: E402
    CubeDistribution,
    FiniteSupport,
    Seed,
    SphereUniform,
    SuperSample,
    sample_membership,
    sample_supersample,
)
from .exceptions import (  # noqa: E402
    CapacityError,
    CMIBoundError,
    ConfigError,
    CouplingError,
    NumericalError,
    ParameterError,
    ReportError,
    ShapeError,
    UnsupportedError,
    UsageError,
)
from .memor import TraceReport, compressed_tracing_probe, dummy_feasible, play_recall_game  # noqa: E402
from .mixent import f_ap  # noqa: E402
from .problems import EmpiricalRiskMinimizer, ProblemInstance, ProjectedGradientDescent  # noqa: E402
from .sgld import SGLDConfig, SubspaceSGLD, lossless_bound, lossy_bound  # noqa: E402

__all__ = [
    "__version__",
    "BoundReport",
    "MCBudget",
    "classic_cmi_bound",
    "closed_form_clb",
    "closed_form_rate",
    "closed_form_report",
    "distortion_ceiling",
    "exact_cmi_oracle",
    "glm_rate",
    "single_datum_bound",
    "theorem1_bound",
    "CompressorConfig",
    "JLCompressor",
    "cmi_cap",
    "tail_bound",
    "CubeDistribution",
    "FiniteSupport",
    "Seed",
    "SphereUniform",
    "SuperSample",
    "sample_membership",
    "sample_supersample",
    "CapacityError",
    "CMIBoundError",
    "ConfigError",
    "CouplingError",
    "NumericalError",
    "ParameterError",
    "ReportError",
    "ShapeError",
    "UnsupportedError",
    "UsageError",
    "TraceReport",
    "compressed_tracing_probe",
    "dummy_feasible",
    "play_recall_game",
    "f_ap",
    "EmpiricalRiskMinimizer",
    "ProblemInstance",
    "ProjectedGradientDescent",
    "SGLDConfig",
    "SubspaceSGLD",
    "lossless_bound",
    "lossy_bound",
]

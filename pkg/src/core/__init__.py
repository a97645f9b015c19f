from .calibration import CalibrationError, GSpectrum, ThetaStructured, TrainingData, build_spectrum
from .mesh import Mesh, MeshError, build_interval_mesh, build_rect_mesh
from .nonlinear import ForwardSolveError
from .optimizer import OptimizationError, OptimizationResult, solve_lofi
from .prior import FunctionOptPrior, OptPrior, ParametricOptPrior, PriorError, StatePrior, build_state_prior
from .problem import ForwardModel, ReducedProblem, TrackingObjective
from .solution_update import HessianProjector, PosteriorEnsemble, ProjectionError, posterior_solution_samples

__all__ = [
    "CalibrationError",
    "ForwardModel",
    "ForwardSolveError",
    "FunctionOptPrior",
    "GSpectrum",
    "HessianProjector",
    "Mesh",
    "MeshError",
    "OptPrior",
    "OptimizationError",
    "OptimizationResult",
    "ParametricOptPrior",
    "PosteriorEnsemble",
    "PriorError",
    "ProjectionError",
    "ReducedProblem",
    "StatePrior",
    "ThetaStructured",
    "TrackingObjective",
    "TrainingData",
    "build_interval_mesh",
    "build_rect_mesh",
    "build_spectrum",
    "build_state_prior",
    "posterior_solution_samples",
    "solve_lofi",
]

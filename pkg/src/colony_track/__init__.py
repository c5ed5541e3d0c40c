"""Cell tracking in dense rod-cell colonies by Boltzmann-machine annealing."""

from .annealer import AnnealResult, BmConfig, BmProblem, Clique, CollisionGroup, Schedule, anneal
from .calibration import CalibrationInstance, build_perturbations, calibrate
from .division import (
    ChildrenBmProblem,
    DivisionWeights,
    DistortionWeights,
    PairCandidate,
    ShortLineage,
    build_children_bm,
    build_pch,
    distortion,
    estimate_parent,
    reduce_frames,
    solve_children_bm,
    trim_candidates,
)
from .errors import ColonyTrackError, InfeasibleError, ValidationError
from .geometry import (
    Cell,
    Frame,
    NeighborGraph,
    Rect,
    build_neighbor_graph,
    cell_from_pixels,
    target_window,
)
from .pipeline import AccuracyReport, PipelineConfig, score, track_pair, track_sequence
from .registration import (
    LikelihoodModel,
    RegistrationProblem,
    RegistrationResult,
    RegistrationWeights,
    build_problem,
    fit_likelihood_model,
    initial_assignment,
    register,
)
from .simulator import LineageRecord, SimConfig, SimResult, simulate, true_motion_bound

__version__ = "0.1.0"

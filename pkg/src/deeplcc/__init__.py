"""Data-driven predictive control of mixed human/automated platoons, in plain and masked form."""
from ._backend import BACKEND
from .config import RunConfig, load as load_config
from .controller import (ControllerConfig, CostWeights, DeepLccController, MpcController,
                         Observation, PastBuffer, deeplcc_controller)
from .datamat import MatrixKind, hankel, is_hankel_exciting, is_page_exciting, min_samples, page, \
    partition
from .errors import (ControllerFault, DeepLccError, DimensionMismatch, ExcitationFailure,
                     InsufficientData, InvalidLiteralBounds, NotWarmedUp, SingularMap,
                     WellPosednessViolation)
from .model import FleetTopology, OvmParams, equilibrium, linear_model, lifted_response
from .privacy import (AffineMap1, AffineMap2, ConstraintMode, FleetMasks, MaskedPipeline,
                      diversity_witnesses, masked_controller, reference_masks)
from .qp import QpSettings, QpSolution, QpStatus, QuadraticProgram, solve as solve_qp
from .sim import (NoiseSpec, ScenarioKind, ScenarioSpec, TrajectoryRecord, collect_data, fuel_rate,
                  metrics, simulate)

__version__ = "0.1.0"

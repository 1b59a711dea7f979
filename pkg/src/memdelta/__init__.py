"""Monte Carlo pricing and initial-path sensitivity for markets with memory."""

from .engine import ModelSpec, NoiseGrid, NumericalBlowupError, euler_solve, euler_solve_from, generate_noise
from .greeks import (
    DeltaReport,
    Estimate,
    McParams,
    Payoff,
    delta_benchmark,
    delta_fd,
    delta_index,
    delta_plain,
    delta_risk_neutral,
    malliavin_deltas,
    price,
)
from .measures import MeasurePath, market_price_of_risk, simulate_measures
from .models import ahmp_model, bs_model, geometric_model, kp_model
from .segment import (
    GridError,
    PathGrid,
    SegmentGrid,
    direction_dictionary,
    m2_inner,
    m2_norm,
    rho,
    segment_of_path,
)
from .variation import TangentMatrix, VariationPath, check_flow_malliavin_bridge, malliavin_tangent, variation_flow

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

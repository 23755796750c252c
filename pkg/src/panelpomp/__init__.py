"""Likelihood-based inference for panels of partially observed Markov processes."""
from .design import profile_design, runif_panel_design
from .errors import (
    ConfigError,
    CurvatureError,
    DomainError,
    FilterError,
    FilterWarning,
    FormatError,
    MissingComponent,
    NameClash,
    PanelPompError,
    ParseError,
    ShapeError,
    SimulationError,
    UnitMismatch,
    UnknownParameterError,
)
from .filter import (
    MeanEstimate,
    PanelFilterResult,
    UnitFilterResult,
    log_mean_exp,
    panel_log_mean_exp,
    panel_particle_filter,
    replicate_pfilter,
    unit_particle_filter,
)
from .gompertz import (
    GompertzParams,
    KalmanFit,
    build_panel_gompertz,
    gompertz_dmeasure,
    gompertz_kalman_loglik,
    gompertz_panel,
    gompertz_transition,
    maximize_kalman_loglik,
    panel_gompertz_from_data,
)
from .mcap import McapResult, mcap, mcap_cutoff
from .model import PanelData, PanelModel, UnitModel, build_panel_model, simulate_panel, subset_units
from .params import ParamList, ParamSpec, ParamTransform, to_param_list, to_param_vector, unit_key
from .pif import (
    CoolingSchedule,
    ParamSwarm,
    PifResult,
    RwSd,
    ivp,
    perturbation_sd,
    pif_traces,
    refine_unit_blocks,
    run_pif,
)
from .streams import stream

__version__ = "0.1.0"

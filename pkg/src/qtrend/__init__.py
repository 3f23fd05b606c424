"""Quantile trend filtering with non-crossing constraints and windowed consensus."""
from ._backend import backend_name
from .consensus import (ConsensusState, ConvergenceTrace, StoppingRule, WindowLayout,
                        consensus_update, dual_update, fit_windows, make_layout, residuals,
                        stop_check)
from .errors import (ConvergenceError, DimensionError, FactorizationError, InputError,
                     LayoutError, QTrendError, SelectionError)
from .metrics import ContingencyCounts, caa, classify, nearest_rank, quantile_thresholds, rmse, vi
from .operators import DifferenceOperator, build_diff
from .selection import (CriterionValue, LambdaGrid, SelectionReport, bic_scaled, ebic,
                        select_lambdas, sic, validation_error)
from .simulate import (PeaksDesign, RacineDesign, SimulatedSeries, gen_peaks, gen_racine,
                       natural_cubic_basis)
from .solver import (CouplingTerm, FitResult, InnerControls, QuantileSpec, WeightMask,
                     check_loss, count_knots, objective, project_noncrossing, prox_check,
                     solve_block)

__version__ = "0.1.0"

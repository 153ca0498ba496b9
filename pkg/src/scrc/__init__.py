"""Two-stage selective conformal risk control.

Stage one thresholds a confidence score so that at least a target fraction
xi of inputs is accepted; stage two runs conformal risk control on the
accepted subset so that the conditional expected loss of the resulting
prediction sets stays below alpha, while a grid search keeps the sets as
small as the budget allows.  Two calibrators are provided (transductive and
calibration-only) plus the CRC-ALL and RAND baselines, a synthetic-data
Monte-Carlo harness, and a CLI (``scrc``).
"""

from .core import (
    ALL_METHODS,
    METHOD_CRC_ALL,
    METHOD_RAND,
    METHOD_SCRC_I,
    METHOD_SCRC_T,
    InfeasibleError,
    NoFeasibleGridPointError,
    NonFiniteError,
    NonSimplexError,
    OutOfRangeError,
    RiskSpec,
    ScoredExample,
    SelectiveOutput,
    ThresholdPair,
    TrialMetrics,
    ValidationError,
    validate_example,
)
from .data import LogitRecords, SynthConfig, generate, load_logits, save_logits, split
from .harness import SweepConfig, SweepResult, TrialRow, emit, evaluate, run_sweep
from .pipeline import (
    OBJECTIVE_MIN_LAMBDA2,
    OBJECTIVE_MIN_SET_SIZE,
    CalibrationData,
    CalibrationOutcome,
    apply,
    crc_all_calibrate,
    rand_calibrate,
    scrc_i_calibrate,
    scrc_t_calibrate,
    scrc_t_calibrate_batch,
)
from .scores import (
    ScoreKind,
    energy_confidence,
    entropy_confidence,
    margin,
    msp,
    temperature_softmax,
)
from .sets import (
    LossKind,
    linear_ordinal_weights,
    miscoverage_loss,
    prediction_set,
    set_size,
    weighted_ordinal_loss,
)
from .stage1 import (
    calibration_only_lambda1,
    dkw_half_width,
    select,
    stage1_loss,
    transductive_lambda1,
    xi_lower_bound,
)
from .stage2 import StageTwoResult, augmented_crc_lambda2, crc_lambda2, m_min

__version__ = "0.1.0"

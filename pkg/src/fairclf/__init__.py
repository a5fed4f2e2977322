"""fairclf: fairness-constrained binary classifier training and bias auditing.

Trains a small fully-connected classifier on fixed feature vectors either
unconstrained or under worst-case group FNR/FPR deviation constraints via a
two-player scheme (differentiable surrogate penalties for the model player,
exact rate violations for the multiplier player), and audits models with
group equality-difference metrics, MCC and McNemar's paired test.
"""

from .constraints import (
    ConstraintConfig,
    RateSnapshot,
    ViolationVector,
    exact_rate,
    expanded_violations,
    proxy_rate,
    rate_snapshot,
    worstcase_violations,
)
from .data import (
    Dataset,
    FeatureRecord,
    SplitIndices,
    SynthConfig,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .errors import ConfigError, DataError, FairclfError, NumericalError
from .metrics import (
    BiasReport,
    ConfusionCounts,
    McNemarResult,
    bias_decrease,
    bias_report,
    confusion,
    f1_precision_recall,
    mcc,
    mcnemar,
)
from .network import (
    AdamState,
    ForwardCache,
    MlpParams,
    adam_step,
    backward,
    bce_loss,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .presets import SYNTH_PRESETS
from .trainer import (
    EpochRecord,
    MultiplierState,
    TrainConfig,
    TrainedModel,
    TrivialSolutionWarning,
    evaluate_on,
    predict,
    select_best_epoch,
    train,
)

__version__ = "0.1.0"

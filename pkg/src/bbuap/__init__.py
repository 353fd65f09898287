"""Black-box universal adversarial perturbations by hill climbing over
pixel or low-frequency DCT directions."""

from ._accel import BACKEND
from .attack import AttackConfig, AttackReport, objective_sum, run_attack
from .directions import DirectionSet, materialize_direction, sample_direction
from .metrics import (
    confusion_matrix,
    fooling_rate,
    random_uap,
    size_sweep,
    targeted_success_rate,
)
from .oracle import (
    LinearSoftmaxOracle,
    MlpOracle,
    RemoteOracle,
    ScoreOracle,
    load_oracle_weights,
    predict_label,
    save_oracle_weights,
)
from .projection import project
from .tensor import (
    Perturbation,
    apply_perturbation,
    lp_norm,
    mean_dataset_norm,
    xi_from_zeta,
)

__version__ = "0.1.0"

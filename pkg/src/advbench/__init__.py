"""advbench: rank gradient-based evasion attacks by optimality.

Attacks run against a zoo of small MLP classifiers through a strict
per-sample query budget; per-sample best perturbation distances feed an
ensemble lower envelope, and each attack is scored by how closely its
robustness curve tracks that envelope.
"""

__version__ = "0.1.0"

from .attacks import AttackConfig, fgsm, pgd, ddn, fmn, eps_binary_search, \
    project, run_attack
from .errors import (BenchError, BudgetExhausted, DegenerateLogits,
                     EmptyEnsemble, IncompatibleRuns, IncompleteCoverage,
                     InvalidInput, InvalidSpec, MalformedModelFile,
                     MalformedRecordFile, TrainingDiverged, UnsupportedLoss,
                     UnsupportedFormatVersion, UnsupportedNorm)
from .metrics import (EnvelopeStore, LeaderboardEntry, RobustnessCurve, asr,
                      compute_leaderboards, curve_from_distances,
                      global_optimality,
                      incremental_update, local_optimality, lower_envelope,
                      rank, robustness_curve)
from .nn import (Layer, LossKind, MlpModel, forward, gradient_check,
                 input_gradient, loss_value)
from .runner import (BenchConfig, ModelBuildSpec, build_zoo, default_config,
                     default_eps_max, import_results, read_records,
                     run_benchmark, save_config, verify_run)
from .tracking import (PerturbationRecord, QueryLedger, TrackedModel,
                       lp_distance, wrap)
from .zoo import (AdvTrainInner, ArchSpec, DatasetSpec, LabeledDataset,
                  ZooEntry, generate_dataset, load_model, persist_model,
                  train_adversarial, train_standard)

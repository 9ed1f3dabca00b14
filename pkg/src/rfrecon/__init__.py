"""Training-data reconstruction for random-features and two-layer models.

Train a model, then recover its training inputs from the fitted parameters
by driving the readout vector into the span of candidate feature rows. See
the README for the experiment harness and CLI.
"""

from .activations import (Activation, AssumptionReport, HermiteProfile,
                          QuadratureError, assumption_check, get_activation,
                          hermite_coefficients)
from .data import (CifarFormatError, CifarRecord, Dataset, build_cifar_subset,
                   load_dataset, noisy_linear_labels, one_hot_labels,
                   parse_cifar_batch, save_dataset, serialize_cifar_records,
                   sphere_uniform)
from .linalg import (CGResult, ConjugateGradientError, IllConditionedError,
                     RngStream, cg_solve, gaussian_matrix, min_norm_solve,
                     rowspan_residuals)
from .metrics import (AssignmentResult, assignment_rho, hungarian,
                      metrics_report, span_residual, training_mse)
from .modelio import load_model, save_model
from .models import (RFModel, TrainingDivergedError, TwoLayerModel,
                     feature_jvp_transpose, feature_map, train_rf,
                     train_two_layer)
from .recon import (ReconConfig, ReconDivergedError, ReconProblem,
                    ReconResult, ReconState, recon_grad, recon_loss,
                    recon_step, reconstruct)
from .sweep import (SweepConfig, SweepRecord, aggregate_records, run_cell,
                    run_sweep)

__version__ = "0.1.0"

"""Sparse neural network training via deep weight factorization.

Each weight w is stored as an elementwise product of D >= 2 factors and
trained with plain SGD plus L2 regularization on the factors; at a minimum
this is equivalent to penalizing the collapsed weight with the sparsity-
inducing L_{2/D} quasi-norm, so exact zeros emerge from smooth training.
"""

from .errors import (
    ConfigError,
    DataError,
    DivergedError,
    InitializationError,
    LayerCollapseError,
)
from .factorization import (
    FactorizedParam,
    balanced_factorize,
    collapse,
    factor_gradients,
    l2_factor_penalty,
    misalignment,
    quasi_norm,
)
from .init import (
    BIAS_SIGMA,
    DEFAULT_TRUNC_EPS,
    DwfTruncated,
    GpfTruncated,
    LayerInitContext,
    Root,
    Standard,
    VarMatch,
    base_sigma,
    gpf_sample,
    init_biases,
    sample_factor_weights,
)
from .model import (
    DenseMlp,
    FactorizedMlp,
    MlpSpec,
    accuracy,
    collapse_model,
    forward,
    load_checkpoint,
    loss_and_grads,
    save_checkpoint,
)
from .ndcore import SeededRng, grad_check, matmul, sample_normal
from .optimizer import (
    EPS_TINY,
    Constant,
    Cosine,
    EpochTrace,
    StepDecay,
    TrainConfig,
    collapse_and_threshold,
    lr_at,
    sgd_step,
    train,
    train_vanilla_l1,
)
from .lasso import FactorizedLassoConfig, factorized_lasso_train, lasso_cd, lasso_objective
from .metrics import SparsityReport, sparsity_report
from .pruning import (
    PruneTarget,
    apply_mask_and_train,
    magnitude_mask,
    posthoc_prune_curve,
    random_mask,
    snip_mask,
    snip_scores,
    synflow_prune,
)
from .data import (
    Dataset,
    load_idx,
    load_mnist,
    split_and_batch,
    split_train_val,
    synth_sparse_regression,
    write_idx_images,
    write_idx_labels,
)

__version__ = "0.1.0"

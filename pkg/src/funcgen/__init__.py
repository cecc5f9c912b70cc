"""Energy-based generative modelling of functional data.

funcgen learns distributions over functions (curves, surfaces, images as
functions) from finitely many, possibly irregular, evaluations.  A Gaussian
process provides the function basis via a truncated Karhunen-Loeve expansion
of its kernel; a learned latent energy re-weights that basis so the model can
express multi-modal, non-stationary families of functions.  Training uses
contrastive divergence driven by Langevin Monte Carlo; sampled and inferred
functions can be evaluated on any mesh.
"""

from funcgen.spectral import (
    Kernel,
    EigenSystem,
    FunctionSample,
    NumericError,
    kernel_eval,
    gram,
    nystrom,
    eval_eigenfunctions,
    eigenfunction_matrix,
    kl_expand,
    default_anchors,
    mesh_fingerprint,
    save_eigensystem,
    load_eigensystem,
)
from funcgen.net import (
    MlpParams,
    init_params,
    default_architecture,
    mlp_forward,
    mlp_backward,
    save_mlp,
    load_mlp,
)
from funcgen.model import (
    Gaussian,
    ContinuousBernoulli,
    SpectralEnergyModel,
    decode,
    log_likelihood,
    energy,
    grad_energy,
    finite_dim_density,
    save_model,
    load_model,
)
from funcgen.sampler import (
    ChainDivergedError,
    LangevinConfig,
    ReplayBuffer,
    langevin_step,
    sample_joint,
    sample_conditional,
    sample_prior_latent,
    sample_observations,
    sample_functions,
)
from funcgen.trainer import (
    TrainingDivergedError,
    TrainConfig,
    adam_step,
    cd_from_samples,
    cd_gradient,
    train,
)
from funcgen.evaluation import (
    SplitSpec,
    TestResult,
    infer_function,
    split_context,
    predictive_mse,
    mmd_two_sample,
    dataset_sampler,
    model_function_sampler,
    test_power,
    pca_embed,
)
from funcgen.data import (
    DataFormatError,
    Dataset,
    gen_quadratic,
    gen_image_dataset,
    make_fourier_encoder,
    fourier_encode,
    load_long_csv,
    write_long_csv,
    preprocess,
    inverse_preprocess,
)
from funcgen.config import RunConfig, load_config, parse_config

__version__ = "0.1.0"

__all__ = [
    "Kernel",
    "EigenSystem",
    "FunctionSample",
    "NumericError",
    "kernel_eval",
    "gram",
    "nystrom",
    "eval_eigenfunctions",
    "eigenfunction_matrix",
    "kl_expand",
    "default_anchors",
    "mesh_fingerprint",
    "save_eigensystem",
    "load_eigensystem",
    "MlpParams",
    "init_params",
    "default_architecture",
    "mlp_forward",
    "mlp_backward",
    "save_mlp",
    "load_mlp",
    "Gaussian",
    "ContinuousBernoulli",
    "SpectralEnergyModel",
    "decode",
    "log_likelihood",
    "energy",
    "grad_energy",
    "finite_dim_density",
    "save_model",
    "load_model",
    "ChainDivergedError",
    "LangevinConfig",
    "ReplayBuffer",
    "langevin_step",
    "sample_joint",
    "sample_conditional",
    "sample_prior_latent",
    "sample_observations",
    "sample_functions",
    "TrainingDivergedError",
    "TrainConfig",
    "adam_step",
    "cd_from_samples",
    "cd_gradient",
    "train",
    "SplitSpec",
    "TestResult",
    "infer_function",
    "split_context",
    "predictive_mse",
    "mmd_two_sample",
    "dataset_sampler",
    "model_function_sampler",
    "test_power",
    "pca_embed",
    "DataFormatError",
    "Dataset",
    "gen_quadratic",
    "gen_image_dataset",
    "make_fourier_encoder",
    "fourier_encode",
    "load_long_csv",
    "write_long_csv",
    "preprocess",
    "inverse_preprocess",
    "RunConfig",
    "load_config",
    "parse_config",
]

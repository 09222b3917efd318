from diptv.autodiff import Tape, Tensor, backward
from diptv.degradation import (
    DegradationOperator,
    Kernel,
    KernelFormatError,
    NoiseSpec,
    add_awgn,
    adjoint,
    apply,
    gaussian_kernel,
    load_kernel,
    sigma_for_input_snr,
)
from diptv.generator import (
    Generator,
    GeneratorConfig,
    ParamStore,
    build_generator,
    default_configs,
)
from diptv.metrics import psnr_db, snr_db
from diptv.optim import AdamState, adam_step
from diptv.pipeline import ConfigError, ExperimentConfig, ExperimentRecord, run_experiment
from diptv.restore import (
    DivergenceError,
    RestoreConfig,
    RestoreResult,
    default_restore_config,
    loss_dip_tv,
    restore_tv_baseline,
    solve,
    tune_lambda,
)
from diptv.tv import d1, d2, tv_aniso, tv_grad_oracle

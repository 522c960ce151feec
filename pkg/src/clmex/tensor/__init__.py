from .tensor import (
    DEFAULT_DTYPE,
    DomainError,
    GraphError,
    ShapeError,
    Tensor,
    TensorError,
    add,
    as_tensor,
    conv2d,
    dense,
    exp,
    global_average_pool,
    l2_normalize_rows,
    log_sum_exp_rows,
    matmul,
    mul,
    no_grad,
    relu,
    reshape,
    scalar_mean,
    sub,
    take_rows,
    transpose,
    tsum,
)
from .optim import (
    Adam,
    AdamState,
    ConstantSchedule,
    CosineSchedule,
    NonFiniteGradientError,
    PlateauSchedule,
    adam_step,
    schedule_lr,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numerical_grad, relative_error
from .init import kaiming_uniform

__all__ = [name for name in dir() if not name.startswith("_")]

from .autograd import (
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    exp,
    getitem,
    linear,
    log,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    sub,
    tanh,
    transpose,
    tsum,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .layers import (
    BatchNormState,
    batch_norm_time,
    conv_time,
    cross_entropy,
    dropout,
    layer_norm,
    log_softmax,
    max_pool_time,
    softmax,
    softmax_rows,
)
from .optim import Adam, AdamState, adam_step

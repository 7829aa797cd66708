from .tensor import (  # noqa: F401
    Tensor,
    add,
    as_tensor,
    concat,
    constant,
    default_dtype,
    exp,
    gather_rows,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mul,
    no_grad,
    pick,
    relu,
    scale,
    set_default_dtype,
    sigmoid,
    slice_cols,
    slice_rows,
    softmax,
    softmax_cross_entropy,
    sub,
    sum_all,
    tanh,
    transpose,
)
from .nn import (  # noqa: F401
    MASK_OFF,
    attention_block,
    causal_mask,
    feed_forward,
    gcn_layer,
    lstm_cell,
    multi_head_attention,
    sinusoidal_encoding,
    sub_weights,
)
from .optim import Adam, NonFiniteGradient  # noqa: F401
from .gradcheck import grad_check  # noqa: F401
from .params import (  # noqa: F401
    ModelParams,
    init_model_params,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)

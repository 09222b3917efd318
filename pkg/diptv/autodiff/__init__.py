from .tensor import Tensor, Tape, Function, Context, backward, as_tensor, current_tape
from .functional import (
    conv2d,
    upsample,
    batch_norm,
    leaky_relu,
    sigmoid,
    add,
    sub,
    mul,
    sq_l2,
    charbonnier_abs,
    pad,
    concat,
    reshape,
)
from .gradcheck import finite_diff_grad, check_gradients, run_suite

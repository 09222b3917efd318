import os
import threading

import numpy as np

DEBUG = bool(os.environ.get("DIPTV_DEBUG"))

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def _as_float_array(data, dtype=None):
    arr = np.array(data, dtype=dtype, copy=True)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """
    Dense array with optional gradient participation.

    Layout convention for images is batch x channels x height x width.
    The data buffer is read-only: every op returns a new Tensor.
    """

    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self._set(_as_float_array(data, dtype), requires_grad)

    @classmethod
    def _wrap(cls, array, requires_grad=False):
        t = cls.__new__(cls)
        t._set(np.asarray(array), requires_grad)
        return t

    def _set(self, array, requires_grad):
        assert all(d >= 1 for d in array.shape), f"Empty dimension in {array.shape}"
        array.flags.writeable = False
        self.data = array
        self.requires_grad = bool(requires_grad)
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor._wrap(self.data)

    def requires_grad_(self, flag=True):
        """Fresh leaf sharing this data, tracked or not."""
        return Tensor._wrap(self.data, requires_grad=flag)

    def astype(self, dtype):
        return Tensor(self.data, dtype=dtype, requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.shape[0]

    def __add__(self, other):
        from diptv.autodiff.functional import add

        return add(self, other)

    def __radd__(self, other):
        from diptv.autodiff.functional import add

        return add(other, self)

    def __sub__(self, other):
        from diptv.autodiff.functional import sub

        return sub(self, other)

    def __rsub__(self, other):
        from diptv.autodiff.functional import sub

        return sub(other, self)

    def __mul__(self, other):
        from diptv.autodiff.functional import mul

        return mul(self, other)

    def __rmul__(self, other):
        from diptv.autodiff.functional import mul

        return mul(other, self)

    def __neg__(self):
        from diptv.autodiff.functional import mul

        return mul(self, -1.0)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        if dtype is None or x.dtype == np.dtype(dtype):
            return x
        return x.astype(dtype)
    return Tensor(x, dtype=dtype)


class Node:
    """One executed primitive on a tape."""

    __slots__ = ("function", "ctx", "inputs", "output", "tape")

    def __init__(self, function, ctx, inputs, output, tape):
        self.function = function
        self.ctx = ctx
        self.inputs = inputs
        self.output = output
        self.tape = tape

    def __repr__(self):
        return f"Node({self.function.__name__}, out={self.output.shape})"


_state = threading.local()


def _tape_stack():
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """
    Append-only record of primitives executed while the tape is active.

    Used as a context manager; a fresh tape is built for every evaluation.
    """

    def __init__(self):
        self.nodes = []
        self.active = False

    def __enter__(self):
        _tape_stack().append(self)
        self.active = True
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        assert stack and stack[-1] is self, "Tapes must be closed in LIFO order"
        stack.pop()
        self.active = False
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, node):
        self.nodes.append(node)


class Context:
    """Scratch space shared between forward and backward of one primitive."""

    def __init__(self, needs_input_grad):
        self.needs_input_grad = needs_input_grad
        self.saved_tensors = ()

    def save_for_backward(self, *arrays):
        self.saved_tensors = arrays


class Function:
    """
    Differentiable primitive, modelled on torch.autograd.Function.

    forward(ctx, *args) receives raw arrays in place of Tensors.
    backward(ctx, grad_output) returns one gradient (or None) per positional
    argument of forward.
    """

    @staticmethod
    def forward(ctx, *args, **kwargs):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, grad_output):
        raise NotImplementedError

    @classmethod
    def apply(cls, *args, **kwargs):
        needs_input_grad = tuple(
            isinstance(a, Tensor) and a.requires_grad for a in args
        )
        ctx = Context(needs_input_grad)
        raw = [a.data if isinstance(a, Tensor) else a for a in args]
        out = cls.forward(ctx, *raw, **kwargs)
        if DEBUG:
            assert np.isfinite(out).all(), f"Non-finite output in {cls.__name__}"

        tape = current_tape()
        tracked = tape is not None and any(needs_input_grad)
        result = Tensor._wrap(out, requires_grad=tracked)
        if tracked:
            inputs = tuple(a if isinstance(a, Tensor) else None for a in args)
            result._node = Node(cls, ctx, inputs, result, tape)
            tape.record(result._node)
        return result


def backward(tape, loss):
    """
    Reverse pass over `tape` starting from the scalar `loss`.

    :return: dict mapping every grad-tracked leaf reached to its gradient Tensor
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.active:
        raise ValueError("Tape is still recording")

    if loss._node is None:
        if not loss.requires_grad:
            return {}
        return {loss: Tensor._wrap(np.ones_like(loss.data))}
    if loss._node.tape is not tape:
        raise ValueError("Loss was not recorded on this tape")

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(tape.nodes):
        grad_output = grads.pop(id(node.output), None)
        if grad_output is None:
            continue
        input_grads = node.function.backward(node.ctx, grad_output)
        if not isinstance(input_grads, tuple):
            input_grads = (input_grads,)
        for inp, grad in zip(node.inputs, input_grads):
            if inp is None or grad is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad
            if inp._node is None:
                leaves[key] = inp

    return {
        leaf: Tensor._wrap(np.asarray(grads[key], dtype=leaf.dtype).reshape(leaf.shape))
        for key, leaf in leaves.items()
    }

"""Dense-tensor reverse-mode differentiation on 64-bit numpy arrays.

Operations executed inside a ``with Tape() as tape:`` block are recorded in
execution order; :func:`backward` replays the record in reverse, accumulating
gradients into every tensor on the path to the loss. Outside a tape, the same
functions are plain numpy forward computations.
"""

from __future__ import annotations

import math

import numpy as np

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_COEFF = 0.044715


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations for one backward pass."""

    def __init__(self):
        self._entries: list[tuple[Tensor, callable]] = []
        self._used = False

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def record(self, out: Tensor, backward_fn) -> None:
        if self._used:
            raise RuntimeError("tape has already been replayed; build a new one")
        self._entries.append((out, backward_fn))

    def __len__(self) -> int:
        return len(self._entries)


def _tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = _tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(out, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate gradients for every tensor feeding the scalar loss."""
    if loss.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    if tape._used:
        raise RuntimeError("tape has already been replayed; build a new one")
    tape._used = True
    loss.grad = np.ones_like(loss.data)
    for out, backward_fn in reversed(tape._entries):
        if out.grad is not None:
            backward_fn(out.grad)


# ---------------------------------------------------------------------------
# Core operations


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    data = a.data * factor

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, g * factor)

    return _make(data, (a,), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product on the last two axes with broadcast leading axes."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have at least 2 dimensions")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward_fn(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.shape))

    return _make(data, (a, b), backward_fn)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                _accumulate(t, g[tuple(index)])

    return _make(data, tuple(tensors), backward_fn)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.shape))

    return _make(data, (a,), backward_fn)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    data = np.transpose(a.data, axes)
    inverse = np.argsort(axes)

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, np.transpose(g, inverse))

    return _make(data, (a,), backward_fn)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = a.data[index]

    def backward_fn(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[index] = g
            _accumulate(a, full)

    return _make(data, (a,), backward_fn)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    data = table.data[ids]

    def backward_fn(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
            _accumulate(table, full)

    return _make(data, (table,), backward_fn)


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _make(data, (a,), backward_fn)


def reduce_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reduce_max(a: Tensor, axis: int) -> Tensor:
    """Max along one axis; ties route the gradient to the lowest index."""
    data = a.data.max(axis=axis)
    winners = np.expand_dims(a.data.argmax(axis=axis), axis)

    def backward_fn(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.put_along_axis(full, winners, np.expand_dims(g, axis), axis=axis)
            _accumulate(a, full)

    return _make(data, (a,), backward_fn)


def gelu(a: Tensor) -> Tensor:
    """tanh-form gelu; the gradient matches this forward exactly."""
    x = a.data
    inner = _SQRT_2_OVER_PI * (x + _GELU_COEFF * x ** 3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward_fn(g):
        if a.requires_grad:
            d_inner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_COEFF * x ** 2)
            grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner
            _accumulate(a, g * grad)

    return _make(data, (a,), backward_fn)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then apply an elementwise affine map."""
    x = a.data
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    data = gain.data * x_hat + bias.data

    def backward_fn(g):
        if gain.requires_grad:
            _accumulate(gain, _unbroadcast(g * x_hat, gain.shape))
        if bias.requires_grad:
            _accumulate(bias, _unbroadcast(g, bias.shape))
        if a.requires_grad:
            gx_hat = g * gain.data
            mean_g = gx_hat.mean(axis=-1, keepdims=True)
            mean_gx = (gx_hat * x_hat).mean(axis=-1, keepdims=True)
            _accumulate(a, inv_std * (gx_hat - mean_g - x_hat * mean_gx))

    return _make(data, (a, gain, bias), backward_fn)


def masked_softmax(a: Tensor, mask: np.ndarray, temperature: float = 1.0) -> Tensor:
    """Softmax over the last axis restricted to unmasked positions.

    Masked positions get probability exactly 0 and receive zero gradient.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    if not mask.any(axis=-1).all():
        raise ValueError("masked_softmax: a row has no unmasked entries")
    z = a.data / temperature
    z_max = np.where(mask, z, -np.inf).max(axis=-1, keepdims=True)
    exp = np.exp(np.where(mask, z - z_max, -np.inf))
    prob = exp / exp.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        if a.requires_grad:
            inner = (g * prob).sum(axis=-1, keepdims=True)
            _accumulate(a, prob * (g - inner) / temperature)

    return _make(prob, (a,), backward_fn)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the target class over all leading axes."""
    x = logits.data
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != x.shape[:-1]:
        raise ValueError(
            f"targets shape {targets.shape} does not match logits {x.shape}"
        )
    x_max = x.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(x - x_max).sum(axis=-1, keepdims=True)) + x_max
    picked = np.take_along_axis(x, targets[..., None], axis=-1)
    losses = (log_z - picked)[..., 0]
    count = max(losses.size, 1)
    data = losses.sum() / count

    def backward_fn(g):
        if logits.requires_grad:
            prob = np.exp(x - log_z)
            np.subtract.at(prob.reshape(-1, x.shape[-1]),
                           (np.arange(targets.size), targets.reshape(-1)), 1.0)
            _accumulate(logits, g * prob / count)

    return _make(data, (logits,), backward_fn)


# ---------------------------------------------------------------------------
# Optimizer


class SgdMomentum:
    """SGD with momentum: v <- m*v - lr*g; p <- p + v. Grads are zeroed."""

    def __init__(self, params: list[Tensor], learning_rate: float = 1e-4,
                 momentum: float = 0.9):
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocities):
            if p.grad is None:
                raise RuntimeError("parameter has no gradient; run backward first")
            v *= self.momentum
            v -= self.learning_rate * p.grad
            p.data += v
            p.grad = None


class Adam:
    """Adam optimizer.

    From-scratch training of the toy encoders does not escape chance level
    under plain SGD with momentum at desk scale; the adaptive per-coordinate
    step is what makes the synthetic end-to-end runs learn. SGD with momentum
    remains available for fine-tuning-style configurations.
    """

    def __init__(self, params: list[Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.first_moments = [np.zeros_like(p.data) for p in self.params]
        self.second_moments = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.first_moments, self.second_moments):
            if p.grad is None:
                raise RuntimeError("parameter has no gradient; run backward first")
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad ** 2
            p.data -= (self.learning_rate * (m / correction1)
                       / (np.sqrt(v / correction2) + self.eps))
            p.grad = None


# ---------------------------------------------------------------------------
# Checkpoints: plain-text shape manifest followed by raw little-endian floats.


def save_checkpoint(path, params: dict[str, Tensor]) -> None:
    names = list(params)
    lines = []
    for name in names:
        shape = params[name].data.shape
        lines.append(" ".join([name] + [str(d) for d in shape]))
    header = "\n".join(lines) + "\n\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        for name in names:
            fh.write(np.ascontiguousarray(params[name].data, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.index(b"\n\n")
    arrays: dict[str, np.ndarray] = {}
    offset = sep + 2
    for line in blob[:sep].decode("utf-8").splitlines():
        fields = line.split()
        name, shape = fields[0], tuple(int(d) for d in fields[1:])
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        arrays[name] = data.reshape(shape).astype(np.float64)
    return arrays

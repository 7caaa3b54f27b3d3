"""Reverse-mode automatic differentiation on a per-pass tape.

A Tape records every elementary operation of one forward pass as a node
holding its opcode, input node ids, a forward function (for replay) and a
vector-Jacobian rule. Node values are float64 numpy arrays: scalars or
small dense arrays. Every op in this module is polymorphic: called with
plain numbers or arrays it evaluates with numpy and records nothing; called
with at least one Var it records on that Var's tape.

Subgradient conventions:
    - d|x|/dx at 0 is 0; relu'(0) is 0.
    - minimum/maximum ties send the gradient to the first argument.
    - sqrt at 0, log at non-positive inputs and division by zero use a
      clamped input (1e-300) with local derivatives capped at 1e12, and
      raise the tape's non-finite guard flag.
    - clamp passes the gradient on the closed interval [lo, hi].
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

GRAD_CAP = 1e12
TINY = 1e-300

ForwardFn = Callable[..., np.ndarray]
BackwardFn = Callable[[np.ndarray, Tuple[np.ndarray, ...], np.ndarray], Tuple[Optional[np.ndarray], ...]]


@dataclass
class Node:
    """One recorded operation."""

    opcode: str
    inputs: Tuple[int, ...]
    forward: Optional[ForwardFn] = None
    backward: Optional[BackwardFn] = None
    param: Optional[Tuple["ParameterStore", str]] = None


class Var:
    """Handle to a node on a tape. Valid only for the tape that created it."""

    __slots__ = ("tape", "id")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, tape: "Tape", node_id: int) -> None:
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.id]

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def T(self) -> "Var":
        return transpose(self)

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.shape})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, other): return power(self, other)
    def __rpow__(self, other): return power(other, self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Var":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Var":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Var":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class GradientSink:
    """Per-worker gradient buffer, merged into stores at a sync point."""

    def __init__(self) -> None:
        self._grads: Dict[Tuple[int, str], Tuple["ParameterStore", str, np.ndarray]] = {}

    def add(self, store: "ParameterStore", name: str, grad: np.ndarray) -> None:
        key = (id(store), name)
        flat = np.asarray(grad, dtype=np.float64).reshape(-1)
        if key in self._grads:
            s, n, g = self._grads[key]
            self._grads[key] = (s, n, g + flat)
        else:
            self._grads[key] = (store, name, flat.copy())

    def grad(self, store: "ParameterStore", name: str) -> np.ndarray:
        entry = self._grads.get((id(store), name))
        if entry is None:
            return np.zeros(store.groups[name].values.size)
        return entry[2]

    def merge_into(self) -> None:
        """Add every buffered gradient to its store's accumulators."""
        for store, name, grad in self._grads.values():
            store.accumulate(name, grad)

    def __len__(self) -> int:
        return len(self._grads)


class Tape:
    """Append-only record of one forward pass."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self.values: List[np.ndarray] = []
        self.guard_hits = 0
        self._bound: Dict[Tuple[int, str], Var] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def nonfinite_guard(self) -> bool:
        """True when any guarded op met an invalid input on this tape."""
        return self.guard_hits > 0

    def _append(self, node: Node, value: np.ndarray) -> Var:
        self.nodes.append(node)
        self.values.append(value)
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value) -> Var:
        """Record a differentiable input that is not a stored parameter."""
        return self._append(Node("leaf", ()), np.array(value, dtype=np.float64))

    def constant(self, value) -> Var:
        return self._append(Node("const", ()), np.array(value, dtype=np.float64))

    def bind(self, store: "ParameterStore", name: str) -> Var:
        """Record a parameter group as a leaf linked to its store."""
        key = (id(store), name)
        var = self._bound.get(key)
        if var is None:
            value = store.value(name).copy()
            var = self._append(Node("param", (), param=(store, name)), value)
            self._bound[key] = var
        return var

    def record(
        self,
        opcode: str,
        inputs: Sequence[Var],
        forward: ForwardFn,
        backward: BackwardFn,
    ) -> Var:
        """Evaluate ``forward`` on the inputs and append the node.

        Raises:
            ValueError: If an input belongs to another tape.
        """
        for var in inputs:
            if var.tape is not self:
                raise ValueError(f"Var {var.id} used in '{opcode}' belongs to a different tape")
        value = np.asarray(forward(*(self.values[v.id] for v in inputs)), dtype=np.float64)
        node = Node(opcode, tuple(v.id for v in inputs), forward, backward)
        return self._append(node, value)

    def flag_guard(self, opcode: str) -> None:
        self.guard_hits += 1
        logger.debug("Non-finite guard hit in '%s' (node %d)", opcode, len(self.nodes))

    def backward(
        self,
        output: Var,
        sink: Optional[GradientSink] = None,
        retain: Iterable[Var] = (),
    ) -> Dict[int, np.ndarray]:
        """Propagate d(output)/d(node) from a scalar output to the leaves.

        Parameter leaves add their adjoint into their store (or into
        ``sink`` when given). Accumulation is additive across calls.

        Args:
            output: Scalar Var on this tape.
            sink: Optional per-worker gradient buffer.
            retain: Extra Vars whose adjoints should be returned.

        Returns:
            Mapping of node id to adjoint for leaves and retained Vars.

        Raises:
            ValueError: If output is not a scalar of this tape.
        """
        if output.tape is not self:
            raise ValueError("backward called with a Var from a different tape")
        if output.value.size != 1:
            raise ValueError(f"backward requires a scalar output, got shape {output.shape}")

        retain_ids = {v.id for v in retain}
        adjoints: Dict[int, np.ndarray] = {output.id: np.ones_like(output.value)}
        kept: Dict[int, np.ndarray] = {}

        for idx in range(output.id, -1, -1):
            g = adjoints.pop(idx, None)
            if g is None:
                continue
            node = self.nodes[idx]
            if idx in retain_ids or node.opcode in ("leaf", "param"):
                kept[idx] = g
            if node.param is not None:
                store, name = node.param
                if sink is not None:
                    sink.add(store, name, g)
                else:
                    store.accumulate(name, g)
            if node.backward is None:
                continue
            ins = tuple(self.values[i] for i in node.inputs)
            grads = node.backward(g, ins, self.values[idx])
            for i, gi in zip(node.inputs, grads):
                if gi is None:
                    continue
                prev = adjoints.get(i)
                adjoints[i] = gi if prev is None else prev + gi
        return kept

    def gradient(self, output: Var, wrt: Sequence[Var]) -> List[np.ndarray]:
        """Gradients of a scalar output with respect to the given Vars."""
        sink = GradientSink()
        kept = self.backward(output, sink=sink, retain=wrt)
        return [kept.get(v.id, np.zeros_like(v.value)) for v in wrt]

    def replay(self) -> List[np.ndarray]:
        """Recompute every node value from the leaves in recording order."""
        values: List[np.ndarray] = []
        for idx, node in enumerate(self.nodes):
            if node.forward is None:
                values.append(self.values[idx])
            else:
                ins = (values[i] for i in node.inputs)
                values.append(np.asarray(node.forward(*ins), dtype=np.float64))
        return values


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def value_of(x) -> np.ndarray:
    """Forward value of a Var, or the argument as a float64 array."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


def is_taped(*args) -> bool:
    return any(isinstance(a, Var) for a in args)


def _find_tape(args) -> Optional[Tape]:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _apply(
    opcode: str,
    args: Sequence,
    forward: ForwardFn,
    backward: BackwardFn,
    guard: Optional[Callable[..., bool]] = None,
):
    tape = _find_tape(args)
    if tape is None:
        return forward(*(np.asarray(a, dtype=np.float64) for a in args))
    inputs = [a if isinstance(a, Var) else tape.constant(a) for a in args]
    if guard is not None and guard(*(tape.values[v.id] for v in inputs)):
        tape.flag_guard(opcode)
    return tape.record(opcode, inputs, forward, backward)


def _safe_denominator(b: np.ndarray) -> np.ndarray:
    return np.where(b == 0.0, TINY, b)


# ---------------------------------------------------------------------------
# Elementary ops
# ---------------------------------------------------------------------------


def add(a, b):
    return _apply(
        "add", (a, b), np.add,
        lambda g, ins, out: (_unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)),
    )


def sub(a, b):
    return _apply(
        "sub", (a, b), np.subtract,
        lambda g, ins, out: (_unbroadcast(g, ins[0].shape), _unbroadcast(-g, ins[1].shape)),
    )


def mul(a, b):
    return _apply(
        "mul", (a, b), np.multiply,
        lambda g, ins, out: (
            _unbroadcast(g * ins[1], ins[0].shape),
            _unbroadcast(g * ins[0], ins[1].shape),
        ),
    )


def div(a, b):
    def forward(x, y):
        return x / _safe_denominator(y)

    def backward(g, ins, out):
        inv = np.clip(1.0 / _safe_denominator(ins[1]), -GRAD_CAP, GRAD_CAP)
        return (
            _unbroadcast(g * inv, ins[0].shape),
            _unbroadcast(-g * out * inv, ins[1].shape),
        )

    return _apply("div", (a, b), forward, backward, guard=lambda x, y: bool(np.any(y == 0.0)))


def neg(a):
    return _apply("neg", (a,), np.negative, lambda g, ins, out: (-g,))


def exp(a):
    return _apply("exp", (a,), np.exp, lambda g, ins, out: (g * out,))


def log(a):
    def forward(x):
        return np.log(np.maximum(x, TINY))

    def backward(g, ins, out):
        return (g * np.minimum(1.0 / np.maximum(ins[0], TINY), GRAD_CAP),)

    return _apply("log", (a,), forward, backward, guard=lambda x: bool(np.any(x <= 0.0)))


def power(a, p):
    def backward(g, ins, out):
        x, e = ins
        dx = g * e * np.power(x, e - 1.0)
        de = g * out * np.log(np.where(x > 0.0, x, 1.0))
        return _unbroadcast(dx, x.shape), _unbroadcast(de, e.shape)

    return _apply("pow", (a, p), np.power, backward)


def sqrt(a):
    def forward(x):
        return np.sqrt(np.maximum(x, 0.0))

    def backward(g, ins, out):
        safe = np.where(out > 0.0, out, 1.0)
        local = np.where(out > 0.0, np.minimum(0.5 / safe, GRAD_CAP), GRAD_CAP)
        return (g * local,)

    return _apply("sqrt", (a,), forward, backward, guard=lambda x: bool(np.any(x <= 0.0)))


def minimum(a, b):
    def backward(g, ins, out):
        first = ins[0] <= ins[1]
        return (
            _unbroadcast(np.where(first, g, 0.0), ins[0].shape),
            _unbroadcast(np.where(first, 0.0, g), ins[1].shape),
        )

    return _apply("min", (a, b), np.minimum, backward)


def maximum(a, b):
    def backward(g, ins, out):
        first = ins[0] >= ins[1]
        return (
            _unbroadcast(np.where(first, g, 0.0), ins[0].shape),
            _unbroadcast(np.where(first, 0.0, g), ins[1].shape),
        )

    return _apply("max", (a, b), np.maximum, backward)


def abs_(a):
    return _apply("abs", (a,), np.abs, lambda g, ins, out: (g * np.sign(ins[0]),))


def sin(a):
    return _apply("sin", (a,), np.sin, lambda g, ins, out: (g * np.cos(ins[0]),))


def cos(a):
    return _apply("cos", (a,), np.cos, lambda g, ins, out: (-g * np.sin(ins[0]),))


def tanh(a):
    return _apply("tanh", (a,), np.tanh, lambda g, ins, out: (g * (1.0 - out * out),))


def relu(a):
    return _apply(
        "relu", (a,), lambda x: np.maximum(x, 0.0),
        lambda g, ins, out: (np.where(ins[0] > 0.0, g, 0.0),),
    )


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    return _apply("sigmoid", (a,), _sigmoid_np, lambda g, ins, out: (g * out * (1.0 - out),))


def softplus(a, beta: float = 1.0):
    """Smooth relu, log(1 + exp(beta x)) / beta."""

    def forward(x):
        return np.logaddexp(0.0, beta * x) / beta

    def backward(g, ins, out):
        return (g * _sigmoid_np(beta * ins[0]),)

    return _apply("softplus", (a,), forward, backward)


def clamp(a, lo: float, hi: float):
    def backward(g, ins, out):
        inside = (ins[0] >= lo) & (ins[0] <= hi)
        return (np.where(inside, g, 0.0),)

    return _apply("clamp", (a,), lambda x: np.clip(x, lo, hi), backward)


def sum_(a, axis=None, keepdims: bool = False):
    def backward(g, ins, out):
        x = ins[0]
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _apply("sum", (a,), lambda x: np.sum(x, axis=axis, keepdims=keepdims), backward)


def mean(a, axis=None, keepdims: bool = False):
    shape = value_of(a).shape
    if axis is None:
        count = int(np.prod(shape)) if shape else 1
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def dot(a, b):
    """Inner product over the last axis (batched)."""

    def backward(g, ins, out):
        ge = g[..., None]
        return _unbroadcast(ge * ins[1], ins[0].shape), _unbroadcast(ge * ins[0], ins[1].shape)

    return _apply("dot", (a, b), lambda x, y: np.sum(x * y, axis=-1), backward)


def norm(a):
    """Euclidean norm over the last axis (batched)."""

    def forward(x):
        return np.sqrt(np.sum(x * x, axis=-1))

    def backward(g, ins, out):
        safe = np.where(out > 0.0, out, 1.0)[..., None]
        local = np.where(out[..., None] > 0.0, ins[0] / safe, 0.0)
        return (g[..., None] * local,)

    return _apply("norm", (a,), forward, backward, guard=lambda x: bool(np.any(np.sum(x * x, axis=-1) == 0.0)))


def normalize(a):
    """Unit vector over the last axis (batched)."""

    def forward(x):
        n = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
        return x / _safe_denominator(n)

    def backward(g, ins, out):
        n = np.sqrt(np.sum(ins[0] * ins[0], axis=-1, keepdims=True))
        inv = np.minimum(1.0 / _safe_denominator(n), GRAD_CAP)
        proj = np.sum(g * out, axis=-1, keepdims=True)
        return ((g - out * proj) * inv,)

    return _apply(
        "normalize", (a,), forward, backward,
        guard=lambda x: bool(np.any(np.sum(x * x, axis=-1) == 0.0)),
    )


def cross(a, b):
    def backward(g, ins, out):
        return (
            _unbroadcast(np.cross(ins[1], g), ins[0].shape),
            _unbroadcast(np.cross(g, ins[0]), ins[1].shape),
        )

    return _apply("cross", (a, b), np.cross, backward)


def matmul(a, b):
    """Matrix product with numpy broadcasting over leading axes (ndim >= 2)."""

    def backward(g, ins, out):
        x, y = ins
        gx = np.matmul(g, np.swapaxes(y, -1, -2))
        gy = np.matmul(np.swapaxes(x, -1, -2), g)
        return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)

    return _apply("matmul", (a, b), np.matmul, backward)


def matvec(w, x):
    """W x for W of shape (m, n) and x of shape (..., n); returns (..., m)."""

    def forward(m, v):
        return v @ m.T

    def backward(g, ins, out):
        m, v = ins
        g2 = g.reshape(-1, m.shape[0])
        v2 = v.reshape(-1, m.shape[1])
        gm = g2.T @ v2
        gv = g @ m
        return gm, _unbroadcast(gv, v.shape)

    return _apply("matvec", (w, x), forward, backward)


def transpose(a):
    return _apply(
        "transpose", (a,), lambda x: np.swapaxes(x, -1, -2),
        lambda g, ins, out: (np.swapaxes(g, -1, -2),),
    )


def reshape(a, shape):
    shape = tuple(shape)
    return _apply(
        "reshape", (a,), lambda x: np.reshape(x, shape),
        lambda g, ins, out: (g.reshape(ins[0].shape),),
    )


def unsqueeze(a):
    """Append a trailing axis of length one."""
    return reshape(a, value_of(a).shape + (1,))


def getitem(a, index):
    """Slice or gather; repeated indices accumulate in the backward pass."""

    def backward(g, ins, out):
        grad = np.zeros_like(ins[0])
        np.add.at(grad, index, g)
        return (grad,)

    return _apply("getitem", (a,), lambda x: x[index], backward)


def concat(items: Sequence, axis: int = -1):
    def forward(*xs):
        return np.concatenate(xs, axis=axis)

    def backward(g, ins, out):
        sizes = np.cumsum([x.shape[axis] for x in ins])[:-1]
        return tuple(np.split(g, sizes, axis=axis))

    return _apply("concat", tuple(items), forward, backward)


def where(cond, a, b):
    """Select from a where cond holds, else b. cond is a constant mask."""
    mask = np.asarray(cond, dtype=bool)

    def backward(g, ins, out):
        return (
            _unbroadcast(np.where(mask, g, 0.0), ins[0].shape),
            _unbroadcast(np.where(mask, 0.0, g), ins[1].shape),
        )

    return _apply("where", (a, b), lambda x, y: np.where(mask, x, y), backward)


def softmax(a, axis: int = -1):
    def forward(x):
        e = np.exp(x - np.max(x, axis=axis, keepdims=True))
        return e / np.sum(e, axis=axis, keepdims=True)

    def backward(g, ins, out):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _apply("softmax", (a,), forward, backward)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass
class ParameterGroup:
    """One named, flat float64 parameter array with its optimizer state."""

    name: str
    values: np.ndarray
    shape: Tuple[int, ...]
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray
    frozen: bool = False


class ParameterStore:
    """All learnable arrays of a scene, with gradient and Adam buffers."""

    def __init__(self) -> None:
        self.groups: Dict[str, ParameterGroup] = {}
        self.step_count = 0
        self.warning_count = 0

    def __contains__(self, name: str) -> bool:
        return name in self.groups

    def __len__(self) -> int:
        return len(self.groups)

    def names(self, prefix: str = "") -> List[str]:
        return [n for n in self.groups if n.startswith(prefix)]

    @property
    def total_size(self) -> int:
        return sum(g.values.size for g in self.groups.values())

    def add(self, name: str, values, frozen: bool = False) -> ParameterGroup:
        """Register a parameter group.

        Raises:
            ValueError: If the name is already registered.
        """
        if name in self.groups:
            raise ValueError(f"Parameter group '{name}' is already registered")
        arr = np.array(values, dtype=np.float64)
        flat = arr.reshape(-1).copy()
        group = ParameterGroup(
            name=name,
            values=flat,
            shape=arr.shape,
            grad=np.zeros_like(flat),
            m=np.zeros_like(flat),
            v=np.zeros_like(flat),
            frozen=frozen,
        )
        self.groups[name] = group
        return group

    def value(self, name: str) -> np.ndarray:
        group = self.groups[name]
        return group.values.reshape(group.shape)

    def set_value(self, name: str, values) -> None:
        group = self.groups[name]
        arr = np.asarray(values, dtype=np.float64)
        if arr.size != group.values.size:
            raise ValueError(
                f"Parameter group '{name}' expects {group.values.size} values, got {arr.size}"
            )
        group.values[:] = arr.reshape(-1)

    def param(self, name: str, tape: Optional[Tape] = None):
        """Group value as a Var on ``tape``, or as an array without a tape."""
        if tape is None:
            return self.value(name)
        return tape.bind(self, name)

    def accumulate(self, name: str, grad) -> None:
        group = self.groups[name]
        flat = np.asarray(grad, dtype=np.float64).reshape(-1)
        if flat.size != group.values.size:
            raise ValueError(
                f"Gradient for '{name}' has {flat.size} entries, expected {group.values.size}"
            )
        group.grad += flat

    def grad(self, name: str) -> np.ndarray:
        group = self.groups[name]
        return group.grad.reshape(group.shape)

    def zero_grad(self) -> None:
        for group in self.groups.values():
            group.grad[:] = 0.0

    def freeze(self, prefix: str, frozen: bool = True) -> None:
        for name in self.names(prefix):
            self.groups[name].frozen = frozen

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: g.values.copy() for name, g in self.groups.items()}

    def restore(self, snapshot: Dict[str, np.ndarray]) -> None:
        for name, values in snapshot.items():
            self.set_value(name, values)

    def reset_optimizer(self) -> None:
        """Clear Adam moments and the step counter, e.g. between fit stages."""
        for group in self.groups.values():
            group.m[:] = 0.0
            group.v[:] = 0.0
        self.step_count = 0


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Comparison of tape gradients against central differences."""

    max_rel_err: float
    worst_param: Optional[str]
    checked: int
    entries: List[Tuple[str, float, float, float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "max_rel_err": self.max_rel_err,
            "worst_param": self.worst_param,
            "checked": self.checked,
        }


def _evaluate(f: Callable[[Tape], Var], label: str) -> float:
    out = f(Tape())
    value = float(np.asarray(value_of(out)).reshape(-1)[0])
    if not np.isfinite(value):
        raise ValueError(f"grad_check: function is non-finite ({value}) {label}")
    return value


def grad_check(
    f: Callable[[Tape], Var],
    store: ParameterStore,
    eps: float = 1e-4,
    groups: Optional[Sequence[str]] = None,
    max_per_group: Optional[int] = None,
    seed: int = 0,
    abs_floor: float = 1e-7,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` with central differences.

    ``f`` receives a fresh Tape and must bind its parameters through the
    store so that perturbations of the stored values are seen.

    Args:
        f: Scalar function of the stored parameters.
        store: Store whose groups are checked.
        eps: Finite-difference step.
        groups: Group names to check (all by default).
        max_per_group: Check a seeded random subset of this size per group.
        seed: Seed for subset selection.
        abs_floor: Lower bound of the relative-error denominator.

    Returns:
        GradCheckReport with the worst relative error.

    Raises:
        ValueError: If f is non-finite at the current or a perturbed point.
    """
    tape = Tape()
    out = f(tape)
    if not np.all(np.isfinite(value_of(out))):
        raise ValueError("grad_check: function is non-finite at the current parameters")
    sink = GradientSink()
    tape.backward(out, sink=sink)

    rng = np.random.default_rng(seed)
    names = list(groups) if groups is not None else store.names()
    report = GradCheckReport(max_rel_err=0.0, worst_param=None, checked=0)

    for name in names:
        group = store.groups[name]
        analytic = sink.grad(store, name)
        indices = np.arange(group.values.size)
        if max_per_group is not None and indices.size > max_per_group:
            indices = np.sort(rng.choice(indices, size=max_per_group, replace=False))

        for j in indices:
            label = f"{name}[{j}]"
            original = group.values[j]
            try:
                group.values[j] = original + eps
                f_plus = _evaluate(f, f"at {label} + eps")
                group.values[j] = original - eps
                f_minus = _evaluate(f, f"at {label} - eps")
            finally:
                group.values[j] = original

            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[j])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), abs_floor)
            report.entries.append((label, a, numeric, rel))
            report.checked += 1
            if report.worst_param is None or rel > report.max_rel_err:
                report.max_rel_err = rel
                report.worst_param = label

    logger.info(
        "Gradient check: %d parameters, max relative error %.3e at %s",
        report.checked, report.max_rel_err, report.worst_param,
    )
    return report

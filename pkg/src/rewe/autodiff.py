"""Reverse-mode automatic differentiation over numpy arrays.

Define-by-run: every operation appends a node to its graph, and `backward`
walks the recorded tape from a scalar root. All values are float64. A graph
is rebuilt per batch and owned by a single thread; independent graphs may
run concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError


class DiffError(NumericError):
    """Computation-graph construction or traversal error."""


class ShapeError(DiffError):
    """Operand shapes do not conform to a primitive's shape rule."""

    def __init__(self, primitive: str, message: str):
        super().__init__(f"{primitive}: {message}")
        self.primitive = primitive


class UnknownPrimitiveError(DiffError):
    pass


class Node:
    """One value in the graph: forward values, gradient accumulator, provenance.

    `grad` always has the same shape as `values` and accumulates additively
    across fan-out. Leaves have no parents and backward_rule "leaf".
    """

    __slots__ = ("graph", "values", "grad", "parents", "backward_rule", "attrs")

    def __init__(self, graph, values, parents=(), backward_rule="leaf", attrs=None):
        self.graph = graph
        self.values = values
        self.grad = np.zeros_like(values)
        self.parents = tuple(parents)
        self.backward_rule = backward_rule
        self.attrs = attrs if attrs is not None else {}

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError("item", f"expected a scalar, got shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self):
        return f"Node({self.backward_rule}, shape={self.shape})"

    # -- arithmetic sugar; python numbers route to the scalar primitives --

    def __add__(self, other):
        if isinstance(other, Node):
            return self.graph.apply("add", [self, other])
        return self.graph.apply("scalar_add", [self], c=float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Node):
            return self.graph.apply("sub", [self, other])
        return self.graph.apply("scalar_add", [self], c=-float(other))

    def __rsub__(self, other):
        neg = self.graph.apply("scalar_mul", [self], c=-1.0)
        return neg.graph.apply("scalar_add", [neg], c=float(other))

    def __mul__(self, other):
        if isinstance(other, Node):
            return self.graph.apply("mul", [self, other])
        return self.graph.apply("scalar_mul", [self], c=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Node):
            return self.graph.apply("div", [self, other])
        return self.graph.apply("scalar_mul", [self], c=1.0 / float(other))

    def __neg__(self):
        return self.graph.apply("scalar_mul", [self], c=-1.0)

    def __matmul__(self, other):
        return self.graph.apply("matmul", [self, other])

    def __getitem__(self, index):
        if not isinstance(index, tuple):
            index = (index,)
        if not all(isinstance(s, slice) for s in index):
            raise ShapeError("slice", "only slice indices are supported")
        return self.graph.apply("slice", [self], index=index)

    def tanh(self):
        return self.graph.apply("tanh", [self])

    def sigmoid(self):
        return self.graph.apply("sigmoid", [self])

    def relu(self):
        return self.graph.apply("relu", [self])

    def log(self):
        return self.graph.apply("log", [self])

    def sqrt(self):
        return self.graph.apply("sqrt", [self])

    def clamp_min(self, floor: float):
        return self.graph.apply("clamp_min", [self], floor=float(floor))

    def sum(self, axis=None, keepdims=False):
        return self.graph.apply("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return self.graph.apply("mean", [self], axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return self.graph.apply("reshape", [self], shape=tuple(shape))


class Graph:
    """A tape of nodes in topological (creation) order plus a seeded rng.

    Two runs with the same seed and inputs produce bit-identical values.
    Never share a graph across threads.
    """

    def __init__(self, seed: int = 0):
        self.nodes: list[Node] = []
        self.rng = np.random.default_rng(seed)

    def leaf(self, values) -> Node:
        arr = np.asarray(values, dtype=np.float64)
        node = Node(self, arr)
        self.nodes.append(node)
        return node

    # Constants are ordinary leaves; their grads are computed but unused.
    constant = leaf

    def apply(self, kind: str, inputs, **attrs) -> Node:
        try:
            fwd, _ = _PRIMITIVES[kind]
        except KeyError:
            raise UnknownPrimitiveError(f"unknown primitive {kind!r}") from None
        for node in inputs:
            if node.graph is not self:
                raise DiffError(f"{kind}: input node belongs to a different graph")
        values = fwd([p.values for p in inputs], attrs, self.rng)
        node = Node(self, values, inputs, kind, attrs)
        self.nodes.append(node)
        return node

    def recompute(self) -> None:
        """Re-run every forward in tape order, reusing recorded attrs.

        Dropout masks were stored at first evaluation, so recomputation is
        deterministic and reflects in-place edits to leaf values.
        """
        for node in self.nodes:
            if node.backward_rule == "leaf":
                continue
            fwd, _ = _PRIMITIVES[node.backward_rule]
            node.values = fwd([p.values for p in node.parents], node.attrs, self.rng)


def primitive_forward(graph: Graph, kind: str, inputs, attrs=None) -> Node:
    """Apply one primitive; equivalent to graph.apply."""
    return graph.apply(kind, inputs, **(attrs or {}))


def _topo_from(root: Node) -> list[Node]:
    # Iterative post-order: recurrent graphs are far deeper than the
    # interpreter's recursion limit.
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            stack.append((parent, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into .grad for every ancestor of root."""
    if root.values.size != 1:
        raise DiffError(f"backward requires a scalar root, got shape {root.shape}")
    order = _topo_from(root)
    root.grad = root.grad + np.ones_like(root.values)
    for node in reversed(order):
        if not node.parents:
            continue
        _, bwd = _PRIMITIVES[node.backward_rule]
        grads = bwd(node, node.grad)
        for parent, g in zip(node.parents, grads):
            if g is not None:
                parent.grad = parent.grad + g


# ---------------------------------------------------------------------------
# functional spellings used by model code
# ---------------------------------------------------------------------------

def concat(nodes, axis: int = 0) -> Node:
    return nodes[0].graph.apply("concat", list(nodes), axis=axis)

def softmax(x: Node, mask=None) -> Node:
    """Softmax along the last axis; masked positions get weight exactly 0."""
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
    return x.graph.apply("softmax", [x], mask=mask)

def embedding(table: Node, ids) -> Node:
    return table.graph.apply("embedding", [table], ids=np.asarray(ids, dtype=np.intp))

def pick(x: Node, ids) -> Node:
    """Select x[i, ids[i]] for every row i."""
    return x.graph.apply("pick", [x], ids=np.asarray(ids, dtype=np.intp))

def dropout(x: Node, keep_prob: float) -> Node:
    """Inverted-scaling dropout: kept entries are divided by keep_prob."""
    return x.graph.apply("dropout", [x], keep_prob=float(keep_prob), mask=None)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad back down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(kind, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(kind, f"shapes {a.shape} and {b.shape} do not broadcast") from None


def _add_fwd(vals, attrs, rng):
    a, b = vals
    _check_broadcast("add", a, b)
    return a + b

def _add_bwd(node, g):
    a, b = node.parents
    return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]


def _sub_fwd(vals, attrs, rng):
    a, b = vals
    _check_broadcast("sub", a, b)
    return a - b

def _sub_bwd(node, g):
    a, b = node.parents
    return [_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)]


def _mul_fwd(vals, attrs, rng):
    a, b = vals
    _check_broadcast("mul", a, b)
    return a * b

def _mul_bwd(node, g):
    a, b = node.parents
    return [_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)]


def _div_fwd(vals, attrs, rng):
    a, b = vals
    _check_broadcast("div", a, b)
    return a / b

def _div_bwd(node, g):
    a, b = node.parents
    ga = _unbroadcast(g / b.values, a.shape)
    gb = _unbroadcast(-g * a.values / (b.values * b.values), b.shape)
    return [ga, gb]


def _scalar_mul_fwd(vals, attrs, rng):
    return vals[0] * attrs["c"]

def _scalar_mul_bwd(node, g):
    return [g * node.attrs["c"]]


def _scalar_add_fwd(vals, attrs, rng):
    return vals[0] + attrs["c"]

def _scalar_add_bwd(node, g):
    return [g]


def _matmul_fwd(vals, attrs, rng):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul", f"expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b

def _matmul_bwd(node, g):
    a, b = node.parents
    return [g @ b.values.T, a.values.T @ g]


def _concat_fwd(vals, attrs, rng):
    axis = attrs["axis"]
    ndim = vals[0].ndim
    for v in vals[1:]:
        if v.ndim != ndim:
            raise ShapeError("concat", f"rank mismatch: {vals[0].shape} vs {v.shape}")
        for ax in range(ndim):
            if ax != axis % ndim and v.shape[ax] != vals[0].shape[ax]:
                raise ShapeError(
                    "concat", f"shapes {vals[0].shape} and {v.shape} differ off axis {axis}")
    return np.concatenate(vals, axis=axis)

def _concat_bwd(node, g):
    axis = node.attrs["axis"]
    sizes = [p.values.shape[axis] for p in node.parents]
    return np.split(g, np.cumsum(sizes)[:-1], axis=axis)


def _slice_fwd(vals, attrs, rng):
    return vals[0][attrs["index"]]

def _slice_bwd(node, g):
    z = np.zeros_like(node.parents[0].values)
    z[node.attrs["index"]] = g
    return [z]


def _reshape_fwd(vals, attrs, rng):
    try:
        return vals[0].reshape(attrs["shape"])
    except ValueError:
        raise ShapeError(
            "reshape", f"cannot reshape {vals[0].shape} to {attrs['shape']}") from None

def _reshape_bwd(node, g):
    return [g.reshape(node.parents[0].values.shape)]


def _tanh_fwd(vals, attrs, rng):
    return np.tanh(vals[0])

def _tanh_bwd(node, g):
    return [g * (1.0 - node.values * node.values)]


def _sigmoid_fwd(vals, attrs, rng):
    x = vals[0]
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out

def _sigmoid_bwd(node, g):
    return [g * node.values * (1.0 - node.values)]


def _relu_fwd(vals, attrs, rng):
    return np.maximum(vals[0], 0.0)

def _relu_bwd(node, g):
    return [g * (node.parents[0].values > 0.0)]


def _log_fwd(vals, attrs, rng):
    return np.log(vals[0])

def _log_bwd(node, g):
    return [g / node.parents[0].values]


def _sqrt_fwd(vals, attrs, rng):
    return np.sqrt(vals[0])

def _sqrt_bwd(node, g):
    return [g * 0.5 / node.values]


def _clamp_min_fwd(vals, attrs, rng):
    return np.maximum(vals[0], attrs["floor"])

def _clamp_min_bwd(node, g):
    # Pass-through at the boundary keeps the gradient alive when x == floor.
    return [g * (node.parents[0].values >= node.attrs["floor"])]


def _softmax_fwd(vals, attrs, rng):
    x = vals[0]
    if x.ndim < 1:
        raise ShapeError("softmax", "input needs at least one axis")
    mask = attrs.get("mask")
    if mask is None:
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
    else:
        if mask.shape != x.shape:
            raise ShapeError("softmax", f"mask shape {mask.shape} != input shape {x.shape}")
        if not mask.any(axis=-1).all():
            raise ShapeError("softmax", "a row has every position masked")
        z = np.where(mask, x, -np.inf)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)  # exp(-inf) == 0 exactly, so masked weights are 0
    return e / e.sum(axis=-1, keepdims=True)

def _softmax_bwd(node, g):
    p = node.values
    dot = (g * p).sum(axis=-1, keepdims=True)
    return [p * (g - dot)]


def _embedding_fwd(vals, attrs, rng):
    table = vals[0]
    ids = attrs["ids"]
    if table.ndim != 2:
        raise ShapeError("embedding", f"table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            "embedding", f"id out of range [0, {table.shape[0]}) in lookup")
    return table[ids]

def _embedding_bwd(node, g):
    z = np.zeros_like(node.parents[0].values)
    np.add.at(z, node.attrs["ids"], g)
    return [z]


def _pick_fwd(vals, attrs, rng):
    x = vals[0]
    ids = attrs["ids"]
    if x.ndim != 2:
        raise ShapeError("pick", f"expects a 2-D input, got {x.shape}")
    if ids.shape != (x.shape[0],):
        raise ShapeError("pick", f"ids shape {ids.shape} != ({x.shape[0]},)")
    if ids.size and (ids.min() < 0 or ids.max() >= x.shape[1]):
        raise ShapeError("pick", f"id out of range [0, {x.shape[1]})")
    return x[np.arange(x.shape[0]), ids]

def _pick_bwd(node, g):
    z = np.zeros_like(node.parents[0].values)
    np.add.at(z, (np.arange(z.shape[0]), node.attrs["ids"]), g)
    return [z]


def _dropout_fwd(vals, attrs, rng):
    x = vals[0]
    keep = attrs["keep_prob"]
    if not 0.0 < keep <= 1.0:
        raise DiffError(f"dropout: keep_prob must be in (0, 1], got {keep}")
    if attrs.get("mask") is None:
        attrs["mask"] = (rng.random(x.shape) < keep) / keep
    return x * attrs["mask"]

def _dropout_bwd(node, g):
    return [g * node.attrs["mask"]]


def _reduced_count(shape, axis):
    if axis is None:
        return int(np.prod(shape)) if shape else 1
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return int(np.prod([shape[a] for a in axes]))

def _expand_reduction_grad(node, g):
    axis = node.attrs["axis"]
    if axis is not None and not node.attrs["keepdims"]:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, node.parents[0].values.shape)


def _sum_fwd(vals, attrs, rng):
    return np.sum(vals[0], axis=attrs["axis"], keepdims=attrs["keepdims"])

def _sum_bwd(node, g):
    return [_expand_reduction_grad(node, g)]


def _mean_fwd(vals, attrs, rng):
    return np.mean(vals[0], axis=attrs["axis"], keepdims=attrs["keepdims"])

def _mean_bwd(node, g):
    n = _reduced_count(node.parents[0].values.shape, node.attrs["axis"])
    return [_expand_reduction_grad(node, g) / n]


_PRIMITIVES = {
    "add": (_add_fwd, _add_bwd),
    "sub": (_sub_fwd, _sub_bwd),
    "mul": (_mul_fwd, _mul_bwd),
    "div": (_div_fwd, _div_bwd),
    "scalar_mul": (_scalar_mul_fwd, _scalar_mul_bwd),
    "scalar_add": (_scalar_add_fwd, _scalar_add_bwd),
    "matmul": (_matmul_fwd, _matmul_bwd),
    "concat": (_concat_fwd, _concat_bwd),
    "slice": (_slice_fwd, _slice_bwd),
    "reshape": (_reshape_fwd, _reshape_bwd),
    "tanh": (_tanh_fwd, _tanh_bwd),
    "sigmoid": (_sigmoid_fwd, _sigmoid_bwd),
    "relu": (_relu_fwd, _relu_bwd),
    "log": (_log_fwd, _log_bwd),
    "sqrt": (_sqrt_fwd, _sqrt_bwd),
    "clamp_min": (_clamp_min_fwd, _clamp_min_bwd),
    "softmax": (_softmax_fwd, _softmax_bwd),
    "embedding": (_embedding_fwd, _embedding_bwd),
    "pick": (_pick_fwd, _pick_bwd),
    "dropout": (_dropout_fwd, _dropout_bwd),
    "sum": (_sum_fwd, _sum_bwd),
    "mean": (_mean_fwd, _mean_bwd),
}

PRIMITIVE_KINDS = tuple(sorted(_PRIMITIVES))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class LeafCheck:
    name: str
    max_rel_err: float
    worst_index: tuple
    n_flagged: int


@dataclass
class GradCheckReport:
    tol: float
    step: float
    leaves: list[LeafCheck] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((c.max_rel_err for c in self.leaves), default=0.0)

    @property
    def ok(self) -> bool:
        return all(c.n_flagged == 0 for c in self.leaves)

    def summary(self) -> str:
        lines = [
            f"{c.name}: max_rel_err={c.max_rel_err:.3e} flagged={c.n_flagged}"
            for c in self.leaves
        ]
        status = "OK" if self.ok else "FAIL"
        lines.append(f"overall: max_rel_err={self.max_rel_err:.3e} [{status}]")
        return "\n".join(lines)


def grad_check(build, step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    `build()` must deterministically construct a scalar-rooted graph and
    return (root, leaves) where leaves maps names to leaf nodes. Dropout, if
    present, must be frozen (masks are recorded on first evaluation, so a
    seeded graph is automatically frozen under recompute).
    """
    root, leaves = build()
    root_again, _ = build()
    if not np.array_equal(root.values, root_again.values):
        raise DiffError("grad_check: build is non-deterministic")

    graph = root.graph
    backward(root)
    report = GradCheckReport(tol=tol, step=step)
    for name, leaf in leaves.items():
        analytic = leaf.grad.copy()
        max_err, worst, flagged = 0.0, (), 0
        for idx in np.ndindex(leaf.values.shape):
            orig = leaf.values[idx]
            leaf.values[idx] = orig + step
            graph.recompute()
            f_plus = float(root.values.reshape(()))
            leaf.values[idx] = orig - step
            graph.recompute()
            f_minus = float(root.values.reshape(()))
            leaf.values[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[idx])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > max_err:
                max_err, worst = err, idx
            if err > tol:
                flagged += 1
        report.leaves.append(LeafCheck(name, max_err, worst, flagged))
    graph.recompute()
    return report

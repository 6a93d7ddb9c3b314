"""Reverse-mode automatic differentiation over dense float64 matrices.

Everything is 2-D: vectors are single-row matrices, scalars are 1x1 arrays.
Op functions build the graph eagerly; backward() walks it exactly once in
reverse topological order. Gradients accumulate across backward calls until
the owner zeros them, so backward-twice yields exactly twice the gradient.
"""

from __future__ import annotations

import math

import numpy as np

_grad_enabled = True


class no_grad:
    """Context manager that skips graph construction for pure inference."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


class DiffValue:
    """Graph node: payload array, same-shape gradient, parent links."""

    __slots__ = ("data", "grad", "parents", "backward_rule")

    def __init__(self, data, parents=(), backward_rule=None):
        self.data = data
        self.grad = np.zeros_like(data)
        self.parents = parents
        self.backward_rule = backward_rule

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        kind = "leaf" if not self.parents else "node"
        return f"DiffValue({self.data.shape}, {kind})"


def leaf(data) -> DiffValue:
    """Wrap an array as a graph leaf (gradient sink, never propagates)."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        raise ValueError(f"leaf: expected a 2-D array, got shape {arr.shape}; use row() for vectors")
    if arr.ndim != 2:
        raise ValueError(f"leaf: expected a 2-D array, got shape {arr.shape}")
    if np.isnan(arr).any():
        raise ValueError("leaf: NaN in input data")
    return DiffValue(arr)


def row(vec) -> DiffValue:
    """Wrap a 1-D sequence as a single-row leaf."""
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"row: expected a 1-D sequence, got shape {arr.shape}")
    return leaf(arr.reshape(1, -1))


def scalar(x) -> DiffValue:
    return leaf(np.array([[float(x)]]))


def zeros(rows, cols) -> DiffValue:
    return DiffValue(np.zeros((rows, cols)))


def _nan_check(op, *vals):
    # sum() is cheap and NaN-propagating; confirm before raising so that
    # inf-only arrays do not trip the check.
    for v in vals:
        s = float(v.data.sum())
        if math.isnan(s) and np.isnan(v.data).any():
            raise ValueError(f"{op}: NaN in input")


def _node(data, parents, rule):
    if not _grad_enabled:
        return DiffValue(data)
    return DiffValue(data, parents, rule)


def add(a: DiffValue, b: DiffValue) -> DiffValue:
    _nan_check("add", a, b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"add: shapes {a.data.shape} and {b.data.shape} differ")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: DiffValue, b: DiffValue) -> DiffValue:
    _nan_check("sub", a, b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub: shapes {a.data.shape} and {b.data.shape} differ")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: DiffValue, b: DiffValue) -> DiffValue:
    """Elementwise product."""
    _nan_check("mul", a, b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul: shapes {a.data.shape} and {b.data.shape} differ")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: DiffValue, k: float) -> DiffValue:
    _nan_check("scale", a)
    k = float(k)
    return _node(a.data * k, (a,), lambda g: (g * k,))


def add_scalar(a: DiffValue, c: float) -> DiffValue:
    _nan_check("add_scalar", a)
    return _node(a.data + float(c), (a,), lambda g: (g,))


def matmul(a: DiffValue, b: DiffValue) -> DiffValue:
    _nan_check("matmul", a, b)
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: shapes {a.data.shape} and {b.data.shape} do not conform")

    def rule(g):
        return (g @ b.data.T, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), rule)


def transpose(a: DiffValue) -> DiffValue:
    _nan_check("transpose", a)
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,))


def add_rowvec(a: DiffValue, b: DiffValue) -> DiffValue:
    """Add a (1, n) row vector to every row of a (m, n) matrix."""
    _nan_check("add_rowvec", a, b)
    if b.data.shape != (1, a.data.shape[1]):
        raise ValueError(
            f"add_rowvec: bias shape {b.data.shape} does not broadcast over {a.data.shape}"
        )
    return _node(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))


def concat_rows(parts) -> DiffValue:
    parts = list(parts)
    if not parts:
        raise ValueError("concat_rows: empty input list")
    _nan_check("concat_rows", *parts)
    cols = parts[0].data.shape[1]
    for p in parts:
        if p.data.shape[1] != cols:
            raise ValueError(
                f"concat_rows: column mismatch {p.data.shape} vs ({parts[0].data.shape})"
            )
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def rule(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _node(np.concatenate([p.data for p in parts], axis=0), tuple(parts), rule)


def concat_cols(parts) -> DiffValue:
    parts = list(parts)
    if not parts:
        raise ValueError("concat_cols: empty input list")
    _nan_check("concat_cols", *parts)
    rows_ = parts[0].data.shape[0]
    for p in parts:
        if p.data.shape[0] != rows_:
            raise ValueError(
                f"concat_cols: row mismatch {p.data.shape} vs ({parts[0].data.shape})"
            )
    offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])

    def rule(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _node(np.concatenate([p.data for p in parts], axis=1), tuple(parts), rule)


def slice_rows(a: DiffValue, start: int, stop: int) -> DiffValue:
    _nan_check("slice_rows", a)
    if not (0 <= start < stop <= a.data.shape[0]):
        raise ValueError(f"slice_rows: [{start}:{stop}] out of range for {a.data.shape}")

    def rule(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _node(a.data[start:stop].copy(), (a,), rule)


def tanh(a: DiffValue) -> DiffValue:
    _nan_check("tanh", a)
    out_data = np.tanh(a.data)
    return _node(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def sigmoid(a: DiffValue) -> DiffValue:
    _nan_check("sigmoid", a)
    # Split by sign to stay overflow-free on both tails.
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))
    return _node(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


LEAKY_SLOPE = 0.01


def leaky_relu(a: DiffValue, slope: float = LEAKY_SLOPE) -> DiffValue:
    _nan_check("leaky_relu", a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _node(np.where(a.data > 0, a.data, a.data * slope), (a,), lambda g: (g * factor,))


def softmax_rows(a: DiffValue) -> DiffValue:
    """Row-wise softmax, stabilised by row-max subtraction."""
    _nan_check("softmax_rows", a)
    if not np.isfinite(a.data).all():
        raise ValueError("softmax_rows: input rows must be finite")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        dot = (g * out_data).sum(axis=1, keepdims=True)
        return (out_data * (g - dot),)

    return _node(out_data, (a,), rule)


def log(a: DiffValue) -> DiffValue:
    _nan_check("log", a)
    if (a.data <= 0).any():
        raise ValueError("log: input must be strictly positive")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a: DiffValue) -> DiffValue:
    _nan_check("square", a)
    return _node(a.data * a.data, (a,), lambda g: (g * 2.0 * a.data,))


def sum_all(a: DiffValue) -> DiffValue:
    _nan_check("sum_all", a)
    out_data = np.array([[a.data.sum()]])
    return _node(out_data, (a,), lambda g: (np.full_like(a.data, g[0, 0]),))


def mean_all(a: DiffValue) -> DiffValue:
    _nan_check("mean_all", a)
    n = a.data.size
    out_data = np.array([[a.data.sum() / n]])
    return _node(out_data, (a,), lambda g: (np.full_like(a.data, g[0, 0] / n),))


def l2_norm(a: DiffValue) -> DiffValue:
    """Euclidean norm of all entries, as a 1x1 value. Gradient at 0 is 0."""
    _nan_check("l2_norm", a)
    n = math.sqrt(float((a.data * a.data).sum()))

    def rule(g):
        if n == 0.0:
            return (np.zeros_like(a.data),)
        return (g[0, 0] * (a.data / n),)

    return _node(np.array([[n]]), (a,), rule)


def _topo_order(root: DiffValue):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order  # parents before children


def backward(root: DiffValue) -> None:
    """Accumulate d(root)/d(node) into .grad for every reachable node.

    Call-local adjoints keep repeated invocations strictly additive:
    running backward twice doubles every gradient exactly.
    """
    if root.data.shape != (1, 1):
        raise ValueError(f"backward: root must be 1x1, got {root.data.shape}")
    order = _topo_order(root)
    adjoint = {id(root): np.ones((1, 1))}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        node.grad += g
        if node.backward_rule is None:
            continue
        for parent, pg in zip(node.parents, node.backward_rule(g)):
            pid = id(parent)
            prior = adjoint.get(pid)
            adjoint[pid] = pg if prior is None else prior + pg


class ParamStore:
    """Named, deterministically ordered collection of trainable leaves.

    One store per trained network, so the optimizer's global-norm clipping
    scope is exactly that network. Parameters shared across agents live
    here exactly once. Adam moment state is kept alongside.
    """

    def __init__(self, name: str = "params"):
        self.name = name
        self._params: dict[str, DiffValue] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.adam_t: int = 0

    def add(self, name: str, array) -> DiffValue:
        if name in self._params:
            raise ValueError(f"ParamStore[{self.name}]: duplicate parameter name {name!r}")
        value = leaf(np.array(array, dtype=np.float64))
        self._params[name] = value
        return value

    def init_uniform(self, name: str, rows: int, cols: int, rng, fan_in: int | None = None) -> DiffValue:
        """Uniform init in +-1/sqrt(fan_in); fan_in defaults to the row count."""
        bound = 1.0 / math.sqrt(fan_in if fan_in is not None else rows)
        return self.add(name, rng.uniform(-bound, bound, size=(rows, cols)))

    def init_zeros(self, name: str, rows: int, cols: int) -> DiffValue:
        return self.add(name, np.zeros((rows, cols)))

    def __getitem__(self, name: str) -> DiffValue:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0

    def grad_norm(self) -> float:
        total = 0.0
        for _, p in self.items():
            total += float((p.grad * p.grad).sum())
        return math.sqrt(total)

    def assign_from(self, other: "ParamStore") -> None:
        """Hard-copy parameter data from a store with identical names/shapes."""
        if self.names() != other.names():
            raise ValueError(f"ParamStore[{self.name}]: name sets differ, cannot assign")
        for n in self.names():
            a, b = self._params[n], other._params[n]
            if a.data.shape != b.data.shape:
                raise ValueError(
                    f"ParamStore[{self.name}]: shape mismatch for {n!r}: "
                    f"{a.data.shape} vs {b.data.shape}"
                )
            a.data[...] = b.data


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(store: ParamStore, lr: float, clip_norm: float) -> None:
    """One Adam step over every parameter of one store.

    The global gradient norm across the store is clipped to clip_norm
    before the moment updates; stored .grad arrays are left untouched so
    the caller decides when to zero them.
    """
    norm = store.grad_norm()
    factor = 1.0
    if clip_norm is not None and norm > clip_norm:
        factor = clip_norm / norm
    store.adam_t += 1
    t = store.adam_t
    bias1 = 1.0 - ADAM_BETA1 ** t
    bias2 = 1.0 - ADAM_BETA2 ** t
    for name, p in store.items():
        if not np.isfinite(p.grad).all():
            raise FloatingPointError(
                f"adam_step: non-finite gradient for parameter {store.name}/{name}"
            )
        g = p.grad * factor
        m = store.adam_m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            store.adam_m[name] = m
            store.adam_v[name] = np.zeros_like(p.data)
        v = store.adam_v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


# ---------------------------------------------------------------------------
# Checkpoint format: versioned text, float64 hex (exact round-trip, no
# byte-order concerns). One line per record:
#   P <store> <param> <rows> <cols> <hex values, row-major>
#   M/V       same layout, Adam first/second moments
#   T <store> <step count>
# Records are sorted by store then parameter name, so serialisation is
# byte-deterministic for identical contents.
# ---------------------------------------------------------------------------

CHECKPOINT_HEADER = "ac2c-params v1"


def _format_array(arr: np.ndarray) -> str:
    return " ".join(float(x).hex() for x in arr.ravel())


def _parse_array(tokens, rows, cols) -> np.ndarray:
    vals = [float.fromhex(t) for t in tokens]
    if len(vals) != rows * cols:
        raise ValueError(f"checkpoint: expected {rows * cols} values, got {len(vals)}")
    return np.array(vals).reshape(rows, cols)


def serialize_stores(stores: dict[str, ParamStore], include_adam: bool = True) -> str:
    lines = [CHECKPOINT_HEADER]
    for sname in sorted(stores):
        store = stores[sname]
        for pname, p in store.items():
            r, c = p.data.shape
            lines.append(f"P {sname} {pname} {r} {c} {_format_array(p.data)}")
        if include_adam:
            lines.append(f"T {sname} {store.adam_t}")
            for pname in store.names():
                if pname in store.adam_m:
                    m, v = store.adam_m[pname], store.adam_v[pname]
                    r, c = m.shape
                    lines.append(f"M {sname} {pname} {r} {c} {_format_array(m)}")
                    lines.append(f"V {sname} {pname} {r} {c} {_format_array(v)}")
    return "\n".join(lines) + "\n"


def save_checkpoint(path, stores: dict[str, ParamStore], include_adam: bool = True) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_stores(stores, include_adam=include_adam))


def load_checkpoint(path) -> dict:
    """Parse a checkpoint into {store: {"params": {...}, "adam_m": ..., ...}}."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ValueError(f"checkpoint {path}: missing or unknown header")
    out: dict[str, dict] = {}

    def entry(sname):
        return out.setdefault(sname, {"params": {}, "adam_m": {}, "adam_v": {}, "adam_t": 0})

    for line in lines[1:]:
        if not line.strip():
            continue
        kind, rest = line.split(" ", 1)
        if kind == "T":
            sname, t = rest.split(" ")
            entry(sname)["adam_t"] = int(t)
            continue
        sname, pname, r, c, *vals = rest.split(" ")
        arr = _parse_array(vals, int(r), int(c))
        key = {"P": "params", "M": "adam_m", "V": "adam_v"}[kind]
        entry(sname)[key][pname] = arr
    return out


def restore_stores(stores: dict[str, ParamStore], loaded: dict) -> None:
    """Load checkpoint contents into existing stores (shapes must match)."""
    for sname, store in stores.items():
        if sname not in loaded:
            raise ValueError(f"checkpoint: store {sname!r} missing from file")
        blob = loaded[sname]
        for pname, p in store.items():
            if pname not in blob["params"]:
                raise ValueError(f"checkpoint: parameter {sname}/{pname} missing from file")
            arr = blob["params"][pname]
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"checkpoint: shape mismatch for {sname}/{pname}: "
                    f"{arr.shape} vs {p.data.shape}"
                )
            p.data[...] = arr
        store.adam_t = blob["adam_t"]
        store.adam_m = {k: v.copy() for k, v in blob["adam_m"].items()}
        store.adam_v = {k: v.copy() for k, v in blob["adam_v"].items()}

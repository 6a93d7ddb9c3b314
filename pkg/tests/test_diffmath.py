import numpy as np
import pytest

from ac2c import diffmath as dm
from gradcheck import check_grads, numeric_grad, rel_error


def test_tanh_at_origin_is_zero():
    x = dm.row(np.zeros(5))
    assert np.array_equal(dm.tanh(x).data, np.zeros((1, 5)))


def test_softmax_of_equal_entries_is_uniform():
    x = dm.row([2.3, 2.3, 2.3])
    out = dm.softmax_rows(x).data
    assert np.allclose(out, np.full((1, 3), 1.0 / 3.0), atol=1e-15)


def test_softmax_rows_sum_to_one_and_positive():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = dm.leaf(rng.normal(scale=30.0, size=(4, 6)))
        out = dm.softmax_rows(x).data
        assert np.all(out > 0)
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-9


def test_matmul_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    a = dm.leaf(rng.normal(size=(3, 4)))
    b = dm.leaf(rng.normal(size=(4, 2)))
    check_grads(lambda: dm.sum_all(dm.tanh(dm.matmul(a, b))), [a, b])


def _random_case(rng, op_name):
    """Build (loss_fn, leaves) for one randomly shaped op invocation."""
    r = int(rng.integers(1, 9))
    c = int(rng.integers(1, 9))
    x = dm.leaf(rng.normal(size=(r, c)))
    y = dm.leaf(rng.normal(size=(r, c)))
    if op_name == "add":
        return lambda: dm.sum_all(dm.add(x, y)), [x, y]
    if op_name == "sub":
        return lambda: dm.sum_all(dm.tanh(dm.sub(x, y))), [x, y]
    if op_name == "mul":
        return lambda: dm.sum_all(dm.mul(x, y)), [x, y]
    if op_name == "scale":
        return lambda: dm.sum_all(dm.scale(x, -1.7)), [x]
    if op_name == "add_scalar":
        return lambda: dm.sum_all(dm.square(dm.add_scalar(x, 0.3))), [x]
    if op_name == "matmul":
        k = int(rng.integers(1, 9))
        a = dm.leaf(rng.normal(size=(r, k)))
        b = dm.leaf(rng.normal(size=(k, c)))
        return lambda: dm.mean_all(dm.matmul(a, b)), [a, b]
    if op_name == "transpose":
        return lambda: dm.sum_all(dm.tanh(dm.transpose(x))), [x]
    if op_name == "add_rowvec":
        bias = dm.leaf(rng.normal(size=(1, c)))
        return lambda: dm.sum_all(dm.sigmoid(dm.add_rowvec(x, bias))), [x, bias]
    if op_name == "concat_rows":
        return lambda: dm.sum_all(dm.tanh(dm.concat_rows([x, y]))), [x, y]
    if op_name == "concat_cols":
        return lambda: dm.sum_all(dm.tanh(dm.concat_cols([x, y]))), [x, y]
    if op_name == "slice_rows":
        hi = int(rng.integers(1, r + 1))
        return lambda: dm.sum_all(dm.square(dm.slice_rows(x, 0, hi))), [x]
    if op_name == "tanh":
        return lambda: dm.sum_all(dm.tanh(x)), [x]
    if op_name == "sigmoid":
        return lambda: dm.sum_all(dm.sigmoid(x)), [x]
    if op_name == "leaky_relu":
        # keep entries away from the kink, where the derivative is undefined
        safe = dm.leaf(np.where(np.abs(x.data) < 1e-2, 0.5, x.data))
        return lambda: dm.sum_all(dm.leaky_relu(safe)), [safe]
    if op_name == "softmax_rows":
        return lambda: dm.sum_all(dm.square(dm.softmax_rows(x))), [x]
    if op_name == "log":
        pos = dm.leaf(np.abs(x.data) + 0.5)
        return lambda: dm.sum_all(dm.log(pos)), [pos]
    if op_name == "square":
        return lambda: dm.mean_all(dm.square(x)), [x]
    if op_name == "mean_all":
        return lambda: dm.mean_all(x), [x]
    if op_name == "l2_norm":
        far = dm.leaf(x.data + np.sign(x.data) + 0.1)  # keep away from 0
        return lambda: dm.l2_norm(far), [far]
    raise AssertionError(op_name)


OPS = [
    "add", "sub", "mul", "scale", "add_scalar", "matmul", "transpose",
    "add_rowvec", "concat_rows", "concat_cols", "slice_rows", "tanh",
    "sigmoid", "leaky_relu", "softmax_rows", "log", "square", "mean_all",
    "l2_norm",
]


def test_every_op_matches_finite_differences_on_random_shapes():
    # >= 100 randomized cases across the whole op family
    rng = np.random.default_rng(42)
    cases = 0
    for op_name in OPS:
        for _ in range(6):
            loss_fn, leaves = _random_case(rng, op_name)
            check_grads(loss_fn, leaves)
            cases += 1
    assert cases >= 100


def test_backward_requires_scalar_root():
    x = dm.leaf(np.ones((2, 2)))
    with pytest.raises(ValueError, match="1x1"):
        dm.backward(dm.tanh(x))


def test_backward_of_sum_gives_ones():
    x = dm.leaf(np.arange(6.0).reshape(2, 3))
    dm.backward(dm.sum_all(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_l2_norm_gradient_at_3_4():
    x = dm.row([3.0, 4.0])
    out = dm.l2_norm(x)
    assert out.data[0, 0] == 5.0
    dm.backward(out)
    assert np.allclose(x.grad, [[0.6, 0.8]], atol=1e-15)


def test_gradient_accumulation_is_exactly_additive():
    rng = np.random.default_rng(3)
    x = dm.leaf(rng.normal(size=(3, 3)))

    def run_once():
        return dm.sum_all(dm.tanh(dm.matmul(x, dm.transpose(x))))

    dm.backward(run_once())
    once = x.grad.copy()
    x.grad[...] = 0.0
    dm.backward(run_once())
    dm.backward(run_once())
    assert np.array_equal(x.grad, 2.0 * once)


def test_reused_node_gets_gradient_from_both_paths():
    x = dm.row([1.5])
    y = dm.mul(x, x)  # x^2, d/dx = 2x
    dm.backward(dm.sum_all(y))
    assert np.allclose(x.grad, [[3.0]])


def test_shape_mismatch_errors_name_the_op():
    a = dm.leaf(np.ones((2, 3)))
    b = dm.leaf(np.ones((2, 2)))
    with pytest.raises(ValueError, match=r"add: .*\(2, 3\).*\(2, 2\)"):
        dm.add(a, b)
    with pytest.raises(ValueError, match="matmul"):
        dm.matmul(a, a)


def test_nan_input_is_a_hard_error():
    with pytest.raises(ValueError, match="NaN"):
        dm.leaf(np.array([[np.nan, 1.0]]))
    a = dm.leaf(np.ones((1, 2)))
    a.data[0, 0] = np.nan  # simulate corruption after creation
    with pytest.raises(ValueError, match="tanh: NaN"):
        dm.tanh(a)


def test_no_grad_skips_graph_building():
    x = dm.leaf(np.ones((2, 2)))
    with dm.no_grad():
        y = dm.tanh(x)
    assert y.parents == ()
    z = dm.tanh(x)
    assert z.parents == (x,)


# ---------------------------------------------------------------------------
# ParamStore and Adam
# ---------------------------------------------------------------------------


def test_store_rejects_duplicate_names_and_sorts_iteration():
    store = dm.ParamStore("net")
    store.add("b", [[1.0]])
    store.add("a", [[2.0]])
    with pytest.raises(ValueError, match="duplicate"):
        store.add("a", [[3.0]])
    assert store.names() == ["a", "b"]


def _adam_reference(x0, grads, lr, clip):
    """Hand-stepped Adam oracle for a single scalar parameter."""
    m = v = 0.0
    x = x0
    for t, g in enumerate(grads, start=1):
        norm = abs(g)
        if norm > clip:
            g = g * (clip / norm)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        m_hat = m / (1 - 0.9 ** t)
        v_hat = v / (1 - 0.999 ** t)
        x -= lr * m_hat / (np.sqrt(v_hat) + 1e-8)
    return x


def test_adam_zero_gradient_leaves_parameters_unchanged():
    store = dm.ParamStore("net")
    p = store.add("w", np.ones((2, 2)))
    dm.adam_step(store, lr=1e-4, clip_norm=0.1)
    assert np.array_equal(p.data, np.ones((2, 2)))


def test_adam_two_steps_match_hand_oracle():
    store = dm.ParamStore("net")
    p = store.add("w", [[0.5]])
    for _ in range(2):
        p.grad[...] = 1.0
        dm.adam_step(store, lr=0.01, clip_norm=0.1)
        p.grad[...] = 0.0
    expected = _adam_reference(0.5, [1.0, 1.0], lr=0.01, clip=0.1)
    assert abs(p.data[0, 0] - expected) < 1e-10


def test_adam_clips_global_norm_across_the_store():
    store = dm.ParamStore("net")
    a = store.add("a", [[0.0]])
    b = store.add("b", [[0.0]])
    a.grad[...] = 3.0
    b.grad[...] = 4.0  # global norm 5 -> factor 0.02 with clip 0.1
    dm.adam_step(store, lr=1.0, clip_norm=0.1)
    # moments must be built from the clipped gradients (0.06 and 0.08)
    assert abs(store.adam_m["a"][0, 0] - 0.1 * 0.06) < 1e-15
    assert abs(store.adam_m["b"][0, 0] - 0.1 * 0.08) < 1e-15
    assert abs(store.adam_v["a"][0, 0] - 0.001 * 0.06 ** 2) < 1e-18
    assert a.grad[0, 0] == 3.0 and b.grad[0, 0] == 4.0  # grads untouched


def test_adam_rejects_nonfinite_gradient_naming_parameter():
    store = dm.ParamStore("critic")
    p = store.add("w", [[1.0]])
    p.grad[...] = np.inf
    with pytest.raises(FloatingPointError, match="critic/w"):
        dm.adam_step(store, lr=1e-4, clip_norm=0.1)


# ---------------------------------------------------------------------------
# Checkpoint round-trips
# ---------------------------------------------------------------------------


def test_checkpoint_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(9)
    store = dm.ParamStore("net")
    store.add("w1", rng.normal(size=(3, 4)))
    store.add("w2", rng.normal(size=(1, 2)))
    store["w1"].grad[...] = 1.0
    dm.adam_step(store, lr=1e-3, clip_norm=0.1)

    path = tmp_path / "ck.txt"
    dm.save_checkpoint(path, {"net": store})
    loaded = dm.load_checkpoint(path)

    fresh = dm.ParamStore("net")
    fresh.add("w1", np.zeros((3, 4)))
    fresh.add("w2", np.zeros((1, 2)))
    dm.restore_stores({"net": fresh}, loaded)
    assert np.array_equal(fresh["w1"].data, store["w1"].data)
    assert np.array_equal(fresh["w2"].data, store["w2"].data)
    assert fresh.adam_t == store.adam_t
    assert np.array_equal(fresh.adam_m["w1"], store.adam_m["w1"])

    # serialisation is byte-deterministic
    assert dm.serialize_stores({"net": store}) == dm.serialize_stores({"net": store})


def test_checkpoint_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("something else\n")
    with pytest.raises(ValueError, match="header"):
        dm.load_checkpoint(path)

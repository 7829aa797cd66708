import math

import numpy as np
import pytest

import qvadgen.ndcore as nd
from qvadgen.ndcore.tensor import Tensor, set_default_dtype


def t(data, grad=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


def test_matmul_identity():
    x = t(np.arange(12.0).reshape(3, 4))
    out = nd.matmul(Tensor(np.eye(3)), x)
    assert np.array_equal(out.data, x.data)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ValueError) as exc:
        nd.matmul(t(np.zeros((2, 3))), t(np.zeros((4, 2))))
    assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)


def test_elementwise_at_zero():
    z = t(np.zeros((2, 2)))
    assert np.all(nd.tanh(z).data == 0.0)
    assert np.all(nd.sigmoid(z).data == 0.5)
    assert np.all(nd.relu(z).data == 0.0)


def test_concat_shapes():
    out = nd.concat([t(np.ones((2, 3))), t(np.ones((2, 5)))], axis=1)
    assert out.shape == (2, 8)


def test_add_broadcast_row():
    out = nd.add(t(np.ones((3, 4))), t(np.full((1, 4), 2.0)))
    assert np.all(out.data == 3.0)


def test_diamond_graph_accumulates():
    # d = (2x)(3x) -> dd/dx = 12x
    x = t([[2.0]])
    d = nd.sum_all(nd.mul(nd.scale(x, 2.0), nd.scale(x, 3.0)))
    d.backward()
    assert x.grad[0, 0] == pytest.approx(24.0)


def test_shared_subexpression_gradient():
    # y = s + s where s = x*x -> dy/dx = 4x
    x = t([[3.0]])
    s = nd.mul(x, x)
    y = nd.sum_all(nd.add(s, s))
    y.backward()
    assert x.grad[0, 0] == pytest.approx(12.0)


def test_backward_requires_scalar():
    x = t(np.ones((2, 2)))
    with pytest.raises(ValueError):
        nd.mul(x, x).backward()


def test_gather_rows_accumulates_duplicates():
    e = t(np.ones((4, 2)))
    out = nd.sum_all(nd.gather_rows(e, [1, 1, 3]))
    out.backward()
    assert e.grad[1, 0] == pytest.approx(2.0)
    assert e.grad[3, 0] == pytest.approx(1.0)
    assert e.grad[0, 0] == 0.0


def test_gather_rows_out_of_range():
    with pytest.raises(ValueError):
        nd.gather_rows(t(np.ones((3, 2))), [5])


def test_softmax_simplex():
    rng = np.random.default_rng(0)
    x = t(rng.normal(size=(5, 7)) * 30)
    y = nd.softmax(x)
    assert np.all(y.data >= 0)
    assert np.abs(y.data.sum(axis=1) - 1.0).max() < 1e-9


def test_log_softmax_matches_softmax():
    rng = np.random.default_rng(1)
    x = t(rng.normal(size=(3, 4)))
    assert np.allclose(nd.log_softmax(x).data, np.log(nd.softmax(x).data))


def test_cross_entropy_uniform_logits():
    v = 11
    loss, probs = nd.softmax_cross_entropy(t(np.zeros((4, v))), [0, 3, 5, 10])
    assert loss.item() == pytest.approx(math.log(v), abs=1e-12)
    assert np.allclose(probs, 1.0 / v)


def test_cross_entropy_hand_example():
    loss, probs = nd.softmax_cross_entropy(t([[math.log(3.0), 0.0]]), [0])
    assert probs[0, 0] == pytest.approx(0.75, abs=1e-12)
    assert loss.item() == pytest.approx(math.log(4.0 / 3.0), abs=1e-12)


def test_cross_entropy_margin_monotone():
    losses = []
    for margin in (1.0, 5.0, 20.0):
        loss, _ = nd.softmax_cross_entropy(t([[0.0, margin]]), [0])
        losses.append(loss.item())
    assert losses[0] < losses[1] < losses[2]


def test_cross_entropy_target_out_of_range():
    with pytest.raises(ValueError):
        nd.softmax_cross_entropy(t(np.zeros((1, 3))), [3])


def test_cross_entropy_pad_mask():
    logits = t(np.array([[2.0, 0.0], [0.0, 9.0]]))
    full, _ = nd.softmax_cross_entropy(logits, [0, 0])
    masked, _ = nd.softmax_cross_entropy(logits, [0, 0], pad_mask=[True, False])
    only_first, _ = nd.softmax_cross_entropy(t(np.array([[2.0, 0.0]])), [0])
    assert masked.item() == pytest.approx(only_first.item(), abs=1e-12)
    assert masked.item() != pytest.approx(full.item())
    with pytest.raises(ValueError):
        nd.softmax_cross_entropy(logits, [0, 0], pad_mask=[False, False])


def test_no_grad_suppresses_tape():
    x = t([[1.0, 2.0]])
    with nd.no_grad():
        y = nd.sum_all(nd.mul(x, x))
    assert not y.requires_grad
    assert y._parents == ()


def test_layer_norm_rows_standardized():
    rng = np.random.default_rng(3)
    x = t(rng.normal(2.0, 3.0, size=(4, 8)))
    y = nd.layer_norm(x, Tensor(np.ones((1, 8))), Tensor(np.zeros((1, 8))))
    assert np.abs(y.data.mean(axis=1)).max() < 1e-9
    assert np.abs(y.data.std(axis=1) - 1.0).max() < 1e-3


def test_default_dtype_switch():
    set_default_dtype("float32")
    try:
        x = Tensor([[1.0, 2.0]])
        assert x.data.dtype == np.float32
    finally:
        set_default_dtype("float64")
    assert Tensor([[1.0]]).data.dtype == np.float64


def test_operator_sugar():
    a, b = t([[1.0, 2.0]]), t([[3.0, 4.0]])
    assert np.array_equal((a + b).data, [[4.0, 6.0]])
    assert np.array_equal((a - b).data, [[-2.0, -2.0]])
    assert np.array_equal((a * b).data, [[3.0, 8.0]])
    assert np.array_equal((-a).data, [[-1.0, -2.0]])
    assert np.array_equal((a / 2.0).data, [[0.5, 1.0]])
    assert np.array_equal(a.T.data, [[1.0], [2.0]])


def test_slices_and_pick():
    x = t(np.arange(12.0).reshape(3, 4))
    assert np.array_equal(nd.slice_rows(x, 1, 3).data, x.data[1:3])
    assert np.array_equal(nd.slice_cols(x, 0, 2).data, x.data[:, :2])
    assert nd.pick(x, 2, 1).item() == 9.0

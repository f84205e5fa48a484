import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qecbench import tensor as T
from qecbench.checks import TOLERANCE, primitive_cases
from qecbench.exceptions import InvalidParameterError, NoTraceError, ShapeError


@pytest.mark.parametrize("name, fn, inputs", primitive_cases(), ids=lambda v: v if isinstance(v, str) else "")
def test_primitive_gradcheck(name, fn, inputs):
    assert T.gradcheck(fn, [np.array(a) for a in inputs]) < TOLERANCE


def test_every_primitive_has_three_shapes():
    names = {}
    for name, _, _ in primitive_cases():
        base = name.split("[")[0]
        names[base] = names.get(base, 0) + 1
    assert all(v >= 3 for v in names.values())
    expected = {"add", "sub", "mul", "matmul", "reshape", "transpose", "sum", "mean", "concat", "take_rows",
                "relu", "tanh", "softmax_rows", "log_softmax_rows", "conv2d_same", "conv1x1",
                "maxpool2", "upsample2", "pad_spatial", "crop_spatial", "masked_cross_entropy", "dropout"}
    assert expected <= set(names)


def test_matmul_examples():
    m = np.random.default_rng(0).standard_normal((3, 3))
    assert np.array_equal(T.matmul(np.eye(3), m).data, m)
    assert T.matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]]).data.tolist() == [[3.0], [7.0]]


def test_matmul_gradcheck_4x5_5x3():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((4, 3))
    err = T.gradcheck(lambda a, b: T.sum_(T.mul(T.matmul(a, b), w)),
                      [rng.standard_normal((4, 5)), rng.standard_normal((5, 3))])
    assert err < 1e-5


def test_matmul_shape_error_names_both():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(np.zeros((2, 3)), np.zeros((4, 5)))


def test_conv_examples():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 5, 5))
    zero = T.conv2d_same(x, np.zeros((2, 1, 3, 3)), np.zeros(2))
    assert zero.shape == (2, 5, 5) and not zero.data.any()
    ident = np.zeros((1, 1, 3, 3))
    ident[0, 0, 1, 1] = 1
    assert np.array_equal(T.conv2d_same(x, ident, np.zeros(1)).data, x)
    with pytest.raises(ShapeError):
        T.conv2d_same(x, np.zeros((1, 1, 5, 5)), np.zeros(1))


def test_conv_gradcheck_2x5x5():
    rng = np.random.default_rng(3)
    w = rng.standard_normal((3, 5, 5))
    err = T.gradcheck(lambda x, k, b: T.sum_(T.mul(T.conv2d_same(x, k, b), w)),
                      [rng.standard_normal((2, 5, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)])
    assert err < 1e-5


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 4, 6))
    k = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 4, 6))
    for o in range(3):
        for i in range(4):
            for j in range(6):
                ref[o, i, j] = (xp[:, i:i + 3, j:j + 3] * k[o]).sum() + b[o]
    assert np.allclose(T.conv2d_same(x, k, b).data, ref, atol=1e-12)


def test_pool_examples():
    assert T.maxpool2(np.array([[[1.0, 2.0], [3.0, 4.0]]])).data.tolist() == [[[4.0]]]
    assert T.upsample2(np.array([[4.0]])).data.tolist() == [[4.0, 4.0], [4.0, 4.0]]


def test_pool_gradcheck_1x6x6():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1, 6, 6))
    for op in (T.maxpool2, T.upsample2):
        w = rng.standard_normal(op(x).shape)
        assert T.gradcheck(lambda a: T.sum_(T.mul(op(a), w)), [x.copy()]) < 1e-5


def test_maxpool_tie_goes_to_first():
    x = T.parameter(np.ones((2, 2)))
    with T.Tape():
        T.backward(T.sum_(T.maxpool2(x)))
    assert x.grad.tolist() == [[1.0, 0.0], [0.0, 0.0]]


@pytest.mark.parametrize("h", range(1, 17))
def test_shape_laws(h):
    w = 17 - h
    x = np.zeros((2, h, w))
    assert T.conv2d_same(x, np.zeros((3, 2, 3, 3)), np.zeros(3)).shape == (3, h, w)
    assert T.maxpool2(x).shape == (2, -(-h // 2), -(-w // 2))
    assert T.upsample2(x).shape == (2, 2 * h, 2 * w)
    assert T.upsample2(T.maxpool2(x)).shape == (2, h + h % 2, w + w % 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))
def test_concat_shape_law(n, a, b):
    assert T.concat([np.zeros((n, a)), np.zeros((n, b))], axis=-1).shape == (n, a + b)


def test_activations():
    assert T.softmax_rows(np.zeros((1, 4))).data.tolist() == [[0.25] * 4]
    assert T.relu(np.array([-2.0, 3.0])).data.tolist() == [0.0, 3.0]
    x = np.random.default_rng(6).standard_normal((50, 7)) * 30
    assert np.allclose(T.activation(x, "softmax_rows").data.sum(axis=1), 1.0, atol=1e-12, rtol=0)
    assert np.array_equal(T.activation(x, "tanh").data, np.tanh(x))
    with pytest.raises(InvalidParameterError):
        T.activation(x, "gelu")
    with pytest.raises(ShapeError):
        T.softmax_rows(np.zeros(4))


def test_masked_cross_entropy_examples():
    mask = np.array([True, False, True])
    assert T.masked_cross_entropy(np.zeros((3, 4)), [0, 3], mask).data == pytest.approx(np.log(4), abs=1e-15)
    big = np.zeros((3, 4))
    big[:, 2] = 60.0
    assert T.masked_cross_entropy(big, [2, 2], mask).data < 1e-20
    assert T.masked_cross_entropy(np.zeros((3, 4)), np.eye(4)[[0, 3]], mask).data == pytest.approx(np.log(4))
    with pytest.raises(InvalidParameterError):
        T.masked_cross_entropy(np.zeros((3, 4)), np.zeros(0), np.zeros(3, bool))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_masked_rows_do_not_matter(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random(9) < 0.5
    mask[0] = True
    logits = rng.standard_normal((2, 9, 4))
    labels = rng.integers(0, 4, (2, int(mask.sum())))
    base = T.masked_cross_entropy(logits, labels, mask).data
    logits[:, ~mask] = rng.standard_normal((2, int((~mask).sum()), 4)) * 1e3
    assert T.masked_cross_entropy(logits, labels, mask).data == base


def test_backward_examples():
    w = T.parameter(np.random.default_rng(7).standard_normal((3, 2)))
    with T.Tape():
        T.backward(T.sum_(w))
    assert np.array_equal(w.grad, np.ones((3, 2)))
    w.zero_grad()
    with T.Tape():
        T.backward(T.sum_(T.mul(w, w)))
    assert np.allclose(w.grad, 2 * w.data)


def test_backward_twice_raises():
    w = T.parameter(np.ones(3))
    with T.Tape():
        loss = T.sum_(w)
        T.backward(loss)
        with pytest.raises(RuntimeError):
            T.backward(loss)


def test_detached_raises():
    w = T.parameter(np.ones(3))
    with pytest.raises(NoTraceError):
        T.backward(T.sum_(w))  # no tape active
    with T.Tape():
        loss = T.sum_(w)
    with pytest.raises(NoTraceError):
        T.backward(loss.detach())


def test_grad_accumulates_over_reuse():
    w = T.parameter(np.array([1.0, 2.0]))
    with T.Tape():
        T.backward(T.sum_(T.add(T.mul(w, 3.0), T.mul(w, w))))
    assert w.grad.tolist() == [5.0, 7.0]


def test_tapes_are_thread_local():
    errors = []

    def work(seed):
        try:
            w = T.parameter(np.full(4, float(seed)))
            for _ in range(200):
                w.zero_grad()
                with T.Tape():
                    T.backward(T.sum_(T.mul(w, w)))
                assert np.array_equal(w.grad, 2 * w.data)
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(s,)) for s in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors


def test_deterministic_outputs():
    rng = np.random.default_rng(8)
    x, k, b = rng.standard_normal((2, 3, 5, 5)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    assert np.array_equal(T.conv2d_same(x, k, b).data, T.conv2d_same(x, k, b).data)


def test_dropout_identity_without_rng():
    x = np.ones((3, 3))
    assert np.array_equal(T.dropout(x, 0.5, None).data, x)
    out = T.dropout(np.ones((200, 200)), 0.25, np.random.default_rng(0)).data
    assert set(np.unique(out)) <= {0.0, 1 / 0.75}
    assert abs(out.mean() - 1.0) < 0.02

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covpose import numerics as nx
from covpose.numerics import (AdamWState, GraphError, LrSchedule, NonFiniteError, ShapeError, Tensor,
                              adamw_step, gradcheck, lr_at, sten)
from covpose.model.vit import attention, attention_reference, block, cast_params, init_block

from support import GRAD_CASES, block_params, leaf, op_gradcheck


def proj_loss(out, rng):
    """Random linear functional of ``out``; avoids the cancellations of a plain sum."""
    w = Tensor(rng.normal(size=out.shape), dtype=np.float64)
    return nx.tsum(out * w)


# -- forward examples --------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(nx.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)


def test_layernorm_constant_vector_is_zero():
    out = nx.layer_norm(Tensor(np.full((2, 8), 3.5)))
    assert np.all(out.data == 0)


def conv_transpose_oracle(x, w, stride, pad):
    B, H, W, cin = x.shape
    _, k, _, cout = w.shape
    ho = (H - 1) * stride - 2 * pad + k
    out = np.zeros((B, ho, ho, cout))
    for b in range(B):
        for i in range(H):
            for j in range(W):
                for ki in range(k):
                    for kj in range(k):
                        oi, oj = i * stride - pad + ki, j * stride - pad + kj
                        if 0 <= oi < ho and 0 <= oj < ho:
                            out[b, oi, oj] += x[b, i, j] @ w[:, ki, kj, :]
    return out


def test_conv_transpose_14_to_28_matches_direct_sum():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 14, 14, 3))
    w = rng.normal(size=(3, 4, 4, 2))
    out = nx.conv_transpose2d(Tensor(x), Tensor(w), stride=2, padding=1)
    assert out.shape == (1, 28, 28, 2)
    np.testing.assert_allclose(out.data, conv_transpose_oracle(x, w, 2, 1), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("op,args", [
    ("matmul", ((2, 3), (4, 5))),
    ("add", ((2, 3), (4, 3))),
    ("mul", ((2, 3), (3, 2))),
    ("mse_loss", ((2, 3), (3, 2))),
])
def test_shape_mismatch_names_op_and_shapes(op, args):
    a, b = (Tensor(np.zeros(s)) for s in args)
    with pytest.raises(ShapeError) as e:
        getattr(nx, op)(a, b)
    msg = str(e.value)
    assert op in msg and str(args[0]) in msg and str(args[1]) in msg


def test_nonfinite_result_rejected():
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
        nx.mul(Tensor([1e200]), Tensor([1e200]))
    with pytest.raises(NonFiniteError):
        nx.add(Tensor([np.inf]), Tensor([0.0]))


def test_graph_recorded_only_with_requires_grad():
    a = Tensor(np.ones(3))
    assert not nx.add(a, a).requires_grad
    b = Tensor(np.ones(3), requires_grad=True)
    assert nx.add(a, b).requires_grad


# -- backward examples ----------------------------------------------------------

def test_square_grad():
    x = Tensor(3.0, requires_grad=True, dtype=np.float64)
    (x * x).backward()
    assert x.grad == 6.0


def test_mse_grad_formula():
    rng = np.random.default_rng(1)
    a = leaf(rng, 4, 5)
    b = rng.normal(size=(4, 5))
    nx.mse_loss(a, b).backward()
    np.testing.assert_allclose(a.grad, 2 * (a.data - b) / a.size, rtol=1e-12)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_backward_twice_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = nx.tsum(x * x)
    loss.backward()
    with pytest.raises(GraphError):
        loss.backward()


def test_gradients_accumulate_on_leaves():
    x = Tensor(2.0, requires_grad=True, dtype=np.float64)
    (x * x).backward()
    (x * 3.0).backward()
    assert x.grad == 7.0


def test_shared_subexpression_grad():
    x = Tensor(1.5, requires_grad=True, dtype=np.float64)
    y = x * x
    (y * y + y).backward()   # x^4 + x^2
    assert x.grad == pytest.approx(4 * 1.5 ** 3 + 2 * 1.5, rel=1e-15)


# -- finite-difference checks per op -------------------------------------------

@pytest.mark.parametrize("name", sorted(GRAD_CASES))
@pytest.mark.parametrize("seed", [0, 1])
def test_op_gradcheck(name, seed):
    err = op_gradcheck(name, seed)
    assert err < 1e-4, f"{name}: {err}"


def test_transformer_block_gradcheck():
    params = block_params(8, 2, 0)
    rng = np.random.default_rng(1)
    x = leaf(rng, 2, 5, 8)
    w = Tensor(rng.normal(size=(2, 5, 8)), dtype=np.float64)
    err = gradcheck(lambda: nx.tsum(block(params, "b", x, 2) * w), [x] + list(params.values()))
    assert err < 1e-4


def test_fused_attention_matches_reference():
    params = block_params(8, 2, 3)
    rng = np.random.default_rng(4)
    x1 = leaf(rng, 2, 6, 8)
    x2 = Tensor(x1.data.copy(), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 6, 8)), dtype=np.float64)
    a = attention(params, "b.attn", x1, 2)
    r = attention_reference(params, "b.attn", x2, 2)
    np.testing.assert_allclose(a.data, r.data, rtol=1e-12, atol=1e-13)
    nx.tsum(a * w).backward()
    nx.tsum(r * w).backward()
    np.testing.assert_allclose(x1.grad, x2.grad, rtol=1e-10, atol=1e-12)


# -- properties ---------------------------------------------------------------

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=1, max_size=12))
def test_softmax_rows_sum_to_one(vals):
    y = nx.softmax(Tensor(np.array([vals])))
    assert abs(y.data.sum() - 1.0) < 1e-6
    assert np.all(y.data >= 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 32))
def test_layernorm_moments(seed, d):
    x = np.random.default_rng(seed).normal(0, 5, size=(3, d)) + 7.0
    out = nx.layer_norm(Tensor(x), eps=1e-12).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-6)
    assert np.all(np.abs(out.var(axis=-1) - 1.0) < 1e-4)


def test_forward_backward_bitwise_deterministic():
    def run():
        params = block_params(8, 2, 5)
        x = leaf(np.random.default_rng(6), 2, 5, 8)
        out = block(params, "b", x, 2)
        nx.tsum(out * out).backward()
        return out.data.tobytes(), x.grad.tobytes(), params["b.attn.qkv.weight"].grad.tobytes()

    assert run() == run()


# -- AdamW ---------------------------------------------------------------------

def test_adamw_zero_grad_pure_decay():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.zeros(1)
    state = AdamWState()
    adamw_step([p], state, lr=1e-3, weight_decay=0.05)
    assert p.data[0] == pytest.approx(0.99995, abs=1e-12)
    assert state.step_count == 1


def test_adamw_constant_grad_step_magnitude_is_lr():
    p = Tensor(np.array([0.0, 0.0]), requires_grad=True)
    state = AdamWState()
    g = np.array([0.3, -2.0])
    prev = p.data.copy()
    for _ in range(200):
        p.grad = g
        adamw_step([p], state, lr=1e-3, weight_decay=0.0)
        step = p.data - prev
        prev = p.data.copy()
    np.testing.assert_allclose(step, -1e-3 * np.sign(g), rtol=1e-6)
    assert state.step_count == 200


def scalar_adamw(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.05):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (wd * p + (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps))
    return p


def test_adamw_quadratic_bowl_matches_scalar_simulation():
    lr, c = 0.1, np.array([1.5, -0.7, 0.2])
    p = Tensor(np.zeros(3), requires_grad=True, dtype=np.float64)
    state = AdamWState()
    losses, history = [], [[] for _ in range(3)]
    for _ in range(10):
        p.grad = None
        loss = nx.tsum((p - c) * (p - c))
        losses.append(loss.item())
        loss.backward()
        for i in range(3):
            history[i].append(p.grad[i])
        adamw_step([p], state, lr=lr, weight_decay=0.05)
    for i in range(3):
        assert p.data[i] == pytest.approx(scalar_adamw(0.0, history[i], lr), abs=1e-12)
    # monotone after the first couple of moment-warmup steps
    assert all(b < a for a, b in zip(losses[2:], losses[3:]))


def test_adamw_errors():
    p = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ValueError):
        adamw_step([p], AdamWState(), lr=1e-3)
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(NonFiniteError):
        adamw_step([p], AdamWState(), lr=1e-3)
    np.testing.assert_array_equal(p.data, [1.0, 1.0])


def test_adamw_moment_shapes_follow_params():
    ps = [Tensor(np.ones((2, 3)), requires_grad=True), Tensor(np.ones(4), requires_grad=True)]
    for p in ps:
        p.grad = np.ones_like(p.data)
    state = adamw_step(ps, AdamWState(), lr=1e-3)
    assert [m.shape for m in state.first_moment] == [(2, 3), (4,)]
    assert [v.shape for v in state.second_moment] == [(2, 3), (4,)]


# -- schedule -------------------------------------------------------------------

SCHED = LrSchedule(1e-3, 5, 50)


def test_schedule_examples():
    assert lr_at(SCHED, 5) == 1e-3
    assert lr_at(SCHED, 27.5) == pytest.approx(5e-4, abs=1e-15)
    assert lr_at(SCHED, 50) == pytest.approx(0.0, abs=1e-18)
    assert lr_at(SCHED, 0) == 0.0
    assert lr_at(SCHED, 2.5) == pytest.approx(5e-4)


def test_schedule_rejects_out_of_range():
    for e in (-0.1, 50.01):
        with pytest.raises(ValueError):
            lr_at(SCHED, e)
    with pytest.raises(ValueError):
        LrSchedule(1e-3, 5, 5)


@given(st.floats(0, 50))
def test_schedule_nonnegative_and_bounded(epoch):
    assert 0.0 <= lr_at(SCHED, epoch) <= 1e-3


# -- STEN ------------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=0, max_size=4), st.sampled_from([np.float32, np.float64]),
       st.integers(0, 1000))
def test_sten_round_trip(shape, dtype, seed):
    arr = np.random.default_rng(seed).normal(size=shape).astype(dtype)
    back = sten.loads(sten.dumps(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_sten_header_layout():
    buf = sten.dumps(np.zeros((2, 3), np.float64))
    assert buf[:4] == b"SMAL" and buf[4] == 1 and buf[5] == 1
    assert int.from_bytes(buf[6:10], "little") == 2
    assert int.from_bytes(buf[10:14], "little") == 2 and int.from_bytes(buf[14:18], "little") == 3
    assert len(buf) == 18 + 6 * 8


def test_sten_rejects_garbage():
    with pytest.raises(sten.StenError):
        sten.loads(b"NOPE" + bytes(20))
    good = sten.dumps(np.zeros(3, np.float32))
    with pytest.raises(sten.StenError):
        sten.loads(good[:-1])

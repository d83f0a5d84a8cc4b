"""Shared helpers for the test suite."""
import contextlib
import zlib

import numpy as np

from covpose import numerics as nx
from covpose.model import Checkpoint, HeadConfig, ViTConfig, cast_params, vitpose_forward
from covpose.model.vit import init_block
from covpose.numerics import Tensor, backward, gradcheck, max_relative_error


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0, scale, size=shape), requires_grad=True, dtype=np.float64)


def _ln(x, w, b):
    return nx.layer_norm(x, w, b)


GRAD_CASES = {
    "add": (lambda a, b: nx.add(a, b), [(3, 4), (4,)]),
    "sub": (lambda a, b: nx.sub(a, b), [(3, 4), (3, 1)]),
    "mul": (lambda a, b: nx.mul(a, b), [(2, 3, 4), (3, 4)]),
    "gelu": (lambda a: nx.gelu(a), [(3, 5)]),
    "relu": (lambda a: nx.relu(a), [(3, 5)]),
    "softmax": (lambda a: nx.softmax(a), [(2, 3, 6)]),
    "layer_norm": (_ln, [(2, 3, 6), (6,), (6,)]),
    "matmul": (lambda a, b: nx.matmul(a, b), [(2, 3, 4), (4, 5)]),
    "batched_matmul": (lambda a, b: nx.matmul(a, b), [(2, 3, 4), (2, 4, 5)]),
    "linear": (lambda x, w, b: nx.linear(x, w, b), [(2, 3, 4), (4, 5), (5,)]),
    "conv_transpose2d": (lambda x, w, b: nx.conv_transpose2d(x, w, b, stride=2, padding=1),
                         [(1, 3, 3, 2), (2, 4, 4, 3), (3,)]),
    "mse_loss": (lambda a, b: nx.mse_loss(a, b), [(3, 4), (3, 4)]),
    "reshape": (lambda a: nx.reshape(a, (6, 2)), [(3, 4)]),
    "transpose": (lambda a: nx.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
    "getitem": (lambda a: a[1:, ::2], [(3, 4)]),
    "getitem_fancy": (lambda a: nx.getitem(a, (np.array([0, 2, 0]),)), [(3, 4)]),
    "sum": (lambda a: nx.tsum(a, axis=1), [(3, 4)]),
    "mean": (lambda a: nx.mean(a, axis=0, keepdims=True), [(3, 4)]),
    "gather_rows": (lambda a: nx.gather_rows(a, np.array([[2, 0], [1, 1]])), [(2, 3, 4)]),
    "scatter_rows": (lambda a: nx.scatter_rows(a, np.array([[3, 0], [1, 2]]), 5), [(2, 2, 4)]),
    "self_attention": (lambda a: nx.self_attention(a, 2), [(2, 5, 12)]),
}


def op_gradcheck(name, seed):
    """Worst relative error of one registered op under a random linear readout."""
    fn, shapes = GRAD_CASES[name]
    rng = np.random.default_rng(seed)
    inputs = [leaf(rng, *s) for s in shapes]
    w = Tensor(np.random.default_rng(100 + seed).normal(size=fn(*inputs).shape), dtype=np.float64)
    return gradcheck(lambda: nx.tsum(fn(*inputs) * w), inputs)


def block_params(width, heads, seed):
    rng = np.random.default_rng(seed)
    params = {}
    init_block(params, "b", width, 4 * width, rng)
    params = cast_params(params, np.float64)
    for v in params.values():   # move off the identity/zero init so every path carries signal
        v.data += rng.normal(0, 0.3, size=v.shape)
    return params


@contextlib.contextmanager
def relu_patterns(log):
    """Record a checksum of every ReLU on/off mask computed inside the block."""
    orig = nx.relu

    def spy(x):
        log.append(zlib.crc32(np.packbits(x.data > 0).tobytes()))
        return orig(x)

    nx.relu = spy
    try:
        yield
    finally:
        nx.relu = orig


def kink_aware_gradcheck(f, inputs, eps=1e-5, max_entries=None, seed=0, floor=1e-6, min_eps=1e-9):
    """Central differences on a piecewise-smooth graph.

    A stencil ``x +- eps`` is valid only if neither side flips a ReLU relative
    to ``x``; otherwise ``eps`` shrinks tenfold until it is. Returns
    ``(worst relative error, number of entries checked, number of entries
    that needed a smaller step)``.
    """
    for t in inputs:
        t.grad = None
    base = []
    with relu_patterns(base):
        backward(f())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    scale = max([1.0] + [float(np.max(np.abs(a))) for a in analytic])
    rng = np.random.default_rng(seed)
    worst, checked, shrunk = 0.0, 0, 0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        picks = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            picks = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        num = np.empty(len(picks))
        for j, i in enumerate(picks):
            orig = flat[i]
            h = eps
            while True:
                logs = ([], [])
                vals = []
                for sign, log in zip((1, -1), logs):
                    flat[i] = orig + sign * h
                    with relu_patterns(log):
                        vals.append(float(f().data))
                flat[i] = orig
                if (logs[0] == base and logs[1] == base) or h / 10 < min_eps:
                    break
                h /= 10
            shrunk += h < eps
            num[j] = (vals[0] - vals[1]) / (2 * h)
        checked += len(picks)
        worst = max(worst, max_relative_error(a.reshape(-1)[picks], num, floor, scale))
    return worst, checked, shrunk


def tiny_vitpose_problem(seed):
    """Float64 Tiny ViTPose with a non-zero output layer, one image and a random readout."""
    ck = Checkpoint.fresh(ViTConfig.tiny(), seed, head=HeadConfig.tiny())
    params = cast_params(ck.params, np.float64)
    rng = np.random.default_rng(seed)
    params["head.final.weight"].data[:] = rng.normal(0, 0.3, size=params["head.final.weight"].shape)
    img = rng.uniform(size=(1, 224, 224, 3))
    w = Tensor(rng.normal(size=(1, 56, 56, 14)))

    def f():
        return nx.tsum(vitpose_forward(ck.vit, params, img) * w)

    return ck, params, f
